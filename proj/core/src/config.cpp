#include "apckit/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "apckit/errors.hpp"

namespace apckit::config {

namespace {

using json = nlohmann::json;

json attack_json(const attacks::AttackSpec& s) {
  json j = {{"method", s.algorithm()}, {"epsilon", s.epsilon}, {"steps", s.steps}, {"step_size", s.step_size}};
  for (const auto& [k, v] : s.extras) j[k] = v;
  return j;
}

attacks::AttackSpec attack_from(const std::string& name, const json& j) {
  attacks::AttackSpec s;
  s.name = name;
  const std::string method = j.at("method").get<std::string>();
  s.method = method == name ? std::string() : method;
  s.epsilon = j.at("epsilon").get<double>();
  s.steps = j.at("steps").get<std::size_t>();
  s.step_size = j.at("step_size").get<double>();
  for (const auto& [k, v] : j.items()) {
    if (k != "method" && k != "epsilon" && k != "steps" && k != "step_size") s.extras[k] = v.get<double>();
  }
  return s;
}

/// Overlays `patch` on `base`; every patched key must already exist with a compatible type.
void merge(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw InvalidArgument("config: " + path + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw InvalidArgument("config: unknown key " + where);
    json& slot = base[key];
    if (slot.is_object()) {
      merge(slot, value, where);
    } else if (slot.is_number() != value.is_number() || slot.is_boolean() != value.is_boolean() ||
               slot.is_string() != value.is_string() || slot.is_array() != value.is_array()) {
      throw InvalidArgument("config: wrong type for " + where);
    } else {
      if (slot.is_number_unsigned() && value.is_number_integer() && value.get<std::int64_t>() < 0) {
        throw InvalidArgument("config: " + where + " must be nonnegative");
      }
      slot = value;
    }
  }
}

ToolkitConfig from_json(const json& j) {
  ToolkitConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  const json& d = j.at("dataset");
  c.dataset.train_per_class = d.at("train_per_class").get<std::size_t>();
  c.dataset.test_per_class = d.at("test_per_class").get<std::size_t>();
  c.dataset.points = d.at("points").get<std::size_t>();
  const json& v = j.at("victim");
  c.victim_feature_dim = v.at("feature_dim").get<std::size_t>();
  c.victim_k_graph = v.at("k_graph").get<std::size_t>();
  c.victim_training.epochs = v.at("epochs").get<std::size_t>();
  c.victim_training.learning_rate = v.at("learning_rate").get<float>();
  c.victim_training.batch_size = v.at("batch_size").get<std::size_t>();
  const json& a = j.at("attacks");
  c.attack_names = a.at("names").get<std::vector<std::string>>();
  for (const auto& [name, spec] : a.items()) {
    if (name != "names") c.attack_specs[name] = attack_from(name, spec);
  }
  for (const auto& name : c.attack_names) {
    if (c.attack_specs.count(name) == 0) throw InvalidArgument("config: attacks.names lists unknown attack " + name);
  }
  const json& p = j.at("apc");
  auto& apc = c.apc;
  apc.k = p.at("k").get<std::size_t>();
  apc.feature_dim = p.at("feature_dim").get<std::size_t>();
  apc.local_hidden = p.at("local_hidden").get<std::size_t>();
  apc.decoder_hidden = p.at("decoder_hidden").get<std::vector<std::size_t>>();
  const std::string block = p.at("local_block").get<std::string>();
  if (block != "pooled" && block != "flattened") throw InvalidArgument("config: apc.local_block must be pooled or flattened");
  apc.local_block = block == "pooled" ? purifier::LocalBlock::kPooled : purifier::LocalBlock::kFlattened;
  apc.alpha = p.at("alpha").get<double>();
  apc.beta = p.at("beta").get<double>();
  const std::string dist = p.at("geo_distance").get<std::string>();
  if (dist == "chamfer") {
    apc.geo_distance = ad::SetDistance::kChamfer;
  } else if (dist == "chamfer_symmetric") {
    apc.geo_distance = ad::SetDistance::kChamferSymmetric;
  } else if (dist == "hausdorff") {
    apc.geo_distance = ad::SetDistance::kHausdorff;
  } else {
    throw InvalidArgument("config: unknown apc.geo_distance " + dist);
  }
  apc.preprocess = p.at("preprocess").get<bool>();
  apc.sor_k = p.at("sor_k").get<std::size_t>();
  apc.sor_alpha = p.at("sor_alpha").get<double>();
  apc.epochs = p.at("epochs").get<std::size_t>();
  apc.learning_rate = p.at("learning_rate").get<float>();
  apc.batch_size = p.at("batch_size").get<std::size_t>();
  apc.subsample_fraction = p.at("subsample_fraction").get<double>();
  apc.attacks = p.at("attacks").get<std::vector<std::string>>();
  apc.include_clean = p.at("include_clean").get<bool>();
  apc.validate();
  const json& df = j.at("defenses");
  c.srs.name = "srs";
  c.srs.srs_drop_count = df.at("srs_drop_count").get<std::size_t>();
  c.sor.name = "sor";
  c.sor.sor_k = df.at("sor_k").get<std::size_t>();
  c.sor.sor_alpha = df.at("sor_alpha").get<double>();
  const json& e = j.at("eval");
  c.efficiency_repetitions = e.at("efficiency_repetitions").get<std::size_t>();
  c.efficiency_samples = e.at("efficiency_samples").get<std::size_t>();
  set_seed(c, c.seed);
  return c;
}

}  // namespace

victims::VictimConfig ToolkitConfig::victim(victims::Architecture arch) const {
  victims::VictimConfig v;
  v.architecture = arch;
  v.num_classes = data::kNumShapeKinds;
  v.feature_dim = victim_feature_dim;
  v.k_graph = victim_k_graph;
  v.seed = seed;
  return v;
}

attacks::AttackSpec ToolkitConfig::attack(const std::string& name) const {
  const auto it = attack_specs.find(name);
  if (it == attack_specs.end()) throw InvalidArgument("config: unknown attack " + name);
  attacks::AttackSpec s = it->second;
  s.seed = seed;
  return s;
}

ToolkitConfig default_config() {
  ToolkitConfig c;
  c.attack_names = attacks::default_attack_names();
  for (const auto& name : c.attack_names) c.attack_specs[name] = attacks::default_spec(name);
  c.attack_specs[std::string(data::kCleanAttack)] = attacks::default_spec(std::string(data::kCleanAttack));
  c.srs.name = "srs";
  c.sor.name = "sor";
  set_seed(c, 0);
  return c;
}

void set_seed(ToolkitConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.dataset.seed = seed;
  c.victim_training.seed = seed;
  c.apc.seed = seed;
  c.srs.seed = seed;
  c.sor.seed = seed;
  for (auto& [name, spec] : c.attack_specs) spec.seed = seed;
}

std::string to_json(const ToolkitConfig& c) {
  json attacks = {{"names", c.attack_names}};
  for (const auto& [name, spec] : c.attack_specs) attacks[name] = attack_json(spec);
  const auto& a = c.apc;
  const char* dist = a.geo_distance == ad::SetDistance::kChamfer           ? "chamfer"
                     : a.geo_distance == ad::SetDistance::kChamferSymmetric ? "chamfer_symmetric"
                                                                            : "hausdorff";
  json j = {
      {"schema_version", kSchemaVersion},
      {"seed", c.seed},
      {"dataset",
       {{"train_per_class", c.dataset.train_per_class},
        {"test_per_class", c.dataset.test_per_class},
        {"points", c.dataset.points}}},
      {"victim",
       {{"feature_dim", c.victim_feature_dim},
        {"k_graph", c.victim_k_graph},
        {"epochs", c.victim_training.epochs},
        {"learning_rate", c.victim_training.learning_rate},
        {"batch_size", c.victim_training.batch_size}}},
      {"attacks", attacks},
      {"apc",
       {{"k", a.k},
        {"feature_dim", a.feature_dim},
        {"local_hidden", a.local_hidden},
        {"decoder_hidden", a.decoder_hidden},
        {"local_block", a.local_block == purifier::LocalBlock::kPooled ? "pooled" : "flattened"},
        {"alpha", a.alpha},
        {"beta", a.beta},
        {"geo_distance", dist},
        {"preprocess", a.preprocess},
        {"sor_k", a.sor_k},
        {"sor_alpha", a.sor_alpha},
        {"epochs", a.epochs},
        {"learning_rate", a.learning_rate},
        {"batch_size", a.batch_size},
        {"subsample_fraction", a.subsample_fraction},
        {"attacks", a.attacks},
        {"include_clean", a.include_clean}}},
      {"defenses", {{"srs_drop_count", c.srs.srs_drop_count}, {"sor_k", c.sor.sor_k}, {"sor_alpha", c.sor.sor_alpha}}},
      {"eval",
       {{"efficiency_repetitions", c.efficiency_repetitions}, {"efficiency_samples", c.efficiency_samples}}}};
  return j.dump(2);
}

ToolkitConfig parse_config(const std::string& text) {
  json patch;
  try {
    patch = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(std::string("config: malformed JSON: ") + e.what());
  }
  if (!patch.is_object()) throw InvalidArgument("config: top level must be an object");
  if (!patch.contains("schema_version")) throw InvalidArgument("config: missing schema_version");
  if (!patch["schema_version"].is_number_integer() || patch["schema_version"].get<int>() != kSchemaVersion) {
    throw InvalidArgument("config: unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");
  }
  json full = json::parse(to_json(default_config()));
  try {
    merge(full, patch, "");
    return from_json(full);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
}

ToolkitConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read config " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace apckit::config
