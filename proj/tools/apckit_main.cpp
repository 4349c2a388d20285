// apckit: command-line front end. Every subcommand reads and writes under --out.
//
//   out/data/{train,test}        datagen
//   out/victims/<arch>/          train-victim
//   out/pairs/<split>/           attack
//   out/apc/<name>/              train-apc
//   out/reports/*.json           eval, transfer, ablate
//   out/report/                  report

#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "apckit/attacks.hpp"
#include "apckit/config.hpp"
#include "apckit/datasets.hpp"
#include "apckit/errors.hpp"
#include "apckit/evaluation.hpp"
#include "apckit/purifier.hpp"
#include "apckit/report.hpp"
#include "apckit/victims.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace apckit;

namespace {

struct Globals {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  fs::path out = "apckit_out";
};

config::ToolkitConfig resolve_config(const Globals& g) {
  config::ToolkitConfig c = g.config_file.empty() ? config::default_config() : config::load_config(g.config_file);
  if (g.seed) config::set_seed(c, *g.seed);
  return c;
}

void write_file(const fs::path& file, const std::string& text) {
  fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << text;
}

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// An architecture name resolves to out/victims/<name>; anything else is a checkpoint path.
fs::path victim_dir(const Globals& g, const std::string& victim) {
  if (victim == "pointnet_mini" || victim == "dgcnn_mini") return g.out / "victims" / victim;
  return victim;
}

fs::path apc_dir(const Globals& g, const std::string& apc) {
  return fs::is_directory(apc) ? fs::path(apc) : g.out / "apc" / apc;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::unique_ptr<eval::Defense>> make_defenses(const Globals& g, const config::ToolkitConfig& c,
                                                          const std::vector<std::string>& names,
                                                          const std::string& apc) {
  std::vector<std::unique_ptr<eval::Defense>> out;
  for (const auto& name : names) {
    if (name == "none") {
      out.push_back(std::make_unique<eval::IdentityDefense>());
    } else if (name == "srs") {
      out.push_back(std::make_unique<eval::BaselineDefense>(c.srs));
    } else if (name == "sor") {
      out.push_back(std::make_unique<eval::BaselineDefense>(c.sor));
    } else if (name == "apc") {
      if (apc.empty()) throw InvalidArgument("defense 'apc' needs --apc");
      out.push_back(std::make_unique<eval::ApcDefense>(
          std::make_shared<const purifier::ApcModel>(purifier::ApcModel::load(apc_dir(g, apc)))));
    } else {
      throw InvalidArgument("unknown defense " + name);
    }
  }
  return out;
}

json metadata(const config::ToolkitConfig& c) {
  return {{"seed", c.seed}, {"code_version", "0.1.0"}, {"config", json::parse(config::to_json(c))}};
}

void cmd_datagen(const Globals& g) {
  const auto c = resolve_config(g);
  const data::Dataset ds = data::build_dataset(c.dataset);
  data::save_split(g.out / "data" / "train", ds.train);
  data::save_split(g.out / "data" / "test", ds.test);
  std::printf("wrote %zu train / %zu test examples to %s\n", ds.train.examples.size(), ds.test.examples.size(),
              (g.out / "data").string().c_str());
}

void cmd_train_victim(const Globals& g, const std::string& arch) {
  const auto c = resolve_config(g);
  const auto train = data::load_split(g.out / "data" / "train");
  const auto test = data::load_split(g.out / "data" / "test");
  victims::VictimModel model(c.victim(victims::architecture_from_name(arch)));
  const victims::TrainLog log = victims::train_victim(model, train, c.victim_training, &test);
  const fs::path dir = g.out / "victims" / arch;
  model.save(dir);
  json epochs = json::array();
  for (const auto& e : log.epochs) epochs.push_back({{"epoch", e.epoch}, {"loss", e.mean_loss}, {"train_accuracy", e.train_accuracy}});
  write_file(dir / "train_log.json", json{{"initial_loss", log.initial_loss},
                                          {"epochs", epochs},
                                          {"train_accuracy", log.final_train_accuracy},
                                          {"test_accuracy", log.final_test_accuracy},
                                          {"seconds", log.seconds},
                                          {"params", victims::param_count(model)}}
                                         .dump(2));
  std::printf("%s: test accuracy %s%% after %zu epochs (%.1f s)\n", arch.c_str(),
              report::format_percent(log.final_test_accuracy).c_str(), log.epochs.size(), log.seconds);
}

void cmd_attack(const Globals& g, const std::string& victim, const std::string& split, const std::string& attack_list,
                std::size_t limit) {
  const auto c = resolve_config(g);
  const auto model = victims::VictimModel::load(victim_dir(g, victim));
  data::DatasetSplit ds = data::load_split(g.out / "data" / split);
  if (limit > 0 && limit < ds.examples.size()) ds.examples.resize(limit);
  std::vector<std::string> names = attack_list.empty() ? c.attack_names : split_list(attack_list);
  if (attack_list.empty()) names.emplace_back(data::kCleanAttack);
  std::vector<attacks::AttackSpec> specs;
  for (const auto& n : names) specs.push_back(c.attack(n));
  const fs::path store = g.out / "pairs" / split;
  const auto summary = attacks::generate_attack_set(model, ds, specs, store, c.seed);
  for (const auto& [name, rate] : summary.success_rate) {
    std::printf("%-8s %zu examples, success %s%%\n", name.c_str(), summary.counts.at(name),
                report::format_percent(rate).c_str());
  }
  std::printf("wrote %zu records to %s\n", summary.records_written, store.string().c_str());
}

void cmd_train_apc(const Globals& g, const std::string& victim, const std::string& attack_list, const std::string& name) {
  auto c = resolve_config(g);
  if (!attack_list.empty()) c.apc.attacks = split_list(attack_list);
  const auto model = victims::VictimModel::load(victim_dir(g, victim));
  data::PairFilter filter;
  filter.victim = model.name();
  const auto records = data::load_pairs(g.out / "pairs" / "train", filter);
  const auto result = purifier::train_apc(model, records, c.apc);
  const fs::path dir = g.out / "apc" / name;
  result.model.save(dir);
  json epochs = json::array();
  for (const auto& e : result.log.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"total", e.mean.total}, {"ce", e.mean.ce}, {"geo", e.mean.geo}, {"sem", e.mean.sem}});
  }
  write_file(dir / "train_log.json", json{{"victim", model.name()},
                                          {"initial_total", result.log.initial.total},
                                          {"epochs", epochs},
                                          {"pairs_per_attack", result.log.pairs_per_attack},
                                          {"training_pairs", result.log.training_pairs},
                                          {"skipped_pairs", result.log.skipped_pairs},
                                          {"victim_hash_unchanged", result.log.victim_hash_before == result.log.victim_hash_after},
                                          {"seconds", result.log.seconds},
                                          {"params", purifier::apc_param_count(result.model)}}
                                         .dump(2));
  std::printf("trained %s on %zu pairs in %.1f s, final loss %.4f\n", name.c_str(), result.log.training_pairs,
              result.log.seconds, result.log.epochs.empty() ? result.log.initial.total : result.log.epochs.back().mean.total);
}

void cmd_defend(const Globals& g, const std::string& apc, const fs::path& input, const fs::path& output, bool no_sor) {
  const auto model = purifier::ApcModel::load(apc_dir(g, apc));
  const PointCloud cloud = data::load_cloud(input);
  const auto res = no_sor ? purifier::apc_purify(model, cloud, false) : purifier::apc_purify(model, cloud);
  data::save_cloud(output, res.purified);
  std::printf("purified %zu -> %zu points into %s\n", res.pre_sor_count, res.post_sor_count, output.string().c_str());
}

void cmd_eval(const Globals& g, const std::string& victim, const std::string& defense_list, const std::string& apc,
              const std::string& attack_list, bool efficiency) {
  const auto c = resolve_config(g);
  const auto model = victims::VictimModel::load(victim_dir(g, victim));
  const auto defenses = make_defenses(g, c, split_list(defense_list), apc);
  data::PairFilter filter;
  filter.victim = model.name();
  const auto pairs = data::load_pairs(g.out / "pairs" / "test", filter);
  const auto attacks = split_list(attack_list);
  json all = json::array();
  for (const auto& d : defenses) {
    eval::EvalReport r = eval::eval_defense(model, *d, pairs, attacks);
    r.metadata_json = metadata(c).dump();
    std::printf("%-6s avg %6s%%  clean %6s%%\n", d->name().c_str(), report::format_percent(r.average).c_str(),
                report::format_percent(r.clean_accuracy).c_str());
    all.push_back(json::parse(report::to_json(r)));
  }
  write_file(g.out / "reports" / ("eval_" + model.name() + ".json"), all.dump(2));
  if (efficiency) {
    std::vector<PointCloud> samples;
    for (const auto& p : pairs) {
      if (samples.size() >= c.efficiency_samples) break;
      samples.push_back(p.adversarial);
    }
    std::vector<const eval::Defense*> ptrs;
    for (const auto& d : defenses) ptrs.push_back(d.get());
    const auto rows = eval::measure_efficiency(ptrs, samples, c.efficiency_repetitions);
    write_file(g.out / "reports" / "efficiency.json", report::to_json(rows));
    std::printf("%s", report::efficiency_markdown(rows).c_str());
  }
}

void cmd_transfer(const Globals& g, const std::string& apc, const std::string& source, const std::string& target_list,
                  const std::string& attack_list) {
  const auto model = purifier::ApcModel::load(apc_dir(g, apc));
  std::vector<victims::VictimModel> victims_loaded;
  const auto names = split_list(target_list);
  victims_loaded.reserve(names.size());
  for (const auto& t : names) victims_loaded.push_back(victims::VictimModel::load(victim_dir(g, t)));
  std::vector<eval::TransferTarget> targets;
  for (const auto& v : victims_loaded) {
    data::PairFilter filter;
    filter.victim = v.name();
    targets.push_back({&v, data::load_pairs(g.out / "pairs" / "test", filter)});
  }
  const auto m = eval::eval_cross_model(model, source, targets, split_list(attack_list));
  write_file(g.out / "reports" / "transfer.json", report::to_json(m));
  std::printf("%s", report::transfer_markdown(m).c_str());
}

void cmd_ablate(const Globals& g, const std::string& kind, const std::string& victim, const std::string& seeds) {
  const auto c = resolve_config(g);
  const auto model = victims::VictimModel::load(victim_dir(g, victim));
  data::PairFilter filter;
  filter.victim = model.name();
  eval::AblationInputs in;
  in.victim = &model;
  in.train_pairs = data::load_pairs(g.out / "pairs" / "train", filter);
  in.test_pairs = data::load_pairs(g.out / "pairs" / "test", filter);
  in.seeds.clear();
  for (const auto& s : split_list(seeds)) in.seeds.push_back(std::stoull(s));
  const auto table = eval::run_ablation(eval::ablation_from_name(kind), c.apc, in);
  write_file(g.out / "reports" / ("ablation_" + kind + ".json"), report::to_json(table));
  std::printf("%s", report::ablation_markdown(table).c_str());
}

/// Picks up to `count` test examples the victim gets wrong under attack and right after purification.
std::vector<report::Triptych> pick_triptychs(const Globals& g, const std::string& victim, const std::string& apc,
                                             std::size_t count) {
  const auto model = victims::VictimModel::load(victim_dir(g, victim));
  const auto purifier_model = purifier::ApcModel::load(apc_dir(g, apc));
  data::PairFilter filter;
  filter.victim = model.name();
  std::vector<report::Triptych> out;
  for (const auto& r : data::load_pairs(g.out / "pairs" / "test", filter)) {
    if (out.size() >= count) break;
    if (r.attack_name == data::kCleanAttack) continue;
    report::Triptych t;
    t.example_id = r.example_id;
    t.attack_name = r.attack_name;
    for (auto n : data::kShapeNames) t.class_names.emplace_back(n);
    t.true_label = r.label;
    t.pred_adversarial = victims::predict_label(model, r.adversarial);
    if (t.pred_adversarial == r.label) continue;
    PointCloud purified = r.adversarial;
    try {
      purified = purifier::apc_purify(purifier_model, r.adversarial).purified;
    } catch (const DegenerateInput&) {
      continue;
    }
    t.pred_purified = victims::predict_label(model, purified);
    if (t.pred_purified != r.label) continue;
    t.pred_clean = victims::predict_label(model, r.clean);
    t.clean = r.clean;
    t.adversarial = r.adversarial;
    t.purified = std::move(purified);
    out.push_back(std::move(t));
  }
  return out;
}

void cmd_report(const Globals& g, const std::string& formats, const std::string& victim, const std::string& apc,
                std::size_t plots) {
  report::ReportBundle bundle;
  const fs::path reports = g.out / "reports";
  if (!fs::is_directory(reports)) throw IoError("no reports directory at " + reports.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(reports)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    if (stem.rfind("eval_", 0) == 0) {
      for (const auto& j : json::parse(read_file(f))) bundle.reports.push_back(report::eval_report_from_json(j.dump()));
    } else if (stem == "transfer") {
      bundle.transfer = report::transfer_from_json(read_file(f));
    } else if (stem.rfind("ablation_", 0) == 0) {
      bundle.ablations.push_back(report::ablation_from_json(read_file(f)));
    } else if (stem == "efficiency") {
      bundle.efficiency = report::efficiency_from_json(read_file(f));
    }
  }
  std::set<report::Format> fmts;
  for (const auto& f : split_list(formats)) fmts.insert(report::format_from_name(f));
  if (fmts.count(report::Format::kPlots) != 0) {
    if (apc.empty()) throw InvalidArgument("plots need --apc");
    bundle.triptychs = pick_triptychs(g, victim, apc, plots);
  }
  for (const auto& f : report::render_report(bundle, g.out / "report", fmts)) std::printf("%s\n", f.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"apckit: adversarial point counterattack toolkit"};
  app.require_subcommand(1);
  Globals g;
  std::string out = g.out.string();
  app.add_option("--config", g.config_file, "JSON config file (schema_version 1)")->check(CLI::ExistingFile);
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Master seed, overrides the config");
  app.add_option("--out", out, "Output root directory");

  auto* datagen = app.add_subcommand("datagen", "Generate the synthetic train/test splits");

  std::string arch = "pointnet_mini";
  auto* train_victim = app.add_subcommand("train-victim", "Train a victim classifier");
  train_victim->add_option("--arch", arch, "pointnet_mini or dgcnn_mini");

  std::string victim = "pointnet_mini", split = "test", attack_list;
  std::size_t limit = 0;
  auto* attack = app.add_subcommand("attack", "Attack a split and store clean-adversarial pairs");
  attack->add_option("--victim", victim, "Victim architecture or checkpoint dir");
  attack->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  attack->add_option("--attacks", attack_list, "Comma-separated attack names (default: all configured plus clean)");
  attack->add_option("--limit", limit, "Only the first N examples");

  std::string name = "apc";
  auto* train_apc = app.add_subcommand("train-apc", "Train the purifier on stored training pairs");
  train_apc->add_option("--victim", victim, "Victim architecture or checkpoint dir");
  train_apc->add_option("--attacks", attack_list, "Training attacks; one name trains an IAPC");
  train_apc->add_option("--name", name, "Output name under out/apc");

  std::string apc, input, output;
  bool no_sor = false;
  auto* defend = app.add_subcommand("defend", "Purify one cloud file");
  defend->add_option("--apc", apc, "Purifier name or checkpoint dir")->required();
  defend->add_option("--input", input, "Input .bin cloud")->required()->check(CLI::ExistingFile);
  defend->add_option("--output", output, "Output .bin cloud")->required();
  defend->add_flag("--no-sor", no_sor, "Skip SOR preprocessing");

  std::string defense_list = "none,srs,sor,apc";
  bool efficiency = false;
  auto* evaluate = app.add_subcommand("eval", "Robustness table on the test pairs");
  evaluate->add_option("--victim", victim, "Victim architecture or checkpoint dir");
  evaluate->add_option("--defenses", defense_list, "Comma-separated: none, srs, sor, apc");
  evaluate->add_option("--apc", apc, "Purifier name or checkpoint dir");
  evaluate->add_option("--attacks", attack_list, "Restrict to these attacks");
  evaluate->add_flag("--efficiency", efficiency, "Also time each defense");

  std::string source = "pointnet_mini", targets = "pointnet_mini,dgcnn_mini";
  auto* transfer = app.add_subcommand("transfer", "Frozen purifier in front of other victims");
  transfer->add_option("--apc", apc, "Purifier name or checkpoint dir")->required();
  transfer->add_option("--source", source, "Victim the purifier was trained with");
  transfer->add_option("--targets", targets, "Comma-separated target victims");
  transfer->add_option("--attacks", attack_list, "Restrict to these attacks");

  std::string kind = "loss_terms", seeds = "0";
  auto* ablate = app.add_subcommand("ablate", "Purifier ablation table");
  ablate->add_option("--kind", kind, "hybrid_count, loss_terms, distance_metric or clean_inclusion");
  ablate->add_option("--victim", victim, "Victim architecture or checkpoint dir");
  ablate->add_option("--seeds", seeds, "Comma-separated purifier seeds");

  std::string formats = "markdown,csv";
  std::size_t plots = 4;
  auto* rep = app.add_subcommand("report", "Render markdown, CSV and plots from out/reports");
  rep->add_option("--formats", formats, "Subset of markdown,csv,plots");
  rep->add_option("--victim", victim, "Victim for plot predictions");
  rep->add_option("--apc", apc, "Purifier for plots");
  rep->add_option("--plots", plots, "Number of triptychs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  g.out = out;
  if (seed_opt->count() > 0) g.seed = seed;

  try {
    if (*datagen) cmd_datagen(g);
    if (*train_victim) cmd_train_victim(g, arch);
    if (*attack) cmd_attack(g, victim, split, attack_list, limit);
    if (*train_apc) cmd_train_apc(g, victim, attack_list, name);
    if (*defend) cmd_defend(g, apc, input, output, no_sor);
    if (*evaluate) cmd_eval(g, victim, defense_list, apc, attack_list, efficiency);
    if (*transfer) cmd_transfer(g, apc, source, targets, attack_list);
    if (*ablate) cmd_ablate(g, kind, victim, seeds);
    if (*rep) cmd_report(g, formats, victim, apc, plots);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "apckit: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
