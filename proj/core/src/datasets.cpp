#include "apckit/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include <Eigen/Geometry>
#include <json.hpp>

#include "apckit/errors.hpp"
#include "apckit/geometry.hpp"
#include "apckit/params.hpp"

namespace apckit::data {

namespace {

using json = nlohmann::json;
constexpr const char* kFormatVersion = "1";
constexpr float kPi = std::numbers::pi_v<float>;

float uniform(Rng& rng, float lo, float hi) { return std::uniform_real_distribution<float>(lo, hi)(rng); }

Eigen::RowVector3f on_triangle(const Eigen::RowVector3f& a, const Eigen::RowVector3f& b, const Eigen::RowVector3f& c,
                               Rng& rng) {
  float u = uniform(rng, 0.0F, 1.0F);
  float v = uniform(rng, 0.0F, 1.0F);
  if (u + v > 1.0F) {
    u = 1.0F - u;
    v = 1.0F - v;
  }
  return a + u * (b - a) + v * (c - a);
}

/// Index into `areas` drawn proportionally to area.
std::size_t pick_piece(const std::vector<float>& areas, Rng& rng) {
  std::discrete_distribution<std::size_t> d(areas.begin(), areas.end());
  return d(rng);
}

Eigen::RowVector3f unit_sphere_point(Rng& rng) {
  std::normal_distribution<float> g(0.0F, 1.0F);
  Eigen::RowVector3f v;
  do {
    v = {g(rng), g(rng), g(rng)};
  } while (v.norm() < 1e-6F);
  return v / v.norm();
}

Eigen::RowVector3f sample_one(ShapeKind kind, Rng& rng) {
  switch (kind) {
    case ShapeKind::kSphere:
      return unit_sphere_point(rng);
    case ShapeKind::kEllipsoid:
      return unit_sphere_point(rng).cwiseProduct(Eigen::RowVector3f(1.0F, 0.5F, 0.25F));
    case ShapeKind::kCube: {
      const float h = kCubeHalfWidth;
      const int face = std::uniform_int_distribution<int>(0, 5)(rng);
      Eigen::RowVector3f p(uniform(rng, -h, h), uniform(rng, -h, h), uniform(rng, -h, h));
      p(face / 2) = (face % 2 == 0) ? h : -h;
      return p;
    }
    case ShapeKind::kCylinder: {
      const float r = 0.5F;
      const float h = 0.5F;
      const std::size_t piece = pick_piece({2.0F * kPi * r * 2.0F * h, kPi * r * r, kPi * r * r}, rng);
      const float theta = uniform(rng, 0.0F, 2.0F * kPi);
      if (piece == 0) return {r * std::cos(theta), r * std::sin(theta), uniform(rng, -h, h)};
      const float rr = r * std::sqrt(uniform(rng, 0.0F, 1.0F));
      return {rr * std::cos(theta), rr * std::sin(theta), piece == 1 ? h : -h};
    }
    case ShapeKind::kCone: {
      const float r = 0.5F;
      const float height = 1.0F;
      const float slant = std::sqrt(r * r + height * height);
      const std::size_t piece = pick_piece({kPi * r * slant, kPi * r * r}, rng);
      const float theta = uniform(rng, 0.0F, 2.0F * kPi);
      const float s = std::sqrt(uniform(rng, 0.0F, 1.0F));
      if (piece == 0) return {r * s * std::cos(theta), r * s * std::sin(theta), 0.5F - s * height};
      return {r * s * std::cos(theta), r * s * std::sin(theta), -0.5F};
    }
    case ShapeKind::kTorus: {
      const float major = 0.6F;
      const float minor = 0.25F;
      // Rejection on the tube angle keeps the density uniform over the surface.
      while (true) {
        const float u = uniform(rng, 0.0F, 2.0F * kPi);
        const float v = uniform(rng, 0.0F, 2.0F * kPi);
        if (uniform(rng, 0.0F, major + minor) <= major + minor * std::cos(v)) {
          const float ring = major + minor * std::cos(v);
          return {ring * std::cos(u), ring * std::sin(u), minor * std::sin(v)};
        }
      }
    }
    case ShapeKind::kPyramid: {
      const float h = 0.5F;
      const Eigen::RowVector3f apex(0.0F, 0.0F, 0.5F);
      const std::array<Eigen::RowVector3f, 4> base = {Eigen::RowVector3f(-h, -h, -0.5F), Eigen::RowVector3f(h, -h, -0.5F),
                                                      Eigen::RowVector3f(h, h, -0.5F), Eigen::RowVector3f(-h, h, -0.5F)};
      const float side = 0.5F * (2.0F * h) * std::sqrt(1.0F + h * h);
      const std::size_t piece = pick_piece({side, side, side, side, 4.0F * h * h}, rng);
      if (piece < 4) return on_triangle(base[piece], base[(piece + 1) % 4], apex, rng);
      return {uniform(rng, -h, h), uniform(rng, -h, h), -0.5F};
    }
    case ShapeKind::kPlaneCross: {
      const float h = 0.5F;
      const float a = uniform(rng, -h, h);
      const float z = uniform(rng, -h, h);
      if (std::uniform_int_distribution<int>(0, 1)(rng) == 0) return {0.0F, a, z};
      return {a, 0.0F, z};
    }
  }
  throw InvalidArgument("unknown shape kind");
}

void write_json(const std::filesystem::path& file, const json& j) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + file.string());
}

json read_json(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + file.string() + ": " + e.what());
  }
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

std::string sanitize(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                    c == '_' || c == '.';
    if (!ok) c = '_';
  }
  return out;
}

PairRecord read_record(const std::filesystem::path& store, const std::string& key) {
  const json meta = read_json(store / (key + ".json"));
  if (meta.value("format_version", "") != kFormatVersion) throw IoError("unsupported record version for " + key);
  PairRecord r{meta.at("example_id").get<std::string>(),
               meta.at("attack_name").get<std::string>(),
               meta.at("victim_name").get<std::string>(),
               load_cloud(store / (key + ".clean.bin")),
               load_cloud(store / (key + ".bin")),
               meta.at("label").get<std::size_t>()};
  if (r.adversarial.size() != meta.at("n_points").get<std::size_t>()) {
    throw IoError("record " + key + ": point count does not match metadata");
  }
  return r;
}

}  // namespace

ShapeKind shape_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumShapeKinds; ++i) {
    if (kShapeNames[i] == name) return static_cast<ShapeKind>(i);
  }
  throw InvalidArgument("unknown shape kind: " + std::string(name));
}

std::string_view shape_name(ShapeKind kind) { return kShapeNames.at(static_cast<std::size_t>(kind)); }

Points sample_surface(ShapeKind kind, std::size_t n, Rng& rng) {
  Points p(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i) = sample_one(kind, rng);
  return p;
}

LabeledCloud generate_shape(ShapeKind kind, std::size_t n, std::uint64_t seed) {
  if (n < 32) throw InvalidArgument("generate_shape: need at least 32 points");
  Rng rng(seed);
  Points p = sample_surface(kind, n, rng);

  const Eigen::RowVector3f scale(uniform(rng, 0.7F, 1.3F), uniform(rng, 0.7F, 1.3F), uniform(rng, 0.7F, 1.3F));
  // Upright shapes: the random rotation is about the vertical axis.
  const Eigen::Matrix3f rot =
      Eigen::AngleAxisf(uniform(rng, 0.0F, 2.0F * std::numbers::pi_v<float>), Eigen::Vector3f::UnitZ()).toRotationMatrix();
  std::normal_distribution<float> jitter(0.0F, 0.005F);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const Eigen::Vector3f scaled = p.row(i).cwiseProduct(scale).transpose();
    p.row(i) = (rot * scaled).transpose();
  }
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] += jitter(rng);
  return LabeledCloud{geometry::normalize_unit_sphere(PointCloud(std::move(p))), static_cast<std::size_t>(kind), ""};
}

LabeledCloud generate_shape(std::string_view kind, std::size_t n, std::uint64_t seed) {
  return generate_shape(shape_from_name(kind), n, seed);
}

const LabeledCloud& DatasetSplit::find(std::string_view example_id) const {
  for (const auto& e : examples) {
    if (e.example_id == example_id) return e;
  }
  throw InvalidArgument("no example with id " + std::string(example_id) + " in split " + split_name);
}

Dataset build_dataset(const DatasetConfig& config) {
  if (config.train_per_class == 0 || config.test_per_class == 0) {
    throw InvalidArgument("build_dataset: per-class counts must be positive");
  }
  if (config.points < 32) throw InvalidArgument("build_dataset: need at least 32 points per cloud");
  auto make = [&](const std::string& split, std::size_t per_class) {
    DatasetSplit s{split, kNumShapeKinds, {}};
    s.examples.reserve(per_class * kNumShapeKinds);
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t c = 0; c < kNumShapeKinds; ++c) {
        char id[64];
        std::snprintf(id, sizeof(id), "%s-%s-%05zu", split.c_str(), std::string(kShapeNames[c]).c_str(), i);
        const std::uint64_t seed = derive_seed(config.seed, {"dataset", split, id});
        LabeledCloud ex = generate_shape(static_cast<ShapeKind>(c), config.points, seed);
        ex.example_id = id;
        s.examples.push_back(std::move(ex));
      }
    }
    return s;
  };
  return Dataset{make("train", config.train_per_class), make("test", config.test_per_class)};
}

void save_cloud(const std::filesystem::path& bin_file, const PointCloud& cloud) {
  write_f32_le(bin_file, cloud.points().data(), static_cast<std::size_t>(cloud.points().size()));
}

PointCloud load_cloud(const std::filesystem::path& bin_file) {
  const std::vector<float> raw = read_f32_le(bin_file);
  if (raw.empty() || raw.size() % 3 != 0) throw IoError("not an N x 3 float32 cloud: " + bin_file.string());
  return PointCloud::from_rows(raw);
}

void save_split(const std::filesystem::path& dir, const DatasetSplit& split) {
  if (split.examples.empty()) throw InvalidArgument("save_split: empty split");
  ensure_dir(dir);
  json keys = json::array();
  for (const auto& ex : split.examples) {
    const std::string key = sanitize(ex.example_id);
    save_cloud(dir / (key + ".bin"), ex.cloud);
    write_json(dir / (key + ".json"), {{"format_version", kFormatVersion},
                                        {"example_id", ex.example_id},
                                        {"label", ex.label},
                                        {"n_points", ex.cloud.size()},
                                        {"attack_name", ""},
                                        {"victim_name", ""}});
    keys.push_back(key);
  }
  write_json(dir / "manifest.json", {{"format_version", kFormatVersion},
                                      {"kind", "split"},
                                      {"split_name", split.split_name},
                                      {"num_classes", split.num_classes},
                                      {"keys", keys}});
}

DatasetSplit load_split(const std::filesystem::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  if (manifest.value("format_version", "") != kFormatVersion || manifest.value("kind", "") != "split") {
    throw IoError("not a split directory: " + dir.string());
  }
  DatasetSplit s{manifest.at("split_name").get<std::string>(), manifest.at("num_classes").get<std::size_t>(), {}};
  for (const auto& k : manifest.at("keys")) {
    const std::string key = k.get<std::string>();
    const json meta = read_json(dir / (key + ".json"));
    LabeledCloud ex{load_cloud(dir / (key + ".bin")), meta.at("label").get<std::size_t>(),
                    meta.at("example_id").get<std::string>()};
    if (ex.label >= s.num_classes) throw IoError("label out of range in " + key);
    s.examples.push_back(std::move(ex));
  }
  if (s.examples.empty()) throw IoError("split has no examples: " + dir.string());
  return s;
}

std::string PairRecord::key() const {
  return sanitize(example_id) + "__" + sanitize(attack_name) + "__" + sanitize(victim_name);
}

std::size_t store_pairs(const std::filesystem::path& store, const std::vector<PairRecord>& records) {
  ensure_dir(store);
  std::vector<std::string> keys;
  const auto manifest_file = store / "manifest.json";
  if (std::filesystem::exists(manifest_file)) {
    const json manifest = read_json(manifest_file);
    for (const auto& k : manifest.at("keys")) keys.push_back(k.get<std::string>());
  }
  for (const auto& r : records) {
    const std::string key = r.key();
    save_cloud(store / (key + ".bin"), r.adversarial);
    save_cloud(store / (key + ".clean.bin"), r.clean);
    write_json(store / (key + ".json"), {{"format_version", kFormatVersion},
                                          {"example_id", r.example_id},
                                          {"label", r.label},
                                          {"n_points", r.adversarial.size()},
                                          {"clean_n_points", r.clean.size()},
                                          {"attack_name", r.attack_name},
                                          {"victim_name", r.victim_name}});
    keys.push_back(key);
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  write_json(manifest_file, {{"format_version", kFormatVersion}, {"kind", "pair_store"}, {"keys", keys}});
  return records.size();
}

std::vector<PairRecord> load_pairs(const std::filesystem::path& store, const PairFilter& filter) {
  const auto manifest_file = store / "manifest.json";
  if (!std::filesystem::exists(manifest_file)) throw IoError("no pair store at " + store.string());
  const json manifest = read_json(manifest_file);
  if (manifest.value("kind", "") != "pair_store") throw IoError("not a pair store: " + store.string());
  std::vector<std::string> keys;
  for (const auto& k : manifest.at("keys")) keys.push_back(k.get<std::string>());
  std::sort(keys.begin(), keys.end());
  std::vector<PairRecord> out;
  for (const auto& key : keys) {
    // Cheap prefilter on metadata before reading the clouds.
    const json meta = read_json(store / (key + ".json"));
    if (filter.attack && meta.at("attack_name").get<std::string>() != *filter.attack) continue;
    if (filter.victim && meta.at("victim_name").get<std::string>() != *filter.victim) continue;
    out.push_back(read_record(store, key));
  }
  return out;
}

}  // namespace apckit::data
