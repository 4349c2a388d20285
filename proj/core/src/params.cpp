#include "apckit/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "apckit/errors.hpp"

namespace apckit {

namespace {

using json = nlohmann::json;

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xFFU) << 24) | ((v & 0xFF00U) << 8) | ((v & 0xFF0000U) >> 8) | (v >> 24);
  }
  return v;
}

}  // namespace

std::size_t ParamSet::add(std::string name, MatrixF value) {
  for (const auto& e : entries_) {
    if (e.name == name) throw InvalidArgument("duplicate parameter name: " + name);
  }
  entries_.push_back(Entry{std::move(name), std::move(value)});
  return entries_.size() - 1;
}

std::size_t ParamSet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw InvalidArgument("unknown parameter: " + name);
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

std::uint64_t ParamSet::hash() const {
  std::uint64_t h = fnv1a("apckit.params");
  for (const auto& e : entries_) {
    h = fnv1a(e.name, h);
    const std::int64_t shape[2] = {e.value.rows(), e.value.cols()};
    h = fnv1a_bytes(std::as_bytes(std::span(shape)), h);
    h = fnv1a_bytes(std::as_bytes(std::span(e.value.data(), static_cast<std::size_t>(e.value.size()))), h);
  }
  return h;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a[i];
    const auto& y = b[i];
    if (x.name != y.name || x.value.rows() != y.value.rows() || x.value.cols() != y.value.cols()) return false;
    if (std::memcmp(x.value.data(), y.value.data(), sizeof(float) * static_cast<std::size_t>(x.value.size())) != 0) {
      return false;
    }
  }
  return true;
}

std::vector<MatrixF> zero_grads(const ParamSet& params) {
  std::vector<MatrixF> grads;
  grads.reserve(params.size());
  for (const auto& e : params.entries()) grads.push_back(MatrixF::Zero(e.value.rows(), e.value.cols()));
  return grads;
}

void accumulate_grads(std::vector<MatrixF>& into, const ad::Tape<float>& tape, const BoundParams<float>& bound) {
  if (into.size() != bound.vars.size()) throw InvalidArgument("gradient buffer does not match bound parameters");
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += tape.grad(bound.vars[i]);
}

std::size_t add_dense(ParamSet& params, const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng,
                      bool zero_init) {
  if (fan_in == 0 || fan_out == 0) throw InvalidArgument("dense layer " + name + " needs nonzero dimensions");
  const auto rows = static_cast<Eigen::Index>(fan_in);
  const auto cols = static_cast<Eigen::Index>(fan_out);
  MatrixF w = MatrixF::Zero(rows, cols);
  if (!zero_init) {
    const float limit = std::sqrt(6.0F / static_cast<float>(fan_in + fan_out));
    std::uniform_real_distribution<float> dist(-limit, limit);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  }
  const std::size_t idx = params.add(name + ".weight", std::move(w));
  params.add(name + ".bias", MatrixF::Zero(1, cols));
  return idx;
}

Adam::Adam(const ParamSet& params, Options options) : opt_(options), m_(zero_grads(params)), v_(zero_grads(params)) {
  if (!(opt_.learning_rate > 0.0F)) throw InvalidArgument("Adam learning rate must be positive");
}

void Adam::step(ParamSet& params, const std::vector<MatrixF>& grads) {
  if (grads.size() != params.size() || m_.size() != params.size()) {
    throw InvalidArgument("Adam::step: gradient count does not match parameters");
  }
  ++t_;
  const float bc1 = 1.0F - std::pow(opt_.beta1, static_cast<float>(t_));
  const float bc2 = 1.0F - std::pow(opt_.beta2, static_cast<float>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].value;
    const auto& g = grads[i];
    m_[i] = opt_.beta1 * m_[i] + (1.0F - opt_.beta1) * g;
    v_[i] = opt_.beta2 * v_[i] + (1.0F - opt_.beta2) * g.cwiseProduct(g);
    const auto m_hat = m_[i].array() / bc1;
    const auto v_hat = v_[i].array() / bc2;
    p.array() -= opt_.learning_rate * (m_hat / (v_hat.sqrt() + opt_.epsilon));
    if (opt_.weight_decay > 0.0F) p *= (1.0F - opt_.learning_rate * opt_.weight_decay);
  }
}

void write_f32_le(const std::filesystem::path& file, const float* data, std::size_t count) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + file.string());
  std::vector<std::uint32_t> words(count);
  for (std::size_t i = 0; i < count; ++i) words[i] = to_le(std::bit_cast<std::uint32_t>(data[i]));
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(count * sizeof(std::uint32_t)));
  if (!out) throw IoError("write failed: " + file.string());
}

std::vector<float> read_f32_le(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open for reading: " + file.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(std::uint32_t) != 0) throw IoError("truncated float32 file: " + file.string());
  in.seekg(0);
  std::vector<std::uint32_t> words(bytes / sizeof(std::uint32_t));
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("read failed: " + file.string());
  std::vector<float> out(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) out[i] = std::bit_cast<float>(to_le(words[i]));
  return out;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  json tensors = json::array();
  std::vector<float> flat;
  flat.reserve(ckpt.params.count());
  for (const auto& e : ckpt.params.entries()) {
    tensors.push_back({{"name", e.name}, {"rows", e.value.rows()}, {"cols", e.value.cols()}, {"offset", flat.size()}});
    flat.insert(flat.end(), e.value.data(), e.value.data() + e.value.size());
  }
  json manifest = {{"format_version", "1"},
                   {"architecture", ckpt.architecture},
                   {"metadata", json::parse(ckpt.metadata_json)},
                   {"parameter_count", ckpt.params.count()},
                   {"tensors", tensors}};
  write_f32_le(dir / "params.bin", flat.data(), flat.size());
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("missing checkpoint manifest in " + dir.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format_version", "") != "1") throw IoError("unsupported checkpoint format version");
  const std::vector<float> flat = read_f32_le(dir / "params.bin");
  Checkpoint ckpt;
  ckpt.architecture = manifest.at("architecture").get<std::string>();
  ckpt.metadata_json = manifest.at("metadata").dump();
  for (const auto& t : manifest.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const auto offset = t.at("offset").get<std::size_t>();
    if (offset + static_cast<std::size_t>(rows * cols) > flat.size()) throw IoError("checkpoint tensor out of bounds");
    MatrixF m = Eigen::Map<const MatrixF>(flat.data() + offset, rows, cols);
    ckpt.params.add(t.at("name").get<std::string>(), std::move(m));
  }
  return ckpt;
}

}  // namespace apckit
