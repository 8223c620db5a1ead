#pragma once

// Binary checkpoint, little-endian throughout:
//
//   magic      8 bytes  "HOLOBYTE"
//   version    u32      = 1
//   digest     u64      FNV-1a 64 of ModelConfig::canonical()
//   config     u32 length + bytes   (serialize_model_config)
//   step       u64      optimizer step count
//   records    u32 count, then per record:
//                u32 id length, id bytes, u32 rank, u64 dims[rank],
//                float32 values[prod(dims)]
//   checksum   u64      FNV-1a 64 over every preceding byte
//
// Parameter records use the parameter id; optimizer moments use
// "adam.m/<id>" and "adam.v/<id>".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "holobyte/errors.hpp"
#include "holobyte/model.hpp"
#include "holobyte/nn/adamw.hpp"

namespace holobyte {

inline constexpr char kCheckpointMagic[8] = {'H', 'O', 'L', 'O', 'B', 'Y', 'T', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t config_digest(const ModelConfig& cfg) { return fnv1a64(cfg.canonical()); }

/// Every ModelConfig field as `key=value;` pairs.
inline std::string serialize_model_config(const ModelConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "dim=" << c.dim << ";chunk=" << c.chunk << ";max_chunks=" << c.max_chunks << ";macro_layers=" << c.macro_layers
     << ";micro_layers=" << c.micro_layers << ";heads=" << c.resolved_heads() << ";ffn_mult=" << c.ffn_mult
     << ";latent_weight=" << c.latent_weight << ";micro_ffn=" << c.micro_ffn << ";cap_logit_scale=" << c.cap_logit_scale
     << ";stop_target_grad=" << c.stop_target_grad << ";";
  return os.str();
}

inline ModelConfig parse_model_config(std::string_view text) {
  ModelConfig c;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto semi = text.find(';', pos);
    const auto item = text.substr(pos, semi == std::string_view::npos ? std::string_view::npos : semi - pos);
    pos = semi == std::string_view::npos ? text.size() : semi + 1;
    if (item.empty()) continue;
    const auto eq = item.find('=');
    require(eq != std::string_view::npos, ErrorKind::Checksum, "checkpoint config is malformed");
    const std::string key(item.substr(0, eq));
    const std::string val(item.substr(eq + 1));
    auto u = [&] { return static_cast<std::size_t>(std::stoull(val)); };
    if (key == "dim") c.dim = u();
    else if (key == "chunk") c.chunk = u();
    else if (key == "max_chunks") c.max_chunks = u();
    else if (key == "macro_layers") c.macro_layers = u();
    else if (key == "micro_layers") c.micro_layers = u();
    else if (key == "heads") c.heads = u();
    else if (key == "ffn_mult") c.ffn_mult = u();
    else if (key == "latent_weight") c.latent_weight = std::stod(val);
    else if (key == "micro_ffn") c.micro_ffn = val == "1";
    else if (key == "cap_logit_scale") c.cap_logit_scale = val == "1";
    else if (key == "stop_target_grad") c.stop_target_grad = val == "1";
  }
  return c;
}

namespace detail {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void str(std::string_view s) {
    uint<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  template <class Real>
  void tensor(const std::string& id, const Tensor<Real>& t) {
    str(id);
    uint<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) uint<std::uint64_t>(d);
    for (Real v : t.vec()) uint<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  void need(std::size_t n) const {
    require(pos_ + n <= data_.size(), ErrorKind::Checksum, "checkpoint is truncated");
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <class U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string str() {
    const auto n = uint<std::uint32_t>();
    return std::string(bytes(n));
  }
  Tensor<float> tensor(std::string& id) {
    id = str();
    const auto rank = uint<std::uint32_t>();
    require(rank <= 8, ErrorKind::Checksum, "checkpoint record '" + id + "' has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(uint<std::uint64_t>());
    const std::size_t n = shape_numel(shape);
    need(n * 4);
    std::vector<float> v(n);
    for (auto& x : v) x = std::bit_cast<float>(uint<std::uint32_t>());
    return Tensor<float>(std::move(shape), std::move(v));
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open '" + path.string() + "' for reading");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Verifies framing and checksum; returns a reader positioned after the magic.
inline std::string_view verified_payload(const std::string& blob, const std::filesystem::path& path) {
  require(blob.size() >= sizeof(kCheckpointMagic) + 8 && std::memcmp(blob.data(), kCheckpointMagic, 8) == 0,
          ErrorKind::Checksum, "'" + path.string() + "' is not a checkpoint (bad magic or truncated)");
  const std::string_view body(blob.data(), blob.size() - 8);
  Reader tail(std::string_view(blob).substr(blob.size() - 8));
  require(tail.uint<std::uint64_t>() == fnv1a64(body), ErrorKind::Checksum,
          "checksum mismatch in '" + path.string() + "' (file corrupt or truncated)");
  return body.substr(8);
}

}  // namespace detail

struct CheckpointHeader {
  std::uint32_t version = 0;
  std::uint64_t digest = 0;
  ModelConfig config;
  std::uint64_t step = 0;
};

/// Reads only the header; useful to build a model before loading weights.
inline CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  const std::string blob = detail::read_file(path);
  detail::Reader r(detail::verified_payload(blob, path));
  CheckpointHeader h;
  h.version = r.uint<std::uint32_t>();
  require(h.version == kCheckpointVersion, ErrorKind::ConfigMismatch,
          "checkpoint version " + std::to_string(h.version) + " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  h.digest = r.uint<std::uint64_t>();
  h.config = parse_model_config(r.str());
  h.step = r.uint<std::uint64_t>();
  return h;
}

template <class Real>
void save_checkpoint(const std::filesystem::path& path, const HoloByteModel<Real>& model,
                     const nn::OptimizerState<Real>& opt) {
  detail::Writer w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.uint<std::uint32_t>(kCheckpointVersion);
  w.uint<std::uint64_t>(config_digest(model.config()));
  w.str(serialize_model_config(model.config()));
  w.uint<std::uint64_t>(opt.step);

  const auto& params = model.parameters();
  std::uint32_t count = 0;
  for (std::size_t i = 0; i < params.size(); ++i) count += 1 + (opt.moments.count(params[i].id) ? 2 : 0);
  w.uint<std::uint32_t>(count);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    w.tensor(p.id, p.values);
    if (auto it = opt.moments.find(p.id); it != opt.moments.end()) {
      w.tensor("adam.m/" + p.id, it->second.m);
      w.tensor("adam.v/" + p.id, it->second.v);
    }
  }
  w.uint<std::uint64_t>(fnv1a64(w.buffer()));

  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open '" + tmp + "' for writing");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    require(static_cast<bool>(out.flush()), ErrorKind::Io, "write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorKind::Io, "cannot move checkpoint into '" + path.string() + "': " + ec.message());
}

/// Restores parameters, optimizer moments, and step. The file is fully
/// validated before anything in `model` or `opt` changes. Returns the step.
template <class Real>
std::uint64_t load_checkpoint(const std::filesystem::path& path, HoloByteModel<Real>& model, nn::OptimizerState<Real>& opt) {
  const std::string blob = detail::read_file(path);
  detail::Reader r(detail::verified_payload(blob, path));
  const auto version = r.uint<std::uint32_t>();
  require(version == kCheckpointVersion, ErrorKind::ConfigMismatch,
          "checkpoint version " + std::to_string(version) + " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  const auto digest = r.uint<std::uint64_t>();
  const ModelConfig stored = parse_model_config(r.str());
  if (digest != config_digest(model.config())) {
    std::ostringstream os;
    os << "checkpoint config mismatch: checkpoint dim=" << stored.dim << " chunk=" << stored.chunk
       << " vs model dim=" << model.config().dim << " chunk=" << model.config().chunk << " (checkpoint "
       << stored.canonical() << "; model " << model.config().canonical() << ")";
    fail(ErrorKind::ConfigMismatch, os.str());
  }
  const std::uint64_t step = r.uint<std::uint64_t>();
  const auto count = r.uint<std::uint32_t>();
  std::map<std::string, Tensor<float>> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string id;
    auto t = r.tensor(id);
    records.emplace(std::move(id), std::move(t));
  }
  require(r.done(), ErrorKind::Checksum, "trailing bytes in '" + path.string() + "'");

  auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    auto it = records.find(p.id);
    require(it != records.end(), ErrorKind::ConfigMismatch, "checkpoint lacks parameter '" + p.id + "'");
    require(it->second.shape() == p.values.shape(), ErrorKind::ConfigMismatch,
            "parameter '" + p.id + "' has shape " + shape_str(it->second.shape()) + " in checkpoint, model expects " +
                shape_str(p.values.shape()));
    for (const char* kind : {"adam.m/", "adam.v/"})
      if (auto mt = records.find(kind + p.id); mt != records.end())
        require(mt->second.shape() == p.values.shape(), ErrorKind::ConfigMismatch,
                "optimizer moment '" + mt->first + "' does not match its parameter shape");
  }

  nn::OptimizerState<Real> restored = opt;
  restored.moments.clear();
  restored.step = step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    p.values = records.at(p.id).template cast<Real>();
    auto m = records.find("adam.m/" + p.id);
    auto v = records.find("adam.v/" + p.id);
    if (m != records.end() && v != records.end())
      restored.moments[p.id] = {m->second.template cast<Real>(), v->second.template cast<Real>()};
  }
  opt = std::move(restored);
  return step;
}

}  // namespace holobyte
