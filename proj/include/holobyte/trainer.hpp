#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "holobyte/checkpoint.hpp"
#include "holobyte/errors.hpp"
#include "holobyte/model.hpp"
#include "holobyte/nn/adamw.hpp"

namespace holobyte {

struct TrainConfig {
  std::uint64_t seed = 42;
  std::size_t batch = 4;
  std::size_t seq_chunks = 1024;  // T
  double lr = 6e-4;
  double weight_decay = 0.1;
  double clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  std::size_t max_steps = 20000;
  std::size_t eval_interval = 500;
  std::size_t eval_batches = 8;
  std::string train_corpus;
  std::string val_corpus;  // empty: hold out the final 10% of train_corpus
  std::string checkpoint_dir;
  std::string log_path;
  bool record_wall_time = false;  // off keeps metric logs bitwise reproducible
  ModelConfig model;

  nn::AdamWConfig optimizer() const { return {lr, beta1, beta2, eps, weight_decay, clip}; }

  void validate() const {
    model.validate();
    require(batch >= 1 && seq_chunks >= 1 && max_steps >= 1 && eval_interval >= 1 && eval_batches >= 1,
            ErrorKind::InvalidArgument, "batch, seq_chunks, max_steps, eval_interval, eval_batches must be positive");
    require(lr > 0 && weight_decay >= 0 && clip > 0 && eps > 0, ErrorKind::InvalidArgument,
            "lr, clip, eps must be positive and weight_decay non-negative");
    require(seq_chunks <= model.max_chunks, ErrorKind::InvalidArgument,
            "seq_chunks " + std::to_string(seq_chunks) + " exceeds max_chunks " + std::to_string(model.max_chunks));
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T out{};
  is >> out;
  require(!is.fail() && is.eof(), ErrorKind::InvalidArgument, "malformed value '" + value + "' for key '" + key + "'");
  if constexpr (std::is_unsigned_v<T>)
    require(value.find('-') == std::string::npos, ErrorKind::InvalidArgument, "key '" + key + "' must be non-negative");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "on" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "off" || value == "no") return false;
  fail(ErrorKind::InvalidArgument, "malformed boolean '" + value + "' for key '" + key + "'");
}

}  // namespace detail

/// Applies one `key=value` setting. Unknown keys and malformed values raise
/// InvalidArgument. Returns false only for blank/comment input.
inline bool apply_setting(TrainConfig& cfg, const std::string& line) {
  std::string s = line;
  if (const auto hash = s.find('#'); hash != std::string::npos) s.resize(hash);
  s = detail::trim(s);
  if (s.empty()) return false;
  const auto eq = s.find('=');
  require(eq != std::string::npos, ErrorKind::InvalidArgument, "expected key=value, got '" + s + "'");
  const std::string key = detail::trim(s.substr(0, eq));
  const std::string val = detail::trim(s.substr(eq + 1));
  using detail::parse_bool;
  using detail::parse_number;
  auto sz = [&] { return parse_number<std::size_t>(key, val); };
  auto dbl = [&] { return parse_number<double>(key, val); };
  auto& m = cfg.model;
  if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, val);
  else if (key == "batch") cfg.batch = sz();
  else if (key == "seq_chunks" || key == "T") cfg.seq_chunks = sz();
  else if (key == "lr") cfg.lr = dbl();
  else if (key == "weight_decay") cfg.weight_decay = dbl();
  else if (key == "clip") cfg.clip = dbl();
  else if (key == "beta1") cfg.beta1 = dbl();
  else if (key == "beta2") cfg.beta2 = dbl();
  else if (key == "eps") cfg.eps = dbl();
  else if (key == "max_steps") cfg.max_steps = sz();
  else if (key == "eval_interval") cfg.eval_interval = sz();
  else if (key == "eval_batches") cfg.eval_batches = sz();
  else if (key == "train_corpus") cfg.train_corpus = val;
  else if (key == "val_corpus") cfg.val_corpus = val;
  else if (key == "checkpoint_dir") cfg.checkpoint_dir = val;
  else if (key == "log_path") cfg.log_path = val;
  else if (key == "record_wall_time") cfg.record_wall_time = parse_bool(key, val);
  else if (key == "dim" || key == "D") m.dim = sz();
  else if (key == "chunk" || key == "W") m.chunk = sz();
  else if (key == "max_chunks") m.max_chunks = sz();
  else if (key == "macro_layers") m.macro_layers = sz();
  else if (key == "micro_layers") m.micro_layers = sz();
  else if (key == "heads") m.heads = sz();
  else if (key == "ffn_mult") m.ffn_mult = sz();
  else if (key == "latent_weight" || key == "lambda") m.latent_weight = dbl();
  else if (key == "micro_ffn") m.micro_ffn = parse_bool(key, val);
  else if (key == "cap_logit_scale") m.cap_logit_scale = parse_bool(key, val);
  else if (key == "stop_target_grad") m.stop_target_grad = parse_bool(key, val);
  else fail(ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
  return true;
}

/// Parses a key=value config (one per line, '#' comments), then applies
/// `overrides` in order. When max_chunks is never set it follows seq_chunks.
inline TrainConfig parse_train_config(std::istream& in, const std::vector<std::string>& overrides = {}) {
  TrainConfig cfg;
  bool max_chunks_set = false;
  auto apply = [&](const std::string& line) {
    if (apply_setting(cfg, line) && detail::trim(line.substr(0, line.find('='))) == "max_chunks") max_chunks_set = true;
  };
  for (std::string line; std::getline(in, line);) apply(line);
  for (const auto& o : overrides) apply(o);
  if (!max_chunks_set) cfg.model.max_chunks = cfg.seq_chunks;
  return cfg;
}

inline TrainConfig load_train_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open config '" + path.string() + "'");
  return parse_train_config(in, overrides);
}

inline std::vector<std::uint8_t> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open corpus '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// First 90% of the stream for training, the final 10% for validation.
inline std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> split_corpus(const std::vector<std::uint8_t>& bytes) {
  const std::size_t cut = bytes.size() - bytes.size() / 10;
  return {std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut)),
          std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(cut), bytes.end())};
}

/// Random-offset sampler over a corpus partitioned into floor(N / W) chunks.
/// Each sample is T+1 consecutive chunks starting at a uniformly drawn chunk;
/// X holds chunks 0..T-1 and Y chunks 1..T.
class ChunkStream {
 public:
  ChunkStream(std::vector<std::uint8_t> corpus, std::size_t seq_chunks, std::size_t chunk, std::size_t batch,
              std::uint64_t seed)
      : corpus_(std::move(corpus)), T_(seq_chunks), W_(chunk), B_(batch), rng_(seed) {
    require(T_ >= 1 && W_ >= 1 && B_ >= 1, ErrorKind::InvalidArgument, "chunk stream: T, W, B must be positive");
    require(corpus_.size() >= (T_ + 1) * W_, ErrorKind::InvalidArgument,
            "corpus too short: " + std::to_string(corpus_.size()) + " bytes, need at least (T+1)*W = " +
                std::to_string((T_ + 1) * W_));
  }

  std::size_t chunk_count() const { return corpus_.size() / W_; }
  /// Number of distinct sample start positions.
  std::size_t window_count() const { return chunk_count() - T_; }

  std::pair<ByteBatch, ByteBatch> next() {
    ByteBatch x(B_, T_, W_), y(B_, T_, W_);
    std::uniform_int_distribution<std::size_t> start_dist(0, window_count() - 1);
    for (std::size_t b = 0; b < B_; ++b) fill_window(start_dist(rng_), b, x, y);
    return {std::move(x), std::move(y)};
  }

  /// Sample starting at an explicit chunk index.
  void fill_window(std::size_t start_chunk, std::size_t b, ByteBatch& x, ByteBatch& y) const {
    const std::size_t span = T_ * W_;
    const auto* base = corpus_.data() + start_chunk * W_;
    std::copy_n(base, span, x.bytes.begin() + static_cast<std::ptrdiff_t>(b * span));
    std::copy_n(base + W_, span, y.bytes.begin() + static_cast<std::ptrdiff_t>(b * span));
  }

 private:
  std::vector<std::uint8_t> corpus_;
  std::size_t T_, W_, B_;
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// The native model's cross-entropy is already nats per byte.
inline double nats_per_byte(double val_ce) {
  require(val_ce >= 0.0, ErrorKind::InvalidArgument, "nats_per_byte: loss must be >= 0");
  return val_ce;
}

/// Converts a per-token loss to per-byte given mean bytes per token `mu`.
inline double tokens_to_bytes_density(double token_loss, double mu) {
  require(mu > 0.0, ErrorKind::InvalidArgument, "tokens_to_bytes_density: bytes per token must be > 0");
  require(token_loss >= 0.0, ErrorKind::InvalidArgument, "tokens_to_bytes_density: loss must be >= 0");
  return token_loss / mu;
}

struct MetricRow {
  std::size_t step = 0;
  double train_total = 0, train_ce = 0, train_latent = 0;
  double val_total = 0, val_ce = 0, val_latent = 0;
  double nats_per_byte = 0;
  double wall_seconds = 0;
};

inline constexpr const char* kMetricHeader =
    "step,train_total,train_ce,train_latent,val_total,val_ce,val_latent,nats_per_byte,wall_seconds";

inline std::string format_metric_row(const MetricRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f", r.step, r.train_total, r.train_ce,
                r.train_latent, r.val_total, r.val_ce, r.val_latent, r.nats_per_byte, r.wall_seconds);
  return buf;
}

/// Mean loss over `batches` batches drawn from a fixed-seed stream.
template <class Real>
LossBreakdown evaluate(HoloByteModel<Real>& model, const std::vector<std::uint8_t>& corpus, std::size_t seq_chunks,
                       std::size_t batch, std::size_t batches, std::uint64_t seed) {
  ChunkStream stream(corpus, seq_chunks, model.config().chunk, batch, seed);
  double ce = 0.0, latent = 0.0;
  for (std::size_t i = 0; i < batches; ++i) {
    auto [x, y] = stream.next();
    const auto lb = model.forward_loss(x, y).first;
    ce += lb.ce;
    latent += lb.latent;
  }
  const double n = static_cast<double>(batches);
  return LossBreakdown::make(ce / n, latent / n, model.config().latent_weight);
}

/// Sweeps the corpus in consecutive windows of T+1 chunks (stride T), at most
/// `max_batches` batches (0 = all). Means are weighted by predicted bytes.
template <class Real>
LossBreakdown evaluate_sequential(HoloByteModel<Real>& model, const std::vector<std::uint8_t>& corpus,
                                  std::size_t seq_chunks, std::size_t batch, std::size_t max_batches = 0) {
  const std::size_t W = model.config().chunk;
  ChunkStream layout(corpus, seq_chunks, W, 1, 0);
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s < layout.window_count(); s += seq_chunks) starts.push_back(s);
  double ce = 0.0, latent = 0.0, weight = 0.0;
  std::size_t done = 0;
  for (std::size_t i = 0; i < starts.size(); i += batch) {
    if (max_batches && done == max_batches) break;
    const std::size_t bsz = std::min(batch, starts.size() - i);
    ByteBatch x(bsz, seq_chunks, W), y(bsz, seq_chunks, W);
    for (std::size_t b = 0; b < bsz; ++b) layout.fill_window(starts[i + b], b, x, y);
    const auto lb = model.forward_loss(x, y).first;
    ce += lb.ce * static_cast<double>(bsz);
    latent += lb.latent * static_cast<double>(bsz);
    weight += static_cast<double>(bsz);
    ++done;
  }
  return LossBreakdown::make(ce / weight, latent / weight, model.config().latent_weight);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

template <class Real>
struct TrainResult {
  std::vector<MetricRow> rows;            // one per evaluation
  std::vector<LossBreakdown> step_losses;  // training loss at every step 0..max_steps
  MetricRow final_row;
  double best_val_total = std::numeric_limits<double>::infinity();
};

/// Runs max_steps updates of forward -> backward -> AdamW. At step 0, every
/// eval_interval steps, and at max_steps the model is evaluated on held-out
/// batches; each evaluation appends a MetricRow to the log and refreshes the
/// latest/best checkpoints. `on_row` (optional) observes each row.
template <class Real>
TrainResult<Real> train(const TrainConfig& cfg, HoloByteModel<Real>& model,
                        const std::vector<std::uint8_t>& train_bytes, const std::vector<std::uint8_t>& val_bytes,
                        const std::function<void(const MetricRow&)>& on_row = {}) {
  cfg.validate();
  require(model.config().canonical() == cfg.model.canonical(), ErrorKind::ConfigMismatch,
          "train: model config differs from TrainConfig.model");
  const std::size_t W = model.config().chunk;
  ChunkStream stream(train_bytes, cfg.seq_chunks, W, cfg.batch, cfg.seed);
  const std::uint64_t eval_seed = cfg.seed ^ 0x5eedULL;
  nn::OptimizerState<Real> opt;
  opt.config = cfg.optimizer();

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    const std::filesystem::path lp(cfg.log_path);
    if (lp.has_parent_path()) std::filesystem::create_directories(lp.parent_path());
    log.open(lp, std::ios::trunc);
    require(static_cast<bool>(log), ErrorKind::Io, "cannot open metric log '" + cfg.log_path + "'");
    log << kMetricHeader << '\n';
  }

  TrainResult<Real> result;
  result.step_losses.reserve(cfg.max_steps + 1);
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t step = 0;; ++step) {
    auto [x, y] = stream.next();
    LossBreakdown lb;
    try {
      lb = step < cfg.max_steps ? model.compute_gradients(x, y) : model.forward_loss(x, y).first;
    } catch (const NumericalFault& e) {
      std::ostringstream os;
      os << "step " << step << ": " << e.what();
      if (!result.step_losses.empty()) {
        const auto& prev = result.step_losses.back();
        os << "; previous step losses ce=" << prev.ce << " latent=" << prev.latent << " total=" << prev.total;
      }
      throw NumericalFault(e.tensor_id(), os.str());
    }
    result.step_losses.push_back(lb);

    if (step % cfg.eval_interval == 0 || step == cfg.max_steps) {
      const auto val = evaluate(model, val_bytes, cfg.seq_chunks, cfg.batch, cfg.eval_batches, eval_seed);
      MetricRow row;
      row.step = step;
      row.train_total = lb.total;
      row.train_ce = lb.ce;
      row.train_latent = lb.latent;
      row.val_total = val.total;
      row.val_ce = val.ce;
      row.val_latent = val.latent;
      row.nats_per_byte = nats_per_byte(val.ce);
      if (cfg.record_wall_time)
        row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.rows.push_back(row);
      if (log.is_open()) {
        log << format_metric_row(row) << '\n';
        log.flush();
        require(static_cast<bool>(log), ErrorKind::Io, "write failed for metric log '" + cfg.log_path + "'");
      }
      if (!cfg.checkpoint_dir.empty()) {
        const std::filesystem::path dir(cfg.checkpoint_dir);
        save_checkpoint(dir / "latest.ckpt", model, opt);
        if (val.total < result.best_val_total) save_checkpoint(dir / "best.ckpt", model, opt);
      }
      result.best_val_total = std::min(result.best_val_total, val.total);
      if (on_row) on_row(row);
    }
    if (step == cfg.max_steps) break;

    nn::adamw_step(model.parameters(), opt);
    model.enforce_invariants();
  }
  result.final_row = result.rows.back();
  return result;
}

/// Left-pads `prompt` with spaces to a multiple of `chunk`. Returns the padded
/// bytes and the pad length.
inline std::pair<std::vector<std::uint8_t>, std::size_t> pad_prompt(std::span<const std::uint8_t> prompt, std::size_t chunk) {
  const std::size_t pad = (chunk - prompt.size() % chunk) % chunk;
  std::vector<std::uint8_t> out(pad, static_cast<std::uint8_t>(' '));
  out.insert(out.end(), prompt.begin(), prompt.end());
  return {std::move(out), pad};
}

}  // namespace holobyte
