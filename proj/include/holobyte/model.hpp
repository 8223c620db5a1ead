#pragma once

// The HoloByte network. Byte chunks are encoded holographically into one
// vector each, a causal macro-transformer predicts the next chunk vector, and
// a causal micro-decoder unbinds that prediction into W byte distributions
// scored by scaled cosine similarity against the byte manifold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "holobyte/errors.hpp"
#include "holobyte/holo_ops.hpp"
#include "holobyte/manifold.hpp"
#include "holobyte/nn/adamw.hpp"
#include "holobyte/nn/graph.hpp"
#include "holobyte/nn/ops.hpp"
#include "holobyte/nn/parameter.hpp"
#include "holobyte/rotor.hpp"
#include "holobyte/tensor.hpp"

namespace holobyte {

struct ModelConfig {
  std::size_t dim = 768;          // D
  std::size_t chunk = 8;          // W
  std::size_t max_chunks = 1024;  // T_max
  std::size_t macro_layers = 11;
  std::size_t micro_layers = 1;
  std::size_t heads = 0;  // 0 selects max(1, D / 64)
  std::size_t ffn_mult = 4;
  double latent_weight = 0.5;  // lambda
  bool micro_ffn = true;
  bool cap_logit_scale = false;  // clamp tau <= 100 after each step
  bool stop_target_grad = false;  // treat E(Y) as a constant target

  std::size_t resolved_heads() const { return heads ? heads : std::max<std::size_t>(1, dim / 64); }

  void validate() const {
    require(dim >= 2 && dim % 2 == 0, ErrorKind::InvalidDimension, "model dim must be even and >= 2, got " + std::to_string(dim));
    require(dim % resolved_heads() == 0, ErrorKind::InvalidArgument,
            "model dim " + std::to_string(dim) + " not divisible by " + std::to_string(resolved_heads()) + " heads");
    require(chunk >= 1, ErrorKind::InvalidArgument, "chunk size must be >= 1");
    require(max_chunks >= 1, ErrorKind::InvalidArgument, "max_chunks must be >= 1");
    require(macro_layers >= 1 && micro_layers >= 1, ErrorKind::InvalidArgument, "layer counts must be >= 1");
    require(ffn_mult >= 1, ErrorKind::InvalidArgument, "ffn_mult must be >= 1");
    require(latent_weight >= 0.0, ErrorKind::InvalidArgument, "latent weight must be >= 0");
  }

  /// Stable textual form; the checkpoint digest hashes this.
  std::string canonical() const {
    std::ostringstream os;
    os << "dim=" << dim << ";chunk=" << chunk << ";max_chunks=" << max_chunks << ";macro_layers=" << macro_layers
       << ";micro_layers=" << micro_layers << ";heads=" << resolved_heads() << ";ffn_mult=" << ffn_mult
       << ";micro_ffn=" << micro_ffn;
    return os.str();
  }
};

/// Bytes shaped [batch, chunks, width].
struct ByteBatch {
  std::size_t batch = 0;
  std::size_t chunks = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bytes;

  ByteBatch() = default;
  ByteBatch(std::size_t b, std::size_t t, std::size_t w) : batch(b), chunks(t), width(w), bytes(b * t * w, 0) {}

  std::uint8_t& at(std::size_t b, std::size_t t, std::size_t i) { return bytes[(b * chunks + t) * width + i]; }
  std::uint8_t at(std::size_t b, std::size_t t, std::size_t i) const { return bytes[(b * chunks + t) * width + i]; }
  std::size_t size() const { return bytes.size(); }
};

struct LossBreakdown {
  double ce = 0.0;      // mean nats per byte
  double latent = 0.0;  // mean over all B*T*D elements of (Zhat - Z*)^2
  double lambda = 0.5;
  double total = 0.0;   // ce + lambda * latent

  static LossBreakdown make(double ce, double latent, double lambda) { return {ce, latent, lambda, ce + lambda * latent}; }
};

template <class Real>
struct ForwardArtifacts {
  Tensor<Real> z_in;      // [B,T,D]
  Tensor<Real> z_hat;     // [B,T,D]
  Tensor<Real> z_target;  // [B,T,D]
  Tensor<Real> unbound;   // U [B,T,W,D]
  Tensor<Real> combined;  // H [B,T,W,D]
  Tensor<Real> refined;   // V [B,T,W,D]
  Tensor<Real> logits;    // [B,T,W,256]
};

struct ForwardOptions {
  bool capture = true;          // copy intermediate tensors into ForwardArtifacts
  bool grad = true;             // record a backward tape
  bool perfect_macro = false;   // overwrite Zhat with Z* before unbinding
};

template <class Real>
struct ForwardPass {
  nn::Graph<Real> graph;
  nn::Var loss;
  LossBreakdown breakdown;
  ForwardArtifacts<Real> artifacts;
};

/// Logits the stepwise decoder scored while generating: chunk is the absolute
/// chunk index in the full (prompt + generated) stream, step the intra-chunk slot.
template <class Real>
struct GenerationStep {
  std::size_t chunk = 0;
  std::size_t step = 0;
  std::vector<Real> logits;
};

/// Per-chunk L2 norm of the analytic gradient of lambda * mean((Zhat - Z*)^2)
/// with respect to Zhat: 2 * lambda / numel * (zhat_t - z*_t).
template <class Real>
std::vector<double> latent_grad_norm(const Tensor<Real>& z_hat, const Tensor<Real>& z_target, double lambda) {
  require(z_hat.shape() == z_target.shape(), ErrorKind::Shape,
          "latent_grad_norm: shape mismatch " + shape_str(z_hat.shape()) + " vs " + shape_str(z_target.shape()));
  const double c = 2.0 * lambda / static_cast<double>(z_hat.numel());
  std::vector<double> norms(z_hat.rows());
  for (std::size_t r = 0; r < z_hat.rows(); ++r) {
    double sq = 0.0;
    auto a = z_hat.row(r);
    auto b = z_target.row(r);
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double gk = c * (static_cast<double>(a[k]) - static_cast<double>(b[k]));
      sq += gk * gk;
    }
    norms[r] = std::sqrt(sq);
  }
  return norms;
}

template <class Real>
class HoloByteModel {
 public:
  using Graph = nn::Graph<Real>;
  using Var = nn::Var;

  HoloByteModel(ModelConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)), floor_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
    cfg_.validate();
    basis_ = make_basis(cfg_.dim, cfg_.chunk);
    init_parameters(seed);
  }

  HoloByteModel(const HoloByteModel&) = delete;
  HoloByteModel& operator=(const HoloByteModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const RotationBasis& basis() const { return basis_; }
  nn::ParameterRegistry<Real>& parameters() { return params_; }
  const nn::ParameterRegistry<Real>& parameters() const { return params_; }

  ByteManifold<Real> manifold() const { return {params_.at("manifold").values}; }
  LogitScale<Real> logit_scale() const { return {params_.at("logit_scale").values[0]}; }

  // -- graph-level building blocks -----------------------------------------

  /// Normalized manifold rows as a tape node. Raw rows below the norm floor
  /// are a DegenerateRow error.
  Var unit_manifold(Graph& g) {
    auto& m = params_.at("manifold");
    for (std::size_t r = 0; r < kVocab; ++r)
      require(static_cast<double>(l2_norm<Real>(m.values.row(r))) >= kNormFloor, ErrorKind::DegenerateRow,
              "manifold row " + std::to_string(r) + " fell below the norm floor");
    return nn::normalize_rows(g, g.param(m), "manifold");
  }

  /// Zin [B,T,D] -> Zhat [B,T,D]; adds learned positions, then causal blocks.
  Var macro_forward(Graph& g, Var z_in) {
    const auto& shape = g.value(z_in).shape();
    require(shape.size() == 3 && shape[2] == cfg_.dim, ErrorKind::Shape, "macro_forward: expected [B,T,D], got " + shape_str(shape));
    const std::size_t t = shape[1];
    require(t >= 1 && t <= cfg_.max_chunks, ErrorKind::InvalidArgument,
            "macro_forward: " + std::to_string(t) + " chunks exceeds T_max " + std::to_string(cfg_.max_chunks));
    Var pos = nn::slice_rows(g, g.param(params_.at("macro.pos")), t);
    Var x = nn::add(g, z_in, pos);
    for (std::size_t l = 0; l < cfg_.macro_layers; ++l) x = block(g, x, "macro.blocks." + std::to_string(l), true, "macro");
    x = nn::layer_norm(g, x, g.param(params_.at("macro.ln_f.gain")), g.param(params_.at("macro.ln_f.bias")));
    return nn::linear(g, x, g.param(params_.at("macro.head.weight")), g.param(params_.at("macro.head.bias")));
  }

  /// H [B*T, W, D] -> V [B*T, W, D] under the static W x W causal mask.
  Var micro_forward(Graph& g, Var h) {
    const auto& shape = g.value(h).shape();
    require(shape.size() == 3 && shape[1] == cfg_.chunk && shape[2] == cfg_.dim, ErrorKind::Shape,
            "micro_forward: expected [N," + std::to_string(cfg_.chunk) + "," + std::to_string(cfg_.dim) + "], got " +
                shape_str(shape));
    Var x = h;
    for (std::size_t l = 0; l < cfg_.micro_layers; ++l)
      x = block(g, x, "micro.blocks." + std::to_string(l), cfg_.micro_ffn, "micro");
    return x;
  }

  /// P [B*T, W, D] from next-chunk bytes Y (last byte of each chunk unused).
  Var build_prefix(Graph& g, Var unit, const ByteBatch& y, std::size_t filled = static_cast<std::size_t>(-1)) {
    require(y.width == cfg_.chunk, ErrorKind::Shape, "build_prefix: chunk width mismatch");
    return ops::causal_prefix(g, unit, g.param(params_.at("e_start")), y.bytes, cfg_.chunk, filled);
  }

  /// [N, D] vectors -> [N, 256] scaled cosine logits.
  Var logits(Graph& g, Var v, Var unit) {
    Var vn = nn::normalize_rows(g, v, "micro output");
    return nn::scale_by_exp(g, nn::matmul_nt(g, vn, unit), g.param(params_.at("logit_scale")));
  }

  // -- full pass -----------------------------------------------------------

  ForwardPass<Real> forward(const ByteBatch& x, const ByteBatch& y, const ForwardOptions& opt = {}) {
    require(x.batch == y.batch && x.chunks == y.chunks && x.width == y.width, ErrorKind::Shape,
            "forward: X and Y must share a [B,T,W] shape");
    require(x.width == cfg_.chunk, ErrorKind::Shape,
            "forward: chunk width " + std::to_string(x.width) + " != model chunk " + std::to_string(cfg_.chunk));
    require(x.batch >= 1 && x.chunks >= 1, ErrorKind::Shape, "forward: empty batch");
    const std::size_t B = x.batch, T = x.chunks, W = cfg_.chunk, D = cfg_.dim;

    ForwardPass<Real> pass;
    Graph& g = pass.graph;
    g.set_grad_enabled(opt.grad);
    g.set_probe(probe_);

    Var unit = unit_manifold(g);
    Var z_in = nn::reshape(g, ops::holographic_encode(g, unit, x.bytes, W, basis_), {B, T, D});
    Var target_unit = cfg_.stop_target_grad ? g.constant(g.value(unit)) : unit;
    Var z_tgt = nn::reshape(g, ops::holographic_encode(g, target_unit, y.bytes, W, basis_), {B, T, D});

    Var z_hat = opt.perfect_macro ? z_tgt : macro_forward(g, z_in);
    check_finite(g.value(z_hat), "macro.output");

    Var u = ops::unbind_expand(g, nn::reshape(g, z_hat, {B * T, D}), W, basis_);
    Var p = build_prefix(g, unit, y);
    Var h = nn::add(g, u, p);
    Var v = micro_forward(g, h);
    Var lg = logits(g, nn::reshape(g, v, {B * T * W, D}), unit);
    check_finite(g.value(lg), "logits");

    Var ce = nn::cross_entropy(g, lg, y.bytes);
    Var latent = nn::mse(g, z_hat, z_tgt);
    const Real lambda = static_cast<Real>(cfg_.latent_weight);
    pass.loss = nn::add_weighted(g, ce, latent, lambda);
    const double ce_v = static_cast<double>(g.value(ce)[0]), latent_v = static_cast<double>(g.value(latent)[0]),
                 total_v = static_cast<double>(g.value(pass.loss)[0]);
    if (!std::isfinite(ce_v) || !std::isfinite(latent_v) || !std::isfinite(total_v)) {
      const char* id = !std::isfinite(ce_v) ? "loss.ce" : !std::isfinite(latent_v) ? "loss.latent" : "loss.total";
      std::ostringstream os;
      os << "non-finite loss in " << id << " (ce=" << ce_v << ", latent=" << latent_v << ", total=" << total_v << ")";
      throw NumericalFault(id, os.str());
    }
    pass.breakdown = LossBreakdown::make(static_cast<double>(g.value(ce)[0]), static_cast<double>(g.value(latent)[0]),
                                         cfg_.latent_weight);

    if (opt.capture) {
      auto& a = pass.artifacts;
      a.z_in = g.value(z_in);
      a.z_hat = g.value(z_hat);
      a.z_target = g.value(z_tgt);
      a.unbound = g.value(u);
      a.combined = g.value(h);
      a.refined = g.value(v);
      a.logits = g.value(lg);
      for (auto* t : {&a.unbound, &a.combined, &a.refined}) t->reshape({B, T, W, D});
      a.logits.reshape({B, T, W, kVocab});
    }
    return pass;
  }

  /// Loss and artifacts without recording a tape.
  std::pair<LossBreakdown, ForwardArtifacts<Real>> forward_loss(const ByteBatch& x, const ByteBatch& y,
                                                                bool perfect_macro = false) {
    ForwardOptions opt;
    opt.grad = false;
    opt.perfect_macro = perfect_macro;
    auto pass = forward(x, y, opt);
    return {pass.breakdown, std::move(pass.artifacts)};
  }

  /// Forward, backward, and gradient accumulation into the registry (grads are
  /// reset first). Returns the loss breakdown.
  LossBreakdown compute_gradients(const ByteBatch& x, const ByteBatch& y) {
    params_.zero_grad();
    ForwardOptions opt;
    opt.capture = false;
    auto pass = forward(x, y, opt);
    pass.graph.backward(pass.loss);
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (!params_[i].has_grad()) params_[i].grad = Tensor<Real>(params_[i].values.shape());
    return pass.breakdown;
  }

  /// Keeps manifold rows above the norm floor and applies the optional tau cap.
  void enforce_invariants() {
    enforce_norm_floor(params_.at("manifold").values, floor_rng_);
    if (cfg_.cap_logit_scale) {
      auto& s = params_.at("logit_scale").values[0];
      s = std::min(s, static_cast<Real>(std::log(100.0)));
    }
  }

  // -- tensor conveniences -------------------------------------------------

  Tensor<Real> run_macro(const Tensor<Real>& z_in) {
    Graph g;
    g.set_grad_enabled(false);
    g.set_probe(probe_);
    return g.value(macro_forward(g, g.constant(z_in)));
  }

  Tensor<Real> run_micro(const Tensor<Real>& h) {
    Graph g;
    g.set_grad_enabled(false);
    g.set_probe(probe_);
    return g.value(micro_forward(g, g.constant(h)));
  }

  Tensor<Real> run_prefix(const ByteBatch& y) {
    Graph g;
    g.set_grad_enabled(false);
    Var unit = unit_manifold(g);
    Tensor<Real> p = g.value(build_prefix(g, unit, y));
    p.reshape({y.batch, y.chunks, y.width, cfg_.dim});
    return p;
  }

  // -- generation ----------------------------------------------------------

  /// Appends `n_chunks` chunks after `prompt` (length a positive multiple of W).
  /// Each new chunk: the macro model predicts zhat from the most recent T_max
  /// chunks; then for i = 0..W-1 the micro-decoder runs on the W-slot input
  /// whose prefix slots after the current step are zero, and byte i is drawn
  /// from softmax(logits_i / temperature) (argmax at temperature 0).
  std::vector<std::uint8_t> generate(std::span<const std::uint8_t> prompt, std::size_t n_chunks, double temperature,
                                     std::uint64_t seed, std::vector<GenerationStep<Real>>* trace = nullptr) {
    const std::size_t W = cfg_.chunk, D = cfg_.dim;
    require(!prompt.empty(), ErrorKind::InvalidArgument, "generate: empty prompt");
    require(prompt.size() % W == 0, ErrorKind::InvalidArgument,
            "generate: prompt length " + std::to_string(prompt.size()) + " is not a multiple of chunk " + std::to_string(W));
    require(temperature >= 0.0 && std::isfinite(temperature), ErrorKind::InvalidArgument, "generate: temperature must be >= 0");

    std::vector<std::uint8_t> stream(prompt.begin(), prompt.end());
    std::vector<std::uint8_t> produced;
    produced.reserve(n_chunks * W);
    std::mt19937_64 rng(seed);

    for (std::size_t c = 0; c < n_chunks; ++c) {
      const std::size_t total_chunks = stream.size() / W;
      const std::size_t window = std::min(total_chunks, cfg_.max_chunks);
      const std::size_t first = total_chunks - window;
      std::span<const std::uint8_t> ctx(stream.data() + first * W, window * W);

      Graph g;
      g.set_grad_enabled(false);
      Var unit = unit_manifold(g);
      Var z_in = nn::reshape(g, ops::holographic_encode(g, unit, ctx, W, basis_), {1, window, D});
      const Tensor<Real>& z_all = g.value(macro_forward(g, z_in));
      Tensor<Real> z_last({1, D}, std::vector<Real>(z_all.vec().end() - static_cast<std::ptrdiff_t>(D), z_all.vec().end()));
      Var u = ops::unbind_expand(g, g.constant(std::move(z_last)), W, basis_);

      std::vector<std::uint8_t> emitted(W, 0);
      for (std::size_t i = 0; i < W; ++i) {
        Var p = ops::causal_prefix(g, unit, g.param(params_.at("e_start")), emitted, W, i + 1);
        Var v = micro_forward(g, nn::add(g, u, p));
        const Tensor<Real>& lg = g.value(logits(g, nn::reshape(g, v, {W, D}), unit));
        auto row = lg.row(i);
        if (trace) trace->push_back({total_chunks, i, std::vector<Real>(row.begin(), row.end())});
        emitted[i] = sample(row, temperature, rng);
      }
      stream.insert(stream.end(), emitted.begin(), emitted.end());
      produced.insert(produced.end(), emitted.begin(), emitted.end());
    }
    return produced;
  }

  void set_probe(nn::AttentionProbe* probe) { probe_ = probe; }

 private:
  static bool is_exempt(const std::string& id) {
    auto ends_with = [&](const std::string& s) { return id.size() >= s.size() && id.compare(id.size() - s.size(), s.size(), s) == 0; };
    return ends_with(".bias") || ends_with(".gain") || id == "logit_scale" || id == "macro.pos" || id == "e_start";
  }

  void add_param(const std::string& id, Tensor<Real> t) { params_.add(id, std::move(t), is_exempt(id)); }

  template <class Rng>
  Tensor<Real> gaussian(Shape shape, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor<Real> t(std::move(shape));
    for (auto& v : t.vec()) v = static_cast<Real>(dist(rng));
    return t;
  }

  void add_block_params(const std::string& prefix, bool ffn, std::mt19937_64& rng) {
    const std::size_t D = cfg_.dim, F = cfg_.dim * cfg_.ffn_mult;
    constexpr double kStd = 0.02;
    add_param(prefix + ".ln1.gain", Tensor<Real>({D}, Real{1}));
    add_param(prefix + ".ln1.bias", Tensor<Real>({D}));
    for (const char* name : {".attn.q", ".attn.k", ".attn.v", ".attn.out"}) {
      add_param(prefix + name + ".weight", gaussian({D, D}, kStd, rng));
      add_param(prefix + name + ".bias", Tensor<Real>({D}));
    }
    if (ffn) {
      add_param(prefix + ".ln2.gain", Tensor<Real>({D}, Real{1}));
      add_param(prefix + ".ln2.bias", Tensor<Real>({D}));
      add_param(prefix + ".ffn.up.weight", gaussian({D, F}, kStd, rng));
      add_param(prefix + ".ffn.up.bias", Tensor<Real>({F}));
      add_param(prefix + ".ffn.down.weight", gaussian({F, D}, kStd, rng));
      add_param(prefix + ".ffn.down.bias", Tensor<Real>({D}));
    }
  }

  void init_parameters(std::uint64_t seed) {
    const std::size_t D = cfg_.dim;
    add_param("manifold", init_manifold<Real>(D, seed).rows);
    add_param("logit_scale", Tensor<Real>({1}, static_cast<Real>(kInitialLogitScale)));
    std::mt19937_64 rng(seed + 1);
    add_param("e_start", gaussian({D}, 1.0 / std::sqrt(static_cast<double>(D)), rng));
    add_param("macro.pos", gaussian({cfg_.max_chunks, D}, 0.02, rng));
    for (std::size_t l = 0; l < cfg_.macro_layers; ++l) add_block_params("macro.blocks." + std::to_string(l), true, rng);
    add_param("macro.ln_f.gain", Tensor<Real>({D}, Real{1}));
    add_param("macro.ln_f.bias", Tensor<Real>({D}));
    add_param("macro.head.weight", gaussian({D, D}, 0.02, rng));
    add_param("macro.head.bias", Tensor<Real>({D}));
    for (std::size_t l = 0; l < cfg_.micro_layers; ++l)
      add_block_params("micro.blocks." + std::to_string(l), cfg_.micro_ffn, rng);
  }

  /// Pre-norm residual block: x + Attn(LN(x)), then x + FFN(LN(x)) when enabled.
  Var block(Graph& g, Var x, const std::string& prefix, bool ffn, std::string_view site) {
    auto P = [&](const std::string& name) { return g.param(params_.at(prefix + name)); };
    Var h = nn::layer_norm(g, x, P(".ln1.gain"), P(".ln1.bias"));
    Var q = nn::linear(g, h, P(".attn.q.weight"), P(".attn.q.bias"));
    Var k = nn::linear(g, h, P(".attn.k.weight"), P(".attn.k.bias"));
    Var v = nn::linear(g, h, P(".attn.v.weight"), P(".attn.v.bias"));
    Var a = nn::causal_attention(g, q, k, v, cfg_.resolved_heads(), site);
    x = nn::add(g, x, nn::linear(g, a, P(".attn.out.weight"), P(".attn.out.bias")));
    if (ffn) {
      Var h2 = nn::layer_norm(g, x, P(".ln2.gain"), P(".ln2.bias"));
      Var up = nn::gelu(g, nn::linear(g, h2, P(".ffn.up.weight"), P(".ffn.up.bias")));
      x = nn::add(g, x, nn::linear(g, up, P(".ffn.down.weight"), P(".ffn.down.bias")));
    }
    return x;
  }

  static void check_finite(const Tensor<Real>& t, const char* id) {
    if (!t.all_finite()) throw NumericalFault(id, std::string("non-finite values in ") + id);
  }

  static std::uint8_t sample(std::span<const Real> logits, double temperature, std::mt19937_64& rng) {
    if (temperature == 0.0) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < logits.size(); ++k)
        if (logits[k] > logits[best]) best = k;
      return static_cast<std::uint8_t>(best);
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (Real l : logits) mx = std::max(mx, static_cast<double>(l) / temperature);
    std::vector<double> w(logits.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) sum += (w[k] = std::exp(static_cast<double>(logits[k]) / temperature - mx));
    double r = std::uniform_real_distribution<double>(0.0, sum)(rng);
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (r < w[k]) return static_cast<std::uint8_t>(k);
      r -= w[k];
    }
    return static_cast<std::uint8_t>(w.size() - 1);
  }

  ModelConfig cfg_;
  RotationBasis basis_;
  nn::ParameterRegistry<Real> params_;
  std::mt19937_64 floor_rng_;
  nn::AttentionProbe* probe_ = nullptr;
};

}  // namespace holobyte
