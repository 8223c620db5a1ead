#pragma once

// Holographic chunk encoding, unbinding, nearest-neighbour recovery, and the
// Monte-Carlo capacity lab.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "holobyte/errors.hpp"
#include "holobyte/manifold.hpp"
#include "holobyte/parallel.hpp"
#include "holobyte/rotor.hpp"
#include "holobyte/tensor.hpp"

namespace holobyte {

using ByteChunk = std::vector<std::uint8_t>;

enum class EmbeddingKind { Input, Predicted, Target };

template <class Real>
struct ChunkEmbedding {
  std::vector<Real> z;
  EmbeddingKind kind = EmbeddingKind::Input;
};

/// z = (1/sqrt(W)) * sum_i R(m~[c[i]], i), with `unit_manifold` the [256, D]
/// matrix of normalized rows.
template <class Real>
ChunkEmbedding<Real> encode_chunk(std::span<const std::uint8_t> chunk, const Tensor<Real>& unit_manifold,
                                  const RotationBasis& basis, std::size_t chunk_size,
                                  EmbeddingKind kind = EmbeddingKind::Input) {
  require(chunk.size() == chunk_size, ErrorKind::Shape,
          "encode_chunk: chunk has " + std::to_string(chunk.size()) + " bytes, expected " +
              std::to_string(chunk_size));
  require(basis.max_pos >= chunk_size, ErrorKind::InvalidArgument,
          "encode_chunk: basis max_pos " + std::to_string(basis.max_pos) + " < chunk size " +
              std::to_string(chunk_size));
  require(basis.dim == unit_manifold.cols(), ErrorKind::Shape, "encode_chunk: basis/manifold dim mismatch");
  const std::size_t d = basis.dim;
  ChunkEmbedding<Real> out{std::vector<Real>(d, Real{0}), kind};
  std::vector<Real> rotated(d);
  for (std::size_t i = 0; i < chunk_size; ++i) {
    rotate_into<Real>(unit_manifold.row(chunk[i]), static_cast<long>(i), basis, rotated);
    for (std::size_t k = 0; k < d; ++k) out.z[k] += rotated[k];
  }
  const Real inv = Real{1} / std::sqrt(static_cast<Real>(chunk_size));
  for (auto& v : out.z) v *= inv;
  return out;
}

template <class Real>
ChunkEmbedding<Real> encode_chunk(std::span<const std::uint8_t> chunk, const ByteManifold<Real>& m,
                                  const RotationBasis& basis, std::size_t chunk_size) {
  return encode_chunk(chunk, normalized_rows(m), basis, chunk_size);
}

/// R^{-1}(z, i).
template <class Real>
std::vector<Real> unbind(std::span<const Real> z, std::size_t pos, const RotationBasis& basis,
                         std::size_t chunk_size) {
  require(pos < chunk_size, ErrorKind::Index,
          "unbind: position " + std::to_string(pos) + " outside chunk of size " + std::to_string(chunk_size));
  return rotate<Real>(z, -static_cast<long>(pos), basis);
}

/// argmax_k <u, m~_k>, ties resolved toward the smallest byte.
template <class Real>
std::uint8_t nn_decode(std::span<const Real> u, const Tensor<Real>& unit_manifold) {
  require(u.size() == unit_manifold.cols(), ErrorKind::Shape, "nn_decode: dimension mismatch");
  bool nonzero = false;
  for (Real v : u) {
    require(std::isfinite(v), ErrorKind::InvalidArgument, "nn_decode: non-finite input");
    nonzero = nonzero || v != Real{0};
  }
  require(nonzero, ErrorKind::ZeroVector, "nn_decode: zero vector");
  std::size_t best = 0;
  Real best_score = -std::numeric_limits<Real>::infinity();
  for (std::size_t k = 0; k < kVocab; ++k) {
    const Real s = dot<Real>(u, unit_manifold.row(k));
    if (s > best_score) {
      best_score = s;
      best = k;
    }
  }
  return static_cast<std::uint8_t>(best);
}

// ---------------------------------------------------------------------------
// Capacity lab
// ---------------------------------------------------------------------------

struct CapacityReport {
  std::size_t dim = 0;
  std::size_t chunk = 0;
  std::size_t vocab = kVocab;
  std::size_t trials = 0;
  double recovery_rate = 0.0;        // correct symbols / (trials * W)
  double chunk_recovery_rate = 0.0;  // fully recovered chunks / trials
  double mean_interference_sq = 0.0;
  double margin_gamma = 0.0;         // decoding is argmax, i.e. margin 0
  double failure_delta = 0.0;        // fraction of symbols with min_k margin_k < gamma
  double mean_min_margin = 0.0;
};

struct CapacityFit {
  double slope = 0.0;  // d log(per-symbol failure) / dD
  double intercept = 0.0;
  std::size_t points = 0;
};

namespace detail {

inline std::mt19937_64 trial_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(trial),
                    static_cast<std::uint32_t>(trial >> 32)};
  return std::mt19937_64(seq);
}

template <class Rng>
void draw_unit_row(std::span<double> row, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (auto& v : row) {
      v = gauss(rng);
      n2 += v * v;
    }
  } while (std::sqrt(n2) < kNormFloor);
  const double inv = 1.0 / std::sqrt(n2);
  for (auto& v : row) v *= inv;
}

inline void validate_lab_args(std::size_t dim, std::size_t chunk, std::size_t trials) {
  require(dim >= 2 && dim % 2 == 0, ErrorKind::InvalidDimension,
          "capacity lab: dim must be even and >= 2, got " + std::to_string(dim));
  require(chunk >= 1, ErrorKind::InvalidArgument, "capacity lab: chunk must be >= 1");
  require(trials >= 1000, ErrorKind::InvalidArgument,
          "capacity lab: trials must be >= 1000, got " + std::to_string(trials));
}

}  // namespace detail

/// Monte-Carlo estimate of E||eps||^2 where eps = R^{-1}(z, i) - m~_{b_i}/sqrt(W).
/// Each trial draws an isotropic unit-row manifold (only rows of bytes that occur
/// in the chunk are materialized) and a uniform chunk, then probes a random i.
inline double measure_interference(std::size_t dim, std::size_t chunk, std::size_t trials, std::uint64_t seed) {
  detail::validate_lab_args(dim, chunk, trials);
  const RotationBasis basis = make_basis(dim, chunk);
  std::vector<double> per_trial(trials, 0.0);
  parallel_for(trials, 64, [&](std::size_t begin, std::size_t end) {
    std::vector<double> rows(chunk * dim), z(dim), rotated(dim);
    for (std::size_t t = begin; t < end; ++t) {
      auto rng = detail::trial_rng(seed, 0x1e7f, t);
      std::uniform_int_distribution<int> byte_dist(0, 255);
      std::uniform_int_distribution<std::size_t> pos_dist(0, chunk - 1);
      std::vector<int> bytes(chunk);
      for (auto& b : bytes) b = byte_dist(rng);
      const std::size_t probe = pos_dist(rng);
      // Repeated bytes share one manifold row.
      for (std::size_t i = 0; i < chunk; ++i) {
        std::span<double> row(rows.data() + i * dim, dim);
        const auto first = static_cast<std::size_t>(std::find(bytes.begin(), bytes.end(), bytes[i]) - bytes.begin());
        if (first < i)
          std::copy_n(rows.data() + first * dim, dim, row.begin());
        else
          detail::draw_unit_row(row, rng);
      }
      std::fill(z.begin(), z.end(), 0.0);
      for (std::size_t i = 0; i < chunk; ++i) {
        rotate_into<double>(std::span<const double>(rows.data() + i * dim, dim), static_cast<long>(i), basis,
                            rotated);
        for (std::size_t k = 0; k < dim; ++k) z[k] += rotated[k];
      }
      const double inv = 1.0 / std::sqrt(static_cast<double>(chunk));
      for (auto& v : z) v *= inv;
      rotate_into<double>(z, -static_cast<long>(probe), basis, rotated);
      double e2 = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double e = rotated[k] - inv * rows[probe * dim + k];
        e2 += e * e;
      }
      per_trial[t] = e2;
    }
  });
  double sum = 0.0;
  for (double v : per_trial) sum += v;
  return sum / static_cast<double>(trials);
}

/// Full encode -> unbind -> nn_decode recovery at one dimension. Every trial
/// draws a fresh isotropic 256 x D manifold and a uniform chunk. Single precision
/// mirrors the model's working precision.
inline CapacityReport recovery_at(std::size_t dim, std::size_t chunk, std::size_t trials, std::uint64_t seed) {
  detail::validate_lab_args(dim, chunk, trials);
  const RotationBasis basis = make_basis(dim, chunk);

  struct TrialOutcome {
    std::size_t correct = 0;
    double interference_sq = 0.0;
    double min_margin_sum = 0.0;
    std::size_t below_margin = 0;
  };
  std::vector<TrialOutcome> outcomes(trials);

  parallel_for(trials, 16, [&](std::size_t begin, std::size_t end) {
    std::vector<double> row(dim);
    Tensor<float> unit({kVocab, dim});
    std::vector<float> rotated(dim), scores(kVocab);
    ByteChunk bytes(chunk);
    for (std::size_t t = begin; t < end; ++t) {
      auto rng = detail::trial_rng(seed, dim, t);
      for (std::size_t k = 0; k < kVocab; ++k) {
        detail::draw_unit_row(row, rng);
        std::copy(row.begin(), row.end(), unit.row(k).begin());
      }
      std::uniform_int_distribution<int> byte_dist(0, 255);
      for (auto& b : bytes) b = static_cast<std::uint8_t>(byte_dist(rng));

      const auto z = encode_chunk<float>(bytes, unit, basis, chunk);
      const float inv = 1.0f / std::sqrt(static_cast<float>(chunk));
      TrialOutcome out;
      for (std::size_t i = 0; i < chunk; ++i) {
        const auto u = unbind<float>(z.z, i, basis, chunk);
        const auto truth = unit.row(bytes[i]);
        double e2 = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
          const double e = static_cast<double>(u[k]) - static_cast<double>(inv * truth[k]);
          e2 += e * e;
        }
        out.interference_sq += e2;

        if (nn_decode<float>(u, unit) == bytes[i]) ++out.correct;

        // margin_k = <sqrt(W) u, m~_b - m~_k>; the min over k != b decides recovery.
        const float own = dot<float>(u, truth);
        double min_margin = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < kVocab; ++k) {
          if (k == bytes[i]) continue;
          const double m = std::sqrt(static_cast<double>(chunk)) * (own - dot<float>(u, unit.row(k)));
          min_margin = std::min(min_margin, m);
        }
        out.min_margin_sum += min_margin;
        if (min_margin < 0.0) ++out.below_margin;
      }
      outcomes[t] = out;
    }
  });

  CapacityReport r;
  r.dim = dim;
  r.chunk = chunk;
  r.trials = trials;
  std::size_t correct = 0, full = 0, below = 0;
  double interference = 0.0, margin = 0.0;
  for (const auto& o : outcomes) {
    correct += o.correct;
    full += (o.correct == chunk) ? 1 : 0;
    below += o.below_margin;
    interference += o.interference_sq;
    margin += o.min_margin_sum;
  }
  const double symbols = static_cast<double>(trials * chunk);
  r.recovery_rate = static_cast<double>(correct) / symbols;
  r.chunk_recovery_rate = static_cast<double>(full) / static_cast<double>(trials);
  r.mean_interference_sq = interference / symbols;
  r.failure_delta = static_cast<double>(below) / symbols;
  r.mean_min_margin = margin / symbols;
  return r;
}

/// One report per dimension, sorted by D.
inline std::vector<CapacityReport> recovery_experiment(std::vector<std::size_t> dims, std::size_t chunk,
                                                       std::size_t trials, std::uint64_t seed) {
  require(!dims.empty(), ErrorKind::InvalidArgument, "recovery_experiment: no dimensions given");
  std::sort(dims.begin(), dims.end());
  std::vector<CapacityReport> reports;
  reports.reserve(dims.size());
  for (std::size_t d : dims) reports.push_back(recovery_at(d, chunk, trials, seed));
  return reports;
}

/// Least-squares line through (D, log(1 - recovery_rate)) over the reports whose
/// per-symbol failure is measurable (strictly between 0 and 1).
inline CapacityFit fit_failure_slope(const std::vector<CapacityReport>& reports) {
  std::vector<double> xs, ys;
  for (const auto& r : reports) {
    const double fail_rate = 1.0 - r.recovery_rate;
    if (fail_rate > 0.0 && fail_rate < 1.0) {
      xs.push_back(static_cast<double>(r.dim));
      ys.push_back(std::log(fail_rate));
    }
  }
  CapacityFit fit;
  fit.points = xs.size();
  if (xs.size() < 2) return fit;
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  fit.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  fit.intercept = (sy - fit.slope * sx) / n;
  return fit;
}

inline void write_capacity_csv(std::ostream& os, const std::vector<CapacityReport>& reports) {
  os << "dim,chunk,vocab,trials,recovery_rate,mean_interference_sq\n";
  const auto old_prec = os.precision(10);
  for (const auto& r : reports)
    os << r.dim << ',' << r.chunk << ',' << r.vocab << ',' << r.trials << ',' << r.recovery_rate << ','
       << r.mean_interference_sq << '\n';
  os.precision(old_prec);
}

}  // namespace holobyte
