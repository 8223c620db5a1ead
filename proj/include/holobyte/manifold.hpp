#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>

#include "holobyte/errors.hpp"
#include "holobyte/tensor.hpp"

namespace holobyte {

inline constexpr std::size_t kVocab = 256;
inline constexpr double kNormFloor = 1e-6;

/// Initial logit scalar: s0 = ln(1 / 0.07), so the temperature exp(s0) is 1/0.07.
inline const double kInitialLogitScale = std::log(1.0 / 0.07);

/// Learnable 256 x D byte embedding matrix. Rows are stored raw; their unit
/// normalization is taken on demand.
template <class Real>
struct ByteManifold {
  Tensor<Real> rows;  // [256, D]

  std::size_t dim() const { return rows.cols(); }
  std::span<const Real> row(std::size_t byte) const { return rows.row(byte); }
};

template <class Real>
struct LogitScale {
  Real s = static_cast<Real>(kInitialLogitScale);

  Real tau() const { return std::exp(s); }
};

/// Redraws any row whose norm has fallen below the floor. Returns how many rows
/// were replaced.
template <class Real, class Rng>
std::size_t enforce_norm_floor(Tensor<Real>& rows, Rng& rng) {
  const std::size_t d = rows.cols();
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  std::size_t replaced = 0;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    auto row = rows.row(r);
    while (static_cast<double>(l2_norm<Real>(row)) < kNormFloor) {
      for (auto& v : row) v = static_cast<Real>(gauss(rng));
      ++replaced;
    }
  }
  return replaced;
}

/// Rows i.i.d. N(0, 1/D), deterministic in `seed`.
template <class Real>
ByteManifold<Real> init_manifold(std::size_t dim, std::uint64_t seed) {
  require(dim >= 2, ErrorKind::InvalidArgument, "manifold dim must be >= 2, got " + std::to_string(dim));
  require(dim % 2 == 0, ErrorKind::InvalidDimension, "manifold dim must be even, got " + std::to_string(dim));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  ByteManifold<Real> m{Tensor<Real>({kVocab, dim})};
  for (auto& v : m.rows.vec()) v = static_cast<Real>(gauss(rng));
  enforce_norm_floor(m.rows, rng);
  return m;
}

/// Unit-normalizes every row of an [N, D] matrix.
template <class Real>
Tensor<Real> unit_rows(const Tensor<Real>& rows) {
  Tensor<Real> out = rows;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const Real n = l2_norm<Real>(row);
    require(static_cast<double>(n) >= kNormFloor, ErrorKind::DegenerateRow,
            "row " + std::to_string(r) + " has norm below the floor");
    for (auto& v : row) v /= n;
  }
  return out;
}

template <class Real>
Tensor<Real> normalized_rows(const ByteManifold<Real>& m) {
  return unit_rows(m.rows);
}

/// logits[n][k] = exp(s) * <v_n / |v_n|, m~_k>. `v` is [N, D].
template <class Real>
Tensor<Real> cosine_logits(const Tensor<Real>& v, const Tensor<Real>& unit_manifold, const LogitScale<Real>& scale) {
  const std::size_t d = unit_manifold.cols();
  require(v.cols() == d, ErrorKind::Shape, "cosine_logits: vector dim " + std::to_string(v.cols()) +
                                               " != manifold dim " + std::to_string(d));
  const Real tau = scale.tau();
  Tensor<Real> out({v.rows(), kVocab});
  for (std::size_t n = 0; n < v.rows(); ++n) {
    auto vr = v.row(n);
    const Real norm = l2_norm<Real>(vr);
    require(norm > Real{0} && std::isfinite(norm), ErrorKind::ZeroVector,
            "cosine_logits: row " + std::to_string(n) + " is a zero vector");
    auto o = out.row(n);
    for (std::size_t k = 0; k < kVocab; ++k) o[k] = tau * (dot<Real>(vr, unit_manifold.row(k)) / norm);
  }
  return out;
}

template <class Real>
Tensor<Real> cosine_logits(const Tensor<Real>& v, const ByteManifold<Real>& m, const LogitScale<Real>& scale) {
  return cosine_logits(v, normalized_rows(m), scale);
}

}  // namespace holobyte
