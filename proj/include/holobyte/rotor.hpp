#pragma once

// Orthogonal positional rotation and its exact inverse.
//
// A vector x in R^D is split into halves x1 = x[0, D/2) and x2 = x[D/2, D).
// Component j of x1 is paired with component j of x2 and the pair is rotated
// by theta = i * freq[j], freq[j] = 10000^(-2j/D):
//
//   out1 = x1 * cos(theta) - x2 * sin(theta)
//   out2 = x1 * sin(theta) + x2 * cos(theta)
//
// The inverse at position i is the rotation at position -i.

#include <cmath>
#include <cstdlib>
#include <span>
#include <string>
#include <vector>

#include "holobyte/errors.hpp"

namespace holobyte {

struct RotationBasis {
  std::size_t dim = 0;
  std::size_t max_pos = 0;
  std::vector<double> freqs;                    // D/2
  std::vector<std::vector<double>> angle_table;  // max_pos x D/2, angle_table[i][j] = i * freqs[j]
  std::vector<double> cos_table;                // flat max_pos x D/2
  std::vector<double> sin_table;

  std::size_t half() const noexcept { return dim / 2; }
};

inline RotationBasis make_basis(std::size_t dim, std::size_t max_pos) {
  require(dim >= 2 && dim % 2 == 0, ErrorKind::InvalidDimension,
          "rotation dimension must be even and >= 2, got " + std::to_string(dim));
  require(max_pos >= 1, ErrorKind::InvalidArgument, "max_pos must be >= 1");

  RotationBasis b;
  b.dim = dim;
  b.max_pos = max_pos;
  const std::size_t h = dim / 2;
  b.freqs.resize(h);
  for (std::size_t j = 0; j < h; ++j)
    b.freqs[j] = std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(dim));

  b.angle_table.assign(max_pos, std::vector<double>(h, 0.0));
  b.cos_table.resize(max_pos * h);
  b.sin_table.resize(max_pos * h);
  for (std::size_t i = 0; i < max_pos; ++i) {
    for (std::size_t j = 0; j < h; ++j) {
      const double theta = static_cast<double>(i) * b.freqs[j];
      b.angle_table[i][j] = theta;
      b.cos_table[i * h + j] = std::cos(theta);
      b.sin_table[i * h + j] = std::sin(theta);
    }
  }
  return b;
}

/// Writes R(x, pos) into `out`. Negative positions rotate backwards.
/// `out` must not alias `x`.
template <class Real>
void rotate_into(std::span<const Real> x, long pos, const RotationBasis& basis, std::span<Real> out) {
  require(x.size() == basis.dim && out.size() == basis.dim, ErrorKind::Shape,
          "rotate: vector length " + std::to_string(x.size()) + " != basis dim " +
              std::to_string(basis.dim));
  const std::size_t mag = static_cast<std::size_t>(std::labs(pos));
  require(mag < basis.max_pos, ErrorKind::Index,
          "rotate: |position| " + std::to_string(mag) + " exceeds basis max_pos " +
              std::to_string(basis.max_pos));
  const std::size_t h = basis.half();
  const double* ct = basis.cos_table.data() + mag * h;
  const double* st = basis.sin_table.data() + mag * h;
  const Real sign = pos < 0 ? Real{-1} : Real{1};
  for (std::size_t j = 0; j < h; ++j) {
    const Real c = static_cast<Real>(ct[j]);
    const Real s = sign * static_cast<Real>(st[j]);
    const Real a = x[j];
    const Real b = x[j + h];
    out[j] = a * c - b * s;
    out[j + h] = a * s + b * c;
  }
}

template <class Real>
std::vector<Real> rotate(std::span<const Real> x, long pos, const RotationBasis& basis) {
  std::vector<Real> out(x.size());
  rotate_into<Real>(x, pos, basis, out);
  return out;
}

template <class Real>
std::vector<Real> rotate(const std::vector<Real>& x, long pos, const RotationBasis& basis) {
  return rotate<Real>(std::span<const Real>(x), pos, basis);
}

template <class Real>
std::vector<Real> unrotate(std::span<const Real> x, long pos, const RotationBasis& basis) {
  return rotate<Real>(x, -pos, basis);
}

template <class Real>
std::vector<Real> unrotate(const std::vector<Real>& x, long pos, const RotationBasis& basis) {
  return rotate<Real>(std::span<const Real>(x), -pos, basis);
}

}  // namespace holobyte
