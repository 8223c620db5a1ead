#pragma once

// Tape versions of the holographic encode / unbind / prefix maps, so gradients
// reach the byte manifold through every path it is used on.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "holobyte/errors.hpp"
#include "holobyte/manifold.hpp"
#include "holobyte/nn/graph.hpp"
#include "holobyte/rotor.hpp"

namespace holobyte::ops {

using nn::Graph;
using nn::Var;

/// bytes holds N chunks of W bytes; returns [N, D] with row n equal to
/// (1/sqrt(W)) * sum_i R(unit[bytes[n*W + i]], i).
template <class Real>
Var holographic_encode(Graph<Real>& g, Var unit, std::span<const std::uint8_t> bytes, std::size_t chunk,
                       const RotationBasis& basis) {
  const auto& mv = g.value(unit);
  const std::size_t d = mv.cols();
  require(mv.rows() == kVocab && basis.dim == d, ErrorKind::Shape, "holographic_encode: manifold/basis mismatch");
  require(chunk >= 1 && bytes.size() % chunk == 0, ErrorKind::Shape, "holographic_encode: ragged chunks");
  require(basis.max_pos >= chunk, ErrorKind::InvalidArgument, "holographic_encode: basis too short for chunk");
  const std::size_t n = bytes.size() / chunk;
  const Real inv = Real{1} / std::sqrt(static_cast<Real>(chunk));
  Tensor<Real> out({n, d});
  std::vector<Real> rotated(d);
  for (std::size_t r = 0; r < n; ++r) {
    auto o = out.row(r);
    for (std::size_t i = 0; i < chunk; ++i) {
      rotate_into<Real>(mv.row(bytes[r * chunk + i]), static_cast<long>(i), basis, rotated);
      for (std::size_t k = 0; k < d; ++k) o[k] += rotated[k];
    }
    for (auto& v : o) v *= inv;
  }
  std::vector<std::uint8_t> idx(bytes.begin(), bytes.end());
  return g.push(std::move(out), {unit}, [unit, chunk, inv, n, d, &basis, idx = std::move(idx)](Graph<Real>& g, Var self) {
    const auto& dy = g.grad(self);
    auto& dm = g.grad(unit);
    std::vector<Real> back(d);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < chunk; ++i) {
        // R is orthogonal, so its transpose is the rotation at -i.
        rotate_into<Real>(dy.row(r), -static_cast<long>(i), basis, back);
        axpy<Real>(inv, back, dm.row(idx[r * chunk + i]));
      }
  });
}

/// z [N, D] -> [N, W, D] with slot i holding R^{-1}(z_n, i).
template <class Real>
Var unbind_expand(Graph<Real>& g, Var z, std::size_t chunk, const RotationBasis& basis) {
  const auto& zv = g.value(z);
  const std::size_t d = zv.cols(), n = zv.rows();
  require(basis.dim == d && basis.max_pos >= chunk, ErrorKind::Shape, "unbind_expand: basis mismatch");
  Tensor<Real> out({n, chunk, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < chunk; ++i)
      rotate_into<Real>(zv.row(r), -static_cast<long>(i), basis, out.row(r * chunk + i));
  return g.push(std::move(out), {z}, [z, chunk, n, d, &basis](Graph<Real>& g, Var self) {
    const auto& dy = g.grad(self);
    auto& dz = g.grad(z);
    std::vector<Real> back(d);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < chunk; ++i) {
        rotate_into<Real>(dy.row(r * chunk + i), static_cast<long>(i), basis, back);
        axpy<Real>(Real{1}, back, dz.row(r));
      }
  });
}

/// Causal prefix [N, W, D]: slot 0 is e_start, slot i >= 1 is unit[targets[n*W + i - 1]].
/// The final target byte of each chunk is never read. When `filled` < W, slots
/// at index >= filled are zero (stepwise inference padding).
template <class Real>
Var causal_prefix(Graph<Real>& g, Var unit, Var e_start, std::span<const std::uint8_t> targets, std::size_t chunk,
                  std::size_t filled = static_cast<std::size_t>(-1)) {
  const auto& mv = g.value(unit);
  const auto& ev = g.value(e_start);
  const std::size_t d = mv.cols();
  require(ev.numel() == d, ErrorKind::Shape, "causal_prefix: e_start must have D elements");
  require(chunk >= 1 && targets.size() % chunk == 0, ErrorKind::Shape, "causal_prefix: ragged chunks");
  const std::size_t n = targets.size() / chunk;
  filled = std::min(filled, chunk);
  Tensor<Real> out({n, chunk, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < filled; ++i) {
      auto src = i == 0 ? ev.span() : mv.row(targets[r * chunk + i - 1]);
      std::copy(src.begin(), src.end(), out.row(r * chunk + i).begin());
    }
  std::vector<std::uint8_t> idx(targets.begin(), targets.end());
  return g.push(std::move(out), {unit, e_start}, [unit, e_start, chunk, n, filled, idx = std::move(idx)](Graph<Real>& g, Var self) {
    const auto& dy = g.grad(self);
    if (g.requires_grad(e_start)) {
      auto& de = g.grad(e_start);
      for (std::size_t r = 0; r < n; ++r)
        if (filled > 0) axpy<Real>(Real{1}, dy.row(r * chunk), de.span());
    }
    if (g.requires_grad(unit)) {
      auto& dm = g.grad(unit);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 1; i < filled; ++i) axpy<Real>(Real{1}, dy.row(r * chunk + i), dm.row(idx[r * chunk + i - 1]));
    }
  });
}

}  // namespace holobyte::ops
