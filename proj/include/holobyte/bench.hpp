#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <random>
#include <string>

#include "holobyte/errors.hpp"
#include "holobyte/model.hpp"
#include "holobyte/nn/graph.hpp"

namespace holobyte {

/// Attention-map element accounting for one forward pass over N bytes.
/// Counts are per attention map (one head of one layer), i.e. the largest
/// score matrix that has to be resident at once.
struct BenchReport {
  std::uint64_t N = 0, W = 0, D = 0;
  std::uint64_t macro_attn_elems = 0;  // (N/W)^2
  std::uint64_t micro_attn_elems = 0;  // (N/W) * W^2
  std::uint64_t total_elems = 0;
  std::uint64_t predicted = 0;         // N^2/W^2 + N*W
  std::uint64_t measured = 0;          // from instrumentation
  std::uint64_t native_elems = 0;      // N^2 for a byte-level transformer
  std::size_t macro_maps = 0, micro_maps = 0;  // number of recorded head maps
  double wall_seconds = 0.0;           // only filled when timing is requested

  double macro_ratio() const { return static_cast<double>(native_elems) / static_cast<double>(macro_attn_elems); }
  double total_ratio() const { return static_cast<double>(native_elems) / static_cast<double>(total_elems); }
};

/// Runs one untrained forward pass over N random bytes with chunk W and width D
/// and reads the attention probe. Throws InvalidArgument unless W divides N.
inline BenchReport run_bench(std::uint64_t n_bytes, std::uint64_t chunk, std::uint64_t dim, bool wallclock = false,
                             std::size_t macro_layers = 1, std::uint64_t seed = 0) {
  require(chunk >= 1 && n_bytes >= chunk && n_bytes % chunk == 0, ErrorKind::InvalidArgument,
          "bench: --bytes must be a positive multiple of --chunk (got " + std::to_string(n_bytes) + " and " +
              std::to_string(chunk) + ")");
  const std::uint64_t T = n_bytes / chunk;
  ModelConfig cfg;
  cfg.dim = dim;
  cfg.chunk = chunk;
  cfg.max_chunks = T + 1;
  cfg.macro_layers = macro_layers;
  cfg.micro_layers = 1;
  HoloByteModel<float> model(cfg, seed);
  nn::AttentionProbe probe;
  model.set_probe(&probe);

  ByteBatch x(1, T, chunk), y(1, T, chunk);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  for (auto& b : x.bytes) b = static_cast<std::uint8_t>(byte(rng));
  for (auto& b : y.bytes) b = static_cast<std::uint8_t>(byte(rng));

  const auto t0 = std::chrono::steady_clock::now();
  (void)model.forward_loss(x, y);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  BenchReport r;
  r.N = n_bytes;
  r.W = chunk;
  r.D = dim;
  r.macro_attn_elems = T * T;
  r.micro_attn_elems = T * chunk * chunk;
  r.total_elems = r.macro_attn_elems + r.micro_attn_elems;
  r.predicted = n_bytes * n_bytes / (chunk * chunk) + n_bytes * chunk;
  r.native_elems = n_bytes * n_bytes;
  std::uint64_t macro_peak = 0, micro_peak = 0;
  for (const auto& rec : probe.records) {
    const bool is_macro = rec.site.rfind("macro", 0) == 0;
    (is_macro ? macro_peak : micro_peak) = std::max(is_macro ? macro_peak : micro_peak,
                                                    static_cast<std::uint64_t>(rec.elements()));
    (is_macro ? r.macro_maps : r.micro_maps) += rec.heads;
  }
  r.measured = macro_peak + micro_peak;
  if (wallclock) r.wall_seconds = secs;
  return r;
}

inline std::string bench_csv_header(bool wallclock) {
  return std::string("layout,N,W,D,macro_attn_elems,micro_attn_elems,total_elems,predicted,measured") +
         (wallclock ? ",wall_seconds" : "");
}

/// Writes the header, the HoloByte row, and a `native` row holding the N x N
/// count a byte-level transformer would need.
inline void write_bench_csv(std::ostream& os, const BenchReport& r, bool wallclock) {
  os << bench_csv_header(wallclock) << '\n';
  os << "holobyte," << r.N << ',' << r.W << ',' << r.D << ',' << r.macro_attn_elems << ',' << r.micro_attn_elems << ','
     << r.total_elems << ',' << r.predicted << ',' << r.measured;
  if (wallclock) {
    char buf[32];
    std::snprintf(buf, sizeof buf, ",%.6f", r.wall_seconds);
    os << buf;
  }
  os << '\n';
  os << "native," << r.N << ",1," << r.D << ',' << r.native_elems << ",0," << r.native_elems << ',' << r.native_elems
     << ',' << r.native_elems;
  if (wallclock) os << ",";
  os << '\n';
}

}  // namespace holobyte
