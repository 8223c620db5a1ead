#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "holobyte/holocodec.hpp"

using namespace holobyte;

namespace {

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return ab / std::sqrt(aa * bb);
}

ByteChunk random_chunk(std::size_t w, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, 255);
  ByteChunk c(w);
  for (auto& b : c) b = static_cast<std::uint8_t>(d(rng));
  return c;
}

}  // namespace

TEST(EncodeChunk, SingleByteIsItsUnitRow) {
  auto u = normalized_rows(init_manifold<float>(32, 1));
  auto basis = make_basis(32, 1);
  for (int b : {0, 77, 255}) {
    ByteChunk c{static_cast<std::uint8_t>(b)};
    auto z = encode_chunk<float>(c, u, basis, 1);
    for (std::size_t k = 0; k < 32; ++k) EXPECT_EQ(z.z[k], u.row(b)[k]);
    auto back = unbind<float>(z.z, 0, basis, 1);
    EXPECT_EQ(back, z.z);
    EXPECT_EQ(nn_decode<float>(back, u), b);
  }
}

TEST(EncodeChunk, RepeatedByteInTwoDimensions) {
  ByteManifold<double> m{Tensor<double>({256, 2})};
  for (auto& v : m.rows.vec()) v = 1.0;
  m.rows.row(5)[0] = 3.0;
  m.rows.row(5)[1] = 4.0;
  auto basis = make_basis(2, 2);
  auto z = encode_chunk<double>(ByteChunk{5, 5}, m, basis, 2);
  // m~ = (0.6, 0.8); rotating by angle 1: (0.6 cos1 - 0.8 sin1, 0.6 sin1 + 0.8 cos1)
  const double c = std::cos(1.0), s = std::sin(1.0);
  EXPECT_NEAR(z.z[0], (0.6 + 0.6 * c - 0.8 * s) / std::sqrt(2.0), 1e-14);
  EXPECT_NEAR(z.z[1], (0.8 + 0.6 * s + 0.8 * c) / std::sqrt(2.0), 1e-14);
}

TEST(EncodeChunk, NormBoundedBySqrtW) {
  std::mt19937_64 rng(3);
  auto u = normalized_rows(init_manifold<float>(768, 3));
  auto basis = make_basis(768, 8);
  for (int t = 0; t < 1000; ++t) {
    auto z = encode_chunk<float>(random_chunk(8, rng), u, basis, 8);
    EXPECT_LE(l2_norm<float>(z.z), std::sqrt(8.0f) + 1e-4f);
  }
}

TEST(EncodeChunk, PositionsAreDistinguishable) {
  std::mt19937_64 rng(4);
  auto u = normalized_rows(init_manifold<double>(256, 4));
  auto basis = make_basis(256, 8);
  ByteChunk c(8);
  std::iota(c.begin(), c.end(), 40);
  ByteChunk p = c;
  while (p == c) std::shuffle(p.begin(), p.end(), rng);
  auto a = encode_chunk<double>(c, u, basis, 8), b = encode_chunk<double>(p, u, basis, 8);
  EXPECT_LT(cosine(a.z, b.z), 0.999);
}

TEST(EncodeChunk, WrongLengthIsShapeError) {
  auto u = normalized_rows(init_manifold<float>(8, 1));
  auto basis = make_basis(8, 4);
  try {
    encode_chunk<float>(ByteChunk{1, 2, 3}, u, basis, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
}

TEST(Unbind, OutOfRangePositionIsIndexError) {
  auto basis = make_basis(8, 4);
  std::vector<float> z(8, 1.0f);
  try {
    unbind<float>(z, 4, basis, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Index);
  }
}

TEST(Unbind, ScaledProjectionConcentratesOnTrueRow) {
  // Distinct bytes: sqrt(W) * <unbind(z, i), m~_c[i]> = 1 + noise with variance (W - 1) / D.
  std::mt19937_64 rng(5);
  auto basis = make_basis(768, 8);
  const int trials = 1000;
  double sum = 0, sq = 0;
  for (int t = 0; t < trials; ++t) {
    auto u = normalized_rows(init_manifold<double>(768, 1000 + t));
    auto c = random_chunk(8, rng);
    while (std::set<std::uint8_t>(c.begin(), c.end()).size() != c.size()) c = random_chunk(8, rng);
    auto z = encode_chunk<double>(c, u, basis, 8);
    const std::size_t i = static_cast<std::size_t>(t % 8);
    auto r = unbind<double>(z.z, i, basis, 8);
    const double proj = std::sqrt(8.0) * dot<double>(r, u.row(c[i]));
    sum += proj;
    sq += proj * proj;
  }
  const double mean = sum / trials, sd = std::sqrt(sq / trials - mean * mean);
  EXPECT_NEAR(mean, 1.0, 0.01);
  EXPECT_NEAR(sd, std::sqrt(7.0 / 768.0), 0.1 * std::sqrt(7.0 / 768.0));
}

TEST(NnDecode, SelfAndAntipode) {
  auto u = normalized_rows(init_manifold<float>(64, 6));
  for (std::size_t b = 0; b < kVocab; ++b) {
    auto row = u.row(b);
    EXPECT_EQ(nn_decode<float>(row, u), b);
    std::vector<float> neg(row.begin(), row.end());
    for (auto& v : neg) v = -v;
    EXPECT_NE(nn_decode<float>(neg, u), b);
  }
}

TEST(NnDecode, TiesGoToSmallestByte) {
  Tensor<float> u({256, 2});
  for (std::size_t r = 0; r < kVocab; ++r) u.row(r)[0] = 1.0f;
  std::vector<float> q{1.0f, 0.0f};
  EXPECT_EQ(nn_decode<float>(q, u), 0);
}

TEST(NnDecode, ZeroVectorIsRejected) {
  auto u = normalized_rows(init_manifold<float>(8, 6));
  std::vector<float> z(8, 0.0f);
  try {
    nn_decode<float>(z, u);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ZeroVector);
  }
}

TEST(Interference, ZeroForSingleByteChunks) { EXPECT_EQ(measure_interference(64, 1, 1000, 1), 0.0); }

TEST(Interference, MatchesClosedFormForPairs) {
  EXPECT_NEAR(measure_interference(768, 2, 10000, 42), 0.5, 0.5 * 0.05);
}

TEST(Interference, RequiresEnoughTrials) { EXPECT_THROW(measure_interference(64, 4, 999, 1), Error); }

TEST(Recovery, SingleByteChunksAlwaysRecover) {
  auto reports = recovery_experiment({16, 8}, 1, 1000, 7);
  ASSERT_EQ(reports.size(), 2u);
  EXPECT_EQ(reports[0].dim, 8u);
  for (const auto& r : reports) {
    EXPECT_EQ(r.recovery_rate, 1.0);
    EXPECT_EQ(r.chunk_recovery_rate, 1.0);
  }
}

TEST(Recovery, DeterministicAcrossRuns) {
  auto a = recovery_experiment({16}, 4, 1000, 9);
  auto b = recovery_experiment({16}, 4, 1000, 9);
  EXPECT_EQ(a[0].recovery_rate, b[0].recovery_rate);
  EXPECT_EQ(a[0].mean_interference_sq, b[0].mean_interference_sq);
  EXPECT_EQ(a[0].mean_min_margin, b[0].mean_min_margin);
}

TEST(Recovery, FailureDecaysExponentiallyInDimension) {
  auto reports = recovery_experiment({16, 32, 48, 64}, 8, 2000, 42);
  for (const auto& r : reports) {
    EXPECT_EQ(r.margin_gamma, 0.0);
    EXPECT_NEAR(r.failure_delta, 1.0 - r.recovery_rate, 1e-12);
    EXPECT_LE(r.chunk_recovery_rate, r.recovery_rate);
  }
  auto fit = fit_failure_slope(reports);
  EXPECT_GE(fit.points, 3u);
  EXPECT_LT(fit.slope, 0.0);
}

TEST(Recovery, CsvSchema) {
  std::ostringstream os;
  write_capacity_csv(os, recovery_experiment({8}, 2, 1000, 1));
  std::string header;
  std::istringstream is(os.str());
  std::getline(is, header);
  EXPECT_EQ(header, "dim,chunk,vocab,trials,recovery_rate,mean_interference_sq");
  std::string row;
  std::getline(is, row);
  EXPECT_EQ(row.rfind("8,2,256,1000,", 0), 0u);
}
