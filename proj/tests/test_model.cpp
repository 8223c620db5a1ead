#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "holobyte/model.hpp"

using namespace holobyte;

namespace {

ModelConfig small_config(std::size_t dim = 16, std::size_t chunk = 4, std::size_t t_max = 6) {
  ModelConfig c;
  c.dim = dim;
  c.chunk = chunk;
  c.max_chunks = t_max;
  c.macro_layers = 2;
  c.micro_layers = 1;
  c.heads = 2;
  return c;
}

ByteBatch random_batch(std::size_t b, std::size_t t, std::size_t w, std::uint64_t seed) {
  ByteBatch x(b, t, w);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& v : x.bytes) v = static_cast<std::uint8_t>(d(rng));
  return x;
}

Tensor<float> random_tensor(Shape s, std::uint64_t seed) {
  Tensor<float> t(std::move(s));
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (auto& v : t.vec()) v = n(rng);
  return t;
}

bool rows_equal(const Tensor<float>& a, const Tensor<float>& b, std::size_t first, std::size_t count, std::size_t width) {
  for (std::size_t k = first * width; k < (first + count) * width; ++k)
    if (a[k] != b[k]) return false;
  return true;
}

}  // namespace

TEST(ModelConfig, DefaultsAndValidation) {
  ModelConfig c;
  EXPECT_EQ(c.dim, 768u);
  EXPECT_EQ(c.chunk, 8u);
  EXPECT_EQ(c.macro_layers, 11u);
  EXPECT_EQ(c.micro_layers, 1u);
  EXPECT_EQ(c.resolved_heads(), 12u);
  EXPECT_EQ(c.latent_weight, 0.5);
  EXPECT_NO_THROW(c.validate());
  c.dim = 15;
  EXPECT_THROW(c.validate(), Error);
  c = ModelConfig{};
  c.heads = 7;
  EXPECT_THROW(c.validate(), Error);
  c = ModelConfig{};
  c.latent_weight = -0.1;
  EXPECT_THROW(c.validate(), Error);
  c = ModelConfig{};
  c.chunk = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Model, ParameterRegistryAndDecayExemptions) {
  HoloByteModel<float> m(small_config(), 1);
  auto& reg = m.parameters();
  EXPECT_EQ(reg.at("manifold").values.shape(), (Shape{256, 16}));
  EXPECT_NEAR(reg.at("logit_scale").values[0], std::log(1.0 / 0.07), 1e-6);
  for (const char* id : {"logit_scale", "e_start", "macro.pos", "macro.blocks.0.ln1.gain", "macro.blocks.1.attn.q.bias",
                         "micro.blocks.0.ffn.up.bias", "macro.ln_f.gain"})
    EXPECT_TRUE(reg.at(id).decay_exempt) << id;
  for (const char* id : {"manifold", "macro.blocks.0.attn.q.weight", "micro.blocks.0.ffn.down.weight", "macro.head.weight"})
    EXPECT_FALSE(reg.at(id).decay_exempt) << id;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < reg.size(); ++i) ids.insert(reg[i].id);
  EXPECT_EQ(ids.size(), reg.size());
}

TEST(Model, MicroFfnCanBeDisabled) {
  auto c = small_config();
  c.micro_ffn = false;
  HoloByteModel<float> m(c, 1);
  EXPECT_FALSE(m.parameters().contains("micro.blocks.0.ffn.up.weight"));
  EXPECT_TRUE(m.parameters().contains("macro.blocks.0.ffn.up.weight"));
}

TEST(Model, SeededInitIsReproducible) {
  HoloByteModel<float> a(small_config(), 9), b(small_config(), 9);
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    EXPECT_EQ(a.parameters()[i].values.vec(), b.parameters()[i].values.vec());
}

TEST(Macro, CausalUnderPerturbation) {
  HoloByteModel<float> m(small_config(), 2);
  const std::size_t T = 6, D = 16;
  auto z = random_tensor({2, T, D}, 3);
  auto base = m.run_macro(z);
  for (std::size_t j = 0; j < T; ++j) {
    auto zp = z;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t k = 0; k < D; ++k) zp[(b * T + j) * D + k] += 0.5f;
    auto out = m.run_macro(zp);
    for (std::size_t b = 0; b < 2; ++b) {
      EXPECT_TRUE(rows_equal(base, out, b * T, j, D)) << "perturbing chunk " << j;
      if (j + 1 < T) {
        EXPECT_FALSE(rows_equal(base, out, b * T + j, 1, D));
      }
    }
  }
}

TEST(Macro, SingleChunkAndLengthLimit) {
  HoloByteModel<float> m(small_config(), 2);
  auto out = m.run_macro(random_tensor({3, 1, 16}, 4));
  EXPECT_EQ(out.shape(), (Shape{3, 1, 16}));
  EXPECT_TRUE(out.all_finite());
  EXPECT_THROW(m.run_macro(random_tensor({1, 7, 16}, 4)), Error);
}

TEST(Micro, CausalUnderPerturbation) {
  HoloByteModel<float> m(small_config(), 5);
  const std::size_t W = 4, D = 16;
  auto h = random_tensor({3, W, D}, 6);
  auto base = m.run_micro(h);
  for (std::size_t i = 0; i < W; ++i) {
    auto hp = h;
    for (std::size_t n = 0; n < 3; ++n) hp[(n * W + i) * D] -= 1.0f;
    auto out = m.run_micro(hp);
    for (std::size_t n = 0; n < 3; ++n) EXPECT_TRUE(rows_equal(base, out, n * W, i, D));
  }
  EXPECT_THROW(m.run_micro(random_tensor({3, 5, D}, 6)), Error);
}

TEST(Causality, LogitsIgnoreCurrentAndFutureBytes) {
  HoloByteModel<float> m(small_config(), 31);
  const std::size_t T = 5, W = 4;
  auto x = random_batch(1, T, W, 1), y = random_batch(1, T, W, 2);
  const auto base = m.forward_loss(x, y).second.logits;
  auto same_logits = [&](const Tensor<float>& other, std::size_t t, std::size_t i) {
    for (std::size_t k = 0; k < 256; ++k)
      if (base[(t * W + i) * 256 + k] != other[(t * W + i) * 256 + k]) return false;
    return true;
  };
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < W; ++j) {
      auto y2 = y;
      y2.at(0, t, j) ^= 0xff;
      const auto lg = m.forward_loss(x, y2).second.logits;
      for (std::size_t tt = 0; tt < T; ++tt)
        for (std::size_t i = 0; i < W; ++i) {
          if (tt < t || (tt == t && i <= j)) {
            EXPECT_TRUE(same_logits(lg, tt, i)) << t << "," << j << " -> " << tt << "," << i;
          }
        }
      if (j + 1 < W) {
        EXPECT_FALSE(same_logits(lg, t, j + 1));
      }
    }
  for (std::size_t t = 1; t < T; ++t) {
    auto x2 = x;
    for (std::size_t i = 0; i < W; ++i) x2.at(0, t, i) ^= 0x33;
    const auto lg = m.forward_loss(x2, y).second.logits;
    for (std::size_t tt = 0; tt < t; ++tt)
      for (std::size_t i = 0; i < W; ++i) EXPECT_TRUE(same_logits(lg, tt, i));
    EXPECT_FALSE(same_logits(lg, t, 0));
  }
}

TEST(Prefix, LayoutAndTruncation) {
  HoloByteModel<float> m(small_config(), 7);
  auto y = random_batch(2, 3, 4, 8);
  auto p = m.run_prefix(y);
  EXPECT_EQ(p.shape(), (Shape{2, 3, 4, 16}));
  const auto& e = m.parameters().at("e_start").values;
  auto unit = normalized_rows(m.manifold());
  for (std::size_t n = 0; n < 6; ++n) {
    for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(p[(n * 4) * 16 + k], e[k]);
    for (std::size_t i = 1; i < 4; ++i) {
      std::span<const float> row(p.data() + (n * 4 + i) * 16, 16);
      EXPECT_NEAR(l2_norm<float>(row), 1.0f, 1e-6f);
      for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(row[k], unit.row(y.bytes[n * 4 + i - 1])[k]);
    }
  }
  auto y2 = y;
  for (std::size_t n = 0; n < 6; ++n) y2.bytes[n * 4 + 3] ^= 0x5a;
  EXPECT_EQ(m.run_prefix(y2).vec(), p.vec());
}

TEST(Prefix, SingleByteChunksAreAllStartVector) {
  HoloByteModel<float> m(small_config(8, 1, 4), 7);
  auto p = m.run_prefix(random_batch(1, 4, 1, 3));
  const auto& e = m.parameters().at("e_start").values;
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(p[n * 8 + k], e[k]);
}

TEST(ForwardLoss, ArtifactShapesAndIdentity) {
  HoloByteModel<float> m(small_config(), 11);
  auto x = random_batch(2, 5, 4, 1), y = random_batch(2, 5, 4, 2);
  auto [lb, a] = m.forward_loss(x, y);
  EXPECT_EQ(a.z_in.shape(), (Shape{2, 5, 16}));
  EXPECT_EQ(a.z_hat.shape(), (Shape{2, 5, 16}));
  EXPECT_EQ(a.z_target.shape(), (Shape{2, 5, 16}));
  for (const auto* t : {&a.unbound, &a.combined, &a.refined}) EXPECT_EQ(t->shape(), (Shape{2, 5, 4, 16}));
  EXPECT_EQ(a.logits.shape(), (Shape{2, 5, 4, 256}));
  EXPECT_TRUE(a.logits.all_finite());
  EXPECT_EQ(lb.total, lb.ce + 0.5 * lb.latent);
  EXPECT_EQ(lb.lambda, 0.5);
  EXPECT_GE(lb.ce, 0.0);
  EXPECT_GE(lb.latent, 0.0);
}

TEST(ForwardLoss, UntrainedCrossEntropyNearLogitFloor) {
  // With near-isotropic cosines of variance 1/D, the expected untrained CE is
  // about ln 256 + tau^2 / (2D).
  auto c = small_config(256, 4, 4);
  c.macro_layers = 1;
  HoloByteModel<float> m(c, 42);
  auto x = random_batch(2, 4, 4, 3), y = random_batch(2, 4, 4, 4);
  const double ce = m.forward_loss(x, y).first.ce;
  const double tau = 1.0 / 0.07;
  EXPECT_NEAR(ce, std::log(256.0) + tau * tau / (2.0 * 256.0), 0.25);
  EXPECT_GE(ce, 5.0);
  EXPECT_LE(ce, 6.5);
}

TEST(ForwardLoss, PerfectMacroRemovesLatentAndHelpsDecoding) {
  HoloByteModel<float> m(small_config(64, 4, 8), 13);
  auto x = random_batch(4, 8, 4, 5), y = random_batch(4, 8, 4, 6);
  const auto normal = m.forward_loss(x, y).first;
  const auto perfect = m.forward_loss(x, y, true).first;
  EXPECT_EQ(perfect.latent, 0.0);
  EXPECT_LT(perfect.ce, normal.ce);
}

TEST(ForwardLoss, RejectsMismatchedBatches) {
  HoloByteModel<float> m(small_config(), 11);
  EXPECT_THROW(m.forward_loss(random_batch(1, 2, 4, 1), random_batch(1, 3, 4, 1)), Error);
  EXPECT_THROW(m.forward_loss(random_batch(1, 2, 3, 1), random_batch(1, 2, 3, 1)), Error);
  EXPECT_THROW(m.forward_loss(random_batch(1, 7, 4, 1), random_batch(1, 7, 4, 1)), Error);
}

TEST(ForwardLoss, NonFiniteLogitsNameTheTensor) {
  HoloByteModel<float> m(small_config(), 11);
  m.parameters().at("logit_scale").values[0] = 1000.0f;
  try {
    m.forward_loss(random_batch(1, 2, 4, 1), random_batch(1, 2, 4, 2));
    FAIL();
  } catch (const NumericalFault& e) {
    EXPECT_EQ(e.tensor_id(), "logits");
    EXPECT_EQ(e.kind(), ErrorKind::NumericalFault);
  }
}

TEST(ForwardLoss, GradientsCoverEveryParameter) {
  HoloByteModel<float> m(small_config(), 12);
  auto lb = m.compute_gradients(random_batch(2, 3, 4, 1), random_batch(2, 3, 4, 2));
  EXPECT_TRUE(std::isfinite(lb.total));
  for (std::size_t i = 0; i < m.parameters().size(); ++i) EXPECT_TRUE(m.parameters()[i].has_grad());
}

TEST(ForwardLoss, StopTargetGradientOnlyChangesManifoldGradient) {
  auto c = small_config();
  HoloByteModel<double> a(c, 3);
  c.stop_target_grad = true;
  HoloByteModel<double> b(c, 3);
  ByteBatch x(1, 3, 4), y(1, 3, 4);
  for (std::size_t i = 0; i < 12; ++i) {
    x.bytes[i] = static_cast<std::uint8_t>(i * 7);
    y.bytes[i] = static_cast<std::uint8_t>(i * 7 + 28);
  }
  EXPECT_EQ(a.compute_gradients(x, y).total, b.compute_gradients(x, y).total);
  EXPECT_NE(a.parameters().at("manifold").grad.vec(), b.parameters().at("manifold").grad.vec());
  EXPECT_EQ(a.parameters().at("macro.head.weight").grad.vec(), b.parameters().at("macro.head.weight").grad.vec());
}

TEST(LatentGrad, ZeroAtTarget) {
  auto z = random_tensor({2, 3, 8}, 1);
  for (double v : latent_grad_norm(z, z, 0.5)) EXPECT_EQ(v, 0.0);
}

TEST(LatentGrad, MatchesFiniteDifferencesOfTheImplementedLoss) {
  Tensor<double> zh({2, 3, 8}), zt({2, 3, 8});
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : zh.vec()) v = n(rng);
  for (auto& v : zt.vec()) v = n(rng);
  const double lambda = 0.5;
  auto loss = [&](const Tensor<double>& a) {
    nn::Graph<double> g;
    return lambda * g.value(nn::mse(g, g.constant(a), g.constant(zt)))[0];
  };
  const auto analytic = latent_grad_norm(zh, zt, lambda);
  const double h = 1e-5;
  for (std::size_t r = 0; r < 6; ++r) {
    double sq = 0;
    for (std::size_t k = 0; k < 8; ++k) {
      auto up = zh, down = zh;
      up[r * 8 + k] += h;
      down[r * 8 + k] -= h;
      const double d = (loss(up) - loss(down)) / (2 * h);
      sq += d * d;
    }
    EXPECT_NEAR(analytic[r], std::sqrt(sq), 1e-6 * std::sqrt(sq));
  }
}

TEST(LatentGrad, BoundedAndRestorative) {
  const std::size_t T = 4, D = 32, W = 8;
  auto zh = random_tensor({1, T, D}, 2), zt = random_tensor({1, T, D}, 3);
  auto clamp_norm = [&](Tensor<float>& t, float bound) {
    for (std::size_t r = 0; r < T; ++r) {
      auto row = t.row(r);
      const float nr = l2_norm<float>(row);
      if (nr > bound)
        for (auto& v : row) v *= bound / nr;
    }
  };
  zh.reshape({T, D});
  zt.reshape({T, D});
  clamp_norm(zh, 2.0f * std::sqrt(float(W)));
  clamp_norm(zt, std::sqrt(float(W)));
  const double lambda = 0.5;
  const double bound = 2.0 * lambda / (T * D) * 3.0 * std::sqrt(double(W));
  for (double g : latent_grad_norm(zh, zt, lambda)) EXPECT_LE(g, bound * (1 + 1e-6));

  // One gradient step of size 0.1 on the per-element gradient shrinks the gap.
  auto dist = [&](const Tensor<float>& a) {
    double s = 0;
    for (std::size_t k = 0; k < a.numel(); ++k) s += (a[k] - zt[k]) * (a[k] - zt[k]);
    return std::sqrt(s);
  };
  auto stepped = zh;
  const double c = 2.0 * lambda / static_cast<double>(zh.numel());
  for (std::size_t k = 0; k < zh.numel(); ++k) stepped[k] -= static_cast<float>(0.1 * c * (zh[k] - zt[k]));
  EXPECT_LT(dist(stepped), dist(zh));
}

TEST(Invariants, NormFloorAndOptionalCap) {
  auto c = small_config();
  c.cap_logit_scale = true;
  HoloByteModel<float> m(c, 3);
  auto& rows = m.parameters().at("manifold").values;
  for (auto& v : rows.row(42)) v = 0.0f;
  m.parameters().at("logit_scale").values[0] = 9.0f;
  m.enforce_invariants();
  EXPECT_GE(l2_norm<float>(rows.row(42)), kNormFloor);
  EXPECT_NEAR(std::exp(m.parameters().at("logit_scale").values[0]), 100.0f, 1e-3f);
}

TEST(Generate, GreedyIsDeterministicAndSized) {
  HoloByteModel<float> m(small_config(), 21);
  std::vector<std::uint8_t> prompt{'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h'};
  auto a = m.generate(prompt, 3, 0.0, 1);
  auto b = m.generate(prompt, 3, 0.0, 99);
  EXPECT_EQ(a.size(), 12u);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(m.generate(prompt, 0, 0.0, 1).empty());
}

TEST(Generate, SampledIsSeedReproducible) {
  HoloByteModel<float> m(small_config(), 21);
  std::vector<std::uint8_t> prompt(4, 'x');
  EXPECT_EQ(m.generate(prompt, 4, 1.0, 5), m.generate(prompt, 4, 1.0, 5));
}

TEST(Generate, RejectsBadArguments) {
  HoloByteModel<float> m(small_config(), 21);
  EXPECT_THROW(m.generate({}, 1, 0.0, 0), Error);
  std::vector<std::uint8_t> ragged{'a', 'b', 'c'};
  EXPECT_THROW(m.generate(ragged, 1, 0.0, 0), Error);
  std::vector<std::uint8_t> ok(4, 'a');
  EXPECT_THROW(m.generate(ok, 1, -0.5, 0), Error);
}

TEST(Generate, SlidesPastTheContextLimit) {
  HoloByteModel<float> m(small_config(16, 4, 2), 21);
  std::vector<std::uint8_t> prompt(8, 'q');
  EXPECT_EQ(m.generate(prompt, 3, 0.0, 0).size(), 12u);
}

TEST(Generate, PaddedStepwiseDecodingMatchesTeacherForcing) {
  HoloByteModel<float> m(small_config(), 23);
  std::vector<std::uint8_t> prompt{'t', 'h', 'e', ' ', 'c', 'a', 't', ' '};
  std::vector<GenerationStep<float>> trace;
  auto out = m.generate(prompt, 3, 0.0, 0, &trace);
  ASSERT_EQ(trace.size(), 12u);

  std::vector<std::uint8_t> stream(prompt);
  stream.insert(stream.end(), out.begin(), out.end());
  const std::size_t chunks = stream.size() / 4;
  ByteBatch x(1, chunks - 1, 4), y(1, chunks - 1, 4);
  std::copy(stream.begin(), stream.end() - 4, x.bytes.begin());
  std::copy(stream.begin() + 4, stream.end(), y.bytes.begin());
  const auto logits = m.forward_loss(x, y).second.logits;
  double worst = 0;
  for (const auto& s : trace) {
    const std::size_t t = s.chunk - 1;
    for (std::size_t k = 0; k < 256; ++k)
      worst = std::max(worst, static_cast<double>(std::abs(logits[(t * 4 + s.step) * 256 + k] - s.logits[k])));
  }
  EXPECT_LT(worst, 1e-4);
}
