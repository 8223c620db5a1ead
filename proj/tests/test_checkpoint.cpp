#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "holobyte/checkpoint.hpp"

using namespace holobyte;
namespace fs = std::filesystem;

namespace {

ModelConfig cfg16() {
  ModelConfig c;
  c.dim = 16;
  c.chunk = 4;
  c.max_chunks = 3;
  c.macro_layers = 1;
  c.heads = 2;
  return c;
}

ByteBatch batch(std::uint64_t seed) {
  ByteBatch b(2, 3, 4);
  std::mt19937_64 rng(seed);
  for (auto& v : b.bytes) v = static_cast<std::uint8_t>(rng() & 0xff);
  return b;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "holobyte_ckpt_tests";
  fs::create_directories(dir);
  return dir / name;
}

void train_steps(HoloByteModel<float>& m, nn::OptimizerState<float>& opt, int steps) {
  for (int s = 0; s < steps; ++s) {
    m.compute_gradients(batch(10 + s), batch(20 + s));
    nn::adamw_step(m.parameters(), opt);
  }
}

std::vector<std::vector<float>> snapshot(const HoloByteModel<float>& m) {
  std::vector<std::vector<float>> out;
  for (std::size_t i = 0; i < m.parameters().size(); ++i) out.push_back(m.parameters()[i].values.vec());
  return out;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
  HoloByteModel<float> a(cfg16(), 1);
  nn::OptimizerState<float> oa;
  train_steps(a, oa, 3);
  const auto path = scratch("roundtrip.ckpt");
  save_checkpoint(path, a, oa);

  HoloByteModel<float> b(cfg16(), 999);
  nn::OptimizerState<float> ob;
  EXPECT_EQ(load_checkpoint(path, b, ob), 3u);
  EXPECT_EQ(ob.step, 3u);
  EXPECT_EQ(snapshot(a), snapshot(b));
  for (const auto& [id, mom] : oa.moments) {
    EXPECT_EQ(mom.m.vec(), ob.moments.at(id).m.vec()) << id;
    EXPECT_EQ(mom.v.vec(), ob.moments.at(id).v.vec()) << id;
  }

  const auto la = a.forward_loss(batch(1), batch(2)).first;
  const auto lb = b.forward_loss(batch(1), batch(2)).first;
  EXPECT_EQ(la.ce, lb.ce);
  EXPECT_EQ(la.latent, lb.latent);
  EXPECT_EQ(la.total, lb.total);

  train_steps(a, oa, 1);
  train_steps(b, ob, 1);
  EXPECT_EQ(snapshot(a), snapshot(b));
}

TEST(Checkpoint, HeaderCarriesConfig) {
  HoloByteModel<float> a(cfg16(), 1);
  nn::OptimizerState<float> oa;
  oa.step = 17;
  const auto path = scratch("header.ckpt");
  save_checkpoint(path, a, oa);
  auto h = read_checkpoint_header(path);
  EXPECT_EQ(h.version, kCheckpointVersion);
  EXPECT_EQ(h.step, 17u);
  EXPECT_EQ(h.config.canonical(), cfg16().canonical());
  EXPECT_EQ(h.digest, config_digest(cfg16()));
}

TEST(Checkpoint, ConfigTextRoundTrips) {
  auto c = cfg16();
  c.latent_weight = 0.25;
  c.micro_ffn = false;
  c.stop_target_grad = true;
  c.cap_logit_scale = true;
  auto back = parse_model_config(serialize_model_config(c));
  EXPECT_EQ(back.canonical(), c.canonical());
  EXPECT_EQ(back.latent_weight, 0.25);
  EXPECT_TRUE(back.stop_target_grad);
  EXPECT_TRUE(back.cap_logit_scale);
}

TEST(Checkpoint, TruncationIsDetectedWithoutPartialLoad) {
  HoloByteModel<float> a(cfg16(), 1);
  nn::OptimizerState<float> oa;
  train_steps(a, oa, 1);
  const auto path = scratch("truncated.ckpt");
  save_checkpoint(path, a, oa);
  fs::resize_file(path, fs::file_size(path) / 2);

  HoloByteModel<float> b(cfg16(), 5);
  nn::OptimizerState<float> ob;
  const auto before = snapshot(b);
  try {
    load_checkpoint(path, b, ob);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Checksum);
  }
  EXPECT_EQ(snapshot(b), before);
  EXPECT_EQ(ob.step, 0u);
  EXPECT_TRUE(ob.moments.empty());
}

TEST(Checkpoint, FlippedByteIsDetected) {
  HoloByteModel<float> a(cfg16(), 1);
  nn::OptimizerState<float> oa;
  const auto path = scratch("flipped.ckpt");
  save_checkpoint(path, a, oa);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(fs::file_size(path) / 2));
    char c = 0;
    f.read(&c, 1);
    f.seekp(static_cast<std::streamoff>(fs::file_size(path) / 2));
    c = static_cast<char>(c ^ 0x10);
    f.write(&c, 1);
  }
  HoloByteModel<float> b(cfg16(), 1);
  nn::OptimizerState<float> ob;
  try {
    load_checkpoint(path, b, ob);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Checksum);
  }
}

TEST(Checkpoint, MismatchedDimensionNamesBoth) {
  HoloByteModel<float> a(cfg16(), 1);
  nn::OptimizerState<float> oa;
  const auto path = scratch("mismatch.ckpt");
  save_checkpoint(path, a, oa);
  auto other = cfg16();
  other.dim = 32;
  HoloByteModel<float> b(other, 1);
  nn::OptimizerState<float> ob;
  try {
    load_checkpoint(path, b, ob);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConfigMismatch);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("dim=16"), std::string::npos) << msg;
    EXPECT_NE(msg.find("dim=32"), std::string::npos) << msg;
  }
}

TEST(Checkpoint, MissingFileAndBadMagic) {
  HoloByteModel<float> b(cfg16(), 1);
  nn::OptimizerState<float> ob;
  try {
    load_checkpoint(scratch("does_not_exist.ckpt"), b, ob);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
    EXPECT_NE(std::string(e.what()).find("does_not_exist.ckpt"), std::string::npos);
  }
  const auto junk = scratch("junk.ckpt");
  std::ofstream(junk, std::ios::binary) << "not a checkpoint at all, just some text";
  EXPECT_THROW(load_checkpoint(junk, b, ob), Error);
}

TEST(Checkpoint, UnwritablePathIsIoError) {
  HoloByteModel<float> a(cfg16(), 1);
  nn::OptimizerState<float> oa;
  const auto blocker = scratch("blocker");
  std::ofstream(blocker) << "x";
  try {
    save_checkpoint(blocker / "sub" / "model.ckpt", a, oa);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
}
