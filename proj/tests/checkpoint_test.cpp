#include "ase/checkpoint.hpp"

#include <cstdio>
#include <filesystem>

#include <gtest/gtest.h>

namespace ase {
namespace {

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("ase_ckpt_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::string path(const std::string& name) { return (dir_ / name).string(); }
  std::filesystem::path dir_;
};

ScoreNetwork make_net() {
  NetworkConfig cfg;
  cfg.topology = Topology::kUSkip;
  cfg.n_encoder = 2;
  cfg.n_decoder = 2;
  cfg.width = 8;
  cfg.in_dim = 2;
  cfg.time_embed_dim = 4;
  ScoreNetwork net(cfg, 123);
  return net;
}

TEST_F(CheckpointTest, RoundTripPreservesParameters) {
  ScoreNetwork net = make_net();
  NoiseSpec spec{500, 2e-4, 0.015, SigmaKind::kBeta};
  save_checkpoint(path("a.ckpt"), net, spec);
  LoadedCheckpoint loaded = load_checkpoint(path("a.ckpt"));
  EXPECT_EQ(loaded.noise.T, 500);
  EXPECT_EQ(loaded.noise.beta_start, 2e-4);
  EXPECT_EQ(loaded.noise.sigma, SigmaKind::kBeta);
  EXPECT_EQ(loaded.net.time_base(), 500);
  // parameters survive up to the f32 payload precision
  for (std::size_t i = 0; i < net.params().tensors.size(); ++i) {
    const Mat& a = net.params().tensors[i];
    const Mat& b = loaded.net.params().tensors[i];
    for (Eigen::Index r = 0; r < a.rows(); ++r)
      for (Eigen::Index c = 0; c < a.cols(); ++c)
        EXPECT_EQ(static_cast<float>(a(r, c)), b(r, c));
  }
}

TEST_F(CheckpointTest, SaveLoadSaveIsByteIdentical) {
  ScoreNetwork net = make_net();
  NoiseSpec spec;
  save_checkpoint(path("a.ckpt"), net, spec);
  LoadedCheckpoint loaded = load_checkpoint(path("a.ckpt"));
  save_checkpoint(path("b.ckpt"), loaded.net, loaded.noise);
  EXPECT_EQ(read_file_bytes(path("a.ckpt")), read_file_bytes(path("b.ckpt")));
}

TEST_F(CheckpointTest, RejectsCorruptFiles) {
  EXPECT_THROW(load_checkpoint(path("missing.ckpt")), IoError);
  write_file_bytes(path("bad.ckpt"), "NOTACKPTxxxxxxxxxxxx");
  EXPECT_THROW(load_checkpoint(path("bad.ckpt")), IoError);
  // valid magic but truncated payload
  ScoreNetwork net = make_net();
  save_checkpoint(path("c.ckpt"), net, NoiseSpec{});
  std::string bytes = read_file_bytes(path("c.ckpt"));
  write_file_bytes(path("trunc.ckpt"), bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(load_checkpoint(path("trunc.ckpt")), IoError);
}

TEST_F(CheckpointTest, ManifestOffsetsAreContiguous) {
  ScoreNetwork net = make_net();
  save_checkpoint(path("a.ckpt"), net, NoiseSpec{});
  std::string bytes = read_file_bytes(path("a.ckpt"));
  std::uint32_t len = 0;
  for (int s = 0; s < 4; ++s)
    len |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(bytes[8 + s]))
           << (8 * s);
  nlohmann::json manifest = nlohmann::json::parse(bytes.substr(12, len));
  std::int64_t offset = 0, total = 0;
  for (const auto& t : manifest.at("tensors")) {
    EXPECT_EQ(t.at("offset").get<std::int64_t>(), offset);
    offset += t.at("nbytes").get<std::int64_t>();
    total += t.at("nbytes").get<std::int64_t>();
  }
  EXPECT_EQ(bytes.size(), 12 + len + static_cast<std::size_t>(total));
}

TEST_F(CheckpointTest, SampleFileRoundTrip) {
  Mat samples = Mat::Random(17, 3);
  write_samples(path("s.bin"), samples, "deadbeef00000000");
  SampleFile f = read_samples(path("s.bin"));
  EXPECT_EQ(f.digest, "deadbeef00000000");
  EXPECT_EQ(f.samples.rows(), 17);
  EXPECT_EQ(f.samples.cols(), 3);
  for (Eigen::Index i = 0; i < 17; ++i)
    for (Eigen::Index j = 0; j < 3; ++j)
      EXPECT_EQ(f.samples(i, j), static_cast<float>(samples(i, j)));
  EXPECT_THROW(read_samples(path("nope.bin")), IoError);
}

}  // namespace
}  // namespace ase
