#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "ase/common.hpp"
#include "ase/io.hpp"
#include "ase/network.hpp"
#include "ase/noise_schedule.hpp"

namespace ase {

// Checkpoint file layout:
//   bytes 0..7   magic "ASECKPT1"
//   bytes 8..11  little-endian u32, manifest length in bytes
//   manifest     JSON: format version, network config, noise-schedule
//                parameters, and the tensor index (name/shape/dtype/offset)
//   payload      little-endian 32-bit floats, row-major, tensors in
//                manifest order with contiguous offsets
inline constexpr char kCheckpointMagic[] = "ASECKPT1";

namespace detail {

inline nlohmann::json network_config_json(const NetworkConfig& cfg) {
  return {
      {"topology", topology_name(cfg.topology)},
      {"n_blocks", cfg.n_blocks},
      {"n_encoder", cfg.n_encoder},
      {"n_decoder", cfg.n_decoder},
      {"width", cfg.width},
      {"in_dim", cfg.in_dim},
      {"time_embed_dim", cfg.time_embed_dim},
      {"learned_variance", cfg.learned_variance},
  };
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig cfg;
  std::string topo = j.at("topology").get<std::string>();
  if (topo == "stack")
    cfg.topology = Topology::kStack;
  else if (topo == "u_skip")
    cfg.topology = Topology::kUSkip;
  else
    throw IoError("checkpoint: unknown topology '" + topo + "'");
  cfg.n_blocks = j.at("n_blocks").get<int>();
  cfg.n_encoder = j.at("n_encoder").get<int>();
  cfg.n_decoder = j.at("n_decoder").get<int>();
  cfg.width = j.at("width").get<int>();
  cfg.in_dim = j.at("in_dim").get<int>();
  cfg.time_embed_dim = j.at("time_embed_dim").get<int>();
  cfg.learned_variance = j.at("learned_variance").get<bool>();
  return cfg;
}

inline nlohmann::json noise_spec_json(const NoiseSpec& spec) {
  return {
      {"kind", "linear"},
      {"T", spec.T},
      {"beta_start", spec.beta_start},
      {"beta_end", spec.beta_end},
      {"sigma", spec.sigma == SigmaKind::kPosterior ? "posterior" : "beta"},
  };
}

inline NoiseSpec noise_spec_from_json(const nlohmann::json& j) {
  if (j.at("kind").get<std::string>() != "linear")
    throw IoError("checkpoint: unknown noise schedule kind");
  NoiseSpec spec;
  spec.T = j.at("T").get<int>();
  spec.beta_start = j.at("beta_start").get<double>();
  spec.beta_end = j.at("beta_end").get<double>();
  std::string sig = j.at("sigma").get<std::string>();
  spec.sigma = sig == "beta" ? SigmaKind::kBeta : SigmaKind::kPosterior;
  return spec;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ScoreNetwork& net,
                            const NoiseSpec& noise) {
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["network"] = detail::network_config_json(net.config());
  manifest["noise_schedule"] = detail::noise_spec_json(noise);
  nlohmann::json tensors = nlohmann::json::array();
  std::int64_t offset = 0;
  for (std::size_t i = 0; i < net.params().tensors.size(); ++i) {
    const Mat& m = net.params().tensors[i];
    std::int64_t nbytes = 4 * m.size();
    tensors.push_back({{"name", net.param_names()[i]},
                       {"shape", {m.rows(), m.cols()}},
                       {"dtype", "f32"},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
  }
  manifest["tensors"] = std::move(tensors);

  std::string manifest_str = manifest.dump();
  std::string bytes(kCheckpointMagic, 8);
  std::uint32_t len = static_cast<std::uint32_t>(manifest_str.size());
  for (int s = 0; s < 32; s += 8)
    bytes.push_back(static_cast<char>((len >> s) & 0xFF));
  bytes += manifest_str;
  bytes.reserve(bytes.size() + static_cast<std::size_t>(offset));
  for (const Mat& m : net.params().tensors)
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        append_f32_le(bytes, static_cast<float>(m(r, c)));
  write_file_bytes(path, bytes);
}

struct LoadedCheckpoint {
  ScoreNetwork net;
  NoiseSpec noise;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::string bytes = read_file_bytes(path);
  if (bytes.size() < 12 || bytes.compare(0, 8, kCheckpointMagic, 8) != 0)
    throw IoError("checkpoint '" + path + "': bad magic");
  std::uint32_t len = 0;
  for (int s = 0; s < 4; ++s)
    len |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(bytes[8 + s]))
           << (8 * s);
  if (bytes.size() < 12 + len)
    throw IoError("checkpoint '" + path + "': truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(12, len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path + "': manifest parse: " + e.what());
  }
  if (manifest.at("format_version").get<int>() != 1)
    throw IoError("checkpoint '" + path + "': unsupported format version");

  LoadedCheckpoint loaded{
      ScoreNetwork(detail::network_config_from_json(manifest.at("network")),
                   0),
      detail::noise_spec_from_json(manifest.at("noise_schedule"))};
  loaded.net.set_time_base(loaded.noise.T);

  const auto& tensors = manifest.at("tensors");
  auto& params = loaded.net.params();
  if (tensors.size() != params.tensors.size())
    throw IoError("checkpoint '" + path + "': tensor count mismatch");
  const char* payload = bytes.data() + 12 + len;
  std::size_t payload_size = bytes.size() - 12 - len;
  std::int64_t expect_offset = 0;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& tj = tensors[i];
    Mat& m = params.tensors[i];
    if (tj.at("name").get<std::string>() != loaded.net.param_names()[i])
      throw IoError("checkpoint '" + path + "': tensor name mismatch at " +
                    loaded.net.param_names()[i]);
    auto shape = tj.at("shape");
    if (shape[0].get<Eigen::Index>() != m.rows() ||
        shape[1].get<Eigen::Index>() != m.cols())
      throw IoError("checkpoint '" + path + "': tensor shape mismatch at " +
                    loaded.net.param_names()[i]);
    if (tj.at("dtype").get<std::string>() != "f32")
      throw IoError("checkpoint '" + path + "': unsupported dtype");
    std::int64_t offset = tj.at("offset").get<std::int64_t>();
    std::int64_t nbytes = tj.at("nbytes").get<std::int64_t>();
    if (offset != expect_offset || nbytes != 4 * m.size())
      throw IoError("checkpoint '" + path + "': non-contiguous tensor index");
    expect_offset += nbytes;
    if (static_cast<std::size_t>(offset + nbytes) > payload_size)
      throw IoError("checkpoint '" + path + "': payload too short");
    const char* p = payload + offset;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        m(r, c) = read_f32_le(p);
        p += 4;
      }
  }
  if (static_cast<std::size_t>(expect_offset) != payload_size)
    throw IoError("checkpoint '" + path + "': payload length mismatch");
  return loaded;
}

}  // namespace ase
