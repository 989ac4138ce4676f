#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ase/common.hpp"
#include "ase/dataset.hpp"
#include "ase/exit_schedule.hpp"
#include "ase/io.hpp"
#include "ase/metrics.hpp"
#include "ase/network.hpp"
#include "ase/noise_schedule.hpp"
#include "ase/samplers.hpp"
#include "ase/train.hpp"

namespace ase {

using Json = nlohmann::json;

namespace detail {

inline void require_object(const Json& j, const std::string& ctx) {
  if (!j.is_object())
    throw ConfigError("config: '" + ctx + "' must be an object");
}

// Strict schema: any key outside the allowed set is an error, named in the
// message so typos in sweep configs surface immediately.
inline void check_keys(const Json& j, const std::set<std::string>& allowed,
                       const std::string& ctx) {
  require_object(j, ctx);
  for (const auto& [key, value] : j.items())
    if (!allowed.contains(key))
      throw ConfigError("config: unknown key '" + key + "' in " + ctx);
}

template <class T>
T get_or(const Json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("config: bad value type for '" + key + "'");
  }
}

template <class T>
T get_req(const Json& j, const std::string& key, const std::string& ctx) {
  if (!j.contains(key))
    throw ConfigError("config: missing key '" + key + "' in " + ctx);
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("config: bad value type for '" + key + "' in " + ctx);
  }
}

}  // namespace detail

// Exit-schedule reference: either a named schedule (catalog entry,
// "all-keep", "noise-easy", "data-easy") or an explicit per-interval row.
struct ExitSpec {
  bool present = false;
  std::string name;
  std::vector<int> blocks;  // explicit row; empty means resolve by name
  std::string arch;         // row binding: "stack" or "u_skip"
  bool scale_to_network = true;
  int min_blocks = 1;  // floor for noise-easy / data-easy rows
};

struct ExperimentSpec {
  bool present = false;
  std::string kind;  // tradeoff | negative_transfer | ablation
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> schedules;
  std::vector<std::vector<int>> ablation_rows;
  std::vector<int> mixed_intervals;
  std::vector<int> step_counts;
  int expert_iterations = 500;
  int further_iterations = 1000;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  Json dataset_json;
  NetworkConfig network;
  NoiseSpec noise;
  ExitSpec exit_schedule;
  TrainConfig training;
  SamplerConfig sampler;
  MetricSpec metrics;
  ExperimentSpec experiment;
  std::string digest;  // content hash of the canonical config
};

namespace detail {

inline Dataset dataset_from_json(const Json& j) {
  check_keys(j, {"kind", "mean", "std", "modes", "radius", "means"},
             "dataset");
  std::string kind = get_req<std::string>(j, "kind", "dataset");
  if (kind == "gaussian") {
    std::vector<double> mean =
        get_req<std::vector<double>>(j, "mean", "dataset");
    Vec m(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i) m[i] = mean[i];
    return Dataset::gaussian(m, get_or<double>(j, "std", 1.0));
  }
  if (kind == "gmm_ring")
    return Dataset::gmm_ring(get_or<int>(j, "modes", 8),
                             get_or<double>(j, "radius", 1.0),
                             get_or<double>(j, "std", 0.1));
  if (kind == "checkerboard") return Dataset::checkerboard();
  if (kind == "tiny_blobs") {
    auto rows = get_req<std::vector<std::vector<double>>>(j, "means",
                                                          "dataset");
    std::vector<Vec> means;
    for (const auto& r : rows) {
      Vec m(r.size());
      for (std::size_t i = 0; i < r.size(); ++i) m[i] = r[i];
      means.push_back(m);
    }
    return Dataset::tiny_blobs(means, get_or<double>(j, "std", 0.15));
  }
  throw ConfigError("config: unknown dataset kind '" + kind + "'");
}

inline NetworkConfig network_from_json(const Json& j) {
  check_keys(j,
             {"topology", "n_blocks", "n_encoder", "n_decoder", "width",
              "in_dim", "time_embed_dim", "learned_variance"},
             "network");
  NetworkConfig cfg;
  std::string topo = get_or<std::string>(j, "topology", "stack");
  if (topo == "stack")
    cfg.topology = Topology::kStack;
  else if (topo == "u_skip")
    cfg.topology = Topology::kUSkip;
  else
    throw ConfigError("config: unknown topology '" + topo + "'");
  cfg.n_blocks = get_or<int>(j, "n_blocks", 8);
  cfg.n_encoder = get_or<int>(j, "n_encoder", 0);
  cfg.n_decoder = get_or<int>(j, "n_decoder", 0);
  cfg.width = get_or<int>(j, "width", 64);
  cfg.in_dim = get_or<int>(j, "in_dim", 2);
  cfg.time_embed_dim = get_or<int>(j, "time_embed_dim", 16);
  cfg.learned_variance = get_or<bool>(j, "learned_variance", false);
  cfg.validate();
  return cfg;
}

inline NoiseSpec noise_from_json(const Json& j) {
  check_keys(j, {"kind", "T", "beta_start", "beta_end", "sigma"},
             "noise_schedule");
  if (get_or<std::string>(j, "kind", "linear") != "linear")
    throw ConfigError("config: only the linear noise schedule is supported");
  NoiseSpec spec;
  spec.T = get_or<int>(j, "T", 1000);
  spec.beta_start = get_or<double>(j, "beta_start", 1e-4);
  spec.beta_end = get_or<double>(j, "beta_end", 0.02);
  std::string sig = get_or<std::string>(j, "sigma", "posterior");
  if (sig == "posterior")
    spec.sigma = SigmaKind::kPosterior;
  else if (sig == "beta")
    spec.sigma = SigmaKind::kBeta;
  else
    throw ConfigError("config: sigma must be 'posterior' or 'beta'");
  return spec;
}

inline ExitSpec exit_from_json(const Json& j) {
  check_keys(j, {"name", "blocks", "arch", "scale_to_network", "min_blocks"},
             "exit_schedule");
  ExitSpec spec;
  spec.present = true;
  spec.name = get_or<std::string>(j, "name", "");
  spec.blocks = get_or<std::vector<int>>(j, "blocks", {});
  spec.arch = get_or<std::string>(j, "arch", "");
  spec.scale_to_network = get_or<bool>(j, "scale_to_network", true);
  spec.min_blocks = get_or<int>(j, "min_blocks", 1);
  if (spec.name.empty() && spec.blocks.empty())
    throw ConfigError("config: exit_schedule needs 'name' or 'blocks'");
  return spec;
}

inline TrainConfig training_from_json(const Json& j) {
  check_keys(j,
             {"iterations", "batch_size", "lr", "weight_decay", "ema_rate",
              "cycle_c", "lambda_boost", "noise_region_start", "vlb_weight",
              "cosine_lr", "t_min", "t_max", "use_plateau", "plateau_window",
              "plateau_rel_tol", "eval_every", "eval_batch", "log_every"},
             "training");
  TrainConfig cfg;
  cfg.iterations = get_or<int>(j, "iterations", cfg.iterations);
  cfg.batch_size = get_or<int>(j, "batch_size", cfg.batch_size);
  cfg.lr = get_or<double>(j, "lr", cfg.lr);
  cfg.weight_decay = get_or<double>(j, "weight_decay", cfg.weight_decay);
  cfg.ema_rate = get_or<double>(j, "ema_rate", cfg.ema_rate);
  cfg.cycle_c = get_or<int>(j, "cycle_c", cfg.cycle_c);
  cfg.lambda_boost = get_or<double>(j, "lambda_boost", cfg.lambda_boost);
  cfg.noise_region_start =
      get_or<double>(j, "noise_region_start", cfg.noise_region_start);
  cfg.vlb_weight = get_or<double>(j, "vlb_weight", cfg.vlb_weight);
  cfg.cosine_lr = get_or<bool>(j, "cosine_lr", cfg.cosine_lr);
  cfg.t_min = get_or<int>(j, "t_min", cfg.t_min);
  cfg.t_max = get_or<int>(j, "t_max", cfg.t_max);
  cfg.use_plateau = get_or<bool>(j, "use_plateau", cfg.use_plateau);
  cfg.plateau_window = get_or<int>(j, "plateau_window", cfg.plateau_window);
  cfg.plateau_rel_tol =
      get_or<double>(j, "plateau_rel_tol", cfg.plateau_rel_tol);
  cfg.eval_every = get_or<int>(j, "eval_every", cfg.eval_every);
  cfg.eval_batch = get_or<int>(j, "eval_batch", cfg.eval_batch);
  cfg.log_every = get_or<int>(j, "log_every", cfg.log_every);
  if (cfg.iterations < 0 || cfg.batch_size < 1)
    throw ConfigError("config: training iterations/batch_size out of range");
  if (cfg.ema_rate < 0.0 || cfg.ema_rate > 1.0)
    throw ConfigError("config: ema_rate outside [0, 1]");
  if (cfg.lambda_boost < 1.0)
    throw ConfigError("config: lambda_boost must be >= 1");
  return cfg;
}

inline SamplerConfig sampler_from_json(const Json& j) {
  check_keys(j,
             {"kind", "n_steps", "eta", "grid", "batch", "langevin_step",
              "langevin_iters", "langevin_t"},
             "sampler");
  SamplerConfig cfg;
  std::string kind = get_or<std::string>(j, "kind", "ddpm");
  if (kind == "ddpm")
    cfg.kind = SamplerKind::kDdpm;
  else if (kind == "ddim")
    cfg.kind = SamplerKind::kDdim;
  else if (kind == "em")
    cfg.kind = SamplerKind::kEm;
  else if (kind == "langevin")
    cfg.kind = SamplerKind::kLangevin;
  else
    throw ConfigError("config: unknown sampler kind '" + kind + "'");
  cfg.n_steps = get_or<int>(j, "n_steps", cfg.n_steps);
  cfg.eta = get_or<double>(j, "eta", cfg.eta);
  std::string grid = get_or<std::string>(j, "grid", "uniform");
  if (grid == "uniform")
    cfg.grid = StepGrid::kUniform;
  else if (grid == "quadratic")
    cfg.grid = StepGrid::kQuadratic;
  else
    throw ConfigError("config: grid must be 'uniform' or 'quadratic'");
  cfg.batch = get_or<int>(j, "batch", cfg.batch);
  cfg.langevin_step = get_or<double>(j, "langevin_step", cfg.langevin_step);
  cfg.langevin_iters = get_or<int>(j, "langevin_iters", cfg.langevin_iters);
  cfg.langevin_t = get_or<int>(j, "langevin_t", cfg.langevin_t);
  cfg.validate();
  return cfg;
}

inline MetricSpec metrics_from_json(const Json& j) {
  check_keys(j, {"n_proj", "sample_size"}, "metrics");
  MetricSpec spec;
  spec.n_proj = get_or<int>(j, "n_proj", spec.n_proj);
  spec.sample_size = get_or<int>(j, "sample_size", spec.sample_size);
  if (spec.n_proj < 1 || spec.sample_size < 2)
    throw ConfigError("config: metrics n_proj/sample_size out of range");
  return spec;
}

inline ExperimentSpec experiment_from_json(const Json& j) {
  check_keys(j,
             {"kind", "seeds", "schedules", "ablation_rows",
              "mixed_intervals", "step_counts", "expert_iterations",
              "further_iterations"},
             "experiment");
  ExperimentSpec spec;
  spec.present = true;
  spec.kind = get_req<std::string>(j, "kind", "experiment");
  if (spec.kind != "tradeoff" && spec.kind != "negative_transfer" &&
      spec.kind != "ablation")
    throw ConfigError("config: unknown experiment kind '" + spec.kind + "'");
  spec.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", {1});
  spec.schedules = get_or<std::vector<std::string>>(j, "schedules", {});
  spec.ablation_rows =
      get_or<std::vector<std::vector<int>>>(j, "ablation_rows", {});
  spec.mixed_intervals = get_or<std::vector<int>>(j, "mixed_intervals", {});
  spec.step_counts = get_or<std::vector<int>>(j, "step_counts", {});
  spec.expert_iterations =
      get_or<int>(j, "expert_iterations", spec.expert_iterations);
  spec.further_iterations =
      get_or<int>(j, "further_iterations", spec.further_iterations);
  return spec;
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: JSON parse failed: ") + e.what());
  }
  detail::check_keys(j,
                     {"seed", "output_dir", "dataset", "network",
                      "noise_schedule", "exit_schedule", "training",
                      "sampler", "metrics", "experiment"},
                     "top level");
  RunConfig cfg;
  cfg.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
  cfg.output_dir = detail::get_or<std::string>(j, "output_dir", "runs");
  if (j.contains("dataset")) {
    detail::dataset_from_json(j.at("dataset"));  // validate now
    cfg.dataset_json = j.at("dataset");
  }
  if (j.contains("network"))
    cfg.network = detail::network_from_json(j.at("network"));
  if (j.contains("noise_schedule"))
    cfg.noise = detail::noise_from_json(j.at("noise_schedule"));
  if (j.contains("exit_schedule"))
    cfg.exit_schedule = detail::exit_from_json(j.at("exit_schedule"));
  if (j.contains("training"))
    cfg.training = detail::training_from_json(j.at("training"));
  if (j.contains("sampler"))
    cfg.sampler = detail::sampler_from_json(j.at("sampler"));
  if (j.contains("metrics"))
    cfg.metrics = detail::metrics_from_json(j.at("metrics"));
  if (j.contains("experiment"))
    cfg.experiment = detail::experiment_from_json(j.at("experiment"));
  cfg.digest = hex64(fnv1a64(j.dump()));
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_file_bytes(path));
}

inline Dataset build_dataset(const RunConfig& cfg) {
  if (cfg.dataset_json.is_null())
    throw ConfigError("config: missing 'dataset' section");
  return detail::dataset_from_json(cfg.dataset_json);
}

// Resolves an exit-schedule reference against the architecture it will run
// on; catalog rows are proportionally rescaled unless scaling is disabled.
inline ExitSchedule resolve_schedule(const ExitSpec& spec,
                                     const ArchShape& arch) {
  if (!spec.blocks.empty()) {
    Topology topo;
    if (spec.arch == "stack" || spec.arch.empty())
      topo = Topology::kStack;
    else if (spec.arch == "u_skip")
      topo = Topology::kUSkip;
    else
      throw ConfigError("exit_schedule: unknown arch '" + spec.arch + "'");
    if (spec.arch.empty()) topo = arch.topology;
    ExitSchedule s = custom_schedule(
        spec.name.empty() ? "custom" : spec.name, spec.blocks, topo);
    s.validate(arch);
    return s;
  }
  if (spec.name == "all-keep") return all_keep_schedule(arch);
  if (spec.name == "noise-easy")
    return noise_easy_schedule(arch.block_limit(), spec.min_blocks,
                               arch.topology);
  if (spec.name == "data-easy")
    return data_easy_schedule(arch.block_limit(), spec.min_blocks,
                              arch.topology);
  ExitSchedule s = make_dn_schedule(spec.name);  // throws CatalogError
  if (s.arch_binding != arch.topology)
    throw ScheduleBindingError("exit_schedule '" + spec.name +
                               "' binds to a different architecture");
  int ref_limit = catalog_arch(s.arch_binding).block_limit();
  if (spec.scale_to_network && ref_limit != arch.block_limit())
    s = scale_schedule(s, ref_limit, arch.block_limit());
  s.validate(arch);
  return s;
}

}  // namespace ase
