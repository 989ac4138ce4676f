#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ase/common.hpp"
#include "ase/dataset.hpp"
#include "ase/exit_schedule.hpp"
#include "ase/io.hpp"
#include "ase/metrics.hpp"
#include "ase/network.hpp"
#include "ase/samplers.hpp"
#include "ase/train.hpp"

namespace ase {

// Serves a different model (and retained-block count) per time interval;
// used by the multi-expert and mixed-k configurations.
class CompositeModel {
 public:
  struct Binding {
    const ScoreNetwork* net = nullptr;
    int blocks = 0;  // 0 means the model's full depth
  };

  CompositeModel(std::vector<Binding> per_interval, int T)
      : per_interval_(std::move(per_interval)), T_(T) {
    if (per_interval_.empty())
      throw ConfigError("composite model: empty interval binding");
    for (const Binding& b : per_interval_)
      if (!b.net) throw ConfigError("composite model: missing model");
  }

  Mat estimate(const Mat& x, int t, int /*blocks*/) const {
    const Binding& b = binding_at(t);
    return b.net->estimate(x, t, depth(b));
  }
  std::int64_t flops(int t, int /*blocks*/) const {
    const Binding& b = binding_at(t);
    return b.net->flop_count(depth(b));
  }
  int block_limit() const {
    int lim = 0;
    for (const Binding& b : per_interval_)
      lim = std::max(lim, b.net->block_limit());
    return lim;
  }
  int dim() const { return per_interval_.front().net->dim(); }

 private:
  const Binding& binding_at(int t) const {
    return per_interval_[interval_of(
        t, T_, static_cast<int>(per_interval_.size()))];
  }
  static int depth(const Binding& b) {
    return b.blocks > 0 ? b.blocks : b.net->block_limit();
  }

  std::vector<Binding> per_interval_;
  int T_;
};

struct BenchRow {
  std::string schedule;
  double predicted_accel = 0.0;
  double flop_accel = 0.0;
  std::int64_t total_flops = 0;
  double sliced_wasserstein = 0.0;
  double gaussian_frechet = 0.0;
  double wall_time_s = 0.0;   // timing column
  double wall_accel = 0.0;    // timing column
};

namespace detail {

inline double median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

}  // namespace detail

// Times each schedule against the all-keep baseline on the same sampler
// configuration and scores sample quality against a fresh draw from the
// data distribution. Timing-bearing runs execute serially.
inline std::vector<BenchRow> bench_acceleration(
    const ScoreNetwork& net, const std::vector<ExitSchedule>& schedules,
    const SamplerConfig& sampler_cfg, const NoiseSchedule& ns,
    const Dataset& data, const MetricSpec& metrics, int repeats = 3) {
  if (repeats < 1) throw ConfigError("bench: repeats must be >= 1");
  ArchShape arch = ArchShape::of(net.config());
  for (const ExitSchedule& s : schedules) s.validate(arch);

  Rng ref_rng(derive_seed(sampler_cfg.seed, kStreamData));
  Mat reference = data.sample(metrics.sample_size, ref_rng);

  auto run_schedule = [&](const ExitSchedule* sched) {
    SampleResult first;
    std::vector<double> times;
    for (int r = 0; r < repeats; ++r) {
      SampleResult res = sample_loop(net, sched, sampler_cfg, ns);
      times.push_back(res.stats.total_time_s);
      if (r == 0) first = std::move(res);
    }
    first.stats.total_time_s = detail::median(times);
    return first;
  };

  ExitSchedule baseline = all_keep_schedule(arch);
  SampleResult base = run_schedule(&baseline);

  std::vector<BenchRow> rows;
  for (const ExitSchedule& sched : schedules) {
    SampleResult res = run_schedule(&sched);
    BenchRow row;
    row.schedule = sched.name;
    row.predicted_accel = predicted_acceleration(sched, arch);
    row.total_flops = res.stats.total_flops;
    row.flop_accel =
        1.0 - static_cast<double>(res.stats.total_flops) /
                  static_cast<double>(base.stats.total_flops);
    row.sliced_wasserstein = sliced_wasserstein(
        res.samples, reference, metrics.n_proj, sampler_cfg.seed);
    row.gaussian_frechet = gaussian_frechet(res.samples, reference).value;
    row.wall_time_s = res.stats.total_time_s;
    row.wall_accel = 1.0 - res.stats.total_time_s / base.stats.total_time_s;
    rows.push_back(row);
  }
  return rows;
}

struct TradeoffConfig {
  std::vector<ExitSchedule> schedules;
  TrainConfig finetune;
  std::vector<SamplerConfig> samplers;
  MetricSpec metrics;
  std::vector<std::uint64_t> seeds = {1};
};

struct TradeoffRow {
  std::string schedule;
  std::string sampler;
  std::uint64_t seed = 0;
  double predicted_accel = 0.0;
  double flop_accel = 0.0;
  double sliced_wasserstein = 0.0;
  double gaussian_frechet = 0.0;
  double wall_time_s = 0.0;  // timing column
};

// Per schedule: fine-tune from the pretrained model, then sample with each
// configured solver and score against fresh data draws. A baseline row runs
// the unmodified pretrained model.
inline std::vector<TradeoffRow> run_tradeoff_experiment(
    const ScoreNetwork& pretrained, const Dataset& data,
    const NoiseSchedule& ns, const TradeoffConfig& cfg) {
  ArchShape arch = ArchShape::of(pretrained.config());
  for (const ExitSchedule& s : cfg.schedules) s.validate(arch);
  std::vector<TradeoffRow> rows;

  for (std::uint64_t seed : cfg.seeds) {
    Rng ref_rng(derive_seed(seed, kStreamData, 77));
    Mat reference = data.sample(cfg.metrics.sample_size, ref_rng);

    auto evaluate = [&](const std::string& label, const ScoreNetwork& model,
                        const ExitSchedule* sched, double predicted) {
      for (std::size_t i = 0; i < cfg.samplers.size(); ++i) {
        SamplerConfig scfg = cfg.samplers[i];
        scfg.seed = derive_seed(seed, kStreamChain, 1000 + i);
        SampleResult res = sample_loop(model, sched, scfg, ns);
        ExitSchedule allkeep = all_keep_schedule(arch);
        SampleResult full = sample_loop(model, &allkeep, scfg, ns);
        TradeoffRow row;
        row.schedule = label;
        row.sampler = sampler_kind_name(scfg.kind) + "-" +
                      std::to_string(scfg.n_steps);
        row.seed = seed;
        row.predicted_accel = predicted;
        row.flop_accel =
            1.0 - static_cast<double>(res.stats.total_flops) /
                      static_cast<double>(full.stats.total_flops);
        row.sliced_wasserstein = sliced_wasserstein(
            res.samples, reference, cfg.metrics.n_proj, seed);
        row.gaussian_frechet =
            gaussian_frechet(res.samples, reference).value;
        row.wall_time_s = res.stats.total_time_s;
        rows.push_back(row);
      }
    };

    evaluate("baseline", pretrained, nullptr, 0.0);
    for (const ExitSchedule& sched : cfg.schedules) {
      ScoreNetwork tuned =
          finetune_ase(pretrained, &sched, data, ns, cfg.finetune, seed);
      evaluate(sched.name, tuned, &sched,
               predicted_acceleration(sched, arch));
    }
  }
  return rows;
}

struct NegativeTransferConfig {
  int k_intervals = 10;
  TrainConfig expert_train;
  TrainConfig further_train;
  TrainConfig ase_train;
  ExitSchedule ase_schedule;
  std::vector<int> mixed_intervals = {1, 3, 5, 7, 9};
  SamplerConfig sampler;
  MetricSpec metrics;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
};

struct NegativeTransferRow {
  std::string configuration;
  std::uint64_t seed = 0;
  double sliced_wasserstein = 0.0;
  double gaussian_frechet = 0.0;
};

// Probes task interference across time intervals: a shared baseline, a
// further-trained baseline, per-interval experts, and mixed-k rows where a
// single interval is served by the reduced fine-tuned model.
inline std::vector<NegativeTransferRow> run_negative_transfer_suite(
    const ScoreNetwork& pretrained, const Dataset& data,
    const NoiseSchedule& ns, const NegativeTransferConfig& cfg) {
  const int k_int = cfg.k_intervals;
  if (k_int < 1)
    throw ConfigError("negative transfer: k_intervals must be >= 1");
  for (int k : cfg.mixed_intervals)
    if (k < 0 || k >= k_int)
      throw ConfigError("negative transfer: mixed interval outside [0, K)");
  cfg.ase_schedule.validate(ArchShape::of(pretrained.config()));
  if (cfg.ase_schedule.intervals() != k_int)
    throw ConfigError("negative transfer: schedule interval count mismatch");

  std::vector<NegativeTransferRow> rows;
  for (std::uint64_t seed : cfg.seeds) {
    Rng ref_rng(derive_seed(seed, kStreamData, 78));
    Mat reference = data.sample(cfg.metrics.sample_size, ref_rng);
    SamplerConfig scfg = cfg.sampler;
    scfg.seed = derive_seed(seed, kStreamChain, 2000);

    auto score = [&](const std::string& label, const Mat& samples) {
      rows.push_back({label, seed,
                      sliced_wasserstein(samples, reference,
                                         cfg.metrics.n_proj, seed),
                      gaussian_frechet(samples, reference).value});
    };

    score("baseline", sample_loop(pretrained, nullptr, scfg, ns).samples);

    ScoreNetwork further = finetune_ase(pretrained, nullptr, data, ns,
                                        cfg.further_train, seed);
    score("further_trained",
          sample_loop(further, nullptr, scfg, ns).samples);

    std::vector<ScoreNetwork> experts;
    experts.reserve(k_int);
    for (int k = 0; k < k_int; ++k) {
      TrainConfig expert_cfg = cfg.expert_train;
      expert_cfg.t_min = k * ns.T / k_int + 1;
      expert_cfg.t_max = (k + 1) * ns.T / k_int;
      experts.push_back(finetune_ase(pretrained, nullptr, data, ns,
                                     expert_cfg,
                                     derive_seed(seed, kStreamInit, k)));
    }
    std::vector<CompositeModel::Binding> expert_bindings(k_int);
    for (int k = 0; k < k_int; ++k) expert_bindings[k] = {&experts[k], 0};
    CompositeModel multi_experts(expert_bindings, ns.T);
    score("multi_experts",
          sample_loop(multi_experts, nullptr, scfg, ns).samples);

    ScoreNetwork ase_model = finetune_ase(
        pretrained, &cfg.ase_schedule, data, ns, cfg.ase_train, seed);
    for (int k : cfg.mixed_intervals) {
      std::vector<CompositeModel::Binding> bindings(
          k_int, CompositeModel::Binding{&pretrained, 0});
      bindings[k] = {&ase_model, cfg.ase_schedule.blocks_per_interval[k]};
      CompositeModel mixed(bindings, ns.T);
      score("mixed_" + std::to_string(k),
            sample_loop(mixed, nullptr, scfg, ns).samples);
    }
  }
  return rows;
}

struct AblationConfig {
  std::vector<std::vector<int>> rows;  // must share the same total
  TrainConfig finetune;
  SamplerConfig sampler;               // ddim template; step counts vary
  std::vector<int> step_counts = {25, 50};
  MetricSpec metrics;
  std::uint64_t seed = 1;
};

struct AblationRow {
  std::string schedule;
  int n_steps = 0;
  double predicted_accel = 0.0;
  double sliced_wasserstein = 0.0;
  double gaussian_frechet = 0.0;
};

// Equal-budget schedule shapes: every row must drop the same total number
// of blocks; each is fine-tuned and evaluated under each solver step count.
inline std::vector<AblationRow> run_ablation_schedules(
    const ScoreNetwork& pretrained, const Dataset& data,
    const NoiseSchedule& ns, const AblationConfig& cfg) {
  if (cfg.rows.empty()) throw ConfigError("ablation: no schedule rows");
  ArchShape arch = ArchShape::of(pretrained.config());
  int total = std::accumulate(cfg.rows[0].begin(), cfg.rows[0].end(), 0);
  std::vector<ExitSchedule> schedules;
  for (std::size_t i = 0; i < cfg.rows.size(); ++i) {
    if (std::accumulate(cfg.rows[i].begin(), cfg.rows[i].end(), 0) != total)
      throw ConfigError("ablation: rows must share the same total");
    ExitSchedule s =
        custom_schedule("schedule-" + std::to_string(i + 1), cfg.rows[i],
                        arch.topology);
    s.validate(arch);
    schedules.push_back(std::move(s));
  }

  Rng ref_rng(derive_seed(cfg.seed, kStreamData, 79));
  Mat reference = data.sample(cfg.metrics.sample_size, ref_rng);
  std::vector<AblationRow> out;
  for (const ExitSchedule& sched : schedules) {
    ScoreNetwork tuned =
        finetune_ase(pretrained, &sched, data, ns, cfg.finetune, cfg.seed);
    for (int steps : cfg.step_counts) {
      SamplerConfig scfg = cfg.sampler;
      scfg.n_steps = steps;
      scfg.seed = derive_seed(cfg.seed, kStreamChain, 3000 + steps);
      SampleResult res = sample_loop(tuned, &sched, scfg, ns);
      out.push_back({sched.name, steps, predicted_acceleration(sched, arch),
                     sliced_wasserstein(res.samples, reference,
                                        cfg.metrics.n_proj, cfg.seed),
                     gaussian_frechet(res.samples, reference).value});
    }
  }
  return out;
}

// --- report emission -------------------------------------------------------

inline void write_bench_report(const std::string& csv_path,
                               const std::string& json_path,
                               const std::vector<BenchRow>& rows,
                               const std::string& digest) {
  CsvWriter csv({"schedule", "predicted_accel", "flop_accel", "total_flops",
                 "sliced_wasserstein", "gaussian_frechet", "wall_time_s",
                 "wall_accel"});
  csv.set_digest(digest);
  nlohmann::json jrows = nlohmann::json::array();
  for (const BenchRow& r : rows) {
    csv.add_row({r.schedule, format_double(r.predicted_accel),
                 format_double(r.flop_accel), std::to_string(r.total_flops),
                 format_double(r.sliced_wasserstein),
                 format_double(r.gaussian_frechet),
                 format_double(r.wall_time_s), format_double(r.wall_accel)});
    jrows.push_back({{"schedule", r.schedule},
                     {"predicted_accel", r.predicted_accel},
                     {"flop_accel", r.flop_accel},
                     {"total_flops", r.total_flops},
                     {"sliced_wasserstein", r.sliced_wasserstein},
                     {"gaussian_frechet", r.gaussian_frechet},
                     {"timing",
                      {{"wall_time_s", r.wall_time_s},
                       {"wall_accel", r.wall_accel}}}});
  }
  csv.write(csv_path);
  nlohmann::json report = {{"config_digest", digest}, {"rows", jrows}};
  write_file_bytes(json_path, report.dump(2) + "\n");
}

inline void write_tradeoff_report(const std::string& csv_path,
                                  const std::string& json_path,
                                  const std::vector<TradeoffRow>& rows,
                                  const std::string& digest) {
  CsvWriter csv({"schedule", "sampler", "seed", "predicted_accel",
                 "flop_accel", "sliced_wasserstein", "gaussian_frechet",
                 "wall_time_s"});
  csv.set_digest(digest);
  nlohmann::json jrows = nlohmann::json::array();
  for (const TradeoffRow& r : rows) {
    csv.add_row({r.schedule, r.sampler, std::to_string(r.seed),
                 format_double(r.predicted_accel),
                 format_double(r.flop_accel),
                 format_double(r.sliced_wasserstein),
                 format_double(r.gaussian_frechet),
                 format_double(r.wall_time_s)});
    jrows.push_back({{"schedule", r.schedule},
                     {"sampler", r.sampler},
                     {"seed", r.seed},
                     {"predicted_accel", r.predicted_accel},
                     {"flop_accel", r.flop_accel},
                     {"sliced_wasserstein", r.sliced_wasserstein},
                     {"gaussian_frechet", r.gaussian_frechet},
                     {"timing", {{"wall_time_s", r.wall_time_s}}}});
  }
  csv.write(csv_path);
  nlohmann::json report = {{"config_digest", digest}, {"rows", jrows}};
  write_file_bytes(json_path, report.dump(2) + "\n");
}

inline void write_negative_transfer_report(
    const std::string& csv_path, const std::string& json_path,
    const std::vector<NegativeTransferRow>& rows,
    const std::string& digest) {
  CsvWriter csv(
      {"configuration", "seed", "sliced_wasserstein", "gaussian_frechet"});
  csv.set_digest(digest);
  nlohmann::json jrows = nlohmann::json::array();
  for (const NegativeTransferRow& r : rows) {
    csv.add_row({r.configuration, std::to_string(r.seed),
                 format_double(r.sliced_wasserstein),
                 format_double(r.gaussian_frechet)});
    jrows.push_back({{"configuration", r.configuration},
                     {"seed", r.seed},
                     {"sliced_wasserstein", r.sliced_wasserstein},
                     {"gaussian_frechet", r.gaussian_frechet}});
  }
  csv.write(csv_path);
  nlohmann::json report = {{"config_digest", digest}, {"rows", jrows}};
  write_file_bytes(json_path, report.dump(2) + "\n");
}

inline void write_ablation_report(const std::string& csv_path,
                                  const std::string& json_path,
                                  const std::vector<AblationRow>& rows,
                                  const std::string& digest) {
  CsvWriter csv({"schedule", "n_steps", "predicted_accel",
                 "sliced_wasserstein", "gaussian_frechet"});
  csv.set_digest(digest);
  nlohmann::json jrows = nlohmann::json::array();
  for (const AblationRow& r : rows) {
    csv.add_row({r.schedule, std::to_string(r.n_steps),
                 format_double(r.predicted_accel),
                 format_double(r.sliced_wasserstein),
                 format_double(r.gaussian_frechet)});
    jrows.push_back({{"schedule", r.schedule},
                     {"n_steps", r.n_steps},
                     {"predicted_accel", r.predicted_accel},
                     {"sliced_wasserstein", r.sliced_wasserstein},
                     {"gaussian_frechet", r.gaussian_frechet}});
  }
  csv.write(csv_path);
  nlohmann::json report = {{"config_digest", digest}, {"rows", jrows}};
  write_file_bytes(json_path, report.dump(2) + "\n");
}

}  // namespace ase
