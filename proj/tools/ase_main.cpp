// Command-line front end: pretraining, early-exit fine-tuning, sampling,
// acceleration benchmarks, metric evaluation, and schedule inspection.
//
// Exit codes: 0 success, 2 invalid configuration, 3 schedule/architecture
// mismatch, 4 missing or unreadable inputs, 5 unknown schedule name.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ase/bench.hpp"
#include "ase/checkpoint.hpp"
#include "ase/config.hpp"
#include "ase/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitMismatch = 3;
constexpr int kExitMissingInput = 4;
constexpr int kExitUnknownSchedule = 5;

std::string output_dir(const ase::RunConfig& cfg,
                       const std::string& flag_value) {
  if (const char* env = std::getenv("ASE_OUTPUT_DIR")) return env;
  if (!flag_value.empty()) return flag_value;
  return cfg.output_dir;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ase::IoError("cannot create output directory '" + dir + "'");
}

ase::CsvWriter train_log_writer() {
  return ase::CsvWriter({"step", "loss", "lambda_boosted"});
}

ase::LogSink csv_sink(ase::CsvWriter& csv) {
  return [&csv](const ase::TrainLogRow& row) {
    csv.add_row({std::to_string(row.step), ase::format_double(row.loss),
                 row.lambda_boosted ? "1" : "0"});
  };
}

std::optional<ase::ExitSchedule> pick_schedule(
    const ase::RunConfig& cfg, const std::string& flag_name,
    const ase::ArchShape& arch) {
  if (!flag_name.empty()) {
    ase::ExitSpec spec;
    spec.present = true;
    spec.name = flag_name;
    spec.min_blocks = cfg.exit_schedule.min_blocks;
    return ase::resolve_schedule(spec, arch);
  }
  if (cfg.exit_schedule.present)
    return ase::resolve_schedule(cfg.exit_schedule, arch);
  return std::nullopt;
}

std::string row_string(const std::vector<int>& row) {
  std::string s;
  for (std::size_t i = 0; i < row.size(); ++i)
    s += (i ? " " : "") + std::to_string(row[i]);
  return s;
}

int cmd_pretrain(const std::string& config_path, const std::string& out) {
  ase::RunConfig cfg = ase::load_run_config(config_path);
  ase::Dataset data = ase::build_dataset(cfg);
  ase::NoiseSchedule ns = ase::build_schedule(cfg.noise);
  std::string dir = output_dir(cfg, out);
  ensure_dir(dir);

  ase::CsvWriter log = train_log_writer();
  log.set_digest(cfg.digest);
  ase::ScoreNetwork net = ase::pretrain(cfg.network, data, ns, cfg.training,
                                        cfg.seed, csv_sink(log));
  ase::save_checkpoint(dir + "/pretrained.ckpt", net, cfg.noise);
  log.write(dir + "/pretrain_log.csv");
  std::cout << "pretrained checkpoint: " << dir << "/pretrained.ckpt\n";
  return kExitOk;
}

int cmd_finetune(const std::string& config_path,
                 const std::string& checkpoint,
                 const std::string& schedule_flag, int iterations_override,
                 const std::string& out) {
  ase::RunConfig cfg = ase::load_run_config(config_path);
  ase::Dataset data = ase::build_dataset(cfg);
  ase::LoadedCheckpoint loaded = ase::load_checkpoint(checkpoint);
  ase::NoiseSchedule ns = ase::build_schedule(loaded.noise);
  std::string dir = output_dir(cfg, out);
  ensure_dir(dir);

  ase::ArchShape arch = ase::ArchShape::of(loaded.net.config());
  std::optional<ase::ExitSchedule> sched =
      pick_schedule(cfg, schedule_flag, arch);

  ase::TrainConfig tcfg = cfg.training;
  if (iterations_override >= 0) tcfg.iterations = iterations_override;

  ase::CsvWriter log = train_log_writer();
  log.set_digest(cfg.digest);
  ase::ScoreNetwork teacher =
      ase::finetune_ase(loaded.net, sched ? &*sched : nullptr, data, ns,
                        tcfg, cfg.seed, csv_sink(log));
  ase::save_checkpoint(dir + "/finetuned.ckpt", teacher, loaded.noise);
  log.write(dir + "/finetune_log.csv");
  if (sched)
    std::cout << "schedule " << sched->name << ": "
              << row_string(sched->blocks_per_interval) << "\n";
  std::cout << "finetuned checkpoint: " << dir << "/finetuned.ckpt\n";
  return kExitOk;
}

int cmd_sample(const std::string& config_path, const std::string& checkpoint,
               const std::string& schedule_flag, const std::string& out) {
  ase::RunConfig cfg = ase::load_run_config(config_path);
  ase::LoadedCheckpoint loaded = ase::load_checkpoint(checkpoint);
  ase::NoiseSchedule ns = ase::build_schedule(loaded.noise);

  ase::ArchShape arch = ase::ArchShape::of(loaded.net.config());
  std::optional<ase::ExitSchedule> sched =
      pick_schedule(cfg, schedule_flag, arch);
  ase::SamplerConfig scfg = cfg.sampler;
  scfg.seed = cfg.seed;

  ase::SampleResult res =
      ase::sample_loop(loaded.net, sched ? &*sched : nullptr, scfg, ns);
  ase::write_samples(out, res.samples, cfg.digest);
  std::cout << "wrote " << res.samples.rows() << " samples to " << out
            << " (flops/sample " << res.stats.total_flops << ")\n";
  return kExitOk;
}

int cmd_bench(const std::string& config_path, const std::string& checkpoint,
              const std::vector<std::string>& schedule_names, int repeats,
              const std::string& out) {
  ase::RunConfig cfg = ase::load_run_config(config_path);
  ase::Dataset data = ase::build_dataset(cfg);
  ase::LoadedCheckpoint loaded = ase::load_checkpoint(checkpoint);
  ase::NoiseSchedule ns = ase::build_schedule(loaded.noise);
  std::string dir = output_dir(cfg, out);
  ensure_dir(dir);

  ase::ArchShape arch = ase::ArchShape::of(loaded.net.config());
  std::vector<ase::ExitSchedule> schedules;
  for (const std::string& name : schedule_names) {
    ase::ExitSpec spec;
    spec.present = true;
    spec.name = name;
    spec.min_blocks = cfg.exit_schedule.min_blocks;
    schedules.push_back(ase::resolve_schedule(spec, arch));
  }
  if (schedules.empty())
    schedules.push_back(ase::all_keep_schedule(arch));

  ase::SamplerConfig scfg = cfg.sampler;
  scfg.seed = cfg.seed;
  ase::MetricSpec mspec{cfg.metrics.n_proj, cfg.metrics.sample_size};
  std::vector<ase::BenchRow> rows = ase::bench_acceleration(
      loaded.net, schedules, scfg, ns, data, mspec, repeats);
  ase::write_bench_report(dir + "/bench.csv", dir + "/bench.json", rows,
                          cfg.digest);
  std::cout << "benchmark written to " << dir << "/bench.csv\n";
  return kExitOk;
}

int cmd_eval(const std::string& file_a, const std::string& file_b,
             int n_proj, const std::string& out) {
  ase::SampleFile a = ase::read_samples(file_a);
  ase::SampleFile b = ase::read_samples(file_b);
  double sw = ase::sliced_wasserstein(a.samples, b.samples, n_proj, 0);
  ase::FrechetResult fr = ase::gaussian_frechet(a.samples, b.samples);
  std::cout << "sliced_wasserstein " << ase::format_double(sw) << "\n";
  std::cout << "gaussian_frechet " << ase::format_double(fr.value)
            << (fr.ridged ? " (ridged)" : "") << "\n";
  if (!out.empty()) {
    nlohmann::json report = {{"a", file_a},
                             {"b", file_b},
                             {"a_digest", a.digest},
                             {"b_digest", b.digest},
                             {"sliced_wasserstein", sw},
                             {"gaussian_frechet", fr.value},
                             {"frechet_ridged", fr.ridged}};
    ase::write_file_bytes(out, report.dump(2) + "\n");
  }
  return kExitOk;
}

int cmd_schedule_info(const std::string& name, int toy_limit) {
  ase::ExitSchedule sched = ase::make_dn_schedule(name);
  ase::ArchShape ref_arch = ase::catalog_arch(sched.arch_binding);
  double predicted = ase::predicted_acceleration(sched, ref_arch);
  std::printf("schedule %s (%s)\n", sched.name.c_str(),
              ase::topology_name(sched.arch_binding).c_str());
  std::printf("row: %s\n", row_string(sched.blocks_per_interval).c_str());
  std::printf("predicted acceleration at reference depth %d: %.2f%%\n",
              ref_arch.block_limit(), 100.0 * predicted);
  std::printf("reported wall-clock acceleration: %.2f%%\n",
              100.0 * ase::reported_acceleration(name));
  if (toy_limit > 0) {
    ase::ExitSchedule toy =
        ase::scale_schedule(sched, ref_arch.block_limit(), toy_limit);
    ase::ArchShape toy_arch = ref_arch;
    if (toy_arch.topology == ase::Topology::kStack) {
      toy_arch.n_blocks = toy_limit;
    } else {
      toy_arch.n_encoder = toy_limit;
      toy_arch.n_decoder = toy_limit;
    }
    std::printf("scaled row at depth %d: %s\n", toy_limit,
                row_string(toy.blocks_per_interval).c_str());
    std::printf("predicted acceleration at depth %d: %.2f%%\n", toy_limit,
                100.0 * ase::predicted_acceleration(toy, toy_arch));
  }
  return kExitOk;
}

int cmd_experiment(const std::string& config_path,
                   const std::string& checkpoint, const std::string& out) {
  ase::RunConfig cfg = ase::load_run_config(config_path);
  if (!cfg.experiment.present)
    throw ase::ConfigError("config: missing 'experiment' section");
  ase::Dataset data = ase::build_dataset(cfg);
  ase::LoadedCheckpoint loaded = ase::load_checkpoint(checkpoint);
  ase::NoiseSchedule ns = ase::build_schedule(loaded.noise);
  std::string dir = output_dir(cfg, out);
  ensure_dir(dir);
  ase::ArchShape arch = ase::ArchShape::of(loaded.net.config());
  ase::MetricSpec mspec{cfg.metrics.n_proj, cfg.metrics.sample_size};
  const ase::ExperimentSpec& exp = cfg.experiment;

  if (exp.kind == "tradeoff") {
    ase::TradeoffConfig tc;
    for (const std::string& name : exp.schedules) {
      ase::ExitSpec spec;
      spec.present = true;
      spec.name = name;
      spec.min_blocks = cfg.exit_schedule.min_blocks;
      tc.schedules.push_back(ase::resolve_schedule(spec, arch));
    }
    tc.finetune = cfg.training;
    ase::SamplerConfig scfg = cfg.sampler;
    if (exp.step_counts.empty()) {
      tc.samplers.push_back(scfg);
    } else {
      for (int steps : exp.step_counts) {
        scfg.n_steps = steps;
        tc.samplers.push_back(scfg);
      }
    }
    tc.metrics = mspec;
    tc.seeds = exp.seeds;
    auto rows = ase::run_tradeoff_experiment(loaded.net, data, ns, tc);
    ase::write_tradeoff_report(dir + "/tradeoff.csv", dir + "/tradeoff.json",
                               rows, cfg.digest);
    std::cout << "tradeoff report written to " << dir << "/tradeoff.csv\n";
    return kExitOk;
  }
  if (exp.kind == "negative_transfer") {
    ase::NegativeTransferConfig nc;
    nc.expert_train = cfg.training;
    nc.expert_train.iterations = exp.expert_iterations;
    nc.further_train = cfg.training;
    nc.further_train.iterations = exp.further_iterations;
    nc.further_train.ema_rate = 0.0;
    nc.ase_train = cfg.training;
    if (!cfg.exit_schedule.present)
      throw ase::ConfigError(
          "negative_transfer experiment needs an exit_schedule");
    nc.ase_schedule = ase::resolve_schedule(cfg.exit_schedule, arch);
    if (!exp.mixed_intervals.empty())
      nc.mixed_intervals = exp.mixed_intervals;
    nc.sampler = cfg.sampler;
    nc.metrics = mspec;
    nc.seeds = exp.seeds;
    auto rows =
        ase::run_negative_transfer_suite(loaded.net, data, ns, nc);
    ase::write_negative_transfer_report(dir + "/negative_transfer.csv",
                                        dir + "/negative_transfer.json",
                                        rows, cfg.digest);
    std::cout << "negative-transfer report written to " << dir
              << "/negative_transfer.csv\n";
    return kExitOk;
  }
  // ablation
  ase::AblationConfig ac;
  ac.rows = exp.ablation_rows;
  ac.finetune = cfg.training;
  ac.sampler = cfg.sampler;
  if (!exp.step_counts.empty()) ac.step_counts = exp.step_counts;
  ac.metrics = mspec;
  ac.seed = cfg.seed;
  auto rows = ase::run_ablation_schedules(loaded.net, data, ns, ac);
  ase::write_ablation_report(dir + "/ablation.csv", dir + "/ablation.json",
                             rows, cfg.digest);
  std::cout << "ablation report written to " << dir << "/ablation.csv\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toy diffusion lab with time-dependent early exit"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, schedule_flag, out, file_a, file_b;
  std::string info_name;
  int iterations_override = -1, repeats = 3, n_proj = 256, toy_limit = 0;
  std::vector<std::string> schedule_names;

  auto* pre = app.add_subcommand("pretrain", "train a model from scratch");
  pre->add_option("--config", config_path)->required();
  pre->add_option("--out", out);

  auto* fin = app.add_subcommand("finetune", "early-exit fine-tuning");
  fin->add_option("--config", config_path)->required();
  fin->add_option("--checkpoint", checkpoint)->required();
  fin->add_option("--schedule", schedule_flag);
  fin->add_option("--iterations", iterations_override);
  fin->add_option("--out", out);

  auto* smp = app.add_subcommand("sample", "draw samples from a checkpoint");
  smp->add_option("--config", config_path)->required();
  smp->add_option("--checkpoint", checkpoint)->required();
  smp->add_option("--schedule", schedule_flag);
  smp->add_option("--out", out)->required();

  auto* ben = app.add_subcommand("bench", "acceleration benchmark");
  ben->add_option("--config", config_path)->required();
  ben->add_option("--checkpoint", checkpoint)->required();
  ben->add_option("--schedules", schedule_names)->delimiter(',');
  ben->add_option("--repeats", repeats);
  ben->add_option("--out", out);

  auto* evl = app.add_subcommand("eval", "compare two sample files");
  evl->add_option("--a", file_a)->required();
  evl->add_option("--b", file_b)->required();
  evl->add_option("--n-proj", n_proj);
  evl->add_option("--out", out);

  auto* inf = app.add_subcommand("schedule-info", "inspect a catalog row");
  inf->add_option("--name", info_name)->required();
  inf->add_option("--toy-limit", toy_limit);

  auto* exp = app.add_subcommand("experiment", "run an experiment suite");
  exp->add_option("--config", config_path)->required();
  exp->add_option("--checkpoint", checkpoint)->required();
  exp->add_option("--out", out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (pre->parsed()) return cmd_pretrain(config_path, out);
    if (fin->parsed())
      return cmd_finetune(config_path, checkpoint, schedule_flag,
                          iterations_override, out);
    if (smp->parsed())
      return cmd_sample(config_path, checkpoint, schedule_flag, out);
    if (ben->parsed())
      return cmd_bench(config_path, checkpoint, schedule_names, repeats,
                       out);
    if (evl->parsed()) return cmd_eval(file_a, file_b, n_proj, out);
    if (inf->parsed()) return cmd_schedule_info(info_name, toy_limit);
    if (exp->parsed()) return cmd_experiment(config_path, checkpoint, out);
  } catch (const ase::CatalogError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUnknownSchedule;
  } catch (const ase::ScheduleBindingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const ase::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingInput;
  } catch (const ase::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
