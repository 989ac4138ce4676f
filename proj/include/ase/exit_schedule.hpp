#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "ase/common.hpp"
#include "ase/network.hpp"

namespace ase {

// Architecture summary the cost model needs; built from a NetworkConfig or
// stated directly (e.g. the reference 28-block / 6+1+6 configurations).
struct ArchShape {
  Topology topology = Topology::kStack;
  int n_blocks = 0;   // stack
  int n_encoder = 0;  // u_skip
  int n_decoder = 0;

  int block_limit() const {
    return topology == Topology::kStack ? n_blocks : n_decoder;
  }
  static ArchShape of(const NetworkConfig& cfg) {
    return {cfg.topology, cfg.n_blocks, cfg.n_encoder, cfg.n_decoder};
  }
};

// Per-interval retained-block counts S_k over K uniform intervals of
// u = t/T. Index 0 is the data-side interval [0, 1/K).
struct ExitSchedule {
  std::string name;
  Topology arch_binding = Topology::kStack;
  std::vector<int> blocks_per_interval;

  int intervals() const {
    return static_cast<int>(blocks_per_interval.size());
  }
  int max_blocks() const {
    return *std::max_element(blocks_per_interval.begin(),
                             blocks_per_interval.end());
  }
  int min_blocks() const {
    return *std::min_element(blocks_per_interval.begin(),
                             blocks_per_interval.end());
  }
  double mean_blocks() const {
    return std::accumulate(blocks_per_interval.begin(),
                           blocks_per_interval.end(), 0.0) /
           blocks_per_interval.size();
  }

  void validate(const ArchShape& arch) const {
    if (blocks_per_interval.empty())
      throw ConfigError("exit schedule: empty interval row");
    if (arch_binding != arch.topology)
      throw ScheduleBindingError("exit schedule '" + name +
                                 "' is bound to a different architecture");
    for (int s : blocks_per_interval)
      if (s < 1 || s > arch.block_limit())
        throw ScheduleBindingError(
            "exit schedule '" + name +
            "': retained blocks outside [1, limit]");
  }
};

// Interval index of discrete step t under the left-closed convention
// u' = (t - 1) / T, so t = 1 lands in the data interval and t = T in the
// noise interval.
inline int interval_of(int t, int T, int k_intervals) {
  double u = static_cast<double>(t - 1) / static_cast<double>(T);
  int k = static_cast<int>(std::floor(k_intervals * u));
  return std::min(k_intervals - 1, std::max(0, k));
}

inline int lookup_blocks(const ExitSchedule& sched, int t, int T) {
  if (t < 1 || t > T) throw std::invalid_argument("lookup_blocks: t range");
  return sched.blocks_per_interval[interval_of(t, T, sched.intervals())];
}

struct CatalogEntry {
  std::vector<int> row;
  Topology arch;
  double reported_accel;  // measured wall-clock acceleration fraction
};

// Reference dropping schedules for the 28-block stack and the 6+1+6
// u_skip configurations, with their reported wall-clock accelerations.
inline const std::map<std::string, CatalogEntry>& schedule_catalog() {
  static const std::map<std::string, CatalogEntry> catalog = {
      {"D2-DiT",
       {{28, 28, 25, 25, 22, 22, 19, 19, 16, 16}, Topology::kStack, 0.2343}},
      {"D3-DiT",
       {{28, 28, 24, 24, 20, 20, 16, 16, 12, 12}, Topology::kStack, 0.3046}},
      {"D4-DiT",
       {{28, 28, 26, 24, 20, 18, 12, 10, 8, 8}, Topology::kStack, 0.3456}},
      {"D7-DiT",
       {{28, 28, 24, 21, 18, 15, 10, 10, 8, 8}, Topology::kStack, 0.3892}},
      {"D1-U-ViT",
       {{6, 6, 4, 4, 2, 2, 2, 2, 1, 1}, Topology::kUSkip, 0.213}},
      {"D2-U-ViT",
       {{5, 5, 4, 4, 2, 2, 1, 1, 1, 1}, Topology::kUSkip, 0.248}},
      {"D3-U-ViT",
       {{3, 3, 2, 2, 2, 2, 1, 1, 1, 1}, Topology::kUSkip, 0.297}},
      {"D6-U-ViT",
       {{2, 2, 2, 2, 1, 1, 1, 1, 1, 1}, Topology::kUSkip, 0.326}},
  };
  return catalog;
}

// Depths of the reference architectures the catalog rows were designed for.
inline ArchShape catalog_arch(Topology topo) {
  return topo == Topology::kStack ? ArchShape{Topology::kStack, 28, 0, 0}
                                  : ArchShape{Topology::kUSkip, 0, 6, 6};
}

inline ExitSchedule make_dn_schedule(const std::string& name) {
  auto it = schedule_catalog().find(name);
  if (it == schedule_catalog().end())
    throw CatalogError("unknown exit schedule '" + name + "'");
  return {name, it->second.arch, it->second.row};
}

inline double reported_acceleration(const std::string& name) {
  auto it = schedule_catalog().find(name);
  if (it == schedule_catalog().end())
    throw CatalogError("unknown exit schedule '" + name + "'");
  return it->second.reported_accel;
}

// Proportional rescaling of a reference row onto a shallower model:
// S_toy = max(1, round(S * limit_to / limit_from)).
inline ExitSchedule scale_schedule(const ExitSchedule& sched, int limit_from,
                                   int limit_to) {
  if (limit_from < 1 || limit_to < 1)
    throw ConfigError("scale_schedule: block limits must be >= 1");
  ExitSchedule out = sched;
  out.name = sched.name + "@" + std::to_string(limit_to);
  for (int& s : out.blocks_per_interval) {
    double scaled = static_cast<double>(s) * limit_to / limit_from;
    s = std::max(1, static_cast<int>(std::llround(scaled)));
  }
  return out;
}

inline ExitSchedule all_keep_schedule(const ArchShape& arch,
                                      int k_intervals = 10) {
  return {"all-keep", arch.topology,
          std::vector<int>(k_intervals, arch.block_limit())};
}

// Monotone non-increasing row from the full depth at the data side down to
// min_blocks at the noise side.
inline ExitSchedule noise_easy_schedule(int full_blocks, int min_blocks,
                                        Topology arch, int k_intervals = 10) {
  if (min_blocks < 1 || min_blocks > full_blocks)
    throw ConfigError("noise_easy: need 1 <= min_blocks <= full_blocks");
  std::vector<int> row(k_intervals);
  for (int k = 0; k < k_intervals; ++k) {
    double s = full_blocks -
               static_cast<double>(full_blocks - min_blocks) * k /
                   (k_intervals - 1);
    row[k] = static_cast<int>(std::llround(s));
  }
  return {"noise-easy", arch, row};
}

inline ExitSchedule data_easy_schedule(int full_blocks, int min_blocks,
                                       Topology arch, int k_intervals = 10) {
  ExitSchedule s = noise_easy_schedule(full_blocks, min_blocks, arch,
                                       k_intervals);
  std::reverse(s.blocks_per_interval.begin(), s.blocks_per_interval.end());
  s.name = "data-easy";
  return s;
}

// Full blocks everywhere except interval k, which uses the reduced count.
inline ExitSchedule mixed_k_schedule(int k, int full_blocks, int reduced,
                                     Topology arch, int k_intervals = 10) {
  if (k < 0 || k >= k_intervals)
    throw ConfigError("mixed_k: interval index outside [0, K)");
  if (reduced < 1 || reduced > full_blocks)
    throw ConfigError("mixed_k: reduced count outside [1, full]");
  std::vector<int> row(k_intervals, full_blocks);
  row[k] = reduced;
  return {"mixed-" + std::to_string(k), arch, row};
}

inline ExitSchedule custom_schedule(const std::string& name,
                                    std::vector<int> row, Topology arch) {
  if (row.empty()) throw ConfigError("custom schedule: empty row");
  return {name, arch, std::move(row)};
}

// Cost model: fraction of per-step compute removed by the schedule,
// uniformly weighted over time unless explicit weights are given. Dropped
// u_skip decoder blocks keep their merge linear map, treated as negligible.
inline double predicted_acceleration(const ExitSchedule& sched,
                                     const ArchShape& arch,
                                     const std::vector<double>* weights =
                                         nullptr) {
  sched.validate(arch);
  double mean;
  if (weights) {
    if (std::ssize(*weights) != sched.intervals())
      throw ConfigError("predicted_acceleration: weight row length");
    double wsum = std::accumulate(weights->begin(), weights->end(), 0.0);
    mean = 0.0;
    for (int k = 0; k < sched.intervals(); ++k)
      mean += (*weights)[k] * sched.blocks_per_interval[k];
    mean /= wsum;
  } else {
    mean = sched.mean_blocks();
  }
  if (arch.topology == Topology::kStack)
    return 1.0 - mean / arch.n_blocks;
  double full = arch.n_encoder + 1 + arch.n_decoder;
  return 1.0 - (arch.n_encoder + 1 + mean) / full;
}

}  // namespace ase
