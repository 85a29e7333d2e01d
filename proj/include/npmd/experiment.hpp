#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "npmd/env.hpp"
#include "npmd/npmd.hpp"

namespace npmd {

/// Which built-in environment to build, and its knobs. Unused fields are
/// ignored by the other kinds.
struct EnvConfig {
  std::string kind = "point-goal-circle";  ///< point-goal-circle | rotation-circle | smoothed-rotation-circle | random | file
  std::size_t states = 64;
  int embed_dim = 2;
  std::uint64_t embed_seed = 1;
  int step = 3;
  double blur_sigma = 1.0;
  double alpha = 1.0;
  std::size_t goal = 0;
  int shift = 1;
  std::vector<int> shifts{1, -1};
  std::size_t actions = 2;
  std::uint64_t seed = 1;
  std::string file;
};

/// Builds the environment with the given discount.
Mdp build_env(const EnvConfig& env, double gamma);

struct SweepOptions {
  std::vector<int> ambient_dims{8, 32, 128};
  std::vector<std::size_t> samples{512};
  double ema_weight = 0.9;
};

struct SuiteOptions {
  std::size_t sampler_draws = 100000;
  std::vector<double> sampler_gammas{0.5, 0.9};
  std::vector<int> spline_dims{1, 2};
  std::vector<int> spline_levels{2, 3, 4};
  std::size_t spline_functions = 10;
  std::size_t random_policies = 20;
};

struct ExperimentPlan {
  std::string command = "npmd";
  EnvConfig env;
  NpmdConfig npmd;
  SweepOptions sweep;
  SuiteOptions suite;
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::filesystem::path> runs;  ///< inputs of the report command
  std::filesystem::path out;

  void validate() const;
};

nlohmann::json plan_to_json(const ExperimentPlan& plan);
ExperimentPlan plan_from_json(const nlohmann::json& j);

/// Sets a dotted key ("npmd.critic_train.epochs") inside a plan document.
/// The value is parsed as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& plan, const std::string& assignment);

/// Outcome of one command: exit status plus a one-line summary.
struct CommandResult {
  bool ok = true;
  std::string summary;
};

CommandResult run_command(const ExperimentPlan& plan);

CommandResult cmd_npmd(const ExperimentPlan& plan);
CommandResult cmd_exact_pmd(const ExperimentPlan& plan);
CommandResult cmd_sampler_check(const ExperimentPlan& plan);
CommandResult cmd_spline_rate(const ExperimentPlan& plan);
CommandResult cmd_lipschitz_report(const ExperimentPlan& plan);
CommandResult cmd_resolution_sweep(const ExperimentPlan& plan);
CommandResult cmd_report(const ExperimentPlan& plan);

/// EMA_k = w EMA_{k-1} + (1 - w) R_k, started at EMA_0 = R_0.
std::vector<double> exponential_moving_average(const std::vector<double>& rewards, double weight = 0.9);

struct SweepCell {
  int ambient_dim = 0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  bool completed = false;  ///< the run finished and its gaps are meaningful
  bool ok = false;         ///< completed and every logged invariant held
  std::string error;
  double initial_gap = 0.0;
  double final_gap = 0.0;
  double ema_reward = 0.0;  ///< EMA of -gap at the last iteration
  double max_reward = 0.0;  ///< best -gap over the run
};

struct SpreadSummary {
  double across = 0.0;  ///< range of the per-D mean final gaps
  double within = 0.0;  ///< mean over D of the per-D seed range
  bool pass = false;    ///< across <= 3 within
};

/// Spread statistics for one sample size over the completed cells.
SpreadSummary sweep_spread(const std::vector<SweepCell>& cells, std::size_t samples);

/// Runs every (D, N, seed) cell on a worker pool capped by NPMD_THREADS.
std::vector<SweepCell> resolution_sweep(const ExperimentPlan& plan);

/// Worker count: NPMD_THREADS if set, else hardware concurrency, at least 1.
unsigned worker_count();

}  // namespace npmd
