#include "npmd/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <thread>

#include "npmd/csv.hpp"
#include "npmd/error.hpp"
#include "npmd/plot.hpp"
#include "npmd/random.hpp"
#include "npmd/sampler.hpp"
#include "npmd/spline.hpp"

namespace npmd {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EnvConfig, kind, states, embed_dim, embed_seed, step, blur_sigma,
                                                alpha, goal, shift, shifts, actions, seed, file)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SweepOptions, ambient_dims, samples, ema_weight)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SuiteOptions, sampler_draws, sampler_gammas, spline_dims,
                                                spline_levels, spline_functions, random_policies)

namespace {

void check_keys(const nlohmann::json& given, const nlohmann::json& known, const std::string& where) {
  if (!given.is_object()) throw InvalidArgument("plan section '" + where + "' must be an object");
  for (const auto& [key, value] : given.items()) {
    if (!known.contains(key)) throw InvalidArgument("unknown plan key '" + where + key + "'");
    if (known[key].is_object() && key != "npmd") check_keys(value, known[key], where + key + ".");
  }
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::filesystem::path ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

EnvConfig seeded_env(EnvConfig env, std::uint64_t seed) {
  if (env.kind == "random") env.seed += seed;
  return env;
}

// Free text for a CSV cell: no separators or line breaks.
std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::string ratio_text(double num, double den) {
  return den > 0.0 ? format_number(num / den) : "n/a";
}

void save_run(const RunLog& log, const nlohmann::json& config, const std::filesystem::path& dir) {
  ensure_dir(dir);
  write_runlog_csv(log, dir / "runlog.csv");
  write_timing_csv(log, dir / "timing.csv");
  auto meta = runlog_metadata(log);
  meta["config"] = config;
  write_json(meta, dir / "run.json");
  for (std::size_t a = 0; a < log.final_state.actor.size(); ++a) {
    save_params(log.final_state.actor[a], dir / ("actor_" + std::to_string(a) + ".bin"));
    save_params(log.final_state.critic[a], dir / ("critic_" + std::to_string(a) + ".bin"));
  }
}

bool run_invariants_hold(const RunLog& log) {
  return std::all_of(log.rows.begin(), log.rows.end(),
                     [](const RunLogRow& r) { return r.schedule_ok && r.target_bounded; });
}

PolicyTable random_policy(std::size_t states, std::size_t actions, Rng& rng) {
  PolicyTable pi;
  pi.probs.resize(static_cast<Eigen::Index>(states), static_cast<Eigen::Index>(actions));
  for (Eigen::Index s = 0; s < pi.probs.rows(); ++s) {
    for (Eigen::Index a = 0; a < pi.probs.cols(); ++a) pi.probs(s, a) = -std::log(1.0 - rng.uniform());
    pi.probs.row(s) /= pi.probs.row(s).sum();
  }
  return pi;
}

}  // namespace

// ---- environments and plans ---------------------------------------------------

Mdp build_env(const EnvConfig& env, double gamma) {
  const CircleEnvOptions circle{env.states, env.embed_dim, env.embed_seed, gamma};
  if (env.kind == "point-goal-circle")
    return point_goal_circle({circle, env.step, env.blur_sigma, env.alpha, env.goal});
  if (env.kind == "rotation-circle") return rotation_circle(circle, env.shift, env.actions);
  if (env.kind == "smoothed-rotation-circle") return smoothed_rotation_circle(circle, env.shifts, env.blur_sigma);
  if (env.kind == "random") return random_mdp(env.states, env.actions, gamma, env.seed);
  if (env.kind == "file") {
    Mdp m = load_mdp(env.file);
    m.gamma = gamma;
    m.validate();
    return m;
  }
  throw InvalidArgument("unknown environment kind '" + env.kind + "'");
}

void ExperimentPlan::validate() const {
  static const std::vector<std::string> commands{"npmd", "exact-pmd", "sampler-check", "spline-rate",
                                                 "lipschitz-report", "resolution-sweep", "report"};
  if (std::find(commands.begin(), commands.end(), command) == commands.end())
    throw InvalidArgument("unknown command '" + command + "'");
  if (seeds.empty()) throw InvalidArgument("seed list must not be empty");
  if (out.empty()) throw InvalidArgument("an output directory is required");
  if (command == "report" && runs.empty()) throw InvalidArgument("report needs at least one run directory");
  npmd.validate();
}

nlohmann::json plan_to_json(const ExperimentPlan& plan) {
  std::vector<std::string> runs;
  for (const auto& r : plan.runs) runs.push_back(r.string());
  return {{"command", plan.command}, {"env", plan.env},     {"npmd", plan.npmd},   {"sweep", plan.sweep},
          {"suite", plan.suite},     {"seeds", plan.seeds}, {"runs", runs},        {"out", plan.out.string()}};
}

ExperimentPlan plan_from_json(const nlohmann::json& j) {
  const ExperimentPlan d;
  try {
    check_keys(j, plan_to_json(d), "");
    ExperimentPlan p;
    p.command = j.value("command", d.command);
    p.env = j.value("env", d.env);
    p.npmd = j.value("npmd", d.npmd);
    p.sweep = j.value("sweep", d.sweep);
    p.suite = j.value("suite", d.suite);
    p.seeds = j.value("seeds", d.seeds);
    for (const auto& r : j.value("runs", std::vector<std::string>{})) p.runs.emplace_back(r);
    p.out = j.value("out", std::string{});
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad plan: ") + e.what());
  }
}

void apply_override(nlohmann::json& plan, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw InvalidArgument("override must look like KEY=VALUE: " + assignment);
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  nlohmann::json* node = &plan;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw InvalidArgument("empty component in override key " + key);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

unsigned worker_count() {
  if (const char* env = std::getenv("NPMD_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<double> exponential_moving_average(const std::vector<double>& rewards, double weight) {
  std::vector<double> ema;
  ema.reserve(rewards.size());
  for (double r : rewards) ema.push_back(ema.empty() ? r : weight * ema.back() + (1.0 - weight) * r);
  return ema;
}

// ---- commands -------------------------------------------------------------------

CommandResult cmd_npmd(const ExperimentPlan& plan) {
  CommandResult res;
  std::string detail;
  for (auto seed : plan.seeds) {
    NpmdConfig cfg = plan.npmd;
    cfg.seed = seed;
    const Mdp m = build_env(seeded_env(plan.env, seed), cfg.gamma);
    const RunLog log = run_npmd(m, cfg);
    save_run(log, nlohmann::json(cfg), plan.out / ("seed_" + std::to_string(seed)));
    const bool ok = run_invariants_hold(log);
    res.ok = res.ok && ok;
    detail += " seed " + std::to_string(seed) + ": gap ratio " + ratio_text(log.final_gap(), log.initial_gap) +
              (ok ? "" : " (invariant violated)") + ";";
  }
  res.summary = "npmd" + detail;
  return res;
}

CommandResult cmd_exact_pmd(const ExperimentPlan& plan) {
  CommandResult res;
  std::string detail;
  for (auto seed : plan.seeds) {
    NpmdConfig cfg = plan.npmd;
    cfg.seed = seed;
    const Mdp m = build_env(seeded_env(plan.env, seed), cfg.gamma);
    try {
      const RunLog log = run_exact_pmd(m, cfg);
      save_run(log, nlohmann::json(cfg), plan.out / ("seed_" + std::to_string(seed)));
      detail += " seed " + std::to_string(seed) + ": final gap " + format_number(log.final_gap()) + ";";
    } catch (const BoundViolation& e) {
      res.ok = false;
      detail += " seed " + std::to_string(seed) + ": " + e.what() + ";";
    }
  }
  res.summary = "exact-pmd" + detail;
  return res;
}

CommandResult cmd_sampler_check(const ExperimentPlan& plan) {
  ensure_dir(plan.out);
  CsvWriter csv(plan.out / "sampler_check.csv",
                {"seed", "gamma", "draws", "tv", "mean_calls", "expected_calls", "relative_error", "pass"});
  CommandResult res;
  for (auto seed : plan.seeds) {
    for (double gamma : plan.suite.sampler_gammas) {
      const Mdp m = build_env(seeded_env(plan.env, seed), gamma);
      Rng rng = Rng::derive(seed, {0x5a});
      const PolicyTable pi = random_policy(m.num_states, m.num_actions, rng);
      const VisitationSampler sampler(m, pi);
      Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m.num_states),
                                                     static_cast<Eigen::Index>(m.num_actions));
      double calls = 0.0;
      for (std::size_t i = 0; i < plan.suite.sampler_draws; ++i) {
        const auto s = sampler.sample(rng);
        counts(static_cast<Eigen::Index>(s.state), static_cast<Eigen::Index>(s.action)) += 1.0;
        calls += static_cast<double>(s.trajectory_len + 1);
      }
      const double draws = static_cast<double>(plan.suite.sampler_draws);
      const auto exact = visitation_distribution(m, pi).state_action;
      const double tv = 0.5 * (counts / draws - exact).cwiseAbs().sum();
      const double mean = calls / draws, expected = 1.0 / (1.0 - gamma);
      const double rel = std::abs(mean - expected) / expected;
      const bool pass = tv < 0.02 && rel < 0.02;
      res.ok = res.ok && pass;
      csv << static_cast<long long>(seed) << gamma << plan.suite.sampler_draws << tv << mean << expected << rel
          << int(pass);
      csv.end_row();
    }
  }
  res.summary = std::string("sampler-check ") + (res.ok ? "passed" : "failed");
  return res;
}

CommandResult cmd_spline_rate(const ExperimentPlan& plan) {
  ensure_dir(plan.out);
  CsvWriter csv(plan.out / "spline_rate.csv", {"d", "function", "p", "N", "L", "alpha", "sup_error", "bound", "pass"});
  CommandResult res;
  std::size_t rows = 0, failed = 0;
  for (int d : plan.suite.spline_dims)
    for (std::size_t i = 0; i < plan.suite.spline_functions; ++i) {
      const auto fn = envelope_test_function(d, plan.env.alpha, plan.seeds.front() * 1000003ull + i);
      for (const auto& r : verify_rate(fn, plan.suite.spline_levels)) {
        ++rows;
        if (!r.pass) ++failed;
        csv << d << i << r.level << r.basis_count << r.lipschitz << r.alpha << r.sup_error << r.bound << int(r.pass);
        csv.end_row();
      }
    }
  res.ok = failed == 0;
  res.summary = "spline-rate: " + std::to_string(rows - failed) + "/" + std::to_string(rows) + " rows within bound";
  return res;
}

CommandResult cmd_lipschitz_report(const ExperimentPlan& plan) {
  ensure_dir(plan.out);
  const double alpha = plan.npmd.alpha;
  const Mdp m = build_env(plan.env, plan.npmd.gamma);
  const auto report = lipschitz_mdp_report(m, alpha);
  write_json({{"cost_lipschitz", report.cost_lipschitz},
              {"transition_lipschitz", std::isfinite(report.transition_lipschitz) ? nlohmann::json(report.transition_lipschitz)
                                                                                   : nlohmann::json("inf")},
              {"alpha", report.alpha},
              {"q_lipschitz_bound", std::isfinite(report.q_lipschitz_bound) ? nlohmann::json(report.q_lipschitz_bound)
                                                                             : nlohmann::json("inf")},
              {"normalized_q_lipschitz", std::isfinite(report.normalized_q_lipschitz)
                                             ? nlohmann::json(report.normalized_q_lipschitz)
                                             : nlohmann::json("inf")}},
             plan.out / "lipschitz_report.json");
  CsvWriter csv(plan.out / "q_lipschitz.csv", {"policy", "action", "q_lipschitz", "bound", "pass"});
  CommandResult res;
  Rng rng = Rng::derive(plan.seeds.front(), {0x11});
  double worst = 0.0;
  for (std::size_t p = 0; p < plan.suite.random_policies; ++p) {
    const auto vf = policy_evaluate(m, random_policy(m.num_states, m.num_actions, rng));
    for (Eigen::Index a = 0; a < vf.Q.cols(); ++a) {
      const Eigen::VectorXd q = vf.Q.col(a);
      const double est = estimate_lipschitz(*m.net, {q.data(), static_cast<std::size_t>(q.size())}, alpha, 0.0);
      const bool pass = std::isfinite(est) && est <= report.q_lipschitz_bound + 1e-9;
      res.ok = res.ok && pass;
      worst = std::max(worst, est);
      csv << p << static_cast<long long>(a) << est << report.q_lipschitz_bound << int(pass);
      csv.end_row();
    }
  }
  res.summary = "lipschitz-report: max Q estimate " + format_number(worst) + ", bound " +
                format_number(report.q_lipschitz_bound);
  return res;
}

std::vector<SweepCell> resolution_sweep(const ExperimentPlan& plan) {
  std::vector<SweepCell> cells;
  for (int D : plan.sweep.ambient_dims)
    for (auto N : plan.sweep.samples)
      for (auto seed : plan.seeds) {
        SweepCell c;
        c.ambient_dim = D;
        c.samples = N;
        c.seed = seed;
        cells.push_back(c);
      }

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      auto& cell = cells[i];
      try {
        EnvConfig env = plan.env;
        env.embed_dim = cell.ambient_dim;
        NpmdConfig cfg = plan.npmd;
        cfg.samples_per_action = cell.samples;
        cfg.seed = cell.seed;
        const Mdp m = build_env(env, cfg.gamma);
        const RunLog log = run_npmd(m, cfg);
        save_run(log, nlohmann::json(cfg),
                 plan.out / ("D" + std::to_string(cell.ambient_dim) + "_N" + std::to_string(cell.samples) + "_seed" +
                             std::to_string(cell.seed)));
        std::vector<double> rewards;
        for (const auto& r : log.rows) rewards.push_back(-r.gap);
        const auto ema = exponential_moving_average(rewards, plan.sweep.ema_weight);
        cell.initial_gap = log.initial_gap;
        cell.final_gap = log.final_gap();
        cell.ema_reward = ema.back();
        cell.max_reward = *std::max_element(rewards.begin(), rewards.end());
        cell.completed = true;
        cell.ok = run_invariants_hold(log);
        if (!cell.ok) cell.error = "invariant violated";
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
    }
  };
  const unsigned n = std::min<unsigned>(worker_count(), static_cast<unsigned>(std::max<std::size_t>(cells.size(), 1)));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return cells;
}

SpreadSummary sweep_spread(const std::vector<SweepCell>& cells, std::size_t samples) {
  std::map<int, std::vector<double>> by_dim;
  for (const auto& c : cells)
    if (c.samples == samples && c.completed) by_dim[c.ambient_dim].push_back(c.final_gap);
  SpreadSummary s;
  if (by_dim.empty()) return s;
  double lo = kInfinity, hi = -kInfinity, within = 0.0;
  for (const auto& [D, gaps] : by_dim) {
    const double mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / static_cast<double>(gaps.size());
    lo = std::min(lo, mean);
    hi = std::max(hi, mean);
    const auto [mn, mx] = std::minmax_element(gaps.begin(), gaps.end());
    within += *mx - *mn;
  }
  s.across = hi - lo;
  s.within = within / static_cast<double>(by_dim.size());
  s.pass = s.across <= 3.0 * s.within;
  return s;
}

CommandResult cmd_resolution_sweep(const ExperimentPlan& plan) {
  ensure_dir(plan.out);
  const auto cells = resolution_sweep(plan);
  CommandResult res;
  {
    CsvWriter csv(plan.out / "summary.csv", {"ambient_dim", "samples", "seed", "status", "initial_gap", "final_gap",
                                             "ema_reward", "max_reward", "error"});
    for (const auto& c : cells) {
      res.ok = res.ok && c.ok;
      csv << c.ambient_dim << c.samples << static_cast<long long>(c.seed) << (c.ok ? "ok" : "failed") << c.initial_gap
          << c.final_gap << c.ema_reward << c.max_reward << csv_safe(c.error);
      csv.end_row();
    }
  }
  CsvWriter spread(plan.out / "spread.csv", {"samples", "across_d", "within_d", "pass"});
  std::string detail;
  for (auto N : plan.sweep.samples) {
    const auto s = sweep_spread(cells, N);
    res.ok = res.ok && s.pass;
    spread << N << s.across << s.within << int(s.pass);
    spread.end_row();
    detail += " N=" + std::to_string(N) + ": across " + format_number(s.across) + " vs within " +
              format_number(s.within) + ";";
  }
  res.summary = "resolution-sweep" + detail;
  return res;
}

CommandResult cmd_report(const ExperimentPlan& plan) {
  std::vector<std::string> missing;
  for (const auto& dir : plan.runs) {
    if (!std::filesystem::exists(dir / "runlog.csv")) missing.push_back((dir / "runlog.csv").string());
    if (!std::filesystem::exists(dir / "run.json")) missing.push_back((dir / "run.json").string());
  }
  if (!missing.empty()) {
    std::string msg = "missing report inputs:";
    for (const auto& m : missing) msg += " " + m;
    throw IoError(msg);
  }
  ensure_dir(plan.out);
  std::vector<PlotSeries> by_iter, by_samples;
  CommandResult res;
  std::vector<std::string> header{"run"};
  for (const auto& h : runlog_header()) header.push_back(h);
  CsvWriter merged(plan.out / "merged.csv", header);
  for (const auto& dir : plan.runs) {
    const auto table = read_csv(dir / "runlog.csv");
    const auto meta = read_json(dir / "run.json");
    const std::string label = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
    PlotSeries it{label, {}, {}, false}, smp{label, {}, {}, false};
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      const double k = table.number(r, "k"), gap = table.number(r, "gap");
      it.x.push_back(k);
      it.y.push_back(gap);
      smp.x.push_back(table.number(r, "samples"));
      smp.y.push_back(gap);
      merged << label;
      for (const auto& cell : table.rows[r]) merged << cell;
      merged.end_row();
    }
    by_iter.push_back(it);
    by_samples.push_back(smp);
    if (meta.value("exact", false)) {
      const double grho = meta.at("gamma_rho"), C = meta.at("cost_bound"), g = meta.at("gamma");
      const double A = meta.at("num_actions");
      PlotSeries bound{label + " bound", {}, {}, true};
      for (std::size_t r = 0; r < it.x.size(); ++r) {
        const double b = std::pow(grho, it.x[r]) * (1.0 + std::log(A)) * C / (1.0 - g);
        bound.x.push_back(it.x[r]);
        bound.y.push_back(b);
        if (it.y[r] > b + 1e-9) res.ok = false;
      }
      by_iter.push_back(bound);
    }
  }
  write_line_plot(plan.out / "gap_vs_iteration.svg", by_iter,
                  {"Optimality gap per iteration", "iteration", "gap", true});
  write_line_plot(plan.out / "gap_vs_samples.svg", by_samples,
                  {"Optimality gap against samples drawn", "cumulative samples", "gap", true});
  res.summary = "report: " + std::to_string(plan.runs.size()) + " run(s) plotted";
  return res;
}

CommandResult run_command(const ExperimentPlan& plan) {
  plan.validate();
  ensure_dir(plan.out);
  write_json(plan_to_json(plan), plan.out / "plan.json");
  if (plan.command == "npmd") return cmd_npmd(plan);
  if (plan.command == "exact-pmd") return cmd_exact_pmd(plan);
  if (plan.command == "sampler-check") return cmd_sampler_check(plan);
  if (plan.command == "spline-rate") return cmd_spline_rate(plan);
  if (plan.command == "lipschitz-report") return cmd_lipschitz_report(plan);
  if (plan.command == "resolution-sweep") return cmd_resolution_sweep(plan);
  return cmd_report(plan);
}

}  // namespace npmd
