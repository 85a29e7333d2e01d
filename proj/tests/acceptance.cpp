// End-to-end acceptance run: evaluates every criterion, prints one PASS/FAIL
// line each and exits nonzero if any failed. Pass criterion numbers to run a
// subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "helpers.hpp"
#include "npmd/cnn.hpp"
#include "npmd/csv.hpp"
#include "npmd/env.hpp"
#include "npmd/error.hpp"
#include "npmd/experiment.hpp"
#include "npmd/manifold.hpp"
#include "npmd/npmd.hpp"
#include "npmd/sampler.hpp"
#include "npmd/spline.hpp"

using namespace npmd;
using namespace npmd::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

std::span<const double> col_span(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

ExperimentPlan load_plan(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return plan_from_json(nlohmann::json::parse(in));
}

// 1. Sampler law and expected oracle calls.
Outcome sampler_law() {
  Outcome o;
  for (double g : {0.5, 0.9}) {
    const auto m = random_mdp(8, 2, g, 101);
    Rng prng(7);
    const auto pi = random_policy(8, 2, prng);
    const VisitationSampler sampler(m, pi);
    Rng rng = Rng::derive(2024, {static_cast<std::uint64_t>(g * 100)});
    const int draws = 100000;
    Eigen::MatrixXd freq = Eigen::MatrixXd::Zero(8, 2);
    double calls = 0.0;
    for (int i = 0; i < draws; ++i) {
      const auto v = sampler.sample(rng);
      freq(static_cast<Eigen::Index>(v.state), static_cast<Eigen::Index>(v.action)) += 1.0 / draws;
      calls += static_cast<double>(v.trajectory_len + 1) / draws;
    }
    const double dist = tv(freq, visitation_distribution(m, pi).state_action);
    const double rel = std::abs(calls * (1 - g) - 1.0);
    o.pass = o.pass && dist < 0.02 && rel < 0.02;
    o.detail += "gamma " + fmt(g) + ": TV " + fmt(dist) + ", calls " + fmt(calls) + " vs " + fmt(1 / (1 - g)) + "; ";
  }
  return o;
}

// 2. Exact PMD linear rate and potential contraction.
Outcome exact_rate() {
  Outcome o;
  const std::array<std::pair<std::size_t, std::size_t>, 3> shapes{{{8, 2}, {32, 3}, {64, 4}}};
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto m = random_mdp(shapes[i].first, shapes[i].second, 0.9, 300 + i);
    NpmdConfig cfg;
    cfg.iterations = 40;
    try {
      const auto log = run_exact_pmd(m, cfg);
      double worst_ratio = 0.0, worst_contraction = -kInfinity;
      for (std::size_t k = 0; k < log.rows.size(); ++k) {
        const auto& r = log.rows[k];
        worst_ratio = std::max(worst_ratio, r.gap / r.bound);
        if (r.gap > r.bound + 1e-9) o.pass = false;
        if (k > 0) {
          const double excess = r.potential - log.gamma_rho * log.rows[k - 1].potential;
          worst_contraction = std::max(worst_contraction, excess);
          if (excess > 1e-9) o.pass = false;
        }
      }
      o.detail += std::to_string(shapes[i].first) + "x" + std::to_string(shapes[i].second) + ": max gap/bound " +
                  fmt(worst_ratio) + ", max potential excess " + fmt(worst_contraction) + "; ";
    } catch (const BoundViolation& e) {
      o.pass = false;
      o.detail += e.what();
    }
  }
  return o;
}

// 3. Closed-form mirror step against the numerical solver.
Outcome closed_form() {
  Outcome o;
  Rng rng(303);
  int agreed = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t A = 2 + rng.index(5);
    std::vector<double> q(A), p(A);
    double total = 0.0;
    for (std::size_t a = 0; a < A; ++a) {
      q[a] = rng.uniform(0, 10);
      p[a] = 0.02 + rng.uniform();
      total += p[a];
    }
    for (auto& v : p) v /= total;
    try {
      closed_form_pmd_check(q, p, std::exp(rng.uniform(std::log(1e-3), std::log(5.0))));
      ++agreed;
    } catch (const OracleMismatch& e) {
      o.detail += std::string(e.what()) + "; ";
    }
  }
  o.pass = agreed == 100;
  o.detail += std::to_string(agreed) + "/100 instances agree within TV 1e-8";
  return o;
}

// 4. Q-function Lipschitz bound and the rotation counterexample.
Outcome q_lipschitz() {
  Outcome o;
  const auto m = smoothed_rotation_circle(CircleEnvOptions{});
  const auto report = lipschitz_mdp_report(m, 1.0);
  Rng rng(404);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const auto vf = policy_evaluate(m, random_policy(m.num_states, m.num_actions, rng));
    for (Eigen::Index a = 0; a < vf.Q.cols(); ++a) {
      const Eigen::VectorXd q = vf.Q.col(a);
      worst = std::max(worst, estimate_lipschitz(*m.net, col_span(q), 1.0, 0.0));
    }
  }
  o.pass = worst <= report.q_lipschitz_bound + 1e-9;
  o.detail = "smoothed rotation: max Q Lipschitz " + fmt(worst) + " <= bound " + fmt(report.q_lipschitz_bound) + "; ";

  const auto rot = rotation_circle(CircleEnvOptions{}, 1, 2);
  const auto rrep = lipschitz_mdp_report(rot, 1.0);
  const auto vf = policy_evaluate(rot, PolicyTable::uniform(rot.num_states, 2));
  double rot_q = 0.0;
  for (Eigen::Index a = 0; a < 2; ++a) {
    const Eigen::VectorXd q = vf.Q.col(a);
    rot_q = std::max(rot_q, estimate_lipschitz(*rot.net, col_span(q), 1.0, 0.0));
  }
  o.pass = o.pass && std::isinf(rrep.transition_lipschitz) && std::isfinite(rot_q);
  o.detail += "pure rotation: transition constant " + fmt(rrep.transition_lipschitz) + ", Q Lipschitz " + fmt(rot_q);
  return o;
}

// 5. Spline approximation rate.
Outcome spline_rate() {
  Outcome o;
  int rows = 0, passed = 0;
  double tightest = 0.0;
  for (int d : {1, 2})
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto fn = envelope_test_function(d, 1.0, seed);
      for (const auto& r : verify_rate(fn, std::array<int, 3>{2, 3, 4})) {
        ++rows;
        if (r.pass && r.sup_error <= r.bound + 1e-9) ++passed;
        tightest = std::max(tightest, r.sup_error / r.bound);
      }
    }
  o.pass = rows == 60 && passed == 60;
  o.detail = std::to_string(passed) + "/" + std::to_string(rows) + " rows within bound, max error/bound " + fmt(tightest);
  return o;
}

// 6. Envelope construction and the approximate-Lipschitz perturbation lemma.
Outcome envelope_calculus() {
  Outcome o;
  const auto m = embedded_circle_net(120, 6, 606);
  const auto& dist = m.distances();
  Rng rng(606);
  int env_ok = 0, pert_ok = 0;
  for (int c = 0; c < 50; ++c) {
    const double alpha = rng.uniform(0.5, 1.0), eps = rng.uniform(0.0, 0.3), L = rng.uniform(0.2, 3.0);
    const std::size_t anchor = rng.index(m.size());
    std::vector<double> f(m.size());
    for (std::size_t i = 0; i < m.size(); ++i)
      f[i] = L * std::pow(dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(anchor)), alpha) +
             rng.uniform(-eps, eps);
    const double declared = estimate_lipschitz(m, f, alpha, eps);
    const auto env = lipschitz_envelope(m, f, declared, alpha);
    double gap = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) gap = std::max(gap, std::abs(env[i] - f[i]));
    const double achieved = estimate_lipschitz(m, env, alpha, 0.0);
    if (achieved <= declared * (1 + 1e-9) + 1e-15 && gap <= 2 * eps + 1e-12) ++env_ok;
  }
  for (int c = 0; c < 50; ++c) {
    const double alpha = rng.uniform(0.5, 1.0), eps = rng.uniform(0.01, 0.5), L = rng.uniform(0.2, 3.0);
    const std::size_t a1 = rng.index(m.size()), a2 = rng.index(m.size());
    std::vector<double> g(m.size());
    // min of two distance powers is (L, alpha)-Lipschitz on the net
    for (std::size_t i = 0; i < m.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double base = L * std::min(std::pow(dist(ii, static_cast<Eigen::Index>(a1)), alpha),
                                       std::pow(dist(ii, static_cast<Eigen::Index>(a2)), alpha));
      g[i] = base + rng.uniform(-eps, eps);
    }
    if (estimate_lipschitz(m, g, alpha, eps) <= L * (1 + 1e-12)) ++pert_ok;
  }
  o.pass = env_ok == 50 && pert_ok == 50;
  o.detail = "envelope " + std::to_string(env_ok) + "/50, perturbation " + std::to_string(pert_ok) + "/50";
  return o;
}

// 7. CNN convolution, gradients, caps and clamp.
Outcome cnn_correctness() {
  Outcome o;
  Rng rng(707);
  int conv_ok = 0;
  for (int t = 0; t < 200; ++t) {
    const int D = 1 + static_cast<int>(rng.index(16)), I = 1 + static_cast<int>(rng.index(5));
    const int cin = 1 + static_cast<int>(rng.index(4)), cout = 1 + static_cast<int>(rng.index(4));
    RowMatrix Z(D, cin);
    for (Eigen::Index r = 0; r < D; ++r)
      for (Eigen::Index c = 0; c < cin; ++c) Z(r, c) = rng.uniform(-2, 2);
    const auto W = random_filter(cout, I, cin, rng);
    if ((conv_forward(Z, W) - naive_conv(Z, W)).cwiseAbs().maxCoeff() <= 1e-12) ++conv_ok;
  }

  double worst_grad = 0.0;
  for (int t = 0; t < 5; ++t) {
    CnnSpec spec;
    spec.blocks = 2;
    spec.layers_per_block = 2;
    spec.channels = 3;
    spec.filter_size = 3;
    spec.ambient_dim = 6;
    auto p = init_params(spec, rng);
    std::vector<double> x(6);
    for (auto& v : x) v = rng.uniform(-1, 1);
    const auto g = backward_gradients(p, x, 1.0);
    const double h = 1e-5;
    for (std::size_t k = 0; k < p.values().size(); ++k) {
      auto plus = p, minus = p;
      plus.values()[k] += h;
      minus.values()[k] -= h;
      const double fd = (cnn_forward(plus, x) - cnn_forward(minus, x)) / (2 * h);
      worst_grad = std::max(worst_grad, std::abs(fd - g.values()[k]) / std::max(1.0, std::abs(fd)));
    }
  }

  CnnSpec spec;
  spec.blocks = 2;
  spec.channels = 4;
  spec.filter_size = 3;
  spec.ambient_dim = 8;
  spec.weight_cap = 0.1;
  spec.output_cap = 0.5;
  RowMatrix X(256, 8);
  std::vector<double> y(256);
  for (Eigen::Index i = 0; i < 256; ++i) {
    for (int c = 0; c < 8; ++c) X(i, c) = rng.uniform(-1, 1);
    y[static_cast<std::size_t>(i)] = 4 * std::sin(3 * X(i, 0));
  }
  TrainOptions opt;
  opt.epochs = 10;
  opt.learning_rate = 0.05;
  RestrictedClassSpec restriction;
  restriction.bound = 2.0;
  const auto res = train_erm(spec, X, y, restriction, opt);
  const bool caps = res.params.max_conv_magnitude() <= spec.weight_cap &&
                    res.params.max_dense_magnitude() <= spec.output_cap;
  const CnnModel model{res.params, restriction.bound};
  double out_max = 0.0;
  for (int t = 0; t < 10000; ++t) {
    std::vector<double> x(8);
    for (auto& v : x) v = rng.uniform(-100, 100);
    out_max = std::max(out_max, std::abs(model(x)));
  }
  o.pass = conv_ok == 200 && worst_grad < 1e-4 && caps && out_max <= restriction.bound;
  o.detail = "conv " + std::to_string(conv_ok) + "/200, max gradient rel. error " + fmt(worst_grad) +
             ", caps " + (caps ? "held" : "violated") + ", max |clamped output| " + fmt(out_max);
  return o;
}

struct RunCsvCheck {
  double ratio = kInfinity;
  bool invariants = true;
};

RunCsvCheck read_run(const fs::path& dir) {
  const auto t = read_csv(dir / "runlog.csv");
  RunCsvCheck c;
  if (t.rows.empty()) return c;
  c.ratio = t.number(t.rows.size() - 1, "gap") / t.number(0, "gap");
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    c.invariants = c.invariants && t.number(r, "schedule_ok") == 1 && t.number(r, "target_bounded") == 1;
  return c;
}

// 8. End-to-end NPMD on the embedded point-goal task.
Outcome end_to_end(const fs::path& configs, const fs::path& out) {
  Outcome o;
  auto plan = load_plan(configs / "point_goal_d32.json");
  plan.out = out / "npmd_d32";
  fs::remove_all(plan.out);
  run_command(plan);
  for (auto seed : plan.seeds) {
    const auto c = read_run(plan.out / ("seed_" + std::to_string(seed)));
    o.pass = o.pass && c.ratio < 0.1 && c.invariants;
    o.detail += "seed " + std::to_string(seed) + ": final/initial gap " + fmt(c.ratio) +
                (c.invariants ? "" : " (invariant violated)") + "; ";
  }
  o.detail += "runs in " + plan.out.string();
  return o;
}

// 9. Resolution sweep: spread across D against spread across seeds.
Outcome no_curse(const fs::path& configs, const fs::path& out) {
  Outcome o;
  auto plan = load_plan(configs / "resolution_sweep.json");
  plan.out = out / "resolution_sweep";
  fs::remove_all(plan.out);
  run_command(plan);
  const auto summary = read_csv(plan.out / "summary.csv");
  std::size_t done = 0;
  for (std::size_t r = 0; r < summary.rows.size(); ++r) {
    const auto& status = summary.rows[r][summary.column("status")];
    if (status == "ok" || summary.rows[r][summary.column("error")] == "invariant violated") ++done;
    o.detail += "D" + summary.rows[r][summary.column("ambient_dim")] + "/s" + summary.rows[r][summary.column("seed")] +
                " " + fmt(summary.number(r, "final_gap")) + "; ";
  }
  const auto spread = read_csv(plan.out / "spread.csv");
  o.pass = done == summary.rows.size() && !spread.rows.empty();
  for (std::size_t r = 0; r < spread.rows.size(); ++r) {
    const double across = spread.number(r, "across_d"), within = spread.number(r, "within_d");
    o.pass = o.pass && across <= 3 * within;
    o.detail += "across-D " + fmt(across) + " vs 3 x within-D " + fmt(3 * within);
  }
  return o;
}

// 10. Performance-difference identity.
Outcome performance_identity() {
  Outcome o;
  Rng rng(1010);
  int ok = 0;
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t S = 2 + rng.index(15), A = 2 + rng.index(3);
    const auto m = random_mdp(S, A, rng.uniform(0.5, 0.99), 1000 + static_cast<std::uint64_t>(t));
    const auto p1 = random_policy(S, A, rng), p2 = random_policy(S, A, rng);
    try {
      const double lhs = performance_difference(m, p1, p2);
      const double rhs = expected_value(m, policy_evaluate(m, p2).V) - expected_value(m, policy_evaluate(m, p1).V);
      worst = std::max(worst, std::abs(lhs - rhs));
      if (std::abs(lhs - rhs) <= 1e-9) ++ok;
    } catch (const OracleMismatch& e) {
      o.detail += std::string(e.what()) + "; ";
    }
  }
  o.pass = ok == 50;
  o.detail += std::to_string(ok) + "/50 triples, max discrepancy " + fmt(worst);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string configs = NPMD_CONFIG_DIR, out = "acceptance_out";
  app.add_option("criteria", only, "criterion numbers to run (default: all)");
  app.add_option("--configs", configs, "directory holding the experiment plans");
  app.add_option("--out", out, "directory for run outputs");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, "sampler law", 10, sampler_law},
      {2, "exact PMD linear rate", 30, exact_rate},
      {3, "closed-form mirror step", 5, closed_form},
      {4, "Q Lipschitz bound", 20, q_lipschitz},
      {5, "spline rate", 60, spline_rate},
      {6, "envelope calculus", 20, envelope_calculus},
      {7, "CNN correctness", 60, cnn_correctness},
      {8, "end-to-end NPMD", 15 * 60, [&] { return end_to_end(configs, out); }},
      {9, "resolution sweep", 45 * 60, [&] { return no_curse(configs, out); }},
      {10, "performance difference", 5, performance_identity},
  };
  const std::set<int> wanted(only.begin(), only.end());
  fs::create_directories(out);
  int failures = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::printf("%s criterion %d (%s) [%.1f s of %.0f s%s]: %s\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(), secs,
                c.budget_seconds, in_time ? "" : ", over budget", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
