#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "helpers.hpp"
#include "npmd/env.hpp"
#include "npmd/error.hpp"

using namespace npmd;
using namespace npmd::testing;

namespace {

// Independent oracle: iterate the policy Bellman operator.
Eigen::VectorXd fixed_point_values(const Mdp& m, const PolicyTable& pi, int iterations) {
  const auto n = static_cast<Eigen::Index>(m.num_states);
  Eigen::VectorXd V = Eigen::VectorXd::Zero(n);
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd next = Eigen::VectorXd::Zero(n);
    for (Eigen::Index s = 0; s < n; ++s)
      for (std::size_t a = 0; a < m.num_actions; ++a) {
        const auto ai = static_cast<Eigen::Index>(a);
        next(s) += pi.probs(s, ai) * (m.cost(s, ai) + m.gamma * m.kernel[a].row(s).dot(V));
      }
    V = next;
  }
  return V;
}

Eigen::VectorXd value_iteration(const Mdp& m, double tol) {
  const auto n = static_cast<Eigen::Index>(m.num_states);
  Eigen::VectorXd V = Eigen::VectorXd::Zero(n);
  for (;;) {
    Eigen::VectorXd next = Eigen::VectorXd::Constant(n, kInfinity);
    for (std::size_t a = 0; a < m.num_actions; ++a) {
      const auto ai = static_cast<Eigen::Index>(a);
      next = next.cwiseMin(m.cost.col(ai) + m.gamma * m.kernel[a] * V);
    }
    const double delta = (next - V).cwiseAbs().maxCoeff();
    V = next;
    if (delta < tol) return V;
  }
}

Mdp single_state(double c, double gamma) {
  return make_mdp({Eigen::MatrixXd::Ones(1, 1)}, Eigen::MatrixXd::Constant(1, 1, c), gamma, std::max(c, 1.0));
}

void check_bellman(const Mdp& m, const ValueFunctions& vf, const PolicyTable& pi) {
  const double cap = m.cost_bound / (1.0 - m.gamma);
  for (std::size_t a = 0; a < m.num_actions; ++a) {
    const auto ai = static_cast<Eigen::Index>(a);
    const Eigen::VectorXd rhs = m.cost.col(ai) + m.gamma * m.kernel[a] * vf.V;
    CHECK((vf.Q.col(ai) - rhs).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK((vf.V - (vf.Q.cwiseProduct(pi.probs)).rowwise().sum()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(vf.V.minCoeff() >= -1e-12);
  CHECK(vf.Q.minCoeff() >= -1e-12);
  CHECK(vf.V.maxCoeff() <= cap + 1e-9);
  CHECK(vf.Q.maxCoeff() <= cap + 1e-9);
}

}  // namespace

TEST_SUITE("env") {

TEST_CASE("single state value is a geometric series") {
  for (double g : {0.0, 0.5, 0.9, 0.99}) {
    const auto m = single_state(0.7, g);
    const auto vf = policy_evaluate(m, PolicyTable::uniform(1, 1));
    CHECK(vf.V(0) == doctest::Approx(0.7 / (1 - g)).epsilon(1e-12));
  }
}

TEST_CASE("zero cost gives zero values") {
  auto m = random_mdp(5, 3, 0.9, 4);
  m.cost.setZero();
  const auto vf = policy_evaluate(m, PolicyTable::uniform(5, 3));
  CHECK(vf.V.cwiseAbs().maxCoeff() == 0.0);
  CHECK(vf.Q.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("policy evaluation matches fixed-point iteration") {
  const auto m = random_mdp(2, 2, 0.9, 12);
  Rng rng(1);
  const auto pi = random_policy(2, 2, rng);
  const auto vf = policy_evaluate(m, pi);
  const auto ref = fixed_point_values(m, pi, 10000);
  CHECK((vf.V - ref).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("Bellman consistency and bounds on random MDPs") {
  Rng rng(99);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = random_mdp(3 + seed, 2 + seed % 3, 0.5 + 0.045 * static_cast<double>(seed), seed);
    const auto pi = random_policy(m.num_states, m.num_actions, rng);
    check_bellman(m, policy_evaluate(m, pi), pi);
  }
}

TEST_CASE("identical actions: optimum equals any policy's value") {
  auto m = random_mdp(6, 3, 0.8, 3);
  for (std::size_t a = 1; a < 3; ++a) {
    m.kernel[a] = m.kernel[0];
    m.cost.col(static_cast<Eigen::Index>(a)) = m.cost.col(0);
  }
  const auto opt = optimal_values(m);
  Rng rng(2);
  const auto pi = random_policy(6, 3, rng);
  CHECK((opt.V - policy_evaluate(m, pi).V).cwiseAbs().maxCoeff() < 1e-10);
  for (auto a : opt.greedy_actions) CHECK(a == 0);
}

TEST_CASE("two-state chain solved by hand") {
  // State 0: action 0 stays at cost 1; action 1 moves to 1 at cost 2.
  // State 1 is absorbing and free under both actions.
  Eigen::MatrixXd stay(2, 2), move(2, 2), cost(2, 2);
  stay << 1, 0, 0, 1;
  move << 0, 1, 0, 1;
  cost << 1, 2, 0, 0;
  const double g = 0.9;
  const auto m = make_mdp({stay, move}, cost, g, 2.0);
  const auto opt = optimal_values(m);
  // Staying forever costs 1/(1-g) = 10 > 2, so move once.
  CHECK(opt.V(0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(opt.V(1) == doctest::Approx(0.0));
  CHECK(opt.greedy_actions[0] == 1);
  CHECK(opt.greedy_actions[1] == 0);
  CHECK(opt.Q(0, 0) == doctest::Approx(1.0 + g * 2.0));
}

TEST_CASE("cycle gridworld matches value iteration") {
  // 8 states on a cycle, actions step left/right, cost is distance to state 0.
  const std::size_t n = 8;
  Eigen::MatrixXd left = Eigen::MatrixXd::Zero(n, n), right = Eigen::MatrixXd::Zero(n, n), cost(n, 2);
  for (std::size_t s = 0; s < n; ++s) {
    left(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>((s + n - 1) % n)) = 1.0;
    right(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>((s + 1) % n)) = 1.0;
    const double d = static_cast<double>(std::min(s, n - s));
    cost(static_cast<Eigen::Index>(s), 0) = d;
    cost(static_cast<Eigen::Index>(s), 1) = d;
  }
  const auto m = make_mdp({left, right}, cost, 0.95, 4.0);
  const auto opt = optimal_values(m);
  CHECK((opt.V - value_iteration(m, 1e-13)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("optimal values satisfy the optimality equation") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = random_mdp(16, 3, 0.95, seed);
    const auto opt = optimal_values(m);
    CHECK((opt.Q.rowwise().minCoeff() - opt.V).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((opt.V - value_iteration(m, 1e-13)).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("visitation examples") {
  const auto one = single_state(0.3, 0.9);
  CHECK(visitation_distribution(one, PolicyTable::uniform(1, 1)).state(0) == doctest::Approx(1.0));

  Eigen::MatrixXd to_two(2, 2), cost = Eigen::MatrixXd::Zero(2, 1);
  to_two << 0, 1, 0, 1;
  auto absorbing = make_mdp({to_two}, cost, 0.7);
  absorbing.rho << 1.0, 0.0;
  const auto nu = visitation_distribution(absorbing, PolicyTable::uniform(2, 1));
  CHECK(nu.state(0) == doctest::Approx(0.3));
  CHECK(nu.state(1) == doctest::Approx(0.7));

  const Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(5, 5, 0.2);
  const auto uni = make_mdp({flat, flat}, Eigen::MatrixXd::Zero(5, 2), 0.9);
  Rng rng(4);
  const auto vu = visitation_distribution(uni, random_policy(5, 2, rng));
  CHECK((vu.state.array() - 0.2).abs().maxCoeff() < 1e-12);
}

TEST_CASE("visitation identities on random MDPs") {
  Rng rng(8);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto m = random_mdp(7, 3, 0.85, seed);
    Eigen::VectorXd rho(7);
    for (int i = 0; i < 7; ++i) rho(i) = 0.05 + rng.uniform();
    m.rho = rho / rho.sum();
    const auto pi = random_policy(7, 3, rng);
    const auto nu = visitation_distribution(m, pi);
    CHECK(nu.state.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(((nu.state.array() / m.rho.array()).minCoeff()) >= (1 - m.gamma) - 1e-12);
    CHECK((nu.state_action - nu.state.asDiagonal() * pi.probs).cwiseAbs().maxCoeff() < 1e-14);
    const auto vf = policy_evaluate(m, pi);
    const double lhs = expected_value(m, vf.V);
    const double rhs = (nu.state_action.cwiseProduct(m.cost)).sum() / (1 - m.gamma);
    CHECK(std::abs(lhs - rhs) < 1e-10);
  }
}

TEST_CASE("mismatch coefficient") {
  const auto one = single_state(0.5, 0.9);
  const auto k1 = mismatch_kappa(one, PolicyTable::uniform(1, 1));
  CHECK(k1.kappa == doctest::Approx(1.0));
  CHECK(k1.gamma_rho == doctest::Approx(0.9));

  // rho chosen as the stationary law of P_pi is a fixed point of the visitation map.
  auto m = random_mdp(6, 2, 0.9, 21);
  const auto opt = optimal_values(m);
  const Eigen::MatrixXd P = policy_kernel(m, opt.policy);
  Eigen::VectorXd stat = Eigen::VectorXd::Constant(6, 1.0 / 6.0);
  for (int it = 0; it < 5000; ++it) stat = P.transpose() * stat;
  m.rho = stat / stat.sum();
  const auto fixed = mismatch_kappa(m, opt.policy);
  CHECK(fixed.kappa == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(fixed.gamma_rho == doctest::Approx(m.gamma).epsilon(1e-9));

  const auto r = random_mdp(8, 2, 0.9, 5);
  const auto ropt = optimal_values(r);
  const auto nu = visitation_distribution(r, ropt.policy);
  double brute = 0.0;
  for (int s = 0; s < 8; ++s) brute = std::max(brute, nu.state(s) / r.rho(s));
  const auto k = mismatch_kappa(r, ropt.policy);
  CHECK(k.kappa == doctest::Approx(brute).epsilon(1e-12));
  CHECK(k.kappa >= 1.0 - 1e-12);
  CHECK(k.gamma_rho == doctest::Approx(1 - (1 - r.gamma) / brute).epsilon(1e-12));

  auto hole = r;
  hole.rho(3) = 0.0;
  hole.rho /= hole.rho.sum();
  CHECK_THROWS_AS(mismatch_kappa(hole, ropt.policy), FullSupportViolation);
}

TEST_CASE("performance difference lemma") {
  const auto m = random_mdp(4, 3, 0.9, 17);
  Rng rng(6);
  const auto p1 = random_policy(4, 3, rng), p2 = random_policy(4, 3, rng);
  CHECK(performance_difference(m, p1, p1) == doctest::Approx(0.0));
  const double d = performance_difference(m, p1, p2);
  CHECK(std::abs(d - (expected_value(m, policy_evaluate(m, p2).V) - expected_value(m, policy_evaluate(m, p1).V))) < 1e-9);
  const auto opt = optimal_values(m);
  CHECK(performance_difference(m, PolicyTable::uniform(4, 3), opt.policy) <= 1e-12);
}

TEST_CASE("Lipschitz MDP report") {
  SUBCASE("constant cost and state-independent kernel") {
    CircleEnvOptions opt;
    opt.num_states = 32;
    auto m = smoothed_rotation_circle(opt);
    m.cost.setConstant(0.5);
    const Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(32, 32, 1.0 / 32.0);
    for (auto& k : m.kernel) k = flat;
    const auto r = lipschitz_mdp_report(m, 1.0);
    CHECK(r.cost_lipschitz == 0.0);
    CHECK(r.transition_lipschitz < 1e-12);
  }
  SUBCASE("pure rotation has a TV discontinuity yet Lipschitz Q") {
    CircleEnvOptions opt;
    const auto m = rotation_circle(opt, 1, 2);
    const auto r = lipschitz_mdp_report(m, 1.0);
    CHECK(std::isinf(r.transition_lipschitz));
    const auto vf = policy_evaluate(m, PolicyTable::uniform(m.num_states, 2));
    for (int a = 0; a < 2; ++a) {
      const Eigen::VectorXd q = vf.Q.col(a);
      CHECK(std::isfinite(estimate_lipschitz(*m.net, {q.data(), static_cast<std::size_t>(q.size())}, 1.0, 0.0)));
    }
  }
  SUBCASE("smoothed rotation obeys the Q Lipschitz bound") {
    CircleEnvOptions opt;
    const auto m = smoothed_rotation_circle(opt);
    const auto r = lipschitz_mdp_report(m, 1.0);
    CHECK(std::isfinite(r.transition_lipschitz));
    const double C = m.cost_bound, g = m.gamma;
    CHECK(r.q_lipschitz_bound == doctest::Approx(r.cost_lipschitz + g * C / (1 - g) * r.transition_lipschitz));
    CHECK(std::abs(r.normalized_q_lipschitz - (1 - g) * r.q_lipschitz_bound / C) < 1e-12);
    CHECK(r.normalized_q_lipschitz <= std::max(r.cost_lipschitz / C, r.transition_lipschitz) + 1e-12);
    Rng rng(31);
    for (int t = 0; t < 20; ++t) {
      const auto vf = policy_evaluate(m, random_policy(m.num_states, m.num_actions, rng));
      for (Eigen::Index a = 0; a < vf.Q.cols(); ++a) {
        const Eigen::VectorXd q = vf.Q.col(a);
        CHECK(estimate_lipschitz(*m.net, {q.data(), static_cast<std::size_t>(q.size())}, 1.0, 0.0) <=
              r.q_lipschitz_bound + 1e-9);
      }
    }
  }
}

TEST_CASE("built-in environments are valid") {
  CircleEnvOptions opt;
  opt.embed_dim = 8;
  CHECK_NOTHROW(rotation_circle(opt).validate());
  CHECK_NOTHROW(smoothed_rotation_circle(opt).validate());
  PointGoalOptions pg;
  pg.circle = opt;
  const auto m = point_goal_circle(pg);
  CHECK_NOTHROW(m.validate());
  CHECK(m.full_support());
  CHECK(m.on_net());
  CHECK(m.net->ambient_dim() == 8);
  CHECK(m.cost(0, 0) == 0.0);
  CHECK(m.cost.maxCoeff() == doctest::Approx(m.cost_bound));
}

TEST_CASE("validation rejects malformed MDPs") {
  auto m = random_mdp(4, 2, 0.9, 1);
  auto bad = m;
  bad.kernel[0](0, 0) += 0.1;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = m;
  bad.cost(1, 1) = 2.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = m;
  bad.rho(0) += 0.5;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  PolicyTable pi{Eigen::MatrixXd::Constant(4, 2, 0.6)};
  CHECK_THROWS_AS(pi.validate(), InvalidArgument);
}

TEST_CASE("MDP file round trip") {
  PointGoalOptions pg;
  pg.circle.embed_dim = 5;
  const auto m = point_goal_circle(pg);
  const auto path = std::filesystem::temp_directory_path() / "npmd_env_roundtrip.json";
  save_mdp(m, path);
  const auto back = load_mdp(path);
  CHECK(back.num_states == m.num_states);
  CHECK(back.gamma == m.gamma);
  CHECK((back.cost - m.cost).cwiseAbs().maxCoeff() == 0.0);
  for (std::size_t a = 0; a < m.num_actions; ++a) CHECK((back.kernel[a] - m.kernel[a]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.rho - m.rho).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(back.on_net());
  CHECK((back.net->points() - m.net->points()).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
