#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "npmd/csv.hpp"
#include "npmd/error.hpp"
#include "npmd/sampler.hpp"

using namespace npmd;
using namespace npmd::testing;

namespace {

Eigen::MatrixXd empirical(const VisitationSampler& sampler, std::size_t draws, Rng& rng,
                          double* mean_calls = nullptr) {
  const auto& m = sampler.mdp();
  Eigen::MatrixXd freq = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m.num_states),
                                               static_cast<Eigen::Index>(m.num_actions));
  double calls = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const auto v = sampler.sample(rng);
    freq(static_cast<Eigen::Index>(v.state), static_cast<Eigen::Index>(v.action)) += 1.0;
    calls += static_cast<double>(v.trajectory_len + 1);
  }
  if (mean_calls) *mean_calls = calls / static_cast<double>(draws);
  return freq / static_cast<double>(draws);
}

}  // namespace

TEST_SUITE("sampler") {

TEST_CASE("zero discount returns the initial pair") {
  auto m = random_mdp(4, 2, 0.9, 3);
  m.rho << 0, 0, 1, 0;
  const VisitationSampler sampler(m, PolicyTable::deterministic({1, 1, 0, 1}, 2), 0.0);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto v = sampler.sample(rng);
    CHECK(v.state == 2);
    CHECK(v.action == 0);
    CHECK(v.trajectory_len == 0);
  }
}

TEST_CASE("zero discount next-sample is one kernel step") {
  // Deterministic cycle s -> s + 1 under action 0.
  Eigen::MatrixXd cycle = Eigen::MatrixXd::Zero(3, 3);
  cycle << 0, 1, 0, 0, 0, 1, 1, 0, 0;
  const auto m = make_mdp({cycle}, Eigen::MatrixXd::Zero(3, 1), 0.9);
  const VisitationSampler sampler(m, PolicyTable::uniform(3, 1), 0.0);
  Rng rng(2);
  for (std::size_t s = 0; s < 3; ++s) {
    const auto v = sampler.sample_next(s, 0, rng);
    CHECK(v.state == (s + 1) % 3);
    CHECK(v.action == 0);
    CHECK(v.trajectory_len == 0);
  }
}

TEST_CASE("mean oracle calls at discount 0.98") {
  const auto m = random_mdp(8, 2, 0.98, 5);
  const VisitationSampler sampler(m, PolicyTable::uniform(8, 2));
  Rng rng(3);
  double calls = 0.0;
  empirical(sampler, 100000, rng, &calls);
  CHECK(std::abs(calls - 50.0) / 50.0 < 0.02);
}

TEST_CASE("empirical law matches the exact visitation") {
  for (double g : {0.5, 0.9}) {
    const auto m = random_mdp(2, 2, g, 11);
    Rng prng(4);
    const auto pi = random_policy(2, 2, prng);
    const VisitationSampler sampler(m, pi);
    Rng rng(5);
    const auto freq = empirical(sampler, 100000, rng);
    CHECK(tv(freq, visitation_distribution(m, pi).state_action) < 0.02);
  }
}

TEST_CASE("next-sample law matches visitation from the kernel row") {
  const auto m = random_mdp(5, 2, 0.8, 12);
  Rng prng(6);
  const auto pi = random_policy(5, 2, prng);
  const VisitationSampler sampler(m, pi);
  const std::size_t s = 3, a = 1;
  const Eigen::VectorXd row = m.kernel[a].row(static_cast<Eigen::Index>(s)).transpose();
  const auto exact = visitation_distribution(m, pi, row).state_action;
  Rng rng(7);
  Eigen::MatrixXd freq = Eigen::MatrixXd::Zero(5, 2);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const auto v = sampler.sample_next(s, a, rng);
    freq(static_cast<Eigen::Index>(v.state), static_cast<Eigen::Index>(v.action)) += 1.0 / draws;
  }
  CHECK(tv(freq, exact) < 0.02);
}

TEST_CASE("stopping time is geometric") {
  // Chi-square goodness of fit over T = 0..9 plus a pooled tail, 10 degrees
  // of freedom; 29.588 is the 0.999 quantile.
  const double g = 0.5;
  const auto m = random_mdp(3, 2, g, 8);
  const VisitationSampler sampler(m, PolicyTable::uniform(3, 2));
  Rng rng(9);
  const int draws = 100000, bins = 10;
  std::vector<double> counts(bins + 1, 0.0);
  for (int i = 0; i < draws; ++i) {
    const auto t = sampler.sample(rng).trajectory_len;
    counts[std::min<std::size_t>(t, bins)] += 1.0;
  }
  double chi2 = 0.0;
  for (int t = 0; t <= bins; ++t) {
    const double p = t < bins ? std::pow(g, t) * (1 - g) : std::pow(g, bins);
    const double expected = p * draws;
    chi2 += (counts[t] - expected) * (counts[t] - expected) / expected;
  }
  CHECK(chi2 < 29.588);
}

TEST_CASE("critic targets are unbiased for Q") {
  const auto m = random_mdp(4, 2, 0.8, 13);
  Rng prng(10);
  const auto pi = random_policy(4, 2, prng);
  const auto vf = policy_evaluate(m, pi);
  const VisitationSampler sampler(m, pi);
  const double scale = m.gamma / (1 - m.gamma);
  Rng rng(11);
  const std::size_t s = 2, a = 0;
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto next = sampler.sample_next(s, a, rng);
    const double y = m.cost(2, 0) + scale * m.cost(static_cast<Eigen::Index>(next.state),
                                                   static_cast<Eigen::Index>(next.action));
    sum += y;
    sq += y * y;
  }
  const double mean = sum / n, sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean - vf.Q(2, 0)) <= 3 * sd / std::sqrt(double(n)));
  CHECK(sd <= critic_noise_scale(m.gamma, m.cost_bound) + 1e-12);
}

TEST_CASE("dataset noise is uncorrelated with the state") {
  const auto m = random_mdp(6, 2, 0.9, 14);
  const auto pi = PolicyTable::uniform(6, 2);
  const auto vf = policy_evaluate(m, pi);
  const std::size_t n = 50000;
  const auto data = make_critic_dataset(m, pi, n, 15);
  for (const auto& bucket : data.per_action) {
    REQUIRE(bucket.size() == n);
    double mf = 0.0;
    for (const auto& t : bucket) mf += static_cast<double>(t.state);
    mf /= n;
    double cov = 0.0, sq = 0.0;
    for (const auto& t : bucket) {
      const double zeta = t.target - vf.Q(static_cast<Eigen::Index>(t.state), static_cast<Eigen::Index>(t.action));
      const double prod = (static_cast<double>(t.state) - mf) * zeta;
      cov += prod;
      sq += prod * prod;
    }
    cov /= n;
    const double sd = std::sqrt(sq / n - cov * cov);
    CHECK(std::abs(cov) <= 4 * sd / std::sqrt(double(n)));
  }
}

TEST_CASE("dataset edge cases and bounds") {
  auto zero = random_mdp(5, 3, 0.9, 16);
  zero.cost.setZero();
  for (const auto& bucket : make_critic_dataset(zero, PolicyTable::uniform(5, 3), 50, 1).per_action)
    for (const auto& t : bucket) CHECK(t.target == 0.0);

  const auto one = make_mdp({Eigen::MatrixXd::Ones(1, 1)}, Eigen::MatrixXd::Constant(1, 1, 0.4), 0.75);
  const auto single = make_critic_dataset(one, PolicyTable::uniform(1, 1), 50, 2);
  for (const auto& t : single.per_action[0])
    CHECK(t.target == doctest::Approx(0.4 / 0.25));

  const auto m = random_mdp(7, 2, 0.95, 17);
  const auto data = make_critic_dataset(m, PolicyTable::uniform(7, 2), 2000, 3);
  std::size_t total = 0;
  for (const auto& bucket : data.per_action)
    for (const auto& t : bucket) {
      CHECK(t.target >= 0.0);
      CHECK(t.target <= m.cost_bound / (1 - m.gamma) + 1e-12);
      ++total;
    }
  CHECK(total == 4000);
  // At least two oracle calls per target, and roughly 2 / (1 - gamma) on average.
  CHECK(data.oracle_calls >= 2 * total);
  CHECK(std::abs(double(data.oracle_calls) / total - 2 / (1 - m.gamma)) < 0.1 * 2 / (1 - m.gamma));
  CHECK_THROWS_AS(make_critic_dataset(m, PolicyTable::uniform(7, 2), 0, 3), InvalidArgument);
}

TEST_CASE("dataset is a deterministic function of the seed") {
  const auto m = random_mdp(5, 2, 0.9, 18);
  const auto a = make_critic_dataset(m, PolicyTable::uniform(5, 2), 300, 42);
  const auto b = make_critic_dataset(m, PolicyTable::uniform(5, 2), 300, 42);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t i = 0; i < 300; ++i) {
      CHECK(a.per_action[k][i].state == b.per_action[k][i].state);
      CHECK(a.per_action[k][i].target == b.per_action[k][i].target);
    }
}

TEST_CASE("dataset CSV has ambient coordinates") {
  PointGoalOptions opt;
  opt.circle.num_states = 16;
  opt.circle.embed_dim = 3;
  const auto m = point_goal_circle(opt);
  const auto data = make_critic_dataset(m, PolicyTable::uniform(16, 2), 10, 4);
  const auto path = std::filesystem::temp_directory_path() / "npmd_dataset.csv";
  write_dataset_csv(data, *m.net, path);
  const auto table = read_csv(path);
  CHECK(table.header == std::vector<std::string>{"action", "x0", "x1", "x2", "target"});
  REQUIRE(table.rows.size() == 20);
  const auto& first = data.per_action[0][0];
  CHECK(table.number(0, "x1") == m.net->point(first.state)[1]);
  CHECK(table.number(0, "target") == first.target);
  std::filesystem::remove(path);
}

TEST_CASE("bad discount is rejected") {
  const auto m = random_mdp(3, 2, 0.9, 1);
  CHECK_THROWS_AS(VisitationSampler(m, PolicyTable::uniform(3, 2), 1.0), InvalidArgument);
  CHECK_THROWS_AS(VisitationSampler(m, PolicyTable::uniform(4, 2)), ShapeMismatch);
}

}  // TEST_SUITE
