#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "npmd/manifold.hpp"

namespace npmd {

/// Finite-action discounted MDP with an exact kernel on finitely many states.
/// Continuous-state environments live on a manifold net, in which case `net`
/// carries the ambient coordinates of every state.
struct Mdp {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  /// kernel[a](s, s') = P(s' | s, a).
  std::vector<Eigen::MatrixXd> kernel;
  /// cost(s, a) in [0, cost_bound].
  Eigen::MatrixXd cost;
  double cost_bound = 1.0;
  double gamma = 0.9;
  Eigen::VectorXd rho;
  std::shared_ptr<const EmbeddedManifold> net;

  /// Checks every structural invariant; throws InvalidArgument on failure.
  void validate() const;
  bool full_support() const;
  bool on_net() const { return net != nullptr; }
};

/// Row-stochastic |S| x |A| matrix.
struct PolicyTable {
  Eigen::MatrixXd probs;

  static PolicyTable uniform(std::size_t states, std::size_t actions);
  static PolicyTable deterministic(const std::vector<std::size_t>& actions, std::size_t num_actions);

  void validate() const;
  std::size_t num_states() const { return static_cast<std::size_t>(probs.rows()); }
  std::size_t num_actions() const { return static_cast<std::size_t>(probs.cols()); }
};

struct ValueFunctions {
  Eigen::VectorXd V;
  Eigen::MatrixXd Q;
};

struct OptimalSolution {
  Eigen::VectorXd V;
  Eigen::MatrixXd Q;
  PolicyTable policy;
  std::vector<std::size_t> greedy_actions;
};

struct Visitation {
  Eigen::VectorXd state;         ///< nu_rho^pi
  Eigen::MatrixXd state_action;  ///< nu_rho^pi(s) pi(a|s)
};

struct Mismatch {
  double kappa = 1.0;
  double gamma_rho = 0.0;
};

struct LipschitzMdpReport {
  double cost_lipschitz = 0.0;        ///< L_c estimate on the net
  double transition_lipschitz = 0.0;  ///< L_P estimate (TV), +inf on a TV discontinuity
  double alpha = 1.0;
  double q_lipschitz_bound = 0.0;     ///< L_c + gamma C / (1 - gamma) L_P
  double normalized_q_lipschitz = 0.0;///< (1 - gamma) L_c / C + gamma L_P
};

/// P_pi(s, s') = sum_a pi(a|s) P(s'|s,a).
Eigen::MatrixXd policy_kernel(const Mdp& m, const PolicyTable& pi);

ValueFunctions policy_evaluate(const Mdp& m, const PolicyTable& pi);

/// Exact policy iteration with lowest-index greedy tie-breaking.
OptimalSolution optimal_values(const Mdp& m);

Visitation visitation_distribution(const Mdp& m, const PolicyTable& pi);
/// Visitation from an arbitrary initial distribution instead of m.rho.
Visitation visitation_distribution(const Mdp& m, const PolicyTable& pi,
                                   const Eigen::VectorXd& initial);

/// kappa = max_s nu^{pi*}(s) / rho(s), gamma_rho = 1 - (1 - gamma) / kappa.
Mismatch mismatch_kappa(const Mdp& m, const PolicyTable& pi_star);

LipschitzMdpReport lipschitz_mdp_report(const Mdp& m, double alpha);

/// (1/(1-gamma)) E_{nu^{pi'}} <Q^pi, pi' - pi>, cross-checked against
/// V^{pi'}(rho) - V^pi(rho); throws OracleMismatch beyond 1e-9.
double performance_difference(const Mdp& m, const PolicyTable& pi, const PolicyTable& pi_prime);

/// rho^T V.
double expected_value(const Mdp& m, const Eigen::VectorXd& V);

// ---- built-in environments -------------------------------------------------

struct CircleEnvOptions {
  std::size_t num_states = 64;
  int embed_dim = 2;
  std::uint64_t embed_seed = 1;
  double gamma = 0.9;
};

/// Deterministic rotation by `shift` net steps whatever the action; cost
/// c(theta, a) = (1 + cos(theta - phase_a)) / 2 with phase_a = 2 pi a / |A|.
Mdp rotation_circle(const CircleEnvOptions& opt, int shift = 1, std::size_t num_actions = 2);

/// Action a rotates by shifts[a] net steps, then the landing point is blurred
/// with a wrapped Gaussian of width `blur_sigma` (in net steps). Same cost as
/// rotation_circle.
Mdp smoothed_rotation_circle(const CircleEnvOptions& opt, std::vector<int> shifts = {1, -1},
                             double blur_sigma = 1.5);

struct PointGoalOptions {
  CircleEnvOptions circle;
  int step = 3;              ///< net steps moved by each action
  double blur_sigma = 1.0;   ///< wrapped-Gaussian motion noise, in net steps
  double alpha = 1.0;        ///< cost = dist(s, goal)^alpha
  std::size_t goal = 0;
};

/// Two actions (counter-clockwise / clockwise by `step`), cost is the
/// geodesic distance to the goal raised to alpha, rho uniform.
Mdp point_goal_circle(const PointGoalOptions& opt);

/// Dense random MDP: kernel rows from normalized exponentials, costs uniform
/// in [0, 1], rho uniform.
Mdp random_mdp(std::size_t states, std::size_t actions, double gamma, std::uint64_t seed);

void save_mdp(const Mdp& m, const std::filesystem::path& path);
Mdp load_mdp(const std::filesystem::path& path);

}  // namespace npmd
