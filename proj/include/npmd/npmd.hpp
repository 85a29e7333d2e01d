#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "npmd/cnn.hpp"
#include "npmd/env.hpp"

namespace npmd {

/// Below this temperature the softmax is replaced by an exact argmax.
inline constexpr double kMinTemperature = 1e-9;

struct NpmdConfig {
  int iterations = 15;                 ///< K
  std::size_t samples_per_action = 512;///< N
  double gamma = 0.9;
  double gamma_rho = 0.0;              ///< <= 0: 1 - (1 - gamma) / kappa from the exact MDP
  double cost_bound = 0.0;             ///< <= 0: the MDP's own bound
  double alpha = 1.0;
  double constant_step = 0.0;          ///< > 0: fixed step with unit temperature
  double critic_lipschitz = 0.0;       ///< L_Q; <= 0: L_c + gamma C / (1 - gamma) L_P from the MDP
  double critic_proximity = 0.0;       ///< eps_Q
  SizingConstants sizing;
  TrainOptions critic_train;
  TrainOptions actor_train;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const NpmdConfig& c);
void from_json(const nlohmann::json& j, NpmdConfig& c);

/// Step size and temperature schedules. With the default geometric mode,
/// eta_k lambda_{k+1} = 1 and lambda_{k+1} = gamma_rho lambda_k.
struct Schedule {
  double gamma_rho = 0.9;
  double cost_bound = 1.0;
  double constant_step = 0.0;

  bool geometric() const { return constant_step <= 0.0; }
  /// (1 - gamma_rho) / (C gamma_rho^{k+1}), evaluated in log space.
  double eta(int k) const;
  /// C gamma_rho^k / (1 - gamma_rho).
  double lambda(int k) const;
};

/// Iterate bundle: per-action actor and critic networks plus schedule values.
struct NpmdState {
  int k = 0;
  std::vector<CnnParams> actor;
  std::vector<CnnParams> critic;
  double eta = 0.0;
  double lambda = 0.0;
};

/// softmax(logits / lambda) with max subtraction; argmax (lowest index on
/// ties) once lambda drops below kMinTemperature.
std::vector<double> softmax_policy(std::span<const double> logits, double lambda);

/// Policy table from logits f(s, a) at every state.
PolicyTable softmax_table(const Eigen::MatrixXd& logits, double lambda);

/// (lambda_next / lambda_k) f - eta_k lambda_next Q. Under the geometric
/// schedules this is gamma_rho f - Q.
double pmd_target(double actor_logit, double critic_value, double eta_k, double lambda_k, double lambda_next);

/// Solves min_p <Q, p> + KL(p || pi) / eta over the simplex in closed form and
/// again with a damped Newton method on the constrained primal; throws
/// OracleMismatch when the two differ by TV 1e-8 or more. Returns the closed
/// form.
std::vector<double> closed_form_pmd_check(std::span<const double> q_row, std::span<const double> pi_row, double eta);

struct ExactLosses {
  double critic = 0.0;
  double actor = 0.0;
};

/// Exact losses as finite sums against the visitation weights `nu`.
/// critic = E_nu ||Q_w - Q||^2, actor = E_nu ||f_next / lambda_next - f_k / lambda_k + eta_k Q_w||^2.
ExactLosses exact_losses(const Eigen::VectorXd& nu, const Eigen::MatrixXd& q_exact, const Eigen::MatrixXd& q_critic,
                         const Eigen::MatrixXd& actor_k, const Eigen::MatrixXd& actor_next, double lambda_k,
                         double lambda_next, double eta_k);

struct Concentrability {
  double next = 1.0;  ///< chi^2(nu^{pi_{k+1}} || nu^{pi_k}) + 1
  double star = 1.0;  ///< chi^2(nu^{pi*} || nu^{pi_k}) + 1
};

Concentrability concentrability_diagnostic(const Mdp& m, const PolicyTable& pi_k, const PolicyTable& pi_next,
                                           const PolicyTable& pi_star);

/// One row per iteration. Fields that do not apply to a row are NaN.
struct RunLogRow {
  int k = 0;
  double gap = 0.0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double critic_sup = 0.0;
  double critic_lip = 0.0;
  bool critic_pass = true;
  double actor_sup = 0.0;
  double actor_lip = 0.0;
  bool actor_pass = true;
  double target_sup = 0.0;
  bool target_bounded = true;
  double target_lip = 0.0;
  bool target_smooth = true;
  double chi2_next = 1.0;
  double chi2_star = 1.0;
  std::size_t samples = 0;  ///< cumulative sample-oracle calls
  double eta = 0.0;
  double lambda = 0.0;
  bool schedule_ok = true;
  double bound = 0.0;       ///< gamma_rho^k (1 + log|A|) C / (1 - gamma); exact runs
  double potential = 0.0;   ///< gap + KL term; exact runs
  double seconds = 0.0;     ///< wall time, kept out of the CSV
};

struct RunLog {
  std::vector<RunLogRow> rows;
  double gamma = 0.0;
  double gamma_rho = 0.0;
  double kappa = 1.0;
  double cost_bound = 1.0;
  std::size_t num_actions = 1;
  double initial_gap = 0.0;
  double critic_bound = 0.0;   ///< A for the critic class
  double actor_bound = 0.0;    ///< A for the actor class
  double critic_lipschitz = 0.0;
  double critic_proximity = 0.0;
  CnnSpec architecture;
  NpmdState final_state;
  bool exact = false;

  double final_gap() const { return rows.empty() ? 0.0 : rows.back().gap; }
};

/// The CSV columns of a run log, in order.
const std::vector<std::string>& runlog_header();
void write_runlog_csv(const RunLog& log, const std::filesystem::path& path);
void write_timing_csv(const RunLog& log, const std::filesystem::path& path);
nlohmann::json runlog_metadata(const RunLog& log);

/// Actor-critic loop with CNN function approximation on an MDP carried by a
/// manifold net. Exact oracles are used for logging only.
RunLog run_npmd(const Mdp& m, const NpmdConfig& config);

/// Idealized loop: exact Q and exact per-state mirror-descent updates. Throws
/// BoundViolation when the linear-rate bound or the potential contraction
/// fails (the latter only under the geometric schedule with gamma_rho at least
/// the mismatch-derived value).
RunLog run_exact_pmd(const Mdp& m, const NpmdConfig& config);

}  // namespace npmd
