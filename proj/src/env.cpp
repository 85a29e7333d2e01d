#include "npmd/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "npmd/error.hpp"
#include "npmd/random.hpp"

namespace npmd {

namespace {

constexpr double kStochasticTol = 1e-12;
constexpr double kResidualTol = 1e-10;

void check_finite_mdp(const Mdp& m) {
  if (m.num_states == 0 || m.kernel.size() != m.num_actions)
    throw InvalidArgument("oracle needs a finite-state MDP with an exact kernel");
}

void check_policy_shape(const Mdp& m, const PolicyTable& pi) {
  if (pi.num_states() != m.num_states || pi.num_actions() != m.num_actions)
    throw ShapeMismatch("policy shape does not match the MDP");
}

// Residual tolerance scaled to the size of the solution.
double residual_tol(double scale) { return kResidualTol * std::max(1.0, scale); }

}  // namespace

void Mdp::validate() const {
  if (num_states == 0 || num_actions == 0) throw InvalidArgument("MDP needs states and actions");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("gamma must lie in [0, 1)");
  if (!(cost_bound > 0.0)) throw InvalidArgument("cost bound must be positive");
  if (kernel.size() != num_actions) throw ShapeMismatch("one kernel matrix per action expected");
  const auto n = static_cast<Eigen::Index>(num_states);
  for (std::size_t a = 0; a < num_actions; ++a) {
    const auto& P = kernel[a];
    if (P.rows() != n || P.cols() != n) throw ShapeMismatch("kernel matrix must be |S| x |S|");
    if ((P.array() < 0.0).any()) throw InvalidArgument("negative transition probability");
    for (Eigen::Index s = 0; s < n; ++s)
      if (std::abs(P.row(s).sum() - 1.0) > kStochasticTol)
        throw InvalidArgument("kernel row does not sum to one (action " + std::to_string(a) +
                              ", state " + std::to_string(s) + ")");
  }
  if (cost.rows() != n || cost.cols() != static_cast<Eigen::Index>(num_actions))
    throw ShapeMismatch("cost must be |S| x |A|");
  if ((cost.array() < 0.0).any() || (cost.array() > cost_bound).any())
    throw InvalidArgument("cost outside [0, C]");
  if (rho.size() != n) throw ShapeMismatch("initial distribution has the wrong length");
  if ((rho.array() < 0.0).any() || std::abs(rho.sum() - 1.0) > kStochasticTol)
    throw InvalidArgument("initial distribution is not a probability vector");
  if (net && net->size() != num_states)
    throw ShapeMismatch("manifold net size differs from the state count");
}

bool Mdp::full_support() const { return (rho.array() > 0.0).all(); }

PolicyTable PolicyTable::uniform(std::size_t states, std::size_t actions) {
  PolicyTable p;
  p.probs = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(states),
                                      static_cast<Eigen::Index>(actions), 1.0 / actions);
  return p;
}

PolicyTable PolicyTable::deterministic(const std::vector<std::size_t>& actions,
                                       std::size_t num_actions) {
  PolicyTable p;
  p.probs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(actions.size()),
                                  static_cast<Eigen::Index>(num_actions));
  for (std::size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] >= num_actions) throw InvalidArgument("action index out of range");
    p.probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(actions[s])) = 1.0;
  }
  return p;
}

void PolicyTable::validate() const {
  if ((probs.array() < 0.0).any()) throw InvalidArgument("negative policy probability");
  for (Eigen::Index s = 0; s < probs.rows(); ++s)
    if (std::abs(probs.row(s).sum() - 1.0) > kStochasticTol)
      throw InvalidArgument("policy row " + std::to_string(s) + " does not sum to one");
}

Eigen::MatrixXd policy_kernel(const Mdp& m, const PolicyTable& pi) {
  check_finite_mdp(m);
  check_policy_shape(m, pi);
  const auto n = static_cast<Eigen::Index>(m.num_states);
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t a = 0; a < m.num_actions; ++a)
    P += pi.probs.col(static_cast<Eigen::Index>(a)).asDiagonal() * m.kernel[a];
  return P;
}

ValueFunctions policy_evaluate(const Mdp& m, const PolicyTable& pi) {
  const Eigen::MatrixXd P = policy_kernel(m, pi);
  const auto n = P.rows();
  const Eigen::VectorXd c_pi = (m.cost.cwiseProduct(pi.probs)).rowwise().sum();
  const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) - m.gamma * P;
  ValueFunctions out;
  out.V = system.partialPivLu().solve(c_pi);
  const double res = (system * out.V - c_pi).cwiseAbs().maxCoeff();
  if (!std::isfinite(res) || res > residual_tol(out.V.cwiseAbs().maxCoeff()))
    throw SingularSystem("policy evaluation residual " + std::to_string(res));
  out.Q = m.cost;
  for (std::size_t a = 0; a < m.num_actions; ++a)
    out.Q.col(static_cast<Eigen::Index>(a)) += m.gamma * m.kernel[a] * out.V;
  return out;
}

OptimalSolution optimal_values(const Mdp& m) {
  check_finite_mdp(m);
  const auto n = static_cast<Eigen::Index>(m.num_states);
  const auto A = static_cast<Eigen::Index>(m.num_actions);

  // Greedy with a tolerance: an action is only preferred over a lower index
  // when it is strictly better by more than round-off.
  auto greedy = [&](const Eigen::MatrixXd& Q) {
    std::vector<std::size_t> act(static_cast<std::size_t>(n));
    for (Eigen::Index s = 0; s < n; ++s) {
      Eigen::Index best = 0;
      for (Eigen::Index a = 1; a < A; ++a) {
        const double tol = 1e-12 * std::max(1.0, std::abs(Q(s, best)));
        if (Q(s, a) < Q(s, best) - tol) best = a;
      }
      act[static_cast<std::size_t>(s)] = static_cast<std::size_t>(best);
    }
    return act;
  };

  std::vector<std::size_t> actions = greedy(m.cost);
  ValueFunctions vf;
  for (int iter = 0;; ++iter) {
    vf = policy_evaluate(m, PolicyTable::deterministic(actions, m.num_actions));
    auto next = greedy(vf.Q);
    // Keep the incumbent unless the switch strictly improves; this is what
    // guarantees termination of policy iteration.
    bool changed = false;
    for (Eigen::Index s = 0; s < n; ++s) {
      const auto cur = actions[static_cast<std::size_t>(s)];
      const auto cand = next[static_cast<std::size_t>(s)];
      const double tol = 1e-12 * std::max(1.0, std::abs(vf.Q(s, cur)));
      if (cand != cur && vf.Q(s, static_cast<Eigen::Index>(cand)) < vf.Q(s, cur) - tol) {
        actions[static_cast<std::size_t>(s)] = cand;
        changed = true;
      }
    }
    if (!changed) break;
    if (iter > 10000) throw SingularSystem("policy iteration failed to terminate");
  }
  // Canonical lowest-index tie-break once values are settled.
  actions = greedy(vf.Q);
  OptimalSolution out;
  out.policy = PolicyTable::deterministic(actions, m.num_actions);
  vf = policy_evaluate(m, out.policy);
  out.V = vf.V;
  out.Q = vf.Q;
  out.greedy_actions = actions;
  const double res = (out.V - out.Q.rowwise().minCoeff()).cwiseAbs().maxCoeff();
  if (res > residual_tol(out.V.cwiseAbs().maxCoeff()))
    throw SingularSystem("Bellman optimality residual " + std::to_string(res));
  return out;
}

Visitation visitation_distribution(const Mdp& m, const PolicyTable& pi) {
  return visitation_distribution(m, pi, m.rho);
}

Visitation visitation_distribution(const Mdp& m, const PolicyTable& pi,
                                   const Eigen::VectorXd& initial) {
  const Eigen::MatrixXd P = policy_kernel(m, pi);
  const auto n = P.rows();
  if (initial.size() != n) throw ShapeMismatch("initial distribution has the wrong length");
  const Eigen::MatrixXd system = (Eigen::MatrixXd::Identity(n, n) - m.gamma * P).transpose();
  const Eigen::VectorXd rhs = (1.0 - m.gamma) * initial;
  Visitation out;
  out.state = system.partialPivLu().solve(rhs);
  const double res = (system * out.state - rhs).cwiseAbs().maxCoeff();
  if (!std::isfinite(res) || res > kResidualTol)
    throw SingularSystem("visitation residual " + std::to_string(res));
  out.state_action = out.state.asDiagonal() * pi.probs;
  return out;
}

Mismatch mismatch_kappa(const Mdp& m, const PolicyTable& pi_star) {
  if (!m.full_support()) throw FullSupportViolation("initial distribution lacks full support");
  const auto nu = visitation_distribution(m, pi_star).state;
  Mismatch out;
  out.kappa = (nu.array() / m.rho.array()).maxCoeff();
  out.gamma_rho = 1.0 - (1.0 - m.gamma) / out.kappa;
  return out;
}

LipschitzMdpReport lipschitz_mdp_report(const Mdp& m, double alpha) {
  if (!m.net) throw InvalidArgument("Lipschitz report needs an MDP on a manifold net");
  LipschitzWitness{0.0, alpha, 0.0}.validate();
  const auto& dist = m.net->distances();
  const auto n = static_cast<Eigen::Index>(m.num_states);

  LipschitzMdpReport r;
  r.alpha = alpha;
  for (std::size_t a = 0; a < m.num_actions; ++a) {
    const Eigen::VectorXd col = m.cost.col(static_cast<Eigen::Index>(a));
    r.cost_lipschitz = std::max(
        r.cost_lipschitz, estimate_lipschitz(dist, {col.data(), static_cast<std::size_t>(n)}, alpha, 0.0));
  }
  // Rows with disjoint supports are at TV distance one however close the
  // states are: a point-mass kernel is discontinuous in TV, so report +inf.
  for (std::size_t a = 0; a < m.num_actions && std::isfinite(r.transition_lipschitz); ++a) {
    const auto& P = m.kernel[a];
    for (Eigen::Index i = 0; i < n && std::isfinite(r.transition_lipschitz); ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double tv = 0.5 * (P.row(i) - P.row(j)).cwiseAbs().sum();
        if (tv <= 0.0) continue;
        const double d = dist(i, j);
        const bool disjoint = P.row(i).cwiseMin(P.row(j)).sum() == 0.0;
        if (d <= 0.0 || disjoint) {
          r.transition_lipschitz = kInfinity;
          break;
        }
        r.transition_lipschitz = std::max(r.transition_lipschitz, tv / std::pow(d, alpha));
      }
  }
  const double C = m.cost_bound, g = m.gamma;
  r.q_lipschitz_bound = r.cost_lipschitz + g * C / (1.0 - g) * r.transition_lipschitz;
  r.normalized_q_lipschitz = (1.0 - g) * r.cost_lipschitz / C + g * r.transition_lipschitz;
  return r;
}

double expected_value(const Mdp& m, const Eigen::VectorXd& V) { return m.rho.dot(V); }

double performance_difference(const Mdp& m, const PolicyTable& pi, const PolicyTable& pi_prime) {
  const auto base = policy_evaluate(m, pi);
  const auto other = policy_evaluate(m, pi_prime);
  const auto nu = visitation_distribution(m, pi_prime).state;
  const Eigen::VectorXd adv =
      (base.Q.cwiseProduct(pi_prime.probs - pi.probs)).rowwise().sum();
  const double lhs = nu.dot(adv) / (1.0 - m.gamma);
  const double rhs = expected_value(m, other.V) - expected_value(m, base.V);
  if (std::abs(lhs - rhs) > 1e-9)
    throw OracleMismatch("performance difference identity off by " + std::to_string(lhs - rhs));
  return lhs;
}

// ---- built-in environments -------------------------------------------------

namespace {

std::shared_ptr<const EmbeddedManifold> make_circle(const CircleEnvOptions& opt) {
  if (opt.num_states < 3) throw InvalidArgument("circle environments need at least 3 states");
  return std::make_shared<const EmbeddedManifold>(
      embedded_circle_net(opt.num_states, opt.embed_dim, opt.embed_seed));
}

// Row of a wrapped Gaussian centred on `centre`, width in net steps.
Eigen::RowVectorXd wrapped_gaussian(std::size_t n, std::size_t centre, double sigma) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(n));
  const auto half = static_cast<long>(n / 2);
  for (long k = -half; k < static_cast<long>(n) - half; ++k) {
    const auto idx = static_cast<Eigen::Index>(((static_cast<long>(centre) + k) % static_cast<long>(n) + static_cast<long>(n)) %
                                               static_cast<long>(n));
    row(idx) += std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
  }
  return row / row.sum();
}

std::size_t wrap(long i, std::size_t n) {
  const long nn = static_cast<long>(n);
  return static_cast<std::size_t>(((i % nn) + nn) % nn);
}

Eigen::MatrixXd phase_cost(std::size_t n, std::size_t actions) {
  Eigen::MatrixXd c(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(actions));
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t a = 0; a < actions; ++a) {
      const double theta = 2.0 * std::numbers::pi * static_cast<double>(s) / static_cast<double>(n);
      const double phase = 2.0 * std::numbers::pi * static_cast<double>(a) / static_cast<double>(actions);
      c(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) =
          std::clamp(0.5 * (1.0 + std::cos(theta - phase)), 0.0, 1.0);
    }
  return c;
}

Mdp circle_skeleton(const CircleEnvOptions& opt, std::size_t actions) {
  Mdp m;
  m.num_states = opt.num_states;
  m.num_actions = actions;
  m.gamma = opt.gamma;
  m.net = make_circle(opt);
  m.rho = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(opt.num_states), 1.0 / opt.num_states);
  return m;
}

}  // namespace

Mdp rotation_circle(const CircleEnvOptions& opt, int shift, std::size_t num_actions) {
  if (num_actions == 0) throw InvalidArgument("need at least one action");
  Mdp m = circle_skeleton(opt, num_actions);
  const auto n = opt.num_states;
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t s = 0; s < n; ++s)
    P(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(wrap(static_cast<long>(s) + shift, n))) = 1.0;
  m.kernel.assign(num_actions, P);
  m.cost = phase_cost(n, num_actions);
  m.cost_bound = 1.0;
  m.validate();
  return m;
}

Mdp smoothed_rotation_circle(const CircleEnvOptions& opt, std::vector<int> shifts, double blur_sigma) {
  if (shifts.empty()) throw InvalidArgument("need at least one action");
  if (!(blur_sigma > 0.0)) throw InvalidArgument("blur width must be positive");
  Mdp m = circle_skeleton(opt, shifts.size());
  const auto n = opt.num_states;
  for (int shift : shifts) {
    Eigen::MatrixXd P(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t s = 0; s < n; ++s)
      P.row(static_cast<Eigen::Index>(s)) = wrapped_gaussian(n, wrap(static_cast<long>(s) + shift, n), blur_sigma);
    m.kernel.push_back(std::move(P));
  }
  m.cost = phase_cost(n, shifts.size());
  m.cost_bound = 1.0;
  m.validate();
  return m;
}

Mdp point_goal_circle(const PointGoalOptions& opt) {
  LipschitzWitness{0.0, opt.alpha, 0.0}.validate();
  if (opt.goal >= opt.circle.num_states) throw InvalidArgument("goal state out of range");
  if (!(opt.blur_sigma > 0.0)) throw InvalidArgument("blur width must be positive");
  Mdp m = circle_skeleton(opt.circle, 2);
  const auto n = opt.circle.num_states;
  for (int dir : {1, -1}) {
    Eigen::MatrixXd P(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t s = 0; s < n; ++s)
      P.row(static_cast<Eigen::Index>(s)) =
          wrapped_gaussian(n, wrap(static_cast<long>(s) + dir * opt.step, n), opt.blur_sigma);
    m.kernel.push_back(std::move(P));
  }
  const auto& dist = m.net->distances();
  m.cost.resize(static_cast<Eigen::Index>(n), 2);
  for (std::size_t s = 0; s < n; ++s) {
    const double c = std::pow(dist(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(opt.goal)), opt.alpha);
    m.cost.row(static_cast<Eigen::Index>(s)).setConstant(c);
  }
  m.cost_bound = m.cost.maxCoeff();
  m.validate();
  return m;
}

Mdp random_mdp(std::size_t states, std::size_t actions, double gamma, std::uint64_t seed) {
  if (states == 0 || actions == 0) throw InvalidArgument("random MDP needs states and actions");
  Rng rng(seed);
  Mdp m;
  m.num_states = states;
  m.num_actions = actions;
  m.gamma = gamma;
  const auto n = static_cast<Eigen::Index>(states);
  for (std::size_t a = 0; a < actions; ++a) {
    Eigen::MatrixXd P(n, n);
    for (Eigen::Index s = 0; s < n; ++s) {
      for (Eigen::Index t = 0; t < n; ++t) P(s, t) = -std::log(1.0 - rng.uniform());
      P.row(s) /= P.row(s).sum();
    }
    m.kernel.push_back(std::move(P));
  }
  m.cost.resize(n, static_cast<Eigen::Index>(actions));
  for (Eigen::Index s = 0; s < n; ++s)
    for (Eigen::Index a = 0; a < static_cast<Eigen::Index>(actions); ++a) m.cost(s, a) = rng.uniform();
  m.cost_bound = 1.0;
  m.rho = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(states));
  m.validate();
  return m;
}

// ---- serialization ---------------------------------------------------------

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& M) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd json_matrix(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Eigen::MatrixXd M(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j.at(r).size()) != cols) throw ShapeMismatch("ragged matrix in MDP file");
    for (Eigen::Index c = 0; c < cols; ++c) M(r, c) = j.at(r).at(c).get<double>();
  }
  return M;
}

}  // namespace

void save_mdp(const Mdp& m, const std::filesystem::path& path) {
  nlohmann::json j;
  j["states"] = m.num_states;
  j["actions"] = m.num_actions;
  j["gamma"] = m.gamma;
  j["cost_bound"] = m.cost_bound;
  j["rho"] = std::vector<double>(m.rho.data(), m.rho.data() + m.rho.size());
  j["cost"] = matrix_json(m.cost);
  auto kernel = nlohmann::json::array();
  for (const auto& P : m.kernel) kernel.push_back(matrix_json(P));
  j["kernel"] = std::move(kernel);
  if (m.net) {
    j["net"]["intrinsic_dim"] = m.net->intrinsic_dim();
    j["net"]["edge_radius"] = m.net->edge_radius();
    j["net"]["points"] = matrix_json(m.net->points());
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

Mdp load_mdp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    Mdp m;
    m.num_states = j.at("states").get<std::size_t>();
    m.num_actions = j.at("actions").get<std::size_t>();
    m.gamma = j.at("gamma").get<double>();
    m.cost_bound = j.at("cost_bound").get<double>();
    const auto rho = j.at("rho").get<std::vector<double>>();
    m.rho = Eigen::Map<const Eigen::VectorXd>(rho.data(), static_cast<Eigen::Index>(rho.size()));
    m.cost = json_matrix(j.at("cost"));
    for (const auto& k : j.at("kernel")) m.kernel.push_back(json_matrix(k));
    if (j.contains("net")) {
      const auto& net = j["net"];
      m.net = std::make_shared<const EmbeddedManifold>(PointCloud(json_matrix(net.at("points"))),
                                                       net.at("intrinsic_dim").get<int>(),
                                                       net.at("edge_radius").get<double>());
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed MDP file " + path.string() + ": " + e.what());
  }
}

}  // namespace npmd
