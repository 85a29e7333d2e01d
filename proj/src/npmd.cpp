#include "npmd/npmd.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "npmd/csv.hpp"
#include "npmd/error.hpp"
#include "npmd/random.hpp"
#include "npmd/sampler.hpp"

namespace npmd {

NLOHMANN_JSON_SERIALIZE_ENUM(Optimizer, {{Optimizer::Sgd, "sgd"}, {Optimizer::Adam, "adam"}})
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainOptions, epochs, batch_size, learning_rate, optimizer, seed,
                                                lipschitz_weight, lipschitz_pairs)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SizingConstants, blocks_scale, depth_scale, max_depth, channel_scale,
                                                min_channels, output_cap_scale, max_filter, weight_cap)

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Rejects keys the target struct does not know, recursing into objects.
void check_keys(const nlohmann::json& given, const nlohmann::json& known, const std::string& where) {
  if (!given.is_object()) throw InvalidArgument("config section '" + where + "' must be an object");
  for (const auto& [key, value] : given.items()) {
    if (!known.contains(key)) throw InvalidArgument("unknown config key '" + where + key + "'");
    if (known[key].is_object()) check_keys(value, known[key], where + key + ".");
  }
}

Eigen::MatrixXd evaluate_heads(const std::vector<CnnParams>& heads, double clamp, const EmbeddedManifold& net) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(net.size()), static_cast<Eigen::Index>(heads.size()));
  for (std::size_t a = 0; a < heads.size(); ++a) {
    const CnnModel model{heads[a], clamp};
    for (std::size_t s = 0; s < net.size(); ++s)
      out(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) = model(net.point(s));
  }
  return out;
}

struct ClassCheck {
  double sup = 0.0;
  double lip = 0.0;
  bool pass = true;
};

ClassCheck check_heads(const Eigen::MatrixXd& values, const RestrictedClassSpec& r) {
  ClassCheck c;
  for (Eigen::Index a = 0; a < values.cols(); ++a) {
    const Eigen::VectorXd col = values.col(a);
    const auto rep = check_restriction({col.data(), static_cast<std::size_t>(col.size())}, r);
    c.sup = std::max(c.sup, rep.sup_norm);
    c.lip = std::max(c.lip, rep.lip_estimate);
    c.pass = c.pass && rep.pass;
  }
  return c;
}

double within_tol(double v, double cap) { return v <= cap + 1e-6 * std::max(1.0, std::abs(cap)); }

RunLogRow blank_row(int k) {
  RunLogRow r;
  r.k = k;
  r.critic_loss = r.actor_loss = kNaN;
  r.critic_sup = r.critic_lip = r.actor_sup = r.actor_lip = kNaN;
  r.target_sup = r.target_lip = kNaN;
  r.chi2_next = r.chi2_star = kNaN;
  r.bound = r.potential = kNaN;
  return r;
}

struct Baseline {
  OptimalSolution opt;
  double v_star = 0.0;
  Mismatch mismatch{kNaN, kNaN};
  double gamma_rho = 0.0;
  double cost_bound = 1.0;
};

Baseline baseline(const Mdp& m, const NpmdConfig& config) {
  m.validate();
  config.validate();
  if (std::abs(m.gamma - config.gamma) > 0.0) throw InvalidArgument("config gamma differs from the MDP's discount");
  Baseline b;
  b.opt = optimal_values(m);
  b.v_star = expected_value(m, b.opt.V);
  if (m.full_support()) b.mismatch = mismatch_kappa(m, b.opt.policy);
  if (config.gamma_rho > 0.0) {
    b.gamma_rho = config.gamma_rho;
  } else {
    if (!m.full_support())
      throw FullSupportViolation("gamma_rho must be given explicitly when rho lacks full support");
    b.gamma_rho = b.mismatch.gamma_rho;
  }
  // kappa = 1 gives gamma_rho = gamma, which is the smallest admissible value.
  b.gamma_rho = std::max(b.gamma_rho, m.gamma);
  if (b.gamma_rho >= 1.0) throw InvalidArgument("gamma_rho must be below 1");
  b.cost_bound = config.cost_bound > 0.0 ? config.cost_bound : m.cost_bound;
  return b;
}

}  // namespace

// ---- config ----------------------------------------------------------------

void NpmdConfig::validate() const {
  if (iterations < 0) throw InvalidArgument("iterations must be nonnegative");
  if (samples_per_action < 1) throw InvalidArgument("samples_per_action must be at least 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidArgument("gamma must lie in (0, 1)");
  if (gamma_rho > 0.0 && !(gamma_rho >= gamma && gamma_rho < 1.0))
    throw InvalidArgument("gamma_rho must lie in [gamma, 1)");
  LipschitzWitness{0.0, alpha, 0.0}.validate();
  if (critic_proximity < 0.0) throw InvalidArgument("critic_proximity must be nonnegative");
}

void to_json(nlohmann::json& j, const NpmdConfig& c) {
  j = nlohmann::json{{"iterations", c.iterations},
                     {"samples_per_action", c.samples_per_action},
                     {"gamma", c.gamma},
                     {"gamma_rho", c.gamma_rho},
                     {"cost_bound", c.cost_bound},
                     {"alpha", c.alpha},
                     {"constant_step", c.constant_step},
                     {"critic_lipschitz", c.critic_lipschitz},
                     {"critic_proximity", c.critic_proximity},
                     {"sizing", c.sizing},
                     {"critic_train", c.critic_train},
                     {"actor_train", c.actor_train},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, NpmdConfig& c) {
  const NpmdConfig d;
  check_keys(j, nlohmann::json(d), "");
  c.iterations = j.value("iterations", d.iterations);
  c.samples_per_action = j.value("samples_per_action", d.samples_per_action);
  c.gamma = j.value("gamma", d.gamma);
  c.gamma_rho = j.value("gamma_rho", d.gamma_rho);
  c.cost_bound = j.value("cost_bound", d.cost_bound);
  c.alpha = j.value("alpha", d.alpha);
  c.constant_step = j.value("constant_step", d.constant_step);
  c.critic_lipschitz = j.value("critic_lipschitz", d.critic_lipschitz);
  c.critic_proximity = j.value("critic_proximity", d.critic_proximity);
  c.sizing = j.value("sizing", d.sizing);
  c.critic_train = j.value("critic_train", d.critic_train);
  c.actor_train = j.value("actor_train", d.actor_train);
  c.seed = j.value("seed", d.seed);
}

// ---- schedules and policy maps -------------------------------------------

double Schedule::eta(int k) const {
  if (!geometric()) return constant_step;
  return std::exp(std::log1p(-gamma_rho) - std::log(cost_bound) - (k + 1) * std::log(gamma_rho));
}

double Schedule::lambda(int k) const {
  if (!geometric()) return 1.0;
  return std::exp(std::log(cost_bound) + k * std::log(gamma_rho) - std::log1p(-gamma_rho));
}

std::vector<double> softmax_policy(std::span<const double> logits, double lambda) {
  if (logits.empty()) throw InvalidArgument("softmax needs at least one action");
  if (!(lambda > 0.0)) throw InvalidArgument("temperature must be positive");
  std::vector<double> p(logits.size(), 0.0);
  const auto top = std::max_element(logits.begin(), logits.end());  // first maximum
  if (lambda < kMinTemperature) {
    p[static_cast<std::size_t>(top - logits.begin())] = 1.0;
    return p;
  }
  double sum = 0.0;
  for (std::size_t a = 0; a < logits.size(); ++a) {
    p[a] = std::exp((logits[a] - *top) / lambda);
    sum += p[a];
  }
  for (double& v : p) v /= sum;
  return p;
}

PolicyTable softmax_table(const Eigen::MatrixXd& logits, double lambda) {
  PolicyTable pi;
  pi.probs.resize(logits.rows(), logits.cols());
  for (Eigen::Index s = 0; s < logits.rows(); ++s) {
    const Eigen::RowVectorXd row = logits.row(s);
    const auto p = softmax_policy({row.data(), static_cast<std::size_t>(row.size())}, lambda);
    for (Eigen::Index a = 0; a < logits.cols(); ++a) pi.probs(s, a) = p[static_cast<std::size_t>(a)];
  }
  return pi;
}

double pmd_target(double actor_logit, double critic_value, double eta_k, double lambda_k, double lambda_next) {
  return lambda_next / lambda_k * actor_logit - eta_k * lambda_next * critic_value;
}

std::vector<double> closed_form_pmd_check(std::span<const double> q_row, std::span<const double> pi_row, double eta) {
  const std::size_t n = q_row.size();
  if (n == 0 || pi_row.size() != n) throw ShapeMismatch("Q and policy rows must be nonempty and equally long");
  for (double p : pi_row)
    if (!(p > 0.0)) throw InvalidArgument("reference policy must be strictly positive");
  if (eta < 0.0) throw InvalidArgument("step size must be nonnegative");
  eta = std::max(eta, 1e-12);

  // (a) closed form: pi exp(-eta Q), normalized in log space.
  std::vector<double> closed(n);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < n; ++a) {
    closed[a] = std::log(pi_row[a]) - eta * q_row[a];
    top = std::max(top, closed[a]);
  }
  double sum = 0.0;
  for (double& v : closed) sum += (v = std::exp(v - top));
  for (double& v : closed) v /= sum;

  // (b) damped Newton on the primal with the simplex equality constraint,
  // started from pi. The constant 1/eta in the gradient is absorbed by the
  // multiplier, so it is dropped.
  std::vector<double> p(pi_row.begin(), pi_row.end());
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& v : p) v /= total;
  std::vector<double> g(n), step(n);
  for (int it = 0; it < 1000; ++it) {
    double hg = 0.0, h1 = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      g[a] = q_row[a] + std::log(p[a] / pi_row[a]) / eta;
      hg += eta * p[a] * g[a];
      h1 += eta * p[a];
    }
    const double nu = -hg / h1;
    double decrement = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      step[a] = -eta * p[a] * (g[a] + nu);
      decrement += eta * p[a] * (g[a] + nu) * (g[a] + nu);
    }
    decrement = std::sqrt(decrement / eta);  // in units of the scaled objective eta F
    if (decrement < 1e-14) break;
    double t = decrement > 0.25 ? 1.0 / (1.0 + decrement) : 1.0;
    auto feasible = [&](double tt) {
      for (std::size_t a = 0; a < n; ++a)
        if (!(p[a] + tt * step[a] > 0.0)) return false;
      return true;
    };
    while (!feasible(t)) t *= 0.5;
    double s = 0.0;
    for (std::size_t a = 0; a < n; ++a) s += (p[a] += t * step[a]);
    for (double& v : p) v /= s;
  }
  double tv = 0.0;
  for (std::size_t a = 0; a < n; ++a) tv += 0.5 * std::abs(p[a] - closed[a]);
  if (!(tv < 1e-8))
    throw OracleMismatch("closed-form and Newton PMD solutions differ by TV " + format_number(tv));
  return closed;
}

ExactLosses exact_losses(const Eigen::VectorXd& nu, const Eigen::MatrixXd& q_exact, const Eigen::MatrixXd& q_critic,
                         const Eigen::MatrixXd& actor_k, const Eigen::MatrixXd& actor_next, double lambda_k,
                         double lambda_next, double eta_k) {
  ExactLosses l;
  l.critic = nu.dot((q_critic - q_exact).rowwise().squaredNorm());
  const Eigen::MatrixXd resid = actor_next / lambda_next - actor_k / lambda_k + eta_k * q_critic;
  l.actor = nu.dot(resid.rowwise().squaredNorm());
  return l;
}

Concentrability concentrability_diagnostic(const Mdp& m, const PolicyTable& pi_k, const PolicyTable& pi_next,
                                           const PolicyTable& pi_star) {
  const auto base = visitation_distribution(m, pi_k).state;
  if ((base.array() <= 0.0).any())
    throw FullSupportViolation("visitation of the current policy vanishes at some state");
  auto ratio = [&](const PolicyTable& pi) {
    const auto nu = visitation_distribution(m, pi).state;
    return (nu.array().square() / base.array()).sum();
  };
  return {ratio(pi_next), ratio(pi_star)};
}

// ---- run log -----------------------------------------------------------------

const std::vector<std::string>& runlog_header() {
  static const std::vector<std::string> h{
      "k",          "gap",        "critic_loss", "actor_loss", "critic_sup", "critic_lip",     "critic_pass",
      "actor_sup",  "actor_lip",  "actor_pass",  "target_sup", "target_bounded", "target_lip", "target_smooth",
      "chi2_next",  "chi2_star",  "samples",     "eta",        "lambda",     "schedule_ok",    "bound",
      "potential"};
  return h;
}

void write_runlog_csv(const RunLog& log, const std::filesystem::path& path) {
  CsvWriter csv(path, runlog_header());
  for (const auto& r : log.rows) {
    csv << r.k << r.gap << r.critic_loss << r.actor_loss << r.critic_sup << r.critic_lip << int(r.critic_pass)
        << r.actor_sup << r.actor_lip << int(r.actor_pass) << r.target_sup << int(r.target_bounded) << r.target_lip
        << int(r.target_smooth) << r.chi2_next << r.chi2_star << r.samples << r.eta << r.lambda
        << int(r.schedule_ok) << r.bound << r.potential;
    csv.end_row();
  }
}

void write_timing_csv(const RunLog& log, const std::filesystem::path& path) {
  CsvWriter csv(path, {"k", "seconds"});
  for (const auto& r : log.rows) {
    csv << r.k << r.seconds;
    csv.end_row();
  }
}

nlohmann::json runlog_metadata(const RunLog& log) {
  const auto& a = log.architecture;
  return {{"exact", log.exact},
          {"gamma", log.gamma},
          {"gamma_rho", log.gamma_rho},
          {"kappa", log.kappa},
          {"cost_bound", log.cost_bound},
          {"num_actions", log.num_actions},
          {"initial_gap", log.initial_gap},
          {"final_gap", log.final_gap()},
          {"critic_bound", log.critic_bound},
          {"actor_bound", log.actor_bound},
          {"critic_lipschitz", log.critic_lipschitz},
          {"critic_proximity", log.critic_proximity},
          {"architecture",
           {{"blocks", a.blocks},
            {"layers_per_block", a.layers_per_block},
            {"channels", a.channels},
            {"filter_size", a.filter_size},
            {"ambient_dim", a.ambient_dim},
            {"weight_cap", a.weight_cap},
            {"output_cap", a.output_cap},
            {"weight_cap_note", "R1 is a fixed config constant, not the analysis-side (8ID)^-1 M^-1/L scale"}}}};
}

// ---- drivers -----------------------------------------------------------------

RunLog run_npmd(const Mdp& m, const NpmdConfig& config) {
  if (!m.net) throw InvalidArgument("NPMD needs an MDP on a manifold net");
  const Baseline base = baseline(m, config);
  const auto& net = *m.net;
  const double C = base.cost_bound, g = m.gamma, grho = base.gamma_rho;
  const Schedule sched{grho, C, config.constant_step};
  const auto A = m.num_actions;

  const double lq = config.critic_lipschitz > 0.0 ? config.critic_lipschitz
                                                   : lipschitz_mdp_report(m, config.alpha).q_lipschitz_bound;
  const RestrictedClassSpec critic_class{C / (1.0 - g), lq, config.alpha, config.critic_proximity, &net};
  RestrictedClassSpec actor_class{C / ((1.0 - grho) * (1.0 - g)), lq / (1.0 - grho), config.alpha,
                                  config.critic_proximity / (1.0 - grho), &net};
  if (!sched.geometric()) actor_class.bound = kInfinity;

  RunLog log;
  log.gamma = g;
  log.gamma_rho = grho;
  log.kappa = base.mismatch.kappa;
  log.cost_bound = C;
  log.num_actions = A;
  log.critic_bound = critic_class.bound;
  log.actor_bound = actor_class.bound;
  log.critic_lipschitz = lq;
  log.critic_proximity = config.critic_proximity;
  log.architecture = architecture_from_budget(std::max<std::size_t>(config.samples_per_action, 2), net.ambient_dim(),
                                              net.intrinsic_dim(), config.alpha, config.sizing);
  const CnnSpec& spec = log.architecture;

  NpmdState state;
  state.actor.assign(A, CnnParams(spec));  // theta_0 = 0, so pi_0 is uniform
  state.critic.assign(A, CnnParams(spec));
  std::size_t samples = 0;
  bool actor_passed = true;  // the zero network sits in every class
  const auto clock_start = std::chrono::steady_clock::now();
  const auto ambient = static_cast<Eigen::Index>(net.ambient_dim());

  for (int k = 0;; ++k) {
    RunLogRow row = blank_row(k);
    state.k = k;
    state.eta = sched.eta(k);
    state.lambda = sched.lambda(k);
    row.eta = state.eta;
    row.lambda = state.lambda;
    const Eigen::MatrixXd logits = evaluate_heads(state.actor, actor_class.bound, net);
    const PolicyTable pi = softmax_table(logits, state.lambda);
    const ValueFunctions vf = policy_evaluate(m, pi);
    row.gap = expected_value(m, vf.V) - base.v_star;
    if (k == 0) log.initial_gap = row.gap;
    row.samples = samples;

    if (k == config.iterations) {
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
      log.rows.push_back(row);
      break;
    }
    const double lambda_next = sched.lambda(k + 1);

    // Critic: regress sampled targets at the shared states, one head per action.
    const auto data = make_critic_dataset(m, pi, config.samples_per_action,
                                          Rng::derive(config.seed, {static_cast<std::uint64_t>(k), 1}).next());
    samples += data.oracle_calls;
    std::vector<RowMatrix> inputs(A);
    for (std::size_t a = 0; a < A; ++a) {
      const auto& bucket = data.per_action[a];
      inputs[a].resize(static_cast<Eigen::Index>(bucket.size()), ambient);
      std::vector<double> targets(bucket.size());
      for (std::size_t i = 0; i < bucket.size(); ++i) {
        const auto x = net.point(bucket[i].state);
        std::copy(x.begin(), x.end(), inputs[a].row(static_cast<Eigen::Index>(i)).data());
        targets[i] = bucket[i].target;
      }
      TrainOptions opt = config.critic_train;
      opt.seed = Rng::derive(config.seed, {static_cast<std::uint64_t>(k), 2, a}).next();
      state.critic[a] = train_erm(spec, inputs[a], targets, critic_class, opt, &state.critic[a]).params;
    }
    const Eigen::MatrixXd q_critic = evaluate_heads(state.critic, critic_class.bound, net);

    // Actor: regress the mirror-descent target at the same states.
    const Eigen::MatrixXd target_table =
        (lambda_next / state.lambda) * logits - (state.eta * lambda_next) * q_critic;
    std::vector<CnnParams> next_actor(A);
    for (std::size_t a = 0; a < A; ++a) {
      const auto& bucket = data.per_action[a];
      std::vector<double> targets(bucket.size());
      for (std::size_t i = 0; i < bucket.size(); ++i) {
        const auto s = static_cast<Eigen::Index>(bucket[i].state);
        targets[i] = pmd_target(logits(s, static_cast<Eigen::Index>(a)), q_critic(s, static_cast<Eigen::Index>(a)),
                                state.eta, state.lambda, lambda_next);
      }
      TrainOptions opt = config.actor_train;
      opt.seed = Rng::derive(config.seed, {static_cast<std::uint64_t>(k), 3, a}).next();
      next_actor[a] = train_erm(spec, inputs[a], targets, actor_class, opt, &state.actor[a]).params;
    }
    const Eigen::MatrixXd logits_next = evaluate_heads(next_actor, actor_class.bound, net);
    const PolicyTable pi_next = softmax_table(logits_next, lambda_next);

    // Diagnostics against the exact oracles.
    const auto nu = visitation_distribution(m, pi).state;
    const auto losses = exact_losses(nu, vf.Q, q_critic, logits, logits_next, state.lambda, lambda_next, state.eta);
    row.critic_loss = losses.critic;
    row.actor_loss = losses.actor;
    const auto critic_check = check_heads(q_critic, critic_class);
    row.critic_sup = critic_check.sup;
    row.critic_lip = critic_check.lip;
    row.critic_pass = critic_check.pass;
    const auto actor_check = check_heads(logits_next, actor_class);
    row.actor_sup = actor_check.sup;
    row.actor_lip = actor_check.lip;
    row.actor_pass = actor_check.pass;
    row.target_sup = target_table.cwiseAbs().maxCoeff();
    row.target_bounded = within_tol(row.target_sup, actor_class.bound);
    row.target_lip = 0.0;
    for (Eigen::Index a = 0; a < target_table.cols(); ++a) {
      const Eigen::VectorXd col = target_table.col(a);
      row.target_lip = std::max(row.target_lip, estimate_lipschitz(net, {col.data(), static_cast<std::size_t>(col.size())},
                                                                    config.alpha, actor_class.proximity));
    }
    row.target_smooth = !(critic_check.pass && actor_passed) || within_tol(row.target_lip, actor_class.lipschitz);
    const auto chi = concentrability_diagnostic(m, pi, pi_next, base.opt.policy);
    row.chi2_next = chi.next;
    row.chi2_star = chi.star;
    if (sched.geometric())
      row.schedule_ok = std::abs(state.eta * lambda_next - 1.0) <= 1e-12 &&
                        std::abs(lambda_next - grho * state.lambda) <= 1e-12 * state.lambda;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
    log.rows.push_back(row);

    state.actor = std::move(next_actor);
    actor_passed = actor_check.pass;
  }
  log.final_state = std::move(state);
  return log;
}

RunLog run_exact_pmd(const Mdp& m, const NpmdConfig& config) {
  const Baseline base = baseline(m, config);
  const double C = base.cost_bound, g = m.gamma, grho = base.gamma_rho;
  const Schedule sched{grho, C, config.constant_step};
  const auto n = static_cast<Eigen::Index>(m.num_states);
  const auto A = static_cast<Eigen::Index>(m.num_actions);
  // The contraction argument holds for any kappa at least the true mismatch;
  // an overridden gamma_rho corresponds to kappa = (1 - gamma) / (1 - gamma_rho).
  const bool assert_potential =
      sched.geometric() && std::isfinite(base.mismatch.gamma_rho) && grho >= base.mismatch.gamma_rho - 1e-15;
  const double kappa = (1.0 - g) / (1.0 - grho);
  const Eigen::VectorXd nu_star = visitation_distribution(m, base.opt.policy).state;

  RunLog log;
  log.exact = true;
  log.gamma = g;
  log.gamma_rho = grho;
  log.kappa = base.mismatch.kappa;
  log.cost_bound = C;
  log.num_actions = m.num_actions;

  Eigen::MatrixXd log_pi = Eigen::MatrixXd::Constant(n, A, -std::log(static_cast<double>(A)));
  auto to_table = [&](const Eigen::MatrixXd& lp) {
    PolicyTable pi;
    pi.probs = lp.array().exp();
    for (Eigen::Index s = 0; s < n; ++s) pi.probs.row(s) /= pi.probs.row(s).sum();
    return pi;
  };
  const auto clock_start = std::chrono::steady_clock::now();
  double prev_potential = kNaN;
  for (int k = 0; k <= config.iterations; ++k) {
    RunLogRow row = blank_row(k);
    row.eta = sched.eta(k);
    row.lambda = sched.lambda(k);
    const PolicyTable pi = to_table(log_pi);
    const ValueFunctions vf = policy_evaluate(m, pi);
    row.gap = expected_value(m, vf.V) - base.v_star;
    if (k == 0) log.initial_gap = row.gap;
    row.bound = std::pow(grho, k) * (1.0 + std::log(static_cast<double>(A))) * C / (1.0 - g);
    if (sched.geometric() && row.gap > row.bound + 1e-9)
      throw BoundViolation("exact PMD gap " + format_number(row.gap) + " exceeds the linear-rate bound " +
                           format_number(row.bound) + " at k = " + std::to_string(k));
    double kl = 0.0;
    for (Eigen::Index s = 0; s < n; ++s)
      kl -= nu_star(s) * log_pi(s, static_cast<Eigen::Index>(base.opt.greedy_actions[static_cast<std::size_t>(s)]));
    row.potential = sched.geometric() ? row.gap + kl / (kappa * grho * row.eta) : kNaN;
    if (assert_potential && k > 0 && row.potential > grho * prev_potential + 1e-9)
      throw BoundViolation("potential failed to contract at k = " + std::to_string(k) + ": " +
                           format_number(row.potential) + " > " + format_number(grho * prev_potential));
    prev_potential = row.potential;
    row.critic_loss = 0.0;
    row.actor_loss = 0.0;

    if (k < config.iterations) {
      Eigen::MatrixXd next = log_pi - row.eta * vf.Q;
      for (Eigen::Index s = 0; s < n; ++s) {
        const double top = next.row(s).maxCoeff();
        next.row(s).array() -= top + std::log((next.row(s).array() - top).exp().sum());
      }
      const auto chi = concentrability_diagnostic(m, pi, to_table(next), base.opt.policy);
      row.chi2_next = chi.next;
      row.chi2_star = chi.star;
      if (sched.geometric())
        row.schedule_ok = std::abs(row.eta * sched.lambda(k + 1) - 1.0) <= 1e-12 &&
                          std::abs(sched.lambda(k + 1) - grho * row.lambda) <= 1e-12 * row.lambda;
      log_pi = std::move(next);
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
    log.rows.push_back(row);
  }
  return log;
}

}  // namespace npmd
