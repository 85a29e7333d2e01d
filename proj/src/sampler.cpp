#include "npmd/sampler.hpp"

#include <string>

#include "npmd/csv.hpp"
#include "npmd/error.hpp"

namespace npmd {

namespace {

Categorical row_table(const Eigen::MatrixXd& M, Eigen::Index r) {
  const Eigen::RowVectorXd row = M.row(r);
  return Categorical({row.data(), static_cast<std::size_t>(row.size())});
}

}  // namespace

VisitationSampler::VisitationSampler(const Mdp& m, const PolicyTable& pi, double gamma)
    : mdp_(&m), gamma_(gamma < 0.0 ? m.gamma : gamma) {
  if (!(gamma_ >= 0.0 && gamma_ < 1.0)) throw InvalidArgument("sampler discount must lie in [0, 1)");
  if (pi.num_states() != m.num_states || pi.num_actions() != m.num_actions)
    throw ShapeMismatch("policy shape does not match the MDP");
  initial_ = Categorical({m.rho.data(), static_cast<std::size_t>(m.rho.size())});
  const auto n = static_cast<Eigen::Index>(m.num_states);
  policy_.reserve(m.num_states);
  for (Eigen::Index s = 0; s < n; ++s) policy_.push_back(row_table(pi.probs, s));
  kernel_.resize(m.num_actions);
  for (std::size_t a = 0; a < m.num_actions; ++a) {
    kernel_[a].reserve(m.num_states);
    for (Eigen::Index s = 0; s < n; ++s) kernel_[a].push_back(row_table(m.kernel[a], s));
  }
}

VisitationSample VisitationSampler::run(std::size_t s, Rng& rng) const {
  VisitationSample out;
  out.state = s;
  out.action = policy_[s].sample(rng);
  while (rng.uniform() < gamma_) {
    if (++out.trajectory_len > kMaxSteps)
      throw RunawaySampler("visitation sampler exceeded " + std::to_string(kMaxSteps) + " steps");
    out.state = kernel_[out.action][out.state].sample(rng);
    out.action = policy_[out.state].sample(rng);
  }
  return out;
}

VisitationSample VisitationSampler::sample(Rng& rng) const { return run(initial_.sample(rng), rng); }

VisitationSample VisitationSampler::sample_from(const Categorical& initial, Rng& rng) const {
  if (initial.size() != mdp_->num_states) throw ShapeMismatch("initial distribution has the wrong length");
  return run(initial.sample(rng), rng);
}

VisitationSample VisitationSampler::sample_next(std::size_t s, std::size_t a, Rng& rng) const {
  if (s >= mdp_->num_states || a >= mdp_->num_actions) throw InvalidArgument("state or action out of range");
  return run(kernel_[a][s].sample(rng), rng);
}

VisitationSample sample_visitation(const VisitationSampler& sampler, Rng& rng) {
  return sampler.sample(rng);
}

VisitationSample sample_next_visitation(const VisitationSampler& sampler, std::size_t s,
                                        std::size_t a, Rng& rng) {
  return sampler.sample_next(s, a, rng);
}

CriticDataset make_critic_dataset(const Mdp& m, const PolicyTable& pi, std::size_t n_per_action,
                                  std::uint64_t seed, double gamma) {
  if (n_per_action == 0) throw InvalidArgument("need at least one sample per action");
  const VisitationSampler sampler(m, pi, gamma);
  const double g = sampler.gamma();
  const double scale = g / (1.0 - g);
  CriticDataset data;
  data.per_action.resize(m.num_actions);
  for (std::size_t a = 0; a < m.num_actions; ++a) {
    Rng rng = Rng::derive(seed, {a});
    auto& bucket = data.per_action[a];
    bucket.reserve(n_per_action);
    for (std::size_t i = 0; i < n_per_action; ++i) {
      const auto start = sampler.sample(rng);
      const auto next = sampler.sample_next(start.state, a, rng);
      data.oracle_calls += start.trajectory_len + next.trajectory_len + 2;
      const auto s = static_cast<Eigen::Index>(start.state);
      const double target =
          m.cost(s, static_cast<Eigen::Index>(a)) +
          scale * m.cost(static_cast<Eigen::Index>(next.state), static_cast<Eigen::Index>(next.action));
      bucket.push_back({start.state, a, target});
    }
  }
  return data;
}

double critic_noise_scale(double gamma, double cost_bound) {
  return gamma * cost_bound / (2.0 * (1.0 - gamma));
}

void write_dataset_csv(const CriticDataset& data, const EmbeddedManifold& net,
                       const std::filesystem::path& path) {
  std::vector<std::string> header{"action"};
  for (int k = 0; k < net.ambient_dim(); ++k) header.push_back("x" + std::to_string(k));
  header.push_back("target");
  CsvWriter csv(path, header);
  for (const auto& bucket : data.per_action)
    for (const auto& t : bucket) {
      if (t.state >= net.size()) throw ShapeMismatch("sample state outside the net");
      csv << t.action;
      for (double x : net.point(t.state)) csv << x;
      csv << t.target;
      csv.end_row();
    }
}

}  // namespace npmd
