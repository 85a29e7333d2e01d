#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "npmd/env.hpp"
#include "npmd/random.hpp"

namespace npmd {

struct VisitationSample {
  std::size_t state = 0;
  std::size_t action = 0;
  std::size_t trajectory_len = 0;  ///< stopping time T (number of transitions taken)
};

struct CriticTarget {
  std::size_t state = 0;
  std::size_t action = 0;
  double target = 0.0;  ///< c(s, a) + gamma / (1 - gamma) c(s', a')
};

/// Geometric-stopping sampler for the discounted visitation law of a fixed
/// tabular policy. The kernel and policy rows are turned into inverse-CDF
/// tables once, so repeated draws are cheap.
class VisitationSampler {
 public:
  static constexpr std::size_t kMaxSteps = 10'000'000;

  /// `gamma < 0` uses the MDP's own discount.
  VisitationSampler(const Mdp& m, const PolicyTable& pi, double gamma = -1.0);

  /// (s, a) ~ nu_rho^pi(s) pi(a|s).
  VisitationSample sample(Rng& rng) const;
  /// Same law but started from an arbitrary initial distribution.
  VisitationSample sample_from(const Categorical& initial, Rng& rng) const;
  /// One forced transition through (s, a), then the geometric loop; the
  /// reported trajectory length excludes the forced step.
  VisitationSample sample_next(std::size_t s, std::size_t a, Rng& rng) const;

  double gamma() const { return gamma_; }
  const Mdp& mdp() const { return *mdp_; }

 private:
  VisitationSample run(std::size_t s, Rng& rng) const;

  const Mdp* mdp_;
  double gamma_;
  Categorical initial_;
  std::vector<Categorical> policy_;              // per state
  std::vector<std::vector<Categorical>> kernel_; // [action][state]
};

VisitationSample sample_visitation(const VisitationSampler& sampler, Rng& rng);
VisitationSample sample_next_visitation(const VisitationSampler& sampler, std::size_t s,
                                        std::size_t a, Rng& rng);

struct CriticDataset {
  /// per_action[a] holds N targets whose states are i.i.d. from nu_rho^pi.
  std::vector<std::vector<CriticTarget>> per_action;
  /// Sample-oracle calls, T + 1 per visitation draw.
  std::size_t oracle_calls = 0;
};

/// N regression targets per action. Each action draws from its own stream
/// derived from `seed`, so the result does not depend on scheduling.
CriticDataset make_critic_dataset(const Mdp& m, const PolicyTable& pi, std::size_t n_per_action,
                                  std::uint64_t seed, double gamma = -1.0);

/// Upper bound on the standard deviation of the target noise.
double critic_noise_scale(double gamma, double cost_bound);

/// One row per sample: action, the D ambient coordinates, target.
void write_dataset_csv(const CriticDataset& data, const EmbeddedManifold& net,
                       const std::filesystem::path& path);

}  // namespace npmd
