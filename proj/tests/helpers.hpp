#pragma once

#include <Eigen/Dense>

#include "npmd/cnn.hpp"
#include "npmd/env.hpp"
#include "npmd/random.hpp"

namespace npmd::testing {

/// Tabular MDP assembled by hand, rho uniform unless given.
inline Mdp make_mdp(std::vector<Eigen::MatrixXd> kernel, Eigen::MatrixXd cost, double gamma,
                    double cost_bound = 1.0) {
  Mdp m;
  m.num_states = static_cast<std::size_t>(cost.rows());
  m.num_actions = static_cast<std::size_t>(cost.cols());
  m.kernel = std::move(kernel);
  m.cost = std::move(cost);
  m.cost_bound = cost_bound;
  m.gamma = gamma;
  m.rho = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m.num_states),
                                    1.0 / static_cast<double>(m.num_states));
  return m;
}

inline PolicyTable random_policy(std::size_t states, std::size_t actions, Rng& rng) {
  PolicyTable pi{Eigen::MatrixXd(states, actions)};
  for (std::size_t s = 0; s < states; ++s) {
    double total = 0.0;
    for (std::size_t a = 0; a < actions; ++a) {
      const double w = -std::log(1.0 - rng.uniform());
      pi.probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) = w;
      total += w;
    }
    pi.probs.row(static_cast<Eigen::Index>(s)) /= total;
  }
  return pi;
}

/// Half l1 distance.
inline double tv(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return 0.5 * (a - b).cwiseAbs().sum();
}

/// Straight quadruple-loop convolution with one-sided zero extension.
inline RowMatrix naive_conv(const RowMatrix& Z, const FilterTensor& W) {
  const auto D = Z.rows();
  RowMatrix Y = RowMatrix::Zero(D, W.out_channels);
  for (Eigen::Index k = 0; k < D; ++k)
    for (int j = 0; j < W.out_channels; ++j)
      for (int i = 0; i < W.taps; ++i)
        for (int l = 0; l < W.in_channels; ++l)
          if (k + i < D) Y(k, j) += W.at(j, i, l) * Z(k + i, l);
  return Y;
}

inline FilterTensor random_filter(int out, int taps, int in, Rng& rng) {
  FilterTensor f(out, taps, in);
  for (auto& v : f.values) v = rng.uniform(-1, 1);
  return f;
}

}  // namespace npmd::testing
