#include "npmd/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <queue>
#include <sstream>
#include <string>

#include "npmd/error.hpp"
#include "npmd/random.hpp"

namespace npmd {

namespace {

double euclidean(const PointCloud& p, Eigen::Index i, Eigen::Index j) {
  return (p.row(i) - p.row(j)).norm();
}

// Dijkstra from every source over the radius graph.
Eigen::MatrixXd all_pairs_shortest_paths(const PointCloud& p, double radius) {
  const Eigen::Index n = p.rows();
  std::vector<std::vector<std::pair<Eigen::Index, double>>> adj(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double w = euclidean(p, i, j);
      if (w <= radius) {
        adj[i].emplace_back(j, w);
        adj[j].emplace_back(i, w);
      }
    }
  }

  Eigen::MatrixXd dist = Eigen::MatrixXd::Constant(n, n, kInfinity);
  using Item = std::pair<double, Eigen::Index>;
  for (Eigen::Index s = 0; s < n; ++s) {
    auto row = dist.row(s);
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    row(s) = 0.0;
    heap.emplace(0.0, s);
    while (!heap.empty()) {
      auto [d, u] = heap.top();
      heap.pop();
      if (d > row(u)) continue;
      for (auto [v, w] : adj[u]) {
        const double nd = d + w;
        if (nd < row(v)) {
          row(v) = nd;
          heap.emplace(nd, v);
        }
      }
    }
  }
  // Symmetrize exactly: floating sums along reversed paths can differ by an ulp.
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = std::min(dist(i, j), dist(j, i));
      dist(i, j) = d;
      dist(j, i) = d;
    }
  return dist;
}

}  // namespace

EmbeddedManifold::EmbeddedManifold(PointCloud points, int intrinsic_dim, double edge_radius,
                                   std::size_t max_points)
    : points_(std::move(points)), intrinsic_dim_(intrinsic_dim), edge_radius_(edge_radius) {
  const auto n = points_.rows();
  if (n < 2) throw InvalidArgument("manifold net needs at least two points");
  if (static_cast<std::size_t>(n) > max_points)
    throw InvalidArgument("manifold net has " + std::to_string(n) + " points, cap is " +
                          std::to_string(max_points));
  if (intrinsic_dim < 1 || intrinsic_dim > points_.cols())
    throw InvalidArgument("intrinsic dimension must lie in [1, ambient dimension]");

  std::vector<double> nearest(n, kInfinity);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) nearest[i] = std::min(nearest[i], euclidean(points_, i, j));
  const double spacing = *std::max_element(nearest.begin(), nearest.end());
  if (edge_radius_ <= 0.0) edge_radius_ = 3.0 * spacing;

  for (Eigen::Index i = 0; i < n; ++i)
    if (nearest[i] > edge_radius_)
      throw DisconnectedGraph("net point " + std::to_string(i) + " has no neighbour within radius " +
                              std::to_string(edge_radius_));

  bound_ = points_.cwiseAbs().maxCoeff();
  dist_ = all_pairs_shortest_paths(points_, edge_radius_);
  connected_ = std::isfinite(dist_.maxCoeff());
}

double EmbeddedManifold::geodesic_distance(std::size_t i, std::size_t j) const {
  if (i >= size() || j >= size()) throw InvalidArgument("net index out of range");
  const double d = dist_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  if (!std::isfinite(d))
    throw DisconnectedGraph("no path between net points " + std::to_string(i) + " and " +
                            std::to_string(j));
  return d;
}

void LipschitzWitness::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("Lipschitz exponent must lie in (0, 1]");
  if (!(constant >= 0.0)) throw InvalidArgument("Lipschitz constant must be nonnegative");
  if (!(proximity >= 0.0)) throw InvalidArgument("proximity constant must be nonnegative");
}

double estimate_lipschitz(const Eigen::MatrixXd& dist, std::span<const double> f, double alpha,
                          double eps) {
  const auto n = static_cast<Eigen::Index>(f.size());
  if (dist.rows() != n || dist.cols() != n)
    throw ShapeMismatch("function size does not match the distance matrix");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("Lipschitz exponent must lie in (0, 1]");
  if (!(eps >= 0.0)) throw InvalidArgument("proximity constant must be nonnegative");

  double best = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double excess = std::abs(f[i] - f[j]) - 2.0 * eps;
      if (excess <= 0.0) continue;
      const double d = dist(i, j);
      if (d == 0.0) return kInfinity;
      const double ratio = excess / (alpha == 1.0 ? d : std::pow(d, alpha));
      best = std::max(best, ratio);
    }
  }
  return best;
}

double estimate_lipschitz(const EmbeddedManifold& m, std::span<const double> f, double alpha,
                          double eps) {
  return estimate_lipschitz(m.distances(), f, alpha, eps);
}

std::vector<double> lipschitz_envelope(const Eigen::MatrixXd& dist, std::span<const double> f,
                                       double L, double alpha) {
  const auto n = static_cast<Eigen::Index>(f.size());
  if (dist.rows() != n || dist.cols() != n)
    throw ShapeMismatch("function size does not match the distance matrix");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("Lipschitz exponent must lie in (0, 1]");
  if (!(L >= 0.0)) throw InvalidArgument("Lipschitz constant must be nonnegative");

  double sup = 0.0;
  for (double v : f) sup = std::max(sup, std::abs(v));

  std::vector<double> out(f.size());
  for (Eigen::Index x = 0; x < n; ++x) {
    double best = kInfinity;
    for (Eigen::Index y = 0; y < n; ++y) {
      const double d = dist(y, x);
      const double penalty = L == 0.0 ? 0.0 : L * (alpha == 1.0 ? d : std::pow(d, alpha));
      best = std::min(best, f[y] + penalty);
    }
    out[x] = std::max(best, -sup);
  }
  return out;
}

std::vector<double> lipschitz_envelope(const EmbeddedManifold& m, std::span<const double> f,
                                       double L, double alpha) {
  return lipschitz_envelope(m.distances(), f, L, alpha);
}

LipschitzWitness sum_approx_lipschitz(const LipschitzWitness& f, const LipschitzWitness& g,
                                      double c) {
  f.validate();
  g.validate();
  if (f.alpha != g.alpha) throw ExponentMismatch("cannot add witnesses with different exponents");
  return {f.constant + std::abs(c) * g.constant, f.alpha, f.proximity + std::abs(c) * g.proximity};
}

EmbeddedManifold circle_net(std::size_t n, double edge_radius) {
  PointCloud p(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    p(i, 0) = std::cos(t);
    p(i, 1) = std::sin(t);
  }
  return EmbeddedManifold(std::move(p), 1, edge_radius);
}

Eigen::MatrixXd random_isometry(int ambient_dim, int source_dim, std::uint64_t seed) {
  if (ambient_dim < source_dim) throw InvalidArgument("cannot embed isometrically into fewer dimensions");
  Rng rng(seed);
  Eigen::MatrixXd g(ambient_dim, source_dim);
  for (int i = 0; i < ambient_dim; ++i)
    for (int j = 0; j < source_dim; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(ambient_dim, source_dim);
  return q;
}

EmbeddedManifold embedded_circle_net(std::size_t n, int ambient_dim, std::uint64_t seed,
                                     double edge_radius) {
  if (ambient_dim == 2) return circle_net(n, edge_radius);
  const Eigen::MatrixXd frame = random_isometry(ambient_dim, 2, seed);
  PointCloud p(n, ambient_dim);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    p.row(i) = (frame.col(0) * std::cos(t) + frame.col(1) * std::sin(t)).transpose();
  }
  return EmbeddedManifold(std::move(p), 1, edge_radius);
}

EmbeddedManifold load_net(const std::filesystem::path& path, int intrinsic_dim, double edge_radius) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open net file " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    std::vector<double> row;
    double v;
    while (ss >> v) row.push_back(v);
    if (!ss.eof()) throw IoError("malformed coordinate in " + path.string() + ": " + line);
    if (!rows.empty() && row.size() != rows.front().size())
      throw IoError("inconsistent dimension in " + path.string());
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("net file " + path.string() + " holds no points");
  PointCloud p(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) p(i, j) = rows[i][j];
  return EmbeddedManifold(std::move(p), intrinsic_dim, edge_radius);
}

}  // namespace npmd
