#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace npmd {

/// Row-major point cloud: one row per net point, one column per ambient axis.
using PointCloud = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Finite epsilon-net of a d-dimensional manifold sitting in R^D. Geodesic
/// distances are shortest paths in the graph joining points closer than
/// `edge_radius`, with Euclidean edge lengths.
class EmbeddedManifold {
 public:
  static constexpr std::size_t kDefaultMaxPoints = 4096;

  /// `edge_radius <= 0` selects the default: three times the largest
  /// nearest-neighbour spacing.
  EmbeddedManifold(PointCloud points, int intrinsic_dim, double edge_radius = 0.0,
                   std::size_t max_points = kDefaultMaxPoints);

  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  int ambient_dim() const { return static_cast<int>(points_.cols()); }
  int intrinsic_dim() const { return intrinsic_dim_; }
  double edge_radius() const { return edge_radius_; }
  /// Sup-norm bound B over all net coordinates.
  double bound() const { return bound_; }

  const PointCloud& points() const { return points_; }
  std::span<const double> point(std::size_t i) const {
    return {points_.data() + i * points_.cols(), static_cast<std::size_t>(points_.cols())};
  }

  /// Shortest-path distance; throws DisconnectedGraph when no path exists.
  double geodesic_distance(std::size_t i, std::size_t j) const;

  /// All-pairs geodesic matrix (+inf between disconnected components).
  const Eigen::MatrixXd& distances() const { return dist_; }

  bool connected() const { return connected_; }

 private:
  PointCloud points_;
  int intrinsic_dim_;
  double edge_radius_;
  double bound_;
  bool connected_ = true;
  Eigen::MatrixXd dist_;
};

/// Witness that a function is (L, alpha, eps)-approximately Lipschitz.
struct LipschitzWitness {
  double constant = 0.0;
  double alpha = 1.0;
  double proximity = 0.0;

  void validate() const;
};

/// Smallest L with |f(x) - f(y)| <= L d^alpha(x, y) + 2 eps on every pair of
/// the net. Coincident points with values further apart than 2 eps give +inf.
double estimate_lipschitz(const Eigen::MatrixXd& dist, std::span<const double> f, double alpha,
                          double eps);
double estimate_lipschitz(const EmbeddedManifold& m, std::span<const double> f, double alpha,
                          double eps);

/// Lower Lipschitz envelope min_y { f(y) + L d^alpha(y, x) }, truncated below
/// at -||f||_inf.
std::vector<double> lipschitz_envelope(const Eigen::MatrixXd& dist, std::span<const double> f,
                                       double L, double alpha);
std::vector<double> lipschitz_envelope(const EmbeddedManifold& m, std::span<const double> f,
                                       double L, double alpha);

/// Witness for f + c g.
LipschitzWitness sum_approx_lipschitz(const LipschitzWitness& f, const LipschitzWitness& g,
                                      double c);

/// Unit-radius S^1 in R^2 sampled at n equally spaced angles 2 pi i / n.
EmbeddedManifold circle_net(std::size_t n, double edge_radius = 0.0);

/// The same circle mapped into R^D by a seeded linear isometry (orthonormal
/// D x 2 frame). D == 2 returns the plain circle.
EmbeddedManifold embedded_circle_net(std::size_t n, int ambient_dim, std::uint64_t seed,
                                     double edge_radius = 0.0);

/// Seeded D x k matrix with orthonormal columns.
Eigen::MatrixXd random_isometry(int ambient_dim, int source_dim, std::uint64_t seed);

/// Loads one point per line, coordinates separated by whitespace or commas.
/// Blank lines and lines starting with '#' are skipped.
EmbeddedManifold load_net(const std::filesystem::path& path, int intrinsic_dim,
                          double edge_radius = 0.0);

}  // namespace npmd
