#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace npmd {

/// Sawtooth: x on [0, 1], 2 - x on (1, 2], zero elsewhere.
double sawtooth(double x);

/// Tensor-product first-order B-spline prod_k sawtooth(2^p x_k - j_k).
double bspline_eval(int level, std::span<const int> shift, std::span<const double> x);

/// Interpolant sum_j c_j M_{p,j} with c_j = f(2^-p (j + 1)) over the shifts
/// j in {0, ..., 2^p - 1}^d.
class SplineApprox {
 public:
  SplineApprox(int level, int dim, std::vector<double> coeffs);

  int level() const { return level_; }
  int dim() const { return dim_; }
  /// Number of basis functions, 2^(p d).
  std::size_t size() const { return coeffs_.size(); }
  std::span<const double> coeffs() const { return coeffs_; }
  /// Coefficient index of a shift vector (first coordinate fastest).
  std::size_t index(std::span<const int> shift) const;

  /// Sums only the at most 2^d basis functions whose support contains x.
  double operator()(std::span<const double> x) const;
  /// Count of nonzero basis functions at x (brute force over all shifts).
  std::size_t active_count(std::span<const double> x) const;

 private:
  int level_;
  int dim_;
  std::vector<double> coeffs_;
};

using CubeFunction = std::function<double(std::span<const double>)>;

SplineApprox fit_spline(const CubeFunction& f, int dim, int level);

/// Test function on [0, 1]^d with a known Lipschitz constant.
struct LipschitzTestFunction {
  CubeFunction f;
  double lipschitz = 0.0;
  double alpha = 1.0;
  int dim = 1;
};

/// Lipschitz envelope of seeded random values on a coarse grid, taken in the
/// Euclidean metric of the cube and multiplied by a boundary hat so the
/// function vanishes on the boundary. The constant is recomputed by brute
/// force over a dense grid after the multiplication.
LipschitzTestFunction envelope_test_function(int dim, double alpha, std::uint64_t seed);

struct RateRow {
  int level = 0;
  std::size_t basis_count = 0;  ///< N
  double lipschitz = 0.0;
  double alpha = 1.0;
  double sup_error = 0.0;
  double bound = 0.0;  ///< 2 L d N^{-alpha/d}
  bool pass = false;
};

/// Fits the spline at every level and measures the sup error on a grid with
/// 4 * 2^p + 1 points per axis.
std::vector<RateRow> verify_rate(const LipschitzTestFunction& fn, std::span<const int> levels);

void write_rate_csv(std::span<const RateRow> rows, const std::filesystem::path& path);

}  // namespace npmd
