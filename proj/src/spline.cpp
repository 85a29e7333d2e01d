#include "npmd/spline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "npmd/csv.hpp"
#include "npmd/error.hpp"
#include "npmd/random.hpp"

namespace npmd {

namespace {

// Calls fn(point) for every point of the grid {0, 1/(n-1), ..., 1}^dim.
template <class Fn>
void for_each_grid_point(int dim, int n, Fn&& fn) {
  std::vector<int> idx(static_cast<std::size_t>(dim), 0);
  std::vector<double> x(static_cast<std::size_t>(dim), 0.0);
  const double h = n > 1 ? 1.0 / (n - 1) : 0.0;
  while (true) {
    for (int k = 0; k < dim; ++k) x[static_cast<std::size_t>(k)] = idx[static_cast<std::size_t>(k)] * h;
    fn(std::span<const double>(x));
    int k = 0;
    while (k < dim && ++idx[static_cast<std::size_t>(k)] == n) idx[static_cast<std::size_t>(k++)] = 0;
    if (k == dim) break;
  }
}

std::size_t ipow(std::size_t base, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= base;
  return r;
}

}  // namespace

double sawtooth(double x) {
  if (x >= 0.0 && x <= 1.0) return x;
  if (x > 1.0 && x <= 2.0) return 2.0 - x;
  return 0.0;
}

double bspline_eval(int level, std::span<const int> shift, std::span<const double> x) {
  if (shift.size() != x.size()) throw ShapeMismatch("shift and point dimensions differ");
  const double scale = std::ldexp(1.0, level);
  double v = 1.0;
  for (std::size_t k = 0; k < x.size() && v != 0.0; ++k) {
    if (shift[k] < 0 || shift[k] >= static_cast<int>(scale)) throw InvalidArgument("shift outside {0..2^p-1}");
    v *= sawtooth(scale * x[k] - shift[k]);
  }
  return v;
}

SplineApprox::SplineApprox(int level, int dim, std::vector<double> coeffs)
    : level_(level), dim_(dim), coeffs_(std::move(coeffs)) {
  if (level < 1 || dim < 1) throw InvalidArgument("spline level and dimension must be positive");
  if (level * dim > 40) throw InvalidArgument("spline grid too large");
  if (coeffs_.size() != ipow(std::size_t{1} << level, dim)) throw ShapeMismatch("need 2^(p d) coefficients");
}

std::size_t SplineApprox::index(std::span<const int> shift) const {
  const std::size_t side = std::size_t{1} << level_;
  std::size_t idx = 0, stride = 1;
  for (int k = 0; k < dim_; ++k) {
    idx += static_cast<std::size_t>(shift[static_cast<std::size_t>(k)]) * stride;
    stride *= side;
  }
  return idx;
}

double SplineApprox::operator()(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != dim_) throw ShapeMismatch("point dimension differs from the spline's");
  const int side = 1 << level_;
  // Per axis at most two shifts j with 2^p x - j in [0, 2]: floor(t) - 1 and floor(t).
  std::vector<int> lo(static_cast<std::size_t>(dim_));
  for (int k = 0; k < dim_; ++k) lo[static_cast<std::size_t>(k)] = static_cast<int>(std::floor(std::ldexp(x[static_cast<std::size_t>(k)], level_))) - 1;
  std::vector<int> shift(static_cast<std::size_t>(dim_));
  double sum = 0.0;
  for (unsigned mask = 0; mask < (1u << dim_); ++mask) {
    bool valid = true;
    for (int k = 0; k < dim_; ++k) {
      const int j = lo[static_cast<std::size_t>(k)] + static_cast<int>((mask >> k) & 1u);
      if (j < 0 || j >= side) valid = false;
      shift[static_cast<std::size_t>(k)] = j;
    }
    if (!valid) continue;
    const double c = coeffs_[index(shift)];
    if (c != 0.0) sum += c * bspline_eval(level_, shift, x);
  }
  return sum;
}

std::size_t SplineApprox::active_count(std::span<const double> x) const {
  const int side = 1 << level_;
  std::vector<int> shift(static_cast<std::size_t>(dim_), 0);
  std::size_t count = 0;
  for (std::size_t n = 0; n < coeffs_.size(); ++n) {
    std::size_t rest = n;
    for (int k = 0; k < dim_; ++k) {
      shift[static_cast<std::size_t>(k)] = static_cast<int>(rest % static_cast<std::size_t>(side));
      rest /= static_cast<std::size_t>(side);
    }
    if (bspline_eval(level_, shift, x) != 0.0) ++count;
  }
  return count;
}

SplineApprox fit_spline(const CubeFunction& f, int dim, int level) {
  const std::size_t side = std::size_t{1} << level;
  std::vector<double> coeffs(ipow(side, dim));
  std::vector<double> node(static_cast<std::size_t>(dim));
  for (std::size_t n = 0; n < coeffs.size(); ++n) {
    std::size_t rest = n;
    for (int k = 0; k < dim; ++k) {
      node[static_cast<std::size_t>(k)] = std::ldexp(static_cast<double>(rest % side + 1), -level);
      rest /= side;
    }
    coeffs[n] = f(node);
  }
  return SplineApprox(level, dim, std::move(coeffs));
}

LipschitzTestFunction envelope_test_function(int dim, double alpha, std::uint64_t seed) {
  if (dim < 1 || dim > 3) throw InvalidArgument("test functions support d in {1, 2, 3}");
  Rng rng = Rng::derive(seed, {static_cast<std::uint64_t>(dim)});
  constexpr int kAnchorsPerAxis = 5;
  const double slope = rng.uniform(1.0, 3.0);
  std::vector<std::vector<double>> anchors;
  std::vector<double> values;
  for_each_grid_point(dim, kAnchorsPerAxis, [&](std::span<const double> p) {
    anchors.emplace_back(p.begin(), p.end());
    values.push_back(rng.uniform(-1.0, 1.0));
  });
  constexpr double kHatWidth = 0.25;
  auto f = [anchors, values, slope, alpha, dim](std::span<const double> x) {
    double env = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      double d2 = 0.0;
      for (int k = 0; k < dim; ++k) {
        const double diff = x[static_cast<std::size_t>(k)] - anchors[a][static_cast<std::size_t>(k)];
        d2 += diff * diff;
      }
      env = std::min(env, values[a] + slope * std::pow(std::sqrt(d2), alpha));
    }
    double hat = 1.0;
    for (int k = 0; k < dim; ++k) {
      const double xk = x[static_cast<std::size_t>(k)];
      hat *= std::clamp(std::min(xk, 1.0 - xk) / kHatWidth, 0.0, 1.0);
    }
    return env * hat;
  };

  // Brute-force constant over every pair of a dense grid.
  const int n = dim == 1 ? 1025 : (dim == 2 ? 49 : 13);
  std::vector<std::vector<double>> pts;
  std::vector<double> vals;
  for_each_grid_point(dim, n, [&](std::span<const double> p) {
    pts.emplace_back(p.begin(), p.end());
    vals.push_back(f(p));
  });
  double L = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      double d2 = 0.0;
      for (int k = 0; k < dim; ++k) {
        const double diff = pts[i][static_cast<std::size_t>(k)] - pts[j][static_cast<std::size_t>(k)];
        d2 += diff * diff;
      }
      L = std::max(L, std::abs(vals[i] - vals[j]) / std::pow(std::sqrt(d2), alpha));
    }
  return {f, L, alpha, dim};
}

std::vector<RateRow> verify_rate(const LipschitzTestFunction& fn, std::span<const int> levels) {
  std::vector<RateRow> rows;
  for (int p : levels) {
    const auto approx = fit_spline(fn.f, fn.dim, p);
    RateRow r;
    r.level = p;
    r.basis_count = approx.size();
    r.lipschitz = fn.lipschitz;
    r.alpha = fn.alpha;
    for_each_grid_point(fn.dim, 4 * (1 << p) + 1, [&](std::span<const double> x) {
      r.sup_error = std::max(r.sup_error, std::abs(approx(x) - fn.f(x)));
    });
    r.bound = 2.0 * fn.lipschitz * fn.dim *
              std::pow(static_cast<double>(r.basis_count), -fn.alpha / static_cast<double>(fn.dim));
    r.pass = r.sup_error <= r.bound + 1e-9;
    rows.push_back(r);
  }
  return rows;
}

void write_rate_csv(std::span<const RateRow> rows, const std::filesystem::path& path) {
  CsvWriter csv(path, {"p", "N", "L", "alpha", "sup_error", "bound", "pass"});
  for (const auto& r : rows) {
    csv << r.level << r.basis_count << r.lipschitz << r.alpha << r.sup_error << r.bound << (r.pass ? 1 : 0);
    csv.end_row();
  }
}

}  // namespace npmd
