#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "npmd/manifold.hpp"
#include "npmd/random.hpp"

namespace npmd {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Architecture of the one-sided, stride-one ReLU CNN. Every layer maps
/// `channels` channels to `channels` channels; the input is padded into
/// channel 0.
struct CnnSpec {
  int blocks = 1;
  int layers_per_block = 1;
  int channels = 8;
  int filter_size = 2;
  int ambient_dim = 2;
  double weight_cap = 1.0;   ///< R1: filters and biases
  double output_cap = 10.0;  ///< R2: dense layer

  void validate() const;
  int depth() const { return blocks * layers_per_block; }
  std::size_t filter_size_flat() const;  ///< J * I * J
  std::size_t bias_size_flat() const;    ///< D * J
  std::size_t param_count() const;
  bool operator==(const CnnSpec&) const = default;
};

/// Filter tensor of shape out x taps x in, stored row-major.
struct FilterTensor {
  int out_channels = 1;
  int taps = 1;
  int in_channels = 1;
  std::vector<double> values;

  FilterTensor() = default;
  FilterTensor(int out, int taps, int in);
  double& at(int j, int i, int l) { return values[(static_cast<std::size_t>(j) * taps + i) * in_channels + l]; }
  double at(int j, int i, int l) const { return values[(static_cast<std::size_t>(j) * taps + i) * in_channels + l]; }
};

/// Y[k, j] = sum_i sum_l W[j, i, l] Z[k + i, l], rows of Z past the end read
/// as zero. Z is D x in_channels.
RowMatrix conv_forward(const RowMatrix& Z, const FilterTensor& filter);

/// All trainable weights in one flat buffer. Layout: for each block, for
/// each layer, the filter (J x I x J) then the bias (D x J); then the dense
/// weight (D x J) and the scalar output bias.
class CnnParams {
 public:
  CnnParams() = default;
  explicit CnnParams(const CnnSpec& spec);

  const CnnSpec& spec() const { return spec_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  /// Layer index runs over the whole depth: block * L + layer.
  std::span<double> filter(int layer);
  std::span<const double> filter(int layer) const;
  std::span<double> bias(int layer);
  std::span<const double> bias(int layer) const;
  std::span<double> dense();
  std::span<const double> dense() const;
  double& dense_bias() { return values_.back(); }
  double dense_bias() const { return values_.back(); }

  bool all_zero() const;
  /// Largest |entry| over filters and biases, and over the dense layer.
  double max_conv_magnitude() const;
  double max_dense_magnitude() const;
  /// Projects every entry onto its cap box.
  void clip_to_caps();
  /// Throws CapViolation when an entry exceeds its cap.
  void check_caps() const;

 private:
  std::size_t layer_offset(int layer) const;
  CnnSpec spec_;
  std::vector<double> values_;
};

/// Scaled Gaussian initialization, clipped to the caps.
CnnParams init_params(const CnnSpec& spec, Rng& rng);

/// Raw network output (no truncation stage).
double cnn_forward(const CnnParams& params, std::span<const double> x);

/// Reverse-mode gradient of upstream * cnn_forward(params, x) with respect to
/// every parameter, in the same layout as the parameters.
CnnParams backward_gradients(const CnnParams& params, std::span<const double> x, double upstream);

/// Accumulates upstream * d f / d params into `grad` and returns f(x).
double accumulate_gradients(const CnnParams& params, std::span<const double> x, double upstream,
                            CnnParams& grad);

/// Truncation to [-A, A] written as the two-layer ReLU map
/// relu(2A - relu(A - v)) - A. A = +inf disables it.
double clamp_stage(double v, double bound);

/// Network plus the fixed truncation stage.
struct CnnModel {
  CnnParams params;
  double clamp = kInfinity;

  double operator()(std::span<const double> x) const { return clamp_stage(cnn_forward(params, x), clamp); }
};

/// Sup-norm / approximate-Lipschitz class a trained network should sit in,
/// checked on the points of `net`.
struct RestrictedClassSpec {
  double bound = kInfinity;
  double lipschitz = kInfinity;
  double alpha = 1.0;
  double proximity = 0.0;
  const EmbeddedManifold* net = nullptr;

  void validate() const;
};

struct RestrictionReport {
  double sup_norm = 0.0;
  double lip_estimate = 0.0;
  bool pass = true;
};

RestrictionReport check_restriction(const CnnModel& model, const RestrictedClassSpec& restriction);
/// Same check on precomputed values at the net points.
RestrictionReport check_restriction(std::span<const double> values, const RestrictedClassSpec& restriction);

struct NetPair {
  std::size_t first = 0;
  std::size_t second = 0;
};

/// Mean of ((|f(x) - f(y)| - 2 eps - L d^alpha(x, y))_+)^2 over the pairs,
/// evaluated on the raw network. When `grad` is given, weight * d/dparams is
/// added to it.
double lipschitz_penalty(const CnnParams& params, std::span<const NetPair> pairs,
                         const RestrictedClassSpec& restriction, CnnParams* grad = nullptr,
                         double weight = 1.0);

enum class Optimizer { Sgd, Adam };

struct TrainOptions {
  int epochs = 40;
  int batch_size = 32;
  double learning_rate = 3e-3;
  Optimizer optimizer = Optimizer::Adam;
  std::uint64_t seed = 0;
  double lipschitz_weight = 0.0;   ///< mu for the penalty term
  int lipschitz_pairs = 8;         ///< net pairs per mini-batch
};

struct TrainResult {
  CnnParams params;
  std::vector<double> epoch_loss;  ///< full-data MSE of the clamped model after each epoch
  std::vector<double> best_loss;   ///< best-so-far, non-increasing
  int best_epoch = -1;             ///< -1 means the starting point was never beaten
};

/// Mini-batch ERM on squared loss. The raw network is fitted and the clamp is
/// applied only when scoring: for targets inside [-A, A] truncation never
/// increases the error, and it would zero the gradient of saturated outputs.
/// Parameters are projected onto the caps after every step and the epoch
/// with the lowest full-data loss is returned. `warm_start` that is null or
/// identically zero triggers a random initialization.
TrainResult train_erm(const CnnSpec& spec, const RowMatrix& inputs, std::span<const double> targets,
                      const RestrictedClassSpec& restriction, const TrainOptions& options,
                      const CnnParams* warm_start = nullptr);

/// Mean squared error of the clamped model over a dataset.
double mean_squared_error(const CnnModel& model, const RowMatrix& inputs, std::span<const double> targets);

struct SizingConstants {
  double blocks_scale = 1.0;    ///< kappa_M
  double depth_scale = 0.25;    ///< kappa_L
  int max_depth = 6;            ///< L_max
  double channel_scale = 0.5;   ///< kappa_J
  int min_channels = 8;
  double output_cap_scale = 10.0;  ///< kappa_R
  int max_filter = 3;
  double weight_cap = 1.0;
};

/// M = ceil(kappa_M N^{d/(d+2 alpha)}), L = ceil(kappa_L (log N + D + log D))
/// capped at L_max, J = max(min_channels, ceil(kappa_J D)), I = min(3, D),
/// R1 = weight_cap, R2 = kappa_R N.
CnnSpec architecture_from_budget(std::size_t samples, int ambient_dim, int intrinsic_dim, double alpha,
                                 const SizingConstants& k = {});

void save_params(const CnnParams& params, const std::filesystem::path& path);
CnnParams load_params(const std::filesystem::path& path);

}  // namespace npmd
