#include "npmd/cnn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "npmd/csv.hpp"
#include "npmd/error.hpp"

namespace npmd {

namespace {

using ConstTap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
using Tap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;

// Tap i of a filter stored [out][tap][in], viewed as an out x in matrix.
ConstTap tap(const double* f, int out, int taps, int in, int i) {
  return ConstTap(f + static_cast<std::ptrdiff_t>(i) * in, out, in, Eigen::OuterStride<>(taps * in));
}
Tap tap(double* f, int out, int taps, int in, int i) {
  return Tap(f + static_cast<std::ptrdiff_t>(i) * in, out, in, Eigen::OuterStride<>(taps * in));
}

// Y += conv(Z, filter) with one-sided zero extension.
void conv_accumulate(const RowMatrix& Z, const double* f, int out, int taps, int in, RowMatrix& Y) {
  const auto D = Z.rows();
  for (int i = 0; i < taps && i < D; ++i)
    Y.topRows(D - i).noalias() += Z.middleRows(i, D - i) * tap(f, out, taps, in, i).transpose();
}

// Forward pass keeping every layer's activation; acts[0] is the padded input
// and acts[depth] feeds the dense layer.
class Evaluator {
 public:
  explicit Evaluator(const CnnSpec& spec) : spec_(spec), acts_(static_cast<std::size_t>(spec.depth()) + 1) {
    for (auto& a : acts_) a.resize(spec.ambient_dim, spec.channels);
    delta_.resize(spec.ambient_dim, spec.channels);
    back_.resize(spec.ambient_dim, spec.channels);
  }

  double forward(const CnnParams& p, std::span<const double> x) {
    const int D = spec_.ambient_dim, J = spec_.channels, I = spec_.filter_size;
    if (static_cast<int>(x.size()) != D)
      throw ShapeMismatch("input has " + std::to_string(x.size()) + " coordinates, network expects " +
                          std::to_string(D));
    auto& in = acts_[0];
    in.setZero();
    for (int k = 0; k < D; ++k) in(k, 0) = x[static_cast<std::size_t>(k)];
    for (int t = 0; t < spec_.depth(); ++t) {
      auto& out = acts_[static_cast<std::size_t>(t) + 1];
      out = Eigen::Map<const RowMatrix>(p.bias(t).data(), D, J);
      conv_accumulate(acts_[static_cast<std::size_t>(t)], p.filter(t).data(), J, I, J, out);
      out = out.cwiseMax(0.0);
    }
    const Eigen::Map<const RowMatrix> W(p.dense().data(), D, J);
    return W.cwiseProduct(acts_.back()).sum() + p.dense_bias();
  }

  // Must follow forward() on the same input.
  void backward(const CnnParams& p, double upstream, CnnParams& grad) {
    const int D = spec_.ambient_dim, J = spec_.channels, I = spec_.filter_size;
    if (upstream == 0.0) return;
    grad.dense_bias() += upstream;
    Eigen::Map<RowMatrix>(grad.dense().data(), D, J) += upstream * acts_.back();
    delta_ = upstream * Eigen::Map<const RowMatrix>(p.dense().data(), D, J);
    for (int t = spec_.depth() - 1; t >= 0; --t) {
      const auto& out = acts_[static_cast<std::size_t>(t) + 1];
      const auto& in = acts_[static_cast<std::size_t>(t)];
      delta_ = (out.array() > 0.0).select(delta_, 0.0);
      Eigen::Map<RowMatrix>(grad.bias(t).data(), D, J) += delta_;
      double* gf = grad.filter(t).data();
      for (int i = 0; i < I && i < D; ++i)
        tap(gf, J, I, J, i).noalias() += delta_.topRows(D - i).transpose() * in.middleRows(i, D - i);
      if (t == 0) break;
      back_.setZero();
      const double* f = p.filter(t).data();
      for (int i = 0; i < I && i < D; ++i)
        back_.middleRows(i, D - i).noalias() += delta_.topRows(D - i) * tap(f, J, I, J, i);
      std::swap(delta_, back_);
    }
  }

 private:
  CnnSpec spec_;
  std::vector<RowMatrix> acts_;
  RowMatrix delta_, back_;
};

}  // namespace

// ---- spec and parameters ---------------------------------------------------

void CnnSpec::validate() const {
  if (blocks < 1 || layers_per_block < 1 || channels < 1 || ambient_dim < 1)
    throw InvalidArgument("CNN blocks, layers, channels and ambient dimension must be positive");
  if (filter_size < 2 || filter_size > ambient_dim)
    throw InvalidArgument("filter size must lie in [2, D]");
  if (!(weight_cap > 0.0) || !(output_cap > 0.0)) throw InvalidArgument("weight caps must be positive");
}

std::size_t CnnSpec::filter_size_flat() const {
  return static_cast<std::size_t>(channels) * filter_size * channels;
}
std::size_t CnnSpec::bias_size_flat() const { return static_cast<std::size_t>(ambient_dim) * channels; }
std::size_t CnnSpec::param_count() const {
  return static_cast<std::size_t>(depth()) * (filter_size_flat() + bias_size_flat()) + bias_size_flat() + 1;
}

FilterTensor::FilterTensor(int out, int taps_, int in)
    : out_channels(out), taps(taps_), in_channels(in),
      values(static_cast<std::size_t>(out) * taps_ * in, 0.0) {
  if (out < 1 || taps_ < 1 || in < 1) throw InvalidArgument("filter dimensions must be positive");
}

RowMatrix conv_forward(const RowMatrix& Z, const FilterTensor& filter) {
  if (Z.cols() != filter.in_channels)
    throw ShapeMismatch("input has " + std::to_string(Z.cols()) + " channels, filter expects " +
                        std::to_string(filter.in_channels));
  if (filter.values.size() != static_cast<std::size_t>(filter.out_channels) * filter.taps * filter.in_channels)
    throw ShapeMismatch("filter buffer size does not match its shape");
  RowMatrix Y = RowMatrix::Zero(Z.rows(), filter.out_channels);
  conv_accumulate(Z, filter.values.data(), filter.out_channels, filter.taps, filter.in_channels, Y);
  return Y;
}

CnnParams::CnnParams(const CnnSpec& spec) : spec_(spec), values_(spec.param_count(), 0.0) {
  spec.validate();
}

std::size_t CnnParams::layer_offset(int layer) const {
  if (layer < 0 || layer >= spec_.depth()) throw InvalidArgument("layer index out of range");
  return static_cast<std::size_t>(layer) * (spec_.filter_size_flat() + spec_.bias_size_flat());
}

std::span<double> CnnParams::filter(int layer) {
  return std::span(values_).subspan(layer_offset(layer), spec_.filter_size_flat());
}
std::span<const double> CnnParams::filter(int layer) const {
  return std::span(values_).subspan(layer_offset(layer), spec_.filter_size_flat());
}
std::span<double> CnnParams::bias(int layer) {
  return std::span(values_).subspan(layer_offset(layer) + spec_.filter_size_flat(), spec_.bias_size_flat());
}
std::span<const double> CnnParams::bias(int layer) const {
  return std::span(values_).subspan(layer_offset(layer) + spec_.filter_size_flat(), spec_.bias_size_flat());
}
std::span<double> CnnParams::dense() {
  return std::span(values_).subspan(values_.size() - 1 - spec_.bias_size_flat(), spec_.bias_size_flat());
}
std::span<const double> CnnParams::dense() const {
  return std::span(values_).subspan(values_.size() - 1 - spec_.bias_size_flat(), spec_.bias_size_flat());
}

bool CnnParams::all_zero() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
}

double CnnParams::max_conv_magnitude() const {
  double m = 0.0;
  const std::size_t conv = values_.size() - 1 - spec_.bias_size_flat();
  for (std::size_t i = 0; i < conv; ++i) m = std::max(m, std::abs(values_[i]));
  return m;
}

double CnnParams::max_dense_magnitude() const {
  double m = std::abs(dense_bias());
  for (double v : dense()) m = std::max(m, std::abs(v));
  return m;
}

void CnnParams::clip_to_caps() {
  const std::size_t conv = values_.size() - 1 - spec_.bias_size_flat();
  const double r1 = spec_.weight_cap, r2 = spec_.output_cap;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const double cap = i < conv ? r1 : r2;
    values_[i] = std::clamp(values_[i], -cap, cap);
  }
}

void CnnParams::check_caps() const {
  if (max_conv_magnitude() > spec_.weight_cap)
    throw CapViolation("filter/bias entry exceeds R1 = " + format_number(spec_.weight_cap));
  if (max_dense_magnitude() > spec_.output_cap)
    throw CapViolation("dense entry exceeds R2 = " + format_number(spec_.output_cap));
  for (double v : values_)
    if (!std::isfinite(v)) throw CapViolation("non-finite parameter");
}

CnnParams init_params(const CnnSpec& spec, Rng& rng) {
  CnnParams p(spec);
  const double J = spec.channels, I = spec.filter_size, D = spec.ambient_dim;
  for (int t = 0; t < spec.depth(); ++t) {
    // Only channel 0 carries signal into the first layer.
    const double fan_in = t == 0 ? I : I * J;
    const double scale = std::sqrt(2.0 / fan_in);
    for (double& w : p.filter(t)) w = scale * rng.normal();
    for (double& b : p.bias(t)) b = 0.01;
  }
  const double scale = 1.0 / std::sqrt(D * J);
  for (double& w : p.dense()) w = scale * rng.normal();
  p.clip_to_caps();
  return p;
}

double cnn_forward(const CnnParams& params, std::span<const double> x) {
  Evaluator ev(params.spec());
  return ev.forward(params, x);
}

double accumulate_gradients(const CnnParams& params, std::span<const double> x, double upstream,
                            CnnParams& grad) {
  if (!(grad.spec() == params.spec())) throw ShapeMismatch("gradient buffer has a different spec");
  Evaluator ev(params.spec());
  const double f = ev.forward(params, x);
  ev.backward(params, upstream, grad);
  return f;
}

CnnParams backward_gradients(const CnnParams& params, std::span<const double> x, double upstream) {
  CnnParams grad(params.spec());
  accumulate_gradients(params, x, upstream, grad);
  return grad;
}

double clamp_stage(double v, double bound) {
  if (std::isinf(bound)) return v;
  const auto relu = [](double z) { return z > 0.0 ? z : 0.0; };
  return relu(2.0 * bound - relu(bound - v)) - bound;
}

// ---- restriction -----------------------------------------------------------

void RestrictedClassSpec::validate() const {
  if (!(bound > 0.0)) throw InvalidArgument("restriction bound must be positive");
  if (!(lipschitz >= 0.0) || !(proximity >= 0.0)) throw InvalidArgument("restriction constants must be nonnegative");
  LipschitzWitness{0.0, alpha, 0.0}.validate();
}

RestrictionReport check_restriction(std::span<const double> values, const RestrictedClassSpec& restriction) {
  restriction.validate();
  if (!restriction.net) throw InvalidArgument("restriction check needs a net");
  if (values.size() != restriction.net->size()) throw ShapeMismatch("one value per net point expected");
  RestrictionReport r;
  for (double v : values) r.sup_norm = std::max(r.sup_norm, std::abs(v));
  r.lip_estimate = estimate_lipschitz(*restriction.net, values, restriction.alpha, restriction.proximity);
  const auto within = [](double v, double cap) { return v <= cap + 1e-6 * std::max(1.0, std::abs(cap)); };
  r.pass = within(r.sup_norm, restriction.bound) && within(r.lip_estimate, restriction.lipschitz);
  return r;
}

RestrictionReport check_restriction(const CnnModel& model, const RestrictedClassSpec& restriction) {
  if (!restriction.net) throw InvalidArgument("restriction check needs a net");
  const auto& net = *restriction.net;
  std::vector<double> values(net.size());
  for (std::size_t i = 0; i < net.size(); ++i) values[i] = model(net.point(i));
  return check_restriction(values, restriction);
}

double lipschitz_penalty(const CnnParams& params, std::span<const NetPair> pairs,
                         const RestrictedClassSpec& restriction, CnnParams* grad, double weight) {
  if (pairs.empty()) return 0.0;
  if (!restriction.net) throw InvalidArgument("Lipschitz penalty needs a net");
  const auto& net = *restriction.net;
  const auto& dist = net.distances();
  Evaluator ev(params.spec());
  double total = 0.0;
  const double n = static_cast<double>(pairs.size());
  for (const auto& pr : pairs) {
    if (pr.first >= net.size() || pr.second >= net.size()) throw InvalidArgument("pair index outside the net");
    const double fx = ev.forward(params, net.point(pr.first));
    const double fy = cnn_forward(params, net.point(pr.second));
    const double d = dist(static_cast<Eigen::Index>(pr.first), static_cast<Eigen::Index>(pr.second));
    const double slack = 2.0 * restriction.proximity + restriction.lipschitz * std::pow(d, restriction.alpha);
    const double v = std::abs(fx - fy) - slack;
    if (!(v > 0.0)) continue;
    total += v * v / n;
    if (grad) {
      const double up = weight * 2.0 * v / n * (fx >= fy ? 1.0 : -1.0);
      ev.backward(params, up, *grad);
      accumulate_gradients(params, net.point(pr.second), -up, *grad);
    }
  }
  return total;
}

// ---- training --------------------------------------------------------------

double mean_squared_error(const CnnModel& model, const RowMatrix& inputs, std::span<const double> targets) {
  if (static_cast<std::size_t>(inputs.rows()) != targets.size()) throw ShapeMismatch("one target per input row expected");
  if (targets.empty()) return 0.0;
  Evaluator ev(model.params.spec());
  const auto D = static_cast<std::size_t>(inputs.cols());
  double sum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double f = clamp_stage(ev.forward(model.params, {inputs.data() + i * D, D}), model.clamp);
    sum += (f - targets[i]) * (f - targets[i]);
  }
  return sum / static_cast<double>(targets.size());
}

TrainResult train_erm(const CnnSpec& spec, const RowMatrix& inputs, std::span<const double> targets,
                      const RestrictedClassSpec& restriction, const TrainOptions& options,
                      const CnnParams* warm_start) {
  spec.validate();
  if (targets.empty()) throw InvalidArgument("ERM needs a nonempty dataset");
  if (static_cast<std::size_t>(inputs.rows()) != targets.size()) throw ShapeMismatch("one target per input row expected");
  if (inputs.cols() != spec.ambient_dim) throw ShapeMismatch("input width differs from the network's D");
  if (options.epochs < 0 || options.batch_size < 1 || !(options.learning_rate > 0.0))
    throw InvalidArgument("bad training hyperparameters");

  Rng rng = Rng::derive(options.seed, {0x7ea1});
  CnnParams params(spec);
  if (warm_start && !warm_start->all_zero()) {
    if (!(warm_start->spec() == spec)) throw ShapeMismatch("warm start has a different spec");
    params = *warm_start;
    params.clip_to_caps();
  } else {
    params = init_params(spec, rng);
    params.dense_bias() = std::clamp(std::accumulate(targets.begin(), targets.end(), 0.0) / targets.size(),
                                     -spec.output_cap, spec.output_cap);
  }

  const bool penalize = options.lipschitz_weight > 0.0 && restriction.net && options.lipschitz_pairs > 0 &&
                        std::isfinite(restriction.lipschitz);
  const std::size_t n = targets.size();
  const auto D = static_cast<std::size_t>(spec.ambient_dim);
  const auto score = [&](const CnnParams& p) { return mean_squared_error(CnnModel{p, restriction.bound}, inputs, targets); };

  TrainResult result;
  result.params = params;
  double best = score(params);
  if (!std::isfinite(best)) throw NanLoss("initial loss is not finite");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  CnnParams grad(spec);
  std::vector<double> m1(spec.param_count(), 0.0), m2(spec.param_count(), 0.0);
  std::vector<NetPair> pairs;
  Evaluator ev(spec);
  long step = 0;
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(options.batch_size));
      const double bn = static_cast<double>(stop - start);
      std::fill(grad.values().begin(), grad.values().end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = order[b];
        const double f = ev.forward(params, {inputs.data() + i * D, D});
        const double r = f - targets[i];
        batch_loss += r * r / bn;
        ev.backward(params, 2.0 * r / bn, grad);
      }
      if (penalize) {
        const auto& net = *restriction.net;
        pairs.clear();
        for (int q = 0; q < options.lipschitz_pairs; ++q) pairs.push_back({rng.index(net.size()), rng.index(net.size())});
        batch_loss += options.lipschitz_weight *
                      lipschitz_penalty(params, pairs, restriction, &grad, options.lipschitz_weight);
      }
      if (!std::isfinite(batch_loss))
        throw NanLoss("non-finite loss at epoch " + std::to_string(epoch) + ", sample offset " +
                      std::to_string(start) + ", learning rate " + format_number(options.learning_rate));
      ++step;
      auto w = params.values();
      auto g = grad.values();
      if (options.optimizer == Optimizer::Adam) {
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (std::size_t k = 0; k < w.size(); ++k) {
          m1[k] = beta1 * m1[k] + (1.0 - beta1) * g[k];
          m2[k] = beta2 * m2[k] + (1.0 - beta2) * g[k] * g[k];
          w[k] -= options.learning_rate * (m1[k] / c1) / (std::sqrt(m2[k] / c2) + adam_eps);
        }
      } else {
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= options.learning_rate * g[k];
      }
      params.clip_to_caps();
    }
    const double loss = score(params);
    if (!std::isfinite(loss)) throw NanLoss("non-finite epoch loss at epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(loss);
    if (loss < best) {
      best = loss;
      result.params = params;
      result.best_epoch = epoch;
    }
    result.best_loss.push_back(best);
  }
  return result;
}

// ---- sizing ----------------------------------------------------------------

CnnSpec architecture_from_budget(std::size_t samples, int ambient_dim, int intrinsic_dim, double alpha,
                                 const SizingConstants& k) {
  if (samples < 2) throw InvalidArgument("architecture sizing needs N >= 2");
  if (ambient_dim < 2 || intrinsic_dim < 1 || intrinsic_dim > ambient_dim)
    throw InvalidArgument("need 1 <= d <= D and D >= 2");
  LipschitzWitness{0.0, alpha, 0.0}.validate();
  const double N = static_cast<double>(samples), D = ambient_dim, d = intrinsic_dim;
  CnnSpec s;
  s.blocks = std::max(1, static_cast<int>(std::ceil(k.blocks_scale * std::pow(N, d / (d + 2.0 * alpha)))));
  s.layers_per_block = std::clamp(static_cast<int>(std::ceil(k.depth_scale * (std::log(N) + D + std::log(D)))), 1,
                                  std::max(1, k.max_depth));
  s.channels = std::max(k.min_channels, static_cast<int>(std::ceil(k.channel_scale * D)));
  s.filter_size = std::min(k.max_filter, ambient_dim);
  s.ambient_dim = ambient_dim;
  s.weight_cap = k.weight_cap;
  s.output_cap = k.output_cap_scale * N;
  s.validate();
  return s;
}

// ---- serialization ---------------------------------------------------------

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xff));
}
void put_u64(std::ostream& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xff));
}
std::uint64_t get_le(std::istream& in, int bytes) {
  std::uint64_t v = 0;
  for (int b = 0; b < bytes; ++b) {
    const int c = in.get();
    if (c == EOF) throw IoError("truncated parameter file");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * b);
  }
  return v;
}

}  // namespace

void save_params(const CnnParams& params, const std::filesystem::path& path) {
  const auto& s = params.spec();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (int v : {s.blocks, s.layers_per_block, s.channels, s.filter_size, s.ambient_dim})
    put_u32(out, static_cast<std::uint32_t>(v));
  put_u64(out, std::bit_cast<std::uint64_t>(s.weight_cap));
  put_u64(out, std::bit_cast<std::uint64_t>(s.output_cap));
  for (double v : params.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw IoError("write failed for " + path.string());

  std::ofstream manifest(path.string() + ".manifest");
  if (!manifest) throw IoError("cannot write manifest for " + path.string());
  manifest << "blocks " << s.blocks << "\nlayers_per_block " << s.layers_per_block << "\nchannels " << s.channels
           << "\nfilter_size " << s.filter_size << "\nambient_dim " << s.ambient_dim << "\nweight_cap "
           << format_number(s.weight_cap) << "\noutput_cap " << format_number(s.output_cap) << "\nparam_count "
           << s.param_count() << '\n';
}

CnnParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  CnnSpec s;
  int* fields[] = {&s.blocks, &s.layers_per_block, &s.channels, &s.filter_size, &s.ambient_dim};
  for (int* f : fields) *f = static_cast<int>(static_cast<std::int32_t>(get_le(in, 4)));
  s.weight_cap = std::bit_cast<double>(get_le(in, 8));
  s.output_cap = std::bit_cast<double>(get_le(in, 8));
  CnnParams p(s);
  for (double& v : p.values()) v = std::bit_cast<double>(get_le(in, 8));
  if (in.peek() != EOF) throw IoError("trailing bytes in parameter file " + path.string());
  p.check_caps();
  return p;
}

}  // namespace npmd
