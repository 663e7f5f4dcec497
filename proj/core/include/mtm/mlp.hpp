#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mtm/error.hpp"
#include "mtm/rng.hpp"
#include "mtm/tensor.hpp"

namespace mtm {

enum class Activation { relu, tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Location of one dense layer inside the flat parameter array.
/// Weights are stored out x in, row-major, followed by the bias.
struct LayerSlice {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;

  std::size_t extent() const noexcept { return in * out + out; }
  friend bool operator==(const LayerSlice&, const LayerSlice&) = default;
};

/// Architecture of a fully connected network: layer widths, hidden
/// activation and whether the activation is also applied to the output.
class MlpShape {
public:
  MlpShape() = default;
  MlpShape(std::vector<std::size_t> layer_dims, Activation activation,
           bool activate_output = false);

  const std::vector<std::size_t>& layer_dims() const noexcept { return dims_; }
  Activation activation() const noexcept { return activation_; }
  bool activate_output() const noexcept { return activate_output_; }
  const std::vector<LayerSlice>& layers() const noexcept { return layers_; }
  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t input_dim() const noexcept { return dims_.front(); }
  std::size_t output_dim() const noexcept { return dims_.back(); }
  std::size_t parameter_count() const noexcept;

  bool activated(std::size_t layer) const noexcept {
    return layer + 1 < layers_.size() || activate_output_;
  }

  friend bool operator==(const MlpShape&, const MlpShape&) = default;

private:
  std::vector<std::size_t> dims_;
  Activation activation_ = Activation::relu;
  bool activate_output_ = false;
  std::vector<LayerSlice> layers_;
};

/// Sum over layers of dims[l] * dims[l + 1] + dims[l + 1].
std::size_t parameter_count(std::span<const std::size_t> layer_dims);

/// Flat parameter array plus the table that maps it back onto layers.
class ParamVector {
public:
  struct Layer {
    Matrix weight; // out x in
    std::vector<double> bias;
  };

  ParamVector() = default;
  explicit ParamVector(std::vector<LayerSlice> shape_table);
  ParamVector(std::vector<LayerSlice> shape_table, std::vector<double> values);

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  const std::vector<LayerSlice>& shape_table() const noexcept { return table_; }

  std::vector<Layer> unflatten() const;
  static ParamVector flatten(const std::vector<Layer>& layers);

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

private:
  std::vector<LayerSlice> table_;
  std::vector<double> values_;
};

/// The network whose parameters are meta-learned.
class Backbone {
public:
  Backbone() = default;
  explicit Backbone(MlpShape shape);
  Backbone(MlpShape shape, ParamVector params);

  /// He-uniform weights for relu, Xavier-uniform for tanh, zero biases.
  static Backbone initialized(MlpShape shape, RngStream& rng);

  const MlpShape& shape() const noexcept { return shape_; }
  const ParamVector& params() const noexcept { return params_; }
  ParamVector& params() noexcept { return params_; }

  Matrix forward(const Matrix& batch) const;

private:
  MlpShape shape_;
  ParamVector params_;
};

Matrix mlp_forward(const Backbone& backbone, const Matrix& batch);

/// A scalar loss on the network output that can report dLoss/dOutput for
/// both plain and dual scalars. Implementations live in losses.hpp.
template <class H>
concept LossHead = requires(const H& h, const Matrix& out, Matrix* grad,
                            const BasicMatrix<Dual>& dual_out, BasicMatrix<Dual>* dual_grad) {
  { h.evaluate(out, grad) } -> std::convertible_to<double>;
  { h.evaluate(dual_out, dual_grad) } -> std::convertible_to<Dual>;
};

struct Gradient {
  double loss = 0.0;
  ParamVector grad;
};

namespace detail {

template <class T>
struct ForwardTape {
  std::vector<BasicMatrix<T>> inputs; // input of each layer
  std::vector<BasicMatrix<T>> pre;    // affine output of each layer
  std::vector<BasicMatrix<T>> post;   // after activation (== pre when not activated)
};

template <class T>
BasicMatrix<T> lift(const Matrix& m) {
  if constexpr (std::is_same_v<T, double>) {
    return m;
  } else {
    BasicMatrix<T> out(m.rows(), m.cols());
    auto src = m.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = T(src[i]);
    return out;
  }
}

template <class T>
T activate(Activation a, const T& x) {
  using std::tanh;
  if (a == Activation::relu) return x > T(0.0) ? x : T(0.0);
  return tanh(x);
}

template <class T>
T activation_slope(Activation a, const T& pre, const T& post) {
  if (a == Activation::relu) return pre > T(0.0) ? T(1.0) : T(0.0);
  return T(1.0) - post * post;
}

inline void check_input(const MlpShape& shape, std::size_t cols, std::size_t nparams) {
  if (cols != shape.input_dim()) {
    throw DimensionError("mlp input columns", shape.input_dim(), cols);
  }
  if (nparams != shape.parameter_count()) {
    throw DimensionError("mlp parameter count", shape.parameter_count(), nparams);
  }
}

template <class T>
BasicMatrix<T> forward(const MlpShape& shape, std::span<const T> params,
                       const BasicMatrix<T>& input, ForwardTape<T>* tape) {
  check_input(shape, input.cols(), params.size());
  BasicMatrix<T> x = input;
  for (std::size_t l = 0; l < shape.num_layers(); ++l) {
    const LayerSlice& s = shape.layers()[l];
    BasicMatrix<T> z(x.rows(), s.out);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t o = 0; o < s.out; ++o) {
        T acc = params[s.bias_offset + o];
        const T* w = params.data() + s.weight_offset + o * s.in;
        for (std::size_t i = 0; i < s.in; ++i) acc += x(r, i) * w[i];
        z(r, o) = acc;
      }
    }
    BasicMatrix<T> y = z;
    if (shape.activated(l)) {
      for (T& v : y.data()) v = activate(shape.activation(), v);
    }
    if (!all_finite(y)) throw NonFiniteError("forward pass layer", static_cast<long>(l));
    if (tape != nullptr) {
      tape->inputs.push_back(std::move(x));
      tape->pre.push_back(std::move(z));
      tape->post.push_back(y);
    }
    x = std::move(y);
  }
  return x;
}

template <class T>
void backward(const MlpShape& shape, std::span<const T> params, const ForwardTape<T>& tape,
              BasicMatrix<T> upstream, std::span<T> grad) {
  for (T& g : grad) g = T(0.0);
  for (std::size_t l = shape.num_layers(); l-- > 0;) {
    const LayerSlice& s = shape.layers()[l];
    const BasicMatrix<T>& x = tape.inputs[l];
    BasicMatrix<T> dz = std::move(upstream);
    if (shape.activated(l)) {
      const auto& pre = tape.pre[l];
      const auto& post = tape.post[l];
      for (std::size_t r = 0; r < dz.rows(); ++r) {
        for (std::size_t o = 0; o < s.out; ++o) {
          dz(r, o) *= activation_slope(shape.activation(), pre(r, o), post(r, o));
        }
      }
    }
    for (std::size_t o = 0; o < s.out; ++o) {
      T db = T(0.0);
      T* gw = grad.data() + s.weight_offset + o * s.in;
      for (std::size_t r = 0; r < dz.rows(); ++r) {
        const T& d = dz(r, o);
        db += d;
        for (std::size_t i = 0; i < s.in; ++i) gw[i] += d * x(r, i);
      }
      grad[s.bias_offset + o] = db;
    }
    if (l == 0) break;
    BasicMatrix<T> dx(x.rows(), s.in);
    for (std::size_t r = 0; r < dz.rows(); ++r) {
      for (std::size_t o = 0; o < s.out; ++o) {
        const T& d = dz(r, o);
        const T* w = params.data() + s.weight_offset + o * s.in;
        for (std::size_t i = 0; i < s.in; ++i) dx(r, i) += d * w[i];
      }
    }
    upstream = std::move(dx);
  }
}

} // namespace detail

/// Loss of `head` on the network output and its gradient w.r.t. the flat
/// parameters, for either plain or dual scalars.
template <class T, LossHead Head>
std::pair<T, std::vector<T>> loss_and_grad(const MlpShape& shape, std::span<const T> params,
                                           const Matrix& batch, const Head& head) {
  detail::ForwardTape<T> tape;
  BasicMatrix<T> out = detail::forward<T>(shape, params, detail::lift<T>(batch), &tape);
  BasicMatrix<T> dout(out.rows(), out.cols());
  T loss = head.evaluate(out, &dout);
  if (!std::isfinite(value_of(loss))) {
    throw NonFiniteError("loss head after layer", static_cast<long>(shape.num_layers()));
  }
  std::vector<T> grad(params.size());
  detail::backward<T>(shape, params, tape, std::move(dout), grad);
  return {loss, std::move(grad)};
}

/// Exact dLoss/dTheta by reverse-mode differentiation.
template <LossHead Head>
Gradient backprop_grads(const Backbone& backbone, const Head& head, const Matrix& batch) {
  auto [loss, grad] =
      loss_and_grad<double>(backbone.shape(), backbone.params().values(), batch, head);
  return {loss, ParamVector(backbone.params().shape_table(), std::move(grad))};
}

/// Hessian of the loss at `theta` applied to `direction`, via a forward-mode
/// tangent pushed through the reverse pass.
template <LossHead Head>
std::vector<double> hessian_vector_product(const MlpShape& shape, std::span<const double> theta,
                                           std::span<const double> direction,
                                           const Matrix& batch, const Head& head) {
  if (direction.size() != theta.size()) {
    throw DimensionError("hessian-vector direction", theta.size(), direction.size());
  }
  std::vector<Dual> params(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) params[i] = Dual(theta[i], direction[i]);
  auto [loss, grad] = loss_and_grad<Dual>(shape, std::span<const Dual>(params), batch, head);
  std::vector<double> out(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) out[i] = grad[i].d;
  return out;
}

} // namespace mtm
