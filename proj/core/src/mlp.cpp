#include "mtm/mlp.hpp"

#include <cmath>
#include <numeric>

namespace mtm {

std::string to_string(Activation a) {
  return a == Activation::relu ? "relu" : "tanh";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + name + "' (expected relu or tanh)");
}

std::size_t parameter_count(std::span<const std::size_t> layer_dims) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    n += layer_dims[l] * layer_dims[l + 1] + layer_dims[l + 1];
  }
  return n;
}

MlpShape::MlpShape(std::vector<std::size_t> layer_dims, Activation activation,
                   bool activate_output)
    : dims_(std::move(layer_dims)), activation_(activation), activate_output_(activate_output) {
  if (dims_.size() < 2) {
    throw ConfigError("an MLP needs at least an input and an output dimension");
  }
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    if (dims_[l] == 0 || dims_[l + 1] == 0) {
      throw ConfigError("layer dimensions must be positive");
    }
    LayerSlice s;
    s.in = dims_[l];
    s.out = dims_[l + 1];
    s.weight_offset = offset;
    s.bias_offset = offset + s.in * s.out;
    offset += s.extent();
    layers_.push_back(s);
  }
}

std::size_t MlpShape::parameter_count() const noexcept {
  return mtm::parameter_count(dims_);
}

namespace {

std::size_t table_extent(const std::vector<LayerSlice>& table) {
  std::size_t n = 0;
  for (const auto& s : table) n += s.extent();
  return n;
}

} // namespace

ParamVector::ParamVector(std::vector<LayerSlice> shape_table)
    : table_(std::move(shape_table)), values_(table_extent(table_), 0.0) {}

ParamVector::ParamVector(std::vector<LayerSlice> shape_table, std::vector<double> values)
    : table_(std::move(shape_table)), values_(std::move(values)) {
  if (table_extent(table_) != values_.size()) {
    throw DimensionError("parameter vector length", table_extent(table_), values_.size());
  }
}

std::vector<ParamVector::Layer> ParamVector::unflatten() const {
  std::vector<Layer> layers;
  layers.reserve(table_.size());
  for (const auto& s : table_) {
    Layer layer{Matrix(s.out, s.in), std::vector<double>(s.out)};
    std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(s.weight_offset), s.in * s.out,
                layer.weight.data().begin());
    std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(s.bias_offset), s.out,
                layer.bias.begin());
    layers.push_back(std::move(layer));
  }
  return layers;
}

ParamVector ParamVector::flatten(const std::vector<Layer>& layers) {
  std::vector<LayerSlice> table;
  std::vector<double> values;
  for (const auto& layer : layers) {
    if (layer.bias.size() != layer.weight.rows()) {
      throw DimensionError("bias length", layer.weight.rows(), layer.bias.size());
    }
    LayerSlice s;
    s.in = layer.weight.cols();
    s.out = layer.weight.rows();
    s.weight_offset = values.size();
    s.bias_offset = s.weight_offset + s.in * s.out;
    values.insert(values.end(), layer.weight.data().begin(), layer.weight.data().end());
    values.insert(values.end(), layer.bias.begin(), layer.bias.end());
    table.push_back(s);
  }
  return ParamVector(std::move(table), std::move(values));
}

Backbone::Backbone(MlpShape shape) : shape_(std::move(shape)), params_(shape_.layers()) {}

Backbone::Backbone(MlpShape shape, ParamVector params)
    : shape_(std::move(shape)), params_(std::move(params)) {
  if (params_.shape_table() != shape_.layers()) {
    throw DimensionError("parameter table layers", shape_.num_layers(),
                         params_.shape_table().size());
  }
}

Backbone Backbone::initialized(MlpShape shape, RngStream& rng) {
  Backbone net(std::move(shape));
  auto values = net.params_.values();
  for (const auto& s : net.shape_.layers()) {
    const double fan_in = static_cast<double>(s.in);
    const double fan_out = static_cast<double>(s.out);
    const double bound = net.shape_.activation() == Activation::relu
                             ? std::sqrt(6.0 / fan_in)
                             : std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t k = 0; k < s.in * s.out; ++k) {
      values[s.weight_offset + k] = (2.0 * rng.uniform() - 1.0) * bound;
    }
  }
  return net;
}

Matrix Backbone::forward(const Matrix& batch) const {
  return detail::forward<double>(shape_, params_.values(), batch, nullptr);
}

Matrix mlp_forward(const Backbone& backbone, const Matrix& batch) {
  return backbone.forward(batch);
}

} // namespace mtm
