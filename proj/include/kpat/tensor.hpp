#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace kpat {

// Geometry of one CONV layer. No padding, no dilation.
struct LayerShape {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t stride = 1;
  std::size_t input_h = 1;
  std::size_t input_w = 1;

  std::size_t out_h() const;
  std::size_t out_w() const;
  std::size_t kernel_size() const { return kernel_h * kernel_w; }
  std::size_t kernel_count() const { return in_channels * out_channels; }
  std::size_t weight_count() const { return kernel_size() * kernel_count(); }

  // Throws ShapeError when a count is zero or the output would be empty.
  void validate() const;
  std::string to_string() const;

  bool operator==(const LayerShape&) const = default;
};

// Dense CONV weights, indexed [out_channel][in_channel][row][col].
struct WeightTensor {
  LayerShape shape;
  std::vector<float> data;
  std::vector<float> bias;

  WeightTensor() = default;
  explicit WeightTensor(const LayerShape& s);

  float& at(std::size_t oc, std::size_t ic, std::size_t r, std::size_t c) {
    return data[offset(oc, ic, r, c)];
  }
  float at(std::size_t oc, std::size_t ic, std::size_t r, std::size_t c) const {
    return data[offset(oc, ic, r, c)];
  }
  std::size_t offset(std::size_t oc, std::size_t ic, std::size_t r, std::size_t c) const {
    return ((oc * shape.in_channels + ic) * shape.kernel_h + r) * shape.kernel_w + c;
  }
  std::span<float> kernel(std::size_t oc, std::size_t ic) {
    return {data.data() + offset(oc, ic, 0, 0), shape.kernel_size()};
  }
  std::span<const float> kernel(std::size_t oc, std::size_t ic) const {
    return {data.data() + offset(oc, ic, 0, 0), shape.kernel_size()};
  }

  // Checks sizes and finiteness.
  void validate() const;

  bool operator==(const WeightTensor&) const = default;
};

// Channel-major, row-major within a channel.
struct FeatureMap {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(std::size_t c, std::size_t h, std::size_t w) : channels(c), height(h), width(w), data(c * h * w, 0.0f) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  std::span<const float> channel(std::size_t c) const { return {data.data() + c * height * width, height * width}; }

  void validate() const;

  bool operator==(const FeatureMap&) const = default;
};

// Reference cross-correlation: out[j] = bias[j] + sum_i W[j][i] * in[i].
// Accumulates in double, stores float.
FeatureMap conv_dense(const FeatureMap& input, const WeightTensor& weights);

// Elementwise max(x, 0).
void relu_inplace(FeatureMap& map);

// Central differences of a scalar loss over the weight values (bias excluded).
// The step actually taken in float storage is used as the divisor, so the
// quotient is exact for quadratics even when w + eps rounds.
std::vector<double> finite_diff_grad(const std::function<double(const WeightTensor&)>& loss_fn,
                                     const WeightTensor& weights, double eps);

// Same, over a flat double parameter vector.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& loss_fn,
                                     std::span<const double> params, double eps);

// Max over i of |a_i - b_i| / max(|b_i|, floor).
double max_rel_error(std::span<const float> a, std::span<const float> b, double floor = 1e-6);

}  // namespace kpat
