#include "kpat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kpat/error.hpp"

namespace kpat {

std::size_t LayerShape::out_h() const {
  if (stride == 0 || input_h < kernel_h) return 0;
  return (input_h - kernel_h) / stride + 1;
}

std::size_t LayerShape::out_w() const {
  if (stride == 0 || input_w < kernel_w) return 0;
  return (input_w - kernel_w) / stride + 1;
}

void LayerShape::validate() const {
  if (kernel_h == 0 || kernel_w == 0 || in_channels == 0 || out_channels == 0 || stride == 0 ||
      input_h == 0 || input_w == 0) {
    throw ShapeError("all layer counts must be >= 1: " + to_string());
  }
  if (out_h() == 0 || out_w() == 0) {
    throw ShapeError("kernel larger than input: " + to_string());
  }
}

std::string LayerShape::to_string() const {
  std::ostringstream os;
  os << "{kernel " << kernel_h << "x" << kernel_w << ", in " << in_channels << ", out " << out_channels
     << ", stride " << stride << ", input " << input_h << "x" << input_w << "}";
  return os.str();
}

WeightTensor::WeightTensor(const LayerShape& s)
    : shape(s), data(s.weight_count(), 0.0f), bias(s.out_channels, 0.0f) {}

void WeightTensor::validate() const {
  shape.validate();
  if (data.size() != shape.weight_count()) {
    throw ShapeError("weight data has " + std::to_string(data.size()) + " values, shape needs " +
                     std::to_string(shape.weight_count()));
  }
  if (bias.size() != shape.out_channels) {
    throw ShapeError("bias has " + std::to_string(bias.size()) + " values, expected " +
                     std::to_string(shape.out_channels));
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) throw ParameterError("non-finite weight at flat index " + std::to_string(i));
  }
  for (std::size_t i = 0; i < bias.size(); ++i) {
    if (!std::isfinite(bias[i])) throw ParameterError("non-finite bias at index " + std::to_string(i));
  }
}

void FeatureMap::validate() const {
  if (data.size() != channels * height * width) {
    throw ShapeError("feature map holds " + std::to_string(data.size()) + " values, dims need " +
                     std::to_string(channels * height * width));
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) throw ParameterError("non-finite feature value at index " + std::to_string(i));
  }
}

FeatureMap conv_dense(const FeatureMap& input, const WeightTensor& weights) {
  const LayerShape& s = weights.shape;
  s.validate();
  if (input.channels != s.in_channels) {
    throw ShapeError("input has " + std::to_string(input.channels) + " channels, layer expects " +
                     std::to_string(s.in_channels));
  }
  if (input.height != s.input_h || input.width != s.input_w) {
    throw ShapeError("input is " + std::to_string(input.height) + "x" + std::to_string(input.width) +
                     ", layer expects " + std::to_string(s.input_h) + "x" + std::to_string(s.input_w));
  }
  if (input.data.size() != input.channels * input.height * input.width || weights.data.size() != s.weight_count() ||
      weights.bias.size() != s.out_channels) {
    throw ShapeError("tensor storage does not match its dims");
  }

  const std::size_t oh = s.out_h();
  const std::size_t ow = s.out_w();
  FeatureMap out(s.out_channels, oh, ow);
  std::vector<double> acc(oh * ow);
  for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t ic = 0; ic < s.in_channels; ++ic) {
      for (std::size_t r = 0; r < s.kernel_h; ++r) {
        for (std::size_t c = 0; c < s.kernel_w; ++c) {
          const double w = weights.at(oc, ic, r, c);
          if (w == 0.0) continue;
          for (std::size_t y = 0; y < oh; ++y) {
            const float* row = &input.data[(ic * input.height + y * s.stride + r) * input.width + c];
            double* dst = &acc[y * ow];
            for (std::size_t x = 0; x < ow; ++x) dst[x] += w * row[x * s.stride];
          }
        }
      }
    }
    const double b = weights.bias[oc];
    for (std::size_t i = 0; i < oh * ow; ++i) out.data[oc * oh * ow + i] = static_cast<float>(acc[i] + b);
  }
  return out;
}

void relu_inplace(FeatureMap& map) {
  for (float& v : map.data) v = std::max(v, 0.0f);
}

std::vector<double> finite_diff_grad(const std::function<double(const WeightTensor&)>& loss_fn,
                                     const WeightTensor& weights, double eps) {
  if (!(eps > 0.0)) throw ParameterError("finite-difference eps must be > 0");
  WeightTensor probe = weights;
  std::vector<double> grad(weights.data.size());
  for (std::size_t i = 0; i < probe.data.size(); ++i) {
    const float orig = probe.data[i];
    const float up = static_cast<float>(orig + eps);
    const float down = static_cast<float>(orig - eps);
    probe.data[i] = up;
    const double f_up = loss_fn(probe);
    probe.data[i] = down;
    const double f_down = loss_fn(probe);
    probe.data[i] = orig;
    if (!std::isfinite(f_up) || !std::isfinite(f_down)) {
      throw DivergenceError("non-finite loss while probing weight " + std::to_string(i));
    }
    grad[i] = (f_up - f_down) / (static_cast<double>(up) - static_cast<double>(down));
  }
  return grad;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& loss_fn,
                                     std::span<const double> params, double eps) {
  if (!(eps > 0.0)) throw ParameterError("finite-difference eps must be > 0");
  std::vector<double> probe(params.begin(), params.end());
  std::vector<double> grad(probe.size());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    const double up = orig + eps;
    const double down = orig - eps;
    probe[i] = up;
    const double f_up = loss_fn(probe);
    probe[i] = down;
    const double f_down = loss_fn(probe);
    probe[i] = orig;
    if (!std::isfinite(f_up) || !std::isfinite(f_down)) {
      throw DivergenceError("non-finite loss while probing parameter " + std::to_string(i));
    }
    grad[i] = (f_up - f_down) / (up - down);
  }
  return grad;
}

double max_rel_error(std::span<const float> a, std::span<const float> b, double floor) {
  if (a.size() != b.size()) throw ShapeError("compared spans differ in length");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max(std::abs(static_cast<double>(b[i])), floor);
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) / denom);
  }
  return worst;
}

}  // namespace kpat
