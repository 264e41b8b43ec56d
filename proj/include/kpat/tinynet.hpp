#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "kpat/tensor.hpp"

namespace kpat {

struct Sample {
  std::vector<double> image;   // channel-major
  int label = 0;
  std::vector<double> target;  // MSE target; one-hot of label when empty
};

struct Dataset {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t classes = 2;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

enum class LossKind { kSoftmaxCrossEntropy, kMse };

// Small CONV(+ReLU) stack with an optional final fully connected layer.
// All parameters live in one flat double vector so optimizers and
// gradient checks can treat the net as a point in R^n.
class TinyNet {
 public:
  struct Conv {
    LayerShape shape;
    std::size_t w_offset = 0;
    std::size_t b_offset = 0;
  };
  struct Fc {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t w_offset = 0;
    std::size_t b_offset = 0;
  };

  TinyNet() = default;
  TinyNet(std::size_t in_channels, std::size_t height, std::size_t width, LossKind loss = LossKind::kSoftmaxCrossEntropy);

  // Appends a stride-1 3x3 (or other size) CONV + ReLU layer sized from the current tail.
  TinyNet& add_conv(std::size_t out_channels, std::size_t kernel = 3, std::size_t stride = 1);
  TinyNet& add_fc(std::size_t out);

  // He-normal weights, zero biases.
  void init(std::uint64_t seed);

  const std::vector<Conv>& convs() const { return convs_; }
  const std::optional<Fc>& fc() const { return fc_; }
  LossKind loss_kind() const { return loss_; }
  std::size_t output_size() const;

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::span<double> conv_weights(std::size_t layer);
  std::span<const double> conv_weights(std::size_t layer) const;
  std::span<double> conv_bias(std::size_t layer);
  std::span<const double> conv_bias(std::size_t layer) const;
  std::size_t input_channels() const { return in_c_; }
  std::size_t input_height() const { return in_h_; }
  std::size_t input_width() const { return in_w_; }

  // Mean loss over samples [begin, end); when `grad` is non-null it is
  // resized to params().size() and receives the mean gradient.
  double loss_and_grad(const Dataset& data, std::size_t begin, std::size_t end, std::vector<double>* grad) const;
  double loss(const Dataset& data) const { return loss_and_grad(data, 0, data.size(), nullptr); }

  std::vector<double> forward(std::span<const double> image) const;
  int predict(std::span<const double> image) const;
  double accuracy(const Dataset& data) const;

  // Float views of the CONV layers, and the reverse.
  std::vector<WeightTensor> conv_tensors() const;
  void set_conv_tensor(std::size_t layer, const WeightTensor& w);

  // Network file: PTK0 with per-layer records; see docs/format.md.
  void save(const std::filesystem::path& path) const;
  static TinyNet load(const std::filesystem::path& path, LossKind loss = LossKind::kSoftmaxCrossEntropy);

 private:
  struct Tail {
    std::size_t c, h, w;
  };
  Tail tail() const;
  double sample_loss_and_grad(const Sample& s, std::vector<double>* grad) const;

  std::size_t in_c_ = 0, in_h_ = 0, in_w_ = 0;
  LossKind loss_ = LossKind::kSoftmaxCrossEntropy;
  std::vector<Conv> convs_;
  std::optional<Fc> fc_;
  std::vector<double> params_;
};

class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  // Entries where `frozen` is true keep their value and moments.
  void step(std::span<double> params, std::span<const double> grad, const std::vector<bool>* frozen = nullptr);
  double learning_rate() const { return lr_; }
  std::uint64_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<double> m_, v_;
};

struct TrainOptions {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
};

// Deterministic minibatch order for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::mt19937_64& rng);

// Plain ADAM training; `frozen` pins masked parameters.
void train(TinyNet& net, const Dataset& data, const TrainOptions& opt, const std::vector<bool>* frozen = nullptr);

// Two-class toy task: a Gaussian blob rendered into an 8x8 image whose
// center sits left (class 0) or right (class 1) of the midline, plus pixel noise.
Dataset make_blob_dataset(std::size_t n, std::uint64_t seed, std::size_t size = 8, double noise = 0.35);

// 1x8x8 -> CONV 4 -> CONV 8 -> FC 2, softmax cross-entropy.
TinyNet make_toy_net(std::uint64_t seed);

}  // namespace kpat
