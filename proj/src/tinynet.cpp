#include "kpat/tinynet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kpat/error.hpp"
#include "kpat/io.hpp"

namespace kpat {

TinyNet::TinyNet(std::size_t in_channels, std::size_t height, std::size_t width, LossKind loss)
    : in_c_(in_channels), in_h_(height), in_w_(width), loss_(loss) {}

TinyNet::Tail TinyNet::tail() const {
  if (convs_.empty()) return {in_c_, in_h_, in_w_};
  const auto& s = convs_.back().shape;
  return {s.out_channels, s.out_h(), s.out_w()};
}

TinyNet& TinyNet::add_conv(std::size_t out_channels, std::size_t kernel, std::size_t stride) {
  if (fc_) throw PreconditionError("CONV layers must precede the FC layer");
  const Tail t = tail();
  Conv c;
  c.shape = LayerShape{kernel, kernel, t.c, out_channels, stride, t.h, t.w};
  c.shape.validate();
  c.w_offset = params_.size();
  c.b_offset = c.w_offset + c.shape.weight_count();
  params_.resize(c.b_offset + out_channels, 0.0);
  convs_.push_back(c);
  return *this;
}

TinyNet& TinyNet::add_fc(std::size_t out) {
  if (fc_) throw PreconditionError("only one FC layer is supported");
  const Tail t = tail();
  Fc f;
  f.in = t.c * t.h * t.w;
  f.out = out;
  f.w_offset = params_.size();
  f.b_offset = f.w_offset + f.in * f.out;
  params_.resize(f.b_offset + out, 0.0);
  fc_ = f;
  return *this;
}

std::size_t TinyNet::output_size() const {
  if (fc_) return fc_->out;
  const Tail t = tail();
  return t.c * t.h * t.w;
}

void TinyNet::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::fill(params_.begin(), params_.end(), 0.0);
  for (const auto& c : convs_) {
    std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(c.shape.in_channels * c.shape.kernel_size())));
    for (std::size_t i = 0; i < c.shape.weight_count(); ++i) params_[c.w_offset + i] = nd(rng);
  }
  if (fc_) {
    std::normal_distribution<double> nd(0.0, std::sqrt(1.0 / static_cast<double>(fc_->in)));
    for (std::size_t i = 0; i < fc_->in * fc_->out; ++i) params_[fc_->w_offset + i] = nd(rng);
  }
}

std::span<double> TinyNet::conv_weights(std::size_t layer) {
  const auto& c = convs_.at(layer);
  return {params_.data() + c.w_offset, c.shape.weight_count()};
}
std::span<const double> TinyNet::conv_weights(std::size_t layer) const {
  const auto& c = convs_.at(layer);
  return {params_.data() + c.w_offset, c.shape.weight_count()};
}
std::span<double> TinyNet::conv_bias(std::size_t layer) {
  const auto& c = convs_.at(layer);
  return {params_.data() + c.b_offset, c.shape.out_channels};
}
std::span<const double> TinyNet::conv_bias(std::size_t layer) const {
  const auto& c = convs_.at(layer);
  return {params_.data() + c.b_offset, c.shape.out_channels};
}

namespace {

// pre[oc][y][x] = b[oc] + sum W[oc][ic][r][c] * in[ic][y*s+r][x*s+c]
void conv_forward(const LayerShape& s, const double* w, const double* b, const std::vector<double>& in,
                  std::vector<double>& pre) {
  const std::size_t oh = s.out_h(), ow = s.out_w();
  pre.assign(s.out_channels * oh * ow, 0.0);
  for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
    double* dst = &pre[oc * oh * ow];
    for (std::size_t i = 0; i < oh * ow; ++i) dst[i] = b[oc];
    for (std::size_t ic = 0; ic < s.in_channels; ++ic)
      for (std::size_t r = 0; r < s.kernel_h; ++r)
        for (std::size_t c = 0; c < s.kernel_w; ++c) {
          const double wv = w[((oc * s.in_channels + ic) * s.kernel_h + r) * s.kernel_w + c];
          for (std::size_t y = 0; y < oh; ++y) {
            const double* src = &in[(ic * s.input_h + y * s.stride + r) * s.input_w + c];
            for (std::size_t x = 0; x < ow; ++x) dst[y * ow + x] += wv * src[x * s.stride];
          }
        }
  }
}

// Accumulates dW, db and (optionally) d_in from d_pre.
void conv_backward(const LayerShape& s, const double* w, const std::vector<double>& in, const std::vector<double>& d_pre,
                   double* dw, double* db, std::vector<double>* d_in) {
  const std::size_t oh = s.out_h(), ow = s.out_w();
  if (d_in) d_in->assign(s.in_channels * s.input_h * s.input_w, 0.0);
  for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
    const double* g = &d_pre[oc * oh * ow];
    double bsum = 0.0;
    for (std::size_t i = 0; i < oh * ow; ++i) bsum += g[i];
    db[oc] += bsum;
    for (std::size_t ic = 0; ic < s.in_channels; ++ic)
      for (std::size_t r = 0; r < s.kernel_h; ++r)
        for (std::size_t c = 0; c < s.kernel_w; ++c) {
          const std::size_t widx = ((oc * s.in_channels + ic) * s.kernel_h + r) * s.kernel_w + c;
          double acc = 0.0;
          for (std::size_t y = 0; y < oh; ++y) {
            const std::size_t row = (ic * s.input_h + y * s.stride + r) * s.input_w + c;
            for (std::size_t x = 0; x < ow; ++x) {
              acc += g[y * ow + x] * in[row + x * s.stride];
              if (d_in) (*d_in)[row + x * s.stride] += g[y * ow + x] * w[widx];
            }
          }
          dw[widx] += acc;
        }
  }
}

}  // namespace

double TinyNet::sample_loss_and_grad(const Sample& s, std::vector<double>* grad) const {
  std::vector<std::vector<double>> acts{s.image};
  std::vector<std::vector<double>> pres;
  for (const auto& c : convs_) {
    std::vector<double> pre;
    conv_forward(c.shape, &params_[c.w_offset], &params_[c.b_offset], acts.back(), pre);
    std::vector<double> post(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) post[i] = pre[i] > 0.0 ? pre[i] : 0.0;
    pres.push_back(std::move(pre));
    acts.push_back(std::move(post));
  }
  std::vector<double> out;
  if (fc_) {
    const auto& x = acts.back();
    out.assign(fc_->out, 0.0);
    for (std::size_t o = 0; o < fc_->out; ++o) {
      double acc = params_[fc_->b_offset + o];
      const double* wrow = &params_[fc_->w_offset + o * fc_->in];
      for (std::size_t i = 0; i < fc_->in; ++i) acc += wrow[i] * x[i];
      out[o] = acc;
    }
  } else {
    out = acts.back();
  }

  double loss = 0.0;
  std::vector<double> d_out(out.size(), 0.0);
  if (loss_ == LossKind::kSoftmaxCrossEntropy) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= out.size()) throw ParameterError("label out of range");
    const double mx = *std::max_element(out.begin(), out.end());
    double z = 0.0;
    for (double v : out) z += std::exp(v - mx);
    const double log_z = mx + std::log(z);
    loss = log_z - out[static_cast<std::size_t>(s.label)];
    for (std::size_t i = 0; i < out.size(); ++i) d_out[i] = std::exp(out[i] - log_z);
    d_out[static_cast<std::size_t>(s.label)] -= 1.0;
  } else {
    std::vector<double> target = s.target;
    if (target.empty()) {
      target.assign(out.size(), 0.0);
      if (s.label >= 0 && static_cast<std::size_t>(s.label) < out.size()) target[static_cast<std::size_t>(s.label)] = 1.0;
    }
    if (target.size() != out.size()) throw ShapeError("MSE target length does not match network output");
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double d = out[i] - target[i];
      loss += 0.5 * d * d;
      d_out[i] = d;
    }
  }
  if (!grad) return loss;

  std::vector<double>& g = *grad;
  std::vector<double> d_act;
  if (fc_) {
    const auto& x = acts.back();
    d_act.assign(fc_->in, 0.0);
    for (std::size_t o = 0; o < fc_->out; ++o) {
      g[fc_->b_offset + o] += d_out[o];
      const double* wrow = &params_[fc_->w_offset + o * fc_->in];
      double* gw = &g[fc_->w_offset + o * fc_->in];
      for (std::size_t i = 0; i < fc_->in; ++i) {
        gw[i] += d_out[o] * x[i];
        d_act[i] += d_out[o] * wrow[i];
      }
    }
  } else {
    d_act = d_out;
  }
  for (std::size_t li = convs_.size(); li-- > 0;) {
    const auto& c = convs_[li];
    const auto& pre = pres[li];
    for (std::size_t i = 0; i < pre.size(); ++i)
      if (pre[i] <= 0.0) d_act[i] = 0.0;
    std::vector<double> d_in;
    conv_backward(c.shape, &params_[c.w_offset], acts[li], d_act, &g[c.w_offset], &g[c.b_offset],
                  li > 0 ? &d_in : nullptr);
    d_act = std::move(d_in);
  }
  return loss;
}

double TinyNet::loss_and_grad(const Dataset& data, std::size_t begin, std::size_t end, std::vector<double>* grad) const {
  if (begin >= end || end > data.size()) throw PreconditionError("empty or out-of-range batch");
  if (grad) grad->assign(params_.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = begin; i < end; ++i) total += sample_loss_and_grad(data.samples[i], grad);
  const double inv = 1.0 / static_cast<double>(end - begin);
  if (grad)
    for (double& v : *grad) v *= inv;
  return total * inv;
}

std::vector<double> TinyNet::forward(std::span<const double> image) const {
  std::vector<double> act(image.begin(), image.end());
  for (const auto& c : convs_) {
    std::vector<double> pre;
    conv_forward(c.shape, &params_[c.w_offset], &params_[c.b_offset], act, pre);
    for (double& v : pre) v = v > 0.0 ? v : 0.0;
    act = std::move(pre);
  }
  if (!fc_) return act;
  std::vector<double> out(fc_->out);
  for (std::size_t o = 0; o < fc_->out; ++o) {
    double acc = params_[fc_->b_offset + o];
    for (std::size_t i = 0; i < fc_->in; ++i) acc += params_[fc_->w_offset + o * fc_->in + i] * act[i];
    out[o] = acc;
  }
  return out;
}

int TinyNet::predict(std::span<const double> image) const {
  auto out = forward(image);
  return static_cast<int>(std::max_element(out.begin(), out.end()) - out.begin());
}

double TinyNet::accuracy(const Dataset& data) const {
  if (data.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& s : data.samples) ok += predict(s.image) == s.label ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

std::vector<WeightTensor> TinyNet::conv_tensors() const {
  std::vector<WeightTensor> out;
  for (std::size_t l = 0; l < convs_.size(); ++l) {
    WeightTensor w(convs_[l].shape);
    auto src = conv_weights(l);
    std::transform(src.begin(), src.end(), w.data.begin(), [](double v) { return static_cast<float>(v); });
    auto b = conv_bias(l);
    std::transform(b.begin(), b.end(), w.bias.begin(), [](double v) { return static_cast<float>(v); });
    out.push_back(std::move(w));
  }
  return out;
}

void TinyNet::set_conv_tensor(std::size_t layer, const WeightTensor& w) {
  if (!(w.shape == convs_.at(layer).shape)) throw ShapeError("replacement tensor has a different shape");
  auto dst = conv_weights(layer);
  std::copy(w.data.begin(), w.data.end(), dst.begin());
  auto b = conv_bias(layer);
  std::copy(w.bias.begin(), w.bias.end(), b.begin());
}

void TinyNet::save(const std::filesystem::path& path) const {
  std::vector<TensorRecord> recs;
  for (const auto& w : conv_tensors()) append_weight_records(w, recs);
  if (fc_) {
    TensorRecord wr{{static_cast<std::uint32_t>(fc_->out), static_cast<std::uint32_t>(fc_->in)}, {}};
    for (std::size_t i = 0; i < fc_->in * fc_->out; ++i) wr.data.push_back(static_cast<float>(params_[fc_->w_offset + i]));
    TensorRecord br{{static_cast<std::uint32_t>(fc_->out)}, {}};
    for (std::size_t i = 0; i < fc_->out; ++i) br.data.push_back(static_cast<float>(params_[fc_->b_offset + i]));
    recs.push_back(std::move(wr));
    recs.push_back(std::move(br));
  }
  write_file_atomic(path, encode_ptk(recs));
}

TinyNet TinyNet::load(const std::filesystem::path& path, LossKind loss) {
  auto recs = decode_ptk(read_file(path));
  std::vector<WeightTensor> convs;
  std::size_t i = 0;
  while (i < recs.size() && recs[i].dims.size() == 4) {
    convs.push_back(weights_from_records(std::span(recs).subspan(i)));
    i += 3;
  }
  if (convs.empty()) throw FormatError(path.string() + ": network file has no CONV layer");
  const auto& first = convs.front().shape;
  TinyNet net(first.in_channels, first.input_h, first.input_w, loss);
  for (const auto& w : convs) {
    net.add_conv(w.shape.out_channels, w.shape.kernel_h, w.shape.stride);
    if (!(net.convs_.back().shape == w.shape)) {
      throw FormatError(path.string() + ": CONV layer " + std::to_string(net.convs_.size() - 1) +
                        " does not chain from the previous layer");
    }
    net.set_conv_tensor(net.convs_.size() - 1, w);
  }
  if (i < recs.size()) {
    if (recs.size() - i != 2 || recs[i].dims.size() != 2 || recs[i + 1].dims.size() != 1) {
      throw FormatError(path.string() + ": expected an FC weight/bias record pair after the CONV layers");
    }
    net.add_fc(recs[i].dims[0]);
    if (net.fc_->in != recs[i].dims[1] || recs[i + 1].dims[0] != recs[i].dims[0]) {
      throw FormatError(path.string() + ": FC layer dims do not match the CONV output");
    }
    std::copy(recs[i].data.begin(), recs[i].data.end(), net.params_.begin() + static_cast<std::ptrdiff_t>(net.fc_->w_offset));
    std::copy(recs[i + 1].data.begin(), recs[i + 1].data.end(),
              net.params_.begin() + static_cast<std::ptrdiff_t>(net.fc_->b_offset));
  }
  return net;
}

void Adam::step(std::span<double> params, std::span<const double> grad, const std::vector<bool>* frozen) {
  if (params.size() != grad.size()) throw ShapeError("gradient length does not match parameters");
  if (m_.size() != params.size()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (frozen && (*frozen)[i]) continue;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates with explicit draws so the order does not depend on std::shuffle internals
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

void train(TinyNet& net, const Dataset& data, const TrainOptions& opt, const std::vector<bool>* frozen) {
  if (data.empty()) throw PreconditionError("training set is empty");
  Adam adam(opt.learning_rate);
  std::mt19937_64 rng(opt.seed);
  std::vector<double> grad;
  Dataset batch{data.channels, data.height, data.width, data.classes, {}};
  for (std::size_t e = 0; e < opt.epochs; ++e) {
    auto order = epoch_order(data.size(), rng);
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t stop = std::min(order.size(), start + opt.batch_size);
      batch.samples.clear();
      for (std::size_t i = start; i < stop; ++i) batch.samples.push_back(data.samples[order[i]]);
      const double l = net.loss_and_grad(batch, 0, batch.size(), &grad);
      if (!std::isfinite(l)) throw DivergenceError("non-finite training loss in epoch " + std::to_string(e));
      adam.step(net.params(), grad, frozen);
    }
  }
}

Dataset make_blob_dataset(std::size_t n, std::uint64_t seed, std::size_t size, double noise) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d{1, size, size, 2, {}};
  const double mid = (static_cast<double>(size) - 1.0) / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.label = static_cast<int>(rng() & 1u);
    const double cy = mid + 1.0 * gauss(rng);
    const double cx = mid + (s.label == 0 ? -1.0 : 1.0) + 0.8 * gauss(rng);
    const double sigma = 1.2;
    s.image.resize(size * size);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        s.image[y * size + x] = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma)) + noise * gauss(rng);
      }
    d.samples.push_back(std::move(s));
  }
  return d;
}

TinyNet make_toy_net(std::uint64_t seed) {
  TinyNet net(1, 8, 8, LossKind::kSoftmaxCrossEntropy);
  net.add_conv(4).add_conv(8).add_fc(2);
  net.init(seed);
  return net;
}

}  // namespace kpat
