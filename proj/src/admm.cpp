#include "kpat/admm.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

#include "kpat/error.hpp"

namespace kpat {

void PruneConfig::validate() const {
  if (pattern_set.empty()) throw ParameterError("prune config needs a non-empty pattern set");
  if (!(connectivity_rate >= 1.0) || !(first_layer_rate >= 1.0)) throw ParameterError("pruning rates must be >= 1");
  if (admm_iterations < 1 || epochs_per_iteration < 1) throw ParameterError("iteration counts must be >= 1");
  if (batch_size < 1) throw ParameterError("batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw ParameterError("learning rate must be > 0");
  if (!(rho > 0.0)) throw ParameterError("rho must be > 0");
}

namespace {

bool is_3x3(const LayerShape& s) { return s.kernel_h == 3 && s.kernel_w == 3; }

double frob_diff(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::string layer_name(const TinyNet& net, std::size_t param_index) {
  for (std::size_t l = 0; l < net.convs().size(); ++l) {
    const auto& c = net.convs()[l];
    if (param_index >= c.w_offset && param_index < c.b_offset + c.shape.out_channels) return "conv" + std::to_string(l);
  }
  return "fc";
}

}  // namespace

std::vector<std::size_t> layer_alphas(const TinyNet& net, const PruneConfig& cfg) {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < net.convs().size(); ++l) {
    const double rate = l == 0 ? cfg.first_layer_rate : cfg.connectivity_rate;
    out.push_back(alpha_for_rate(net.convs()[l].shape.kernel_count(), rate));
  }
  return out;
}

std::vector<std::size_t> project_layer_patterns(std::span<const double> weights, const LayerShape& shape,
                                                const PatternSet& set, std::span<double> out) {
  std::vector<std::size_t> ids(shape.kernel_count(), 0);
  if (!is_3x3(shape)) {
    std::copy(weights.begin(), weights.end(), out.begin());
    return ids;
  }
  for (std::size_t k = 0; k < shape.kernel_count(); ++k) {
    ids[k] = project_pattern<double>(weights.subspan(k * kPatternCells, kPatternCells), set,
                                     out.subspan(k * kPatternCells, kPatternCells));
  }
  return ids;
}

void project_layer_connectivity(std::span<const double> weights, const LayerShape& shape, std::size_t alpha,
                                std::span<double> out) {
  const std::size_t ks = shape.kernel_size();
  std::vector<double> norms(shape.kernel_count());
  for (std::size_t k = 0; k < norms.size(); ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < ks; ++i) s += weights[k * ks + i] * weights[k * ks + i];
    norms[k] = s;
  }
  const auto kept = top_kernels_by_norm(norms, alpha);
  for (std::size_t k = 0; k < norms.size(); ++k)
    for (std::size_t i = 0; i < ks; ++i) out[k * ks + i] = kept[k] ? weights[k * ks + i] : 0.0;
}

AdmmState init_admm_state(const TinyNet& net, const PruneConfig& cfg) {
  cfg.validate();
  AdmmState st;
  st.rho = cfg.rho;
  const auto alphas = layer_alphas(net, cfg);
  for (std::size_t l = 0; l < net.convs().size(); ++l) {
    LayerAdmm la;
    la.shape = net.convs()[l].shape;
    la.pattern_constrained = is_3x3(la.shape);
    la.alpha = alphas[l];
    const auto w = net.conv_weights(l);
    la.z.resize(w.size());
    la.y.resize(w.size());
    la.u.assign(w.size(), 0.0);
    la.v.assign(w.size(), 0.0);
    la.frozen_ids = project_layer_patterns(w, la.shape, cfg.pattern_set, la.z);
    project_layer_connectivity(w, la.shape, la.alpha, la.y);
    st.layers.push_back(std::move(la));
  }
  return st;
}

double augmented_loss_and_grad(const TinyNet& net, const AdmmState& state, const Dataset& data, std::size_t begin,
                               std::size_t end, std::vector<double>* grad, const Objective* objective) {
  double loss = objective ? (*objective)(net, data, begin, end, grad) : net.loss_and_grad(data, begin, end, grad);
  if (grad && grad->size() != net.params().size()) grad->assign(net.params().size(), 0.0);
  const double rho = state.rho;
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    const auto& la = state.layers[l];
    const auto w = net.conv_weights(l);
    const std::size_t off = net.convs()[l].w_offset;
    double pen = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double dz = w[i] - la.z[i] + la.u[i];
      const double dy = w[i] - la.y[i] + la.v[i];
      pen += dz * dz + dy * dy;
      if (grad) (*grad)[off + i] += rho * (dz + dy);
    }
    loss += 0.5 * rho * pen;
  }
  return loss;
}

double admm_step_primal(AdmmState& state, TinyNet& net, const Dataset& data, const PrimalOptions& opt, Adam& adam,
                        std::mt19937_64& rng, const Objective* objective) {
  if (data.empty()) throw PreconditionError("primal step needs a non-empty batch");
  if (state.layers.size() != net.convs().size()) throw PreconditionError("ADMM state does not match the network");
  std::vector<double> grad;
  Dataset batch{data.channels, data.height, data.width, data.classes, {}};
  double last_epoch_loss = 0.0;
  const std::size_t bs = std::max<std::size_t>(1, opt.batch_size);
  for (std::size_t e = 0; e < opt.epochs; ++e) {
    auto order = epoch_order(data.size(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t stop = std::min(order.size(), start + bs);
      batch.samples.clear();
      for (std::size_t i = start; i < stop; ++i) batch.samples.push_back(data.samples[order[i]]);
      const double data_loss =
          objective ? (*objective)(net, batch, 0, batch.size(), nullptr) : net.loss_and_grad(batch, 0, batch.size(), nullptr);
      augmented_loss_and_grad(net, state, batch, 0, batch.size(), &grad, objective);
      if (!std::isfinite(data_loss)) {
        std::size_t bad = 0;
        while (bad < grad.size() && std::isfinite(grad[bad]) && std::isfinite(net.params()[bad])) ++bad;
        throw DivergenceError("non-finite loss in " + layer_name(net, bad < grad.size() ? bad : 0));
      }
      for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!std::isfinite(grad[i])) throw DivergenceError("non-finite gradient in " + layer_name(net, i));
      }
      adam.step(net.params(), grad);
      sum += data_loss;
      ++batches;
    }
    last_epoch_loss = sum / static_cast<double>(batches);
  }
  return last_epoch_loss;
}

void admm_step_auxiliary(AdmmState& state, const TinyNet& net, const PruneConfig& cfg) {
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    auto& la = state.layers[l];
    const auto w = net.conv_weights(l);
    std::vector<double> tmp(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) tmp[i] = w[i] + la.u[i];
    if (la.pattern_constrained && cfg.freeze_patterns) {
      for (std::size_t k = 0; k < la.shape.kernel_count(); ++k) {
        const auto mask = cfg.pattern_set.by_id(la.frozen_ids[k]).mask();
        for (std::size_t c = 0; c < kPatternCells; ++c) {
          la.z[k * kPatternCells + c] = ((mask >> c) & 1u) ? tmp[k * kPatternCells + c] : 0.0;
        }
      }
    } else {
      project_layer_patterns(tmp, la.shape, cfg.pattern_set, la.z);
    }
    for (std::size_t i = 0; i < w.size(); ++i) tmp[i] = w[i] + la.v[i];
    project_layer_connectivity(tmp, la.shape, la.alpha, la.y);
  }
}

void admm_step_dual(AdmmState& state, const TinyNet& net) {
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    auto& la = state.layers[l];
    const auto w = net.conv_weights(l);
    if (la.u.size() != w.size() || la.v.size() != w.size()) throw ShapeError("dual variables do not match W");
    for (std::size_t i = 0; i < w.size(); ++i) {
      la.u[i] += w[i] - la.z[i];
      la.v[i] += w[i] - la.y[i];
    }
  }
}

std::vector<LayerAssignment> hard_project(TinyNet& net, const PatternSet& set, std::span<const std::size_t> alphas) {
  std::vector<LayerAssignment> out;
  for (std::size_t l = 0; l < net.convs().size(); ++l) {
    const LayerShape shape = net.convs()[l].shape;
    auto w = net.conv_weights(l);
    std::vector<double> projected(w.size());
    auto ids = project_layer_patterns(w, shape, set, projected);
    const std::size_t ks = shape.kernel_size();
    std::vector<double> norms(shape.kernel_count());
    for (std::size_t k = 0; k < norms.size(); ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < ks; ++i) s += projected[k * ks + i] * projected[k * ks + i];
      norms[k] = s;
    }
    LayerAssignment la;
    la.shape = shape;
    la.mask.out_channels = shape.out_channels;
    la.mask.in_channels = shape.in_channels;
    la.mask.alpha = alphas[l];
    la.mask.kept = top_kernels_by_norm(norms, alphas[l]);
    la.pattern_ids.assign(shape.kernel_count(), 0);
    for (std::size_t k = 0; k < norms.size(); ++k) {
      if (la.mask.kept[k]) {
        la.pattern_ids[k] = is_3x3(shape) ? ids[k] : 0;
        for (std::size_t i = 0; i < ks; ++i) w[k * ks + i] = projected[k * ks + i];
      } else {
        for (std::size_t i = 0; i < ks; ++i) w[k * ks + i] = 0.0;
      }
    }
    out.push_back(std::move(la));
  }
  return out;
}

PruneResult prune(const TinyNet& input, const Dataset& data, const PruneConfig& cfg) {
  cfg.validate();
  PruneResult result{input, {}, {}};
  TinyNet& net = result.net;
  AdmmState state = init_admm_state(net, cfg);
  Adam adam(cfg.learning_rate);
  std::mt19937_64 rng(cfg.seed);
  const PrimalOptions popt{cfg.epochs_per_iteration, cfg.batch_size};

  for (std::size_t it = 0; it < cfg.admm_iterations; ++it) {
    const double loss = admm_step_primal(state, net, data, popt, adam, rng);
    admm_step_auxiliary(state, net, cfg);
    admm_step_dual(state, net);
    TraceRow row{it, loss, 0.0, 0.0};
    for (std::size_t l = 0; l < state.layers.size(); ++l) {
      row.residual_z += frob_diff(net.conv_weights(l), state.layers[l].z);
      row.residual_y += frob_diff(net.conv_weights(l), state.layers[l].y);
    }
    row.residual_z = std::sqrt(row.residual_z);
    row.residual_y = std::sqrt(row.residual_y);
    result.trace.push_back(row);
  }

  const auto alphas = layer_alphas(net, cfg);
  result.layers = hard_project(net, cfg.pattern_set, alphas);

  if (cfg.finetune_epochs > 0) {
    std::vector<bool> frozen(net.params().size(), false);
    for (std::size_t l = 0; l < net.convs().size(); ++l) {
      const auto& c = net.convs()[l];
      const auto& la = result.layers[l];
      const std::size_t ks = c.shape.kernel_size();
      for (std::size_t k = 0; k < c.shape.kernel_count(); ++k) {
        for (std::size_t i = 0; i < ks; ++i) {
          bool keep = la.mask.kept[k];
          if (keep && la.pattern_ids[k] != 0) keep = cfg.pattern_set.by_id(la.pattern_ids[k]).contains(i);
          frozen[c.w_offset + k * ks + i] = !keep;
        }
      }
    }
    TrainOptions topt{cfg.finetune_epochs, cfg.batch_size, cfg.learning_rate, cfg.seed ^ 0x5eedULL};
    train(net, data, topt, &frozen);
  }
  return result;
}

std::vector<std::string> feasibility_violations(const TinyNet& net, const PatternSet& set,
                                                std::span<const std::size_t> alphas) {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < net.convs().size(); ++l) {
    const auto& s = net.convs()[l].shape;
    const auto w = net.conv_weights(l);
    const std::size_t ks = s.kernel_size();
    std::size_t nonzero = 0;
    for (std::size_t k = 0; k < s.kernel_count(); ++k) {
      std::uint16_t support = 0;
      for (std::size_t i = 0; i < ks; ++i)
        if (w[k * ks + i] != 0.0) support = static_cast<std::uint16_t>(support | (1u << i));
      if (support == 0) continue;
      ++nonzero;
      if (!is_3x3(s)) continue;
      bool fits = false;
      for (const auto& p : set.patterns()) fits = fits || (support & ~p.mask()) == 0;
      if (!fits) {
        std::ostringstream os;
        os << "conv" << l << " kernel (" << k / s.in_channels << "," << k % s.in_channels
           << ") has support outside every pattern";
        out.push_back(os.str());
      }
    }
    if (l < alphas.size() && nonzero > alphas[l]) {
      out.push_back("conv" + std::to_string(l) + " keeps " + std::to_string(nonzero) + " kernels, cap is " +
                    std::to_string(alphas[l]));
    }
  }
  return out;
}

std::string assignments_to_json(const std::vector<LayerAssignment>& layers) {
  nlohmann::json j;
  j["layers"] = nlohmann::json::array();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& la = layers[l];
    nlohmann::json filters = nlohmann::json::array();
    for (std::size_t oc = 0; oc < la.shape.out_channels; ++oc) {
      nlohmann::json kernels = nlohmann::json::array();
      for (std::size_t ic = 0; ic < la.shape.in_channels; ++ic) {
        const std::size_t k = oc * la.shape.in_channels + ic;
        if (!la.mask.kept[k]) {
          kernels.push_back(nullptr);
        } else {
          kernels.push_back(la.pattern_ids[k]);
        }
      }
      filters.push_back(std::move(kernels));
    }
    j["layers"].push_back({{"layer", l}, {"alpha", la.mask.alpha}, {"filters", std::move(filters)}});
  }
  return j.dump();
}

std::string trace_to_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "iteration,loss,residual_z,residual_y\n";
  for (const auto& r : trace) os << r.iteration << "," << r.loss << "," << r.residual_z << "," << r.residual_y << "\n";
  return os.str();
}

ToyOptions default_toy_options() {
  ToyOptions opt;
  opt.prune.connectivity_rate = 3.6;
  opt.prune.first_layer_rate = 1.0;
  opt.prune.admm_iterations = 10;
  opt.prune.epochs_per_iteration = 3;
  opt.prune.finetune_epochs = 10;
  opt.prune.learning_rate = 1e-3;
  opt.prune.rho = 1e-2;
  opt.prune.seed = 11;
  return opt;
}

ToyReport run_toy_experiment(const ToyOptions& opt) {
  const Dataset train_set = make_blob_dataset(opt.train_samples, opt.seed);
  const Dataset test_set = make_blob_dataset(opt.test_samples, opt.seed + 1000);
  ToyReport rep{make_toy_net(opt.seed), {}, {}, {}, 0.0, 0.0};
  train(rep.dense, train_set, TrainOptions{opt.dense_epochs, 32, opt.dense_learning_rate, opt.seed});
  rep.dense_accuracy = rep.dense.accuracy(test_set);

  const auto tensors = rep.dense.conv_tensors();
  rep.pattern_set = build_pattern_set(tensors, opt.k);
  PruneConfig cfg = opt.prune;
  cfg.pattern_set = rep.pattern_set;
  rep.alphas = layer_alphas(rep.dense, cfg);
  rep.pruned = prune(rep.dense, train_set, cfg);
  rep.pruned_accuracy = rep.pruned.net.accuracy(test_set);
  return rep;
}

}  // namespace kpat
