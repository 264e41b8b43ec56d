#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kpat/pattern.hpp"
#include "kpat/tinynet.hpp"

namespace kpat {

struct PruneConfig {
  PatternSet pattern_set;
  double connectivity_rate = 3.6;
  double first_layer_rate = 1.0;
  std::size_t admm_iterations = 10;
  std::size_t epochs_per_iteration = 3;
  std::size_t finetune_epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double rho = 1e-2;
  std::uint64_t seed = 1;
  // Keep the pattern chosen at the first auxiliary step instead of re-assigning each iteration.
  bool freeze_patterns = false;

  void validate() const;
};

// ADMM variables for one CONV layer. W itself lives in the network.
struct LayerAdmm {
  LayerShape shape;
  bool pattern_constrained = false;  // 3x3 kernels only
  std::size_t alpha = 0;
  std::vector<double> z, y, u, v;
  std::vector<std::size_t> frozen_ids;  // per kernel, used when freeze_patterns is set
};

struct AdmmState {
  std::vector<LayerAdmm> layers;
  double rho = 1e-2;
};

// Per-layer kernel caps from the connectivity rates.
std::vector<std::size_t> layer_alphas(const TinyNet& net, const PruneConfig& cfg);

// Z and Y start as projections of W; U and V start at zero.
AdmmState init_admm_state(const TinyNet& net, const PruneConfig& cfg);

// Loss (plus gradient) of the network on samples [begin, end).
using Objective =
    std::function<double(const TinyNet&, const Dataset&, std::size_t begin, std::size_t end, std::vector<double>*)>;

// f(W, b) + sum_k rho/2 ||W_k - Z_k + U_k||^2 + rho/2 ||W_k - Y_k + V_k||^2.
// `objective` defaults to the network's own loss.
double augmented_loss_and_grad(const TinyNet& net, const AdmmState& state, const Dataset& data, std::size_t begin,
                               std::size_t end, std::vector<double>* grad, const Objective* objective = nullptr);

struct PrimalOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
};

// ADAM on the augmented objective. Returns the mean data loss of the last epoch.
double admm_step_primal(AdmmState& state, TinyNet& net, const Dataset& data, const PrimalOptions& opt, Adam& adam,
                        std::mt19937_64& rng, const Objective* objective = nullptr);

// Z <- pattern projection of W + U; Y <- connectivity projection of W + V.
void admm_step_auxiliary(AdmmState& state, const TinyNet& net, const PruneConfig& cfg);

// U <- U + W - Z; V <- V + W - Y.
void admm_step_dual(AdmmState& state, const TinyNet& net);

// Per-kernel pattern projection of a whole layer. Kernels of non-3x3 layers pass through.
// Returns the chosen ids (0 for non-3x3 layers).
std::vector<std::size_t> project_layer_patterns(std::span<const double> weights, const LayerShape& shape,
                                                const PatternSet& set, std::span<double> out);
void project_layer_connectivity(std::span<const double> weights, const LayerShape& shape, std::size_t alpha,
                                std::span<double> out);

struct LayerAssignment {
  LayerShape shape;
  // [out_channel][in_channel] flattened; 0 marks a pruned kernel.
  std::vector<std::size_t> pattern_ids;
  ConnectivityMask mask;
};

struct TraceRow {
  std::size_t iteration = 0;
  double loss = 0.0;
  double residual_z = 0.0;  // ||W - Z||_F over all layers
  double residual_y = 0.0;  // ||W - Y||_F over all layers
};

struct PruneResult {
  TinyNet net;
  std::vector<LayerAssignment> layers;
  std::vector<TraceRow> trace;
};

// Exact projection of every CONV layer onto both constraint sets; zeroes
// pruned kernels in place and reports the assignment.
std::vector<LayerAssignment> hard_project(TinyNet& net, const PatternSet& set, std::span<const std::size_t> alphas);

// Full ADMM loop, hard projection, then masked fine-tuning.
PruneResult prune(const TinyNet& net, const Dataset& data, const PruneConfig& cfg);

// Human-readable list of constraint violations; empty when feasible.
std::vector<std::string> feasibility_violations(const TinyNet& net, const PatternSet& set,
                                                std::span<const std::size_t> alphas);

std::string assignments_to_json(const std::vector<LayerAssignment>& layers);
std::string trace_to_csv(const std::vector<TraceRow>& trace);

// Desk-scale pruning experiment on the two-blob task: dense baseline,
// pattern set from the trained dense model, then prune().
struct ToyOptions {
  std::size_t train_samples = 512;
  std::size_t test_samples = 512;
  std::size_t dense_epochs = 30;
  double dense_learning_rate = 5e-3;
  std::size_t k = 8;
  PruneConfig prune;
  std::uint64_t seed = 7;
};

struct ToyReport {
  TinyNet dense;
  PruneResult pruned;
  PatternSet pattern_set;
  std::vector<std::size_t> alphas;
  double dense_accuracy = 0.0;
  double pruned_accuracy = 0.0;
};

ToyOptions default_toy_options();
ToyReport run_toy_experiment(const ToyOptions& opt);

}  // namespace kpat
