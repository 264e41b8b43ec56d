#include "kpat/tuner.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <random>
#include <set>
#include <sstream>

#include <Eigen/Dense>

#include "kpat/error.hpp"

namespace kpat {

namespace {

constexpr std::size_t kUnrollChoices[] = {1, 2, 4};

std::uint32_t ceil_log2(std::size_t n) {
  std::uint32_t g = 0;
  while ((std::size_t{1} << g) < n) ++g;
  return g;
}

std::uint32_t unroll_gene(std::size_t u) {
  if (u >= 4) return 2;
  return u >= 2 ? 1 : 0;
}

// Portable draws: the distributions in <random> are implementation-defined.
std::uint32_t draw(std::mt19937_64& rng, std::uint32_t n) { return static_cast<std::uint32_t>(rng() % n); }
double draw_unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1p-53; }

// The loop order is categorical and is redrawn. Ordinal genes (tiles,
// unroll) are redrawn half the time and move one step otherwise.
std::uint32_t mutate_gene(std::mt19937_64& rng, std::uint32_t g, std::uint32_t limit, bool categorical) {
  if (limit == 0) return 0;
  if (categorical || (rng() & 1u)) return draw(rng, limit + 1);
  if (g == 0) return 1;
  if (g >= limit) return limit - 1;
  return (rng() & 1u) ? g + 1 : g - 1;
}

}  // namespace

SearchSpace SearchSpace::for_layer(const LayerShape& shape) {
  SearchSpace s;
  s.max_log2 = {ceil_log2(shape.out_h()), ceil_log2(shape.out_w()), ceil_log2(shape.out_channels),
                ceil_log2(shape.in_channels)};
  return s;
}

std::uint32_t SearchSpace::gene_limit(std::size_t gene) const {
  if (gene == 0) return static_cast<std::uint32_t>(orders.size() - 1);
  if (gene <= 4) return max_log2[gene - 1];
  return max_unroll_gene;
}

ExecConfig SearchSpace::decode(const Chromosome& c, const LayerShape& shape) const {
  if (orders.empty()) throw ParameterError("search space has no loop orders");
  auto gene = [&](std::size_t i) { return std::min(c[i], gene_limit(i)); };
  ExecConfig cfg;
  cfg.order = orders[gene(0)];
  cfg.tile_h = std::size_t{1} << gene(1);
  cfg.tile_w = std::size_t{1} << gene(2);
  cfg.tile_oc = std::size_t{1} << gene(3);
  cfg.tile_ic = std::size_t{1} << gene(4);
  cfg.unroll_oc = kUnrollChoices[std::min<std::uint32_t>(gene(5), 2)];
  cfg.unroll_iw = kUnrollChoices[std::min<std::uint32_t>(gene(6), 2)];
  return cfg.normalized(shape);
}

Chromosome SearchSpace::encode(const ExecConfig& cfg) const {
  Chromosome c{};
  const auto it = std::find(orders.begin(), orders.end(), cfg.order);
  c[0] = it == orders.end() ? 0 : static_cast<std::uint32_t>(it - orders.begin());
  c[1] = ceil_log2(cfg.tile_h);
  c[2] = ceil_log2(cfg.tile_w);
  c[3] = ceil_log2(cfg.tile_oc);
  c[4] = ceil_log2(cfg.tile_ic);
  c[5] = unroll_gene(cfg.unroll_oc);
  c[6] = unroll_gene(cfg.unroll_iw);
  for (std::size_t i = 0; i < kGeneCount; ++i) c[i] = std::min(c[i], gene_limit(i));
  return c;
}

std::vector<ExecConfig> SearchSpace::enumerate(const LayerShape& shape, std::size_t limit) const {
  std::vector<ExecConfig> out;
  std::set<std::string> seen;
  Chromosome c{};
  while (true) {
    const ExecConfig cfg = decode(c, shape);
    if (seen.insert(cfg.to_json()).second) {
      out.push_back(cfg);
      if (out.size() > limit) return out;
    }
    std::size_t i = kGeneCount;
    while (i > 0) {
      --i;
      if (c[i] < gene_limit(i)) {
        ++c[i];
        break;
      }
      c[i] = 0;
      if (i == 0) return out;
    }
  }
}

std::size_t feature_count() { return feature_names().size(); }

std::vector<std::string> feature_names() {
  std::vector<std::string> names;
  for (auto o : kAllLoopOrders) names.push_back("perm_" + std::string(loop_order_name(o)));
  for (const char* n : {"log2_tile_h", "log2_tile_w", "log2_tile_oc", "log2_tile_ic", "log2_unroll_oc",
                        "log2_unroll_iw", "log2_out_h", "log2_out_w", "log2_in_channels", "log2_out_channels"})
    names.emplace_back(n);
  return names;
}

std::vector<double> config_features(const ExecConfig& cfg, const LayerShape& shape) {
  std::vector<double> f;
  for (auto o : kAllLoopOrders) f.push_back(o == cfg.order ? 1.0 : 0.0);
  for (std::size_t v : {cfg.tile_h, cfg.tile_w, cfg.tile_oc, cfg.tile_ic, cfg.unroll_oc, cfg.unroll_iw, shape.out_h(),
                        shape.out_w(), shape.in_channels, shape.out_channels})
    f.push_back(std::log2(static_cast<double>(v)));
  return f;
}

std::string layer_fingerprint(const LayerShape& shape, std::size_t kernels, std::size_t patterns) {
  std::ostringstream os;
  os << shape.out_channels << 'x' << shape.in_channels << 'x' << shape.input_h << 'x' << shape.input_w << "/s"
     << shape.stride << "/n" << kernels << "/k" << patterns;
  return os.str();
}

FitnessFn timing_fitness(const FkwModel& model, const FeatureMap& input) {
  return [&model, &input](const ExecConfig& cfg) {
    std::array<double, 3> t{};
    for (auto& v : t) v = static_cast<double>(std::max<std::uint64_t>(1, conv_fkw(input, model, cfg, 1).wall_time_ns));
    std::sort(t.begin(), t.end());
    return t[1];
  };
}

TuneResult tune(const FkwModel& model, const FeatureMap& input, const TuneOptions& opt) {
  model.validate();
  return tune(model.shape, layer_fingerprint(model.shape, model.kernels(), model.pattern_set.size()),
              timing_fitness(model, input), opt);
}

TuneResult tune(const LayerShape& shape, const std::string& fingerprint, const FitnessFn& fitness,
                const TuneOptions& opt) {
  shape.validate();
  if (opt.population < 2) throw ParameterError("population must be >= 2");
  if (opt.budget < opt.population) {
    throw PreconditionError("budget " + std::to_string(opt.budget) + " is smaller than the population size " +
                            std::to_string(opt.population));
  }
  if (opt.tournament == 0) throw ParameterError("tournament size must be >= 1");
  if (opt.elitism >= opt.population) throw ParameterError("elitism must be smaller than the population");
  if (!(opt.mutation_rate >= 0.0 && opt.mutation_rate <= 1.0)) throw ParameterError("mutation rate must be in [0, 1]");

  SearchSpace space = opt.space;
  if (space.orders.empty()) {
    space = SearchSpace::for_layer(shape);
  } else if (space.max_log2 == std::array<std::uint32_t, 4>{}) {
    const auto orders = space.orders;
    space = SearchSpace::for_layer(shape);
    space.orders = orders;
  }

  TuneResult res;
  auto evaluate = [&](const std::vector<ExecConfig>& cfgs) {
    std::vector<double> times(cfgs.size());
    if (opt.parallel && cfgs.size() > 1) {
      std::vector<std::future<double>> fut;
      for (const auto& c : cfgs) fut.push_back(std::async(std::launch::async, [&fitness, c] { return fitness(c); }));
      for (std::size_t i = 0; i < cfgs.size(); ++i) times[i] = fut[i].get();
    } else {
      for (std::size_t i = 0; i < cfgs.size(); ++i) times[i] = fitness(cfgs[i]);
    }
    for (std::size_t i = 0; i < cfgs.size(); ++i) {
      if (!(times[i] > 0.0) || !std::isfinite(times[i])) {
        throw PreconditionError("fitness returned a non-positive time for " + cfgs[i].to_json());
      }
      res.history.push_back({config_features(cfgs[i], shape), cfgs[i], times[i], fingerprint});
      if (res.history.size() == 1 || times[i] < res.best_time_ns) {
        res.best_time_ns = times[i];
        res.best = cfgs[i];
      }
    }
    return times;
  };

  const auto all = space.enumerate(shape, opt.budget);
  if (all.size() <= opt.budget) {
    evaluate(all);
    return res;
  }

  std::mt19937_64 rng(opt.seed);
  auto random_chromosome = [&] {
    Chromosome c{};
    for (std::size_t i = 0; i < kGeneCount; ++i) c[i] = draw(rng, space.gene_limit(i) + 1);
    return c;
  };

  std::vector<Chromosome> pop;
  pop.push_back(space.encode(ExecConfig{}.normalized(shape)));
  while (pop.size() < opt.population) pop.push_back(random_chromosome());
  std::vector<ExecConfig> cfgs;
  for (const auto& c : pop) cfgs.push_back(space.decode(c, shape));
  std::vector<double> fit = evaluate(cfgs);
  std::size_t used = pop.size();
  std::set<std::string> seen;
  for (const auto& c : cfgs) seen.insert(c.to_json());

  while (used < opt.budget) {
    std::vector<std::size_t> rank(pop.size());
    for (std::size_t i = 0; i < rank.size(); ++i) rank[i] = i;
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return fit[a] < fit[b]; });

    auto select = [&] {
      std::size_t best = draw(rng, static_cast<std::uint32_t>(pop.size()));
      for (std::size_t t = 1; t < opt.tournament; ++t) {
        const std::size_t c = draw(rng, static_cast<std::uint32_t>(pop.size()));
        if (fit[c] < fit[best] || (fit[c] == fit[best] && c < best)) best = c;
      }
      return best;
    };

    std::vector<Chromosome> next;
    std::vector<double> next_fit;
    for (std::size_t e = 0; e < opt.elitism; ++e) {
      next.push_back(pop[rank[e]]);
      next_fit.push_back(fit[rank[e]]);
    }
    const std::size_t children = std::min(opt.population - opt.elitism, opt.budget - used);
    std::vector<Chromosome> kids;
    for (std::size_t n = 0; n < children; ++n) {
      const Chromosome& a = pop[select()];
      const Chromosome& b = pop[select()];
      Chromosome child{};
      for (std::size_t i = 0; i < kGeneCount; ++i) {
        child[i] = (rng() & 1u) ? a[i] : b[i];
        if (draw_unit(rng) < opt.mutation_rate) child[i] = mutate_gene(rng, child[i], space.gene_limit(i), i == 0);
      }
      // Spend the budget on configs not measured yet: a repeat gets one forced
      // mutation at a time until it is new (or the tries run out).
      for (int tries = 0; tries < 16 && seen.count(space.decode(child, shape).to_json()); ++tries) {
        const std::size_t i = draw(rng, kGeneCount);
        child[i] = mutate_gene(rng, child[i], space.gene_limit(i), i == 0);
      }
      seen.insert(space.decode(child, shape).to_json());
      kids.push_back(child);
    }
    cfgs.clear();
    for (const auto& c : kids) cfgs.push_back(space.decode(c, shape));
    const auto kid_fit = evaluate(cfgs);
    used += kids.size();
    next.insert(next.end(), kids.begin(), kids.end());
    next_fit.insert(next_fit.end(), kid_fit.begin(), kid_fit.end());
    // A short final generation keeps the rest of the previous population.
    for (std::size_t r = opt.elitism; next.size() < opt.population; ++r) {
      next.push_back(pop[rank[r]]);
      next_fit.push_back(fit[rank[r]]);
    }
    pop = std::move(next);
    fit = std::move(next_fit);
  }
  return res;
}

double Estimator::predict_log(const std::vector<double>& features) const {
  if (features.size() != coef.size()) {
    throw ShapeError("estimator expects " + std::to_string(coef.size()) + " features, got " +
                     std::to_string(features.size()));
  }
  double s = 0;
  for (std::size_t i = 0; i < coef.size(); ++i) {
    if (!std::isfinite(features[i])) throw ParameterError("feature " + std::to_string(i) + " is not finite");
    s += coef[i] * features[i];
  }
  return s;
}

double Estimator::predict(const std::vector<double>& features) const { return std::exp(predict_log(features)); }

Estimator fit_estimator(const std::vector<TuneRecord>& history) {
  if (history.size() < 10) {
    throw PreconditionError("estimator needs at least 10 records, got " + std::to_string(history.size()));
  }
  const std::size_t d = history.front().features.size();
  if (d == 0) throw ShapeError("records have no features");
  Eigen::MatrixXd x(history.size(), d);
  Eigen::VectorXd y(history.size());
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& r = history[i];
    if (r.features.size() != d) throw ShapeError("record " + std::to_string(i) + " has a different feature count");
    if (!(r.time_ns > 0)) throw PreconditionError("record " + std::to_string(i) + " has non-positive time");
    for (std::size_t j = 0; j < d; ++j) x(i, j) = r.features[j];
    y(i) = std::log(r.time_ns);
  }

  Estimator est;
  Eigen::VectorXd w;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < static_cast<Eigen::Index>(d)) {
    const double lambda = 1e-6;
    const Eigen::MatrixXd a = x.transpose() * x + lambda * Eigen::MatrixXd::Identity(d, d);
    w = a.ldlt().solve(x.transpose() * y);
    est.regularized = true;
    est.warning = "design matrix has rank " + std::to_string(qr.rank()) + " < " + std::to_string(d) +
                  "; fell back to ridge regression (lambda 1e-6)";
  } else {
    w = qr.solve(y);
  }
  est.coef.assign(w.data(), w.data() + w.size());
  est.rmse = std::sqrt((x * w - y).squaredNorm() / static_cast<double>(history.size()));
  return est;
}

std::vector<std::size_t> predict_best(const Estimator& est, const std::vector<std::vector<double>>& candidates) {
  std::vector<double> pred;
  pred.reserve(candidates.size());
  for (const auto& c : candidates) pred.push_back(est.predict_log(c));
  std::vector<std::size_t> idx(candidates.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return pred[a] < pred[b]; });
  return idx;
}

std::string history_to_csv(const std::vector<TuneRecord>& history) {
  std::ostringstream os;
  for (const auto& n : feature_names()) os << n << ',';
  os << "time_ns\n";
  os.precision(17);
  for (const auto& r : history) {
    for (double f : r.features) os << f << ',';
    os << r.time_ns << '\n';
  }
  return os.str();
}

}  // namespace kpat
