#include "survconf/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>
#include <fmt/format.h>

namespace survconf {

namespace {

// Order of local items by observed time, descending. Ties keep input order.
std::vector<std::size_t> order_desc(std::span<const double> time) {
  std::vector<std::size_t> ord(time.size());
  std::iota(ord.begin(), ord.end(), std::size_t{0});
  std::stable_sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) { return time[a] > time[b]; });
  return ord;
}

struct CoxTerms {
  double pl = 0.0;
  std::vector<double> grad;  // d pl / d g, per local item
};

// Partial log-likelihood of local items (g, time, event) with risk sets formed
// among the items themselves; optionally its gradient with respect to g.
CoxTerms cox_terms(std::span<const double> g, std::span<const double> time, std::span<const char> event,
                   bool want_grad) {
  const std::size_t m = g.size();
  CoxTerms out;
  if (m == 0) return out;
  const double shift = *std::max_element(g.begin(), g.end());
  const auto ord = order_desc(time);

  struct Group {
    std::size_t begin, end;  // range in ord
    double s0;
    int events;
  };
  std::vector<Group> groups;
  double s0 = 0.0;
  for (std::size_t a = 0; a < m;) {
    std::size_t b = a;
    while (b < m && time[ord[b]] == time[ord[a]]) ++b;
    int d = 0;
    for (std::size_t q = a; q < b; ++q) {
      s0 += std::exp(g[ord[q]] - shift);
      d += event[ord[q]] ? 1 : 0;
    }
    const double log_s0 = shift + std::log(s0);
    for (std::size_t q = a; q < b; ++q)
      if (event[ord[q]]) out.pl += g[ord[q]] - log_s0;
    groups.push_back({a, b, s0, d});
    a = b;
  }

  if (want_grad) {
    out.grad.assign(m, 0.0);
    double hazard = 0.0;  // sum over event groups at or before t of d / s0
    for (auto it = groups.rbegin(); it != groups.rend(); ++it) {
      hazard += it->events / it->s0;
      for (std::size_t q = it->begin; q < it->end; ++q) {
        const auto k = ord[q];
        out.grad[k] = (event[k] ? 1.0 : 0.0) - std::exp(g[k] - shift) * hazard;
      }
    }
  }
  return out;
}

struct PoolView {
  std::vector<double> time;
  std::vector<char> event;
};

PoolView view(const SurvivalDataset& ds, const IndexSet& pool) {
  PoolView v;
  v.time.reserve(pool.size());
  v.event.reserve(pool.size());
  for (auto k : pool) {
    v.time.push_back(ds[k].observed_time);
    v.event.push_back(ds[k].event ? 1 : 0);
  }
  return v;
}

Eigen::MatrixXd design(const SurvivalDataset& ds, const IndexSet& pool) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(pool.size()), static_cast<Eigen::Index>(ds.dim()));
  for (std::size_t r = 0; r < pool.size(); ++r)
    for (std::size_t j = 0; j < ds.dim(); ++j) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = ds[pool[r]].covariates[j];
  return x;
}

// Observed information of the partial likelihood at linear predictor eta.
Eigen::MatrixXd cox_information(const Eigen::MatrixXd& x, const Eigen::VectorXd& eta, const PoolView& v) {
  const auto m = static_cast<std::size_t>(x.rows());
  const auto d = x.cols();
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(d, d);
  if (m == 0) return info;
  const double shift = eta.maxCoeff();
  const auto ord = order_desc(v.time);
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t a = 0; a < m;) {
    std::size_t b = a;
    while (b < m && v.time[ord[b]] == v.time[ord[a]]) ++b;
    int events = 0;
    for (std::size_t q = a; q < b; ++q) {
      const auto k = static_cast<Eigen::Index>(ord[q]);
      const double w = std::exp(eta(k) - shift);
      s0 += w;
      s1.noalias() += w * x.row(k).transpose();
      s2.noalias() += w * x.row(k).transpose() * x.row(k);
      events += v.event[ord[q]] ? 1 : 0;
    }
    if (events > 0) info.noalias() += events * (s2 / s0 - (s1 / s0) * (s1 / s0).transpose());
    a = b;
  }
  return info;
}

}  // namespace

double LinearPredictor::operator()(std::span<const double> x) const {
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) s += beta(static_cast<Eigen::Index>(j)) * x[j];
  return s;
}

std::size_t MlpPredictor::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

double MlpPredictor::operator()(std::span<const double> x) const {
  Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  if (input_mean.size() > 0) a = (a - input_mean).cwiseQuotient(input_scale);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::VectorXd z = layers[l].weight * a + layers[l].bias;
    a = (l + 1 < layers.size()) ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
  }
  return a(0);
}

double Predictor::operator()(std::span<const double> x) const {
  return std::visit([&](const auto& m) { return m(x); }, model_);
}

std::vector<double> Predictor::evaluate(const SurvivalDataset& ds) const {
  std::vector<double> g(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) g[i] = (*this)(ds[i].covariates);
  return g;
}

double partial_log_lik(std::span<const double> g, const SurvivalDataset& ds, const IndexSet& pool) {
  if (pool.empty()) throw std::invalid_argument("partial likelihood needs a nonempty pool");
  if (g.size() != ds.size()) throw std::invalid_argument("g must have one value per subject");
  std::vector<double> gp;
  gp.reserve(pool.size());
  for (auto k : pool) {
    if (!std::isfinite(g[k])) throw std::invalid_argument(fmt::format("non-finite g for subject {}", k));
    gp.push_back(g[k]);
  }
  const auto v = view(ds, pool);
  return cox_terms(gp, v.time, v.event, false).pl;
}

LinearFit fit_linear(const SurvivalDataset& ds, const IndexSet& pool, const LinearFitOptions& opts) {
  if (ds.dim() == 0) throw std::invalid_argument("fit_linear needs at least one feature");
  if (uncensored(ds, pool).empty()) throw std::invalid_argument("fit_linear needs at least one event in the pool");
  if (opts.ridge < 0.0) throw std::invalid_argument("ridge must be nonnegative");

  const Eigen::MatrixXd x = design(ds, pool);
  const auto v = view(ds, pool);
  const auto d = x.cols();

  auto objective = [&](const Eigen::VectorXd& beta, Eigen::VectorXd* grad) {
    const Eigen::VectorXd eta = x * beta;
    auto terms = cox_terms(std::span<const double>(eta.data(), static_cast<std::size_t>(eta.size())), v.time, v.event,
                           grad != nullptr);
    if (grad) {
      const Eigen::VectorXd dg = Eigen::Map<const Eigen::VectorXd>(terms.grad.data(), eta.size());
      *grad = x.transpose() * dg - opts.ridge * beta;
    }
    return terms.pl - 0.5 * opts.ridge * beta.squaredNorm();
  };

  LinearFit fit;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd grad;
  double f = objective(beta, &grad);
  fit.objective_trace.push_back(f);

  for (int it = 0; it < opts.max_iter; ++it) {
    if (!std::isfinite(f) || !grad.allFinite())
      throw std::runtime_error("non-finite partial likelihood during Newton iterations; use ridge > 0");
    if (grad.lpNorm<Eigen::Infinity>() < opts.tol) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd info = cox_information(x, x * beta, v);
    info.diagonal().array() += opts.ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    Eigen::VectorXd step = ldlt.solve(grad);
    if (ldlt.info() != Eigen::Success || !step.allFinite())
      throw std::runtime_error("singular information matrix in Cox fit; use ridge > 0");

    bool accepted = false;
    for (int halving = 0; halving <= 30; ++halving) {
      Eigen::VectorXd candidate = beta + step;
      Eigen::VectorXd cand_grad;
      const double fc = objective(candidate, &cand_grad);
      if (std::isfinite(fc) && fc >= f) {
        beta = std::move(candidate);
        grad = std::move(cand_grad);
        f = fc;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    ++fit.iterations;
    if (!accepted) break;  // non-convergence is reported, not an error
    fit.objective_trace.push_back(f);
  }
  if (!fit.converged && grad.allFinite() && grad.lpNorm<Eigen::Infinity>() < opts.tol) fit.converged = true;
  if (!beta.allFinite()) throw std::runtime_error("non-finite coefficients in Cox fit; use ridge > 0");
  fit.predictor.beta = beta;
  return fit;
}

MlpOptions MlpOptions::full() {
  MlpOptions o;
  o.hidden_sizes = {32, 32, 32};
  o.dropout = 0.1;
  o.batch_size = 128;
  o.epochs = 512;
  return o;
}

MlpPredictor init_mlp(std::size_t input_dim, const std::vector<int>& hidden_sizes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MlpPredictor net;
  auto in = static_cast<Eigen::Index>(input_dim);
  auto add = [&](Eigen::Index out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(std::max<Eigen::Index>(in, 1)));
    std::uniform_real_distribution<double> u(-limit, limit);
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (Eigen::Index c = 0; c < in; ++c)
      for (Eigen::Index r = 0; r < out; ++r) layer.weight(r, c) = u(rng);
    net.layers.push_back(std::move(layer));
    in = out;
  };
  for (int h : hidden_sizes) {
    if (h <= 0) throw std::invalid_argument("hidden layer sizes must be positive");
    add(h);
  }
  add(1);
  return net;
}

double mlp_batch_loss(const MlpPredictor& net, const SurvivalDataset& ds, const IndexSet& batch, double weight_penalty,
                      MlpGradient* grad, const std::vector<Eigen::MatrixXd>* dropout_masks) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  const std::size_t n_layers = net.layers.size();
  std::vector<Eigen::MatrixXd> acts;  // acts[l] = input to layer l
  std::vector<Eigen::MatrixXd> pre;   // pre-activations of hidden layers
  acts.reserve(n_layers);
  acts.push_back(design(ds, batch));
  if (net.input_mean.size() > 0) {
    acts[0] = (acts[0].rowwise() - net.input_mean.transpose()).array().rowwise() / net.input_scale.transpose().array();
  }
  for (std::size_t l = 0; l + 1 < n_layers; ++l) {
    Eigen::MatrixXd z = acts[l] * net.layers[l].weight.transpose();
    z.rowwise() += net.layers[l].bias.transpose();
    Eigen::MatrixXd a = z.cwiseMax(0.0);
    if (dropout_masks) a = a.cwiseProduct((*dropout_masks)[l]);
    pre.push_back(std::move(z));
    acts.push_back(std::move(a));
  }
  const auto& last = net.layers.back();
  Eigen::VectorXd g = acts.back() * last.weight.row(0).transpose();
  g.array() += last.bias(0);

  const auto v = view(ds, batch);
  int events = 0;
  for (char e : v.event) events += e ? 1 : 0;
  if (events == 0) throw std::invalid_argument("batch has no events");
  auto terms = cox_terms(std::span<const double>(g.data(), static_cast<std::size_t>(b)), v.time, v.event,
                         grad != nullptr);
  double penalty = 0.0;
  for (const auto& l : net.layers) penalty += l.weight.squaredNorm();
  const double loss = -terms.pl / events + 0.5 * weight_penalty * penalty;

  if (grad) {
    grad->resize(n_layers);
    Eigen::MatrixXd delta(b, 1);
    for (Eigen::Index r = 0; r < b; ++r) delta(r, 0) = -terms.grad[static_cast<std::size_t>(r)] / events;
    for (std::size_t l = n_layers; l-- > 0;) {
      const auto& layer = net.layers[l];
      (*grad)[l].weight = delta.transpose() * acts[l] + weight_penalty * layer.weight;
      (*grad)[l].bias = delta.colwise().sum().transpose();
      if (l == 0) break;
      Eigen::MatrixXd back = delta * layer.weight;
      const auto& z = pre[l - 1];
      back = back.array() * (z.array() > 0.0).cast<double>();
      if (dropout_masks) back = back.cwiseProduct((*dropout_masks)[l - 1]);
      delta = std::move(back);
    }
  }
  return loss;
}

MlpFit fit_mlp(const SurvivalDataset& ds, const IndexSet& pool, const MlpOptions& opts) {
  if (uncensored(ds, pool).size() < 2) throw std::invalid_argument("fit_mlp needs at least two events in the pool");
  if (opts.batch_size < 2) throw std::invalid_argument("batch size must be at least 2");
  if (!(opts.dropout >= 0.0 && opts.dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");

  std::mt19937_64 rng(opts.seed);
  MlpFit fit;
  MlpPredictor& net = fit.predictor;
  net = init_mlp(ds.dim(), opts.hidden_sizes, rng());
  net.dropout_rate = opts.dropout;
  if (opts.standardize_inputs) {
    const auto x = design(ds, pool);
    net.input_mean = x.colwise().mean().transpose();
    net.input_scale = ((x.rowwise() - net.input_mean.transpose()).array().square().colwise().mean().sqrt()).transpose();
    for (Eigen::Index j = 0; j < net.input_scale.size(); ++j)
      if (!(net.input_scale(j) > 0.0)) net.input_scale(j) = 1.0;
  }

  // Adam state
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  MlpGradient m1(net.layers.size()), m2(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    m1[l] = {Eigen::MatrixXd::Zero(net.layers[l].weight.rows(), net.layers[l].weight.cols()),
             Eigen::VectorXd::Zero(net.layers[l].bias.size())};
    m2[l] = m1[l];
  }
  long step = 0;

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep = 1.0 - opts.dropout;
  IndexSet order = pool;
  MlpGradient grad;
  std::vector<Eigen::MatrixXd> masks;
  const auto n_events_pool = static_cast<double>(uncensored(ds, pool).size());

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    int used = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch_size)) {
      const auto stop = std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
      IndexSet batch(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(stop));
      if (uncensored(ds, batch).empty()) {
        ++fit.skipped_batches;
        continue;
      }
      masks.clear();
      for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
        Eigen::MatrixXd mask(static_cast<Eigen::Index>(batch.size()), net.layers[l].weight.rows());
        for (Eigen::Index c = 0; c < mask.cols(); ++c)
          for (Eigen::Index r = 0; r < mask.rows(); ++r)
            mask(r, c) = opts.dropout > 0.0 ? (unif(rng) < keep ? 1.0 / keep : 0.0) : 1.0;
        masks.push_back(std::move(mask));
      }
      mlp_batch_loss(net, ds, batch, opts.weight_penalty, &grad, &masks);
      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      auto adam = [&](auto& param, auto& mom1, auto& mom2, const auto& gr) {
        mom1 = beta1 * mom1 + (1.0 - beta1) * gr;
        mom2 = beta2 * mom2 + (1.0 - beta2) * gr.cwiseProduct(gr);
        param.array() -= opts.learning_rate * (mom1.array() / c1) / ((mom2.array() / c2).sqrt() + eps);
      };
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        adam(net.layers[l].weight, m1[l].weight, m2[l].weight, grad[l].weight);
        adam(net.layers[l].bias, m1[l].bias, m2[l].bias, grad[l].bias);
      }
      ++used;
    }
    if (used == 0) throw std::runtime_error(fmt::format("epoch {}: every batch lacked events", epoch));

    std::vector<double> g(ds.size(), 0.0);
    for (auto k : pool) g[k] = net(ds[k].covariates);
    double penalty = 0.0;
    for (const auto& l : net.layers) penalty += l.weight.squaredNorm();
    fit.epoch_losses.push_back(-partial_log_lik(g, ds, pool) / n_events_pool + 0.5 * opts.weight_penalty * penalty);
  }
  return fit;
}

double BaselineHazard::at(double t) const {
  auto it = std::upper_bound(event_times.begin(), event_times.end(), t);
  if (it == event_times.begin()) return 0.0;
  return cumulative[static_cast<std::size_t>(it - event_times.begin()) - 1];
}

BaselineHazard breslow(const SurvivalDataset& ds, const IndexSet& pool, std::span<const double> g) {
  if (g.size() != ds.size()) throw std::invalid_argument("g must have one value per subject");
  BaselineHazard h;
  if (pool.empty()) return h;
  double shift = -kInf;
  for (auto k : pool) shift = std::max(shift, g[k]);

  IndexSet ord = pool;
  std::stable_sort(ord.begin(), ord.end(), [&](auto a, auto b) { return ds[a].observed_time > ds[b].observed_time; });
  struct Jump {
    double t, inc;
  };
  std::vector<Jump> jumps;
  double s0 = 0.0;
  for (std::size_t a = 0; a < ord.size();) {
    std::size_t b = a;
    const double t = ds[ord[a]].observed_time;
    int d = 0;
    while (b < ord.size() && ds[ord[b]].observed_time == t) {
      s0 += std::exp(g[ord[b]] - shift);
      d += ds[ord[b]].event ? 1 : 0;
      ++b;
    }
    if (d > 0) jumps.push_back({t, d * std::exp(-shift) / s0});
    a = b;
  }
  double cum = 0.0;
  for (auto it = jumps.rbegin(); it != jumps.rend(); ++it) {
    cum += it->inc;
    h.event_times.push_back(it->t);
    h.cumulative.push_back(cum);
  }
  return h;
}

ConfidenceBand naive_band(double g_at_x, const BaselineHazard& baseline, double alpha, double max_duration) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  const double risk = std::exp(g_at_x);
  for (std::size_t i = 0; i < baseline.event_times.size(); ++i) {
    if (std::exp(-baseline.cumulative[i] * risk) <= alpha) {
      const double upper = std::min(baseline.event_times[i], max_duration);
      return {0.0, upper, false, max_duration};
    }
  }
  return {0.0, max_duration, true, max_duration};
}

}  // namespace survconf
