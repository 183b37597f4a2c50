#include "stpn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>

namespace stpn {

namespace {

// log(1 + e^x) without overflow.
double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

void check_label_shape(const std::vector<std::uint8_t>& y, std::size_t c) {
  require(y.size() == c, "labels must have one 0/1 entry per class");
}

}  // namespace

Gradients Gradients::zeros_like(const ModelParams& p) {
  Gradients g;
  g.w1 = Matrix(p.w1.rows(), p.w1.cols());
  g.b1.assign(p.b1.size(), 0.0);
  g.w2.assign(p.w2.size(), 0.0);
  g.b2 = 0.0;
  g.wc = Matrix(p.wc.rows(), p.wc.cols());
  return g;
}

bool Gradients::all_finite() const {
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  return w1.all_finite() && finite(b1) && finite(w2) && std::isfinite(b2) && wc.all_finite();
}

AdamState AdamState::zeros_like(const ModelParams& p) {
  AdamState s;
  s.m = Gradients::zeros_like(p);
  s.v = Gradients::zeros_like(p);
  s.step = 0;
  return s;
}

double classification_loss(const std::vector<double>& p, const std::vector<std::uint8_t>& y) {
  check_label_shape(y, p.size());
  double loss = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    loss -= y[c] ? std::log(p[c]) : std::log(1.0 - p[c]);
  }
  return loss / static_cast<double>(p.size());
}

double classification_loss_from_scores(const std::vector<double>& s,
                                       const std::vector<std::uint8_t>& y) {
  check_label_shape(y, s.size());
  double loss = 0.0;
  for (std::size_t c = 0; c < s.size(); ++c) {
    // -log p = softplus(-s), -log(1-p) = softplus(s)
    loss += y[c] ? softplus(-s[c]) : softplus(s[c]);
  }
  return loss / static_cast<double>(s.size());
}

double sparsity_loss(const std::vector<double>& lambda) {
  if (lambda.empty()) return 0.0;
  double sum = 0.0;
  for (double v : lambda) sum += std::abs(v);
  return sum / static_cast<double>(lambda.size());
}

double total_loss(const ForwardCache& cache, const std::vector<std::uint8_t>& y, double beta) {
  return classification_loss_from_scores(cache.s, y) + beta * sparsity_loss(cache.att.lambda);
}

Gradients backward(const ModelParams& params, const ForwardCache& cache,
                   const std::vector<std::uint8_t>& y, double beta) {
  const std::size_t t = cache.x.rows();
  const std::size_t m = params.feature_dim();
  const std::size_t h = params.hidden_dim();
  const std::size_t c = params.num_classes();
  check_label_shape(y, c);
  require(cache.x.cols() == m && cache.att.lambda.size() == t,
          "backward: cache does not match params");

  Gradients g = Gradients::zeros_like(params);

  // dL/ds_c = (p_c - y_c)/C for the mean BCE through the sigmoid.
  std::vector<double> ds(c);
  for (std::size_t j = 0; j < c; ++j) {
    ds[j] = (cache.p[j] - static_cast<double>(y[j])) / static_cast<double>(c);
  }

  // dWc = ds * xbar^T ; dxbar = Wc^T * ds
  std::vector<double> dxbar(m, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    const double* wj = params.wc.row(j);
    double* gj = g.wc.row(j);
    for (std::size_t k = 0; k < m; ++k) {
      gj[k] = ds[j] * cache.xbar[k];
      dxbar[k] += wj[k] * ds[j];
    }
  }

  // lambda gets gradient from the pooling route (x_t . dxbar) and the
  // sparsity route (beta/T, since lambda_t > 0).
  const double sparsity_term = t > 0 ? beta / static_cast<double>(t) : 0.0;
  std::vector<double> dz2(t);
  for (std::size_t i = 0; i < t; ++i) {
    const double* xi = cache.x.row(i);
    double dlambda = sparsity_term;
    for (std::size_t k = 0; k < m; ++k) dlambda += xi[k] * dxbar[k];
    const double l = cache.att.lambda[i];
    dz2[i] = dlambda * l * (1.0 - l);
  }

  // Second attention layer, then ReLU mask, then first layer.
  for (std::size_t i = 0; i < t; ++i) {
    const double* ri = cache.att.r1.row(i);
    for (std::size_t j = 0; j < h; ++j) g.w2[j] += dz2[i] * ri[j];
    g.b2 += dz2[i];
  }
  for (std::size_t i = 0; i < t; ++i) {
    const double* xi = cache.x.row(i);
    const double* z1i = cache.att.z1.row(i);
    for (std::size_t j = 0; j < h; ++j) {
      if (z1i[j] <= 0.0) continue;  // ReLU subgradient at 0 taken as 0
      const double dz1 = dz2[i] * params.w2[j];
      g.b1[j] += dz1;
      double* gw1j = g.w1.row(j);
      for (std::size_t k = 0; k < m; ++k) gw1j[k] += dz1 * xi[k];
    }
  }
  return g;
}

namespace {

// Visits every parameter scalar in checkpoint order.
template <class Fn>
void for_each_scalar(ModelParams& p, Fn&& fn) {
  for (double& v : p.w1.values()) fn(v);
  for (double& v : p.b1) fn(v);
  for (double& v : p.w2) fn(v);
  fn(p.b2);
  for (double& v : p.wc.values()) fn(v);
}

template <class Fn>
void for_each_scalar(Gradients& g, Fn&& fn) {
  for (double& v : g.w1.values()) fn(v);
  for (double& v : g.b1) fn(v);
  for (double& v : g.w2) fn(v);
  fn(g.b2);
  for (double& v : g.wc.values()) fn(v);
}

}  // namespace

Gradients finite_diff(const ModelParams& params,
                      const std::function<double(const ModelParams&)>& f, double epsilon) {
  require(epsilon > 0.0, "finite_diff: epsilon must be > 0");
  ModelParams work = params;
  Gradients out = Gradients::zeros_like(params);

  std::vector<double*> slots;
  for_each_scalar(work, [&slots](double& v) { slots.push_back(&v); });
  std::vector<double*> grads;
  for_each_scalar(out, [&grads](double& v) { grads.push_back(&v); });

  for (std::size_t i = 0; i < slots.size(); ++i) {
    const double original = *slots[i];
    *slots[i] = original + epsilon;
    const double plus = f(work);
    *slots[i] = original - epsilon;
    const double minus = f(work);
    *slots[i] = original;
    *grads[i] = (plus - minus) / (2.0 * epsilon);
  }
  return out;
}

Gradients finite_diff_grad(const ModelParams& params, const Matrix& x,
                           const std::vector<std::uint8_t>& y, double beta, double epsilon) {
  return finite_diff(
      params,
      [&x, &y, beta](const ModelParams& p) { return total_loss(forward(p, x), y, beta); },
      epsilon);
}

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state,
               const Hyperparams& hyper) {
  state.step += 1;
  const AdamConfig& a = hyper.adam;
  const double bc1 = 1.0 - std::pow(a.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(a.beta2, static_cast<double>(state.step));

  auto update = [&](std::span<double> p, std::span<const double> g, std::span<double> m,
                    std::span<double> v) {
    require(p.size() == g.size() && p.size() == m.size() && p.size() == v.size(),
            "adam_step: shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = a.beta1 * m[i] + (1.0 - a.beta1) * g[i];
      v[i] = a.beta2 * v[i] + (1.0 - a.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= hyper.lr * mhat / (std::sqrt(vhat) + a.eps);
    }
  };

  update(params.w1.values(), grads.w1.values(), state.m.w1.values(), state.v.w1.values());
  update(params.b1, grads.b1, state.m.b1, state.v.b1);
  update(params.w2, grads.w2, state.m.w2, state.v.w2);
  update({&params.b2, 1}, {&grads.b2, 1}, {&state.m.b2, 1}, {&state.v.b2, 1});
  update(params.wc.values(), grads.wc.values(), state.m.wc.values(), state.v.wc.values());
}

std::vector<std::uint8_t> label_vector(const VideoRecord& rec, int num_classes) {
  std::vector<std::uint8_t> y(static_cast<std::size_t>(num_classes), 0);
  for (int label : rec.labels) y[static_cast<std::size_t>(label)] = 1;
  return y;
}

ModelParams train(const DatasetManifest& manifest, Stream stream, const Hyperparams& hyper,
                  const EpochCallback& on_epoch) {
  require(hyper.lr > 0.0, "train: lr must be > 0");
  require(hyper.t_out >= 1, "train: t_out must be >= 1");
  require(!manifest.videos.empty(), "train: manifest has no videos");

  // Load every video's features up front; training touches nothing else from
  // the records (in particular, never gt intervals).
  std::vector<Matrix> features;
  features.reserve(manifest.videos.size());
  for (const VideoRecord& rec : manifest.videos) {
    const auto path = manifest.resolve(rec.feature_path(stream));
    if (!std::filesystem::exists(path))
      throw std::runtime_error("video '" + rec.id + "': missing feature file " + path.string());
    features.push_back(read_features(path));
  }
  const std::size_t m = features.front().cols();
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].cols() != m)
      throw std::runtime_error("video '" + manifest.videos[i].id +
                               "': feature dim differs from the rest of the dataset");
  }

  // epochs == 0 falls through and returns these initial parameters as-is.
  const int c = manifest.num_classes();
  ModelParams params = init_params(m, hyper.hidden, static_cast<std::size_t>(c), hyper.seed);
  AdamState state = AdamState::zeros_like(params);
  Rng order_rng(Rng::derive_seed(hyper.seed, 0x02D0));
  Rng sample_rng(Rng::derive_seed(hyper.seed, 0x5A30));

  std::vector<std::size_t> order(manifest.videos.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
    order_rng.shuffle(order);
    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t idx : order) {
      const Matrix segs =
          sample_segments(features[idx], hyper.t_out, SampleMode::kPerturbed, sample_rng);
      const ForwardCache cache = forward(params, segs);
      const auto y = label_vector(manifest.videos[idx], c);
      const Gradients grads = backward(params, cache, y, hyper.beta);
      adam_step(params, grads, state, hyper);

      stats.loss_class += classification_loss_from_scores(cache.s, y);
      stats.loss_sparsity += sparsity_loss(cache.att.lambda);
      stats.mean_lambda += sparsity_loss(cache.att.lambda);
    }
    const double n = static_cast<double>(order.size());
    stats.loss_class /= n;
    stats.loss_sparsity /= n;
    stats.mean_lambda /= n;
    stats.loss_total = stats.loss_class + hyper.beta * stats.loss_sparsity;
    if (on_epoch) on_epoch(stats);
  }
  return params;
}

double mean_attention(const ModelParams& params, const DatasetManifest& manifest, Stream stream,
                      std::size_t t_out) {
  require(!manifest.videos.empty(), "mean_attention: manifest has no videos");
  Rng unused(0);
  double acc = 0.0;
  for (const VideoRecord& rec : manifest.videos) {
    const Matrix raw = read_features(manifest.resolve(rec.feature_path(stream)));
    const Matrix segs = sample_segments(raw, t_out, SampleMode::kDeterministic, unused);
    const AttentionActivations att = attention_forward(params, segs);
    acc += sparsity_loss(att.lambda);
  }
  return acc / static_cast<double>(manifest.videos.size());
}

}  // namespace stpn
