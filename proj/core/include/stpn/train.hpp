#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "stpn/dataset.hpp"
#include "stpn/matrix.hpp"
#include "stpn/model.hpp"

namespace stpn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct Hyperparams {
  double beta = 0.1;       // sparsity weight
  double lr = 1e-4;
  std::size_t t_out = 400;
  std::size_t epochs = 100;
  std::size_t hidden = 256;
  AdamConfig adam;
  std::uint64_t seed = 0;
};

// Gradient (or any per-parameter buffer) with the same shapes as ModelParams.
struct Gradients {
  Matrix w1;
  std::vector<double> b1;
  std::vector<double> w2;
  double b2 = 0.0;
  Matrix wc;

  static Gradients zeros_like(const ModelParams& p);
  bool all_finite() const;
};

struct AdamState {
  Gradients m;  // first moments
  Gradients v;  // second moments
  std::size_t step = 0;

  static AdamState zeros_like(const ModelParams& p);
};

// Mean binary cross-entropy over classes; y holds 0/1 per class.
double classification_loss(const std::vector<double>& p, const std::vector<std::uint8_t>& y);
// Same loss evaluated from pre-sigmoid scores; safe when sigmoid saturates.
double classification_loss_from_scores(const std::vector<double>& s,
                                       const std::vector<std::uint8_t>& y);

// Mean |lambda_t|; equals the mean attention since lambda_t > 0.
double sparsity_loss(const std::vector<double>& lambda);

double total_loss(const ForwardCache& cache, const std::vector<std::uint8_t>& y, double beta);

// Analytic gradient of total_loss through the whole graph, including both
// routes through lambda (pooling and sparsity). ReLU subgradient at 0 is 0.
Gradients backward(const ModelParams& params, const ForwardCache& cache,
                   const std::vector<std::uint8_t>& y, double beta);

// Central differences of total_loss per parameter scalar; the testing oracle.
Gradients finite_diff_grad(const ModelParams& params, const Matrix& x,
                           const std::vector<std::uint8_t>& y, double beta, double epsilon);

// Central differences of an arbitrary functional of the parameters.
Gradients finite_diff(const ModelParams& params,
                      const std::function<double(const ModelParams&)>& f, double epsilon);

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state,
               const Hyperparams& hyper);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss_class = 0.0;
  double loss_sparsity = 0.0;
  double loss_total = 0.0;
  double mean_lambda = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Per-video Adam updates over a seed-deterministic shuffled order with
// perturbed segment sampling. Uses only video-level labels.
ModelParams train(const DatasetManifest& manifest, Stream stream, const Hyperparams& hyper,
                  const EpochCallback& on_epoch = {});

// Mean attention over all videos using deterministic sampling; diagnostic for
// sparsity comparisons.
double mean_attention(const ModelParams& params, const DatasetManifest& manifest, Stream stream,
                      std::size_t t_out);

std::vector<std::uint8_t> label_vector(const VideoRecord& rec, int num_classes);

}  // namespace stpn
