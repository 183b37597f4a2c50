#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "stpn/matrix.hpp"

namespace stpn {

// One stream's network: a two-layer attention MLP (sigmoid output) and a
// bias-free linear classifier over the pooled representation. The classifier
// carries no bias so the per-segment class activations sum exactly to the
// video score.
struct ModelParams {
  Matrix w1;                // h x m, first attention layer
  std::vector<double> b1;   // h
  std::vector<double> w2;   // h, second attention layer (single output)
  double b2 = 0.0;
  Matrix wc;                // C x m classifier, no bias

  std::size_t feature_dim() const { return w1.cols(); }
  std::size_t hidden_dim() const { return w1.rows(); }
  std::size_t num_classes() const { return wc.rows(); }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct AttentionActivations {
  Matrix z1;                   // T x h pre-activations
  Matrix r1;                   // T x h after ReLU
  std::vector<double> z2;      // T pre-sigmoid
  std::vector<double> lambda;  // T attention weights in (0, 1)
};

struct ForwardCache {
  Matrix x;  // T x m input segments
  AttentionActivations att;
  std::vector<double> xbar;  // m pooled representation
  std::vector<double> s;     // C pre-sigmoid class scores
  std::vector<double> p;     // C class probabilities
};

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases, fixed draw order.
ModelParams init_params(std::size_t feature_dim, std::size_t hidden_dim,
                        std::size_t num_classes, std::uint64_t seed);

AttentionActivations attention_forward(const ModelParams& params, const Matrix& x);

// xbar(k) = sum_t lambda_t * x(t, k)
std::vector<double> pool(const Matrix& x, const std::vector<double>& lambda);

// s_c = wc(c, .) . xbar ; p_c = sigmoid(s_c)
void classify(const ModelParams& params, const std::vector<double>& xbar,
              std::vector<double>& s, std::vector<double>& p);

ForwardCache forward(const ModelParams& params, const Matrix& x);

// Checkpoint: "STPNMODL", u32 version=1, u32 m,h,C, tensors as float64
// little-endian (w1, b1, w2, b2, wc), then FNV-1a64 over all bytes between
// the magic and the checksum.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace stpn
