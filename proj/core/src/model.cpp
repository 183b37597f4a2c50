#include "stpn/model.hpp"

#include <cmath>
#include <cstring>

#include "binio.hpp"
#include "stpn/rng.hpp"

namespace stpn {

namespace {
constexpr char kModelMagic[8] = {'S', 'T', 'P', 'N', 'M', 'O', 'D', 'L'};
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

ModelParams init_params(std::size_t feature_dim, std::size_t hidden_dim,
                        std::size_t num_classes, std::uint64_t seed) {
  require(feature_dim >= 1 && hidden_dim >= 1 && num_classes >= 1,
          "init_params: dims must be >= 1");
  Rng rng(seed);
  ModelParams p;
  p.w1 = Matrix(hidden_dim, feature_dim);
  p.b1.assign(hidden_dim, 0.0);
  p.w2.assign(hidden_dim, 0.0);
  p.b2 = 0.0;
  p.wc = Matrix(num_classes, feature_dim);

  const double bound1 = std::sqrt(6.0 / static_cast<double>(feature_dim + hidden_dim));
  for (double& v : p.w1.values()) v = rng.uniform(-bound1, bound1);
  const double bound2 = std::sqrt(6.0 / static_cast<double>(hidden_dim + 1));
  for (double& v : p.w2) v = rng.uniform(-bound2, bound2);
  const double boundc = std::sqrt(6.0 / static_cast<double>(feature_dim + num_classes));
  for (double& v : p.wc.values()) v = rng.uniform(-boundc, boundc);
  return p;
}

AttentionActivations attention_forward(const ModelParams& params, const Matrix& x) {
  require(x.cols() == params.feature_dim(), "attention_forward: feature dim mismatch");
  const std::size_t t = x.rows();
  const std::size_t h = params.hidden_dim();
  const std::size_t m = params.feature_dim();

  AttentionActivations a;
  a.z1 = Matrix(t, h);
  a.r1 = Matrix(t, h);
  a.z2.assign(t, 0.0);
  a.lambda.assign(t, 0.0);

  for (std::size_t i = 0; i < t; ++i) {
    const double* xi = x.row(i);
    for (std::size_t j = 0; j < h; ++j) {
      const double* wj = params.w1.row(j);
      double acc = params.b1[j];
      for (std::size_t k = 0; k < m; ++k) acc += wj[k] * xi[k];
      a.z1(i, j) = acc;
      a.r1(i, j) = acc > 0.0 ? acc : 0.0;
    }
    double z2 = params.b2;
    const double* ri = a.r1.row(i);
    for (std::size_t j = 0; j < h; ++j) z2 += params.w2[j] * ri[j];
    a.z2[i] = z2;
    a.lambda[i] = sigmoid(z2);
  }
  return a;
}

std::vector<double> pool(const Matrix& x, const std::vector<double>& lambda) {
  require(x.rows() == lambda.size(), "pool: lambda length must equal T");
  std::vector<double> xbar(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double w = lambda[i];
    const double* xi = x.row(i);
    for (std::size_t k = 0; k < x.cols(); ++k) xbar[k] += w * xi[k];
  }
  return xbar;
}

void classify(const ModelParams& params, const std::vector<double>& xbar,
              std::vector<double>& s, std::vector<double>& p) {
  require(xbar.size() == params.feature_dim(), "classify: xbar length must equal m");
  const std::size_t c = params.num_classes();
  s.assign(c, 0.0);
  p.assign(c, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    const double* wj = params.wc.row(j);
    double acc = 0.0;
    for (std::size_t k = 0; k < xbar.size(); ++k) acc += wj[k] * xbar[k];
    s[j] = acc;
    p[j] = sigmoid(acc);
  }
}

ForwardCache forward(const ModelParams& params, const Matrix& x) {
  ForwardCache cache;
  cache.x = x;
  cache.att = attention_forward(params, x);
  cache.xbar = pool(x, cache.att.lambda);
  classify(params, cache.xbar, cache.s, cache.p);
  return cache;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::vector<unsigned char> payload;
  binio::put_u32(payload, kModelVersion);
  binio::put_u32(payload, static_cast<std::uint32_t>(params.feature_dim()));
  binio::put_u32(payload, static_cast<std::uint32_t>(params.hidden_dim()));
  binio::put_u32(payload, static_cast<std::uint32_t>(params.num_classes()));
  for (double v : params.w1.values()) binio::put_f64(payload, v);
  for (double v : params.b1) binio::put_f64(payload, v);
  for (double v : params.w2) binio::put_f64(payload, v);
  binio::put_f64(payload, params.b2);
  for (double v : params.wc.values()) binio::put_f64(payload, v);

  std::vector<unsigned char> bytes;
  bytes.reserve(8 + payload.size() + 8);
  bytes.insert(bytes.end(), kModelMagic, kModelMagic + 8);
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  binio::put_u64(bytes, binio::fnv1a64(payload.data(), payload.size()));
  binio::write_file(path.string(), bytes);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path.string());
  if (bytes.size() < 8 + 16 + 8) throw std::runtime_error("truncated checkpoint: " + path.string());
  if (std::memcmp(bytes.data(), kModelMagic, 8) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path.string());

  const unsigned char* payload = bytes.data() + 8;
  const std::size_t payload_len = bytes.size() - 16;
  const std::uint64_t stored = binio::get_u64(bytes.data() + bytes.size() - 8);
  if (binio::fnv1a64(payload, payload_len) != stored)
    throw std::runtime_error("checkpoint checksum mismatch: " + path.string());

  const std::uint32_t version = binio::get_u32(payload);
  if (version != kModelVersion)
    throw std::runtime_error("unsupported checkpoint version: " + path.string());
  const std::uint64_t m = binio::get_u32(payload + 4);
  const std::uint64_t h = binio::get_u32(payload + 8);
  const std::uint64_t c = binio::get_u32(payload + 12);
  if (m < 1 || h < 1 || c < 1) throw std::runtime_error("bad checkpoint dims: " + path.string());
  const std::uint64_t count = h * m + h + h + 1 + c * m;
  if (payload_len != 16 + 8 * count)
    throw std::runtime_error("checkpoint size mismatch: " + path.string());

  ModelParams p;
  p.w1 = Matrix(static_cast<std::size_t>(h), static_cast<std::size_t>(m));
  p.b1.assign(static_cast<std::size_t>(h), 0.0);
  p.w2.assign(static_cast<std::size_t>(h), 0.0);
  p.wc = Matrix(static_cast<std::size_t>(c), static_cast<std::size_t>(m));

  const unsigned char* q = payload + 16;
  auto take = [&q](double& slot) {
    slot = binio::get_f64(q);
    if (!std::isfinite(slot)) throw std::runtime_error("non-finite checkpoint value");
    q += 8;
  };
  for (double& v : p.w1.values()) take(v);
  for (double& v : p.b1) take(v);
  for (double& v : p.w2) take(v);
  take(p.b2);
  for (double& v : p.wc.values()) take(v);
  return p;
}

}  // namespace stpn
