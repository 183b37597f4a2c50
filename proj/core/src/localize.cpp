#include "stpn/localize.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "stpn/eval.hpp"
#include "stpn/fmt.hpp"

namespace stpn {

TCam tcam(const ModelParams& params, const Matrix& x, Stream stream) {
  require(x.cols() == params.feature_dim(), "tcam: feature dim mismatch");
  const std::size_t t = x.rows();
  const std::size_t c = params.num_classes();
  const std::size_t m = params.feature_dim();
  TCam out;
  out.stream = stream;
  out.values = Matrix(t, c);
  for (std::size_t i = 0; i < t; ++i) {
    const double* xi = x.row(i);
    for (std::size_t j = 0; j < c; ++j) {
      const double* wj = params.wc.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < m; ++k) acc += wj[k] * xi[k];
      out.values(i, j) = acc;
    }
  }
  return out;
}

std::vector<double> interp_linear(const std::vector<double>& coarse, int rho) {
  require(rho >= 1, "interp_linear: rho must be >= 1");
  require(!coarse.empty(), "interp_linear: empty input");
  const std::size_t t = coarse.size();
  const std::size_t dense_len = (t - 1) * static_cast<std::size_t>(rho) + 1;
  std::vector<double> dense(dense_len);
  for (std::size_t d = 0; d < dense_len; ++d) {
    const std::size_t k = d / static_cast<std::size_t>(rho);
    const std::size_t r = d % static_cast<std::size_t>(rho);
    if (r == 0) {
      dense[d] = coarse[k];  // grid points carried over exactly
    } else {
      const double frac = static_cast<double>(r) / static_cast<double>(rho);
      dense[d] = coarse[k] + frac * (coarse[k + 1] - coarse[k]);
    }
  }
  return dense;
}

Matrix interp_linear_cols(const Matrix& coarse, int rho) {
  require(rho >= 1, "interp_linear_cols: rho must be >= 1");
  require(coarse.rows() >= 1, "interp_linear_cols: empty input");
  const std::size_t t = coarse.rows();
  const std::size_t dense_len = (t - 1) * static_cast<std::size_t>(rho) + 1;
  Matrix dense(dense_len, coarse.cols());
  for (std::size_t d = 0; d < dense_len; ++d) {
    const std::size_t k = d / static_cast<std::size_t>(rho);
    const std::size_t r = d % static_cast<std::size_t>(rho);
    if (r == 0) {
      std::copy(coarse.row(k), coarse.row(k) + coarse.cols(), dense.row(d));
    } else {
      const double frac = static_cast<double>(r) / static_cast<double>(rho);
      const double* a = coarse.row(k);
      const double* b = coarse.row(k + 1);
      double* out = dense.row(d);
      for (std::size_t j = 0; j < coarse.cols(); ++j) out[j] = a[j] + frac * (b[j] - a[j]);
    }
  }
  return dense;
}

WeightedTCam weighted_tcam(const std::vector<double>& lambda, const TCam& tc, int rho) {
  require(lambda.size() == tc.values.rows(), "weighted_tcam: lambda length mismatch");
  require(rho >= 1, "weighted_tcam: rho must be >= 1");
  Matrix coarse(tc.values.rows(), tc.values.cols());
  for (std::size_t i = 0; i < coarse.rows(); ++i) {
    for (std::size_t j = 0; j < coarse.cols(); ++j) {
      coarse(i, j) = lambda[i] * sigmoid(tc.values(i, j));
    }
  }
  WeightedTCam out;
  out.rho = rho;
  out.stream = tc.stream;
  out.values = interp_linear_cols(coarse, rho);
  return out;
}

std::vector<Proposal> extract_proposals(const WeightedTCam& wt, double tau) {
  require(tau > 0.0 && tau < 1.0, "extract_proposals: tau must be in (0, 1)");
  std::vector<Proposal> proposals;
  const std::size_t t_dense = wt.values.rows();
  for (std::size_t c = 0; c < wt.values.cols(); ++c) {
    std::size_t run_start = 0;
    bool in_run = false;
    for (std::size_t d = 0; d < t_dense; ++d) {
      const bool above = wt.values(d, c) > tau;  // strict; equality excluded
      if (above && !in_run) {
        run_start = d;
        in_run = true;
      } else if (!above && in_run) {
        proposals.push_back({static_cast<int>(c), run_start, d - 1, wt.stream});
        in_run = false;
      }
    }
    if (in_run) proposals.push_back({static_cast<int>(c), run_start, t_dense - 1, wt.stream});
  }
  return proposals;
}

double score_proposal(const Proposal& proposal, const std::vector<double>& lambda_dense_src,
                      const Matrix& a_rgb_dense, const Matrix& a_flow_dense, double alpha) {
  const std::size_t t_dense = lambda_dense_src.size();
  require(a_rgb_dense.rows() == t_dense && a_flow_dense.rows() == t_dense,
          "score_proposal: dense grids disagree");
  require(a_rgb_dense.cols() == a_flow_dense.cols(), "score_proposal: class counts disagree");
  require(proposal.t_end >= proposal.t_start && proposal.t_end < t_dense,
          "score_proposal: proposal outside grid");
  const std::size_t c = static_cast<std::size_t>(proposal.class_index);
  const double len = static_cast<double>(proposal.t_end - proposal.t_start + 1);
  double acc = 0.0;
  for (std::size_t d = proposal.t_start; d <= proposal.t_end; ++d) {
    const double fused = alpha * a_rgb_dense(d, c) + (1.0 - alpha) * a_flow_dense(d, c);
    acc += lambda_dense_src[d] * fused;
  }
  return acc / len;
}

namespace {

bool nms_order(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.start_s != b.start_s) return a.start_s < b.start_s;
  return (a.end_s - a.start_s) < (b.end_s - b.start_s);
}

}  // namespace

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh) {
  std::stable_sort(dets.begin(), dets.end(), nms_order);
  std::vector<Detection> kept;
  std::vector<bool> removed(dets.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (removed[i]) continue;
    kept.push_back(dets[i]);
    for (std::size_t j = i + 1; j < dets.size(); ++j) {
      if (removed[j]) continue;
      const double overlap =
          iou(dets[i].start_s, dets[i].end_s, dets[j].start_s, dets[j].end_s);
      if (overlap > iou_thresh) removed[j] = true;
    }
  }
  return kept;
}

std::vector<Detection> localize_video(const ModelParams& rgb_params, const ModelParams& flow_params,
                                      const VideoRecord& rec, const DatasetManifest& manifest,
                                      const LocalizeConfig& cfg) {
  if (rgb_params.num_classes() != flow_params.num_classes())
    throw std::runtime_error("localize: checkpoints disagree on class count");
  if (rgb_params.num_classes() != static_cast<std::size_t>(manifest.num_classes()))
    throw std::runtime_error("localize: checkpoint class count disagrees with the manifest");
  require(cfg.alpha >= 0.0 && cfg.alpha <= 1.0, "localize: alpha must be in [0, 1]");
  require(cfg.interp >= 1, "localize: interp must be >= 1");

  Rng unused(0);
  std::array<Matrix, 2> segs;
  for (Stream s : {Stream::kRgb, Stream::kFlow}) {
    const auto path = manifest.resolve(rec.feature_path(s));
    if (!std::filesystem::exists(path))
      throw std::runtime_error("video '" + rec.id + "': missing feature file " + path.string());
    const Matrix raw = read_features(path);
    segs[static_cast<std::size_t>(s)] =
        sample_segments(raw, cfg.t_out, SampleMode::kDeterministic, unused);
  }
  const Matrix& x_rgb = segs[0];
  const Matrix& x_flow = segs[1];

  const ForwardCache fwd_rgb = forward(rgb_params, x_rgb);
  const ForwardCache fwd_flow = forward(flow_params, x_flow);
  const std::size_t c = rgb_params.num_classes();

  // Fused video-level probabilities decide which classes survive.
  std::vector<bool> keep_class(c, false);
  bool any = false;
  for (std::size_t j = 0; j < c; ++j) {
    const double q = cfg.alpha * fwd_rgb.p[j] + (1.0 - cfg.alpha) * fwd_flow.p[j];
    keep_class[j] = q >= cfg.class_reject_p;
    any = any || keep_class[j];
  }
  if (!any) return {};

  const TCam cam_rgb = tcam(rgb_params, x_rgb, Stream::kRgb);
  const TCam cam_flow = tcam(flow_params, x_flow, Stream::kFlow);
  const WeightedTCam wt_rgb = weighted_tcam(fwd_rgb.att.lambda, cam_rgb, cfg.interp);
  const WeightedTCam wt_flow = weighted_tcam(fwd_flow.att.lambda, cam_flow, cfg.interp);

  // Scoring shares one dense grid with extraction.
  const std::vector<double> lambda_rgb_dense = interp_linear(fwd_rgb.att.lambda, cfg.interp);
  const std::vector<double> lambda_flow_dense = interp_linear(fwd_flow.att.lambda, cfg.interp);
  const Matrix a_rgb_dense = interp_linear_cols(cam_rgb.values, cfg.interp);
  const Matrix a_flow_dense = interp_linear_cols(cam_flow.values, cfg.interp);
  const std::size_t t_dense = lambda_rgb_dense.size();

  std::vector<Proposal> proposals;
  for (const WeightedTCam* wt : {&wt_rgb, &wt_flow}) {
    for (Proposal& p : extract_proposals(*wt, cfg.tcam_threshold)) {
      if (keep_class[static_cast<std::size_t>(p.class_index)]) proposals.push_back(p);
    }
  }

  std::vector<Detection> dets;
  dets.reserve(proposals.size());
  for (const Proposal& p : proposals) {
    const auto& lambda_src = p.stream == Stream::kRgb ? lambda_rgb_dense : lambda_flow_dense;
    Detection d;
    d.video_id = rec.id;
    d.class_index = p.class_index;
    // duration * (t / T_dense) keeps every boundary inside [0, duration_s]
    // and lands on duration_s exactly when the run touches the grid end.
    d.start_s =
        rec.duration_s * (static_cast<double>(p.t_start) / static_cast<double>(t_dense));
    d.end_s =
        rec.duration_s * (static_cast<double>(p.t_end + 1) / static_cast<double>(t_dense));
    d.score = score_proposal(p, lambda_src, a_rgb_dense, a_flow_dense, cfg.alpha);
    dets.push_back(std::move(d));
  }

  // Per-class NMS, then a deterministic overall order.
  std::vector<Detection> out;
  for (std::size_t j = 0; j < c; ++j) {
    std::vector<Detection> of_class;
    for (const Detection& d : dets) {
      if (d.class_index == static_cast<int>(j)) of_class.push_back(d);
    }
    if (of_class.empty()) continue;
    for (Detection& d : nms(std::move(of_class), cfg.nms_iou)) out.push_back(std::move(d));
  }
  std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    if (a.class_index != b.class_index) return a.class_index < b.class_index;
    if (a.score != b.score) return a.score > b.score;
    if (a.start_s != b.start_s) return a.start_s < b.start_s;
    return a.end_s < b.end_s;
  });
  return out;
}

std::vector<Detection> localize_dataset(const ModelParams& rgb_params,
                                        const ModelParams& flow_params,
                                        const DatasetManifest& manifest,
                                        const LocalizeConfig& cfg) {
  const std::size_t n = manifest.videos.size();
  std::vector<std::vector<Detection>> per_video(n);
  const int threads = std::max(1, cfg.threads);
  if (threads == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      per_video[i] = localize_video(rgb_params, flow_params, manifest.videos[i], manifest, cfg);
    }
  } else {
    // Workers pull indices; slot i always holds video i, so output order
    // does not depend on scheduling.
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::atomic<bool> failed{false};
    std::string error;
    std::mutex error_mu;
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&]() {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= n || failed.load()) return;
          try {
            per_video[i] =
                localize_video(rgb_params, flow_params, manifest.videos[i], manifest, cfg);
          } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(error_mu);
            error = e.what();
            failed.store(true);
            return;
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failed.load()) throw std::runtime_error(error);
  }

  std::vector<Detection> all;
  for (auto& v : per_video) {
    for (Detection& d : v) all.push_back(std::move(d));
  }
  return all;
}

namespace {

bool csv_order(const Detection& a, const Detection& b) {
  if (a.video_id != b.video_id) return a.video_id < b.video_id;
  if (a.class_index != b.class_index) return a.class_index < b.class_index;
  if (a.score != b.score) return a.score > b.score;
  if (a.start_s != b.start_s) return a.start_s < b.start_s;
  return a.end_s < b.end_s;
}

}  // namespace

void write_detections_csv(std::vector<Detection> dets, const std::filesystem::path& path) {
  std::sort(dets.begin(), dets.end(), csv_order);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open detections file for writing: " + path.string());
  out << "video_id,class,start_s,end_s,score\n";
  for (const Detection& d : dets) {
    out << d.video_id << ',' << d.class_index << ',' << fmt_double(d.start_s) << ','
        << fmt_double(d.end_s) << ',' << fmt_double(d.score) << '\n';
  }
  if (!out) throw std::runtime_error("detections write failed: " + path.string());
}

std::vector<Detection> read_detections_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open detections file: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "video_id,class,start_s,end_s,score")
    throw std::runtime_error("bad detections header: " + path.string());
  std::vector<Detection> dets;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    Detection d;
    try {
      std::getline(ss, d.video_id, ',');
      std::getline(ss, field, ',');
      d.class_index = std::stoi(field);
      std::getline(ss, field, ',');
      d.start_s = std::stod(field);
      std::getline(ss, field, ',');
      d.end_s = std::stod(field);
      std::getline(ss, field, ',');
      d.score = std::stod(field);
    } catch (const std::exception&) {
      throw std::runtime_error("bad detections row " + std::to_string(line_no) + " in " +
                               path.string());
    }
    dets.push_back(std::move(d));
  }
  return dets;
}

}  // namespace stpn
