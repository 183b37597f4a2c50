#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stpn/dataset.hpp"
#include "stpn/matrix.hpp"
#include "stpn/model.hpp"

namespace stpn {

// Per-segment, per-class activation a(t, c) = wc(c, .) . x_t. Raw scores:
// no attention and no sigmoid applied.
struct TCam {
  Matrix values;  // T x C
  Stream stream = Stream::kRgb;
};

// lambda_t * sigmoid(a_t^c), linearly interpolated to a grid of
// (T-1)*rho + 1 points.
struct WeightedTCam {
  Matrix values;  // T_dense x C, entries in (0, 1)
  int rho = 1;
  Stream stream = Stream::kRgb;
};

struct Proposal {
  int class_index = 0;
  std::size_t t_start = 0;  // dense-grid indices, inclusive
  std::size_t t_end = 0;
  Stream stream = Stream::kRgb;

  friend bool operator==(const Proposal&, const Proposal&) = default;
};

struct Detection {
  std::string video_id;
  int class_index = 0;
  double start_s = 0.0;
  double end_s = 0.0;
  double score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct LocalizeConfig {
  double alpha = 0.5;           // rgb weight in two-stream fusion
  double class_reject_p = 0.1;  // drop classes with fused probability below this
  double tcam_threshold = 0.05;  // tau on the weighted T-CAM
  double nms_iou = 0.5;
  int interp = 4;  // rho
  std::size_t t_out = 400;
  int threads = 1;
};

TCam tcam(const ModelParams& params, const Matrix& x, Stream stream);

// Linear interpolation onto the dense grid; endpoints preserved exactly.
std::vector<double> interp_linear(const std::vector<double>& coarse, int rho);
Matrix interp_linear_cols(const Matrix& coarse, int rho);

WeightedTCam weighted_tcam(const std::vector<double>& lambda, const TCam& tc, int rho);

// Maximal runs with psi(t, c) strictly above tau, one proposal per run.
std::vector<Proposal> extract_proposals(const WeightedTCam& wt, double tau);

// Mean over the proposal span of lambda_src * (alpha*a_rgb + (1-alpha)*a_flow),
// all signals on the same dense grid.
double score_proposal(const Proposal& proposal, const std::vector<double>& lambda_dense_src,
                      const Matrix& a_rgb_dense, const Matrix& a_flow_dense, double alpha);

// Greedy NMS over detections of one video and one class. Ties broken by
// earlier start, then shorter interval.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh);

std::vector<Detection> localize_video(const ModelParams& rgb_params, const ModelParams& flow_params,
                                      const VideoRecord& rec, const DatasetManifest& manifest,
                                      const LocalizeConfig& cfg);

// Runs localize_video over every video; results are identical at any thread
// count because per-video work is pure and collected in manifest order.
std::vector<Detection> localize_dataset(const ModelParams& rgb_params,
                                        const ModelParams& flow_params,
                                        const DatasetManifest& manifest,
                                        const LocalizeConfig& cfg);

// CSV: header video_id,class,start_s,end_s,score; sorted by
// (video_id, class, -score).
void write_detections_csv(std::vector<Detection> dets, const std::filesystem::path& path);
std::vector<Detection> read_detections_csv(const std::filesystem::path& path);

}  // namespace stpn
