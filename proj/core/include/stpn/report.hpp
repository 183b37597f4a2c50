#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "stpn/dataset.hpp"
#include "stpn/eval.hpp"
#include "stpn/localize.hpp"
#include "stpn/train.hpp"

namespace stpn {

struct TrainCsvRow {
  int epoch = 0;
  double loss_class = 0.0;
  double loss_sparsity = 0.0;
  double loss_total = 0.0;
  double mean_lambda = 0.0;

  friend bool operator==(const TrainCsvRow&, const TrainCsvRow&) = default;
};

// CSV: header epoch,loss_class,loss_sparsity,loss_total,mean_lambda.
void write_train_csv(const std::vector<EpochStats>& stats, const std::filesystem::path& path);
std::vector<TrainCsvRow> read_train_csv(const std::filesystem::path& path);

// One polyline per point series. Points land in the SVG verbatim: each
// "x,y" pair inside the points attribute is the raw data value formatted
// exactly as the CSV writers format it, with screen placement done by a
// group transform.
struct PlotSeries {
  std::string label;
  std::vector<std::array<double, 2>> points;
};

void write_line_chart_svg(const std::vector<PlotSeries>& series, const std::string& title,
                          const std::filesystem::path& path);

// Loss curves (class, sparsity, total) against epoch.
void write_loss_curve_svg(const std::vector<TrainCsvRow>& rows,
                          const std::filesystem::path& path);

// mAP against IoU threshold, pulled from the "__mAP__" rows of an eval
// report. Table CSV: header iou,map.
void write_map_table_csv(const std::vector<EvalCsvRow>& rows, const std::filesystem::path& path);
void write_map_curve_svg(const std::vector<EvalCsvRow>& rows, const std::filesystem::path& path);

// Weighted T-CAM traces of one video on the dense grid, both streams.
struct TraceData {
  std::string video_id;
  int rho = 1;
  std::array<Matrix, 2> psi;  // indexed by Stream; T_dense x C each
};

TraceData compute_trace(const ModelParams& rgb_params, const ModelParams& flow_params,
                        const VideoRecord& rec, const DatasetManifest& manifest,
                        std::size_t t_out, int rho);

// CSV: header stream,class,dense_idx,psi, rows in the order the SVG emits
// polyline points, values formatted identically in both files.
void write_trace_csv(const TraceData& trace, const std::filesystem::path& path);
void write_trace_svg(const TraceData& trace, const std::filesystem::path& path);

}  // namespace stpn
