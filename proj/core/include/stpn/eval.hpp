#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stpn/dataset.hpp"
#include "stpn/localize.hpp"

namespace stpn {

// Intersection over union of [a_start, a_end] and [b_start, b_end] in
// seconds. Both intervals must satisfy start < end.
double iou(double a_start, double a_end, double b_start, double b_end);

// Ground-truth interval of a single class, tagged with its video.
struct GtSpan {
  std::string video_id;
  double start_s = 0.0;
  double end_s = 0.0;

  friend bool operator==(const GtSpan&, const GtSpan&) = default;
};

// All-point average precision for one class. Detections are ranked by
// descending score (ties by video id, start_s, end_s); each one greedily
// claims the unmatched same-video gt with highest IoU and is a true
// positive iff that IoU reaches iou_threshold. AP sums precision at the
// true-positive ranks and divides by max(#gt, 1).
double average_precision(std::vector<Detection> dets, const std::vector<GtSpan>& gts,
                         double iou_threshold);

struct ClassResult {
  int class_index = 0;
  double ap = 0.0;
  std::size_t num_gt = 0;
  std::size_t num_det = 0;

  friend bool operator==(const ClassResult&, const ClassResult&) = default;
};

struct ThresholdResult {
  double iou_threshold = 0.0;
  // Ascending class index; exactly the classes with at least one gt interval.
  std::vector<ClassResult> per_class;
  double map = 0.0;  // arithmetic mean of per_class aps

  friend bool operator==(const ThresholdResult&, const ThresholdResult&) = default;
};

struct EvalReport {
  std::vector<ThresholdResult> thresholds;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Scores dets against the manifest's gt intervals at every threshold. Every
// manifest video must carry gt; detections naming an unknown video or class
// are errors. Per-(threshold, class) AP tasks are pure, so any thread count
// yields the same report.
EvalReport evaluate(const std::vector<Detection>& dets, const DatasetManifest& manifest,
                    const std::vector<double>& iou_thresholds, int threads = 1);

// CSV: header iou,class,ap; per threshold one row per class (by name,
// ascending index) then a summary row with class "__mAP__".
void write_eval_csv(const EvalReport& report, const DatasetManifest& manifest,
                    const std::filesystem::path& path);

struct EvalCsvRow {
  double iou = 0.0;
  std::string class_name;
  double ap = 0.0;

  friend bool operator==(const EvalCsvRow&, const EvalCsvRow&) = default;
};

std::vector<EvalCsvRow> read_eval_csv(const std::filesystem::path& path);

}  // namespace stpn
