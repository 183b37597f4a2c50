#include "stpn/eval.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "stpn/fmt.hpp"

namespace stpn {

double iou(double a_start, double a_end, double b_start, double b_end) {
  require(a_start < a_end, "iou: malformed first interval");
  require(b_start < b_end, "iou: malformed second interval");
  const double inter = std::min(a_end, b_end) - std::max(a_start, b_start);
  if (inter <= 0.0) return 0.0;
  const double uni = (a_end - a_start) + (b_end - b_start) - inter;
  return inter / uni;
}

double average_precision(std::vector<Detection> dets, const std::vector<GtSpan>& gts,
                         double iou_threshold) {
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.video_id != b.video_id) return a.video_id < b.video_id;
    if (a.start_s != b.start_s) return a.start_s < b.start_s;
    return a.end_s < b.end_s;
  });

  std::map<std::string, std::vector<std::size_t>> gt_by_video;
  for (std::size_t i = 0; i < gts.size(); ++i) gt_by_video[gts[i].video_id].push_back(i);
  std::vector<bool> matched(gts.size(), false);

  std::size_t tp = 0;
  double ap_sum = 0.0;
  for (std::size_t k = 0; k < dets.size(); ++k) {
    const Detection& d = dets[k];
    double best_iou = -1.0;
    std::size_t best_gt = gts.size();
    const auto it = gt_by_video.find(d.video_id);
    if (it != gt_by_video.end()) {
      for (std::size_t g : it->second) {
        if (matched[g]) continue;
        const double overlap = iou(d.start_s, d.end_s, gts[g].start_s, gts[g].end_s);
        if (overlap > best_iou) {
          best_iou = overlap;
          best_gt = g;
        }
      }
    }
    if (best_gt < gts.size() && best_iou >= iou_threshold) {
      matched[best_gt] = true;
      ++tp;
      ap_sum += static_cast<double>(tp) / static_cast<double>(k + 1);
    }
  }
  return ap_sum / static_cast<double>(std::max<std::size_t>(gts.size(), 1));
}

EvalReport evaluate(const std::vector<Detection>& dets, const DatasetManifest& manifest,
                    const std::vector<double>& iou_thresholds, int threads) {
  require(!iou_thresholds.empty(), "evaluate: need at least one iou threshold");
  for (double t : iou_thresholds)
    require(t > 0.0 && t <= 1.0, "evaluate: iou thresholds must be in (0, 1]");

  std::set<std::string> known_videos;
  for (const VideoRecord& rec : manifest.videos) {
    if (!rec.gt.has_value())
      throw std::runtime_error("evaluate: video '" + rec.id + "' carries no gt intervals");
    known_videos.insert(rec.id);
  }
  const int c = manifest.num_classes();
  for (const Detection& d : dets) {
    if (known_videos.find(d.video_id) == known_videos.end())
      throw std::runtime_error("evaluate: detection references unknown video '" + d.video_id +
                               "'");
    if (d.class_index < 0 || d.class_index >= c)
      throw std::runtime_error("evaluate: detection in video '" + d.video_id +
                               "' references unknown class " + std::to_string(d.class_index));
  }

  std::map<int, std::vector<GtSpan>> gt_by_class;
  for (const VideoRecord& rec : manifest.videos) {
    for (const GtInterval& g : *rec.gt) {
      gt_by_class[g.class_index].push_back({rec.id, g.start_s, g.end_s});
    }
  }
  std::map<int, std::vector<Detection>> det_by_class;
  for (const Detection& d : dets) det_by_class[d.class_index].push_back(d);

  std::vector<int> classes;
  for (const auto& [cls, spans] : gt_by_class) classes.push_back(cls);

  EvalReport report;
  report.thresholds.resize(iou_thresholds.size());
  for (std::size_t ti = 0; ti < iou_thresholds.size(); ++ti) {
    ThresholdResult& tr = report.thresholds[ti];
    tr.iou_threshold = iou_thresholds[ti];
    tr.per_class.resize(classes.size());
    for (std::size_t ci = 0; ci < classes.size(); ++ci) {
      const int cls = classes[ci];
      tr.per_class[ci].class_index = cls;
      tr.per_class[ci].num_gt = gt_by_class[cls].size();
      const auto it = det_by_class.find(cls);
      tr.per_class[ci].num_det = it == det_by_class.end() ? 0 : it->second.size();
    }
  }

  // Flat (threshold, class) task list; slot assignment makes the result
  // identical at any thread count.
  struct Task {
    std::size_t ti;
    std::size_t ci;
  };
  std::vector<Task> tasks;
  for (std::size_t ti = 0; ti < iou_thresholds.size(); ++ti)
    for (std::size_t ci = 0; ci < classes.size(); ++ci) tasks.push_back({ti, ci});

  static const std::vector<Detection> kNoDets;
  auto run_task = [&](const Task& task) {
    const int cls = classes[task.ci];
    const auto it = det_by_class.find(cls);
    const std::vector<Detection>& class_dets = it == det_by_class.end() ? kNoDets : it->second;
    report.thresholds[task.ti].per_class[task.ci].ap =
        average_precision(class_dets, gt_by_class[cls], iou_thresholds[task.ti]);
  };

  const int workers = std::max(1, threads);
  if (workers == 1 || tasks.size() <= 1) {
    for (const Task& task : tasks) run_task(task);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= tasks.size()) return;
          run_task(tasks[i]);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  for (ThresholdResult& tr : report.thresholds) {
    double acc = 0.0;
    for (const ClassResult& cr : tr.per_class) acc += cr.ap;
    tr.map = tr.per_class.empty() ? 0.0 : acc / static_cast<double>(tr.per_class.size());
  }
  return report;
}

void write_eval_csv(const EvalReport& report, const DatasetManifest& manifest,
                    const std::filesystem::path& path) {
  for (const std::string& name : manifest.class_names)
    require(name != "__mAP__", "write_eval_csv: class name collides with the summary row");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open report file for writing: " + path.string());
  out << "iou,class,ap\n";
  for (const ThresholdResult& tr : report.thresholds) {
    for (const ClassResult& cr : tr.per_class) {
      require(cr.class_index >= 0 && cr.class_index < manifest.num_classes(),
              "write_eval_csv: class index outside manifest");
      out << fmt_double(tr.iou_threshold) << ','
          << manifest.class_names[static_cast<std::size_t>(cr.class_index)] << ','
          << fmt_double(cr.ap) << '\n';
    }
    out << fmt_double(tr.iou_threshold) << ",__mAP__," << fmt_double(tr.map) << '\n';
  }
  if (!out) throw std::runtime_error("report write failed: " + path.string());
}

std::vector<EvalCsvRow> read_eval_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report file: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "iou,class,ap")
    throw std::runtime_error("bad report header: " + path.string());
  std::vector<EvalCsvRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    EvalCsvRow row;
    try {
      std::getline(ss, field, ',');
      row.iou = std::stod(field);
      std::getline(ss, row.class_name, ',');
      std::getline(ss, field, ',');
      row.ap = std::stod(field);
    } catch (const std::exception&) {
      throw std::runtime_error("bad report row " + std::to_string(line_no) + " in " +
                               path.string());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace stpn
