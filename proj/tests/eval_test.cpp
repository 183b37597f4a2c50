#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <vector>

#include "doctest.h"
#include "stpn/eval.hpp"
#include "test_util.hpp"

using namespace stpn;
using stpn_test::TempDir;

namespace {

Detection det(const std::string& video, double start, double end, double score, int cls = 0) {
  Detection d;
  d.video_id = video;
  d.class_index = cls;
  d.start_s = start;
  d.end_s = end;
  d.score = score;
  return d;
}

GtSpan gt(const std::string& video, double start, double end) { return {video, start, end}; }

// AP recomputed from first principles: walk the full ranking, mark true
// positives by greedy best-IoU matching, and integrate precision at the
// recall steps. Same definition, different code shape.
double ap_reference(std::vector<Detection> dets, std::vector<GtSpan> gts, double thresh) {
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.video_id != b.video_id) return a.video_id < b.video_id;
    if (a.start_s != b.start_s) return a.start_s < b.start_s;
    return a.end_s < b.end_s;
  });
  std::vector<bool> taken(gts.size(), false);
  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < dets.size(); ++k) {
    double best = -1.0;
    std::size_t best_i = gts.size();
    for (std::size_t i = 0; i < gts.size(); ++i) {
      if (taken[i] || gts[i].video_id != dets[k].video_id) continue;
      const double v = iou(dets[k].start_s, dets[k].end_s, gts[i].start_s, gts[i].end_s);
      if (v > best) {
        best = v;
        best_i = i;
      }
    }
    if (best_i < gts.size() && best >= thresh) {
      taken[best_i] = true;
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(k + 1);
    }
  }
  return ap / std::max<std::size_t>(gts.size(), 1);
}

DatasetManifest eval_manifest() {
  return load_manifest(std::filesystem::path(STPN_FIXTURE_DIR) / "eval" / "manifest.json");
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("interval iou") {
  CHECK(iou(0, 10, 0, 10) == 1.0);
  CHECK(iou(0, 10, 20, 30) == 0.0);
  CHECK(iou(0, 10, 10, 20) == 0.0);  // touching is not overlapping
  CHECK(iou(0, 10, 5, 15) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(iou(0, 10, 2, 8) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(iou(5, 15, 0, 10) == iou(0, 10, 5, 15));
  CHECK_THROWS(iou(10, 10, 0, 5));
  CHECK_THROWS(iou(0, 5, 7, 6));
}

TEST_CASE("iou of one means identical intervals") {
  Rng rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    const double a0 = rng.uniform(0, 50);
    const double a1 = a0 + rng.uniform(0.1, 20);
    const double b0 = rng.uniform(0, 50);
    const double b1 = b0 + rng.uniform(0.1, 20);
    const double v = iou(a0, a1, b0, b1);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    if (a0 == b0 && a1 == b1) {
      CHECK(v == 1.0);
    } else {
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("average precision on one ground truth") {
  const std::vector<GtSpan> gts = {gt("v", 10, 20)};
  SUBCASE("single perfect detection") {
    CHECK(average_precision({det("v", 10, 20, 0.9)}, gts, 0.5) == doctest::Approx(1.0));
  }
  SUBCASE("false positive above the true positive halves precision") {
    const std::vector<Detection> dets = {det("v", 50, 60, 0.9), det("v", 10, 20, 0.8)};
    CHECK(average_precision(dets, gts, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("false positive below the true positive is free") {
    const std::vector<Detection> dets = {det("v", 10, 20, 0.9), det("v", 50, 60, 0.8)};
    CHECK(average_precision(dets, gts, 0.5) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("a second detection cannot reuse the matched gt") {
    const std::vector<Detection> dets = {det("v", 10, 20, 0.9), det("v", 11, 21, 0.8)};
    CHECK(average_precision(dets, gts, 0.5) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("no detections mean zero") {
    CHECK(average_precision({}, gts, 0.5) == 0.0);
  }
  SUBCASE("no ground truth is zero without dividing by zero") {
    CHECK(average_precision({det("v", 0, 1, 0.5)}, {}, 0.5) == 0.0);
  }
}

TEST_CASE("average precision never pairs across videos") {
  const std::vector<GtSpan> gts = {gt("vb", 10, 20)};
  CHECK(average_precision({det("va", 10, 20, 0.9)}, gts, 0.1) == 0.0);
}

TEST_CASE("average precision matches the reference on random instances") {
  Rng rng(7);
  const char* videos[] = {"va", "vb"};
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<GtSpan> gts;
    const std::size_t ng = rng.uniform_index(6);
    for (std::size_t i = 0; i < ng; ++i) {
      const double s = std::floor(rng.uniform(0, 20));
      gts.push_back(gt(videos[rng.uniform_index(2)], s, s + 1.0 + std::floor(rng.uniform(0, 8))));
    }
    std::vector<Detection> dets;
    const std::size_t nd = rng.uniform_index(9);
    for (std::size_t i = 0; i < nd; ++i) {
      const double s = std::floor(rng.uniform(0, 20));
      // Quantized scores make rank ties routine rather than exceptional.
      dets.push_back(det(videos[rng.uniform_index(2)], s, s + 1.0 + std::floor(rng.uniform(0, 8)),
                         std::floor(rng.uniform(0, 5)) / 5.0));
    }
    const double thresh = rng.uniform(0.05, 0.95);
    const double got = average_precision(dets, gts, thresh);
    const double want = ap_reference(dets, gts, thresh);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("average precision only depends on the score order") {
  Rng rng(11);
  std::vector<GtSpan> gts = {gt("v", 0, 10), gt("v", 30, 45)};
  std::vector<Detection> dets = {det("v", 0, 9, 0.2), det("v", 31, 44, 0.8),
                                 det("v", 50, 60, 0.5)};
  const double base = average_precision(dets, gts, 0.5);
  for (Detection& d : dets) d.score = d.score * 3.0 + 1.0;  // monotone remap
  CHECK(average_precision(dets, gts, 0.5) == doctest::Approx(base).epsilon(1e-15));
}

TEST_CASE("evaluating the ground truth itself is perfect") {
  const DatasetManifest manifest = eval_manifest();
  std::vector<Detection> dets;
  double score = 0.99;
  for (const VideoRecord& rec : manifest.videos) {
    for (const GtInterval& g : *rec.gt) {
      dets.push_back(det(rec.id, g.start_s, g.end_s, score, g.class_index));
      score -= 0.01;
    }
  }
  const EvalReport report = evaluate(dets, manifest, {0.1, 0.5, 0.9});
  REQUIRE(report.thresholds.size() == 3);
  for (const ThresholdResult& tr : report.thresholds) {
    CHECK(tr.map == doctest::Approx(1.0).epsilon(1e-12));
    REQUIRE(tr.per_class.size() == 2);
    CHECK(tr.per_class[0].class_index == 0);
    CHECK(tr.per_class[0].num_gt == 3);
    CHECK(tr.per_class[1].num_gt == 2);
  }
}

TEST_CASE("no detections at all scores zero") {
  const DatasetManifest manifest = eval_manifest();
  const EvalReport report = evaluate({}, manifest, {0.5});
  CHECK(report.thresholds[0].map == 0.0);
  for (const ClassResult& cr : report.thresholds[0].per_class) {
    CHECK(cr.ap == 0.0);
    CHECK(cr.num_det == 0);
  }
}

TEST_CASE("the worked fixture lands on the hand-computed values") {
  const DatasetManifest manifest = eval_manifest();
  const std::vector<Detection> dets =
      read_detections_csv(std::filesystem::path(STPN_FIXTURE_DIR) / "eval" / "dets.csv");
  REQUIRE(dets.size() == 7);
  const EvalReport report = evaluate(dets, manifest, {0.5, 0.9});
  REQUIRE(report.thresholds.size() == 2);

  const ThresholdResult& at50 = report.thresholds[0];
  CHECK(at50.iou_threshold == 0.5);
  CHECK(std::abs(at50.per_class[0].ap - 11.0 / 12.0) < 1e-12);
  CHECK(std::abs(at50.per_class[1].ap - 1.0) < 1e-12);
  CHECK(std::abs(at50.map - 23.0 / 24.0) < 1e-12);
  CHECK(at50.per_class[0].num_det == 5);
  CHECK(at50.per_class[1].num_det == 2);

  const ThresholdResult& at90 = report.thresholds[1];
  CHECK(std::abs(at90.per_class[0].ap - 1.0 / 3.0) < 1e-12);
  CHECK(std::abs(at90.per_class[1].ap - 0.5) < 1e-12);
  CHECK(std::abs(at90.map - 5.0 / 12.0) < 1e-12);
}

TEST_CASE("map never rises as the threshold tightens") {
  const DatasetManifest manifest = eval_manifest();
  const std::vector<Detection> dets =
      read_detections_csv(std::filesystem::path(STPN_FIXTURE_DIR) / "eval" / "dets.csv");
  const std::vector<double> thresholds = {0.1, 0.3, 0.5, 0.7, 0.9};
  const EvalReport report = evaluate(dets, manifest, thresholds);
  for (std::size_t i = 1; i < report.thresholds.size(); ++i)
    CHECK(report.thresholds[i].map <= report.thresholds[i - 1].map + 1e-15);
}

TEST_CASE("evaluate is identical at one and four threads") {
  const DatasetManifest manifest = eval_manifest();
  const std::vector<Detection> dets =
      read_detections_csv(std::filesystem::path(STPN_FIXTURE_DIR) / "eval" / "dets.csv");
  const std::vector<double> thresholds = {0.1, 0.3, 0.5, 0.7, 0.9};
  const EvalReport a = evaluate(dets, manifest, thresholds, 1);
  const EvalReport b = evaluate(dets, manifest, thresholds, 4);
  CHECK(a == b);
}

TEST_CASE("evaluate rejects bad inputs by name") {
  const DatasetManifest manifest = eval_manifest();
  SUBCASE("unknown video") {
    CHECK_THROWS_WITH_AS(evaluate({det("zz", 0, 1, 0.5)}, manifest, {0.5}),
                         doctest::Contains("zz"), std::exception);
  }
  SUBCASE("unknown class") {
    CHECK_THROWS(evaluate({det("va", 0, 1, 0.5, 7)}, manifest, {0.5}));
  }
  SUBCASE("threshold outside (0,1]") {
    CHECK_THROWS(evaluate({}, manifest, {0.0}));
    CHECK_THROWS(evaluate({}, manifest, {1.5}));
    CHECK_THROWS(evaluate({}, manifest, {}));
  }
  SUBCASE("video without gt") {
    DatasetManifest bad = manifest;
    bad.videos[1].gt.reset();
    bad.videos[1].labels.clear();
    CHECK_THROWS_WITH_AS(evaluate({}, bad, {0.5}), doctest::Contains("vb"), std::exception);
  }
}

TEST_CASE("eval csv round trips with summary rows") {
  TempDir dir;
  const DatasetManifest manifest = eval_manifest();
  const std::vector<Detection> dets =
      read_detections_csv(std::filesystem::path(STPN_FIXTURE_DIR) / "eval" / "dets.csv");
  const EvalReport report = evaluate(dets, manifest, {0.5, 0.9});
  write_eval_csv(report, manifest, dir / "report.csv");

  const std::vector<EvalCsvRow> rows = read_eval_csv(dir / "report.csv");
  REQUIRE(rows.size() == 6);  // (2 classes + summary) x 2 thresholds
  CHECK(rows[0].iou == 0.5);
  CHECK(rows[0].class_name == "throw");
  CHECK(rows[0].ap == doctest::Approx(11.0 / 12.0).epsilon(1e-12));
  CHECK(rows[1].class_name == "swim");
  CHECK(rows[2].class_name == "__mAP__");
  CHECK(rows[2].ap == doctest::Approx(23.0 / 24.0).epsilon(1e-12));
  CHECK(rows[5].class_name == "__mAP__");
  CHECK(rows[5].iou == 0.9);
  CHECK(rows[5].ap == doctest::Approx(5.0 / 12.0).epsilon(1e-12));

  const std::string text = stpn_test::slurp(dir / "report.csv");
  CHECK(text.rfind("iou,class,ap\n", 0) == 0);
}

TEST_CASE("eval csv refuses a class named like the summary row") {
  TempDir dir;
  DatasetManifest manifest = eval_manifest();
  manifest.class_names[1] = "__mAP__";
  EvalReport report;
  report.thresholds.push_back({0.5, {{0, 1.0, 1, 1}, {1, 1.0, 1, 1}}, 1.0});
  CHECK_THROWS(write_eval_csv(report, manifest, dir / "report.csv"));
}

TEST_CASE("eval csv reader rejects malformed files") {
  TempDir dir;
  SUBCASE("wrong header") {
    std::ofstream(dir / "bad.csv") << "iou,ap\n0.5,1.0\n";
    CHECK_THROWS(read_eval_csv(dir / "bad.csv"));
  }
  SUBCASE("bad number names the row") {
    std::ofstream(dir / "bad.csv") << "iou,class,ap\n0.5,throw,one\n";
    CHECK_THROWS_WITH_AS(read_eval_csv(dir / "bad.csv"), doctest::Contains("row"),
                         std::exception);
  }
}

}  // TEST_SUITE
