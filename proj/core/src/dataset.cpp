#include "stpn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

#include "binio.hpp"

namespace stpn {

namespace {

constexpr char kFeatureMagic[8] = {'S', 'T', 'P', 'N', 'F', 'E', 'A', 'T'};

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

[[noreturn]] void fail_video(const std::string& id, const std::string& msg) {
  fail("video '" + id + "': " + msg);
}

}  // namespace

void validate_manifest(const DatasetManifest& manifest) {
  const int c = manifest.num_classes();
  if (c < 1) fail("manifest: 'classes' must be non-empty");
  {
    std::set<std::string> seen(manifest.class_names.begin(), manifest.class_names.end());
    if (static_cast<int>(seen.size()) != c) fail("manifest: class names must be unique");
  }
  std::set<std::string> ids;
  for (const VideoRecord& v : manifest.videos) {
    if (v.id.empty()) fail("manifest: video with empty id");
    if (!ids.insert(v.id).second) fail_video(v.id, "duplicate video id");
    if (!(v.duration_s > 0.0) || !std::isfinite(v.duration_s))
      fail_video(v.id, "duration_s must be > 0");
    for (std::size_t i = 1; i < v.labels.size(); ++i) {
      if (v.labels[i] <= v.labels[i - 1]) fail_video(v.id, "labels must be unique");
    }
    for (int label : v.labels) {
      if (label < 0 || label >= c) fail_video(v.id, "label out of range [0, C)");
    }
    for (Stream s : {Stream::kRgb, Stream::kFlow}) {
      if (v.feature_path(s).empty())
        fail_video(v.id, std::string("missing '") + stream_name(s) + "' feature path");
    }
    if (v.gt) {
      std::set<int> gt_classes;
      for (const GtInterval& g : *v.gt) {
        if (g.class_index < 0 || g.class_index >= c)
          fail_video(v.id, "gt class out of range [0, C)");
        if (!(g.start_s >= 0.0 && g.start_s < g.end_s && g.end_s <= v.duration_s))
          fail_video(v.id, "gt interval must satisfy 0 <= start_s < end_s <= duration_s");
        gt_classes.insert(g.class_index);
      }
      std::vector<int> expect(gt_classes.begin(), gt_classes.end());
      if (expect != v.labels)
        fail_video(v.id, "labels must equal the set of classes in gt");
    }
  }
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open manifest: " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail("manifest parse error in " + path.string() + ": " + e.what());
  }

  DatasetManifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  try {
    m.class_names = doc.at("classes").get<std::vector<std::string>>();
    for (const auto& jv : doc.at("videos")) {
      VideoRecord v;
      v.id = jv.at("id").get<std::string>();
      v.duration_s = jv.at("duration_s").get<double>();
      v.labels = jv.at("labels").get<std::vector<int>>();
      std::sort(v.labels.begin(), v.labels.end());
      const auto& jf = jv.at("features");
      v.feature_paths[0] = jf.at("rgb").get<std::string>();
      v.feature_paths[1] = jf.at("flow").get<std::string>();
      if (jv.contains("gt")) {
        std::vector<GtInterval> gt;
        for (const auto& jg : jv.at("gt")) {
          if (!jg.is_array() || jg.size() != 3)
            fail_video(v.id, "gt entries must be [class, start_s, end_s]");
          gt.push_back({jg.at(0).get<int>(), jg.at(1).get<double>(), jg.at(2).get<double>()});
        }
        v.gt = std::move(gt);
      }
      m.videos.push_back(std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    fail("manifest schema error in " + path.string() + ": " + e.what());
  }
  validate_manifest(m);
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  validate_manifest(manifest);
  nlohmann::ordered_json doc;
  doc["classes"] = manifest.class_names;
  doc["videos"] = nlohmann::ordered_json::array();
  for (const VideoRecord& v : manifest.videos) {
    nlohmann::ordered_json jv;
    jv["id"] = v.id;
    jv["duration_s"] = v.duration_s;
    jv["labels"] = v.labels;
    jv["features"] = {{"rgb", v.feature_paths[0]}, {"flow", v.feature_paths[1]}};
    if (v.gt) {
      auto jgt = nlohmann::ordered_json::array();
      for (const GtInterval& g : *v.gt) {
        jgt.push_back({g.class_index, g.start_s, g.end_s});
      }
      jv["gt"] = std::move(jgt);
    }
    doc["videos"].push_back(std::move(jv));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail("cannot open manifest for writing: " + path.string());
  out << doc.dump(2) << "\n";
  if (!out) fail("manifest write failed: " + path.string());
}

Matrix read_features(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path.string());
  if (bytes.size() < 16) fail("truncated feature file (missing header): " + path.string());
  if (std::memcmp(bytes.data(), kFeatureMagic, 8) != 0)
    fail("bad feature file magic: " + path.string());
  const std::uint64_t t = binio::get_u32(bytes.data() + 8);
  const std::uint64_t m = binio::get_u32(bytes.data() + 12);
  if (t < 1 || m < 1) fail("feature file header requires T >= 1 and m >= 1: " + path.string());
  const std::uint64_t expected = 16 + 4 * t * m;
  if (bytes.size() < expected) fail("truncated feature file: " + path.string());
  if (bytes.size() > expected) fail("feature header/payload mismatch: " + path.string());

  Matrix x(static_cast<std::size_t>(t), static_cast<std::size_t>(m));
  const unsigned char* p = bytes.data() + 16;
  for (std::size_t i = 0; i < x.size(); ++i, p += 4) {
    const double v = static_cast<double>(binio::get_f32(p));
    if (!std::isfinite(v)) fail("non-finite feature value: " + path.string());
    x.values()[i] = v;
  }
  return x;
}

void write_features(const Matrix& features, const std::filesystem::path& path) {
  require(features.rows() >= 1 && features.cols() >= 1, "write_features: empty matrix");
  std::vector<unsigned char> bytes;
  bytes.reserve(16 + 4 * features.size());
  bytes.insert(bytes.end(), kFeatureMagic, kFeatureMagic + 8);
  binio::put_u32(bytes, static_cast<std::uint32_t>(features.rows()));
  binio::put_u32(bytes, static_cast<std::uint32_t>(features.cols()));
  for (double v : features.values()) binio::put_f32(bytes, static_cast<float>(v));
  binio::write_file(path.string(), bytes);
}

Matrix sample_segments(const Matrix& raw, std::size_t t_out, SampleMode mode, Rng& rng) {
  require(raw.rows() >= 1, "sample_segments: raw.T must be >= 1");
  require(t_out >= 1, "sample_segments: t_out must be >= 1");
  const std::size_t t_raw = raw.rows();
  Matrix out(t_out, raw.cols());
  for (std::size_t i = 0; i < t_out; ++i) {
    std::size_t idx;
    if (mode == SampleMode::kDeterministic) {
      idx = (i * t_raw) / t_out;
    } else {
      // One draw per stratum [i*T/t_out, (i+1)*T/t_out); the integer clamp
      // keeps fp rounding from escaping the stratum.
      const std::size_t lo = (i * t_raw) / t_out;
      const std::size_t hi = ((i + 1) * t_raw - 1) / t_out;
      const double pos = (static_cast<double>(i) + rng.uniform()) *
                         static_cast<double>(t_raw) / static_cast<double>(t_out);
      idx = std::clamp(static_cast<std::size_t>(pos), lo, hi);
    }
    const double* src = raw.row(idx);
    std::copy(src, src + raw.cols(), out.row(i));
  }
  return out;
}

double synth_signature_amplitude() { return 2.0; }

Matrix synth_class_signatures(int num_classes, int feature_dim, std::uint64_t seed,
                              Stream stream) {
  require(num_classes >= 2, "synth: C must be >= 2");
  require(feature_dim >= num_classes, "synth: m must be >= C");
  Rng rng(Rng::derive_seed(seed, 0x51674a7));
  const std::size_t c = static_cast<std::size_t>(num_classes);
  const std::size_t m = static_cast<std::size_t>(feature_dim);
  Matrix sig(c, m);
  for (double& v : sig.values()) v = rng.normal();
  // Gram-Schmidt rows to unit length, then scale; projecting against
  // already-scaled rows would need the squared norm in the coefficient.
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < m; ++k) dot += sig(i, k) * sig(j, k);
      for (std::size_t k = 0; k < m; ++k) sig(i, k) -= dot * sig(j, k);
    }
    double norm = 0.0;
    for (std::size_t k = 0; k < m; ++k) norm += sig(i, k) * sig(i, k);
    norm = std::sqrt(norm);
    require(norm > 1e-9, "synth: degenerate signature draw");
    for (std::size_t k = 0; k < m; ++k) sig(i, k) /= norm;
  }
  for (double& v : sig.values()) v *= synth_signature_amplitude();
  if (stream == Stream::kFlow) {
    // Flow signatures are the rgb ones with components reversed.
    for (std::size_t i = 0; i < c; ++i) {
      double* r = sig.row(i);
      std::reverse(r, r + m);
    }
  }
  return sig;
}

namespace {

struct PlannedAction {
  int class_index;
  int row_start;  // inclusive
  int row_end;    // exclusive
};

std::vector<PlannedAction> plan_actions(const SynthConfig& cfg, Rng& rng) {
  std::vector<PlannedAction> placed;
  if (cfg.actions_per_video <= 0) return placed;
  const int count =
      1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(cfg.actions_per_video)));
  const int min_len = std::max(3, cfg.raw_t / 10);
  const int max_len = std::max(min_len, cfg.raw_t / 4);
  const int margin = 2;  // keeps planted components separated
  for (int a = 0; a < count; ++a) {
    const int cls = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(cfg.num_classes)));
    for (int attempt = 0; attempt < 64; ++attempt) {
      const int len =
          min_len + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(max_len - min_len + 1)));
      if (len > cfg.raw_t) break;
      const int start =
          static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(cfg.raw_t - len + 1)));
      const int end = start + len;
      bool overlaps = false;
      for (const PlannedAction& p : placed) {
        if (start < p.row_end + margin && p.row_start < end + margin) {
          overlaps = true;
          break;
        }
      }
      if (!overlaps) {
        placed.push_back({cls, start, end});
        break;
      }
    }
  }
  std::sort(placed.begin(), placed.end(),
            [](const PlannedAction& a, const PlannedAction& b) { return a.row_start < b.row_start; });
  return placed;
}

}  // namespace

DatasetManifest synth_dataset(const SynthConfig& cfg, std::uint64_t seed,
                              const std::filesystem::path& out_dir) {
  require(cfg.num_classes >= 2, "synth: C must be >= 2");
  require(cfg.feature_dim >= cfg.num_classes, "synth: m must be >= C");
  require(cfg.num_videos >= 1, "synth: num_videos must be >= 1");
  require(cfg.raw_t >= 1, "synth: raw_t must be >= 1");
  require(cfg.actions_per_video >= 0, "synth: actions_per_video must be >= 0");
  require(cfg.noise_scale >= 0.0, "synth: noise_scale must be >= 0");

  const Matrix sig_rgb = synth_class_signatures(cfg.num_classes, cfg.feature_dim, seed, Stream::kRgb);
  const Matrix sig_flow =
      synth_class_signatures(cfg.num_classes, cfg.feature_dim, seed, Stream::kFlow);

  std::filesystem::create_directories(out_dir / "features");

  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  manifest.class_names.reserve(cfg.num_classes);
  for (int c = 0; c < cfg.num_classes; ++c) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "class%02d", c);
    manifest.class_names.emplace_back(buf);
  }

  Rng rng(Rng::derive_seed(seed, 0xDA7A));
  const std::size_t t = static_cast<std::size_t>(cfg.raw_t);
  const std::size_t m = static_cast<std::size_t>(cfg.feature_dim);
  for (int v = 0; v < cfg.num_videos; ++v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "v%04d", v);
    VideoRecord rec;
    rec.id = buf;
    rec.duration_s = static_cast<double>(cfg.raw_t);

    const std::vector<PlannedAction> actions = plan_actions(cfg, rng);

    Matrix rgb(t, m);
    Matrix flow(t, m);
    for (double& x : rgb.values()) x = cfg.noise_scale * rng.normal();
    for (double& x : flow.values()) x = cfg.noise_scale * rng.normal();
    for (const PlannedAction& a : actions) {
      for (int row = a.row_start; row < a.row_end; ++row) {
        for (std::size_t k = 0; k < m; ++k) {
          rgb(row, k) += sig_rgb(a.class_index, k);
          flow(row, k) += sig_flow(a.class_index, k);
        }
      }
    }

    rec.feature_paths[0] = "features/" + rec.id + "_rgb.feat";
    rec.feature_paths[1] = "features/" + rec.id + "_flow.feat";
    write_features(rgb, out_dir / rec.feature_paths[0]);
    write_features(flow, out_dir / rec.feature_paths[1]);

    const double sec_per_row = rec.duration_s / static_cast<double>(cfg.raw_t);
    std::vector<GtInterval> gt;
    std::set<int> classes;
    for (const PlannedAction& a : actions) {
      gt.push_back({a.class_index, a.row_start * sec_per_row, a.row_end * sec_per_row});
      classes.insert(a.class_index);
    }
    rec.gt = std::move(gt);
    rec.labels.assign(classes.begin(), classes.end());
    manifest.videos.push_back(std::move(rec));
  }

  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace stpn
