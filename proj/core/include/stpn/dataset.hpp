#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stpn/matrix.hpp"
#include "stpn/rng.hpp"

namespace stpn {

enum class Stream { kRgb = 0, kFlow = 1 };

inline const char* stream_name(Stream s) { return s == Stream::kRgb ? "rgb" : "flow"; }

struct GtInterval {
  int class_index = 0;
  double start_s = 0.0;
  double end_s = 0.0;

  friend bool operator==(const GtInterval&, const GtInterval&) = default;
};

struct VideoRecord {
  std::string id;
  double duration_s = 0.0;
  std::vector<int> labels;  // sorted, unique, each in [0, C)
  std::array<std::string, 2> feature_paths;  // indexed by Stream, as written in the manifest
  std::optional<std::vector<GtInterval>> gt;  // present only for evaluation data

  const std::string& feature_path(Stream s) const {
    return feature_paths[static_cast<std::size_t>(s)];
  }

  friend bool operator==(const VideoRecord&, const VideoRecord&) = default;
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  std::vector<VideoRecord> videos;
  // Directory feature paths are resolved against; not part of manifest identity.
  std::filesystem::path base_dir;

  int num_classes() const { return static_cast<int>(class_names.size()); }

  std::filesystem::path resolve(const std::string& rel) const {
    std::filesystem::path p(rel);
    return p.is_absolute() ? p : base_dir / p;
  }

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.class_names == b.class_names && a.videos == b.videos;
  }
};

// Manifest JSON I/O. Validates every invariant; errors name the offending
// video id and field.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
void validate_manifest(const DatasetManifest& manifest);

// Feature files: "STPNFEAT", u32 T, u32 m (little-endian), then T*m float32
// little-endian row-major. Round-trips are bit-exact.
Matrix read_features(const std::filesystem::path& path);
void write_features(const Matrix& features, const std::filesystem::path& path);

enum class SampleMode { kDeterministic, kPerturbed };

// Picks t_out rows from raw, preserving temporal order. Deterministic mode
// takes row floor(i*T/t_out); perturbed mode draws one row per stratum
// [i*T/t_out, (i+1)*T/t_out).
Matrix sample_segments(const Matrix& raw, std::size_t t_out, SampleMode mode, Rng& rng);

struct SynthConfig {
  int num_videos = 50;
  int num_classes = 4;
  int feature_dim = 20;
  int raw_t = 100;
  int actions_per_video = 2;  // upper bound on planted actions per video
  double noise_scale = 0.5;
};

// Per-class feature-space directions planted by the synthesizer. Rows are
// orthonormal scaled by a fixed amplitude; the flow stream uses the same
// directions with components reversed.
Matrix synth_class_signatures(int num_classes, int feature_dim, std::uint64_t seed, Stream stream);
double synth_signature_amplitude();

// Generates feature files plus manifest.json under out_dir. Background
// segments are zero-mean noise; each planted interval adds the class
// signature to both streams. Byte-identical for identical (config, seed).
DatasetManifest synth_dataset(const SynthConfig& config, std::uint64_t seed,
                              const std::filesystem::path& out_dir);

}  // namespace stpn
