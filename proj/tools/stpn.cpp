#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stpn/dataset.hpp"
#include "stpn/eval.hpp"
#include "stpn/fmt.hpp"
#include "stpn/localize.hpp"
#include "stpn/model.hpp"
#include "stpn/report.hpp"
#include "stpn/train.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

// Bad flag values that CLI11 cannot catch itself; exit code 1, not 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_meta(const fs::path& path, const ordered_json& meta) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open metadata file for writing: " + path.string());
  out << meta.dump(2) << "\n";
  if (!out) throw std::runtime_error("metadata write failed: " + path.string());
}

std::vector<double> parse_iou_list(const std::string& arg) {
  std::vector<double> vals;
  std::stringstream ss(arg);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto begin = tok.find_first_not_of(" \t");
    if (begin == std::string::npos) throw UsageError("--iou list has an empty entry");
    const auto end = tok.find_last_not_of(" \t");
    tok = tok.substr(begin, end - begin + 1);
    double v = 0.0;
    std::size_t pos = 0;
    try {
      v = std::stod(tok, &pos);
    } catch (const std::exception&) {
      throw UsageError("--iou entry '" + tok + "' is not a number");
    }
    if (pos != tok.size()) throw UsageError("--iou entry '" + tok + "' is not a number");
    if (!(v > 0.0 && v <= 1.0)) throw UsageError("--iou values must be in (0, 1]");
    vals.push_back(v);
  }
  if (vals.empty()) throw UsageError("--iou list is empty");
  return vals;
}

struct SynthArgs {
  std::string out;
  stpn::SynthConfig cfg;
  std::uint64_t seed = 0;
};

struct TrainArgs {
  std::string manifest;
  std::string stream = "rgb";
  std::string out;
  stpn::Hyperparams hyper;
};

struct LocalizeArgs {
  std::string manifest;
  std::string rgb;
  std::string flow;
  std::string out;
  stpn::LocalizeConfig cfg;
};

struct EvalArgs {
  std::string manifest;
  std::string detections;
  std::string iou = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
  std::string out;
  int threads = 1;
};

struct ReportArgs {
  std::string run;
  std::string manifest;
  std::string rgb;
  std::string flow;
  std::string video;
  std::size_t t_out = 400;
  int interp = 4;
};

int run_synth(const SynthArgs& a) {
  const fs::path out_dir(a.out);
  const stpn::DatasetManifest manifest = stpn::synth_dataset(a.cfg, a.seed, out_dir);
  ordered_json meta;
  meta["subcommand"] = "synth";
  meta["out"] = a.out;
  meta["videos"] = a.cfg.num_videos;
  meta["classes"] = a.cfg.num_classes;
  meta["dim"] = a.cfg.feature_dim;
  meta["raw_t"] = a.cfg.raw_t;
  meta["actions_per_video"] = a.cfg.actions_per_video;
  meta["noise"] = a.cfg.noise_scale;
  meta["seed"] = a.seed;
  write_meta(out_dir / "synth.meta.json", meta);
  std::cerr << "synth: wrote " << manifest.videos.size() << " videos to " << out_dir.string()
            << "\n";
  return 0;
}

int run_train(const TrainArgs& a) {
  const stpn::DatasetManifest manifest = stpn::load_manifest(a.manifest);
  const stpn::Stream stream = a.stream == "rgb" ? stpn::Stream::kRgb : stpn::Stream::kFlow;

  std::vector<stpn::EpochStats> history;
  std::cout << "epoch,loss_class,loss_sparsity,loss_total,mean_lambda\n";
  const stpn::ModelParams params =
      stpn::train(manifest, stream, a.hyper, [&](const stpn::EpochStats& s) {
        history.push_back(s);
        std::cout << s.epoch << ',' << stpn::fmt_double(s.loss_class) << ','
                  << stpn::fmt_double(s.loss_sparsity) << ',' << stpn::fmt_double(s.loss_total)
                  << ',' << stpn::fmt_double(s.mean_lambda) << "\n";
      });
  std::cout.flush();

  stpn::save_checkpoint(params, a.out);
  stpn::write_train_csv(history, a.out + ".train.csv");

  ordered_json meta;
  meta["subcommand"] = "train";
  meta["manifest"] = a.manifest;
  meta["stream"] = a.stream;
  meta["out"] = a.out;
  meta["beta"] = a.hyper.beta;
  meta["lr"] = a.hyper.lr;
  meta["epochs"] = a.hyper.epochs;
  meta["t_out"] = a.hyper.t_out;
  meta["hidden"] = a.hyper.hidden;
  meta["adam"] = {{"beta1", a.hyper.adam.beta1},
                  {"beta2", a.hyper.adam.beta2},
                  {"eps", a.hyper.adam.eps}};
  meta["seed"] = a.hyper.seed;
  write_meta(a.out + ".meta.json", meta);
  std::cerr << "train: wrote checkpoint " << a.out << "\n";
  return 0;
}

int run_localize(const LocalizeArgs& a) {
  const stpn::DatasetManifest manifest = stpn::load_manifest(a.manifest);
  const stpn::ModelParams rgb = stpn::load_checkpoint(a.rgb);
  const stpn::ModelParams flow = stpn::load_checkpoint(a.flow);
  if (static_cast<int>(rgb.num_classes()) != manifest.num_classes())
    throw std::runtime_error("checkpoint " + a.rgb + " was trained for " +
                             std::to_string(rgb.num_classes()) + " classes but the manifest has " +
                             std::to_string(manifest.num_classes()));

  const std::vector<stpn::Detection> dets = stpn::localize_dataset(rgb, flow, manifest, a.cfg);
  stpn::write_detections_csv(dets, a.out);

  ordered_json meta;
  meta["subcommand"] = "localize";
  meta["manifest"] = a.manifest;
  meta["rgb"] = a.rgb;
  meta["flow"] = a.flow;
  meta["out"] = a.out;
  meta["alpha"] = a.cfg.alpha;
  meta["class_reject"] = a.cfg.class_reject_p;
  meta["tau"] = a.cfg.tcam_threshold;
  meta["nms_iou"] = a.cfg.nms_iou;
  meta["interp"] = a.cfg.interp;
  meta["t_out"] = a.cfg.t_out;
  meta["threads"] = a.cfg.threads;
  write_meta(a.out + ".meta.json", meta);
  std::cerr << "localize: wrote " << dets.size() << " detections to " << a.out << "\n";
  return 0;
}

int run_eval(const EvalArgs& a) {
  const std::vector<double> thresholds = parse_iou_list(a.iou);
  const stpn::DatasetManifest manifest = stpn::load_manifest(a.manifest);
  const std::vector<stpn::Detection> dets = stpn::read_detections_csv(a.detections);
  const stpn::EvalReport report = stpn::evaluate(dets, manifest, thresholds, a.threads);
  stpn::write_eval_csv(report, manifest, a.out);

  ordered_json meta;
  meta["subcommand"] = "eval";
  meta["manifest"] = a.manifest;
  meta["detections"] = a.detections;
  meta["iou"] = a.iou;
  meta["out"] = a.out;
  meta["threads"] = a.threads;
  write_meta(a.out + ".meta.json", meta);
  std::cerr << "eval: wrote report to " << a.out << "\n";
  return 0;
}

int run_report(const ReportArgs& a) {
  const fs::path run_dir(a.run);
  if (!fs::is_directory(run_dir))
    throw std::runtime_error("run directory does not exist: " + run_dir.string());

  const int trace_flags = static_cast<int>(!a.manifest.empty()) +
                          static_cast<int>(!a.rgb.empty()) + static_cast<int>(!a.flow.empty()) +
                          static_cast<int>(!a.video.empty());
  if (trace_flags != 0 && trace_flags != 4)
    throw UsageError("--manifest, --rgb, --flow and --video must be given together");

  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());

  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };

  std::size_t produced = 0;
  for (const std::string& name : names) {
    if (ends_with(name, ".train.csv")) {
      const auto rows = stpn::read_train_csv(run_dir / name);
      const std::string stem = name.substr(0, name.size() - std::string(".train.csv").size());
      stpn::write_loss_curve_svg(rows, run_dir / (stem + ".loss.svg"));
      std::cerr << "report: wrote " << (run_dir / (stem + ".loss.svg")).string() << "\n";
      ++produced;
    } else if (ends_with(name, "report.csv")) {
      const auto rows = stpn::read_eval_csv(run_dir / name);
      const std::string stem = name.substr(0, name.size() - std::string(".csv").size());
      stpn::write_map_table_csv(rows, run_dir / (stem + ".map.csv"));
      stpn::write_map_curve_svg(rows, run_dir / (stem + ".map.svg"));
      std::cerr << "report: wrote " << (run_dir / (stem + ".map.svg")).string() << "\n";
      ++produced;
    }
  }

  if (trace_flags == 4) {
    const stpn::DatasetManifest manifest = stpn::load_manifest(a.manifest);
    const stpn::ModelParams rgb = stpn::load_checkpoint(a.rgb);
    const stpn::ModelParams flow = stpn::load_checkpoint(a.flow);
    const auto it = std::find_if(manifest.videos.begin(), manifest.videos.end(),
                                 [&](const stpn::VideoRecord& r) { return r.id == a.video; });
    if (it == manifest.videos.end())
      throw std::runtime_error("video '" + a.video + "' is not in the manifest");
    const stpn::TraceData trace =
        stpn::compute_trace(rgb, flow, *it, manifest, a.t_out, a.interp);
    stpn::write_trace_csv(trace, run_dir / (a.video + ".trace.csv"));
    stpn::write_trace_svg(trace, run_dir / (a.video + ".trace.svg"));
    std::cerr << "report: wrote " << (run_dir / (a.video + ".trace.svg")).string() << "\n";
    ++produced;
  }

  if (produced == 0)
    throw std::runtime_error("run directory has no training csv or eval report: " +
                             run_dir.string());

  ordered_json meta;
  meta["subcommand"] = "report";
  meta["run"] = a.run;
  if (trace_flags == 4) {
    meta["trace"] = {{"manifest", a.manifest}, {"rgb", a.rgb},     {"flow", a.flow},
                     {"video", a.video},       {"t_out", a.t_out}, {"interp", a.interp}};
  }
  write_meta(run_dir / "report.meta.json", meta);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse temporal pooling tools: synthesize data, train attention "
               "classifiers, localize actions, evaluate mAP@IoU, render figures"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic feature dataset");
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--videos", synth_args.cfg.num_videos, "number of videos")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--classes", synth_args.cfg.num_classes, "number of classes")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--dim", synth_args.cfg.feature_dim, "feature dimension")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--raw-t", synth_args.cfg.raw_t, "raw segments per video")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth->add_option("--actions-per-video", synth_args.cfg.actions_per_video,
                    "max planted actions per video")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  synth->add_option("--noise", synth_args.cfg.noise_scale, "background noise scale")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  synth->add_option("--seed", synth_args.seed, "rng seed")
      ->envname("STPN_SEED")
      ->capture_default_str();

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train one stream's model");
  train->add_option("--manifest", train_args.manifest, "dataset manifest")->required();
  train->add_option("--stream", train_args.stream, "feature stream")
      ->required()
      ->check(CLI::IsMember({"rgb", "flow"}));
  train->add_option("--out", train_args.out, "checkpoint path")->required();
  train->add_option("--beta", train_args.hyper.beta, "sparsity loss weight")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  train->add_option("--lr", train_args.hyper.lr, "adam learning rate")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train->add_option("--epochs", train_args.hyper.epochs, "training epochs")
      ->capture_default_str();
  train->add_option("--t-out", train_args.hyper.t_out, "segments sampled per video")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train->add_option("--hidden", train_args.hyper.hidden, "attention hidden width")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  train->add_option("--seed", train_args.hyper.seed, "rng seed")
      ->envname("STPN_SEED")
      ->capture_default_str();

  LocalizeArgs loc_args;
  CLI::App* localize = app.add_subcommand("localize", "detect action intervals");
  localize->add_option("--manifest", loc_args.manifest, "dataset manifest")->required();
  localize->add_option("--rgb", loc_args.rgb, "rgb checkpoint")->required();
  localize->add_option("--flow", loc_args.flow, "flow checkpoint")->required();
  localize->add_option("--out", loc_args.out, "detections csv path")->required();
  localize->add_option("--alpha", loc_args.cfg.alpha, "rgb weight in fusion")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  localize->add_option("--tau", loc_args.cfg.tcam_threshold, "weighted t-cam threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  localize->add_option("--nms-iou", loc_args.cfg.nms_iou, "nms iou threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  localize->add_option("--interp", loc_args.cfg.interp, "interpolation factor")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  localize->add_option("--class-reject", loc_args.cfg.class_reject_p,
                       "minimum fused class probability")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  localize->add_option("--t-out", loc_args.cfg.t_out, "segments sampled per video")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  localize->add_option("--threads", loc_args.cfg.threads, "worker threads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "score detections against ground truth");
  eval->add_option("--manifest", eval_args.manifest, "dataset manifest with gt")->required();
  eval->add_option("--detections", eval_args.detections, "detections csv")->required();
  eval->add_option("--iou", eval_args.iou, "comma-separated iou thresholds")
      ->capture_default_str();
  eval->add_option("--out", eval_args.out, "report csv path")->required();
  eval->add_option("--threads", eval_args.threads, "worker threads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  ReportArgs report_args;
  CLI::App* report = app.add_subcommand("report", "render csv/svg figures for a run directory");
  report->add_option("--run", report_args.run, "directory holding run outputs")->required();
  report->add_option("--manifest", report_args.manifest, "dataset manifest (trace)");
  report->add_option("--rgb", report_args.rgb, "rgb checkpoint (trace)");
  report->add_option("--flow", report_args.flow, "flow checkpoint (trace)");
  report->add_option("--video", report_args.video, "video id to trace");
  report->add_option("--t-out", report_args.t_out, "segments sampled per video (trace)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  report->add_option("--interp", report_args.interp, "interpolation factor (trace)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  if (argc <= 1) {
    std::cerr << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\nrun with --help for usage\n";
    return 1;
  }

  try {
    if (synth->parsed()) return run_synth(synth_args);
    if (train->parsed()) return run_train(train_args);
    if (localize->parsed()) return run_localize(loc_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (report->parsed()) return run_report(report_args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\nrun with --help for usage\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
