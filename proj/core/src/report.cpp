#include "stpn/report.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "stpn/fmt.hpp"

namespace stpn {

void write_train_csv(const std::vector<EpochStats>& stats, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open training csv for writing: " + path.string());
  out << "epoch,loss_class,loss_sparsity,loss_total,mean_lambda\n";
  for (const EpochStats& s : stats) {
    out << s.epoch << ',' << fmt_double(s.loss_class) << ',' << fmt_double(s.loss_sparsity)
        << ',' << fmt_double(s.loss_total) << ',' << fmt_double(s.mean_lambda) << '\n';
  }
  if (!out) throw std::runtime_error("training csv write failed: " + path.string());
}

std::vector<TrainCsvRow> read_train_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open training csv: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "epoch,loss_class,loss_sparsity,loss_total,mean_lambda")
    throw std::runtime_error("bad training csv header: " + path.string());
  std::vector<TrainCsvRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    TrainCsvRow row;
    try {
      std::getline(ss, field, ',');
      row.epoch = std::stoi(field);
      std::getline(ss, field, ',');
      row.loss_class = std::stod(field);
      std::getline(ss, field, ',');
      row.loss_sparsity = std::stod(field);
      std::getline(ss, field, ',');
      row.loss_total = std::stod(field);
      std::getline(ss, field, ',');
      row.mean_lambda = std::stod(field);
    } catch (const std::exception&) {
      throw std::runtime_error("bad training csv row " + std::to_string(line_no) + " in " +
                               path.string());
    }
    rows.push_back(row);
  }
  return rows;
}

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 360.0;
constexpr double kMarginLeft = 56.0;
constexpr double kMarginRight = 12.0;
constexpr double kMarginTop = 28.0;
constexpr double kMarginBottom = 36.0;

const char* series_color(std::size_t i) {
  static const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
}

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

void write_line_chart_svg(const std::vector<PlotSeries>& series, const std::string& title,
                          const std::filesystem::path& path) {
  double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
  bool first = true;
  for (const PlotSeries& s : series) {
    for (const auto& p : s.points) {
      if (first) {
        xmin = xmax = p[0];
        ymin = ymax = p[1];
        first = false;
      } else {
        xmin = std::min(xmin, p[0]);
        xmax = std::max(xmax, p[0]);
        ymin = std::min(ymin, p[1]);
        ymax = std::max(ymax, p[1]);
      }
    }
  }
  if (xmax <= xmin) xmax = xmin + 1.0;
  if (ymax <= ymin) ymax = ymin + 1.0;

  const double plot_w = kWidth - kMarginLeft - kMarginRight;
  const double plot_h = kHeight - kMarginTop - kMarginBottom;
  const double sx = plot_w / (xmax - xmin);
  const double sy = plot_h / (ymax - ymin);
  const double tx = kMarginLeft - xmin * sx;
  const double ty = (kHeight - kMarginBottom) + ymin * sy;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open svg for writing: " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt_double(kWidth)
      << "\" height=\"" << fmt_double(kHeight) << "\" viewBox=\"0 0 " << fmt_double(kWidth) << ' '
      << fmt_double(kHeight) << "\">\n";
  out << "<rect width=\"" << fmt_double(kWidth) << "\" height=\"" << fmt_double(kHeight)
      << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << fmt_double(kWidth / 2.0)
      << "\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
      << xml_escape(title) << "</text>\n";

  out << "<rect x=\"" << fmt_double(kMarginLeft) << "\" y=\"" << fmt_double(kMarginTop)
      << "\" width=\"" << fmt_double(plot_w) << "\" height=\"" << fmt_double(plot_h)
      << "\" fill=\"none\" stroke=\"#333333\"/>\n";

  // Axis extent labels.
  out << "<text x=\"" << fmt_double(kMarginLeft) << "\" y=\"" << fmt_double(kHeight - 14.0)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
      << fmt_double(xmin) << "</text>\n";
  out << "<text x=\"" << fmt_double(kWidth - kMarginRight) << "\" y=\""
      << fmt_double(kHeight - 14.0)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
      << fmt_double(xmax) << "</text>\n";
  out << "<text x=\"" << fmt_double(kMarginLeft - 6.0) << "\" y=\""
      << fmt_double(kHeight - kMarginBottom)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_double(ymin)
      << "</text>\n";
  out << "<text x=\"" << fmt_double(kMarginLeft - 6.0) << "\" y=\"" << fmt_double(kMarginTop + 4.0)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_double(ymax)
      << "</text>\n";

  // Data-space group: polyline points carry raw values.
  out << "<g transform=\"translate(" << fmt_double(tx) << ' ' << fmt_double(ty) << ") scale("
      << fmt_double(sx) << ' ' << fmt_double(-sy) << ")\">\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    out << "<polyline fill=\"none\" stroke=\"" << series_color(i)
        << "\" stroke-width=\"1.5\" vector-effect=\"non-scaling-stroke\" points=\"";
    for (std::size_t j = 0; j < series[i].points.size(); ++j) {
      if (j > 0) out << ' ';
      out << fmt_double(series[i].points[j][0]) << ',' << fmt_double(series[i].points[j][1]);
    }
    out << "\"/>\n";
  }
  out << "</g>\n";

  // Legend, top right.
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double y = kMarginTop + 14.0 + 14.0 * static_cast<double>(i);
    out << "<rect x=\"" << fmt_double(kWidth - kMarginRight - 110.0) << "\" y=\""
        << fmt_double(y - 8.0) << "\" width=\"10\" height=\"10\" fill=\"" << series_color(i)
        << "\"/>\n";
    out << "<text x=\"" << fmt_double(kWidth - kMarginRight - 96.0) << "\" y=\"" << fmt_double(y)
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(series[i].label)
        << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw std::runtime_error("svg write failed: " + path.string());
}

void write_loss_curve_svg(const std::vector<TrainCsvRow>& rows,
                          const std::filesystem::path& path) {
  require(!rows.empty(), "write_loss_curve_svg: no training rows");
  PlotSeries cls{"loss_class", {}};
  PlotSeries sp{"loss_sparsity", {}};
  PlotSeries tot{"loss_total", {}};
  for (const TrainCsvRow& r : rows) {
    const double e = static_cast<double>(r.epoch);
    cls.points.push_back({e, r.loss_class});
    sp.points.push_back({e, r.loss_sparsity});
    tot.points.push_back({e, r.loss_total});
  }
  write_line_chart_svg({cls, sp, tot}, "training loss by epoch", path);
}

namespace {

std::vector<std::array<double, 2>> map_points(const std::vector<EvalCsvRow>& rows) {
  std::vector<std::array<double, 2>> points;
  for (const EvalCsvRow& r : rows) {
    if (r.class_name == "__mAP__") points.push_back({r.iou, r.ap});
  }
  require(!points.empty(), "eval report carries no __mAP__ rows");
  std::sort(points.begin(), points.end(),
            [](const auto& a, const auto& b) { return a[0] < b[0]; });
  return points;
}

}  // namespace

void write_map_table_csv(const std::vector<EvalCsvRow>& rows, const std::filesystem::path& path) {
  const auto points = map_points(rows);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open map table for writing: " + path.string());
  out << "iou,map\n";
  for (const auto& p : points) out << fmt_double(p[0]) << ',' << fmt_double(p[1]) << '\n';
  if (!out) throw std::runtime_error("map table write failed: " + path.string());
}

void write_map_curve_svg(const std::vector<EvalCsvRow>& rows, const std::filesystem::path& path) {
  PlotSeries s{"mAP", map_points(rows)};
  write_line_chart_svg({s}, "mAP by IoU threshold", path);
}

TraceData compute_trace(const ModelParams& rgb_params, const ModelParams& flow_params,
                        const VideoRecord& rec, const DatasetManifest& manifest,
                        std::size_t t_out, int rho) {
  require(rho >= 1, "compute_trace: rho must be >= 1");
  TraceData trace;
  trace.video_id = rec.id;
  trace.rho = rho;
  Rng unused(0);
  for (Stream s : {Stream::kRgb, Stream::kFlow}) {
    const ModelParams& params = s == Stream::kRgb ? rgb_params : flow_params;
    const auto path = manifest.resolve(rec.feature_path(s));
    if (!std::filesystem::exists(path))
      throw std::runtime_error("video '" + rec.id + "': missing feature file " + path.string());
    const Matrix raw = read_features(path);
    const Matrix x = sample_segments(raw, t_out, SampleMode::kDeterministic, unused);
    const ForwardCache fwd = forward(params, x);
    const TCam cam = tcam(params, x, s);
    trace.psi[static_cast<std::size_t>(s)] = weighted_tcam(fwd.att.lambda, cam, rho).values;
  }
  return trace;
}

void write_trace_csv(const TraceData& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open trace csv for writing: " + path.string());
  out << "stream,class,dense_idx,psi\n";
  for (Stream s : {Stream::kRgb, Stream::kFlow}) {
    const Matrix& psi = trace.psi[static_cast<std::size_t>(s)];
    for (std::size_t c = 0; c < psi.cols(); ++c) {
      for (std::size_t d = 0; d < psi.rows(); ++d) {
        out << stream_name(s) << ',' << c << ',' << fmt_double(static_cast<double>(d)) << ','
            << fmt_double(psi(d, c)) << '\n';
      }
    }
  }
  if (!out) throw std::runtime_error("trace csv write failed: " + path.string());
}

void write_trace_svg(const TraceData& trace, const std::filesystem::path& path) {
  std::vector<PlotSeries> series;
  for (Stream s : {Stream::kRgb, Stream::kFlow}) {
    const Matrix& psi = trace.psi[static_cast<std::size_t>(s)];
    for (std::size_t c = 0; c < psi.cols(); ++c) {
      PlotSeries ps;
      ps.label = std::string(stream_name(s)) + "/c" + std::to_string(c);
      for (std::size_t d = 0; d < psi.rows(); ++d) {
        ps.points.push_back({static_cast<double>(d), psi(d, c)});
      }
      series.push_back(std::move(ps));
    }
  }
  write_line_chart_svg(series, "weighted t-cam " + trace.video_id, path);
}

}  // namespace stpn
