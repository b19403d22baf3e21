#include "multiassign/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <sstream>

#include "multiassign/errors.hpp"

namespace multiassign {

MetricsLog read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader)
    throw ValidationError("metrics CSV: expected header '" + std::string(kMetricsHeader) + "'");
  MetricsLog log;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    MetricsRow r;
    char tail = 0;
    const int n = std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf,%lf,%lf,%lf,%lf%c", &r.epoch, &r.branch, &r.loss_cls,
                              &r.loss_box, &r.loss_total, &r.o2o_primary_loss, &r.ap50, &r.map, &tail);
    if (n != 8) throw ValidationError("metrics CSV: malformed row at line " + std::to_string(line_no));
    log.rows.push_back(r);
  }
  return log;
}

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 140, kTop = 30, kBottom = 50;

const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace

std::string loss_curve_svg(const MetricsLog& log) {
  std::size_t max_epoch = 0, n_branches = 0;
  double lo = 0.0, hi = 1.0;
  bool first = true;
  for (const auto& r : log.rows) {
    max_epoch = std::max(max_epoch, r.epoch);
    n_branches = std::max(n_branches, r.branch + 1);
    lo = first ? r.loss_total : std::min(lo, r.loss_total);
    hi = first ? r.loss_total : std::max(hi, r.loss_total);
    first = false;
  }
  lo = std::min(lo, 0.0);
  if (hi <= lo) hi = lo + 1.0;
  const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
  auto x_of = [&](double epoch) { return kLeft + plot_w * (max_epoch ? epoch / static_cast<double>(max_epoch) : 0.5); };
  auto y_of = [&](double v) { return kTop + plot_h * (1.0 - (v - lo) / (hi - lo)); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // Axes.
  os << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop + plot_h) << "\" x2=\"" << num(kLeft + plot_w)
     << "\" y2=\"" << num(kTop + plot_h) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(kLeft) << "\" y2=\""
     << num(kTop + plot_h) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = lo + (hi - lo) * i / 5.0;
    const double y = y_of(v);
    os << "<line x1=\"" << num(kLeft - 4) << "\" y1=\"" << num(y) << "\" x2=\"" << num(kLeft) << "\" y2=\"" << num(y)
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << label(v)
       << "</text>\n";
  }
  const std::size_t x_ticks = std::min<std::size_t>(max_epoch, 10);
  for (std::size_t i = 0; i <= x_ticks; ++i) {
    const double e = x_ticks ? static_cast<double>(max_epoch) * i / x_ticks : 0.0;
    const double x = x_of(e);
    os << "<line x1=\"" << num(x) << "\" y1=\"" << num(kTop + plot_h) << "\" x2=\"" << num(x) << "\" y2=\""
       << num(kTop + plot_h + 4) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(x) << "\" y=\"" << num(kTop + plot_h + 18) << "\" text-anchor=\"middle\">" << label(e)
       << "</text>\n";
  }
  os << "<text x=\"" << num(kLeft + plot_w / 2) << "\" y=\"" << num(kHeight - 10)
     << "\" text-anchor=\"middle\">epoch</text>\n";
  os << "<text transform=\"translate(16," << num(kTop + plot_h / 2)
     << ") rotate(-90)\" text-anchor=\"middle\">validation loss</text>\n";

  for (std::size_t b = 0; b < n_branches; ++b) {
    const char* color = kColors[b % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    bool sep = false;
    for (const auto& r : log.rows) {
      if (r.branch != b) continue;
      os << (sep ? " " : "") << num(x_of(static_cast<double>(r.epoch))) << "," << num(y_of(r.loss_total));
      sep = true;
    }
    os << "\"/>\n";
    const double ly = kTop + 10 + 18.0 * static_cast<double>(b);
    os << "<line x1=\"" << num(kWidth - kRight + 12) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(kWidth - kRight + 32)
       << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << num(kWidth - kRight + 38) << "\" y=\"" << num(ly + 4) << "\">"
       << (b == 0 ? std::string("primary (o2o)") : "aux " + std::to_string(b)) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace multiassign
