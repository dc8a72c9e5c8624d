#include "gazecontact/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace gc {
namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string tickLabel(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string lineChartSvg(const PlotAxes& axes, const std::vector<PlotSeries>& series) {
  constexpr double W = 480, H = 360, L = 60, R = 20, T = 36, B = 48;
  const double pw = W - L - R, ph = H - T - B;
  const double xs = axes.x_hi > axes.x_lo ? pw / (axes.x_hi - axes.x_lo) : 1.0;
  const double ys = axes.y_hi > axes.y_lo ? ph / (axes.y_hi - axes.y_lo) : 1.0;
  auto px = [&](double x) { return L + (std::clamp(x, axes.x_lo, axes.x_hi) - axes.x_lo) * xs; };
  auto py = [&](double y) { return T + ph - (std::clamp(y, axes.y_lo, axes.y_hi) - axes.y_lo) * ys; };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(axes.title) << "</text>\n";
  s << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = axes.x_lo + (axes.x_hi - axes.x_lo) * i / 5.0;
    const double yv = axes.y_lo + (axes.y_hi - axes.y_lo) * i / 5.0;
    s << "<line x1=\"" << num(px(xv)) << "\" y1=\"" << T + ph << "\" x2=\"" << num(px(xv)) << "\" y2=\"" << T + ph + 4
      << "\" stroke=\"black\"/>";
    s << "<text x=\"" << num(px(xv)) << "\" y=\"" << T + ph + 16 << "\" text-anchor=\"middle\">" << tickLabel(xv) << "</text>\n";
    s << "<line x1=\"" << L - 4 << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << L << "\" y2=\"" << num(py(yv))
      << "\" stroke=\"black\"/>";
    s << "<text x=\"" << L - 6 << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << tickLabel(yv) << "</text>\n";
  }
  s << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << escape(axes.x_label) << "</text>\n";
  s << "<text x=\"14\" y=\"" << T + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " << T + ph / 2
    << ")\">" << escape(axes.y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kPalette[k % std::size(kPalette)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : series[k].points) s << num(px(x)) << ',' << num(py(y)) << ' ';
    s << "\"/>\n";
    const double ly = T + 14 + 14.0 * static_cast<double>(k);
    s << "<line x1=\"" << L + pw - 110 << "\" y1=\"" << ly << "\" x2=\"" << L + pw - 92 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>";
    s << "<text x=\"" << L + pw - 88 << "\" y=\"" << ly + 4 << "\">" << escape(series[k].name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string histogramSvg(const std::vector<HistogramPanel>& panels) {
  constexpr double PW = 240, PH = 180, Pad = 30, T = 28;
  const double W = PW * static_cast<double>(std::max<std::size_t>(1, panels.size()));
  const double H = PH + 40;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& panel = panels[p];
    const double x0 = PW * static_cast<double>(p) + Pad, w = PW - 2 * Pad, h = PH - T;
    s << "<text x=\"" << x0 + w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << escape(panel.title) << "</text>\n";
    s << "<rect x=\"" << x0 << "\" y=\"" << T << "\" width=\"" << w << "\" height=\"" << h << "\" fill=\"none\" stroke=\"black\"/>\n";
    const std::int64_t peak = panel.counts.empty() ? 0 : *std::max_element(panel.counts.begin(), panel.counts.end());
    const double bw = panel.counts.empty() ? 0.0 : w / static_cast<double>(panel.counts.size());
    for (std::size_t i = 0; i < panel.counts.size(); ++i) {
      if (peak == 0 || panel.counts[i] == 0) continue;
      const double bh = h * static_cast<double>(panel.counts[i]) / static_cast<double>(peak);
      s << "<rect x=\"" << num(x0 + bw * static_cast<double>(i)) << "\" y=\"" << num(T + h - bh) << "\" width=\"" << num(bw)
        << "\" height=\"" << num(bh) << "\" fill=\"" << kPalette[0] << "\"/>\n";
    }
    s << "<text x=\"" << x0 << "\" y=\"" << T + h + 14 << "\" text-anchor=\"middle\">" << tickLabel(panel.lo) << "</text>";
    s << "<text x=\"" << x0 + w << "\" y=\"" << T + h + 14 << "\" text-anchor=\"middle\">" << tickLabel(panel.hi) << "</text>";
    s << "<text x=\"" << x0 + w / 2 << "\" y=\"" << T + h + 28 << "\" text-anchor=\"middle\">peak " << peak << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace gc
