#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "congestion/simulator.hpp"

namespace congestion::sim {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// 1, 2, 5 x 10^k step giving roughly `target` ticks.
double nice_step(double range, int target) {
  if (!(range > 0)) return 1.0;
  const double raw = range / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double r = raw / mag;
  return (r < 1.5 ? 1.0 : r < 3.5 ? 2.0 : r < 7.5 ? 5.0 : 10.0) * mag;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

}  // namespace

std::string render_cumulative_waiting_svg(const std::vector<Curve>& curves, const std::string& title) {
  const double W = 720, H = 440, left = 80, right = 170, top = 40, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;

  double tmax = 0, ymax = 0;
  for (const Curve& c : curves) {
    for (double t : c.t) tmax = std::max(tmax, t);
    for (double y : c.y) ymax = std::max(ymax, y);
  }
  if (tmax <= 0) tmax = 1;
  const double ystep = nice_step(ymax > 0 ? ymax : 1, 5);
  ymax = std::max(ystep, std::ceil((ymax > 0 ? ymax : 1) / ystep) * ystep);
  const double tstep = nice_step(tmax, 6);

  auto X = [&](double t) { return left + pw * t / tmax; };
  auto Y = [&](double y) { return top + ph * (1.0 - y / ymax); };

  std::ostringstream o;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                W, H, W, H);
  o << buf;
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">",
                left + pw / 2);
  o << buf << escape(title) << "</text>\n";

  o << "<g font-family=\"sans-serif\" font-size=\"11\" stroke-width=\"1\">\n";
  for (double y = 0; y <= ymax + 1e-9; y += ystep) {
    std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>", left, Y(y),
                  left + pw, Y(y));
    o << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%g</text>\n", left - 6, Y(y) + 4, y);
    o << buf;
  }
  for (double t = 0; t <= tmax + 1e-9; t += tstep) {
    std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>", X(t), top,
                  X(t), top + ph);
    o << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%g</text>\n", X(t), top + ph + 16,
                  t);
    o << buf;
  }
  std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"black\"/>\n",
                left, top, pw, ph);
  o << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">time (s)</text>\n", left + pw / 2,
                H - 18);
  o << buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"18\" y=\"%.1f\" text-anchor=\"middle\" transform=\"rotate(-90 18 %.1f)\">cumulative waiting (s)</text>\n",
                top + ph / 2, top + ph / 2);
  o << buf;
  o << "</g>\n";

  for (std::size_t i = 0; i < curves.size(); ++i) {
    const Curve& c = curves[i];
    const char* color = kPalette[i % (sizeof kPalette / sizeof *kPalette)];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    const std::size_t n = std::min(c.t.size(), c.y.size());
    // Thin long series to at most ~800 points.
    const std::size_t stride = std::max<std::size_t>(1, n / 800);
    for (std::size_t k = 0; k < n; k += stride) {
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", X(c.t[k]), Y(c.y[k]));
      o << buf;
    }
    if (n > 0 && (n - 1) % stride != 0) {
      std::snprintf(buf, sizeof buf, "%.1f,%.1f", X(c.t[n - 1]), Y(c.y[n - 1]));
      o << buf;
    }
    o << "\"/>\n";
    const double ly = top + 14 + 20.0 * static_cast<double>(i);
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" stroke-width=\"3\"/>", left + pw + 14,
                  ly, left + pw + 38, ly, color);
    o << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\">",
                  left + pw + 44, ly + 4);
    o << buf << escape(c.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace congestion::sim
