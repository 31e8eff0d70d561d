#include "svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "clustat/core.hpp"

namespace clustat::plot {

namespace {

constexpr double kWidth = 640, kHeight = 440;
constexpr double kLeft = 80, kRight = 30, kTop = 40, kBottom = 60;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string label_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
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

struct Frame {
  double x0, x1, y0, y1;  // data range (log10 for log axes)
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

void header(std::ostringstream& o, const std::string& title) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(kWidth / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
    << "</text>\n";
}

void axes(std::ostringstream& o, const Frame& f, const std::string& xl, const std::string& yl, bool logx, bool logy) {
  o << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(kWidth - kLeft - kRight)
    << "\" height=\"" << num(kHeight - kTop - kBottom) << "\" fill=\"none\" stroke=\"black\"/>\n";
  auto ticks = [](double lo, double hi, bool log) {
    std::vector<double> t;
    if (log) {
      for (double e = std::ceil(lo); e <= hi + 1e-9; e += 1) t.push_back(e);
    } else {
      const double step = std::pow(10.0, std::floor(std::log10((hi - lo) / 4)));
      const double s = (hi - lo) / step > 10 ? 2 * step : step;
      for (double v = std::ceil(lo / s) * s; v <= hi + 1e-9 * s; v += s) t.push_back(v);
    }
    return t;
  };
  for (double t : ticks(f.x0, f.x1, logx)) {
    const double x = f.px(t);
    o << "<line x1=\"" << num(x) << "\" y1=\"" << num(kHeight - kBottom) << "\" x2=\"" << num(x) << "\" y2=\""
      << num(kHeight - kBottom + 5) << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << num(x) << "\" y=\"" << num(kHeight - kBottom + 18) << "\" text-anchor=\"middle\">"
      << label_num(logx ? std::pow(10.0, t) : t) << "</text>\n";
  }
  for (double t : ticks(f.y0, f.y1, logy)) {
    const double y = f.py(t);
    o << "<line x1=\"" << num(kLeft - 5) << "\" y1=\"" << num(y) << "\" x2=\"" << num(kLeft) << "\" y2=\"" << num(y)
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">"
      << label_num(logy ? std::pow(10.0, t) : t) << "</text>\n";
  }
  o << "<text x=\"" << num((kLeft + kWidth - kRight) / 2) << "\" y=\"" << num(kHeight - 18)
    << "\" text-anchor=\"middle\">" << escape(xl) << "</text>\n";
  o << "<text transform=\"translate(20," << num((kTop + kHeight - kBottom) / 2)
    << ") rotate(-90)\" text-anchor=\"middle\">" << escape(yl) << "</text>\n";
}

}  // namespace

std::string loglog_svg(const std::vector<Series>& series, const std::string& x_label, const std::string& y_label,
                       const std::string& title) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double y = std::abs(s.y[i]);
      if (!(s.x[i] > 0) || !(y > 0) || !std::isfinite(y)) continue;
      x0 = std::min(x0, std::log10(s.x[i]));
      x1 = std::max(x1, std::log10(s.x[i]));
      y0 = std::min(y0, std::log10(y));
      y1 = std::max(y1, std::log10(y));
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = -3, y1 = 0;
  Frame f{std::floor(x0 * 10) / 10 - 0.05, std::ceil(x1 * 10) / 10 + 0.05, std::floor(y0), std::ceil(y1)};
  if (f.y1 <= f.y0) f.y1 = f.y0 + 1;
  if (f.x1 <= f.x0) f.x1 = f.x0 + 1;
  std::ostringstream o;
  header(o, title);
  axes(o, f, x_label, y_label, true, true);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const std::string col = kColors[k % 8];
    std::string path;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double y = std::abs(s.y[i]);
      if (!(s.x[i] > 0) || !(y > 0) || !std::isfinite(y)) continue;
      const double px = f.px(std::log10(s.x[i])), py = f.py(std::clamp(std::log10(y), f.y0, f.y1));
      path += (path.empty() ? "M" : " L") + num(px) + ',' + num(py);
      if (!s.err.empty() && std::isfinite(s.err[i]) && s.err[i] > 0) {
        const double lo = y - s.err[i] > 0 ? std::log10(y - s.err[i]) : f.y0, hi = std::log10(y + s.err[i]);
        o << "<line x1=\"" << num(px) << "\" y1=\"" << num(f.py(std::clamp(lo, f.y0, f.y1))) << "\" x2=\"" << num(px)
          << "\" y2=\"" << num(f.py(std::clamp(hi, f.y0, f.y1))) << "\" stroke=\"" << col << "\"/>\n";
      }
      o << "<circle cx=\"" << num(px) << "\" cy=\"" << num(py) << "\" r=\"3\" stroke=\"" << col << "\" fill=\""
        << (s.y[i] > 0 ? col : std::string("none")) << "\"/>\n";
    }
    if (!path.empty()) o << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1\"/>\n";
    o << "<text x=\"" << num(kWidth - kRight - 10) << "\" y=\"" << num(kTop + 16 + 14 * k) << "\" text-anchor=\"end\" fill=\""
      << col << "\">" << escape(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string heatmap_svg(const std::vector<double>& xs, const std::vector<double>& ys, const std::vector<double>& z,
                        const std::string& x_label, const std::string& y_label, const std::string& title,
                        const double* mark_x, const double* mark_y) {
  if (xs.empty() || ys.empty() || z.size() != xs.size() * ys.size()) throw DataError("heat map dimensions disagree");
  auto edges = [](const std::vector<double>& v) {
    std::vector<double> e(v.size() + 1);
    if (v.size() == 1) {
      e[0] = v[0] - 0.5;
      e[1] = v[0] + 0.5;
      return e;
    }
    for (std::size_t i = 1; i < v.size(); ++i) e[i] = 0.5 * (v[i - 1] + v[i]);
    e[0] = v[0] - (e[1] - v[0]);
    e[v.size()] = v.back() + (v.back() - e[v.size() - 1]);
    return e;
  };
  const auto ex = edges(xs), ey = edges(ys);
  Frame f{ex.front(), ex.back(), ey.front(), ey.back()};
  double zmax = -std::numeric_limits<double>::infinity();
  for (double v : z)
    if (std::isfinite(v)) zmax = std::max(zmax, v);
  std::ostringstream o;
  header(o, title);
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < ys.size(); ++j) {
      const double v = z[i * ys.size() + j];
      // Colour by Delta lnL below the peak, saturating at 12.5 (5 sigma in 1D).
      const double t = std::isfinite(v) ? std::clamp((zmax - v) / 12.5, 0.0, 1.0) : 1.0;
      const int r = static_cast<int>(std::lround(255 * (1 - 0.8 * t))), g = static_cast<int>(std::lround(200 * (1 - t) + 30));
      const int b = static_cast<int>(std::lround(80 + 150 * t));
      char col[16];
      std::snprintf(col, sizeof col, "#%02x%02x%02x", r, g, b);
      o << "<rect x=\"" << num(f.px(ex[i])) << "\" y=\"" << num(f.py(ey[j + 1])) << "\" width=\""
        << num(f.px(ex[i + 1]) - f.px(ex[i])) << "\" height=\"" << num(f.py(ey[j]) - f.py(ey[j + 1]))
        << "\" fill=\"" << col << "\"/>\n";
    }
  axes(o, f, x_label, y_label, false, false);
  if (mark_x && mark_y)
    o << "<circle cx=\"" << num(f.px(*mark_x)) << "\" cy=\"" << num(f.py(*mark_y))
      << "\" r=\"5\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n";
  o << "</svg>\n";
  return o.str();
}

std::string bar_svg(const std::vector<std::string>& labels, const std::vector<double>& values, const std::string& y_label,
                    const std::string& title) {
  if (labels.size() != values.size() || labels.empty()) throw DataError("bar chart needs one label per value");
  double lo = 0, hi = 0;
  for (double v : values)
    if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  if (hi <= lo) hi = lo + 1;
  const double pad = 0.1 * (hi - lo);
  Frame f{0, static_cast<double>(values.size()), lo - (lo < 0 ? pad : 0), hi + pad};
  std::ostringstream o;
  header(o, title);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::isfinite(values[i]) ? values[i] : 0.0;
    const double top = f.py(std::max(v, 0.0)), bottom = f.py(std::min(v, 0.0));
    o << "<rect x=\"" << num(f.px(i + 0.15)) << "\" y=\"" << num(top) << "\" width=\"" << num(f.px(i + 0.85) - f.px(i + 0.15))
      << "\" height=\"" << num(bottom - top) << "\" fill=\"" << kColors[i % 8] << "\"/>\n";
    o << "<text x=\"" << num(f.px(i + 0.5)) << "\" y=\"" << num(kHeight - kBottom + 18) << "\" text-anchor=\"middle\">"
      << escape(labels[i]) << "</text>\n";
  }
  o << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(f.py(0)) << "\" x2=\"" << num(kWidth - kRight) << "\" y2=\""
    << num(f.py(0)) << "\" stroke=\"black\"/>\n";
  o << "<text transform=\"translate(20," << num((kTop + kHeight - kBottom) / 2)
    << ") rotate(-90)\" text-anchor=\"middle\">" << escape(y_label) << "</text>\n";
  o << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(f.py(f.y1) + 4) << "\" text-anchor=\"end\">"
    << label_num(f.y1) << "</text>\n";
  o << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(f.py(f.y0) + 4) << "\" text-anchor=\"end\">"
    << label_num(f.y0) << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

void write_svg(const std::string& path, const std::string& svg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << svg;
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace clustat::plot
