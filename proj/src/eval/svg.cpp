#include "cwhar/svg.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "cwhar/errors.h"

namespace cwhar::eval {

namespace {

constexpr double kWidth = 720, kHeight = 440;
constexpr double kLeft = 70, kRight = 190, kTop = 50, kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

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

const char* colour(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const {
    const double span = x1 > x0 ? x1 - x0 : 1.0;
    return kLeft + (x - x0) / span * (kWidth - kLeft - kRight);
  }
  double py(double y) const {
    const double span = y1 > y0 ? y1 - y0 : 1.0;
    return kHeight - kBottom - (y - y0) / span * (kHeight - kTop - kBottom);
  }
};

void header(std::ostringstream& out, const std::string& title, const nlohmann::json& metadata) {
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\"" << num(kHeight)
      << "\" viewBox=\"0 0 " << num(kWidth) << ' ' << num(kHeight) << "\" font-family=\"sans-serif\">\n"
      << "<metadata>" << escape(metadata.dump()) << "</metadata>\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << num(kWidth / 2) << "\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">" << escape(title)
      << "</text>\n";
}

void axes(std::ostringstream& out, const Frame& f, const std::string& x_label, const std::string& y_label) {
  const double left = kLeft, right = kWidth - kRight, top = kTop, bottom = kHeight - kBottom;
  out << "<g stroke=\"#333\" stroke-width=\"1\">\n"
      << "<line x1=\"" << num(left) << "\" y1=\"" << num(bottom) << "\" x2=\"" << num(right) << "\" y2=\"" << num(bottom)
      << "\"/>\n"
      << "<line x1=\"" << num(left) << "\" y1=\"" << num(top) << "\" x2=\"" << num(left) << "\" y2=\"" << num(bottom)
      << "\"/>\n</g>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = f.y0 + (f.y1 - f.y0) * i / 5.0;
    const double y = f.py(v);
    out << "<line x1=\"" << num(left) << "\" y1=\"" << num(y) << "\" x2=\"" << num(right) << "\" y2=\"" << num(y)
        << "\" stroke=\"#ddd\"/>\n"
        << "<text x=\"" << num(left - 6) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
        << tick(v) << "</text>\n";
  }
  out << "<text x=\"" << num((left + right) / 2) << "\" y=\"" << num(kHeight - 18)
      << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(x_label) << "</text>\n"
      << "<text x=\"18\" y=\"" << num((top + bottom) / 2) << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
      << num((top + bottom) / 2) << ")\">" << escape(y_label) << "</text>\n";
}

}  // namespace

std::string render_svg(const LineChart& chart) {
  for (const auto& s : chart.series) {
    if (s.x.size() != s.y.size()) throw ArgumentError("series '" + s.name + "' has mismatched x and y lengths");
  }
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : chart.series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!any) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        any = true;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!chart.x_categories.empty()) {
    x0 = -0.5;
    x1 = static_cast<double>(chart.x_categories.size()) - 0.5;
  }
  if (chart.y_min) y0 = *chart.y_min;
  if (chart.y_max) y1 = *chart.y_max;
  if (!(y1 > y0)) y1 = y0 + 1.0;
  if (!(x1 > x0)) x1 = x0 + 1.0;
  const Frame f{x0, x1, y0, y1};

  std::ostringstream out;
  header(out, chart.title, chart.metadata);
  axes(out, f, chart.x_label, chart.y_label);
  if (!chart.x_categories.empty()) {
    for (std::size_t i = 0; i < chart.x_categories.size(); ++i) {
      out << "<text x=\"" << num(f.px(static_cast<double>(i))) << "\" y=\"" << num(kHeight - kBottom + 16)
          << "\" text-anchor=\"middle\" font-size=\"11\">" << escape(chart.x_categories[i]) << "</text>\n";
    }
  } else {
    for (int i = 0; i <= 5; ++i) {
      const double v = x0 + (x1 - x0) * i / 5.0;
      out << "<text x=\"" << num(f.px(v)) << "\" y=\"" << num(kHeight - kBottom + 16)
          << "\" text-anchor=\"middle\" font-size=\"11\">" << tick(v) << "</text>\n";
    }
  }
  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const auto& s = chart.series[k];
    out << "<g fill=\"none\" stroke=\"" << colour(k) << "\" stroke-width=\"2\">\n";
    if (s.x.size() > 1) {
      out << "<polyline points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) out << (i ? " " : "") << num(f.px(s.x[i])) << ',' << num(f.py(s.y[i]));
      out << "\"/>\n";
    }
    if (s.x.size() <= 12) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        out << "<circle cx=\"" << num(f.px(s.x[i])) << "\" cy=\"" << num(f.py(s.y[i])) << "\" r=\"3.5\" fill=\""
            << colour(k) << "\"/>\n";
      }
    }
    out << "</g>\n";
    const double ly = kTop + 10 + 20.0 * static_cast<double>(k);
    out << "<line x1=\"" << num(kWidth - kRight + 15) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(kWidth - kRight + 35)
        << "\" y2=\"" << num(ly) << "\" stroke=\"" << colour(k) << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << num(kWidth - kRight + 40) << "\" y=\"" << num(ly + 4) << "\" font-size=\"11\">" << escape(s.name)
        << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string render_svg(const BarChart& chart) {
  double y1 = 0.0;
  for (const auto& b : chart.bars) y1 = std::max(y1, b.value + b.error);
  if (chart.y_max) y1 = *chart.y_max;
  if (!(y1 > 0.0)) y1 = 1.0;
  const double n = static_cast<double>(std::max<std::size_t>(chart.bars.size(), 1));
  const Frame f{-0.5, n - 0.5, 0.0, y1};

  std::ostringstream out;
  header(out, chart.title, chart.metadata);
  axes(out, f, "", chart.y_label);
  const double slot = (kWidth - kLeft - kRight) / n;
  for (std::size_t i = 0; i < chart.bars.size(); ++i) {
    const auto& b = chart.bars[i];
    const double cx = f.px(static_cast<double>(i));
    const double top = f.py(std::max(0.0, b.value));
    const double w = slot * 0.6;
    out << "<rect x=\"" << num(cx - w / 2) << "\" y=\"" << num(top) << "\" width=\"" << num(w) << "\" height=\""
        << num(f.py(0.0) - top) << "\" fill=\"" << colour(i) << "\"/>\n";
    if (b.error > 0.0) {
      const double lo = f.py(std::max(0.0, b.value - b.error)), hi = f.py(b.value + b.error);
      out << "<line x1=\"" << num(cx) << "\" y1=\"" << num(lo) << "\" x2=\"" << num(cx) << "\" y2=\"" << num(hi)
          << "\" stroke=\"#000\"/>\n";
    }
    out << "<text x=\"" << num(cx) << "\" y=\"" << num(top - 5) << "\" text-anchor=\"middle\" font-size=\"11\">"
        << tick(b.value) << "</text>\n"
        << "<text x=\"" << num(cx) << "\" y=\"" << num(kHeight - kBottom + 16) << "\" text-anchor=\"middle\" font-size=\"11\">"
        << escape(b.label) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace cwhar::eval
