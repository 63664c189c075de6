#pragma once

// Minimal deterministic SVG emitters: line plots, bar charts and heatmaps.
// Output depends only on the inputs (fixed-precision coordinates, no
// timestamps), so identical data gives identical bytes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

namespace oxipipe::svg {

inline constexpr double kWidth = 720.0;
inline constexpr double kHeight = 420.0;
inline constexpr double kLeft = 70.0, kRight = 170.0, kTop = 40.0, kBottom = 50.0;

inline constexpr std::array<const char*, 8> kPalette = {"#d62728", "#2ca02c", "#1f77b4", "#ff7f0e",
                                                        "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

inline std::string num(double v, int precision = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  std::string s = buf;
  if (s == "-0.00" || s == "-0") s.erase(0, 1);
  return s;
}

inline std::string label_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string escape(std::string_view text) {
  std::string out;
  for (char c : text) {
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

namespace detail {

inline std::string header(std::string_view title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth, 0) + "\" height=\"" + num(kHeight, 0) +
         "\" viewBox=\"0 0 " + num(kWidth, 0) + " " + num(kHeight, 0) +
         "\" font-family=\"sans-serif\" font-size=\"12\">\n"
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
         "<text x=\"" +
         num(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(title) + "</text>\n";
}

inline std::string text(double x, double y, std::string_view s, std::string_view anchor = "start") {
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + std::string(anchor) + "\">" + escape(s) +
         "</text>\n";
}

struct Range {
  double lo = 0.0, hi = 1.0;
};

inline Range padded(double lo, double hi) {
  if (!(lo <= hi)) return {0.0, 1.0};
  if (lo == hi) return {lo - 0.5, hi + 0.5};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

inline std::string axes(Range xr, Range yr, std::string_view x_label, std::string_view y_label) {
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::string out = "<g stroke=\"black\" fill=\"none\">\n<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" +
                    num(x1) + "\" y2=\"" + num(y0) + "\"/>\n<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) +
                    "\" x2=\"" + num(x0) + "\" y2=\"" + num(y1) + "\"/>\n</g>\n";
  for (int i = 0; i <= 4; ++i) {
    const double f = i / 4.0;
    const double xv = xr.lo + f * (xr.hi - xr.lo), yv = yr.lo + f * (yr.hi - yr.lo);
    const double xp = x0 + f * (x1 - x0), yp = y0 - f * (y0 - y1);
    out += text(xp, y0 + 16, label_num(xv), "middle");
    out += text(x0 - 6, yp + 4, label_num(yv), "end");
  }
  out += text((x0 + x1) / 2, kHeight - 12, x_label, "middle");
  out += "<text x=\"16\" y=\"" + num((y0 + y1) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num((y0 + y1) / 2) + ")\">" + escape(y_label) + "</text>\n";
  return out;
}

}  // namespace detail

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Line plot; non-finite points break the line.
inline std::string line_plot(std::string_view title, std::string_view x_label, std::string_view y_label,
                             std::span<const Series> series) {
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
    }
  }
  const auto xr = detail::padded(xlo, xhi), yr = detail::padded(ylo, yhi);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::string out = detail::header(title) + detail::axes(xr, yr, x_label, y_label);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % kPalette.size()];
    std::string d;
    bool pen_down = false;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        pen_down = false;
        continue;
      }
      const double px = x0 + (s.x[i] - xr.lo) / (xr.hi - xr.lo) * (x1 - x0);
      const double py = y0 - (s.y[i] - yr.lo) / (yr.hi - yr.lo) * (y0 - y1);
      d += (pen_down ? "L" : "M") + num(px) + "," + num(py) + " ";
      pen_down = true;
    }
    if (!d.empty()) d.pop_back();
    out += "<path d=\"" + d + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\"/>\n";
    const double ly = kTop + 14.0 + 18.0 * static_cast<double>(k);
    out += "<line x1=\"" + num(x1 + 12) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(x1 + 32) + "\" y2=\"" +
           num(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    out += detail::text(x1 + 38, ly, s.name);
  }
  return out + "</svg>\n";
}

/// Vertical bars, one per label; the legend lists each value and their sum.
inline std::string bar_chart(std::string_view title, std::span<const std::string> labels,
                             std::span<const double> values, std::string_view y_label = "value") {
  double hi = 0.0, sum = 0.0;
  for (double v : values) {
    hi = std::max(hi, v);
    sum += v;
  }
  const detail::Range yr{0.0, hi > 0.0 ? hi * 1.1 : 1.0};
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::string out = detail::header(title);
  out += "<g stroke=\"black\" fill=\"none\">\n<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x1) +
         "\" y2=\"" + num(y0) + "\"/>\n<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x0) +
         "\" y2=\"" + num(y1) + "\"/>\n</g>\n";
  for (int i = 0; i <= 4; ++i) {
    const double f = i / 4.0;
    out += detail::text(x0 - 6, y0 - f * (y0 - y1) + 4, label_num(yr.lo + f * (yr.hi - yr.lo)), "end");
  }
  out += "<text x=\"16\" y=\"" + num((y0 + y1) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num((y0 + y1) / 2) + ")\">" + escape(y_label) + "</text>\n";
  const std::size_t n = std::min(labels.size(), values.size());
  const double slot = (x1 - x0) / static_cast<double>(std::max<std::size_t>(n, 1));
  for (std::size_t k = 0; k < n; ++k) {
    const double h = values[k] / (yr.hi - yr.lo) * (y0 - y1);
    const double bx = x0 + slot * (static_cast<double>(k) + 0.2);
    out += "<rect x=\"" + num(bx) + "\" y=\"" + num(y0 - h) + "\" width=\"" + num(slot * 0.6) + "\" height=\"" +
           num(h) + "\" fill=\"" + kPalette[k % kPalette.size()] + "\"/>\n";
    out += detail::text(bx + slot * 0.3, y0 + 16, labels[k], "middle");
    out += detail::text(x1 + 12, kTop + 14.0 + 18.0 * static_cast<double>(k), labels[k] + ": " + num(values[k], 4));
  }
  out += detail::text(x1 + 12, kTop + 14.0 + 18.0 * static_cast<double>(n), "sum: " + num(sum, 4));
  return out + "</svg>\n";
}

/// Grid of cells colored on a diverging scale symmetric about zero.
inline std::string heatmap(std::string_view title, std::span<const std::string> row_labels, std::size_t cols,
                           std::span<const double> values, std::string_view x_label = "sample") {
  const std::size_t rows = row_labels.size();
  double amax = 0.0;
  for (double v : values) {
    if (std::isfinite(v)) amax = std::max(amax, std::abs(v));
  }
  if (amax == 0.0) amax = 1.0;
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  const double cw = (x1 - x0) / static_cast<double>(std::max<std::size_t>(cols, 1));
  const double ch = (y0 - y1) / static_cast<double>(std::max<std::size_t>(rows, 1));
  std::string out = detail::header(title);
  for (std::size_t r = 0; r < rows; ++r) {
    out += detail::text(x0 - 6, y1 + ch * (static_cast<double>(r) + 0.5) + 4, row_labels[r], "end");
    for (std::size_t c = 0; c < cols && r * cols + c < values.size(); ++c) {
      const double v = std::clamp(values[r * cols + c] / amax, -1.0, 1.0);
      const int fade = static_cast<int>(std::lround(255.0 * (1.0 - std::abs(v))));
      char color[8];
      std::snprintf(color, sizeof color, "#%02x%02x%02x", v > 0 ? 255 : fade, fade, v < 0 ? 255 : fade);
      out += "<rect x=\"" + num(x0 + cw * static_cast<double>(c)) + "\" y=\"" + num(y1 + ch * static_cast<double>(r)) +
             "\" width=\"" + num(cw + 0.01) + "\" height=\"" + num(ch) + "\" fill=\"" + color + "\"/>\n";
    }
  }
  out += detail::text((x0 + x1) / 2, kHeight - 12, x_label, "middle");
  out += detail::text(x1 + 12, kTop + 14, "red: +" + label_num(amax));
  out += detail::text(x1 + 12, kTop + 32, "blue: -" + label_num(amax));
  return out + "</svg>\n";
}

}  // namespace oxipipe::svg
