#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "asdkit/common.hpp"
#include "asdkit/metrics.hpp"

// Minimal SVG renderers for the evaluation artifacts. The CSVs are the ground
// truth; these are convenience views of the same data.
namespace asdkit::plot {

namespace detail {

inline void svg_open(std::ofstream& out, int w, int h) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
      << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
}

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", x);
  return buf;
}

}  // namespace detail

/// ROC curve with the chance diagonal.
inline void write_roc_svg(const std::string& path, const std::vector<metrics::RocPoint>& pts,
                          const std::string& title) {
  const int W = 420, H = 420, M = 40;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write svg: " + path);
  detail::svg_open(out, W, H);
  auto px = [&](double fpr) { return M + fpr * (W - 2 * M); };
  auto py = [&](double tpr) { return H - M - tpr * (H - 2 * M); };
  out << "<rect x=\"" << M << "\" y=\"" << M << "\" width=\"" << W - 2 * M << "\" height=\""
      << H - 2 * M << "\" fill=\"none\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\""
      << py(1) << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 3\"/>\n";
  out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
  for (const auto& p : pts) out << detail::fmt(px(p.fpr)) << "," << detail::fmt(py(p.tpr)) << " ";
  out << "\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
      << title << "</text>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"" << H - 8
      << "\" text-anchor=\"middle\" font-size=\"11\">FPR</text>\n";
  out << "<text x=\"12\" y=\"" << H / 2
      << "\" text-anchor=\"middle\" font-size=\"11\" transform=\"rotate(-90 12 " << H / 2
      << ")\">TPR</text>\n";
  out << "</svg>\n";
}

/// Side-by-side per-class histogram of normalized anomaly scores.
inline void write_histogram_svg(const std::string& path, const metrics::Histogram& h,
                                const std::string& title) {
  const int W = 520, H = 360, M = 40;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write svg: " + path);
  detail::svg_open(out, W, H);
  int64_t peak = 1;
  for (size_t i = 0; i < h.normal.size(); ++i)
    peak = std::max({peak, h.normal[i], h.anomaly[i]});
  const double bw = double(W - 2 * M) / double(h.bins);
  auto bar = [&](int bin, int64_t count, double frac_off, const char* color) {
    const double bh = double(count) / double(peak) * (H - 2 * M);
    out << "<rect x=\"" << detail::fmt(M + bin * bw + frac_off * bw) << "\" y=\""
        << detail::fmt(H - M - bh) << "\" width=\"" << detail::fmt(bw * 0.45) << "\" height=\""
        << detail::fmt(bh) << "\" fill=\"" << color << "\" fill-opacity=\"0.8\"/>\n";
  };
  for (int b = 0; b < h.bins; ++b) {
    bar(b, h.normal[size_t(b)], 0.05, "#1f77b4");
    bar(b, h.anomaly[size_t(b)], 0.50, "#ff7f0e");
  }
  out << "<rect x=\"" << M << "\" y=\"" << M << "\" width=\"" << W - 2 * M << "\" height=\""
      << H - 2 * M << "\" fill=\"none\" stroke=\"black\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
      << title << " (blue=normal, orange=anomaly)</text>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"" << H - 8
      << "\" text-anchor=\"middle\" font-size=\"11\">normalized anomaly score</text>\n";
  out << "</svg>\n";
}

}  // namespace asdkit::plot
