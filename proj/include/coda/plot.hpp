#pragma once

// SVG curves of AP_Novel and AR_Novel against epoch with a dashed marker at
// the Stage A / Stage B boundary. Output is a pure function of the inputs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "coda/errors.hpp"
#include "coda/trainer.hpp"

namespace coda {

struct PlotOptions {
  int width = 640;
  int height = 400;
  /// Epoch where Stage B starts (the marker is drawn there); <= 0 omits it.
  int stage_boundary = 0;
  std::string title = "novel-category metrics";
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace detail

/// Rows hold values in percent, as stored in the metrics CSV.
inline std::string novel_curves_svg(const std::vector<MetricsRow>& rows, const PlotOptions& opt = {}) {
  if (rows.empty()) throw MissingMetrics("no metrics rows to plot");
  const double left = 56, right = 16, top = 32, bottom = 44;
  const double pw = opt.width - left - right, ph = opt.height - top - bottom;
  int max_epoch = std::max(opt.stage_boundary, 1);
  double max_val = 10.0;
  for (const auto& r : rows) {
    max_epoch = std::max(max_epoch, r.epoch);
    max_val = std::max({max_val, r.ap_novel, r.ar_novel});
  }
  max_val = std::min(100.0, 10.0 * std::ceil(max_val / 10.0));
  auto X = [&](double e) { return left + pw * e / max_epoch; };
  auto Y = [&](double v) { return top + ph * (1.0 - v / max_val); };
  using detail::fmt;

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(opt.width) + "\" height=\"" +
       std::to_string(opt.height) + "\" viewBox=\"0 0 " + std::to_string(opt.width) + " " +
       std::to_string(opt.height) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(left) + "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" + opt.title + "</text>\n";
  s += "<g id=\"axes\" stroke=\"black\" stroke-width=\"1\">\n";
  s += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(top + ph) + "\" x2=\"" + fmt(left + pw) + "\" y2=\"" +
       fmt(top + ph) + "\"/>\n";
  s += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(top) + "\" x2=\"" + fmt(left) + "\" y2=\"" + fmt(top + ph) +
       "\"/>\n";
  s += "</g>\n<g id=\"ticks\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = max_val * i / 5.0;
    s += "<text x=\"" + fmt(left - 6) + "\" y=\"" + fmt(Y(v) + 4) + "\" text-anchor=\"end\">" + fmt(v) + "</text>\n";
    const double e = max_epoch * i / 5.0;
    s += "<text x=\"" + fmt(X(e)) + "\" y=\"" + fmt(top + ph + 16) + "\" text-anchor=\"middle\">" + fmt(e) +
         "</text>\n";
  }
  s += "<text x=\"" + fmt(left + pw / 2) + "\" y=\"" + fmt(opt.height - 8.0) +
       "\" text-anchor=\"middle\">epoch</text>\n</g>\n";

  if (opt.stage_boundary > 0) {
    const double x = X(opt.stage_boundary);
    s += "<line id=\"stage-boundary\" x1=\"" + fmt(x) + "\" y1=\"" + fmt(top) + "\" x2=\"" + fmt(x) + "\" y2=\"" +
         fmt(top + ph) + "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  }

  auto curve = [&](const char* id, const char* color, double MetricsRow::*field) {
    std::string pts;
    for (const auto& r : rows) {
      if (!pts.empty()) pts += ' ';
      pts += fmt(X(r.epoch)) + "," + fmt(Y(r.*field));
    }
    s += "<polyline id=\"" + std::string(id) + "\" fill=\"none\" stroke=\"" + color +
         "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
  };
  curve("AP_Novel", "#1f77b4", &MetricsRow::ap_novel);
  curve("AR_Novel", "#d62728", &MetricsRow::ar_novel);

  s += "<g id=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<line x1=\"" + fmt(left + pw - 110) + "\" y1=\"" + fmt(top + 10) + "\" x2=\"" + fmt(left + pw - 90) +
       "\" y2=\"" + fmt(top + 10) + "\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n";
  s += "<text x=\"" + fmt(left + pw - 84) + "\" y=\"" + fmt(top + 14) + "\">AP_Novel</text>\n";
  s += "<line x1=\"" + fmt(left + pw - 110) + "\" y1=\"" + fmt(top + 28) + "\" x2=\"" + fmt(left + pw - 90) +
       "\" y2=\"" + fmt(top + 28) + "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
  s += "<text x=\"" + fmt(left + pw - 84) + "\" y=\"" + fmt(top + 32) + "\">AR_Novel</text>\n</g>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace coda
