// Copyright 2026 The traitlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "traitlab/error.hpp"

// Static SVG bar charts for report artifacts. Output is a pure function of
// the input so charts hash identically across reruns.
namespace traitlab::svg {

struct Bar {
  std::string label;
  double value = 0.0;
};

struct Series {
  std::string name;
  std::vector<double> values;  // one per group
};

inline std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string value_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

namespace detail {

inline constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#59a14f",
                                           "#e15759", "#76b7b2", "#edc948"};

struct Frame {
  double width = 0, height = 0;
  double left = 60, right = 20, top = 40, bottom = 60;
  double lo = 0, hi = 0;  // value range, lo <= 0 <= hi

  double plot_w() const { return width - left - right; }
  double plot_h() const { return height - top - bottom; }
  double y(double v) const { return top + (hi - v) / (hi - lo) * plot_h(); }
};

inline Frame frame(double width, double height,
                   const std::vector<double>& values) {
  Frame f;
  f.width = width;
  f.height = height;
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidArgument("svg: non-finite value");
    f.lo = std::min(f.lo, v);
    f.hi = std::max(f.hi, v);
  }
  if (f.hi == f.lo) f.hi = f.lo + 1.0;
  return f;
}

inline std::string open(const Frame& f, std::string_view title) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                  num(f.width) + "\" height=\"" + num(f.height) +
                  "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(f.width / 2) +
       "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) +
       "</text>\n";
  // Axis and baseline.
  s += "<line x1=\"" + num(f.left) + "\" y1=\"" + num(f.top) + "\" x2=\"" +
       num(f.left) + "\" y2=\"" + num(f.top + f.plot_h()) +
       "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(f.left) + "\" y1=\"" + num(f.y(0)) + "\" x2=\"" +
       num(f.left + f.plot_w()) + "\" y2=\"" + num(f.y(0)) +
       "\" stroke=\"black\"/>\n";
  for (double v : {f.lo, f.hi}) {
    s += "<text x=\"" + num(f.left - 4) + "\" y=\"" + num(f.y(v) + 4) +
         "\" text-anchor=\"end\">" + value_label(v) + "</text>\n";
  }
  return s;
}

inline std::string rect(double x, double w, const Frame& f, double v,
                        const char* colour) {
  const double y0 = f.y(std::max(v, 0.0));
  const double h = std::abs(f.y(v) - f.y(0));
  return "<rect x=\"" + num(x) + "\" y=\"" + num(y0) + "\" width=\"" +
         num(w) + "\" height=\"" + num(h) + "\" fill=\"" + colour + "\"/>\n";
}

}  // namespace detail

inline std::string bar_chart(std::string_view title,
                             const std::vector<Bar>& bars,
                             double width = 640, double height = 360) {
  if (bars.empty()) throw InvalidArgument("svg: no bars");
  std::vector<double> vals;
  for (const auto& b : bars) vals.push_back(b.value);
  const auto f = detail::frame(width, height, vals);
  std::string s = detail::open(f, title);
  const double slot = f.plot_w() / static_cast<double>(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double x = f.left + slot * static_cast<double>(i) + slot * 0.15;
    s += detail::rect(x, slot * 0.7, f, bars[i].value, detail::kPalette[0]);
    s += "<text x=\"" + num(x + slot * 0.35) + "\" y=\"" +
         num(f.y(std::max(bars[i].value, 0.0)) - 3) +
         "\" text-anchor=\"middle\">" + value_label(bars[i].value) +
         "</text>\n";
    s += "<text x=\"" + num(x + slot * 0.35) + "\" y=\"" +
         num(f.top + f.plot_h() + 16) + "\" text-anchor=\"middle\">" +
         escape(bars[i].label) + "</text>\n";
  }
  return s + "</svg>\n";
}

// Side-by-side bars: one group per label, one bar per series.
inline std::string grouped_bar_chart(std::string_view title,
                                     const std::vector<std::string>& groups,
                                     const std::vector<Series>& series,
                                     double width = 720, double height = 380) {
  if (groups.empty() || series.empty()) {
    throw InvalidArgument("svg: empty grouped chart");
  }
  std::vector<double> vals;
  for (const auto& sr : series) {
    if (sr.values.size() != groups.size()) {
      throw InvalidArgument("svg: series '" + sr.name + "' has " +
                            std::to_string(sr.values.size()) +
                            " values for " + std::to_string(groups.size()) +
                            " groups");
    }
    vals.insert(vals.end(), sr.values.begin(), sr.values.end());
  }
  const auto f = detail::frame(width, height, vals);
  std::string s = detail::open(f, title);
  const double slot = f.plot_w() / static_cast<double>(groups.size());
  const double bw = slot * 0.8 / static_cast<double>(series.size());
  const std::size_t ncol = std::size(detail::kPalette);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double gx = f.left + slot * static_cast<double>(g) + slot * 0.1;
    for (std::size_t k = 0; k < series.size(); ++k) {
      s += detail::rect(gx + bw * static_cast<double>(k), bw, f,
                        series[k].values[g], detail::kPalette[k % ncol]);
    }
    s += "<text x=\"" + num(gx + slot * 0.4) + "\" y=\"" +
         num(f.top + f.plot_h() + 16) + "\" text-anchor=\"middle\">" +
         escape(groups[g]) + "</text>\n";
  }
  // Legend along the bottom.
  for (std::size_t k = 0; k < series.size(); ++k) {
    const double lx = f.left + 110.0 * static_cast<double>(k);
    const double ly = height - 18;
    s += "<rect x=\"" + num(lx) + "\" y=\"" + num(ly - 9) +
         "\" width=\"10\" height=\"10\" fill=\"" +
         detail::kPalette[k % ncol] + "\"/>\n";
    s += "<text x=\"" + num(lx + 14) + "\" y=\"" + num(ly) + "\">" +
         escape(series[k].name) + "</text>\n";
  }
  return s + "</svg>\n";
}

}  // namespace traitlab::svg
