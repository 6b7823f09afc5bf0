// Copyright 2026 The MPRLab Authors
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

#include "mprlab/plot.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "mprlab/common.h"

namespace mprlab {
namespace plot {
namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 480.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 170.0;  // room for the legend
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;

std::string Escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string Num(double value) {
  std::ostringstream s;
  s.precision(4);
  s << std::fixed << value;
  return s.str();
}

std::string FormatTick(double value) {
  std::ostringstream s;
  s.precision(3);
  s << value;
  return s.str();
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void Add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  // Pads the range so that single points and flat lines stay visible.
  void Finish() {
    if (!std::isfinite(lo)) {
      lo = 0.0;
      hi = 1.0;
    }
    double pad = (hi - lo) * 0.05;
    if (pad == 0.0) pad = std::max(1e-6, std::abs(lo) * 0.05 + 0.5);
    lo -= pad;
    hi += pad;
  }
};

// Maps data coordinates into the plot area.
struct Frame {
  Range x;
  Range y;

  double Px(double v) const {
    return kLeft + (v - x.lo) / (x.hi - x.lo) * (kWidth - kLeft - kRight);
  }
  double Py(double v) const {
    return kHeight - kBottom -
           (v - y.lo) / (y.hi - y.lo) * (kHeight - kTop - kBottom);
  }
};

void Header(const std::string& title, std::ostream& out) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " "
      << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" "
      << "font-size=\"15\">" << Escape(title) << "</text>\n";
}

void Axes(const Frame& frame, const std::string& x_label,
          const std::string& y_label, std::ostream& out) {
  const double x0 = kLeft, x1 = kWidth - kRight;
  const double y0 = kHeight - kBottom, y1 = kTop;
  out << "<rect x=\"" << x0 << "\" y=\"" << y1 << "\" width=\"" << x1 - x0
      << "\" height=\"" << y0 - y1
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double fx = frame.x.lo + (frame.x.hi - frame.x.lo) * i / 4.0;
    double fy = frame.y.lo + (frame.y.hi - frame.y.lo) * i / 4.0;
    out << "<text x=\"" << Num(frame.Px(fx)) << "\" y=\"" << y0 + 16
        << "\" text-anchor=\"middle\">" << FormatTick(fx) << "</text>\n";
    out << "<text x=\"" << x0 - 6 << "\" y=\"" << Num(frame.Py(fy) + 4)
        << "\" text-anchor=\"end\">" << FormatTick(fy) << "</text>\n";
  }
  if (!x_label.empty()) {
    out << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 10
        << "\" text-anchor=\"middle\">" << Escape(x_label) << "</text>\n";
  }
  if (!y_label.empty()) {
    out << "<text transform=\"translate(16," << (y0 + y1) / 2
        << ") rotate(-90)\" text-anchor=\"middle\">" << Escape(y_label)
        << "</text>\n";
  }
}

void Legend(const std::vector<std::string>& names, std::ostream& out) {
  const double x = kWidth - kRight + 14;
  for (size_t i = 0; i < names.size(); ++i) {
    double y = kTop + 10 + 18.0 * i;
    out << "<rect x=\"" << x << "\" y=\"" << y - 9
        << "\" width=\"10\" height=\"10\" fill=\""
        << PaletteColor(static_cast<int>(i)) << "\"/>\n";
    out << "<text class=\"legend\" x=\"" << x + 16 << "\" y=\"" << y << "\">"
        << Escape(names[i]) << "</text>\n";
  }
}

}  // namespace

std::string PaletteColor(int index) {
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                                  "#bcbd22", "#17becf"};
  return kColors[index % 10];
}

void WriteScatterSvg(const std::vector<ScatterPoint>& points,
                     const std::string& title, std::ostream& out) {
  std::vector<std::string> groups;
  Frame frame;
  for (const ScatterPoint& p : points) {
    if (std::find(groups.begin(), groups.end(), p.group) == groups.end()) {
      groups.push_back(p.group);
    }
    frame.x.Add(p.x);
    frame.y.Add(p.y);
  }
  frame.x.Finish();
  frame.y.Finish();
  Header(title, out);
  Axes(frame, "MDS 1", "MDS 2", out);
  for (const ScatterPoint& p : points) {
    int g = static_cast<int>(std::find(groups.begin(), groups.end(), p.group) -
                             groups.begin());
    out << "<circle cx=\"" << Num(frame.Px(p.x)) << "\" cy=\""
        << Num(frame.Py(p.y)) << "\" r=\"2.5\" fill=\"" << PaletteColor(g)
        << "\" fill-opacity=\"0.7\"/>\n";
  }
  Legend(groups, out);
  out << "</svg>\n";
}

void WriteCurveSvg(const std::vector<CurveSeries>& series,
                   const std::string& title, const std::string& x_label,
                   const std::string& y_label, std::ostream& out) {
  Frame frame;
  std::vector<std::string> names;
  for (const CurveSeries& s : series) {
    Check(s.x.size() == s.mean.size(), "curve x and mean lengths differ");
    Check(s.stddev.empty() || s.stddev.size() == s.mean.size(),
          "curve stddev length differs from mean");
    names.push_back(s.name);
    for (size_t i = 0; i < s.x.size(); ++i) {
      frame.x.Add(s.x[i]);
      double sd = s.stddev.empty() ? 0.0 : s.stddev[i];
      frame.y.Add(s.mean[i] - sd);
      frame.y.Add(s.mean[i] + sd);
    }
  }
  frame.x.Finish();
  frame.y.Finish();
  Header(title, out);
  Axes(frame, x_label, y_label, out);
  for (size_t k = 0; k < series.size(); ++k) {
    const CurveSeries& s = series[k];
    if (s.x.empty()) continue;
    const std::string color = PaletteColor(static_cast<int>(k));
    if (!s.stddev.empty()) {
      out << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" points=\"";
      for (size_t i = 0; i < s.x.size(); ++i) {
        out << Num(frame.Px(s.x[i])) << "," << Num(frame.Py(s.mean[i] + s.stddev[i]))
            << " ";
      }
      for (size_t i = s.x.size(); i-- > 0;) {
        out << Num(frame.Px(s.x[i])) << "," << Num(frame.Py(s.mean[i] - s.stddev[i]))
            << " ";
      }
      out << "\"/>\n";
    }
    out << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i) {
      out << Num(frame.Px(s.x[i])) << "," << Num(frame.Py(s.mean[i])) << " ";
    }
    out << "\"/>\n";
  }
  Legend(names, out);
  out << "</svg>\n";
}

}  // namespace plot
}  // namespace mprlab
