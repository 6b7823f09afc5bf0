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

#ifndef MPRLAB_PLOT_H_
#define MPRLAB_PLOT_H_

// Minimal static SVG charts, so run artifacts need no plotting runtime.

#include <iosfwd>
#include <string>
#include <vector>

namespace mprlab {
namespace plot {

struct ScatterPoint {
  double x = 0.0;
  double y = 0.0;
  std::string group;
};

// Points colored by group, with a legend listing exactly the groups present
// in first-seen order.
void WriteScatterSvg(const std::vector<ScatterPoint>& points,
                     const std::string& title, std::ostream& out);

struct CurveSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> stddev;  // optional; drawn as a band when non-empty
};

void WriteCurveSvg(const std::vector<CurveSeries>& series,
                   const std::string& title, const std::string& x_label,
                   const std::string& y_label, std::ostream& out);

// Color used for the i-th group or series.
std::string PaletteColor(int index);

}  // namespace plot
}  // namespace mprlab

#endif  // MPRLAB_PLOT_H_
