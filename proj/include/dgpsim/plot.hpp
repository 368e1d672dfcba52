// Copyright 2026 The dgpsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <string>
#include <vector>

#include "dgpsim/numerics.hpp"

namespace dgpsim {

struct Series {
  std::string label;
  std::vector<double> xs;
  std::vector<double> ys;
};

// Standalone SVG documents; `connect` draws polylines, otherwise markers only.
std::string svg_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                      const std::string& y_label, bool connect = true);

// Plain (ASCII, P2) 8-bit greymap; values are clipped to [0, 1].
std::string pgm_image(const Tensor<double>& image);

}  // namespace dgpsim
