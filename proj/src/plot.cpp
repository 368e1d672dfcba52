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

#include "dgpsim/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace dgpsim {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kMargin = 50.0;
constexpr std::array<const char*, 6> kColors{"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
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

struct Range {
  double lo = 0.0;
  double hi = 1.0;
  double map(double v, double a, double b) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

Range range_of(const std::vector<Series>& series, bool use_x) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& s : series) {
    for (double v : use_x ? s.xs : s.ys) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) return {};
  if (hi - lo < 1e-12) return {lo - 0.5, hi + 0.5};
  return {lo, hi};
}

}  // namespace

std::string svg_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                      const std::string& y_label, bool connect) {
  const Range xr = range_of(series, true);
  const Range yr = range_of(series, false);
  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\">" << escape(title) << "</text>\n";
  os << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\"" << kWidth - kMargin << "\" y2=\""
     << kHeight - kMargin << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\"" << kHeight - kMargin
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">" << escape(x_label)
     << " [" << xr.lo << ", " << xr.hi << "]</text>\n";
  os << "<text x=\"15\" y=\"" << kHeight / 2 << "\" transform=\"rotate(-90 15 " << kHeight / 2
     << ")\" text-anchor=\"middle\">" << escape(y_label) << " [" << yr.lo << ", " << yr.hi << "]</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % kColors.size()];
    const auto& ser = series[s];
    std::ostringstream pts;
    pts.precision(6);
    for (std::size_t i = 0; i < std::min(ser.xs.size(), ser.ys.size()); ++i) {
      if (!std::isfinite(ser.xs[i]) || !std::isfinite(ser.ys[i])) continue;
      const double px = xr.map(ser.xs[i], kMargin, kWidth - kMargin);
      const double py = yr.map(ser.ys[i], kHeight - kMargin, kMargin);
      if (connect) {
        pts << px << ',' << py << ' ';
      } else {
        os << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
    }
    if (connect) os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"" << pts.str() << "\"/>\n";
    os << "<text x=\"" << kWidth - kMargin - 150 << "\" y=\"" << kMargin + 16.0 * static_cast<double>(s)
       << "\" fill=\"" << color << "\">" << escape(ser.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string pgm_image(const Tensor<double>& image) {
  if (image.shape().size() != 2) throw std::invalid_argument("pgm_image expects a 2-d tensor");
  const auto m = image.matrix();
  std::ostringstream os;
  os << "P2\n" << m.cols() << ' ' << m.rows() << "\n255\n";
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      const double v = std::isfinite(m(r, c)) ? std::clamp(m(r, c), 0.0, 1.0) : 0.0;
      os << (c ? " " : "") << static_cast<int>(std::lround(255.0 * v));
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace dgpsim
