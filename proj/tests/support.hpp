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

// Generators and independent reference implementations shared by the tests.
// The references are written from the definitions, deliberately without
// reusing library helpers.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dgpsim/defense.hpp"
#include "dgpsim/model.hpp"

namespace dgpsim::testing {

inline VectorXd random_vector(Rng& rng, Index n, double scale = 1.0) {
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

// Small integer magnitudes with random signs: many ties by construction.
inline VectorXd tied_vector(Rng& rng, Index n) {
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) {
    const double mag = static_cast<double>(1 + rng.uniform_index(4));
    v(i) = rng.uniform() < 0.5 ? -mag : mag;
  }
  return v;
}

inline GradientSet single_tensor(const VectorXd& v, const std::string& id = "g") {
  GradientSet g;
  g.add(id, Tensor<double>({v.size()}, v));
  return g;
}

inline GradientSet random_gradient_set(Rng& rng, const std::vector<Shape>& shapes) {
  GradientSet g;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    Tensor<double> t(shapes[i]);
    for (Index j = 0; j < t.size(); ++j) t.data()(j) = rng.normal();
    g.add("t" + std::to_string(i), std::move(t));
  }
  return g;
}

// Small random biases keep pre-activations off the ReLU kink at zero.
inline MlpModel random_model(Rng& rng, std::vector<Index> dims) {
  auto layers = MlpModel::random(dims, rng).layers();
  for (auto& layer : layers) {
    for (Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = 0.1 * rng.normal();
  }
  return MlpModel(std::move(layers));
}

inline Batch random_batch(Rng& rng, Index batch, Index dim, Index classes) {
  Batch b;
  b.inputs.resize(batch, dim);
  for (Index i = 0; i < b.inputs.size(); ++i) b.inputs.data()[i] = rng.uniform();
  for (Index i = 0; i < batch; ++i) b.labels.push_back(static_cast<int>(rng.uniform_index(static_cast<std::size_t>(classes))));
  return b;
}

// Kept positions of dual pruning for a fraction pair given in hundredths, so
// counts are exact integer arithmetic: floor(a * n / 100).
inline std::vector<bool> dual_prune_reference(const VectorXd& v, int top_hundredths, int bottom_hundredths) {
  const auto n = static_cast<long>(v.size());
  const long top = top_hundredths * n / 100;
  const long bottom = bottom_hundredths * n / 100;
  std::vector<std::pair<double, long>> ranked;
  for (long i = 0; i < n; ++i) ranked.emplace_back(std::abs(v(i)), i);
  // Larger magnitude first; equal magnitudes: lower index first.
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<bool> keep(static_cast<std::size_t>(n), false);
  for (long r = top; r < n - bottom; ++r) keep[static_cast<std::size_t>(ranked[static_cast<std::size_t>(r)].second)] = true;
  return keep;
}

// Sum of squares of the `count` largest magnitudes.
inline double top_energy(const VectorXd& v, long count) {
  std::vector<double> sq(v.data(), v.data() + v.size());
  for (auto& x : sq) x *= x;
  std::sort(sq.begin(), sq.end(), std::greater<>());
  double s = 0.0;
  for (long i = 0; i < count && i < static_cast<long>(sq.size()); ++i) s += sq[static_cast<std::size_t>(i)];
  return s;
}

// Central finite-difference gradient of the mean cross-entropy w.r.t. every
// parameter, evaluated through forward() only.
inline VectorXd finite_diff_param_grad(const MlpModel& model, const Batch& batch, double h) {
  const GradientSet params = model.parameters();
  const VectorXd flat = params.flatten();
  auto loss_at = [&](const VectorXd& p) {
    const MlpModel m = MlpModel::from_parameters(params.unflatten(p));
    const MatrixXd logits = forward(m, batch.inputs);
    double loss = 0.0;
    for (Index i = 0; i < logits.rows(); ++i) {
      const double mx = logits.row(i).maxCoeff();
      const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
      loss += lse - logits(i, batch.labels[static_cast<std::size_t>(i)]);
    }
    return loss / static_cast<double>(logits.rows());
  };
  VectorXd g(flat.size());
  for (Index i = 0; i < flat.size(); ++i) {
    VectorXd up = flat;
    VectorXd down = flat;
    up(i) += h;
    down(i) -= h;
    g(i) = (loss_at(up) - loss_at(down)) / (2.0 * h);
  }
  return g;
}

// SSIM by explicit loops over every 4x4 window (global window when smaller).
inline double ssim_reference(const MatrixXd& a, const MatrixXd& b, double range) {
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  auto window = [&](Index r0, Index c0, Index h, Index w) {
    double sa = 0, sb = 0;
    for (Index r = r0; r < r0 + h; ++r)
      for (Index c = c0; c < c0 + w; ++c) {
        sa += a(r, c);
        sb += b(r, c);
      }
    const double n = static_cast<double>(h * w);
    const double ma = sa / n;
    const double mb = sb / n;
    double va = 0, vb = 0, cov = 0;
    for (Index r = r0; r < r0 + h; ++r)
      for (Index c = c0; c < c0 + w; ++c) {
        va += (a(r, c) - ma) * (a(r, c) - ma);
        vb += (b(r, c) - mb) * (b(r, c) - mb);
        cov += (a(r, c) - ma) * (b(r, c) - mb);
      }
    va /= n;
    vb /= n;
    cov /= n;
    return (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  };
  if (a.rows() < 4 || a.cols() < 4) return window(0, 0, a.rows(), a.cols());
  double total = 0;
  int count = 0;
  for (Index r = 0; r + 4 <= a.rows(); ++r)
    for (Index c = 0; c + 4 <= a.cols(); ++c) {
      total += window(r, c, 4, 4);
      ++count;
    }
  return total / count;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dgpsim_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace dgpsim::testing
