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

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dgpsim/defense.hpp"
#include "dgpsim/numerics.hpp"

namespace dgpsim {

enum class DistanceMetric { kEuclidean, kCosine };

DistanceMetric parse_metric(const std::string& name);
std::string to_string(DistanceMetric metric);

// Euclidean: ||a - b||. Cosine: 1 - <a,b> / (||a|| ||b||), and 1 when either
// operand has zero norm.
double grad_distance(const GradientSet& a, const GradientSet& b, DistanceMetric metric);
double grad_distance(const SparseGradient& a, const SparseGradient& b, DistanceMetric metric);
double vector_distance(const VectorXd& a, const VectorXd& b, DistanceMetric metric);

struct QualityScores {
  double mse = 0.0;
  double psnr = std::numeric_limits<double>::infinity();
  double ssim = 1.0;
};

// Images are 2-d tensors [h x w]. SSIM uses a uniform 4x4 window at stride 1
// (one global window for images smaller than 4x4), biased window statistics,
// C1 = (0.01 R)^2 and C2 = (0.03 R)^2.
QualityScores image_quality(const Tensor<double>& x, const Tensor<double>& recovered, double dynamic_range);
double ssim(const Tensor<double>& x, const Tensor<double>& y, double dynamic_range);

// Reshapes a flat sample into the most square [h x w] grid with h * w = d.
Tensor<double> as_image(const VectorXd& flat);

enum class Direction { kUpload, kDownload };

// Bytes a sparse wire occupies: sum over tensors of (1 + id length) + 4 +
// 8 * nnz. Dense wires cost 4 bytes per parameter.
std::int64_t wire_bytes(const SparseGradient& wire);
std::int64_t dense_bytes(Index param_count);
// Values restricted to a location set plus its bitmask.
std::int64_t location_download_bytes(const LocationSet& locations);

struct LedgerEntry {
  int round = 0;
  int user = 0;
  std::int64_t upload_bytes = 0;
  std::int64_t download_bytes = 0;
  std::int64_t upload_entries = 0;
};

/// Per-round, per-user byte accounting. Single writer.
class CommLedger {
 public:
  // Returns the bytes charged. Flags uploads whose sparse encoding costs more
  // than sending the tensor densely.
  std::int64_t record_upload(int round, int user, const SparseGradient& wire);
  std::int64_t record_download(int round, int user, std::int64_t bytes);

  const std::vector<LedgerEntry>& entries() const { return entries_; }
  std::int64_t total_upload() const;
  std::int64_t total_download() const;
  std::int64_t total_upload_entries() const;
  std::int64_t round_upload(int round) const;
  std::int64_t round_download(int round) const;
  const std::vector<std::string>& flags() const { return flags_; }

  // "round,user,upload_bytes,download_bytes" with one row per entry.
  std::string to_csv() const;

 private:
  LedgerEntry& entry(int round, int user);

  std::vector<LedgerEntry> entries_;
  std::vector<std::string> flags_;
};

}  // namespace dgpsim
