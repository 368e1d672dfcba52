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

#include "dgpsim/metrics.hpp"

#include <algorithm>
#include <sstream>

namespace dgpsim {

namespace {

constexpr Index kSsimWindow = 4;

double window_ssim(const Eigen::Ref<const Eigen::MatrixXd>& a, const Eigen::Ref<const Eigen::MatrixXd>& b, double c1,
                   double c2) {
  const double n = static_cast<double>(a.size());
  const double mu_a = a.mean();
  const double mu_b = b.mean();
  const double var_a = (a.array() - mu_a).square().sum() / n;
  const double var_b = (b.array() - mu_b).square().sum() / n;
  const double cov = ((a.array() - mu_a) * (b.array() - mu_b)).sum() / n;
  return ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
}

}  // namespace

DistanceMetric parse_metric(const std::string& name) {
  if (name == "euclidean") return DistanceMetric::kEuclidean;
  if (name == "cosine") return DistanceMetric::kCosine;
  throw std::invalid_argument("unknown distance metric '" + name + "'");
}

std::string to_string(DistanceMetric metric) {
  return metric == DistanceMetric::kEuclidean ? "euclidean" : "cosine";
}

double vector_distance(const VectorXd& a, const VectorXd& b, DistanceMetric metric) {
  if (a.size() != b.size()) throw std::invalid_argument("distance: length mismatch");
  if (metric == DistanceMetric::kEuclidean) return (a - b).norm();
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - a.dot(b) / (na * nb);
}

double grad_distance(const GradientSet& a, const GradientSet& b, DistanceMetric metric) {
  require_same_structure(a, b, "grad_distance");
  return vector_distance(a.flatten(), b.flatten(), metric);
}

double grad_distance(const SparseGradient& a, const SparseGradient& b, DistanceMetric metric) {
  return grad_distance(densify(a), densify(b), metric);
}

double ssim(const Tensor<double>& x, const Tensor<double>& y, double dynamic_range) {
  if (x.shape() != y.shape()) throw std::invalid_argument("ssim: shape mismatch");
  if (!(dynamic_range > 0.0)) throw std::invalid_argument("dynamic range must be positive");
  const double c1 = std::pow(0.01 * dynamic_range, 2);
  const double c2 = std::pow(0.03 * dynamic_range, 2);
  const Eigen::MatrixXd a = x.matrix();
  const Eigen::MatrixXd b = y.matrix();
  if (a.rows() < kSsimWindow || a.cols() < kSsimWindow) return window_ssim(a, b, c1, c2);
  double total = 0.0;
  Index windows = 0;
  for (Index i = 0; i + kSsimWindow <= a.rows(); ++i) {
    for (Index j = 0; j + kSsimWindow <= a.cols(); ++j) {
      total += window_ssim(a.block(i, j, kSsimWindow, kSsimWindow), b.block(i, j, kSsimWindow, kSsimWindow), c1, c2);
      ++windows;
    }
  }
  return total / static_cast<double>(windows);
}

QualityScores image_quality(const Tensor<double>& x, const Tensor<double>& recovered, double dynamic_range) {
  if (x.shape() != recovered.shape()) throw std::invalid_argument("image_quality: shape mismatch");
  QualityScores q;
  q.mse = (x.data() - recovered.data()).squaredNorm() / static_cast<double>(x.size());
  q.psnr = q.mse == 0.0 ? std::numeric_limits<double>::infinity()
                        : 10.0 * std::log10(dynamic_range * dynamic_range / q.mse);
  q.ssim = ssim(x, recovered, dynamic_range);
  return q;
}

Tensor<double> as_image(const VectorXd& flat) {
  const Index d = flat.size();
  Index h = static_cast<Index>(std::sqrt(static_cast<double>(d)));
  while (h > 1 && d % h != 0) --h;
  return Tensor<double>({std::max<Index>(h, 1), d / std::max<Index>(h, 1)}, flat);
}

std::int64_t wire_bytes(const SparseGradient& wire) {
  if (wire.dense) return dense_bytes(wire.dense_size());
  std::int64_t bytes = 0;
  for (const auto& t : wire.tensors) bytes += 1 + static_cast<std::int64_t>(t.id.size()) + 4 + 8 * t.nnz();
  return bytes;
}

std::int64_t dense_bytes(Index param_count) { return 4 * static_cast<std::int64_t>(param_count); }

std::int64_t location_download_bytes(const LocationSet& locations) {
  return 4 * static_cast<std::int64_t>(locations.popcount()) + locations.bitmask_byte_count();
}

LedgerEntry& CommLedger::entry(int round, int user) {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->round == round && it->user == user) return *it;
  }
  entries_.push_back({round, user, 0, 0, 0});
  return entries_.back();
}

std::int64_t CommLedger::record_upload(int round, int user, const SparseGradient& wire) {
  const std::int64_t bytes = wire_bytes(wire);
  auto& e = entry(round, user);
  e.upload_bytes += bytes;
  e.upload_entries += wire.dense ? wire.dense_size() : wire.nnz();
  if (!wire.dense && bytes > dense_bytes(wire.dense_size())) {
    std::ostringstream os;
    os << "round " << round << " user " << user << ": sparse upload (" << bytes << " B) exceeds dense ("
       << dense_bytes(wire.dense_size()) << " B)";
    flags_.push_back(os.str());
  }
  return bytes;
}

std::int64_t CommLedger::record_download(int round, int user, std::int64_t bytes) {
  entry(round, user).download_bytes += bytes;
  return bytes;
}

std::int64_t CommLedger::total_upload() const {
  std::int64_t s = 0;
  for (const auto& e : entries_) s += e.upload_bytes;
  return s;
}

std::int64_t CommLedger::total_download() const {
  std::int64_t s = 0;
  for (const auto& e : entries_) s += e.download_bytes;
  return s;
}

std::int64_t CommLedger::total_upload_entries() const {
  std::int64_t s = 0;
  for (const auto& e : entries_) s += e.upload_entries;
  return s;
}

std::int64_t CommLedger::round_upload(int round) const {
  std::int64_t s = 0;
  for (const auto& e : entries_) {
    if (e.round == round) s += e.upload_bytes;
  }
  return s;
}

std::int64_t CommLedger::round_download(int round) const {
  std::int64_t s = 0;
  for (const auto& e : entries_) {
    if (e.round == round) s += e.download_bytes;
  }
  return s;
}

std::string CommLedger::to_csv() const {
  std::ostringstream os;
  os << "round,user,upload_bytes,download_bytes\n";
  for (const auto& e : entries_) os << e.round << ',' << e.user << ',' << e.upload_bytes << ',' << e.download_bytes << '\n';
  return os.str();
}

}  // namespace dgpsim
