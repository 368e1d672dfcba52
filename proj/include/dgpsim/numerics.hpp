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

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dgpsim {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Row-major so that a flattened weight matrix matches the tensor layout used
// by the wire format and checkpoints.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VectorXd = Vector<double>;
using MatrixXd = Matrix<double>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape);

/// Dense row-major tensor: a shape plus a flat Eigen vector.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector<Scalar>::Zero(shape_size(shape_))) {}

  Tensor(Shape shape, Vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_to_string(shape_));
    }
  }

  static Tensor from_matrix(const Matrix<Scalar>& m) {
    return Tensor({m.rows(), m.cols()}, Eigen::Map<const Vector<Scalar>>(m.data(), m.size()));
  }

  const Shape& shape() const { return shape_; }
  Index size() const { return data_.size(); }
  const Vector<Scalar>& data() const { return data_; }
  Vector<Scalar>& data() { return data_; }

  Index rows() const { return shape_.empty() ? 1 : shape_.front(); }
  Index cols() const { return shape_.size() < 2 ? 1 : size() / rows(); }

  Eigen::Map<const Matrix<Scalar>> matrix() const { return {data_.data(), rows(), cols()}; }
  Eigen::Map<Matrix<Scalar>> matrix() { return {data_.data(), rows(), cols()}; }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Vector<Scalar> data_;
};

/// Ordered collection of named tensors. Gradients, error residuals and model
/// parameters all use this layout so defenses stay model-agnostic.
template <typename Scalar>
struct TensorSet {
  std::vector<std::string> ids;
  std::vector<Tensor<Scalar>> tensors;

  std::size_t count() const { return tensors.size(); }

  Index total_size() const {
    Index n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  void add(std::string id, Tensor<Scalar> t) {
    ids.push_back(std::move(id));
    tensors.push_back(std::move(t));
  }

  const Tensor<Scalar>& at(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] == id) return tensors[i];
    }
    throw std::out_of_range("no tensor named '" + id + "'");
  }

  bool same_structure(const TensorSet& other) const {
    if (ids != other.ids) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (tensors[i].shape() != other.tensors[i].shape()) return false;
    }
    return true;
  }

  static TensorSet zeros_like(const TensorSet& other) {
    TensorSet out;
    for (std::size_t i = 0; i < other.count(); ++i) out.add(other.ids[i], Tensor<Scalar>(other.tensors[i].shape()));
    return out;
  }

  Vector<Scalar> flatten() const {
    Vector<Scalar> out(total_size());
    Index off = 0;
    for (const auto& t : tensors) {
      out.segment(off, t.size()) = t.data();
      off += t.size();
    }
    return out;
  }

  // Inverse of flatten(); keeps this set's ids and shapes.
  TensorSet unflatten(const Vector<Scalar>& flat) const {
    if (flat.size() != total_size()) throw std::invalid_argument("unflatten: length mismatch");
    TensorSet out;
    Index off = 0;
    for (std::size_t i = 0; i < count(); ++i) {
      out.add(ids[i], Tensor<Scalar>(tensors[i].shape(), flat.segment(off, tensors[i].size())));
      off += tensors[i].size();
    }
    return out;
  }

  bool all_finite() const {
    for (const auto& t : tensors) {
      if (!t.all_finite()) return false;
    }
    return true;
  }

  friend bool operator==(const TensorSet& a, const TensorSet& b) {
    return a.ids == b.ids && a.tensors == b.tensors;
  }
};

using GradientSet = TensorSet<double>;

template <typename Scalar>
void require_same_structure(const TensorSet<Scalar>& a, const TensorSet<Scalar>& b, const char* what) {
  if (!a.same_structure(b)) throw std::invalid_argument(std::string(what) + ": tensor structure mismatch");
}

// Elementwise arithmetic over tensor sets. Structure is checked once; the
// loops are plain Eigen vector expressions.

template <typename Scalar>
TensorSet<Scalar> operator+(const TensorSet<Scalar>& a, const TensorSet<Scalar>& b) {
  require_same_structure(a, b, "add");
  TensorSet<Scalar> out = a;
  for (std::size_t i = 0; i < out.count(); ++i) out.tensors[i].data() += b.tensors[i].data();
  return out;
}

template <typename Scalar>
TensorSet<Scalar> operator-(const TensorSet<Scalar>& a, const TensorSet<Scalar>& b) {
  require_same_structure(a, b, "sub");
  TensorSet<Scalar> out = a;
  for (std::size_t i = 0; i < out.count(); ++i) out.tensors[i].data() -= b.tensors[i].data();
  return out;
}

template <typename Scalar>
TensorSet<Scalar> operator*(Scalar s, const TensorSet<Scalar>& a) {
  TensorSet<Scalar> out = a;
  for (auto& t : out.tensors) t.data() *= s;
  return out;
}

template <typename Scalar>
TensorSet<Scalar>& operator+=(TensorSet<Scalar>& a, const TensorSet<Scalar>& b) {
  require_same_structure(a, b, "add");
  for (std::size_t i = 0; i < a.count(); ++i) a.tensors[i].data() += b.tensors[i].data();
  return a;
}

template <typename Scalar>
Scalar dot(const TensorSet<Scalar>& a, const TensorSet<Scalar>& b) {
  require_same_structure(a, b, "dot");
  Scalar s(0);
  for (std::size_t i = 0; i < a.count(); ++i) s += a.tensors[i].data().dot(b.tensors[i].data());
  return s;
}

template <typename Scalar>
Scalar squared_norm(const TensorSet<Scalar>& a) {
  Scalar s(0);
  for (const auto& t : a.tensors) s += t.data().squaredNorm();
  return s;
}

template <typename Scalar>
Scalar norm(const TensorSet<Scalar>& a) {
  using std::sqrt;
  return sqrt(squared_norm(a));
}

/// Mean of a non-empty list of equally-shaped tensor sets.
template <typename Scalar>
TensorSet<Scalar> mean(const std::vector<TensorSet<Scalar>>& sets) {
  if (sets.empty()) throw std::invalid_argument("mean of empty list");
  TensorSet<Scalar> acc = sets.front();
  for (std::size_t i = 1; i < sets.size(); ++i) acc += sets[i];
  return (Scalar(1) / Scalar(sets.size())) * acc;
}

/// Deterministic random stream. A (seed, stream_id) pair fully determines the
/// sequence; distinct stream ids give independent-looking sequences.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n);
  // Standard normal via Box-Muller; the second variate is cached.
  double normal();

  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Named stream ids, one per consumer of randomness.
namespace streams {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kDpNoise = 3;
inline constexpr std::uint64_t kAdgpLeader = 4;
inline constexpr std::uint64_t kAttackInit = 5;
inline constexpr std::uint64_t kBatchBase = 1000;  // + user index
}  // namespace streams

Tensor<double> gaussian(Rng& rng, const Shape& shape, double mean, double std);

struct AdamState {
  VectorXd first_moment;
  VectorXd second_moment;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(Index n) {
    AdamState s;
    s.first_moment = VectorXd::Zero(n);
    s.second_moment = VectorXd::Zero(n);
    return s;
  }
};

/// Advances the moments and returns the bias-corrected update to subtract
/// from the parameters.
VectorXd adam_step(AdamState& state, const VectorXd& grad, double lr);

}  // namespace dgpsim
