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
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dgpsim/numerics.hpp"

namespace dgpsim {

/// Dual pruning fractions: the top-k1 largest and bottom-k2 smallest entries
/// (by magnitude) of every tensor are removed.
struct DgpConfig {
  double k1 = 0.0;
  double k2 = 0.0;

  double p() const { return k1 / k2; }
  void validate() const;

  // Splits a total pruning fraction into (k1, k2) with k1 / k2 = p.
  static DgpConfig from_sum_and_ratio(double sum_k, double p);
};

// floor(fraction * n), tolerant of representation error in the product
// (0.29 * 100 counts as 29).
Index floor_count(double fraction, Index n);
Index ceil_count(double fraction, Index n);

// Positions sorted by |v| descending; equal magnitudes keep the lower index
// first. This single total order defines "top", "bottom" and tie-breaking for
// every pruning rule.
std::vector<Index> magnitude_order(const VectorXd& v);

struct SparseTensor {
  std::string id;
  Shape shape;
  std::vector<std::uint32_t> indices;  // strictly increasing
  std::vector<double> values;          // nonzero

  Index nnz() const { return static_cast<Index>(indices.size()); }
  Index dense_size() const { return shape_size(shape); }
};

/// A user's upload. Sparse wires carry (index, value) pairs per tensor; a
/// dense wire (no defense, DP noise) carries every value and no indices.
struct SparseGradient {
  std::vector<SparseTensor> tensors;
  bool dense = false;
  std::vector<std::string> warnings;

  Index nnz() const;
  Index dense_size() const;
};

GradientSet densify(const SparseGradient& wire);
// Keeps the positions where keep[i] is set and the value is nonzero.
SparseTensor sparse_from_mask(const std::string& id, const Tensor<double>& t, const std::vector<bool>& keep);
SparseGradient dense_wire(const GradientSet& grads);

// Wire bytes, per tensor: u8 id length, id bytes, u32 LE entry count, then
// entries of (u32 LE index, f32 LE value). Dense wires are f32 LE values only.
std::vector<std::uint8_t> encode_wire(const SparseGradient& wire);
// `like` supplies tensor ids and shapes.
SparseGradient decode_wire(std::span<const std::uint8_t> bytes, const GradientSet& like, bool dense);

struct ErrorState {
  GradientSet residual;

  static ErrorState zeros_like(const GradientSet& grads) { return {GradientSet::zeros_like(grads)}; }
};

/// Per-tensor bitmask over parameter positions.
struct LocationSet {
  std::vector<std::string> ids;
  std::vector<std::vector<bool>> masks;

  Index popcount() const;
  Index popcount(std::size_t tensor) const;
  // ceil(n / 8) bytes per tensor, LSB-first within a byte.
  std::vector<std::uint8_t> bitmask_bytes(std::size_t tensor) const;
  Index bitmask_byte_count() const;
};

SparseGradient dgp_prune(const GradientSet& grads, const DgpConfig& cfg);
SparseGradient topk_prune(const GradientSet& grads, double k);
GradientSet dp_noise(const GradientSet& grads, double std, Rng& rng);

struct NoDefense {};
struct TopK {
  double k = 0.2;
};
struct Dgp {
  DgpConfig cfg;
};
struct DpGaussian {
  double std = 1e-2;
};
using Defense = std::variant<NoDefense, TopK, Dgp, DpGaussian>;

bool is_sparsifying(const Defense& defense);
// rng is only drawn from by DpGaussian.
SparseGradient apply_defense(const Defense& defense, const GradientSet& grads, Rng* rng);

struct EfRoundResult {
  SparseGradient wire;
  ErrorState state;
};

/// One error-feedback step: P = grad + e, wire = defense(P),
/// e' = P - densify(wire).
EfRoundResult ef_round(const GradientSet& grad, const ErrorState& state, const Defense& defense,
                       Rng* rng = nullptr);

struct AdgpUser {
  GradientSet grad;
  ErrorState state;
};

struct AdgpResult {
  std::vector<SparseGradient> wires;
  std::vector<ErrorState> states;
  LocationSet locations;
  std::size_t leader = 0;
};

/// Aligned DGP round. A leader drawn from rng publishes the top-2k positions
/// of its error-compensated gradient; each user drops its own top-k1 entries
/// and sends its floor(k*n) largest remaining entries that fall inside the
/// published set.
AdgpResult adgp_round(std::span<const AdgpUser> users, double k, const DgpConfig& cfg, Rng& rng);

}  // namespace dgpsim
