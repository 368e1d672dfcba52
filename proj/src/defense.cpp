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

#include "dgpsim/defense.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

namespace dgpsim {

namespace {

constexpr double kCountSlack = 1e-9;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::invalid_argument("wire truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void DgpConfig::validate() const {
  if (!(k1 >= 0.0 && k1 < 1.0) || !(k2 >= 0.0 && k2 < 1.0)) {
    throw std::invalid_argument("DGP fractions must lie in [0, 1)");
  }
  if (!(k1 + k2 < 1.0)) throw std::invalid_argument("DGP requires k1 + k2 < 1 (retained band would be empty)");
}

DgpConfig DgpConfig::from_sum_and_ratio(double sum_k, double p) {
  if (!(p > 0.0)) throw std::invalid_argument("p must be positive");
  const DgpConfig cfg{sum_k * p / (1.0 + p), sum_k / (1.0 + p)};
  cfg.validate();
  return cfg;
}

Index floor_count(double fraction, Index n) {
  return static_cast<Index>(std::floor(fraction * static_cast<double>(n) + kCountSlack));
}

Index ceil_count(double fraction, Index n) {
  return static_cast<Index>(std::ceil(fraction * static_cast<double>(n) - kCountSlack));
}

std::vector<Index> magnitude_order(const VectorXd& v) {
  std::vector<Index> order(static_cast<std::size_t>(v.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&v](Index a, Index b) {
    const double ma = std::abs(v[a]);
    const double mb = std::abs(v[b]);
    return ma != mb ? ma > mb : a < b;
  });
  return order;
}

Index SparseGradient::nnz() const {
  Index n = 0;
  for (const auto& t : tensors) n += t.nnz();
  return n;
}

Index SparseGradient::dense_size() const {
  Index n = 0;
  for (const auto& t : tensors) n += t.dense_size();
  return n;
}

GradientSet densify(const SparseGradient& wire) {
  GradientSet out;
  for (const auto& st : wire.tensors) {
    Tensor<double> t(st.shape);
    for (std::size_t j = 0; j < st.indices.size(); ++j) t.data()[st.indices[j]] = st.values[j];
    out.add(st.id, std::move(t));
  }
  return out;
}

SparseTensor sparse_from_mask(const std::string& id, const Tensor<double>& t, const std::vector<bool>& keep) {
  SparseTensor st{id, t.shape(), {}, {}};
  for (Index i = 0; i < t.size(); ++i) {
    if (keep[static_cast<std::size_t>(i)] && t.data()[i] != 0.0) {
      st.indices.push_back(static_cast<std::uint32_t>(i));
      st.values.push_back(t.data()[i]);
    }
  }
  return st;
}

SparseGradient dense_wire(const GradientSet& grads) {
  SparseGradient wire;
  wire.dense = true;
  for (std::size_t i = 0; i < grads.count(); ++i) {
    wire.tensors.push_back(
        sparse_from_mask(grads.ids[i], grads.tensors[i], std::vector<bool>(grads.tensors[i].size(), true)));
  }
  return wire;
}

std::vector<std::uint8_t> encode_wire(const SparseGradient& wire) {
  std::vector<std::uint8_t> out;
  if (wire.dense) {
    for (const auto& st : wire.tensors) {
      std::vector<double> full(static_cast<std::size_t>(st.dense_size()), 0.0);
      for (std::size_t j = 0; j < st.indices.size(); ++j) full[st.indices[j]] = st.values[j];
      for (double v : full) put_f32(out, v);
    }
    return out;
  }
  for (const auto& st : wire.tensors) {
    if (st.id.size() > 255) throw std::invalid_argument("tensor id too long for wire format");
    out.push_back(static_cast<std::uint8_t>(st.id.size()));
    out.insert(out.end(), st.id.begin(), st.id.end());
    put_u32(out, static_cast<std::uint32_t>(st.nnz()));
    for (std::size_t j = 0; j < st.indices.size(); ++j) {
      put_u32(out, st.indices[j]);
      put_f32(out, st.values[j]);
    }
  }
  return out;
}

SparseGradient decode_wire(std::span<const std::uint8_t> bytes, const GradientSet& like, bool dense) {
  Reader rd(bytes);
  SparseGradient wire;
  wire.dense = dense;
  for (std::size_t i = 0; i < like.count(); ++i) {
    SparseTensor st{like.ids[i], like.tensors[i].shape(), {}, {}};
    if (dense) {
      for (Index j = 0; j < like.tensors[i].size(); ++j) {
        const float v = rd.f32();
        if (v != 0.0f) {
          st.indices.push_back(static_cast<std::uint32_t>(j));
          st.values.push_back(v);
        }
      }
    } else {
      const std::string id = rd.str(rd.u8());
      if (id != like.ids[i]) throw std::invalid_argument("wire tensor '" + id + "' where '" + like.ids[i] + "' expected");
      const std::uint32_t count = rd.u32();
      for (std::uint32_t j = 0; j < count; ++j) {
        const std::uint32_t idx = rd.u32();
        if (idx >= static_cast<std::uint32_t>(like.tensors[i].size())) throw std::invalid_argument("wire index out of range");
        if (!st.indices.empty() && idx <= st.indices.back()) throw std::invalid_argument("wire indices not increasing");
        st.indices.push_back(idx);
        st.values.push_back(rd.f32());
      }
    }
    wire.tensors.push_back(std::move(st));
  }
  if (!rd.done()) throw std::invalid_argument("trailing bytes after wire");
  return wire;
}

Index LocationSet::popcount(std::size_t tensor) const {
  return static_cast<Index>(std::count(masks[tensor].begin(), masks[tensor].end(), true));
}

Index LocationSet::popcount() const {
  Index n = 0;
  for (std::size_t i = 0; i < masks.size(); ++i) n += popcount(i);
  return n;
}

std::vector<std::uint8_t> LocationSet::bitmask_bytes(std::size_t tensor) const {
  const auto& m = masks[tensor];
  std::vector<std::uint8_t> out((m.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i]) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return out;
}

Index LocationSet::bitmask_byte_count() const {
  Index n = 0;
  for (const auto& m : masks) n += static_cast<Index>((m.size() + 7) / 8);
  return n;
}

SparseGradient dgp_prune(const GradientSet& grads, const DgpConfig& cfg) {
  cfg.validate();
  SparseGradient wire;
  for (std::size_t i = 0; i < grads.count(); ++i) {
    const auto& t = grads.tensors[i];
    const Index n = t.size();
    const Index n_top = floor_count(cfg.k1, n);
    const Index n_bot = floor_count(cfg.k2, n);
    std::vector<bool> keep(static_cast<std::size_t>(n), false);
    if (n_top + n_bot >= n) {
      if (n > 0) wire.warnings.push_back(grads.ids[i] + ": pruning removes every entry");
    } else {
      const auto order = magnitude_order(t.data());
      for (Index r = n_top; r < n - n_bot; ++r) keep[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = true;
    }
    wire.tensors.push_back(sparse_from_mask(grads.ids[i], t, keep));
  }
  return wire;
}

SparseGradient topk_prune(const GradientSet& grads, double k) {
  if (!(k > 0.0 && k <= 1.0)) throw std::invalid_argument("top-k fraction must lie in (0, 1]");
  SparseGradient wire;
  for (std::size_t i = 0; i < grads.count(); ++i) {
    const auto& t = grads.tensors[i];
    const Index keep_n = ceil_count(k, t.size());
    const auto order = magnitude_order(t.data());
    std::vector<bool> keep(static_cast<std::size_t>(t.size()), false);
    for (Index r = 0; r < keep_n; ++r) keep[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = true;
    wire.tensors.push_back(sparse_from_mask(grads.ids[i], t, keep));
  }
  return wire;
}

GradientSet dp_noise(const GradientSet& grads, double std, Rng& rng) {
  if (!(std >= 0.0)) throw std::invalid_argument("noise std must be non-negative");
  GradientSet out = grads;
  if (std == 0.0) return out;
  for (auto& t : out.tensors) {
    for (Index j = 0; j < t.size(); ++j) t.data()[j] += std * rng.normal();
  }
  return out;
}

bool is_sparsifying(const Defense& defense) {
  return std::holds_alternative<TopK>(defense) || std::holds_alternative<Dgp>(defense);
}

SparseGradient apply_defense(const Defense& defense, const GradientSet& grads, Rng* rng) {
  if (std::holds_alternative<NoDefense>(defense)) return dense_wire(grads);
  if (const auto* t = std::get_if<TopK>(&defense)) return topk_prune(grads, t->k);
  if (const auto* d = std::get_if<Dgp>(&defense)) return dgp_prune(grads, d->cfg);
  const auto& dp = std::get<DpGaussian>(defense);
  if (rng == nullptr) throw std::invalid_argument("DP noise needs a random stream");
  return dense_wire(dp_noise(grads, dp.std, *rng));
}

EfRoundResult ef_round(const GradientSet& grad, const ErrorState& state, const Defense& defense, Rng* rng) {
  require_same_structure(grad, state.residual, "ef_round");
  const GradientSet compensated = grad + state.residual;
  EfRoundResult out;
  out.wire = apply_defense(defense, compensated, rng);
  out.state.residual = compensated - densify(out.wire);
  return out;
}

AdgpResult adgp_round(std::span<const AdgpUser> users, double k, const DgpConfig& cfg, Rng& rng) {
  cfg.validate();
  if (users.empty()) throw std::invalid_argument("ADGP needs at least one user");
  if (!(k > 0.0 && 2.0 * k <= 1.0)) throw std::invalid_argument("ADGP requires 0 < k and 2k <= 1");
  if (!(cfg.k1 < k)) throw std::invalid_argument("ADGP requires k1 < k");

  std::vector<GradientSet> compensated;
  for (const auto& u : users) {
    require_same_structure(u.grad, u.state.residual, "adgp_round");
    compensated.push_back(u.grad + u.state.residual);
  }

  AdgpResult out;
  out.leader = rng.uniform_index(users.size());
  const GradientSet& lead = compensated[out.leader];
  for (std::size_t i = 0; i < lead.count(); ++i) {
    const Index n = lead.tensors[i].size();
    const Index budget = floor_count(2.0 * k, n);
    const auto order = magnitude_order(lead.tensors[i].data());
    std::vector<bool> mask(static_cast<std::size_t>(n), false);
    for (Index r = 0; r < budget; ++r) mask[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = true;
    out.locations.ids.push_back(lead.ids[i]);
    out.locations.masks.push_back(std::move(mask));
  }

  for (const auto& p : compensated) {
    SparseGradient wire;
    for (std::size_t i = 0; i < p.count(); ++i) {
      const auto& t = p.tensors[i];
      const Index n = t.size();
      const Index n_top = floor_count(cfg.k1, n);
      const Index send = floor_count(k, n);
      const auto order = magnitude_order(t.data());
      const auto& in_set = out.locations.masks[i];
      std::vector<bool> keep(static_cast<std::size_t>(n), false);
      Index taken = 0;
      for (Index r = n_top; r < n && taken < send; ++r) {
        const auto pos = static_cast<std::size_t>(order[static_cast<std::size_t>(r)]);
        if (in_set[pos]) {
          keep[pos] = true;
          ++taken;
        }
      }
      wire.tensors.push_back(sparse_from_mask(p.ids[i], t, keep));
    }
    out.states.push_back({p - densify(wire)});
    out.wires.push_back(std::move(wire));
  }
  return out;
}

}  // namespace dgpsim
