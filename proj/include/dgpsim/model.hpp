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

#include <span>
#include <string>
#include <vector>

#include "dgpsim/numerics.hpp"

namespace dgpsim {

template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weight;  // [out x in]
  Vector<Scalar> bias;    // [out]
};

inline std::string weight_id(std::size_t layer) { return "fc" + std::to_string(layer) + ".weight"; }
inline std::string bias_id(std::size_t layer) { return "fc" + std::to_string(layer) + ".bias"; }

/// Fully connected classifier: ReLU between layers, identity at the output.
template <typename Scalar>
class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<DenseLayer<Scalar>> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw std::invalid_argument("Mlp needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].bias.size() != layers_[l].weight.rows()) {
        throw std::invalid_argument("layer " + std::to_string(l) + ": bias size does not match weight rows");
      }
      if (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows()) {
        throw std::invalid_argument("layer " + std::to_string(l) + ": input dim does not chain");
      }
    }
  }

  // He-normal weights, zero biases. dims = {input, hidden..., classes}.
  static Mlp random(const std::vector<Index>& dims, Rng& rng) {
    if (dims.size() < 2) throw std::invalid_argument("Mlp::random needs at least input and output dims");
    std::vector<DenseLayer<Scalar>> layers;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const double std = std::sqrt(2.0 / static_cast<double>(dims[l]));
      DenseLayer<Scalar> layer;
      layer.weight.resize(dims[l + 1], dims[l]);
      for (Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = Scalar(std * rng.normal());
      layer.bias = Vector<Scalar>::Zero(dims[l + 1]);
      layers.push_back(std::move(layer));
    }
    return Mlp(std::move(layers));
  }

  const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }
  std::size_t depth() const { return layers_.size(); }
  Index input_dim() const { return layers_.front().weight.cols(); }
  Index num_classes() const { return layers_.back().weight.rows(); }

  Index param_count() const {
    Index n = 0;
    for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
    return n;
  }

  TensorSet<Scalar> parameters() const {
    TensorSet<Scalar> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      out.add(weight_id(l), Tensor<Scalar>::from_matrix(layers_[l].weight));
      out.add(bias_id(l), Tensor<Scalar>({layers_[l].bias.size()}, layers_[l].bias));
    }
    return out;
  }

  static Mlp from_parameters(const TensorSet<Scalar>& params) {
    if (params.count() == 0 || params.count() % 2 != 0) {
      throw std::invalid_argument("parameter set must hold weight/bias pairs");
    }
    std::vector<DenseLayer<Scalar>> layers;
    for (std::size_t l = 0; l < params.count() / 2; ++l) {
      const auto& w = params.at(weight_id(l));
      const auto& b = params.at(bias_id(l));
      if (w.shape().size() != 2) throw std::invalid_argument(weight_id(l) + " must be 2-d");
      layers.push_back({Matrix<Scalar>(w.matrix()), b.data()});
    }
    return Mlp(std::move(layers));
  }

  // W <- W - lr * step, with step shaped like parameters().
  Mlp updated(const TensorSet<Scalar>& step, Scalar lr) const {
    const auto params = parameters();
    return from_parameters(params - lr * step);
  }

  friend bool operator==(const Mlp& a, const Mlp& b) { return a.parameters() == b.parameters(); }

 private:
  std::vector<DenseLayer<Scalar>> layers_;
};

using MlpModel = Mlp<double>;

struct Batch {
  MatrixXd inputs;          // [B x d]
  std::vector<int> labels;  // length B

  Index size() const { return inputs.rows(); }
  void validate(Index num_classes) const;
};

// Row-wise one-hot targets.
MatrixXd one_hot(std::span<const int> labels, Index num_classes);

/// Intermediate values of one forward and backward pass, kept for callers
/// that differentiate through the gradient itself.
template <typename Scalar>
struct BackpropTrace {
  std::vector<Matrix<Scalar>> activations;  // a_0 = x, ..., a_{L-1}; each [B x width]
  std::vector<Matrix<Scalar>> pre;          // h_1 ... h_L
  std::vector<Matrix<Scalar>> deltas;       // dLoss/dh_l, l = 1..L
  Matrix<Scalar> probs;                     // softmax(h_L)
  Scalar loss = Scalar(0);
};

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits) {
  Matrix<Scalar> p(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const Scalar m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

template <typename Scalar>
Matrix<Scalar> forward(const Mlp<Scalar>& model, const Matrix<Scalar>& inputs) {
  if (inputs.cols() != model.input_dim()) {
    throw std::invalid_argument("forward: input dim " + std::to_string(inputs.cols()) + " but model expects " +
                                std::to_string(model.input_dim()));
  }
  Matrix<Scalar> a = inputs;
  const auto& layers = model.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix<Scalar> h = a * layers[l].weight.transpose();
    h.rowwise() += layers[l].bias.transpose();
    a = (l + 1 < layers.size()) ? Matrix<Scalar>(h.cwiseMax(Scalar(0))) : h;
  }
  return a;
}

/// Mean softmax cross-entropy against target distributions (rows sum to 1),
/// with the full backward pass recorded.
template <typename Scalar>
BackpropTrace<Scalar> backprop(const Mlp<Scalar>& model, const Matrix<Scalar>& inputs,
                               const Matrix<Scalar>& targets) {
  if (inputs.cols() != model.input_dim()) {
    throw std::invalid_argument("backprop: input dim " + std::to_string(inputs.cols()) + " but model expects " +
                                std::to_string(model.input_dim()));
  }
  if (targets.rows() != inputs.rows() || targets.cols() != model.num_classes()) {
    throw std::invalid_argument("backprop: target shape mismatch");
  }
  const auto& layers = model.layers();
  const std::size_t depth = layers.size();
  const Scalar batch = Scalar(inputs.rows());

  BackpropTrace<Scalar> tr;
  tr.activations.push_back(inputs);
  for (std::size_t l = 0; l < depth; ++l) {
    Matrix<Scalar> h = tr.activations.back() * layers[l].weight.transpose();
    h.rowwise() += layers[l].bias.transpose();
    tr.pre.push_back(h);
    if (l + 1 < depth) tr.activations.push_back(h.cwiseMax(Scalar(0)));
  }

  const Matrix<Scalar>& logits = tr.pre.back();
  tr.probs = softmax_rows(logits);
  Scalar loss(0);
  for (Index i = 0; i < logits.rows(); ++i) {
    const Scalar m = logits.row(i).maxCoeff();
    const Scalar lse = m + std::log((logits.row(i).array() - m).exp().sum());
    loss += lse * targets.row(i).sum() - targets.row(i).dot(logits.row(i));
  }
  tr.loss = loss / batch;

  tr.deltas.resize(depth);
  tr.deltas[depth - 1] = (tr.probs - targets) / batch;
  for (std::size_t l = depth - 1; l > 0; --l) {
    Matrix<Scalar> back = tr.deltas[l] * layers[l].weight;
    tr.deltas[l - 1] = (tr.pre[l - 1].array() > Scalar(0)).select(back, Scalar(0));
  }
  return tr;
}

template <typename Scalar>
TensorSet<Scalar> gradients_from_trace(const Mlp<Scalar>& model, const BackpropTrace<Scalar>& tr) {
  TensorSet<Scalar> g;
  for (std::size_t l = 0; l < model.depth(); ++l) {
    Matrix<Scalar> gw = tr.deltas[l].transpose() * tr.activations[l];
    Vector<Scalar> gb = tr.deltas[l].colwise().sum().transpose();
    g.add(weight_id(l), Tensor<Scalar>::from_matrix(gw));
    g.add(bias_id(l), Tensor<Scalar>({gb.size()}, gb));
  }
  return g;
}

struct LossAndGrad {
  double loss = 0.0;
  GradientSet grads;
};

LossAndGrad loss_and_grad(const MlpModel& model, const Batch& batch);

struct ImprintSpec {
  VectorXd measurement;           // [d]
  std::vector<double> thresholds;  // strictly increasing, at least two
  bool pass_through = true;

  std::size_t rows() const { return thresholds.size(); }
  void validate() const;
};

/// Prepends an imprint layer of R = thresholds.size() ReLU rows, row k being
/// (measurement, -c_k). With pass_through, d identity rows follow so the
/// original inputs reach the old first layer unchanged (inputs are assumed
/// non-negative). Every imprint output feeds the next layer through the same
/// shared column (the column mean of the old first-layer weights), which makes
/// the backpropagated error of a sample identical across its active rows.
MlpModel insert_imprint(const MlpModel& model, const ImprintSpec& spec);

// Checkpoint: JSON object {tensor_id: {"shape": [...], "data": [...]}}.
std::string checkpoint_to_json(const MlpModel& model);
MlpModel checkpoint_from_json(const std::string& text);

}  // namespace dgpsim
