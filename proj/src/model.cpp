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

#include "dgpsim/model.hpp"

#include <json.hpp>

namespace dgpsim {

void Batch::validate(Index num_classes) const {
  if (inputs.rows() < 1) throw std::invalid_argument("batch must hold at least one sample");
  if (static_cast<Index>(labels.size()) != inputs.rows()) {
    throw std::invalid_argument("batch has " + std::to_string(inputs.rows()) + " inputs but " +
                                std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw std::invalid_argument("label " + std::to_string(y) + " out of range");
  }
}

MatrixXd one_hot(std::span<const int> labels, Index num_classes) {
  MatrixXd t = MatrixXd::Zero(static_cast<Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) t(static_cast<Index>(i), labels[i]) = 1.0;
  return t;
}

LossAndGrad loss_and_grad(const MlpModel& model, const Batch& batch) {
  batch.validate(model.num_classes());
  const auto tr = backprop(model, batch.inputs, one_hot(batch.labels, model.num_classes()));
  return {tr.loss, gradients_from_trace(model, tr)};
}

void ImprintSpec::validate() const {
  if (thresholds.size() < 2) throw std::invalid_argument("imprint needs at least two thresholds");
  for (std::size_t k = 1; k < thresholds.size(); ++k) {
    if (!(thresholds[k] > thresholds[k - 1])) throw std::invalid_argument("imprint thresholds must strictly increase");
  }
  if (measurement.size() == 0) throw std::invalid_argument("imprint measurement is empty");
}

MlpModel insert_imprint(const MlpModel& model, const ImprintSpec& spec) {
  spec.validate();
  const Index d = model.input_dim();
  if (spec.measurement.size() != d) throw std::invalid_argument("imprint measurement dim does not match model input");
  const Index r = static_cast<Index>(spec.rows());
  const Index width = spec.pass_through ? r + d : r;

  DenseLayer<double> imprint;
  imprint.weight = MatrixXd::Zero(width, d);
  imprint.bias = VectorXd::Zero(width);
  for (Index k = 0; k < r; ++k) {
    imprint.weight.row(k) = spec.measurement.transpose();
    imprint.bias[k] = -spec.thresholds[static_cast<std::size_t>(k)];
  }
  if (spec.pass_through) imprint.weight.bottomRows(d).setIdentity();

  const auto& first = model.layers().front();
  const VectorXd shared = first.weight.rowwise().mean();
  DenseLayer<double> widened;
  widened.weight.resize(first.weight.rows(), width);
  widened.weight.leftCols(r) = shared.replicate(1, r);
  if (spec.pass_through) widened.weight.rightCols(d) = first.weight;
  widened.bias = first.bias;

  std::vector<DenseLayer<double>> layers{std::move(imprint), std::move(widened)};
  for (std::size_t l = 1; l < model.depth(); ++l) layers.push_back(model.layers()[l]);
  return MlpModel(std::move(layers));
}

std::string checkpoint_to_json(const MlpModel& model) {
  nlohmann::json j = nlohmann::json::object();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.count(); ++i) {
    const auto& t = params.tensors[i];
    std::vector<double> data(t.data().data(), t.data().data() + t.size());
    j[params.ids[i]] = {{"shape", t.shape()}, {"data", data}};
  }
  return j.dump() + "\n";
}

MlpModel checkpoint_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("checkpoint must be a JSON object");
  TensorSet<double> params;
  // Keys are stored sorted; rebuild in layer order.
  for (std::size_t l = 0;; ++l) {
    if (!j.contains(weight_id(l))) break;
    for (const auto& id : {weight_id(l), bias_id(l)}) {
      if (!j.contains(id)) throw std::invalid_argument("checkpoint missing " + id);
      const auto shape = j.at(id).at("shape").get<Shape>();
      const auto data = j.at(id).at("data").get<std::vector<double>>();
      params.add(id, Tensor<double>(shape, Eigen::Map<const VectorXd>(data.data(), static_cast<Index>(data.size()))));
    }
  }
  return MlpModel::from_parameters(params);
}

}  // namespace dgpsim
