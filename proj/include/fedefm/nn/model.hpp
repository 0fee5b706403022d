#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedefm/data/minibatch.hpp"
#include "fedefm/nn/autodiff.hpp"
#include "fedefm/nn/tensor.hpp"

namespace fedefm::nn {

/// Shape of the patch-embedding classifier:
/// patchify -> linear embed -> GELU -> (linear -> GELU)* -> mean-pool -> head.
struct Architecture {
  std::size_t image_side = 8;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 8;
  std::vector<std::size_t> hidden_dims{16};
  std::size_t num_classes = 8;

  std::size_t grid_side() const { return image_side / patch_size; }
  std::size_t patches() const { return grid_side() * grid_side(); }
  std::size_t patch_dim() const { return patch_size * patch_size; }
  std::size_t pooled_dim() const {
    return hidden_dims.empty() ? embed_dim : hidden_dims.back();
  }

  /// Throws ConfigError when the image does not tile into patches.
  void validate() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Ordered named tensors; order is layer registration order.
class ParameterSet {
 public:
  void add(std::string name, Tensor value);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  /// Names and shapes agree entry by entry.
  bool congruent(const ParameterSet& other) const;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

bool bitwise_equal(const ParameterSet& a, const ParameterSet& b);

struct ModelWeights {
  Architecture arch;
  ParameterSet params;

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

struct Gradients {
  ParameterSet params;
};

/// H x W grid of C-dimensional embeddings; row p of `values` is cell p.
struct FeatureMap {
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor values;  // [H*W, C]

  std::size_t cells() const { return height * width; }
  std::size_t channels() const { return values.cols(); }
};

/// Layer names in registration order for the given architecture.
std::vector<std::string> layer_names(const Architecture& arch);

/// Scaled-normal initialization (std = 1/sqrt(fan_in)), zero biases.
ModelWeights init_weights(const Architecture& arch, std::uint64_t seed);
ModelWeights zero_weights(const Architecture& arch);

/// Throws ShapeError naming the first layer whose shape does not match `arch`.
void check_weights(const ModelWeights& weights);
void check_batch(const Architecture& arch, const data::Minibatch& batch);

/// [B, side, side] images -> [B*patches, patch_dim], patches in row-major
/// grid order, pixels in row-major order inside a patch.
Tensor patchify(const Architecture& arch, const Tensor& images);

struct ModelOutput {
  std::vector<FeatureMap> features;  // one per sample
  Tensor logits;                     // [B, classes]
};

/// Parameters of a ModelWeights registered on a graph, in layer order.
struct ParamVars {
  std::vector<std::pair<std::string, Var>> vars;
  Var at(const std::string& name) const;
};

ParamVars register_parameters(Graph& graph, const ModelWeights& weights,
                              bool requires_grad = true);

struct ModelVars {
  Var features;  // [B*patches, embed_dim], post-embedding, pre-nonlinearity
  Var logits;    // [B, classes]
};

ModelVars forward(Graph& graph, const Architecture& arch, const ParamVars& params,
                  const Tensor& images);

/// Pure evaluation path; bitwise deterministic for identical inputs.
ModelOutput forward(const ModelWeights& weights, const data::Minibatch& batch);

using LossFn = std::function<Var(Graph&, const ParamVars&, const data::Minibatch&)>;

struct ValueAndGrad {
  double loss = 0.0;
  Gradients grads;
};

/// Evaluates loss_fn and its gradient w.r.t. every parameter. Throws
/// NumericError naming the first layer that produced a non-finite value.
ValueAndGrad value_and_grad(const ModelWeights& weights, const LossFn& loss_fn,
                            const data::Minibatch& batch);

/// weights - lr * grads, elementwise.
ModelWeights sgd_step(const ModelWeights& weights, const Gradients& grads, double lr);

/// Softmax of logits / temperature for a single row.
std::vector<double> softmax_temperature(std::span<const double> logits, double temperature);

/// -sum target * log(predicted); predicted clamped at 1e-12.
double cross_entropy(std::span<const double> predicted, std::span<const double> target);
double cross_entropy(std::span<const double> predicted, std::size_t label);

/// Mean CE of softmax(logits) against integer labels, on the graph.
Var cross_entropy_loss(Var logits, const std::vector<std::size_t>& labels);

/// Fraction of argmax(logits) == label.
double accuracy(const Tensor& logits, const std::vector<std::size_t>& labels);

}  // namespace fedefm::nn
