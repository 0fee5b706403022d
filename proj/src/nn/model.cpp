#include "fedefm/nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fedefm/common/errors.hpp"
#include "fedefm/common/rng.hpp"
#include "fedefm/common/warnings.hpp"
#include "fedefm/nn/ops.hpp"

namespace fedefm::nn {

void Architecture::validate() const {
  if (patch_size == 0 || image_side == 0) throw ConfigError("model: image_side and patch_size must be positive");
  if (image_side % patch_size != 0)
    throw ConfigError("model: image_side " + std::to_string(image_side) + " is not divisible by patch_size " +
                      std::to_string(patch_size));
  if (embed_dim == 0) throw ConfigError("model: embed_dim must be positive");
  if (num_classes < 2) throw ConfigError("model: num_classes must be at least 2");
  for (auto h : hidden_dims)
    if (h == 0) throw ConfigError("model: hidden_dims entries must be positive");
}

void ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw Error("duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

const Tensor& ParameterSet::at(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return e.second;
  throw ShapeError("missing parameter '" + name + "'");
}

Tensor& ParameterSet::at(const std::string& name) {
  for (auto& e : entries_)
    if (e.first == name) return e.second;
  throw ShapeError("missing parameter '" + name + "'");
}

bool ParameterSet::congruent(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].first != other.entries_[i].first ||
        entries_[i].second.shape() != other.entries_[i].second.shape())
      return false;
  return true;
}

bool bitwise_equal(const ParameterSet& a, const ParameterSet& b) {
  if (!a.congruent(b)) return false;
  auto ib = b.begin();
  for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib)
    if (!bitwise_equal(ia->second, ib->second)) return false;
  return true;
}

namespace {

struct LayerSpec {
  std::string name;
  std::size_t out;
  std::size_t in;
};

std::vector<LayerSpec> layer_specs(const Architecture& arch) {
  std::vector<LayerSpec> specs;
  specs.push_back({"embed", arch.embed_dim, arch.patch_dim()});
  std::size_t in = arch.embed_dim;
  for (std::size_t i = 0; i < arch.hidden_dims.size(); ++i) {
    specs.push_back({"mlp" + std::to_string(i), arch.hidden_dims[i], in});
    in = arch.hidden_dims[i];
  }
  specs.push_back({"head", arch.num_classes, in});
  return specs;
}

}  // namespace

std::vector<std::string> layer_names(const Architecture& arch) {
  std::vector<std::string> names;
  for (const auto& s : layer_specs(arch)) {
    names.push_back(s.name + ".weight");
    names.push_back(s.name + ".bias");
  }
  return names;
}

ModelWeights init_weights(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  ModelWeights w{arch, {}};
  Rng rng(seed);
  for (const auto& s : layer_specs(arch)) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(s.in)));
    Tensor weight({s.out, s.in});
    for (auto& v : weight.values()) v = dist(rng);
    w.params.add(s.name + ".weight", std::move(weight));
    w.params.add(s.name + ".bias", Tensor({s.out}, 0.0));
  }
  return w;
}

ModelWeights zero_weights(const Architecture& arch) {
  arch.validate();
  ModelWeights w{arch, {}};
  for (const auto& s : layer_specs(arch)) {
    w.params.add(s.name + ".weight", Tensor({s.out, s.in}, 0.0));
    w.params.add(s.name + ".bias", Tensor({s.out}, 0.0));
  }
  return w;
}

void check_weights(const ModelWeights& weights) {
  const auto specs = layer_specs(weights.arch);
  if (weights.params.size() != 2 * specs.size())
    throw ShapeError("weights hold " + std::to_string(weights.params.size()) + " tensors, architecture needs " +
                     std::to_string(2 * specs.size()));
  for (const auto& s : specs) {
    const Shape ws{s.out, s.in}, bs{s.out};
    if (!weights.params.contains(s.name + ".weight") || weights.params.at(s.name + ".weight").shape() != ws)
      throw ShapeError("layer '" + s.name + ".weight' does not have shape " + shape_string(ws));
    if (!weights.params.contains(s.name + ".bias") || weights.params.at(s.name + ".bias").shape() != bs)
      throw ShapeError("layer '" + s.name + ".bias' does not have shape " + shape_string(bs));
  }
}

void check_batch(const Architecture& arch, const data::Minibatch& batch) {
  const Tensor& im = batch.images;
  if (im.rank() != 3 || im.dim(1) != arch.image_side || im.dim(2) != arch.image_side)
    throw ShapeError("layer 'embed': batch images " + shape_string(im.shape()) + " do not match image_side " +
                     std::to_string(arch.image_side));
  if (batch.labels.size() != im.dim(0)) throw ShapeError("batch label count differs from image count");
}

Tensor patchify(const Architecture& arch, const Tensor& images) {
  const std::size_t b = images.dim(0), side = arch.image_side, ps = arch.patch_size, g = arch.grid_side();
  Tensor out({b * arch.patches(), arch.patch_dim()});
  std::size_t row = 0;
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t gy = 0; gy < g; ++gy)
      for (std::size_t gx = 0; gx < g; ++gx, ++row)
        for (std::size_t py = 0; py < ps; ++py)
          for (std::size_t px = 0; px < ps; ++px)
            out[row * arch.patch_dim() + py * ps + px] =
                images[(s * side + gy * ps + py) * side + gx * ps + px];
  return out;
}

Var ParamVars::at(const std::string& name) const {
  for (const auto& [n, v] : vars)
    if (n == name) return v;
  throw ShapeError("missing parameter '" + name + "'");
}

ParamVars register_parameters(Graph& graph, const ModelWeights& weights, bool requires_grad) {
  ParamVars pv;
  for (const auto& [name, t] : weights.params)
    pv.vars.emplace_back(name, requires_grad ? graph.parameter(t, name) : graph.constant(t, name));
  return pv;
}

ModelVars forward(Graph& graph, const Architecture& arch, const ParamVars& params, const Tensor& images) {
  const std::string saved_scope = graph.scope();
  graph.set_scope("patchify");
  Var x = graph.constant(patchify(arch, images), "patches");

  graph.set_scope("embed");
  Var features = add_row_bias(matmul_transposed(x, params.at("embed.weight")), params.at("embed.bias"));
  Var h = gelu(features);
  for (std::size_t i = 0; i < arch.hidden_dims.size(); ++i) {
    const std::string name = "mlp" + std::to_string(i);
    graph.set_scope(name);
    h = gelu(add_row_bias(matmul_transposed(h, params.at(name + ".weight")), params.at(name + ".bias")));
  }
  graph.set_scope("pool");
  Var pooled = segment_mean_rows(h, arch.patches());
  graph.set_scope("head");
  Var logits = add_row_bias(matmul_transposed(pooled, params.at("head.weight")), params.at("head.bias"));
  graph.set_scope(saved_scope);
  return {features, logits};
}

ModelOutput forward(const ModelWeights& weights, const data::Minibatch& batch) {
  check_weights(weights);
  check_batch(weights.arch, batch);
  if (batch.size() == 0) throw InputError("forward: empty minibatch");
  Graph graph;
  const ParamVars pv = register_parameters(graph, weights, /*requires_grad=*/false);
  const ModelVars mv = forward(graph, weights.arch, pv, batch.images);

  ModelOutput out;
  out.logits = mv.logits.value();
  const Tensor& f = mv.features.value();
  const std::size_t n = weights.arch.patches(), c = weights.arch.embed_dim, g = weights.arch.grid_side();
  for (std::size_t s = 0; s < batch.size(); ++s) {
    std::vector<double> rows(f.values().begin() + static_cast<std::ptrdiff_t>(s * n * c),
                             f.values().begin() + static_cast<std::ptrdiff_t>((s + 1) * n * c));
    out.features.push_back(FeatureMap{g, g, Tensor({n, c}, std::move(rows))});
  }
  return out;
}

ValueAndGrad value_and_grad(const ModelWeights& weights, const LossFn& loss_fn, const data::Minibatch& batch) {
  check_weights(weights);
  Graph graph;
  const ParamVars pv = register_parameters(graph, weights);
  Var loss = loss_fn(graph, pv, batch);
  if (loss.value().size() != 1) throw ShapeError("loss must be a scalar");
  if (!std::isfinite(loss.value()[0])) {
    const std::string layer = graph.first_non_finite().value_or("loss");
    throw NumericError("non-finite loss; first non-finite value in '" + layer + "'", layer);
  }
  graph.backward(loss);

  ValueAndGrad out;
  out.loss = loss.value()[0];
  for (const auto& [name, v] : pv.vars) out.grads.params.add(name, graph.grad(v));
  return out;
}

ModelWeights sgd_step(const ModelWeights& weights, const Gradients& grads, double lr) {
  if (!(lr >= 0.0)) throw InputError("learning rate must be non-negative");
  if (!weights.params.congruent(grads.params)) throw ShapeError("sgd_step: gradients are not congruent with weights");
  ModelWeights out = weights;
  auto g = grads.params.begin();
  for (auto& [name, t] : out.params) {
    const Tensor& gt = (g++)->second;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] -= lr * gt[i];
  }
  return out;
}

std::vector<double> softmax_temperature(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw InputError("softmax temperature must be positive");
  if (logits.empty()) throw ShapeError("softmax of an empty row");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / temperature);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

double cross_entropy(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size()) throw ShapeError("cross_entropy: distribution sizes differ");
  double ce = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (target[i] == 0.0) continue;
    double p = predicted[i];
    if (p < kLogClamp) {
      ++warnings().log_clamped;
      p = kLogClamp;
    }
    ce -= target[i] * std::log(p);
  }
  return ce;
}

double cross_entropy(std::span<const double> predicted, std::size_t label) {
  if (label >= predicted.size()) throw InputError("cross_entropy: label out of range");
  std::vector<double> onehot(predicted.size(), 0.0);
  onehot[label] = 1.0;
  return cross_entropy(predicted, onehot);
}

Var cross_entropy_loss(Var logits, const std::vector<std::size_t>& labels) {
  const Tensor& l = logits.value();
  if (l.rank() != 2 || l.dim(0) != labels.size()) throw ShapeError("cross_entropy_loss: logits/labels mismatch");
  Tensor onehot(l.shape(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= l.dim(1)) throw InputError("cross_entropy_loss: label out of range");
    onehot.at(i, labels[i]) = 1.0;
  }
  Graph& g = logits.graph();
  Var y = g.constant(std::move(onehot), "labels");
  Var logp = log(softmax_rows(logits, 1.0));
  return scale(sum(mul(y, logp)), -1.0 / static_cast<double>(labels.size()));
}

double accuracy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  if (labels.empty()) return 0.0;
  const std::size_t c = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    hits += best == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace fedefm::nn
