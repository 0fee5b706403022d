#pragma once

#include <cstddef>

#include "fedefm/data/minibatch.hpp"
#include "fedefm/emd/cost.hpp"
#include "fedefm/emd/transport.hpp"
#include "fedefm/nn/autodiff.hpp"
#include "fedefm/nn/model.hpp"

namespace fedefm::emd {

struct EmdOptions {
  MarginalScheme scheme = MarginalScheme::uniform;
  bool clamp = true;  // clamp the batch-mean score into [0, 1]
  SolverOptions solver;
  double ridge = kDefaultRidge;
};

/// Differentiable EMD similarity between two [n, C] feature maps on a graph.
/// The backward pass goes through the implicit flow Jacobian and the cosine
/// cost; marginals are treated as constants.
nn::Var emd_similarity(nn::Var u, nn::Var v, const EmdOptions& options = {});

/// Similarity of two feature maps: the score of the optimal flow.
double feature_similarity(const nn::FeatureMap& u, const nn::FeatureMap& v, const EmdOptions& options = {});

struct ModelSimilarity {
  double raw = 0.0;     // batch mean of per-sample scores, in [-1, 1]
  double weight = 0.0;  // raw clamped to [0, 1] when options.clamp
};

/// Runs both models on the probe batch and compares their feature maps
/// sample by sample. Throws ShapeError on architecture mismatch.
ModelSimilarity compare_models(const nn::ModelWeights& local, const nn::ModelWeights& returned,
                               const data::Minibatch& probe, const EmdOptions& options = {});

/// compare_models(...).weight
double emd_between_models(const nn::ModelWeights& local, const nn::ModelWeights& returned,
                          const data::Minibatch& probe, const EmdOptions& options = {});

}  // namespace fedefm::emd
