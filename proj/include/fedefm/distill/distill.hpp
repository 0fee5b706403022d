#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "fedefm/data/minibatch.hpp"
#include "fedefm/nn/autodiff.hpp"
#include "fedefm/nn/model.hpp"

namespace fedefm::distill {

struct DistillConfig {
  double beta = 0.5;         // weight of the soft-target term
  double temperature = 2.0;
  double learning_rate = 0.01;
  /// Round -> learning rate overrides; the entry with the largest key <= k
  /// applies from round k on.
  std::map<std::size_t, double> lr_schedule;
  /// Divide EMD weights by their sum before the update.
  bool normalize_weights = false;

  double lr_at(std::size_t round) const;
  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// A returned overseas expert acting as a teacher for silo i.
struct Teacher {
  std::size_t neighbor = 0;
  nn::ModelWeights weights;
  double emd_weight = 1.0;
};

using TeacherSet = std::vector<Teacher>;

/// Batch mean of
///   beta T^2 sum_j CE(target = softmax(t_j / T), prediction = softmax(s / T))
///   + (1 - beta) CE(softmax(s), y).
/// Teacher logits are constants. An empty teacher list with beta > 0 keeps
/// only the ground-truth term (and counts a warning).
double distill_loss(const nn::Tensor& student_logits, const std::vector<nn::Tensor>& teacher_logits,
                    const std::vector<std::size_t>& labels, const DistillConfig& cfg);

nn::Var distill_loss(nn::Var student_logits, const std::vector<nn::Tensor>& teacher_logits,
                     const std::vector<std::size_t>& labels, const DistillConfig& cfg);

/// theta - lr_k * sum_j w_j * grad L_MD^(j), where L_MD^(j) is the loss above
/// with teacher j alone. Teachers are reduced in ascending neighbor order.
nn::ModelWeights local_update(const nn::ModelWeights& weights, const TeacherSet& teachers,
                              const data::Minibatch& batch, const DistillConfig& cfg, std::size_t round);

/// One SGD step on mean cross-entropy.
nn::ModelWeights local_pretrain_step(const nn::ModelWeights& weights, const data::Minibatch& batch, double lr);

/// Mean cross-entropy of the model on a batch (no gradient).
double batch_loss(const nn::ModelWeights& weights, const data::Minibatch& batch);

}  // namespace fedefm::distill
