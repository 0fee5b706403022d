#include "fedefm/distill/distill.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>

#include "fedefm/common/errors.hpp"
#include "fedefm/common/log.hpp"
#include "fedefm/common/warnings.hpp"
#include "fedefm/nn/ops.hpp"

namespace fedefm::distill {

double DistillConfig::lr_at(std::size_t round) const {
  auto it = lr_schedule.upper_bound(round);
  if (it == lr_schedule.begin()) return learning_rate;
  return std::prev(it)->second;
}

void DistillConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("distill.beta must lie in [0, 1]");
  if (!(temperature > 0.0)) throw ConfigError("distill.temperature must be positive");
  if (!(learning_rate >= 0.0)) throw ConfigError("distill.learning_rate must be non-negative");
  for (const auto& [k, v] : lr_schedule)
    if (!(v >= 0.0)) throw ConfigError("distill.lr_schedule." + std::to_string(k) + " must be non-negative");
}

namespace {

void check_logits(const nn::Tensor& student, const std::vector<nn::Tensor>& teachers,
                  const std::vector<std::size_t>& labels) {
  if (student.rank() != 2 || student.dim(0) != labels.size())
    throw ShapeError("distill_loss: student logits do not match the label count");
  for (const auto& t : teachers)
    if (t.shape() != student.shape()) throw ShapeError("distill_loss: teacher logits differ in shape");
  for (auto y : labels)
    if (y >= student.dim(1)) throw InputError("distill_loss: label out of range");
}

bool soft_term_active(const std::vector<nn::Tensor>& teachers, const DistillConfig& cfg) {
  if (cfg.beta == 0.0) return false;
  if (teachers.empty()) {
    ++warnings().empty_teachers;
    return false;
  }
  return true;
}

nn::Tensor soften(const nn::Tensor& logits, double temperature) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  nn::Tensor out(logits.shape());
  for (std::size_t i = 0; i < b; ++i) {
    const auto p = nn::softmax_temperature(logits.values().subspan(i * c, c), temperature);
    std::copy(p.begin(), p.end(), out.values().begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  return out;
}

}  // namespace

double distill_loss(const nn::Tensor& student_logits, const std::vector<nn::Tensor>& teacher_logits,
                    const std::vector<std::size_t>& labels, const DistillConfig& cfg) {
  check_logits(student_logits, teacher_logits, labels);
  const std::size_t b = student_logits.dim(0), c = student_logits.dim(1);
  const double t = cfg.temperature;
  const bool soft = soft_term_active(teacher_logits, cfg);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const auto row = student_logits.values().subspan(i * c, c);
    double loss = 0.0;
    if (soft) {
      const auto ps = nn::softmax_temperature(row, t);
      double kd = 0.0;
      for (const auto& tl : teacher_logits)
        kd += nn::cross_entropy(ps, nn::softmax_temperature(tl.values().subspan(i * c, c), t));
      loss += cfg.beta * t * t * kd;
    }
    if (cfg.beta != 1.0) loss += (1.0 - cfg.beta) * nn::cross_entropy(nn::softmax_temperature(row, 1.0), labels[i]);
    total += loss;
  }
  return total / static_cast<double>(b);
}

nn::Var distill_loss(nn::Var student_logits, const std::vector<nn::Tensor>& teacher_logits,
                     const std::vector<std::size_t>& labels, const DistillConfig& cfg) {
  check_logits(student_logits.value(), teacher_logits, labels);
  nn::Graph& g = student_logits.graph();
  const double b = static_cast<double>(labels.size());
  const double t = cfg.temperature;
  const bool soft = soft_term_active(teacher_logits, cfg);
  const bool hard = cfg.beta != 1.0;

  std::optional<nn::Var> kd;
  if (soft) {
    const nn::Var log_ps = nn::log(nn::softmax_rows(student_logits, t));
    for (const auto& tl : teacher_logits) {
      const nn::Var q = g.constant(soften(tl, t), "teacher");
      const nn::Var term = nn::scale(nn::sum(nn::mul(q, log_ps)), -1.0 / b);
      kd = kd ? nn::add(*kd, term) : term;
    }
    kd = nn::scale(*kd, cfg.beta * t * t);
  }
  if (!hard) return *kd;
  const nn::Var ce = nn::scale(nn::cross_entropy_loss(student_logits, labels), 1.0 - cfg.beta);
  return kd ? nn::add(*kd, ce) : ce;
}

nn::ModelWeights local_update(const nn::ModelWeights& weights, const TeacherSet& teachers,
                              const data::Minibatch& batch, const DistillConfig& cfg, std::size_t round) {
  std::set<std::size_t> ids;
  for (const auto& t : teachers) {
    if (!ids.insert(t.neighbor).second) throw InputError("duplicate teacher for neighbor " + std::to_string(t.neighbor));
    if (!std::isfinite(t.emd_weight)) throw InputError("non-finite EMD weight");
    if (!(t.weights.arch == weights.arch)) throw ShapeError("teacher architecture differs from the student");
  }
  std::vector<const Teacher*> ordered;
  for (const auto& t : teachers) ordered.push_back(&t);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->neighbor < b->neighbor; });

  double norm = 1.0;
  if (cfg.normalize_weights) {
    double s = 0.0;
    for (auto* t : ordered) s += t->emd_weight;
    if (s > 0.0) norm = s;
  }

  nn::Gradients acc;
  for (const auto& [name, t] : weights.params) acc.params.add(name, nn::Tensor(t.shape(), 0.0));
  for (auto* t : ordered) {
    const double w = t->emd_weight / norm;
    if (w == 0.0) continue;
    const std::vector<nn::Tensor> teacher_logits{nn::forward(t->weights, batch).logits};
    const auto vg = nn::value_and_grad(
        weights,
        [&](nn::Graph& g, const nn::ParamVars& pv, const data::Minibatch& mb) {
          const auto out = nn::forward(g, weights.arch, pv, mb.images);
          return distill_loss(out.logits, teacher_logits, mb.labels, cfg);
        },
        batch);
    auto src = vg.grads.params.begin();
    for (auto& [name, a] : acc.params) {
      const nn::Tensor& gt = (src++)->second;
      for (std::size_t k = 0; k < a.size(); ++k) a[k] += w * gt[k];
    }
  }
  return nn::sgd_step(weights, acc, cfg.lr_at(round));
}

nn::ModelWeights local_pretrain_step(const nn::ModelWeights& weights, const data::Minibatch& batch, double lr) {
  const auto vg = nn::value_and_grad(
      weights,
      [&](nn::Graph& g, const nn::ParamVars& pv, const data::Minibatch& mb) {
        return nn::cross_entropy_loss(nn::forward(g, weights.arch, pv, mb.images).logits, mb.labels);
      },
      batch);
  return nn::sgd_step(weights, vg.grads, lr);
}

double batch_loss(const nn::ModelWeights& weights, const data::Minibatch& batch) {
  const auto out = nn::forward(weights, batch);
  const std::size_t c = out.logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    total += nn::cross_entropy(nn::softmax_temperature(out.logits.values().subspan(i * c, c), 1.0), batch.labels[i]);
  return total / static_cast<double>(batch.size());
}

}  // namespace fedefm::distill
