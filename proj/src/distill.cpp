#include "cac/distill.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cac/errors.hpp"

namespace cac::distill {

SharpenedDistribution sharpen(const Vector& logits, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
  if (logits.size() == 0) throw ShapeError("sharpen: empty logit vector");
  if (!logits.allFinite()) throw NumericError("sharpen: non-finite logits");
  const double m = logits.maxCoeff();
  Vector e = ((logits.array() - m) / temperature).exp().matrix();
  e /= e.sum();
  return {std::move(e), temperature};
}

namespace {

Vector log_softmax(const Vector& logits, double temperature) {
  const Vector z = ((logits.array() - logits.maxCoeff()) / temperature).matrix();
  return (z.array() - std::log(z.array().exp().sum())).matrix();
}

void check_lengths(const std::vector<CropLogits>& teacher, const std::vector<CropLogits>& student) {
  if (teacher.size() != 2) throw UsageError("distill_loss expects exactly two global crops");
  if (student.size() < 2) throw UsageError("distill_loss expects at least two student crops");
  const auto dim = teacher.front().logits.size();
  for (const auto* group : {&teacher, &student}) {
    for (const auto& c : *group) {
      if (c.logits.size() != dim) throw ShapeError("distill_loss: logit vectors differ in length");
    }
  }
}

}  // namespace

DistillTerms distill_loss(const std::vector<CropLogits>& teacher_globals,
                          const std::vector<CropLogits>& student_crops, double tau_teacher,
                          double tau_student) {
  check_lengths(teacher_globals, student_crops);
  DistillTerms out;
  out.student_grads.assign(student_crops.size(), Vector::Zero(student_crops.front().logits.size()));
  std::vector<SharpenedDistribution> student_probs;
  std::vector<Vector> student_logp;
  student_probs.reserve(student_crops.size());
  for (const auto& s : student_crops) {
    student_probs.push_back(sharpen(s.logits, tau_student));
    student_logp.push_back(log_softmax(s.logits, tau_student));
  }

  for (const auto& t : teacher_globals) {
    const Vector pt = sharpen(t.logits, tau_teacher).probs;
    for (std::size_t j = 0; j < student_crops.size(); ++j) {
      if (student_crops[j].crop_id == t.crop_id) continue;
      const Vector& ps = student_probs[j].probs;
      out.loss += -pt.dot(student_logp[j]);
      ++out.pairs;
      // d/dz of -sum pt log softmax(z / tau) = (ps - pt) / tau, since pt sums to one.
      out.student_grads[j] += (ps - pt) / tau_student;
    }
  }
  return out;
}

double entropy_lower_bound(const std::vector<CropLogits>& teacher_globals,
                           const std::vector<CropLogits>& student_crops, double tau_teacher) {
  check_lengths(teacher_globals, student_crops);
  double total = 0.0;
  for (const auto& t : teacher_globals) {
    const Vector pt = sharpen(t.logits, tau_teacher).probs;
    const double h = -pt.dot(log_softmax(t.logits, tau_teacher));
    for (const auto& s : student_crops) {
      if (s.crop_id != t.crop_id) total += h;
    }
  }
  return total;
}

void ema_update(const ParamRefs& teacher, const ConstParamRefs& student, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw DomainError("EMA momentum must lie in [0, 1]");
  if (teacher.size() != student.size()) throw ShapeError("EMA: parameter lists differ in length");
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    if (teacher[i]->value.rows() != student[i]->value.rows() ||
        teacher[i]->value.cols() != student[i]->value.cols()) {
      throw ShapeError("EMA: tensor " + teacher[i]->name + " differs in shape from " +
                       student[i]->name);
    }
  }
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    teacher[i]->value = momentum * teacher[i]->value + (1.0 - momentum) * student[i]->value;
  }
}

}  // namespace cac::distill
