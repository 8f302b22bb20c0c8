#pragma once

#include <vector>

#include "cac/tensor.hpp"

// Teacher/student self-distillation objective at toy scale: temperature
// softmax, the multi-crop cross-entropy and the moving-average teacher.
namespace cac::distill {

struct SharpenedDistribution {
  Vector probs;
  double temperature = 1.0;
};

/// probs[i] = exp(logits[i] / tau) / sum_d exp(logits[d] / tau), computed
/// with the max logit subtracted.
SharpenedDistribution sharpen(const Vector& logits, double temperature);

/// Logits for one view. `crop_id` identifies the view so a global crop can be
/// recognised inside the full crop set regardless of pixel content.
struct CropLogits {
  int crop_id = 0;
  Vector logits;
};

struct DistillTerms {
  double loss = 0.0;
  int pairs = 0;
  /// d loss / d student logits, aligned with the student crop list.
  std::vector<Vector> student_grads;
};

/// Sum over the two teacher (global) crops x and every student crop x' != x
/// of H(P_t(x), P_s(x')) = -sum P_t log P_s. Teacher distributions are
/// constants; gradients flow to the student logits only.
DistillTerms distill_loss(const std::vector<CropLogits>& teacher_globals,
                          const std::vector<CropLogits>& student_crops, double tau_teacher,
                          double tau_student);

/// Shannon entropy sum of the teacher distribution over the same pairs;
/// distill_loss is never below it.
double entropy_lower_bound(const std::vector<CropLogits>& teacher_globals,
                           const std::vector<CropLogits>& student_crops, double tau_teacher);

/// teacher <- m * teacher + (1 - m) * student, tensor by tensor.
void ema_update(const ParamRefs& teacher, const ConstParamRefs& student, double momentum);

}  // namespace cac::distill
