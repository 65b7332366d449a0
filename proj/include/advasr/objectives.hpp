#pragma once

#include <optional>

#include "advasr/linalg.hpp"
#include "advasr/loss_spec.hpp"
#include "advasr/model.hpp"
#include "advasr/vocab.hpp"

namespace advasr {

// ---- losses -------------------------------------------------------------

// Mean cross-entropy of logits rows 0..n-2 against teacher[1..n-1]
// (row i predicts teacher[i+1]; the final one-past-end row is skipped).
// When d_logits is non-null it receives d(mean CE)/d(logits).
double ce_teacher_forced(const Mat& logits, const TokenSequence& teacher, Mat* d_logits);

// -CE(f(X+delta), Y), Y = content tokens; logits must come from a
// teacher-forced pass on [BOS] + Y + [EOS].
double loss_accuracy(const Mat& logits, const TokenSequence& reference);

// Highest-probability non-EOS token; ties break to the lowest id.
int runner_up(const RowVec& prob_row);

// P_L(EOS) - P_L(z) at the final recorded position.
double loss_eos(const DecodeResult& decode);

struct DoubledTarget {
  TokenSequence tokens;  // base || base, truncated when capped; never EOS
  int base_len = 0;
  int doubled_len = 0;   // min(2*base_len, max_len - 1)
  bool capped = false;
};

// Strips the terminal EOS, doubles the base, truncates at max_len - 1.
// Throws DegenerateHypothesis when nothing remains after stripping.
DoubledTarget build_doubled_target(const TokenSequence& hypothesis, int max_len);

// +CE against the doubled target; logits from a teacher-forced pass on
// [BOS] + target.tokens.
double loss_redo(const Mat& logits, const DoubledTarget& target);

// loss_redo + loss_eos computed on the same teacher-forced pass.
double loss_efficiency(const Mat& logits, const DoubledTarget& target);

// ---- loss evaluation used by the gradient path ---------------------------

TokenSequence teacher_tokens(const LossSpec& spec);

struct LossEval {
  double total = 0.0;
  double eos = 0.0;   // NaN when not applicable
  double redo = 0.0;  // NaN when not applicable
  Mat d_logits;
};

// The runner-up identity is fixed before differentiation; gradients flow
// through both probability values but not through the argmax choice.
LossEval evaluate_loss(const LossSpec& spec, const Mat& logits);

// ---- repulsion/anchoring schedule ----------------------------------------

enum class Stage { Repulsion, Anchoring };

struct ScheduleState {
  int step = 0;  // last issued step, 1-based; 0 before the first advance
  int total_steps = 0;       // K
  int accuracy_steps = 0;    // K_a
  int doubling_period = 1;   // D
  Stage stage = Stage::Repulsion;
  bool refresh_requested = false;
  std::optional<DoubledTarget> target;
};

ScheduleState make_schedule(int total_steps, int accuracy_steps, int doubling_period);

// Advances one step; flips to Anchoring past K_a and requests a target
// refresh at anchoring steps with (s-1) mod D == 0. Throws
// ScheduleExhausted past K.
void advance_schedule(ScheduleState& state);

}  // namespace advasr
