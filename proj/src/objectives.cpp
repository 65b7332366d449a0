#include "advasr/objectives.hpp"

#include <cmath>
#include <limits>

#include "advasr/errors.hpp"

namespace advasr {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

RowVec softmax_row(const RowVec& logits) {
  const double mx = logits.maxCoeff();
  RowVec p = (logits.array() - mx).exp();
  p /= p.sum();
  return p;
}

double log_sum_exp(const RowVec& logits) {
  const double mx = logits.maxCoeff();
  return mx + std::log((logits.array() - mx).exp().sum());
}

// d(P_eos - P_z)/d logits for a softmax row p:
// dp_i/dl_j = p_i (1[i==j] - p_j).
RowVec eos_margin_dlogits(const RowVec& p, int z) {
  RowVec d = (p(z) - p(kEosId)) * p;
  d(kEosId) += p(kEosId);
  d(z) -= p(z);
  return d;
}

}  // namespace

double ce_teacher_forced(const Mat& logits, const TokenSequence& teacher, Mat* d_logits) {
  const int n = static_cast<int>(teacher.size());
  if (logits.rows() != n)
    throw InvalidInput("ce_teacher_forced: logits rows do not match the teacher length");
  if (n < 2) throw InvalidInput("ce_teacher_forced: teacher needs at least two tokens");
  const int positions = n - 1;
  if (d_logits) *d_logits = Mat::Zero(logits.rows(), logits.cols());

  double ce = 0.0;
  const double inv = 1.0 / positions;
  for (int i = 0; i < positions; ++i) {
    const int y = teacher[i + 1];
    if (y < 0 || y >= logits.cols())
      throw InvalidInput("ce_teacher_forced: teacher token out of vocabulary");
    ce += log_sum_exp(logits.row(i)) - logits(i, y);
    if (d_logits) {
      RowVec p = softmax_row(logits.row(i));
      d_logits->row(i) = p * inv;
      (*d_logits)(i, y) -= inv;
    }
  }
  return ce * inv;
}

double loss_accuracy(const Mat& logits, const TokenSequence& reference) {
  TokenSequence teacher;
  teacher.reserve(reference.size() + 2);
  teacher.push_back(kBosId);
  teacher.insert(teacher.end(), reference.begin(), reference.end());
  teacher.push_back(kEosId);
  return -ce_teacher_forced(logits, teacher, nullptr);
}

int runner_up(const RowVec& prob_row) {
  if (prob_row.size() < 2) throw InvalidInput("runner_up: vocabulary too small");
  int best = -1;
  for (int v = 0; v < prob_row.size(); ++v) {
    if (v == kEosId) continue;
    if (best < 0 || prob_row(v) > prob_row(best)) best = v;
  }
  return best;
}

double loss_eos(const DecodeResult& decode) {
  if (decode.prob_rows.rows() < 1) throw InvalidInput("loss_eos: empty decode");
  const RowVec row = decode.prob_rows.row(decode.prob_rows.rows() - 1);
  return row(kEosId) - row(runner_up(row));
}

DoubledTarget build_doubled_target(const TokenSequence& hypothesis, int max_len) {
  TokenSequence base = hypothesis;
  if (!base.empty() && base.back() == kEosId) base.pop_back();
  for (int t : base)
    if (t == kEosId) throw InvalidInput("build_doubled_target: interior EOS in hypothesis");
  if (base.empty())
    throw DegenerateHypothesis("hypothesis is empty after stripping EOS");

  DoubledTarget out;
  out.base_len = static_cast<int>(base.size());
  out.tokens = base;
  out.tokens.insert(out.tokens.end(), base.begin(), base.end());
  const int cap = max_len - 1;
  if (static_cast<int>(out.tokens.size()) > cap) {
    out.tokens.resize(cap);
    out.capped = true;
  }
  out.doubled_len = static_cast<int>(out.tokens.size());
  return out;
}

double loss_redo(const Mat& logits, const DoubledTarget& target) {
  TokenSequence teacher;
  teacher.reserve(target.tokens.size() + 1);
  teacher.push_back(kBosId);
  teacher.insert(teacher.end(), target.tokens.begin(), target.tokens.end());
  return ce_teacher_forced(logits, teacher, nullptr);
}

double loss_efficiency(const Mat& logits, const DoubledTarget& target) {
  const RowVec row = softmax_row(logits.row(logits.rows() - 1));
  return loss_redo(logits, target) + (row(kEosId) - row(runner_up(row)));
}

TokenSequence teacher_tokens(const LossSpec& spec) {
  TokenSequence t;
  t.push_back(kBosId);
  t.insert(t.end(), spec.reference.begin(), spec.reference.end());
  if (spec.kind == LossKind::Accuracy) t.push_back(kEosId);
  return t;
}

LossEval evaluate_loss(const LossSpec& spec, const Mat& logits) {
  LossEval out;
  out.eos = kNan;
  out.redo = kNan;
  const TokenSequence teacher = teacher_tokens(spec);

  switch (spec.kind) {
    case LossKind::Accuracy: {
      Mat d;
      const double ce = ce_teacher_forced(logits, teacher, &d);
      out.total = -ce;
      out.d_logits = -d;
      return out;
    }
    case LossKind::Eos: {
      if (logits.rows() != static_cast<int>(teacher.size()))
        throw InvalidInput("evaluate_loss: logits do not match the teacher pass");
      out.d_logits = Mat::Zero(logits.rows(), logits.cols());
      const int last = static_cast<int>(logits.rows()) - 1;
      RowVec p = softmax_row(logits.row(last));
      const int z = runner_up(p);
      out.total = p(kEosId) - p(z);
      out.eos = out.total;
      out.d_logits.row(last) = eos_margin_dlogits(p, z);
      return out;
    }
    case LossKind::Redo: {
      Mat d;
      out.redo = ce_teacher_forced(logits, teacher, &d);
      out.total = out.redo;
      out.d_logits = std::move(d);
      return out;
    }
    case LossKind::Efficiency: {
      Mat d;
      out.redo = ce_teacher_forced(logits, teacher, &d);
      const int last = static_cast<int>(logits.rows()) - 1;
      RowVec p = softmax_row(logits.row(last));
      const int z = runner_up(p);
      out.eos = p(kEosId) - p(z);
      d.row(last) += eos_margin_dlogits(p, z);
      out.total = out.redo + out.eos;
      out.d_logits = std::move(d);
      return out;
    }
  }
  throw InvalidInput("evaluate_loss: unknown loss kind");
}

ScheduleState make_schedule(int total_steps, int accuracy_steps, int doubling_period) {
  if (total_steps < 1 || accuracy_steps < 0 || accuracy_steps > total_steps)
    throw InvalidConfig("schedule: need 0 <= K_a <= K, K >= 1");
  if (doubling_period < 1) throw InvalidConfig("schedule: D must be >= 1");
  ScheduleState s;
  s.total_steps = total_steps;
  s.accuracy_steps = accuracy_steps;
  s.doubling_period = doubling_period;
  s.stage = accuracy_steps > 0 ? Stage::Repulsion : Stage::Anchoring;
  return s;
}

void advance_schedule(ScheduleState& state) {
  if (state.step >= state.total_steps)
    throw ScheduleExhausted("schedule: advanced past K=" + std::to_string(state.total_steps));
  state.step += 1;
  if (state.step <= state.accuracy_steps) {
    state.stage = Stage::Repulsion;
    state.refresh_requested = false;
  } else {
    state.stage = Stage::Anchoring;
    const int s = state.step - state.accuracy_steps;
    state.refresh_requested = ((s - 1) % state.doubling_period) == 0;
  }
}

}  // namespace advasr
