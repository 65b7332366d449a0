#include "advasr/attacks.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "advasr/errors.hpp"
#include "advasr/metrics.hpp"
#include "advasr/rng.hpp"

namespace advasr {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

TokenSequence strip_terminal_eos(TokenSequence tokens) {
  if (!tokens.empty() && tokens.back() == kEosId) tokens.pop_back();
  return tokens;
}

// Anchoring fallback when the hypothesis collapses to nothing: use the
// runner-up token of the first probability row as a one-token base.
DoubledTarget fallback_target(const DecodeResult& decode) {
  const int z = runner_up(RowVec(decode.prob_rows.row(0)));
  DoubledTarget t;
  t.tokens = {z, z};
  t.base_len = 1;
  t.doubled_len = 2;
  t.capped = false;
  return t;
}

struct StepEval {
  InputGradientResult grad;
  int target_len = 0;
};

}  // namespace

const char* attack_method_name(AttackMethod m) {
  switch (m) {
    case AttackMethod::MORE: return "more";
    case AttackMethod::PGD: return "pgd";
    case AttackMethod::MIFGSM: return "mifgsm";
    case AttackMethod::VMIFGSM: return "vmifgsm";
    case AttackMethod::EOS_ONLY: return "eos_only";
  }
  return "?";
}

AttackMethod attack_method_from_name(const std::string& name) {
  if (name == "more") return AttackMethod::MORE;
  if (name == "pgd") return AttackMethod::PGD;
  if (name == "mifgsm") return AttackMethod::MIFGSM;
  if (name == "vmifgsm") return AttackMethod::VMIFGSM;
  if (name == "eos_only") return AttackMethod::EOS_ONLY;
  throw InvalidConfig("unknown attack method: " + name);
}

void AttackConfig::validate() const {
  if (total_steps < 1) throw InvalidConfig("attack: K must be >= 1");
  if (accuracy_steps < 0 || accuracy_steps > total_steps)
    throw InvalidConfig("attack: need 0 <= K_a <= K");
  if (doubling_period < 1) throw InvalidConfig("attack: D must be >= 1");
  if (alpha && *alpha < 0.0) throw InvalidConfig("attack: alpha must be >= 0");
  if (epsilon && *epsilon <= 0.0) throw InvalidConfig("attack: epsilon must be > 0");
  if (!epsilon && snr_db_target <= 0.0)
    throw InvalidConfig("attack: snr_db_target must be > 0");
  if (momentum < 0.0) throw InvalidConfig("attack: momentum must be >= 0");
  if (variance_samples < 1) throw InvalidConfig("attack: Nv must be >= 1");
  if (variance_radius <= 0.0) throw InvalidConfig("attack: beta must be > 0");
  if (eval_every < 0) throw InvalidConfig("attack: eval_every must be >= 0");
}

double AttackConfig::resolve_epsilon(const Waveform& x) const {
  if (epsilon) return *epsilon;
  return epsilon_for_snr(x, snr_db_target);
}

double AttackConfig::resolve_alpha(double epsilon_value) const {
  if (alpha) return *alpha;
  return epsilon_value / 25.0;
}

void sign_step(std::vector<double>& delta, const std::vector<double>& grad, double alpha,
               double epsilon) {
  if (delta.size() != grad.size()) throw InvalidInput("sign_step: length mismatch");
  for (std::size_t i = 0; i < delta.size(); ++i) {
    if (!std::isfinite(grad[i])) throw NumericalFailure("sign_step: non-finite gradient");
    if (grad[i] > 0.0) delta[i] -= alpha;
    else if (grad[i] < 0.0) delta[i] += alpha;
  }
  clip_linf(delta, epsilon);
}

namespace {

void record_step(AttackTrace& trace, int step, Stage stage, const InputGradientResult& g,
                 const std::vector<double>& delta, int target_len, bool refresh) {
  StepRecord r;
  r.step = step;
  r.stage = stage;
  r.loss = g.loss;
  r.loss_eos = g.loss_eos;
  r.loss_redo = g.loss_redo;
  r.delta_linf = linf_norm(delta);
  r.target_len = target_len;
  r.anchor_refresh = refresh;
  trace.steps.push_back(r);
}

void maybe_probe(AttackTrace& trace, const ModelBundle& bundle, const Utterance& utt,
                 const std::vector<double>& delta, const AttackConfig& cfg, int step) {
  if (cfg.eval_every <= 0 || step % cfg.eval_every != 0) return;
  const Mat feats = extract_features(advasr::apply(utt.waveform, delta), bundle.config.frontend);
  DecodeResult dec = greedy_decode(bundle, feats, bundle.config.max_len);
  const Vocabulary vocab = Vocabulary::standard(bundle.config.vocab_size - kFirstWordId);
  ProbeRecord p;
  p.step = step;
  p.decode_len = static_cast<int>(dec.tokens.size());
  p.wer = wer(vocab.to_words(utt.transcript),
              vocab.to_words(strip_terminal_eos(dec.tokens)))
              .wer_percent;
  trace.probes.push_back(p);
}

// Gradient-sign loop shared by PGD / MI-FGSM / VMI-FGSM / EOS-only.
// `eval` yields the loss gradient for the current delta; `direction`
// turns it into the step direction (identity for plain sign methods).
AttackResult gradient_attack(const ModelBundle& bundle, const Utterance& utt,
                             const AttackConfig& cfg, Stage stage,
                             const std::function<StepEval(const std::vector<double>&)>& eval,
                             const std::function<const std::vector<double>&(
                                 const std::vector<double>&, const std::vector<double>&)>&
                                 direction) {
  cfg.validate();
  const double eps = cfg.resolve_epsilon(utt.waveform);
  const double alpha = cfg.resolve_alpha(eps);

  AttackResult result;
  result.trace.method = cfg.method;
  result.trace.epsilon = eps;
  result.trace.alpha = alpha;
  result.delta.assign(utt.waveform.length(), 0.0);

  try {
    for (int step = 1; step <= cfg.total_steps; ++step) {
      StepEval ev = eval(result.delta);
      const std::vector<double>& dir = direction(ev.grad.grad, result.delta);
      sign_step(result.delta, dir, alpha, eps);
      record_step(result.trace, step, stage, ev.grad, result.delta, ev.target_len, false);
      maybe_probe(result.trace, bundle, utt, result.delta, cfg, step);
    }
  } catch (const NumericalFailure& e) {
    result.aborted = true;
    result.error = e.what();
  }
  return result;
}

const std::vector<double>& identity_direction(const std::vector<double>& grad,
                                              const std::vector<double>&) {
  return grad;
}

}  // namespace

AttackResult attack_pgd(const ModelBundle& bundle, const Utterance& utt,
                        const AttackConfig& cfg) {
  LossSpec spec{LossKind::Accuracy, utt.transcript};
  return gradient_attack(
      bundle, utt, cfg, Stage::Repulsion,
      [&](const std::vector<double>& delta) {
        return StepEval{input_gradient(bundle, utt.waveform, delta, spec), 0};
      },
      identity_direction);
}

AttackResult attack_mifgsm(const ModelBundle& bundle, const Utterance& utt,
                           const AttackConfig& cfg) {
  LossSpec spec{LossKind::Accuracy, utt.transcript};
  std::vector<double> momentum(utt.waveform.length(), 0.0);
  return gradient_attack(
      bundle, utt, cfg, Stage::Repulsion,
      [&](const std::vector<double>& delta) {
        return StepEval{input_gradient(bundle, utt.waveform, delta, spec), 0};
      },
      [&, mu = cfg.momentum](const std::vector<double>& grad,
                             const std::vector<double>&) -> const std::vector<double>& {
        double l1 = 0.0;
        for (double g : grad) l1 += std::abs(g);
        for (std::size_t i = 0; i < momentum.size(); ++i) {
          momentum[i] = mu * momentum[i] + (l1 > 0.0 ? grad[i] / l1 : 0.0);
        }
        return momentum;
      });
}

AttackResult attack_vmifgsm(const ModelBundle& bundle, const Utterance& utt,
                            const AttackConfig& cfg) {
  LossSpec spec{LossKind::Accuracy, utt.transcript};
  const std::size_t n = utt.waveform.length();
  std::vector<double> momentum(n, 0.0);
  std::vector<double> variance(n, 0.0);
  Rng rng(cfg.seed);
  const double eps = cfg.resolve_epsilon(utt.waveform);
  const double sample_radius = cfg.variance_radius * eps;

  return gradient_attack(
      bundle, utt, cfg, Stage::Repulsion,
      [&](const std::vector<double>& delta) {
        return StepEval{input_gradient(bundle, utt.waveform, delta, spec), 0};
      },
      [&, mu = cfg.momentum, nv = cfg.variance_samples](
          const std::vector<double>& grad,
          const std::vector<double>& delta) -> const std::vector<double>& {
        double l1 = 0.0;
        for (std::size_t i = 0; i < n; ++i) l1 += std::abs(grad[i] + variance[i]);
        for (std::size_t i = 0; i < n; ++i) {
          momentum[i] = mu * momentum[i] + (l1 > 0.0 ? (grad[i] + variance[i]) / l1 : 0.0);
        }
        // Refresh the variance term from Nv draws around the pre-step point.
        std::vector<double> acc(n, 0.0);
        std::vector<double> probe(n);
        for (int s = 0; s < nv; ++s) {
          for (std::size_t i = 0; i < n; ++i)
            probe[i] = delta[i] + rng.uniform(-sample_radius, sample_radius);
          InputGradientResult g = input_gradient(bundle, utt.waveform, probe, spec);
          for (std::size_t i = 0; i < n; ++i) acc[i] += g.grad[i];
        }
        for (std::size_t i = 0; i < n; ++i) variance[i] = acc[i] / nv - grad[i];
        return momentum;
      });
}

AttackResult attack_eos_only(const ModelBundle& bundle, const Utterance& utt,
                             const AttackConfig& cfg) {
  const int max_len = bundle.config.max_len;
  return gradient_attack(
      bundle, utt, cfg, Stage::Anchoring,
      [&](const std::vector<double>& delta) {
        // Greedy re-decode each step locates the final position.
        const Mat feats = extract_features(advasr::apply(utt.waveform, delta), bundle.config.frontend);
        DecodeResult dec = greedy_decode(bundle, feats, max_len);
        TokenSequence base = strip_terminal_eos(dec.tokens);
        if (static_cast<int>(base.size()) > max_len - 1) base.resize(max_len - 1);
        LossSpec spec{LossKind::Eos, base};
        StepEval ev;
        ev.grad = input_gradient(bundle, utt.waveform, delta, spec);
        ev.target_len = static_cast<int>(base.size());
        return ev;
      },
      identity_direction);
}

AttackResult attack_more(const ModelBundle& bundle, const Utterance& utt,
                         const AttackConfig& cfg) {
  cfg.validate();
  const double eps = cfg.resolve_epsilon(utt.waveform);
  const double alpha = cfg.resolve_alpha(eps);
  const int max_len = bundle.config.max_len;

  AttackResult result;
  result.trace.method = cfg.method;
  result.trace.epsilon = eps;
  result.trace.alpha = alpha;
  result.delta.assign(utt.waveform.length(), 0.0);

  LossSpec acc_spec{LossKind::Accuracy, utt.transcript};
  ScheduleState sched = make_schedule(cfg.total_steps, cfg.accuracy_steps, cfg.doubling_period);

  try {
    while (sched.step < sched.total_steps) {
      advance_schedule(sched);
      bool refreshed = false;

      if (sched.stage == Stage::Repulsion) {
        InputGradientResult g = input_gradient(bundle, utt.waveform, result.delta, acc_spec);
        sign_step(result.delta, g.grad, alpha, eps);
        record_step(result.trace, sched.step, sched.stage, g, result.delta, 0, false);
      } else {
        if (sched.refresh_requested) {
          refreshed = true;
          if (sched.target && sched.target->capped) {
            // Capped targets freeze; reuse without a fresh decode.
          } else {
            const Mat feats =
                extract_features(advasr::apply(utt.waveform, result.delta), bundle.config.frontend);
            DecodeResult dec = greedy_decode(bundle, feats, max_len);
            try {
              sched.target = build_doubled_target(dec.tokens, max_len);
            } catch (const DegenerateHypothesis&) {
              sched.target = fallback_target(dec);
            }
          }
          result.trace.block_hypothesis_lens.push_back(sched.target->base_len);
        }
        LossSpec eff_spec{LossKind::Efficiency, sched.target->tokens};
        InputGradientResult g = input_gradient(bundle, utt.waveform, result.delta, eff_spec);
        sign_step(result.delta, g.grad, alpha, eps);
        record_step(result.trace, sched.step, sched.stage, g, result.delta,
                    sched.target->doubled_len, refreshed);
      }
      maybe_probe(result.trace, bundle, utt, result.delta, cfg, sched.step);
    }
  } catch (const NumericalFailure& e) {
    result.aborted = true;
    result.error = e.what();
  }
  return result;
}

AttackResult run_attack(const ModelBundle& bundle, const Utterance& utt,
                        const AttackConfig& cfg) {
  switch (cfg.method) {
    case AttackMethod::MORE: return attack_more(bundle, utt, cfg);
    case AttackMethod::PGD: return attack_pgd(bundle, utt, cfg);
    case AttackMethod::MIFGSM: return attack_mifgsm(bundle, utt, cfg);
    case AttackMethod::VMIFGSM: return attack_vmifgsm(bundle, utt, cfg);
    case AttackMethod::EOS_ONLY: return attack_eos_only(bundle, utt, cfg);
  }
  throw InvalidConfig("run_attack: unknown method");
}

std::string trace_to_jsonl(const AttackTrace& trace) {
  std::string out;
  for (const StepRecord& r : trace.steps) {
    nlohmann::json j;
    j["step"] = r.step;
    j["stage"] = r.stage == Stage::Repulsion ? "repulsion" : "anchoring";
    j["loss"] = r.loss;
    if (std::isfinite(r.loss_eos)) j["loss_eos"] = r.loss_eos;
    if (std::isfinite(r.loss_redo)) j["loss_redo"] = r.loss_redo;
    j["delta_linf"] = r.delta_linf;
    if (r.target_len > 0) j["target_len"] = r.target_len;
    j["anchor_refresh"] = r.anchor_refresh;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_delta_raw(const std::string& path, const std::vector<double>& delta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(delta.data()),
            static_cast<std::streamsize>(delta.size() * sizeof(double)));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace advasr
