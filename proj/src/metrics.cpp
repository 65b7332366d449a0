#include "advasr/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "advasr/errors.hpp"

namespace advasr {

EditCounts edit_distance(const std::vector<std::string>& ref,
                         const std::vector<std::string>& hyp) {
  const int n = static_cast<int>(ref.size());
  const int m = static_cast<int>(hyp.size());
  // d[i][j] = distance between ref[0..i) and hyp[0..j).
  std::vector<std::vector<int>> d(n + 1, std::vector<int>(m + 1, 0));
  for (int i = 0; i <= n; ++i) d[i][0] = i;
  for (int j = 0; j <= m; ++j) d[0][j] = j;
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= m; ++j) {
      const int sub = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      const int del = d[i - 1][j] + 1;
      const int ins = d[i][j - 1] + 1;
      d[i][j] = std::min({sub, del, ins});
    }
  }

  EditCounts out;
  out.distance = d[n][m];
  // Walk one minimal script back; prefer match/substitute, then delete.
  int i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++out.substitutions;
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++out.deletions;
      --i;
    } else {
      ++out.insertions;
      --j;
    }
  }
  return out;
}

WerReport wer(const std::vector<std::string>& reference,
              const std::vector<std::string>& hypothesis) {
  if (reference.empty()) throw InvalidInput("wer: empty reference");
  std::vector<std::string> truncated = hypothesis;
  if (truncated.size() > reference.size()) truncated.resize(reference.size());

  const EditCounts ec = edit_distance(reference, truncated);
  WerReport r;
  r.substitutions = ec.substitutions;
  r.insertions = ec.insertions;
  r.deletions = ec.deletions;
  r.ref_len = static_cast<int>(reference.size());
  r.hyp_len_raw = static_cast<int>(hypothesis.size());
  r.hyp_len_truncated = static_cast<int>(truncated.size());
  r.wer_percent = std::min(100.0, 100.0 * ec.distance / static_cast<double>(r.ref_len));
  return r;
}

int length_tokens(const DecodeResult& decode) {
  return static_cast<int>(decode.tokens.size());
}

FlopsEstimate flops_estimate(uint64_t n_params, uint64_t tokens) {
  FlopsEstimate e;
  e.n_params = n_params;
  e.tokens = tokens;
  e.flops = 2.0 * static_cast<double>(n_params) * static_cast<double>(tokens);
  return e;
}

// ---- cost model --------------------------------------------------------------

void CostScenario::validate() const {
  auto positive = [](double v, const char* field) {
    if (!(v > 0)) throw InvalidConfig(std::string("cost scenario: ") + field + " must be > 0");
  };
  positive(frames, "F");
  positive(n_enc, "N_e");
  positive(d_enc, "d_e");
  positive(d_ff_enc, "d_ff_e");
  positive(heads_enc, "h_e");
  positive(n_dec, "N_d");
  positive(d_dec, "d_d");
  positive(d_ff_dec, "d_ff_d");
  positive(heads_dec, "h_d");
  positive(vocab, "V");
  if (total_steps < 0 || accuracy_steps < 0 || accuracy_steps > total_steps)
    throw InvalidConfig("cost scenario: need 0 <= K_a <= K");
  if (block_len < 1) throw InvalidConfig("cost scenario: D must be >= 1");
  if (kappa < 2.0 || kappa > 3.0)
    throw InvalidConfig("cost scenario: kappa must lie in [2, 3]");
  if (l_acc < 0) throw InvalidConfig("cost scenario: L_acc must be >= 0");
  if (eval_every < 0) throw InvalidConfig("cost scenario: E must be >= 0");
  if (envelope) {
    if (envelope->l0 < 1) throw InvalidConfig("cost scenario: envelope L_0 must be >= 1");
    if (envelope->l0 > envelope->l_max)
      throw InvalidConfig("cost scenario: envelope L_0 exceeds L_max");
    if (envelope->kind == EnvelopeSpec::Kind::Linear && envelope->delta < 0)
      throw InvalidConfig("cost scenario: linear envelope needs delta >= 0");
  }
}

int CostScenario::stage2_blocks() const {
  const int anchoring = total_steps - accuracy_steps;
  if (anchoring <= 0) return 0;
  return (anchoring + block_len - 1) / block_len;
}

std::vector<long long> CostScenario::resolve_lm() const {
  const int m = stage2_blocks();
  if (m == 0) return {};
  if (!lm_schedule.empty()) {
    if (static_cast<int>(lm_schedule.size()) < m)
      throw InvalidConfig("cost scenario: explicit L_m schedule shorter than the block count");
    return {lm_schedule.begin(), lm_schedule.begin() + m};
  }
  if (!envelope) throw InvalidConfig("cost scenario: no L_m schedule and no envelope");
  std::vector<long long> lm(m);
  for (int i = 0; i < m; ++i) {
    if (envelope->kind == EnvelopeSpec::Kind::Geometric) {
      long long v = envelope->l0;
      for (int k = 0; k < i && v < envelope->l_max; ++k) v *= 2;
      lm[i] = std::min(v, envelope->l_max);
    } else {
      lm[i] = std::min(envelope->l0 + static_cast<long long>(i) * envelope->delta,
                       envelope->l_max);
    }
  }
  return lm;
}

double cost_enc(const CostScenario& s) {
  return s.n_enc * (s.frames * s.frames * s.d_enc + s.frames * s.d_enc * s.d_ff_enc);
}

double cost_dec_tf(const CostScenario& s, double len) {
  return s.n_dec * (len * len * s.d_dec + len * s.frames * s.d_dec + len * s.d_dec * s.d_ff_dec);
}

double cost_dec_gen(const CostScenario& s, double len) { return cost_dec_tf(s, len); }

double vocab_term(const CostScenario& s, double len) { return len * s.vocab; }

double cost_stage1(const CostScenario& s) {
  s.validate();
  const double ka = s.accuracy_steps;
  double total = ka * s.kappa * (cost_enc(s) + cost_dec_tf(s, s.l_acc)) +
                 ka * vocab_term(s, s.l_acc);
  if (s.eval_every > 0 && s.accuracy_steps > 0) {
    const double probes =
        std::ceil(static_cast<double>(s.accuracy_steps) / s.eval_every);
    const double l_eval = s.l_eval > 0 ? s.l_eval : s.l_acc;
    total += probes * (cost_enc(s) + cost_dec_gen(s, l_eval) + vocab_term(s, l_eval));
  }
  return total;
}

Stage2Cost cost_stage2(const CostScenario& s) {
  s.validate();
  Stage2Cost out;
  const std::vector<long long> lm = s.resolve_lm();
  for (long long l : lm) {
    Stage2Block b;
    b.l_m = l;
    const double lf = static_cast<double>(l);
    b.step_cost = s.block_len * s.kappa * (cost_enc(s) + cost_dec_tf(s, 2.0 * lf));
    b.anchor_cost = cost_enc(s) + cost_dec_gen(s, lf) + vocab_term(s, lf);
    b.vocab_cost = s.block_len * vocab_term(s, 2.0 * lf);
    out.total += b.step_cost + b.anchor_cost + b.vocab_cost;
    out.blocks.push_back(b);
  }
  return out;
}

EnvelopeSums envelope_sums(EnvelopeSpec::Kind kind, long long l0, long long delta,
                           long long l_max, int blocks) {
  if (l0 < 1) throw InvalidConfig("envelope_sums: L_0 must be >= 1");
  if (l0 > l_max) throw InvalidConfig("envelope_sums: L_0 exceeds L_max");
  if (blocks < 1) throw InvalidConfig("envelope_sums: M must be >= 1");
  using U = unsigned long long;
  EnvelopeSums out;

  if (kind == EnvelopeSpec::Kind::Geometric) {
    // M* = min(M, 1 + floor(log2(L_max / L_0))), found without floats.
    int uncapped = 1;
    long long v = l0;
    while (v * 2 <= l_max) {
      v *= 2;
      ++uncapped;
    }
    const int m_star = std::min(blocks, uncapped);
    const U pow2 = 1ULL << m_star;
    const U pow4 = 1ULL << (2 * m_star);
    out.sum_l = static_cast<U>(l0) * (pow2 - 1) +
                static_cast<U>(blocks - m_star) * static_cast<U>(l_max);
    out.sum_l_sq = static_cast<U>(l0) * static_cast<U>(l0) * (pow4 - 1) / 3 +
                   static_cast<U>(blocks - m_star) * static_cast<U>(l_max) *
                       static_cast<U>(l_max);
    return out;
  }

  // Linear: closed forms on the uncapped prefix, L_max terms beyond it.
  long long prefix = blocks;
  if (delta > 0) {
    const long long uncapped = (l_max - l0) / delta + 1;  // largest m with L_m <= L_max
    prefix = std::min<long long>(blocks, uncapped);
  }
  const U p = static_cast<U>(prefix);
  const U a = static_cast<U>(l0);
  const U d = static_cast<U>(delta);
  out.sum_l = p * (2 * a + (p - 1) * d) / 2;
  out.sum_l_sq = p * a * a + a * d * p * (p - 1) + d * d * (p - 1) * p * (2 * p - 1) / 6;
  const U tail = static_cast<U>(blocks) - p;
  out.sum_l += tail * static_cast<U>(l_max);
  out.sum_l_sq += tail * static_cast<U>(l_max) * static_cast<U>(l_max);
  return out;
}

double cost_inference(const CostScenario& s, double len_adv) {
  return cost_enc(s) + cost_dec_gen(s, len_adv) + vocab_term(s, len_adv);
}

double slowdown_ratio(const CostScenario& s, double len_adv, double len_clean) {
  if (!(len_adv > 0) || !(len_clean > 0))
    throw InvalidInput("slowdown_ratio: lengths must be positive");
  const double ff = s.d_ff_dec / s.d_dec;
  const double num = len_adv * len_adv + len_adv * s.frames + len_adv * ff;
  const double den = len_clean * len_clean + len_clean * s.frames + len_clean * ff;
  return num / den;
}

BoundComponents bound_components(const CostScenario& s) {
  s.validate();
  BoundComponents out;
  out.encoder_passes = s.kappa * s.total_steps * cost_enc(s);
  const std::vector<long long> lm = s.resolve_lm();
  for (long long l : lm) {
    const double lf = static_cast<double>(l);
    out.decoder_terms += s.kappa * s.n_dec * s.block_len *
                         (4.0 * lf * lf * s.d_dec +
                          2.0 * lf * (s.frames * s.d_dec + s.d_dec * s.d_ff_dec));
    out.overheads += cost_enc(s) + cost_dec_gen(s, lf) + vocab_term(s, lf);
    out.overheads += s.vocab * s.block_len * 2.0 * lf;
  }
  return out;
}

}  // namespace advasr
