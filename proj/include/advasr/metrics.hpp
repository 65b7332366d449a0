#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advasr/model.hpp"

namespace advasr {

// ---- recognition metrics --------------------------------------------------

struct EditCounts {
  int distance = 0;
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;
};

// Minimal unit-cost edit distance (dynamic programming, exact), with one
// minimal script's operation counts.
EditCounts edit_distance(const std::vector<std::string>& ref,
                         const std::vector<std::string>& hyp);

struct WerReport {
  double wer_percent = 0.0;  // capped at 100.00
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;
  int ref_len = 0;
  int hyp_len_raw = 0;
  int hyp_len_truncated = 0;
};

// Hypothesis is truncated to |ref| words before scoring; WER is
// 100*(S+I+D)/|ref| capped at 100.00. Throws InvalidInput on empty ref.
WerReport wer(const std::vector<std::string>& reference,
              const std::vector<std::string>& hypothesis);

// Emitted tokens excluding BOS, including EOS when present.
int length_tokens(const DecodeResult& decode);

// ---- FLOPs estimate ---------------------------------------------------------

struct FlopsEstimate {
  uint64_t n_params = 0;
  uint64_t tokens = 0;
  double flops = 0.0;  // tokens * 2 * n_params exactly
};

FlopsEstimate flops_estimate(uint64_t n_params, uint64_t tokens);

// ---- analytical attack/inference cost model ---------------------------------

struct EnvelopeSpec {
  enum class Kind { Geometric, Linear };
  Kind kind = Kind::Geometric;
  long long l0 = 1;
  long long delta = 0;  // linear increment
  long long l_max = 1;
};

struct CostScenario {
  double frames = 0;  // F
  double n_enc = 0, d_enc = 0, d_ff_enc = 0, heads_enc = 0;
  double n_dec = 0, d_dec = 0, d_ff_dec = 0, heads_dec = 0;
  double vocab = 0;  // V
  int total_steps = 0;     // K
  int accuracy_steps = 0;  // K_a
  int block_len = 1;       // D
  double kappa = 2.5;      // backward/forward multiplier, in [2,3]
  double l_acc = 0;        // reference length
  std::vector<long long> lm_schedule;     // explicit L_m, optional
  std::optional<EnvelopeSpec> envelope;   // or an envelope
  double l_eval = 0;  // decoded length at eval probes; defaults to l_acc
  int eval_every = 0;  // E; 0 = no probes
  double n_samples = 0;  // T, the O(T) update term (reported, negligible)

  void validate() const;  // throws InvalidConfig with field diagnostics
  int stage2_blocks() const;                // M = ceil((K - K_a)/D)
  std::vector<long long> resolve_lm() const;  // throws when unresolvable
};

double cost_enc(const CostScenario& s);
double cost_dec_tf(const CostScenario& s, double len);
double cost_dec_gen(const CostScenario& s, double len);
double vocab_term(const CostScenario& s, double len);  // len * V, kept separate

double cost_stage1(const CostScenario& s);

struct Stage2Block {
  long long l_m = 0;
  double step_cost = 0.0;    // D * kappa * (enc + dec_tf(2 L_m))
  double anchor_cost = 0.0;  // enc + dec_gen(L_m) + L_m * V
  double vocab_cost = 0.0;   // D * 2 L_m * V
};

struct Stage2Cost {
  double total = 0.0;
  std::vector<Stage2Block> blocks;
};

Stage2Cost cost_stage2(const CostScenario& s);

struct EnvelopeSums {
  unsigned long long sum_l = 0;
  unsigned long long sum_l_sq = 0;
};

// Closed-form sums of L_m and L_m^2 over M blocks under a growth
// envelope capped at l_max; exact integer arithmetic.
EnvelopeSums envelope_sums(EnvelopeSpec::Kind kind, long long l0, long long delta,
                           long long l_max, int blocks);

double cost_inference(const CostScenario& s, double len_adv);
double slowdown_ratio(const CostScenario& s, double len_adv, double len_clean);

// The summary bound split into its three drivers.
struct BoundComponents {
  double encoder_passes = 0.0;   // kappa * K * C_enc
  double decoder_terms = 0.0;    // kappa * N_d * D * sum(4 L_m^2 d + 2 L_m (F d + d d_ff))
  double overheads = 0.0;        // greedy anchors + V * D * sum(2 L_m)
};

BoundComponents bound_components(const CostScenario& s);

}  // namespace advasr
