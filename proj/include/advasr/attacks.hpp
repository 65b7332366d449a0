#pragma once

#include <optional>
#include <string>
#include <vector>

#include "advasr/corpus.hpp"
#include "advasr/model.hpp"
#include "advasr/objectives.hpp"

namespace advasr {

enum class AttackMethod { MORE, PGD, MIFGSM, VMIFGSM, EOS_ONLY };

const char* attack_method_name(AttackMethod m);
AttackMethod attack_method_from_name(const std::string& name);  // throws InvalidConfig

struct AttackConfig {
  AttackMethod method = AttackMethod::MORE;
  int total_steps = 150;     // K
  int accuracy_steps = 50;   // K_a
  int doubling_period = 10;  // D
  std::optional<double> alpha;    // step size; defaults to epsilon / 10
  std::optional<double> epsilon;  // explicit l-inf radius
  double snr_db_target = 35.0;    // used when epsilon is not set
  double momentum = 1.0;          // mu, momentum methods
  int variance_samples = 5;       // Nv (VMI)
  double variance_radius = 1.5;   // beta (VMI)
  int eval_every = 0;             // optional probe period E; 0 = off
  uint64_t seed = 1;

  void validate() const;  // throws InvalidConfig
  double resolve_epsilon(const Waveform& x) const;
  double resolve_alpha(double epsilon_value) const;
};

struct StepRecord {
  int step = 0;
  Stage stage = Stage::Repulsion;
  double loss = 0.0;
  double loss_eos = 0.0;   // NaN outside efficiency objectives
  double loss_redo = 0.0;  // NaN outside efficiency objectives
  double delta_linf = 0.0;
  int target_len = 0;      // teacher length of the efficiency target, else 0
  bool anchor_refresh = false;
};

struct ProbeRecord {
  int step = 0;
  int decode_len = 0;
  double wer = 0.0;
};

struct AttackTrace {
  AttackMethod method = AttackMethod::MORE;
  double epsilon = 0.0;
  double alpha = 0.0;
  std::vector<StepRecord> steps;
  std::vector<int> block_hypothesis_lens;  // L_m in effect per anchor event
  std::vector<ProbeRecord> probes;
};

struct AttackResult {
  std::vector<double> delta;
  AttackTrace trace;
  bool aborted = false;
  std::string error;
};

// delta - alpha * sign(grad), then clipped into the epsilon ball;
// sign(0) = 0. Throws NumericalFailure on non-finite gradients.
void sign_step(std::vector<double>& delta, const std::vector<double>& grad, double alpha,
               double epsilon);

AttackResult attack_more(const ModelBundle& bundle, const Utterance& utt,
                         const AttackConfig& cfg);
AttackResult attack_pgd(const ModelBundle& bundle, const Utterance& utt,
                        const AttackConfig& cfg);
AttackResult attack_mifgsm(const ModelBundle& bundle, const Utterance& utt,
                           const AttackConfig& cfg);
AttackResult attack_vmifgsm(const ModelBundle& bundle, const Utterance& utt,
                            const AttackConfig& cfg);
AttackResult attack_eos_only(const ModelBundle& bundle, const Utterance& utt,
                             const AttackConfig& cfg);

AttackResult run_attack(const ModelBundle& bundle, const Utterance& utt,
                        const AttackConfig& cfg);

// JSON-lines export, one record per step.
std::string trace_to_jsonl(const AttackTrace& trace);

// Final delta as raw little-endian 64-bit floats.
void write_delta_raw(const std::string& path, const std::vector<double>& delta);

}  // namespace advasr
