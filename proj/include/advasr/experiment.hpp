#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advasr/attacks.hpp"
#include "advasr/corpus.hpp"
#include "advasr/metrics.hpp"
#include "advasr/model.hpp"

namespace advasr {

inline constexpr const char* kArtifactVersion = "0.1.0";

struct BudgetSpec {
  std::optional<double> snr_db;   // derive epsilon per utterance
  std::optional<double> epsilon;  // or use a fixed radius
  std::string label() const;
};

struct MethodCell {
  std::string name;  // row label, e.g. "more", "pgd", "more_noacc"
  AttackConfig attack;
};

struct ExperimentConfig {
  std::optional<CorpusSpec> generate;   // synthesize the corpus...
  std::optional<std::string> manifest;  // ...or load WAVs + transcripts
  std::string checkpoint;
  std::vector<MethodCell> cells;
  std::vector<BudgetSpec> budgets;
  int eval_count = 50;
  uint64_t seed = 1;
  bool write_wavs = false;
  bool write_traces = false;
  std::string out_dir;

  // Test hook, never serialized: throws for chosen utterances to verify
  // campaign isolation.
  std::function<void(const std::string& cell, std::size_t utt)> fault_injector;

  void validate() const;
};

ExperimentConfig parse_experiment_config(const nlohmann::json& j);
nlohmann::json experiment_config_to_json(const ExperimentConfig& c);

struct UtteranceRow {
  int utterance_id = 0;
  std::string method;
  double snr_db = 0.0;  // budget label value (derived for epsilon budgets)
  double wer = 0.0;
  int length_clean = 0;
  int length_adv = 0;
  double flops_clean = 0.0;
  double flops_adv = 0.0;
  double slowdown = 0.0;
  double epsilon = 0.0;
  double delta_linf = 0.0;
  double measured_snr_db = 0.0;
  bool failed = false;
  std::string error;
};

struct CellAggregate {
  std::string method;
  std::string budget;
  double snr_db = 0.0;
  double mean_wer = 0.0;
  double mean_length = 0.0;
  double mean_flops = 0.0;
  double mean_slowdown = 0.0;
  int n_ok = 0;
  int n_failed = 0;
};

struct CleanBaseline {
  double mean_wer = 0.0;
  double mean_length = 0.0;
  double mean_flops = 0.0;
  std::vector<int> lengths;
  std::vector<double> wers;
};

struct ExperimentResult {
  CleanBaseline clean;
  std::vector<UtteranceRow> rows;
  std::vector<CellAggregate> aggregates;
  std::vector<AttackTrace> traces;  // aligned with rows when kept
  uint64_t seed = 0;
  std::string config_hash;
};

// Runs every (cell x budget) over the eval set; per-utterance failures
// are recorded and the campaign continues.
ExperimentResult run_experiment(const ModelBundle& bundle,
                                const std::vector<Utterance>& eval_set,
                                const ExperimentConfig& cfg, bool keep_traces = false);

std::string result_csv(const ExperimentResult& r);
nlohmann::json result_summary_json(const ExperimentResult& r);

// ---- CLI-facing commands ------------------------------------------------------

// Writes WAVs, transcripts.txt and manifest.json; returns the manifest path.
std::string cmd_gen_data(const CorpusSpec& spec, const std::string& out_dir);

struct TrainCommandConfig {
  ModelConfig model;
  TrainConfig train;
  std::optional<CorpusSpec> generate;
  std::optional<std::string> manifest;
  double train_fraction = 2000.0 / 2200.0;
  uint64_t split_seed = 11;
};

TrainCommandConfig parse_train_config(const nlohmann::json& j);

struct TrainSummary {
  std::vector<double> loss_curve;
  double heldout_wer = 0.0;
  std::string checkpoint_path;
};

TrainSummary cmd_train(const TrainCommandConfig& cfg, const std::string& out_dir);

ExperimentResult cmd_attack(const ExperimentConfig& cfg);

struct EvalSummary {
  std::vector<WerReport> per_utterance;
  double mean_wer = 0.0;
  double mean_length = 0.0;
};

EvalSummary cmd_eval(const std::string& ref_manifest, const std::string& hyp_file);

struct CostReport {
  double stage1 = 0.0;
  Stage2Cost stage2;
  double inference_clean = 0.0;
  double inference_adv = 0.0;
  double slowdown = 0.0;
  EnvelopeSums sums;
  bool has_sums = false;
  BoundComponents bound;
  nlohmann::json flops_rows;  // optional per-model FLOPs sub-report
};

CostScenario parse_cost_scenario(const nlohmann::json& j);
CostReport cmd_cost_model(const nlohmann::json& scenario);

uint64_t fnv1a_hash(const std::string& data);

}  // namespace advasr
