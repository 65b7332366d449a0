#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "advasr/errors.hpp"
#include "advasr/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw advasr::InvalidConfig("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw advasr::InvalidConfig(path + ": " + e.what());
  }
  return j;
}

int run(int argc, char** argv) {
  CLI::App app{"adversarial attacks against a toy seq2seq speech recognizer"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<uint64_t> seed;

  auto add_common = [&](CLI::App* cmd, bool config_required) {
    cmd->add_option("--config", config_path, "JSON config file")->required(config_required);
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "override the config seed");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  add_common(gen, false);

  CLI::App* train = app.add_subcommand("train", "train the victim model");
  add_common(train, false);

  CLI::App* attack = app.add_subcommand("attack", "run an attack campaign");
  add_common(attack, true);
  std::string checkpoint_flag;
  attack->add_option("--checkpoint", checkpoint_flag, "override checkpoint path");
  bool write_wavs = false, write_traces = false;
  attack->add_flag("--write-wavs", write_wavs, "export adversarial WAVs");
  attack->add_flag("--write-traces", write_traces, "export per-step JSONL traces");

  CLI::App* eval = app.add_subcommand("eval", "score hypotheses against references");
  std::string ref_path, hyp_path;
  eval->add_option("--ref", ref_path, "reference manifest.json")->required();
  eval->add_option("--hyp", hyp_path, "hypothesis file, one utterance per line")->required();
  eval->add_option("--out", out_dir, "output directory");

  CLI::App* cost = app.add_subcommand("cost-model", "evaluate the analytic cost model");
  add_common(cost, true);

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    advasr::CorpusSpec spec;
    if (!config_path.empty()) {
      const json j = load_json(config_path);
      spec.seed = j.value("seed", spec.seed);
      spec.n_utterances = j.value("n_utterances", spec.n_utterances);
      spec.words_min = j.value("words_min", spec.words_min);
      spec.words_max = j.value("words_max", spec.words_max);
      spec.word_vocab_size = j.value("word_vocab_size", spec.word_vocab_size);
      spec.burst_samples = j.value("burst_samples", spec.burst_samples);
      spec.burst_amplitude = j.value("burst_amplitude", spec.burst_amplitude);
      spec.noise_floor = j.value("noise_floor", spec.noise_floor);
    }
    if (seed) spec.seed = *seed;
    if (out_dir.empty()) out_dir = "data";
    const std::string manifest = advasr::cmd_gen_data(spec, out_dir);
    std::cout << "wrote " << spec.n_utterances << " utterances, manifest: " << manifest
              << "\n";
    return 0;
  }

  if (train->parsed()) {
    advasr::TrainCommandConfig cfg;
    if (!config_path.empty()) cfg = advasr::parse_train_config(load_json(config_path));
    else cfg.generate = advasr::CorpusSpec{};
    if (seed) cfg.train.seed = *seed;
    if (out_dir.empty()) out_dir = "run";
    const advasr::TrainSummary s = advasr::cmd_train(cfg, out_dir);
    std::cout << "checkpoint: " << s.checkpoint_path << "\n";
    if (!s.loss_curve.empty())
      std::cout << "final epoch loss: " << s.loss_curve.back() << "\n";
    std::printf("held-out clean WER: %.2f%%\n", s.heldout_wer);
    return 0;
  }

  if (attack->parsed()) {
    advasr::ExperimentConfig cfg = advasr::parse_experiment_config(load_json(config_path));
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!checkpoint_flag.empty()) cfg.checkpoint = checkpoint_flag;
    if (write_wavs) cfg.write_wavs = true;
    if (write_traces) cfg.write_traces = true;
    const advasr::ExperimentResult r = advasr::cmd_attack(cfg);
    std::cout << advasr::result_summary_json(r).dump(2) << "\n";
    int ok = 0, failed = 0;
    for (const auto& row : r.rows) (row.failed ? failed : ok)++;
    if (ok == 0 && failed > 0) {
      std::cerr << "all " << failed << " attack runs failed\n";
      return 1;
    }
    return 0;
  }

  if (eval->parsed()) {
    const advasr::EvalSummary s = advasr::cmd_eval(ref_path, hyp_path);
    std::string csv = "utterance,wer,ref_len,hyp_len\n";
    for (std::size_t i = 0; i < s.per_utterance.size(); ++i) {
      const auto& r = s.per_utterance[i];
      char line[128];
      std::snprintf(line, sizeof line, "%zu,%.2f,%d,%d\n", i, r.wer_percent, r.ref_len,
                    r.hyp_len_raw);
      csv += line;
    }
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      std::ofstream out(fs::path(out_dir) / "eval.csv", std::ios::trunc);
      out << csv;
    }
    std::cout << csv;
    std::printf("mean WER: %.2f%%  mean length: %.2f\n", s.mean_wer, s.mean_length);
    return 0;
  }

  if (cost->parsed()) {
    const advasr::CostReport r = advasr::cmd_cost_model(load_json(config_path));
    json j;
    j["stage1_cost"] = r.stage1;
    j["stage2_cost"] = r.stage2.total;
    json blocks = json::array();
    for (const auto& b : r.stage2.blocks)
      blocks.push_back({{"L_m", b.l_m},
                        {"step_cost", b.step_cost},
                        {"anchor_cost", b.anchor_cost},
                        {"vocab_cost", b.vocab_cost}});
    j["stage2_blocks"] = blocks;
    j["inference_clean"] = r.inference_clean;
    j["inference_adv"] = r.inference_adv;
    j["slowdown"] = r.slowdown;
    if (r.has_sums) {
      j["envelope_sum_L"] = r.sums.sum_l;
      j["envelope_sum_L_sq"] = r.sums.sum_l_sq;
    }
    j["bound"] = {{"encoder_passes", r.bound.encoder_passes},
                  {"decoder_terms", r.bound.decoder_terms},
                  {"overheads", r.bound.overheads}};
    if (!r.flops_rows.is_null()) j["flops"] = r.flops_rows;
    std::cout << j.dump(2) << "\n";
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      std::ofstream out(fs::path(out_dir) / "cost_report.json", std::ios::trunc);
      out << j.dump(2) << "\n";
    }
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const advasr::InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const advasr::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
