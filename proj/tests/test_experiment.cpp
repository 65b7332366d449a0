#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "advasr/errors.hpp"
#include "advasr/experiment.hpp"
#include "test_helpers.hpp"

using namespace advasr;
using advasr::testing::tiny_corpus_spec;
using advasr::testing::trained_tiny_bundle;

namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_experiment(const std::string& ckpt) {
  ExperimentConfig cfg;
  cfg.generate = tiny_corpus_spec();
  cfg.checkpoint = ckpt;
  MethodCell pgd;
  pgd.name = "pgd";
  pgd.attack.method = AttackMethod::PGD;
  pgd.attack.total_steps = 6;
  pgd.attack.accuracy_steps = 6;
  MethodCell eos;
  eos.name = "eos_only";
  eos.attack.method = AttackMethod::EOS_ONLY;
  eos.attack.total_steps = 6;
  eos.attack.accuracy_steps = 0;
  cfg.cells = {pgd, eos};
  BudgetSpec b;
  b.epsilon = 0.02;
  cfg.budgets = {b};
  cfg.eval_count = 6;
  cfg.seed = 3;
  return cfg;
}

std::vector<Utterance> eval_subset(int n) {
  auto corpus = generate_corpus(tiny_corpus_spec());
  corpus.resize(n);
  return corpus;
}

}  // namespace

TEST_CASE("gen-data writes wavs, transcripts, manifest deterministically") {
  const std::string dir = "test_gen_dir";
  CorpusSpec spec = tiny_corpus_spec();
  spec.n_utterances = 10;
  const std::string manifest_path = cmd_gen_data(spec, dir);

  int wav_count = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".wav") ++wav_count;
  CHECK(wav_count == 10);

  std::ifstream tf(fs::path(dir) / "transcripts.txt");
  int lines = 0;
  for (std::string l; std::getline(tf, l);) ++lines;
  CHECK(lines == 10);

  const Manifest m = read_manifest(manifest_path);
  CHECK(m.entries.size() == 10);

  // Rerun produces identical bytes.
  auto file_bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  };
  const std::string before = file_bytes(fs::path(dir) / "utt_0003.wav");
  cmd_gen_data(spec, dir);
  CHECK(file_bytes(fs::path(dir) / "utt_0003.wav") == before);

  // Round trip through the manifest loader.
  const Vocabulary vocab = Vocabulary::standard(spec.word_vocab_size);
  const auto loaded = load_manifest_corpus(manifest_path, vocab);
  const auto generated = generate_corpus(spec);
  REQUIRE(loaded.size() == 10);
  CHECK(loaded[4].transcript == generated[4].transcript);

  fs::remove_all(dir);
  CHECK_THROWS_AS(cmd_gen_data(spec, "/proc/advasr_unwritable"), IoError);
}

TEST_CASE("experiment aggregates equal recomputation from rows") {
  const ModelBundle& bundle = trained_tiny_bundle();
  ExperimentConfig cfg = tiny_experiment("unused.ckpt");
  const auto eval_set = eval_subset(cfg.eval_count);
  const ExperimentResult r = run_experiment(bundle, eval_set, cfg);

  REQUIRE(r.aggregates.size() == 2);
  REQUIRE(r.rows.size() == 12);
  for (const CellAggregate& agg : r.aggregates) {
    double wer_sum = 0.0, len_sum = 0.0;
    int n = 0;
    for (const UtteranceRow& row : r.rows) {
      if (row.method != agg.method || row.failed) continue;
      wer_sum += row.wer;
      len_sum += row.length_adv;
      ++n;
    }
    REQUIRE(n == agg.n_ok);
    CHECK(agg.mean_wer == doctest::Approx(wer_sum / n));
    CHECK(agg.mean_length == doctest::Approx(len_sum / n));
  }
}

TEST_CASE("summary json is byte-identical across runs") {
  const ModelBundle& bundle = trained_tiny_bundle();
  ExperimentConfig cfg = tiny_experiment("unused.ckpt");
  const auto eval_set = eval_subset(cfg.eval_count);
  const std::string a = result_summary_json(run_experiment(bundle, eval_set, cfg)).dump();
  const std::string b = result_summary_json(run_experiment(bundle, eval_set, cfg)).dump();
  CHECK(a == b);
}

TEST_CASE("a failing utterance never alters the others") {
  const ModelBundle& bundle = trained_tiny_bundle();
  ExperimentConfig cfg = tiny_experiment("unused.ckpt");
  const auto eval_set = eval_subset(cfg.eval_count);
  const ExperimentResult base = run_experiment(bundle, eval_set, cfg);

  ExperimentConfig faulty = cfg;
  faulty.fault_injector = [](const std::string& cell, std::size_t utt) {
    if (cell == "pgd" && utt == 2) throw std::runtime_error("injected fault");
  };
  const ExperimentResult r = run_experiment(bundle, eval_set, faulty);

  REQUIRE(r.rows.size() == base.rows.size());
  int failed = 0;
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    if (r.rows[i].failed) {
      ++failed;
      CHECK(r.rows[i].method == "pgd");
      CHECK(r.rows[i].utterance_id == 2);
      CHECK(r.rows[i].error == "injected fault");
    } else {
      CHECK(r.rows[i].wer == base.rows[i].wer);
      CHECK(r.rows[i].length_adv == base.rows[i].length_adv);
      CHECK(r.rows[i].slowdown == base.rows[i].slowdown);
    }
  }
  CHECK(failed == 1);
  for (const CellAggregate& agg : r.aggregates)
    if (agg.method == "pgd") CHECK(agg.n_failed == 1);
}

TEST_CASE("csv layout carries the documented columns") {
  const ModelBundle& bundle = trained_tiny_bundle();
  ExperimentConfig cfg = tiny_experiment("unused.ckpt");
  cfg.eval_count = 2;
  const ExperimentResult r = run_experiment(bundle, eval_subset(2), cfg);
  const std::string csv = result_csv(r);
  CHECK(csv.rfind("utterance_id,method,snr_db,wer,length_clean,length_adv,flops_clean,"
                  "flops_adv,slowdown\n",
                  0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 2 cells x 2 utts
}

TEST_CASE("experiment config round-trips through json") {
  ExperimentConfig cfg = tiny_experiment("ckpt.bin");
  cfg.budgets.push_back(BudgetSpec{.snr_db = 35.0});
  const nlohmann::json j = experiment_config_to_json(cfg);
  const ExperimentConfig back = parse_experiment_config(j);
  CHECK(back.checkpoint == cfg.checkpoint);
  REQUIRE(back.cells.size() == cfg.cells.size());
  CHECK(back.cells[0].name == cfg.cells[0].name);
  CHECK(back.cells[1].attack.method == AttackMethod::EOS_ONLY);
  REQUIRE(back.budgets.size() == 2);
  CHECK(back.budgets[1].snr_db == 35.0);
  CHECK(back.eval_count == cfg.eval_count);

  nlohmann::json bad = j;
  bad.erase("cells");
  CHECK_THROWS(parse_experiment_config(bad));
}

TEST_CASE("cmd_eval means and misalignment error") {
  const std::string dir = "test_eval_dir";
  CorpusSpec spec = tiny_corpus_spec();
  spec.n_utterances = 4;
  const std::string manifest = cmd_gen_data(spec, dir);
  const auto corpus = generate_corpus(spec);

  {
    std::ofstream hyp(fs::path(dir) / "hyp.txt", std::ios::trunc);
    for (const auto& u : corpus) hyp << u.text << '\n';
  }
  EvalSummary s = cmd_eval(manifest, (fs::path(dir) / "hyp.txt").string());
  CHECK(s.mean_wer == doctest::Approx(0.0));

  // One fully wrong utterance out of four scores mean 25.
  {
    std::ofstream hyp(fs::path(dir) / "hyp.txt", std::ios::trunc);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (i == 0) {
        std::string all_wrong;
        for (std::size_t w = 0; w < corpus[i].transcript.size(); ++w)
          all_wrong += all_wrong.empty() ? "qq" : " qq";
        hyp << all_wrong << '\n';
      } else {
        hyp << corpus[i].text << '\n';
      }
    }
  }
  s = cmd_eval(manifest, (fs::path(dir) / "hyp.txt").string());
  CHECK(s.mean_wer == doctest::Approx(25.0));

  {
    std::ofstream hyp(fs::path(dir) / "hyp.txt", std::ios::trunc);
    hyp << "only one line\n";
  }
  CHECK_THROWS_AS(cmd_eval(manifest, (fs::path(dir) / "hyp.txt").string()), InvalidInput);
  fs::remove_all(dir);
}

TEST_CASE("cost-model command reproduces hand arithmetic and flops rows") {
  nlohmann::json scenario = {
      {"F", 1},      {"N_e", 1}, {"d_e", 1},   {"d_ff_e", 1}, {"N_d", 1}, {"d_d", 1},
      {"d_ff_d", 1}, {"V", 1},   {"K", 3},     {"K_a", 2},    {"D", 1},   {"kappa", 2.0},
      {"L_acc", 1},  {"L_m", nlohmann::json::array({1})},
  };
  CostReport r = cmd_cost_model(scenario);
  CHECK(r.stage1 == doctest::Approx(22.0));
  CHECK(r.stage2.total == doctest::Approx(28.0));

  scenario["K_a"] = scenario["K"];
  r = cmd_cost_model(scenario);
  CHECK(r.stage2.total == 0.0);

  nlohmann::json flops_scn = scenario;
  flops_scn["flops"] = nlohmann::json::array(
      {{{"name", "tiny"}, {"params", 39000000}, {"baseline_tokens", 22}, {"adv_tokens", 296}}});
  r = cmd_cost_model(flops_scn);
  REQUIRE(r.flops_rows.size() == 1);
  CHECK(std::abs(r.flops_rows[0]["baseline_gflops"].get<double>() - 1.716) < 1e-9);

  nlohmann::json bad = scenario;
  bad["kappa"] = 5.0;
  CHECK_THROWS_AS(cmd_cost_model(bad), InvalidConfig);
  bad = scenario;
  bad.erase("V");
  CHECK_THROWS_AS(cmd_cost_model(bad), InvalidConfig);
}
