#include "advasr/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "advasr/errors.hpp"
#include "advasr/parallel.hpp"
#include "advasr/rng.hpp"
#include "advasr/wav.hpp"

namespace advasr {

namespace fs = std::filesystem;

uint64_t fnv1a_hash(const std::string& data) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string BudgetSpec::label() const {
  char buf[64];
  if (snr_db) {
    std::snprintf(buf, sizeof buf, "snr%g", *snr_db);
  } else {
    std::snprintf(buf, sizeof buf, "eps%g", epsilon.value_or(0.0));
  }
  return buf;
}

void ExperimentConfig::validate() const {
  if (!generate && !manifest)
    throw InvalidConfig("experiment: need either a corpus spec or a manifest path");
  if (checkpoint.empty()) throw InvalidConfig("experiment: checkpoint path is required");
  if (cells.empty()) throw InvalidConfig("experiment: at least one method cell is required");
  if (budgets.empty()) throw InvalidConfig("experiment: at least one budget is required");
  if (eval_count < 1) throw InvalidConfig("experiment: eval_count must be >= 1");
  for (const BudgetSpec& b : budgets) {
    if (!b.snr_db && !b.epsilon)
      throw InvalidConfig("experiment: budget needs snr_db or epsilon");
    if (b.snr_db && *b.snr_db <= 0) throw InvalidConfig("experiment: snr_db must be > 0");
    if (b.epsilon && *b.epsilon <= 0) throw InvalidConfig("experiment: epsilon must be > 0");
  }
}

// ---- config JSON ---------------------------------------------------------------

namespace {

AttackConfig attack_config_from_json(const nlohmann::json& j) {
  AttackConfig a;
  a.method = attack_method_from_name(j.at("method").get<std::string>());
  a.total_steps = j.value("steps", a.total_steps);
  a.accuracy_steps = j.value("accuracy_steps", std::min(a.accuracy_steps, a.total_steps));
  a.doubling_period = j.value("doubling_period", a.doubling_period);
  if (j.contains("alpha")) a.alpha = j.at("alpha").get<double>();
  if (j.contains("epsilon")) a.epsilon = j.at("epsilon").get<double>();
  a.momentum = j.value("momentum", a.momentum);
  a.variance_samples = j.value("variance_samples", a.variance_samples);
  a.variance_radius = j.value("variance_radius", a.variance_radius);
  a.eval_every = j.value("eval_every", a.eval_every);
  a.seed = j.value("seed", a.seed);
  return a;
}

nlohmann::json attack_config_to_json(const AttackConfig& a) {
  nlohmann::json j;
  j["method"] = attack_method_name(a.method);
  j["steps"] = a.total_steps;
  j["accuracy_steps"] = a.accuracy_steps;
  j["doubling_period"] = a.doubling_period;
  if (a.alpha) j["alpha"] = *a.alpha;
  if (a.epsilon) j["epsilon"] = *a.epsilon;
  j["momentum"] = a.momentum;
  j["variance_samples"] = a.variance_samples;
  j["variance_radius"] = a.variance_radius;
  j["eval_every"] = a.eval_every;
  j["seed"] = a.seed;
  return j;
}

CorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
  CorpusSpec s;
  s.seed = j.value("seed", s.seed);
  s.n_utterances = j.value("n_utterances", s.n_utterances);
  s.words_min = j.value("words_min", s.words_min);
  s.words_max = j.value("words_max", s.words_max);
  s.word_vocab_size = j.value("word_vocab_size", s.word_vocab_size);
  s.burst_samples = j.value("burst_samples", s.burst_samples);
  s.burst_amplitude = j.value("burst_amplitude", s.burst_amplitude);
  s.noise_floor = j.value("noise_floor", s.noise_floor);
  s.sample_rate = j.value("sample_rate", s.sample_rate);
  if (j.contains("tone_table")) s.tone_table = j.at("tone_table").get<std::vector<double>>();
  return s;
}

nlohmann::json corpus_spec_to_json(const CorpusSpec& s) {
  nlohmann::json j;
  j["seed"] = s.seed;
  j["n_utterances"] = s.n_utterances;
  j["words_min"] = s.words_min;
  j["words_max"] = s.words_max;
  j["word_vocab_size"] = s.word_vocab_size;
  j["burst_samples"] = s.burst_samples;
  j["burst_amplitude"] = s.burst_amplitude;
  j["noise_floor"] = s.noise_floor;
  j["sample_rate"] = s.sample_rate;
  if (!s.tone_table.empty()) j["tone_table"] = s.tone_table;
  return j;
}

}  // namespace

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("generate")) c.generate = corpus_spec_from_json(j.at("generate"));
  if (j.contains("manifest")) c.manifest = j.at("manifest").get<std::string>();
  c.checkpoint = j.value("checkpoint", std::string());
  for (const auto& cell : j.at("cells")) {
    MethodCell m;
    m.attack = attack_config_from_json(cell);
    m.name = cell.value("name", std::string(attack_method_name(m.attack.method)));
    c.cells.push_back(std::move(m));
  }
  for (const auto& b : j.at("budgets")) {
    BudgetSpec spec;
    if (b.contains("snr_db")) spec.snr_db = b.at("snr_db").get<double>();
    if (b.contains("epsilon")) spec.epsilon = b.at("epsilon").get<double>();
    c.budgets.push_back(spec);
  }
  c.eval_count = j.value("eval_count", c.eval_count);
  c.seed = j.value("seed", c.seed);
  c.write_wavs = j.value("write_wavs", false);
  c.write_traces = j.value("write_traces", false);
  c.out_dir = j.value("out_dir", std::string());
  return c;
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  if (c.generate) j["generate"] = corpus_spec_to_json(*c.generate);
  if (c.manifest) j["manifest"] = *c.manifest;
  j["checkpoint"] = c.checkpoint;
  j["cells"] = nlohmann::json::array();
  for (const MethodCell& m : c.cells) {
    nlohmann::json cell = attack_config_to_json(m.attack);
    cell["name"] = m.name;
    j["cells"].push_back(cell);
  }
  j["budgets"] = nlohmann::json::array();
  for (const BudgetSpec& b : c.budgets) {
    nlohmann::json jb;
    if (b.snr_db) jb["snr_db"] = *b.snr_db;
    if (b.epsilon) jb["epsilon"] = *b.epsilon;
    j["budgets"].push_back(jb);
  }
  j["eval_count"] = c.eval_count;
  j["seed"] = c.seed;
  j["write_wavs"] = c.write_wavs;
  j["write_traces"] = c.write_traces;
  j["out_dir"] = c.out_dir;
  return j;
}

// ---- campaign -----------------------------------------------------------------

namespace {

TokenSequence strip_eos(TokenSequence t) {
  if (!t.empty() && t.back() == kEosId) t.pop_back();
  return t;
}

}  // namespace

ExperimentResult run_experiment(const ModelBundle& bundle,
                                const std::vector<Utterance>& eval_set,
                                const ExperimentConfig& cfg, bool keep_traces) {
  cfg.validate();
  if (eval_set.empty()) throw InvalidInput("run_experiment: empty eval set");
  const Vocabulary vocab = Vocabulary::standard(bundle.config.vocab_size - kFirstWordId);
  const uint64_t n_params = bundle.params.size();

  ExperimentResult result;
  result.seed = cfg.seed;
  result.config_hash = [&] {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(
                      fnv1a_hash(experiment_config_to_json(cfg).dump())));
    return std::string(buf);
  }();

  // Clean baseline, shared across cells.
  std::vector<int> clean_len(eval_set.size());
  std::vector<double> clean_wer(eval_set.size());
  parallel_for(eval_set.size(), [&](std::size_t i) {
    const Mat feats = extract_features(eval_set[i].waveform, bundle.config.frontend);
    DecodeResult dec = greedy_decode(bundle, feats, bundle.config.max_len);
    clean_len[i] = length_tokens(dec);
    clean_wer[i] = wer(vocab.to_words(eval_set[i].transcript),
                       vocab.to_words(strip_eos(dec.tokens)))
                       .wer_percent;
  });
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    result.clean.lengths.push_back(clean_len[i]);
    result.clean.wers.push_back(clean_wer[i]);
    result.clean.mean_length += clean_len[i];
    result.clean.mean_wer += clean_wer[i];
    result.clean.mean_flops += flops_estimate(n_params, clean_len[i]).flops;
  }
  result.clean.mean_length /= static_cast<double>(eval_set.size());
  result.clean.mean_wer /= static_cast<double>(eval_set.size());
  result.clean.mean_flops /= static_cast<double>(eval_set.size());

  for (const MethodCell& cell : cfg.cells) {
    for (const BudgetSpec& budget : cfg.budgets) {
      std::vector<UtteranceRow> rows(eval_set.size());
      std::vector<AttackTrace> traces(keep_traces || cfg.write_traces ? eval_set.size() : 0);

      parallel_for(eval_set.size(), [&](std::size_t i) {
        const Utterance& utt = eval_set[i];
        UtteranceRow& row = rows[i];
        row.utterance_id = static_cast<int>(i);
        row.method = cell.name;
        row.length_clean = clean_len[i];
        row.flops_clean = flops_estimate(n_params, clean_len[i]).flops;
        try {
          if (cfg.fault_injector) cfg.fault_injector(cell.name, i);

          AttackConfig attack = cell.attack;
          if (budget.epsilon) {
            attack.epsilon = *budget.epsilon;
          } else {
            attack.epsilon.reset();
            attack.snr_db_target = *budget.snr_db;
          }
          attack.seed = Rng::derive(cfg.seed, fnv1a_hash(cell.name + budget.label()) + i);

          row.snr_db = budget.snr_db ? *budget.snr_db
                                     : 20.0 * std::log10(linf_norm(utt.waveform.samples) /
                                                         *budget.epsilon);

          AttackResult att = run_attack(bundle, utt, attack);
          if (att.aborted) throw NumericalFailure(att.error);

          row.epsilon = att.trace.epsilon;
          row.delta_linf = linf_norm(att.delta);
          row.measured_snr_db = snr_db(utt.waveform, att.delta);

          const Waveform adv = advasr::apply(utt.waveform, att.delta);
          const Mat feats = extract_features(adv, bundle.config.frontend);
          DecodeResult dec = greedy_decode(bundle, feats, bundle.config.max_len);
          row.length_adv = length_tokens(dec);
          row.wer = wer(vocab.to_words(utt.transcript), vocab.to_words(strip_eos(dec.tokens)))
                        .wer_percent;
          row.flops_adv = flops_estimate(n_params, row.length_adv).flops;

          CostScenario scn;
          scn.frames = frame_count(utt.waveform, bundle.config.frontend);
          scn.n_enc = bundle.config.n_enc_layers;
          scn.d_enc = bundle.config.d_model;
          scn.d_ff_enc = bundle.config.d_ff;
          scn.heads_enc = bundle.config.heads;
          scn.n_dec = bundle.config.n_dec_layers;
          scn.d_dec = bundle.config.d_model;
          scn.d_ff_dec = bundle.config.d_ff;
          scn.heads_dec = bundle.config.heads;
          scn.vocab = bundle.config.vocab_size;
          row.slowdown = slowdown_ratio(scn, std::max(1, row.length_adv),
                                        std::max(1, row.length_clean));

          if (!traces.empty()) traces[i] = std::move(att.trace);

          if (cfg.write_wavs && !cfg.out_dir.empty()) {
            char name[128];
            std::snprintf(name, sizeof name, "adv_%s_%s_%04d.wav", cell.name.c_str(),
                          budget.label().c_str(), row.utterance_id);
            write_wav((fs::path(cfg.out_dir) / name).string(), adv);
          }
          if (cfg.write_traces && !cfg.out_dir.empty()) {
            char name[128];
            std::snprintf(name, sizeof name, "trace_%s_%s_%04d.jsonl", cell.name.c_str(),
                          budget.label().c_str(), row.utterance_id);
            std::ofstream tf(fs::path(cfg.out_dir) / name, std::ios::trunc);
            tf << trace_to_jsonl(traces[i]);
          }
        } catch (const std::exception& e) {
          row.failed = true;
          row.error = e.what();
        }
      });

      CellAggregate agg;
      agg.method = cell.name;
      agg.budget = budget.label();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].failed) {
          agg.n_failed += 1;
        } else {
          agg.n_ok += 1;
          agg.snr_db = rows[i].snr_db;
          agg.mean_wer += rows[i].wer;
          agg.mean_length += rows[i].length_adv;
          agg.mean_flops += rows[i].flops_adv;
          agg.mean_slowdown += rows[i].slowdown;
        }
        result.rows.push_back(std::move(rows[i]));
        if (keep_traces && !traces.empty()) result.traces.push_back(std::move(traces[i]));
      }
      if (agg.n_ok > 0) {
        agg.mean_wer /= agg.n_ok;
        agg.mean_length /= agg.n_ok;
        agg.mean_flops /= agg.n_ok;
        agg.mean_slowdown /= agg.n_ok;
      }
      result.aggregates.push_back(std::move(agg));
    }
  }
  return result;
}

std::string result_csv(const ExperimentResult& r) {
  std::ostringstream out;
  out << "utterance_id,method,snr_db,wer,length_clean,length_adv,flops_clean,flops_adv,"
         "slowdown\n";
  out.precision(6);
  for (const UtteranceRow& row : r.rows) {
    out << row.utterance_id << ',' << row.method << ',' << row.snr_db << ',';
    if (row.failed) {
      out << "failed,,,,,\n";
      continue;
    }
    out << row.wer << ',' << row.length_clean << ',' << row.length_adv << ','
        << row.flops_clean << ',' << row.flops_adv << ',' << row.slowdown << '\n';
  }
  return out.str();
}

nlohmann::json result_summary_json(const ExperimentResult& r) {
  nlohmann::json j;
  j["artifact_version"] = kArtifactVersion;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  j["clean"] = {{"mean_wer", r.clean.mean_wer},
                {"mean_length", r.clean.mean_length},
                {"mean_flops", r.clean.mean_flops}};
  j["cells"] = nlohmann::json::array();
  for (const CellAggregate& a : r.aggregates) {
    j["cells"].push_back({{"method", a.method},
                          {"budget", a.budget},
                          {"snr_db", a.snr_db},
                          {"mean_wer", a.mean_wer},
                          {"mean_length", a.mean_length},
                          {"mean_flops", a.mean_flops},
                          {"mean_slowdown", a.mean_slowdown},
                          {"n_ok", a.n_ok},
                          {"n_failed", a.n_failed}});
  }
  return j;
}

// ---- commands --------------------------------------------------------------------

std::string cmd_gen_data(const CorpusSpec& spec, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const std::vector<Utterance> corpus = generate_corpus(spec);

  const fs::path dir(out_dir);
  std::ofstream transcripts(dir / "transcripts.txt", std::ios::trunc);
  if (!transcripts) throw IoError("cannot write " + (dir / "transcripts.txt").string());

  Manifest manifest;
  manifest.transcript_file = "transcripts.txt";
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "utt_%04zu.wav", i);
    write_wav((dir / name).string(), corpus[i].waveform);
    transcripts << corpus[i].text << '\n';
    manifest.entries.push_back({name, static_cast<int>(i)});
  }
  transcripts.flush();
  if (!transcripts) throw IoError("write failed: " + (dir / "transcripts.txt").string());

  const std::string manifest_path = (dir / "manifest.json").string();
  write_manifest(manifest_path, manifest);
  return manifest_path;
}

TrainCommandConfig parse_train_config(const nlohmann::json& j) {
  TrainCommandConfig c;
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.model.n_enc_layers = m.value("n_enc_layers", c.model.n_enc_layers);
    c.model.n_dec_layers = m.value("n_dec_layers", c.model.n_dec_layers);
    c.model.d_model = m.value("d_model", c.model.d_model);
    c.model.heads = m.value("heads", c.model.heads);
    c.model.d_ff = m.value("d_ff", c.model.d_ff);
    c.model.vocab_size = m.value("vocab_size", c.model.vocab_size);
    c.model.max_len = m.value("max_len", c.model.max_len);
    c.model.init_seed = m.value("init_seed", c.model.init_seed);
    if (m.contains("frontend")) {
      const auto& f = m.at("frontend");
      c.model.frontend.frame_len = f.value("frame_len", c.model.frontend.frame_len);
      c.model.frontend.hop = f.value("hop", c.model.frontend.hop);
      c.model.frontend.d_feat = f.value("d_feat", c.model.frontend.d_feat);
      c.model.frontend.projection_seed =
          f.value("projection_seed", c.model.frontend.projection_seed);
    }
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.seed = t.value("seed", c.train.seed);
  }
  if (j.contains("generate")) c.generate = corpus_spec_from_json(j.at("generate"));
  if (j.contains("manifest")) c.manifest = j.at("manifest").get<std::string>();
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.split_seed = j.value("split_seed", c.split_seed);
  return c;
}

TrainSummary cmd_train(const TrainCommandConfig& cfg, const std::string& out_dir) {
  cfg.model.validate();
  std::vector<Utterance> corpus;
  if (cfg.generate) {
    CorpusSpec spec = *cfg.generate;
    spec.validate(cfg.model.vocab_size);
    corpus = generate_corpus(spec);
  } else if (cfg.manifest) {
    const Vocabulary vocab = Vocabulary::standard(cfg.model.vocab_size - kFirstWordId);
    corpus = load_manifest_corpus(*cfg.manifest, vocab);
  } else {
    throw InvalidConfig("train: need a corpus spec or a manifest");
  }
  if (corpus.empty()) throw InvalidInput("train: corpus is empty");

  auto [train_set, eval_set] = split(corpus, cfg.train_fraction, cfg.split_seed);

  ModelBundle bundle = init_model(cfg.model);
  TrainResult tr = train(bundle, train_set, cfg.train);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const fs::path dir(out_dir);

  TrainSummary summary;
  summary.loss_curve = tr.epoch_mean_loss;
  summary.checkpoint_path = (dir / "model.ckpt").string();
  save_checkpoint(bundle, summary.checkpoint_path);

  {
    std::ofstream curve(dir / "loss_curve.csv", std::ios::trunc);
    if (!curve) throw IoError("cannot write loss_curve.csv");
    curve << "epoch,mean_loss\n";
    curve.precision(12);
    for (std::size_t e = 0; e < tr.epoch_mean_loss.size(); ++e)
      curve << (e + 1) << ',' << tr.epoch_mean_loss[e] << '\n';
  }

  if (!eval_set.empty()) {
    const Vocabulary vocab = Vocabulary::standard(cfg.model.vocab_size - kFirstWordId);
    std::vector<double> wers(eval_set.size());
    parallel_for(eval_set.size(), [&](std::size_t i) {
      const Mat feats = extract_features(eval_set[i].waveform, bundle.config.frontend);
      DecodeResult dec = greedy_decode(bundle, feats, bundle.config.max_len);
      wers[i] = wer(vocab.to_words(eval_set[i].transcript),
                    vocab.to_words(strip_eos(dec.tokens)))
                    .wer_percent;
    });
    for (double w : wers) summary.heldout_wer += w;
    summary.heldout_wer /= static_cast<double>(eval_set.size());
  }
  return summary;
}

ExperimentResult cmd_attack(const ExperimentConfig& cfg) {
  cfg.validate();
  ModelBundle bundle = load_checkpoint(cfg.checkpoint);

  std::vector<Utterance> eval_set;
  if (cfg.generate) {
    CorpusSpec spec = *cfg.generate;
    spec.validate(bundle.config.vocab_size);
    std::vector<Utterance> corpus = generate_corpus(spec);
    if (static_cast<int>(corpus.size()) < cfg.eval_count)
      throw InvalidConfig("experiment: corpus smaller than eval_count");
    eval_set.assign(corpus.end() - cfg.eval_count, corpus.end());
  } else {
    const Vocabulary vocab = Vocabulary::standard(bundle.config.vocab_size - kFirstWordId);
    std::vector<Utterance> corpus = load_manifest_corpus(*cfg.manifest, vocab);
    if (static_cast<int>(corpus.size()) < cfg.eval_count)
      throw InvalidConfig("experiment: corpus smaller than eval_count");
    eval_set.assign(corpus.begin(), corpus.begin() + cfg.eval_count);
  }

  ExperimentResult result = run_experiment(bundle, eval_set, cfg);

  if (!cfg.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    const fs::path dir(cfg.out_dir);
    {
      std::ofstream csv(dir / "per_utterance.csv", std::ios::trunc);
      if (!csv) throw IoError("cannot write per_utterance.csv");
      csv << result_csv(result);
    }
    {
      std::ofstream summary(dir / "summary.json", std::ios::trunc);
      if (!summary) throw IoError("cannot write summary.json");
      summary << result_summary_json(result).dump(2) << '\n';
    }
  }
  return result;
}

EvalSummary cmd_eval(const std::string& ref_manifest, const std::string& hyp_file) {
  const Manifest manifest = read_manifest(ref_manifest);
  const auto base = fs::path(ref_manifest).parent_path();
  std::ifstream tf(base / manifest.transcript_file);
  if (!tf) throw IoError("cannot open transcript file");
  std::vector<std::string> refs;
  for (std::string line; std::getline(tf, line);) refs.push_back(line);

  std::ifstream hf(hyp_file);
  if (!hf) throw IoError("cannot open hypothesis file " + hyp_file);
  std::vector<std::string> hyps;
  for (std::string line; std::getline(hf, line);) hyps.push_back(line);

  if (hyps.size() != manifest.entries.size())
    throw InvalidInput("eval: hypothesis count " + std::to_string(hyps.size()) +
                       " does not match manifest count " +
                       std::to_string(manifest.entries.size()));

  auto words = [](const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    for (std::string w; ss >> w;) out.push_back(std::move(w));
    return out;
  };

  EvalSummary summary;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const int line = manifest.entries[i].transcript_line;
    if (line < 0 || line >= static_cast<int>(refs.size()))
      throw FormatError("eval: manifest transcript line out of range");
    WerReport r = wer(words(refs[line]), words(hyps[i]));
    summary.mean_wer += r.wer_percent;
    summary.mean_length += r.hyp_len_raw;
    summary.per_utterance.push_back(std::move(r));
  }
  summary.mean_wer /= static_cast<double>(manifest.entries.size());
  summary.mean_length /= static_cast<double>(manifest.entries.size());
  return summary;
}

CostScenario parse_cost_scenario(const nlohmann::json& j) {
  CostScenario s;
  auto req = [&](const char* field) -> double {
    if (!j.contains(field))
      throw InvalidConfig(std::string("cost scenario: missing field ") + field);
    return j.at(field).get<double>();
  };
  s.frames = req("F");
  s.n_enc = req("N_e");
  s.d_enc = req("d_e");
  s.d_ff_enc = req("d_ff_e");
  s.heads_enc = j.value("h_e", 1.0);
  s.n_dec = req("N_d");
  s.d_dec = req("d_d");
  s.d_ff_dec = req("d_ff_d");
  s.heads_dec = j.value("h_d", 1.0);
  s.vocab = req("V");
  s.total_steps = j.value("K", 0);
  s.accuracy_steps = j.value("K_a", 0);
  s.block_len = j.value("D", 1);
  s.kappa = j.value("kappa", 2.5);
  s.l_acc = j.value("L_acc", 0.0);
  s.l_eval = j.value("L_eval", 0.0);
  s.eval_every = j.value("E", 0);
  s.n_samples = j.value("T", 0.0);
  if (j.contains("L_m")) s.lm_schedule = j.at("L_m").get<std::vector<long long>>();
  if (j.contains("envelope")) {
    const auto& e = j.at("envelope");
    EnvelopeSpec env;
    const std::string kind = e.at("kind").get<std::string>();
    if (kind == "geometric") env.kind = EnvelopeSpec::Kind::Geometric;
    else if (kind == "linear") env.kind = EnvelopeSpec::Kind::Linear;
    else throw InvalidConfig("cost scenario: envelope kind must be geometric or linear");
    env.l0 = e.at("L0").get<long long>();
    env.delta = e.value("delta", 0LL);
    env.l_max = e.at("L_max").get<long long>();
    s.envelope = env;
  }
  s.validate();
  return s;
}

CostReport cmd_cost_model(const nlohmann::json& scenario) {
  CostScenario s = parse_cost_scenario(scenario);
  CostReport report;
  report.stage1 = cost_stage1(s);
  report.stage2 = cost_stage2(s);
  report.bound = bound_components(s);

  const double l_clean = s.l_acc > 0 ? s.l_acc : 1.0;
  double l_adv = l_clean;
  if (!report.stage2.blocks.empty())
    l_adv = 2.0 * static_cast<double>(report.stage2.blocks.back().l_m);
  if (scenario.contains("l_adv")) l_adv = scenario.at("l_adv").get<double>();
  report.inference_clean = cost_inference(s, l_clean);
  report.inference_adv = cost_inference(s, l_adv);
  report.slowdown = slowdown_ratio(s, l_adv, l_clean);

  if (s.envelope) {
    report.sums = envelope_sums(s.envelope->kind, s.envelope->l0, s.envelope->delta,
                                s.envelope->l_max, std::max(1, s.stage2_blocks()));
    report.has_sums = true;
  }

  if (scenario.contains("flops")) {
    report.flops_rows = nlohmann::json::array();
    for (const auto& row : scenario.at("flops")) {
      const auto params = row.at("params").get<uint64_t>();
      const auto base_tokens = row.at("baseline_tokens").get<uint64_t>();
      const auto adv_tokens = row.at("adv_tokens").get<uint64_t>();
      const FlopsEstimate fb = flops_estimate(params, base_tokens);
      const FlopsEstimate fa = flops_estimate(params, adv_tokens);
      report.flops_rows.push_back({{"name", row.value("name", std::string())},
                                   {"params", params},
                                   {"baseline_tokens", base_tokens},
                                   {"adv_tokens", adv_tokens},
                                   {"baseline_gflops", fb.flops / 1e9},
                                   {"adv_gflops", fa.flops / 1e9},
                                   {"increase", fa.flops / fb.flops}});
    }
  }
  return report;
}

}  // namespace advasr
