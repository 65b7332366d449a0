#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "advasr/signal.hpp"
#include "advasr/vocab.hpp"

namespace advasr {

struct Utterance {
  Waveform waveform;
  TokenSequence transcript;  // word ids only, no BOS/EOS/PAD
  std::string text;
};

struct CorpusSpec {
  uint64_t seed = 7;
  int n_utterances = 2200;
  int words_min = 4;
  int words_max = 8;
  int word_vocab_size = 40;
  int burst_samples = 1600;
  double burst_amplitude = 0.45;      // loudest rendering of a word
  double burst_amplitude_min = 0.015;  // faintest; per-word level is uniform
  double noise_floor = 0.001;
  int pad_samples = 4800;  // max trailing noise-floor region; length varies per utterance
  double refrain_prob = 0.5;  // fraction of utterances built as repeated phrases
  int sample_rate = 16000;
  std::vector<double> tone_table;  // word index -> Hz; defaulted when empty

  void validate(int model_vocab) const;  // throws InvalidConfig
  std::vector<double> resolved_tones() const;
};

// Tone-burst words plus a low noise floor; deterministic per (seed, spec),
// each utterance drawn from its own per-index stream.
std::vector<Utterance> generate_corpus(const CorpusSpec& spec);

Utterance load_utterance(const std::string& wav_path, const std::string& transcript_line,
                         const Vocabulary& vocab);

// Seeded shuffle then split; disjoint and exhaustive.
std::pair<std::vector<Utterance>, std::vector<Utterance>> split(
    const std::vector<Utterance>& corpus, double train_fraction, uint64_t seed);

// Manifest + transcript file I/O (one utterance per transcript line).
struct ManifestEntry {
  std::string wav;
  int transcript_line = 0;
};

struct Manifest {
  std::string transcript_file;
  std::vector<ManifestEntry> entries;
};

void write_manifest(const std::string& path, const Manifest& m);
Manifest read_manifest(const std::string& path);

std::vector<Utterance> load_manifest_corpus(const std::string& manifest_path,
                                            const Vocabulary& vocab);

}  // namespace advasr
