#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "advasr/corpus.hpp"
#include "advasr/errors.hpp"
#include "advasr/wav.hpp"

using namespace advasr;

namespace {

CorpusSpec small_spec() {
  CorpusSpec s;
  s.seed = 21;
  s.n_utterances = 12;
  s.words_min = 2;
  s.words_max = 4;
  s.word_vocab_size = 8;
  s.burst_samples = 400;
  return s;
}

// Magnitude of the DFT at one frequency bin (direct evaluation).
double dft_mag(const std::vector<double>& x, std::size_t begin, std::size_t len, double freq,
               int sample_rate) {
  std::complex<double> acc(0.0, 0.0);
  for (std::size_t n = 0; n < len; ++n) {
    const double phase = -2.0 * std::numbers::pi * freq * n / sample_rate;
    acc += x[begin + n] * std::complex<double>(std::cos(phase), std::sin(phase));
  }
  return std::abs(acc);
}

}  // namespace

TEST_CASE("generate_corpus is deterministic and sized") {
  const CorpusSpec spec = small_spec();
  auto a = generate_corpus(spec);
  auto b = generate_corpus(spec);
  REQUIRE(a.size() == 12);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].text == b[i].text);
    CHECK(a[i].waveform.samples == b[i].waveform.samples);
    CHECK(a[i].transcript == b[i].transcript);
  }

  CorpusSpec empty = spec;
  empty.n_utterances = 0;
  CHECK(generate_corpus(empty).empty());
}

TEST_CASE("transcripts round-trip through the vocabulary") {
  const CorpusSpec spec = small_spec();
  const Vocabulary vocab = Vocabulary::standard(spec.word_vocab_size);
  for (const Utterance& u : generate_corpus(spec)) {
    CHECK(vocab.tokenize(u.text) == u.transcript);
    for (int t : u.transcript) CHECK(vocab.is_word(t));
  }
}

TEST_CASE("distinct words carry distinct dominant frequencies") {
  CorpusSpec spec = small_spec();
  spec.noise_floor = 0.0;
  const auto tones = spec.resolved_tones();
  const auto corpus = generate_corpus(spec);

  // For each burst, the energy at its own tone dwarfs every other word's tone.
  const Utterance& u = corpus[0];
  for (std::size_t w = 0; w < u.transcript.size(); ++w) {
    const std::size_t begin = w * spec.burst_samples;
    const int word_index = u.transcript[w] - kFirstWordId;
    const double own =
        dft_mag(u.waveform.samples, begin, spec.burst_samples, tones[word_index], 16000);
    for (int other = 0; other < spec.word_vocab_size; ++other) {
      if (other == word_index) continue;
      const double cross =
          dft_mag(u.waveform.samples, begin, spec.burst_samples, tones[other], 16000);
      CHECK(own > 3.0 * cross);
    }
  }
}

TEST_CASE("split is seeded, disjoint, exhaustive") {
  CorpusSpec spec = small_spec();
  spec.n_utterances = 100;
  const auto corpus = generate_corpus(spec);
  auto [train_a, eval_a] = split(corpus, 0.8, 5);
  auto [train_b, eval_b] = split(corpus, 0.8, 5);
  CHECK(train_a.size() == 80);
  CHECK(eval_a.size() == 20);
  REQUIRE(train_b.size() == train_a.size());
  for (std::size_t i = 0; i < train_a.size(); ++i)
    CHECK(train_a[i].text == train_b[i].text);

  // Union equals the corpus as a multiset of texts.
  std::vector<std::string> all;
  for (const auto& u : train_a) all.push_back(u.text);
  for (const auto& u : eval_a) all.push_back(u.text);
  std::vector<std::string> orig;
  for (const auto& u : corpus) orig.push_back(u.text);
  std::sort(all.begin(), all.end());
  std::sort(orig.begin(), orig.end());
  CHECK(all == orig);

  CHECK_THROWS_AS(split(corpus, 0.0, 1), InvalidInput);
  CHECK_THROWS_AS(split(corpus, 1.0, 1), InvalidInput);
}

TEST_CASE("load_utterance round trip and errors") {
  namespace fs = std::filesystem;
  const Vocabulary vocab = Vocabulary::standard(8);
  CorpusSpec spec = small_spec();
  spec.n_utterances = 1;
  const auto corpus = generate_corpus(spec);

  const std::string path = "test_load.wav";
  write_wav(path, corpus[0].waveform);
  Utterance u = load_utterance(path, corpus[0].text, vocab);
  CHECK(u.transcript == corpus[0].transcript);
  for (std::size_t i = 0; i < u.waveform.length(); ++i)
    CHECK(std::abs(u.waveform.samples[i] - corpus[0].waveform.samples[i]) <= 1.0 / 32768.0);

  CHECK_THROWS_AS(load_utterance(path, "zzz", vocab), VocabError);
  try {
    load_utterance(path, "zzz", vocab);
  } catch (const VocabError& e) {
    CHECK(e.word() == "zzz");
  }
  fs::remove(path);
}

TEST_CASE("manifest round trip") {
  namespace fs = std::filesystem;
  const std::string dir = "test_manifest_dir";
  fs::create_directories(dir);
  Manifest m;
  m.transcript_file = "transcripts.txt";
  m.entries = {{"a.wav", 0}, {"b.wav", 1}};
  write_manifest(dir + "/manifest.json", m);
  Manifest r = read_manifest(dir + "/manifest.json");
  CHECK(r.transcript_file == m.transcript_file);
  REQUIRE(r.entries.size() == 2);
  CHECK(r.entries[1].wav == "b.wav");
  CHECK(r.entries[1].transcript_line == 1);
  fs::remove_all(dir);
}
