#include "advasr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "advasr/errors.hpp"
#include "advasr/rng.hpp"
#include "advasr/wav.hpp"

namespace advasr {

void CorpusSpec::validate(int model_vocab) const {
  if (n_utterances < 0) throw InvalidConfig("corpus: n_utterances must be >= 0");
  if (words_min < 1 || words_max < words_min)
    throw InvalidConfig("corpus: need 1 <= words_min <= words_max");
  if (word_vocab_size < 1) throw InvalidConfig("corpus: word_vocab_size must be >= 1");
  if (model_vocab > 0 && word_vocab_size > model_vocab - kFirstWordId)
    throw InvalidConfig("corpus: word_vocab_size exceeds model vocabulary minus specials");
  if (burst_samples < 1) throw InvalidConfig("corpus: burst_samples must be >= 1");
  if (pad_samples < 0) throw InvalidConfig("corpus: pad_samples must be >= 0");
  if (!(burst_amplitude_min > 0.0) || burst_amplitude_min > burst_amplitude)
    throw InvalidConfig("corpus: need 0 < burst_amplitude_min <= burst_amplitude");
  if (!tone_table.empty() && static_cast<int>(tone_table.size()) < word_vocab_size)
    throw InvalidConfig("corpus: tone_table shorter than word vocabulary");
  if (sample_rate <= 0) throw InvalidConfig("corpus: sample_rate must be positive");
}

std::vector<double> CorpusSpec::resolved_tones() const {
  if (!tone_table.empty()) return tone_table;
  // Quarter-multiples of sample_rate/hop keep each word's frame-level
  // phase pattern short and easy to classify.
  std::vector<double> tones(word_vocab_size);
  for (int i = 0; i < word_vocab_size; ++i) tones[i] = 750.0 + 125.0 * i;
  return tones;
}

namespace {

// Clipped sine keeps the crest factor near 1 so an l-inf budget derived
// from the peak translates into a measured SNR close to the target. Word
// loudness varies so the model has to handle faint words too.
void render_burst(std::vector<double>& out, double freq, const CorpusSpec& spec, Rng& rng) {
  const double amplitude = rng.uniform(spec.burst_amplitude_min, spec.burst_amplitude);
  for (int n = 0; n < spec.burst_samples; ++n) {
    double s = 2.0 * std::sin(2.0 * std::numbers::pi * freq * n / spec.sample_rate);
    s = std::clamp(s, -1.0, 1.0) * amplitude;
    s += rng.uniform(-spec.noise_floor, spec.noise_floor);
    out.push_back(s);
  }
}

}  // namespace

std::vector<Utterance> generate_corpus(const CorpusSpec& spec) {
  spec.validate(0);
  const Vocabulary vocab = Vocabulary::standard(spec.word_vocab_size);
  const std::vector<double> tones = spec.resolved_tones();

  std::vector<Utterance> corpus(spec.n_utterances);
  for (int u = 0; u < spec.n_utterances; ++u) {
    Rng rng(Rng::derive(spec.seed, static_cast<uint64_t>(u)));
    const int n_words = rng.uniform_int(spec.words_min, spec.words_max);
    Utterance utt;
    utt.waveform.sample_rate = spec.sample_rate;
    utt.waveform.samples.reserve(static_cast<std::size_t>(n_words) * spec.burst_samples +
                                 spec.pad_samples);
    // Like natural speech, a share of utterances repeat a phrase; the
    // decoder then carries a genuine repetition prior. Inside the repeated
    // region a word is occasionally mouthed silently: it stays in the
    // transcript, so the decoder learns to carry on through gaps whenever
    // the audio resumes later (the encoder sees the whole waveform).
    std::vector<bool> ghost;
    if (rng.next_double() < spec.refrain_prob) {
      const int phrase = rng.uniform_int(2, std::max(2, (n_words + 1) / 2));
      std::vector<int> base(phrase);
      for (int w = 0; w < phrase; ++w) base[w] = rng.uniform_int(0, spec.word_vocab_size - 1);
      int run = 0;  // at most two silent slots in a row, never the last word
      for (int w = 0; w < n_words; ++w) {
        utt.transcript.push_back(kFirstWordId + base[w % phrase]);
        const bool g =
            w >= phrase && w + 1 < n_words && run < 2 && rng.next_double() < 0.3;
        ghost.push_back(g);
        run = g ? run + 1 : 0;
      }
    } else {
      for (int w = 0; w < n_words; ++w) {
        int word_index;
        if (w > 0 && rng.next_double() < 0.15) {
          word_index = utt.transcript.back() - kFirstWordId;  // stutter
        } else {
          word_index = rng.uniform_int(0, spec.word_vocab_size - 1);
        }
        utt.transcript.push_back(kFirstWordId + word_index);
        ghost.push_back(false);
      }
    }
    for (std::size_t w = 0; w < utt.transcript.size(); ++w) {
      if (ghost[w]) {
        for (int n = 0; n < spec.burst_samples; ++n)
          utt.waveform.samples.push_back(rng.uniform(-spec.noise_floor, spec.noise_floor));
      } else {
        render_burst(utt.waveform.samples, tones[utt.transcript[w] - kFirstWordId], spec, rng);
      }
    }
    // Trailing pad, like the fixed windows ASR frontends feed the model:
    // perturbations reach past the speech itself. Its length varies so
    // stopping has to key on content rather than the frame count.
    const int pad_len = spec.pad_samples < spec.burst_samples
                            ? spec.pad_samples
                            : rng.uniform_int(spec.burst_samples, spec.pad_samples);
    for (int n = 0; n < pad_len; ++n)
      utt.waveform.samples.push_back(rng.uniform(-spec.noise_floor, spec.noise_floor));
    utt.text = vocab.to_text(utt.transcript);
    corpus[u] = std::move(utt);
  }
  return corpus;
}

Utterance load_utterance(const std::string& wav_path, const std::string& transcript_line,
                         const Vocabulary& vocab) {
  Utterance utt;
  utt.waveform = read_wav(wav_path);
  utt.transcript = vocab.tokenize(transcript_line);
  utt.text = vocab.to_text(utt.transcript);
  return utt;
}

std::pair<std::vector<Utterance>, std::vector<Utterance>> split(
    const std::vector<Utterance>& corpus, double train_fraction, uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw InvalidInput("split: fraction must be in (0, 1)");
  std::vector<std::size_t> idx(corpus.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::size_t j = rng.next_u64() % i;
    std::swap(idx[i - 1], idx[j]);
  }
  const auto n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(corpus.size())));
  std::pair<std::vector<Utterance>, std::vector<Utterance>> out;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    (i < n_train ? out.first : out.second).push_back(corpus[idx[i]]);
  }
  return out;
}

void write_manifest(const std::string& path, const Manifest& m) {
  nlohmann::json j;
  j["transcript_file"] = m.transcript_file;
  j["utterances"] = nlohmann::json::array();
  for (const auto& e : m.entries)
    j["utterances"].push_back({{"wav", e.wav}, {"line", e.transcript_line}});
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  Manifest m;
  m.transcript_file = j.at("transcript_file").get<std::string>();
  for (const auto& e : j.at("utterances")) {
    m.entries.push_back({e.at("wav").get<std::string>(), e.at("line").get<int>()});
  }
  return m;
}

std::vector<Utterance> load_manifest_corpus(const std::string& manifest_path,
                                            const Vocabulary& vocab) {
  const Manifest m = read_manifest(manifest_path);
  const auto base = std::filesystem::path(manifest_path).parent_path();

  std::ifstream tf(base / m.transcript_file);
  if (!tf) throw IoError("cannot open transcript file " + (base / m.transcript_file).string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(tf, line);) lines.push_back(line);

  std::vector<Utterance> corpus;
  corpus.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    if (e.transcript_line < 0 || e.transcript_line >= static_cast<int>(lines.size()))
      throw FormatError("manifest: transcript line " + std::to_string(e.transcript_line) +
                        " out of range");
    corpus.push_back(load_utterance((base / e.wav).string(), lines[e.transcript_line], vocab));
  }
  return corpus;
}

}  // namespace advasr
