#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace advasr {

using TokenSequence = std::vector<int>;

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kFirstWordId = 3;

// Bijective word <-> id map over a fixed syllable word list. Word ids
// start at kFirstWordId; ids below that are the reserved specials.
class Vocabulary {
 public:
  static Vocabulary standard(int word_count);

  int word_count() const { return static_cast<int>(words_.size()); }
  int total_tokens() const { return kFirstWordId + word_count(); }

  int id(const std::string& word) const;          // throws VocabError
  const std::string& word(int word_id) const;     // throws InvalidInput
  bool is_word(int token_id) const {
    return token_id >= kFirstWordId && token_id < total_tokens();
  }

  TokenSequence tokenize(const std::string& text) const;
  std::string to_text(const TokenSequence& tokens) const;  // specials as <id>

  // Hypothesis tokens as WER words: specials render as distinct markers.
  std::vector<std::string> to_words(const TokenSequence& tokens) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace advasr
