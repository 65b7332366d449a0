#include "advasr/vocab.hpp"

#include <sstream>

#include "advasr/errors.hpp"

namespace advasr {

Vocabulary Vocabulary::standard(int word_count) {
  static const char* consonants = "bdfgklmnprstvz";
  static const char* vowels = "aeiou";
  if (word_count <= 0 || word_count > 70)
    throw InvalidConfig("vocabulary supports 1..70 words");
  Vocabulary v;
  v.words_.reserve(word_count);
  for (int i = 0; i < word_count; ++i) {
    std::string w;
    w += consonants[i / 5];
    w += vowels[i % 5];
    v.ids_[w] = kFirstWordId + i;
    v.words_.push_back(std::move(w));
  }
  return v;
}

int Vocabulary::id(const std::string& word) const {
  auto it = ids_.find(word);
  if (it == ids_.end()) throw VocabError(word);
  return it->second;
}

const std::string& Vocabulary::word(int word_id) const {
  if (!is_word(word_id)) throw InvalidInput("token id " + std::to_string(word_id) + " is not a word");
  return words_[word_id - kFirstWordId];
}

TokenSequence Vocabulary::tokenize(const std::string& text) const {
  TokenSequence out;
  std::istringstream ss(text);
  std::string w;
  while (ss >> w) out.push_back(id(w));
  return out;
}

std::string Vocabulary::to_text(const TokenSequence& tokens) const {
  std::string out;
  for (int t : tokens) {
    if (!out.empty()) out += ' ';
    if (is_word(t)) out += word(t);
    else out += "<" + std::to_string(t) + ">";
  }
  return out;
}

std::vector<std::string> Vocabulary::to_words(const TokenSequence& tokens) const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (is_word(t)) out.push_back(word(t));
    else out.push_back("<" + std::to_string(t) + ">");
  }
  return out;
}

}  // namespace advasr
