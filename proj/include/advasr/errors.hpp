#pragma once

#include <stdexcept>
#include <string>

namespace advasr {

struct InvalidInput : std::runtime_error {
  explicit InvalidInput(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidConfig : std::runtime_error {
  explicit InvalidConfig(const std::string& msg) : std::runtime_error(msg) {}
};

struct UndefinedSNR : std::runtime_error {
  explicit UndefinedSNR(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalFailure : std::runtime_error {
  explicit NumericalFailure(const std::string& msg) : std::runtime_error(msg) {}
};

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct VocabError : std::runtime_error {
  explicit VocabError(const std::string& word)
      : std::runtime_error("word not in vocabulary: \"" + word + "\""), word_(word) {}
  const std::string& word() const { return word_; }

 private:
  std::string word_;
};

struct DegenerateHypothesis : std::runtime_error {
  explicit DegenerateHypothesis(const std::string& msg) : std::runtime_error(msg) {}
};

struct ScheduleExhausted : std::runtime_error {
  explicit ScheduleExhausted(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace advasr
