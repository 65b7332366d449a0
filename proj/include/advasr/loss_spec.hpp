#pragma once

#include "advasr/vocab.hpp"

namespace advasr {

enum class LossKind {
  Accuracy,    // -CE against the reference transcript
  Eos,         // P_L(EOS) - P_L(runner-up) at the final position
  Redo,        // +CE against a doubled target
  Efficiency,  // Redo + Eos on one shared pass
};

// Binds a loss to concrete target tokens. `reference` holds content
// tokens only: the transcript for Accuracy, the doubled target for
// Redo/Efficiency, the EOS-stripped hypothesis for Eos.
struct LossSpec {
  LossKind kind = LossKind::Accuracy;
  TokenSequence reference;
};

}  // namespace advasr
