#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "advasr/attacks.hpp"
#include "advasr/errors.hpp"
#include "advasr/signal.hpp"
#include "test_helpers.hpp"

using namespace advasr;
using advasr::testing::tiny_corpus_spec;
using advasr::testing::trained_tiny_bundle;

namespace {

AttackConfig tiny_attack(AttackMethod m, int steps = 12, int acc_steps = 4) {
  AttackConfig cfg;
  cfg.method = m;
  cfg.total_steps = steps;
  cfg.accuracy_steps = acc_steps;
  cfg.doubling_period = 2;
  cfg.epsilon = 0.02;
  cfg.seed = 9;
  return cfg;
}

const Utterance& test_utt() {
  static const auto corpus = generate_corpus(tiny_corpus_spec());
  return corpus[5];
}

}  // namespace

TEST_CASE("sign_step arithmetic, sign(0)=0, ball projection") {
  std::vector<double> delta(3, 0.0);
  sign_step(delta, {2.0, -3.0, 0.0}, 0.1, 1.0);
  CHECK(delta == std::vector<double>{-0.1, 0.1, 0.0});

  // Two opposite steps cancel when unclipped.
  sign_step(delta, {-2.0, 3.0, 0.0}, 0.1, 1.0);
  CHECK(delta == std::vector<double>{0.0, 0.0, 0.0});

  std::vector<double> big(4, 0.0);
  for (int i = 0; i < 40; ++i) sign_step(big, {1.0, 1.0, -1.0, -1.0}, 0.05, 0.12);
  for (double v : big) CHECK(std::abs(v) <= 0.12);

  std::vector<double> d2(1, 0.0);
  CHECK_THROWS_AS(sign_step(d2, {std::nan("")}, 0.1, 1.0), NumericalFailure);
}

TEST_CASE("attacks are deterministic and respect the epsilon ball") {
  const ModelBundle& bundle = trained_tiny_bundle();
  for (AttackMethod m : {AttackMethod::MORE, AttackMethod::PGD, AttackMethod::MIFGSM,
                         AttackMethod::VMIFGSM, AttackMethod::EOS_ONLY}) {
    AttackConfig cfg = tiny_attack(m, m == AttackMethod::VMIFGSM ? 4 : 10);
    cfg.variance_samples = 2;
    AttackResult a = run_attack(bundle, test_utt(), cfg);
    AttackResult b = run_attack(bundle, test_utt(), cfg);
    REQUIRE_FALSE(a.aborted);
    CHECK(a.delta == b.delta);
    REQUIRE(a.trace.steps.size() == static_cast<std::size_t>(cfg.total_steps));
    for (const StepRecord& r : a.trace.steps) CHECK(r.delta_linf <= *cfg.epsilon + 1e-15);
  }
}

TEST_CASE("zero step size leaves the input clean") {
  const ModelBundle& bundle = trained_tiny_bundle();
  AttackConfig cfg = tiny_attack(AttackMethod::PGD);
  cfg.alpha = 0.0;
  AttackResult r = run_attack(bundle, test_utt(), cfg);
  for (double v : r.delta) CHECK(v == 0.0);

  AttackConfig eos = tiny_attack(AttackMethod::EOS_ONLY, 4);
  eos.alpha = 0.0;
  AttackResult re = run_attack(bundle, test_utt(), eos);
  for (double v : re.delta) CHECK(v == 0.0);
}

TEST_CASE("MORE with K_a = K reproduces PGD exactly") {
  const ModelBundle& bundle = trained_tiny_bundle();
  AttackConfig more = tiny_attack(AttackMethod::MORE, 8, 8);
  AttackConfig pgd = tiny_attack(AttackMethod::PGD, 8, 8);
  AttackResult a = run_attack(bundle, test_utt(), more);
  AttackResult b = run_attack(bundle, test_utt(), pgd);
  CHECK(a.delta == b.delta);
  REQUIRE(a.trace.steps.size() == b.trace.steps.size());
  for (std::size_t i = 0; i < a.trace.steps.size(); ++i) {
    CHECK(a.trace.steps[i].loss == b.trace.steps[i].loss);
    CHECK(a.trace.steps[i].stage == Stage::Repulsion);
  }
}

TEST_CASE("MORE stage boundary and anchor cadence in the trace") {
  const ModelBundle& bundle = trained_tiny_bundle();
  AttackConfig cfg = tiny_attack(AttackMethod::MORE, 14, 4);
  cfg.doubling_period = 3;
  AttackResult r = run_attack(bundle, test_utt(), cfg);
  REQUIRE_FALSE(r.aborted);
  int refreshes = 0;
  for (const StepRecord& s : r.trace.steps) {
    CHECK((s.stage == (s.step <= 4 ? Stage::Repulsion : Stage::Anchoring)));
    if (s.anchor_refresh) {
      ++refreshes;
      CHECK(((s.step - 4 - 1) % 3) == 0);
    }
    if (s.stage == Stage::Anchoring) CHECK(s.target_len > 0);
  }
  CHECK(refreshes == (14 - 4 + 2) / 3);
  CHECK(r.trace.block_hypothesis_lens.size() == static_cast<std::size_t>(refreshes));

  // MORE with K_a = 0 runs pure anchoring with a single anchor when D >= K.
  AttackConfig pure = tiny_attack(AttackMethod::MORE, 6, 0);
  pure.doubling_period = 6;
  AttackResult p = run_attack(bundle, test_utt(), pure);
  int anchors = 0;
  for (const StepRecord& s : p.trace.steps) {
    CHECK(s.stage == Stage::Anchoring);
    anchors += s.anchor_refresh ? 1 : 0;
  }
  CHECK(anchors == 1);
}

TEST_CASE("MI-FGSM with zero momentum matches PGD") {
  const ModelBundle& bundle = trained_tiny_bundle();
  AttackConfig mi = tiny_attack(AttackMethod::MIFGSM, 6);
  mi.momentum = 0.0;
  AttackConfig pgd = tiny_attack(AttackMethod::PGD, 6);
  AttackResult a = run_attack(bundle, test_utt(), mi);
  AttackResult b = run_attack(bundle, test_utt(), pgd);
  CHECK(a.delta == b.delta);
}

TEST_CASE("VMI-FGSM converges to MI-FGSM as beta -> 0") {
  const ModelBundle& bundle = trained_tiny_bundle();
  AttackConfig vmi = tiny_attack(AttackMethod::VMIFGSM, 5);
  vmi.variance_samples = 2;
  vmi.variance_radius = 1e-9;
  AttackConfig mi = tiny_attack(AttackMethod::MIFGSM, 5);
  AttackResult a = run_attack(bundle, test_utt(), vmi);
  AttackResult b = run_attack(bundle, test_utt(), mi);
  REQUIRE(a.delta.size() == b.delta.size());
  double max_diff = 0.0;
  for (std::size_t i = 0; i < a.delta.size(); ++i)
    max_diff = std::max(max_diff, std::abs(a.delta[i] - b.delta[i]));
  CHECK(max_diff <= 1e-6);
}

TEST_CASE("EOS-only trace tracks the hypothesis length") {
  const ModelBundle& bundle = trained_tiny_bundle();
  AttackConfig cfg = tiny_attack(AttackMethod::EOS_ONLY, 6);
  AttackResult r = run_attack(bundle, test_utt(), cfg);
  REQUIRE_FALSE(r.aborted);
  for (const StepRecord& s : r.trace.steps) {
    CHECK(s.stage == Stage::Anchoring);
    CHECK(std::isfinite(s.loss));
    CHECK(s.loss >= -1.0);
    CHECK(s.loss <= 1.0);
  }
}

TEST_CASE("trace exports to JSON lines and raw delta bytes") {
  const ModelBundle& bundle = trained_tiny_bundle();
  AttackConfig cfg = tiny_attack(AttackMethod::MORE, 6, 2);
  AttackResult r = run_attack(bundle, test_utt(), cfg);
  const std::string jsonl = trace_to_jsonl(r.trace);
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 6);
  CHECK(jsonl.find("\"stage\":\"repulsion\"") != std::string::npos);
  CHECK(jsonl.find("\"stage\":\"anchoring\"") != std::string::npos);

  write_delta_raw("test_delta.bin", r.delta);
  std::ifstream in("test_delta.bin", std::ios::binary);
  std::vector<double> back(r.delta.size());
  in.read(reinterpret_cast<char*>(back.data()),
          static_cast<std::streamsize>(back.size() * sizeof(double)));
  CHECK(back == r.delta);
  std::remove("test_delta.bin");
}

TEST_CASE("configs validate their invariants") {
  AttackConfig cfg = tiny_attack(AttackMethod::MORE);
  cfg.accuracy_steps = cfg.total_steps + 1;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  cfg = tiny_attack(AttackMethod::MORE);
  cfg.doubling_period = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  cfg = tiny_attack(AttackMethod::MORE);
  cfg.epsilon = -1.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
}
