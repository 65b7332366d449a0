#include <doctest.h>

#include <cmath>

#include "advasr/errors.hpp"
#include "advasr/objectives.hpp"
#include "advasr/rng.hpp"
#include "test_helpers.hpp"

using namespace advasr;
using advasr::testing::tiny_corpus_spec;
using advasr::testing::trained_tiny_bundle;

namespace {

Mat uniform_logits(int rows, int v) { return Mat::Zero(rows, v); }

// Independent CE recomputation by a direct probability walk.
double ce_by_probability_walk(const Mat& logits, const TokenSequence& teacher) {
  double total = 0.0;
  for (int i = 0; i + 1 < static_cast<int>(teacher.size()); ++i) {
    RowVec row = logits.row(i);
    const double mx = row.maxCoeff();
    RowVec p = (row.array() - mx).exp();
    p /= p.sum();
    total += -std::log(p(teacher[i + 1]));
  }
  return total / (static_cast<double>(teacher.size()) - 1.0);
}

}  // namespace

TEST_CASE("loss_accuracy: exact one-hot, uniform, oracle recomputation") {
  const int v = 64;
  TokenSequence y{4, 5, 6};

  // One-hot logits exactly matching [y, EOS] give CE 0.
  Mat onehot = Mat::Constant(5, v, -1e9);
  TokenSequence teacher{kBosId, 4, 5, 6, kEosId};
  for (int i = 0; i + 1 < 5; ++i) onehot(i, teacher[i + 1]) = 1e9;
  onehot.row(4).setZero();
  CHECK(loss_accuracy(onehot, y) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK(loss_accuracy(uniform_logits(5, v), y) == doctest::Approx(-std::log(64.0)));

  Rng rng(4);
  Mat logits(5, v);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < v; ++j) logits(i, j) = rng.uniform(-2.0, 2.0);
  CHECK(loss_accuracy(logits, y) ==
        doctest::Approx(-ce_by_probability_walk(logits, teacher)).epsilon(1e-12));
  CHECK_THROWS_AS(loss_accuracy(uniform_logits(3, v), y), InvalidInput);
}

TEST_CASE("runner_up picks best non-EOS with lowest-id ties") {
  RowVec row = RowVec::Constant(16, 0.001);
  row(kEosId) = 0.9;
  row(7) = 0.08;
  row /= row.sum();
  CHECK(runner_up(row) == 7);

  RowVec row2 = RowVec::Constant(16, 1.0 / 16.0);
  row2(kEosId) = 0.0;
  row2(5) = row2(5);  // EOS least likely; global argmax is a word token
  row2(9) = 0.5;
  row2 /= row2.sum();
  CHECK(runner_up(row2) == 9);

  RowVec tie = RowVec::Zero(16);
  tie(3) = 0.4;
  tie(12) = 0.4;
  tie(kEosId) = 0.2;
  CHECK(runner_up(tie) == 3);
}

TEST_CASE("loss_eos is the margin at the final row") {
  DecodeResult dec;
  dec.prob_rows = Mat::Zero(2, 16);
  dec.prob_rows.row(0).setConstant(1.0 / 16.0);
  RowVec last = RowVec::Constant(16, 0.05 / 13.0);
  last(kEosId) = 0.9;
  last(7) = 0.05;
  dec.prob_rows.row(1) = last;
  dec.tokens = {7, kEosId};
  CHECK(loss_eos(dec) == doctest::Approx(0.85));

  DecodeResult zero_eos = dec;
  zero_eos.prob_rows(1, kEosId) = 0.0;
  CHECK(loss_eos(zero_eos) <= 0.0);

  DecodeResult empty;
  empty.prob_rows = Mat(0, 16);
  CHECK_THROWS_AS(loss_eos(empty), InvalidInput);
}

TEST_CASE("build_doubled_target worked example and cap") {
  DoubledTarget t = build_doubled_target({4, 5, 6, kEosId}, 32);
  CHECK(t.tokens == TokenSequence{4, 5, 6, 4, 5, 6});
  CHECK(t.base_len == 3);
  CHECK(t.doubled_len == 6);
  CHECK_FALSE(t.capped);

  DoubledTarget minimal = build_doubled_target({4, kEosId}, 32);
  CHECK(minimal.tokens == TokenSequence{4, 4});

  TokenSequence long_base(200, 5);
  long_base.push_back(kEosId);
  DoubledTarget capped = build_doubled_target(long_base, 256);
  CHECK(capped.doubled_len == 255);
  CHECK(capped.capped);
  CHECK(static_cast<int>(capped.tokens.size()) == 255);

  CHECK_THROWS_AS(build_doubled_target({kEosId}, 32), DegenerateHypothesis);
  CHECK_THROWS_AS(build_doubled_target({}, 32), DegenerateHypothesis);
  CHECK_THROWS_AS(build_doubled_target({4, kEosId, 5}, 32), InvalidInput);
}

TEST_CASE("doubled targets never contain EOS; doubling exact below cap") {
  Rng rng(9);
  for (int it = 0; it < 1000; ++it) {
    const int base_len = rng.uniform_int(1, 40);
    TokenSequence hyp(base_len);
    for (auto& t : hyp) t = 3 + rng.uniform_int(0, 11);
    if (rng.next_double() < 0.7) hyp.push_back(kEosId);
    const int max_len = rng.uniform_int(4, 64);
    DoubledTarget t = build_doubled_target(hyp, max_len);
    for (int tok : t.tokens) CHECK(tok != kEosId);
    CHECK(t.doubled_len == std::min(2 * t.base_len, max_len - 1));
    if (!t.capped) {
      REQUIRE(t.doubled_len == 2 * t.base_len);
      for (int i = 0; i < t.base_len; ++i) CHECK(t.tokens[i] == t.tokens[i + t.base_len]);
    }
  }
}

TEST_CASE("loss_redo uniform value and oracle recomputation") {
  const int v = 16;
  DoubledTarget t;
  t.tokens = {4, 5, 4, 5};
  t.base_len = 2;
  t.doubled_len = 4;
  CHECK(loss_redo(uniform_logits(5, v), t) == doctest::Approx(std::log(16.0)));

  Rng rng(12);
  Mat logits(5, v);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < v; ++j) logits(i, j) = rng.uniform(-2.0, 2.0);
  TokenSequence teacher{kBosId, 4, 5, 4, 5};
  CHECK(loss_redo(logits, t) ==
        doctest::Approx(ce_by_probability_walk(logits, teacher)).epsilon(1e-12));
}

TEST_CASE("loss_efficiency is the sum of its parts") {
  const int v = 16;
  DoubledTarget t;
  t.tokens = {4, 5, 4, 5};
  t.base_len = 2;
  t.doubled_len = 4;
  Rng rng(13);
  Mat logits(5, v);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < v; ++j) logits(i, j) = rng.uniform(-2.0, 2.0);

  RowVec last = logits.row(4);
  const double mx = last.maxCoeff();
  RowVec p = (last.array() - mx).exp();
  p /= p.sum();
  const double eos_part = p(kEosId) - p(runner_up(p));
  CHECK(loss_efficiency(logits, t) ==
        doctest::Approx(loss_redo(logits, t) + eos_part).epsilon(1e-12));
}

TEST_CASE("redo on a confident model: first half easier than second at block start") {
  const ModelBundle& bundle = trained_tiny_bundle();
  const auto corpus = generate_corpus(tiny_corpus_spec());
  const Mat feats = extract_features(corpus[3].waveform, bundle.config.frontend);
  DecodeResult dec = greedy_decode(bundle, feats, bundle.config.max_len);
  REQUIRE(dec.ended_by_eos);

  DoubledTarget t = build_doubled_target(dec.tokens, bundle.config.max_len);
  TokenSequence teacher{kBosId};
  teacher.insert(teacher.end(), t.tokens.begin(), t.tokens.end());
  Mat logits = forward_teacher_forced(bundle, feats, teacher);

  auto half_ce = [&](int begin, int end) {
    double total = 0.0;
    for (int i = begin; i < end; ++i) {
      RowVec row = logits.row(i);
      const double mx = row.maxCoeff();
      RowVec p = (row.array() - mx).exp();
      p /= p.sum();
      total += -std::log(p(teacher[i + 1]));
    }
    return total / (end - begin);
  };
  const double first = half_ce(0, t.base_len);
  const double second = half_ce(t.base_len, t.doubled_len);
  CHECK(first < second);
}

TEST_CASE("minimizing loss_eos lowers the EOS probability") {
  const ModelBundle& bundle = trained_tiny_bundle();
  const auto corpus = generate_corpus(tiny_corpus_spec());
  const Utterance& utt = corpus[4];

  const Mat feats0 = extract_features(utt.waveform, bundle.config.frontend);
  DecodeResult clean = greedy_decode(bundle, feats0, bundle.config.max_len);
  REQUIRE(clean.ended_by_eos);
  const double p_eos_before = clean.prob_rows(clean.prob_rows.rows() - 1, kEosId);

  TokenSequence base = clean.tokens;
  base.pop_back();
  LossSpec spec{LossKind::Eos, base};

  std::vector<double> delta(utt.waveform.length(), 0.0);
  const double eps = 0.02;
  double last_loss = 0.0;
  for (int step = 0; step < 20; ++step) {
    InputGradientResult g = input_gradient(bundle, utt.waveform, delta, spec);
    last_loss = g.loss;
    for (std::size_t i = 0; i < delta.size(); ++i) {
      if (g.grad[i] > 0) delta[i] -= eps / 10;
      else if (g.grad[i] < 0) delta[i] += eps / 10;
      delta[i] = std::clamp(delta[i], -eps, eps);
    }
  }
  // Re-evaluate the margin at the same teacher position.
  Mat feats1 = extract_features(advasr::apply(utt.waveform, delta), bundle.config.frontend);
  TokenSequence teacher{kBosId};
  teacher.insert(teacher.end(), base.begin(), base.end());
  Mat logits = forward_teacher_forced(bundle, feats1, teacher);
  RowVec last = logits.row(logits.rows() - 1);
  const double mx = last.maxCoeff();
  RowVec p = (last.array() - mx).exp();
  p /= p.sum();
  CHECK(p(kEosId) < p_eos_before);
  CHECK(p(kEosId) - p(runner_up(p)) <= last_loss);
}

TEST_CASE("schedule: stage boundary, refresh cadence, exhaustion") {
  ScheduleState s = make_schedule(150, 50, 10);
  int refreshes = 0;
  std::vector<int> refresh_steps;
  for (int i = 1; i <= 150; ++i) {
    advance_schedule(s);
    CHECK(s.step == i);
    CHECK((s.stage == (i <= 50 ? Stage::Repulsion : Stage::Anchoring)));
    if (s.stage == Stage::Anchoring && s.refresh_requested) {
      ++refreshes;
      refresh_steps.push_back(i - 50);
    }
  }
  CHECK(refreshes == 10);
  for (std::size_t k = 0; k < refresh_steps.size(); ++k)
    CHECK(refresh_steps[k] == static_cast<int>(1 + 10 * k));
  CHECK_THROWS_AS(advance_schedule(s), ScheduleExhausted);

  // Boundary: step 50 -> 51 flips stage and requests a refresh.
  ScheduleState b = make_schedule(150, 50, 10);
  for (int i = 0; i < 50; ++i) advance_schedule(b);
  CHECK(b.stage == Stage::Repulsion);
  advance_schedule(b);
  CHECK(b.stage == Stage::Anchoring);
  CHECK(b.refresh_requested);

  // ceil((K-K_a)/D) refreshes in general.
  ScheduleState c = make_schedule(127, 40, 13);
  int n = 0;
  while (c.step < c.total_steps) {
    advance_schedule(c);
    if (c.stage == Stage::Anchoring && c.refresh_requested) ++n;
  }
  CHECK(n == (127 - 40 + 12) / 13);
}
