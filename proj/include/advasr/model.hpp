#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advasr/corpus.hpp"
#include "advasr/linalg.hpp"
#include "advasr/loss_spec.hpp"
#include "advasr/signal.hpp"
#include "advasr/vocab.hpp"

namespace advasr {

struct ModelConfig {
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int d_model = 32;
  int heads = 2;
  int d_ff = 64;
  int vocab_size = 64;  // includes PAD/BOS/EOS
  int max_len = 256;
  FrontendConfig frontend;
  uint64_t init_seed = 1234;

  void validate() const;            // throws InvalidConfig
  std::size_t param_count() const;  // analytic count implied by the fields
  bool operator==(const ModelConfig&) const = default;
};

// Immutable after construction/training; safe to share across threads.
struct ModelBundle {
  ModelConfig config;
  ParamStore params;
};

ModelBundle init_model(const ModelConfig& config);

struct DecodeResult {
  TokenSequence tokens;  // emitted tokens; ends with EOS when ended_by_eos
  Mat prob_rows;         // one post-softmax row per emitted token
  bool ended_by_eos = false;
};

// Multiply-add counts per teacher-forced decoder pass, split by term so
// the analytic cost model can be checked against the real computation.
struct MacCounts {
  uint64_t dec_self_attn = 0;   // score + context products (the l^2 terms)
  uint64_t dec_cross_attn = 0;  // the l*F terms
  uint64_t dec_ffn = 0;
  uint64_t dec_vocab = 0;
  uint64_t dec_proj = 0;        // q/k/v/output projections
};

// `target` includes the leading BOS; row i holds logits for predicting
// target[i+1] (the final row is the one-past-end position).
Mat forward_teacher_forced(const ModelBundle& bundle, const Mat& features,
                           const TokenSequence& target, MacCounts* mac = nullptr);

DecodeResult greedy_decode(const ModelBundle& bundle, const Mat& features, int max_len);

struct InputGradientResult {
  double loss = 0.0;
  double loss_eos = 0.0;   // NaN unless the spec carries an EOS term
  double loss_redo = 0.0;  // NaN unless the spec carries a REDO term
  std::vector<double> grad;  // d loss / d delta, per raw sample
};

// Exact reverse-mode gradient of the bound loss with respect to delta,
// chained through apply -> extract_features -> model -> loss.
InputGradientResult input_gradient(const ModelBundle& bundle, const Waveform& x,
                                   const std::vector<double>& delta, const LossSpec& spec);

struct TrainConfig {
  int epochs = 6;
  double learning_rate = 0.4;
  int batch_size = 16;
  uint64_t seed = 99;
  // Optional single step decay: lr is multiplied by lr_decay from epoch
  // floor(epochs * lr_decay_at) on. Defaults keep the rate fixed.
  double lr_decay = 1.0;
  double lr_decay_at = 1.0;
};

struct TrainResult {
  std::vector<double> epoch_mean_loss;
};

// Plain mini-batch SGD on teacher-forced cross-entropy; deterministic for
// a given seed regardless of thread count.
TrainResult train(ModelBundle& bundle, const std::vector<Utterance>& corpus,
                  const TrainConfig& cfg);

void save_checkpoint(const ModelBundle& bundle, const std::string& path);
ModelBundle load_checkpoint(const std::string& path);

MacCounts measured_macs(const ModelBundle& bundle, int target_len, int n_frames = 32);

// Internals shared with the training/attack paths and exercised directly
// by the gradient tests.
namespace detail {

struct LnCache {
  Mat x_hat;     // normalized rows before scale/shift
  Vec inv_std;   // per row
  Mat out;       // ln output (the sublayer input)
};

struct AttnCache {
  Mat q, k, v;             // full (rows x d_model)
  std::vector<Mat> probs;  // per head, post-softmax
  Mat concat_o;            // before the output projection
};

struct FfnCache {
  Mat u;  // pre-activation
  Mat g;  // gelu(u)
};

struct EncLayerCache {
  LnCache ln1;
  AttnCache attn;
  LnCache ln2;
  FfnCache ffn;
};

struct DecLayerCache {
  LnCache ln1;
  AttnCache self_attn;
  LnCache ln2;
  AttnCache cross_attn;
  LnCache ln3;
  FfnCache ffn;
};

struct ForwardCache {
  Mat features;
  Mat enc_x0;  // encoder stream before layer 0
  std::vector<EncLayerCache> enc;
  LnCache enc_final;
  Mat enc_out;
  TokenSequence target;
  Mat dec_x0;
  std::vector<DecLayerCache> dec;
  LnCache dec_final;
  Mat logits;
};

Mat forward_full(const ModelBundle& bundle, const Mat& features, const TokenSequence& target,
                 ForwardCache& cache);

struct BackwardOptions {
  bool want_input_grad = true;
  bool want_param_grads = false;
};

struct BackwardResult {
  Mat d_features;
  ParamStore param_grads;  // empty unless requested
};

BackwardResult backward_full(const ModelBundle& bundle, const ForwardCache& cache,
                             const Mat& d_logits, const BackwardOptions& opts);

Mat encode(const ModelBundle& bundle, const Mat& features);

}  // namespace detail

}  // namespace advasr
