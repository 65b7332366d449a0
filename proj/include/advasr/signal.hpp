#pragma once

#include <cstdint>
#include <vector>

#include "advasr/linalg.hpp"

namespace advasr {

struct Waveform {
  std::vector<double> samples;  // nominal range [-1, 1]
  int sample_rate = 16000;

  std::size_t length() const { return samples.size(); }
};

struct Perturbation {
  std::vector<double> delta;  // same length as the host waveform
  double epsilon = 0.0;       // l-inf radius
};

struct FrontendConfig {
  int frame_len = 64;
  int hop = 32;
  int d_feat = 16;
  uint64_t projection_seed = 1;

  void validate() const;  // throws InvalidConfig
  bool operator==(const FrontendConfig&) const = default;
};

// F = floor((T - frame_len) / hop) + 1; throws InvalidInput if T < frame_len.
int frame_count(const Waveform& x, const FrontendConfig& cfg);

// The fixed d_feat x frame_len projection drawn from projection_seed.
Mat frontend_projection(const FrontendConfig& cfg);

// Row t = tanh(W * frame_t); smooth, so gradients reach raw samples.
Mat extract_features(const Waveform& x, const FrontendConfig& cfg);

// Pulls a gradient over feature rows (F x d_feat) back to one over raw
// samples (length T). `features` must be the matching forward output.
std::vector<double> features_input_gradient(const Mat& d_features, const Mat& features,
                                            std::size_t n_samples, const FrontendConfig& cfg);

// 20*log10(||x||_2 / ||delta||_2); UndefinedSNR on zero delta,
// InvalidInput on silent x.
double snr_db(const Waveform& x, const std::vector<double>& delta);

// epsilon = ||x||_inf / 10^(snr_db/20); InvalidInput on silent x.
double epsilon_for_snr(const Waveform& x, double snr_db_target);

// Componentwise clamp into [-epsilon, epsilon]; idempotent.
void clip_linf(std::vector<double>& delta, double epsilon);

// x + delta elementwise; no [-1,1] clamping (WAV export clamps instead).
Waveform apply(const Waveform& x, const std::vector<double>& delta);

double linf_norm(const std::vector<double>& v);
double l2_norm(const std::vector<double>& v);

}  // namespace advasr
