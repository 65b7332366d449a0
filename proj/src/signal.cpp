#include "advasr/signal.hpp"

#include <cmath>
#include <string>

#include "advasr/errors.hpp"
#include "advasr/rng.hpp"

namespace advasr {

void FrontendConfig::validate() const {
  if (frame_len <= 0) throw InvalidConfig("frontend: frame_len must be positive");
  if (hop <= 0 || hop > frame_len) throw InvalidConfig("frontend: need 0 < hop <= frame_len");
  if (d_feat <= 0) throw InvalidConfig("frontend: d_feat must be positive");
}

int frame_count(const Waveform& x, const FrontendConfig& cfg) {
  cfg.validate();
  const std::size_t T = x.length();
  if (T < static_cast<std::size_t>(cfg.frame_len))
    throw InvalidInput("waveform shorter than one frame (" + std::to_string(T) + " < " +
                       std::to_string(cfg.frame_len) + ")");
  return static_cast<int>((T - cfg.frame_len) / cfg.hop) + 1;
}

Mat frontend_projection(const FrontendConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.projection_seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.frame_len));
  Mat w(cfg.d_feat, cfg.frame_len);
  for (int i = 0; i < cfg.d_feat; ++i)
    for (int j = 0; j < cfg.frame_len; ++j) w(i, j) = rng.uniform(-scale, scale);
  return w;
}

Mat extract_features(const Waveform& x, const FrontendConfig& cfg) {
  const int F = frame_count(x, cfg);
  const Mat w = frontend_projection(cfg);
  Mat feats(F, cfg.d_feat);
  Vec frame(cfg.frame_len);  // aligned staging keeps the product bitwise stable
  for (int t = 0; t < F; ++t) {
    frame = ConstVecMap(x.samples.data() + static_cast<std::size_t>(t) * cfg.hop,
                        cfg.frame_len);
    feats.row(t) = (w * frame).transpose().array().tanh();
  }
  return feats;
}

std::vector<double> features_input_gradient(const Mat& d_features, const Mat& features,
                                            std::size_t n_samples, const FrontendConfig& cfg) {
  const Mat w = frontend_projection(cfg);
  std::vector<double> grad(n_samples, 0.0);
  for (int t = 0; t < features.rows(); ++t) {
    // d tanh(u) = (1 - tanh^2(u)) du, then W^T pulls back to the frame.
    RowVec pre = d_features.row(t).cwiseProduct(
        (1.0 - features.row(t).array().square()).matrix());
    Vec frame_grad = w.transpose() * pre.transpose();
    const std::size_t base = static_cast<std::size_t>(t) * cfg.hop;
    for (int j = 0; j < cfg.frame_len; ++j) grad[base + j] += frame_grad(j);
  }
  return grad;
}

double linf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double s : v) m = std::max(m, std::abs(s));
  return m;
}

double l2_norm(const std::vector<double>& v) {
  double acc = 0.0;
  for (double s : v) acc += s * s;
  return std::sqrt(acc);
}

double snr_db(const Waveform& x, const std::vector<double>& delta) {
  const double nx = l2_norm(x.samples);
  const double nd = l2_norm(delta);
  if (nx == 0.0) throw InvalidInput("snr_db: signal has zero norm");
  if (nd == 0.0) throw UndefinedSNR("snr_db: perturbation has zero norm");
  return 20.0 * std::log10(nx / nd);
}

double epsilon_for_snr(const Waveform& x, double snr_db_target) {
  if (snr_db_target <= 0.0) throw InvalidInput("epsilon_for_snr: target must be > 0 dB");
  const double peak = linf_norm(x.samples);
  if (peak == 0.0) throw InvalidInput("epsilon_for_snr: silent waveform");
  return peak / std::pow(10.0, snr_db_target / 20.0);
}

void clip_linf(std::vector<double>& delta, double epsilon) {
  if (epsilon <= 0.0) throw InvalidInput("clip_linf: epsilon must be positive");
  for (double& d : delta) {
    if (d > epsilon) d = epsilon;
    else if (d < -epsilon) d = -epsilon;
  }
}

Waveform apply(const Waveform& x, const std::vector<double>& delta) {
  if (x.length() != delta.size())
    throw InvalidInput("apply: waveform/perturbation length mismatch");
  Waveform out;
  out.sample_rate = x.sample_rate;
  out.samples.resize(x.length());
  for (std::size_t i = 0; i < x.length(); ++i) out.samples[i] = x.samples[i] + delta[i];
  return out;
}

}  // namespace advasr
