#include "advasr/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

#include "advasr/errors.hpp"
#include "advasr/objectives.hpp"
#include "advasr/parallel.hpp"
#include "advasr/rng.hpp"

namespace advasr {

namespace {

constexpr double kLnEps = 1e-5;

// ---- parameter layout ----------------------------------------------------

enum class SliceKind { Weight, Bias, Gamma };

struct Slice {
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;  // 1 for vectors
  SliceKind kind = SliceKind::Weight;
};

struct AttnOffsets {
  Slice wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LnOffsets {
  Slice g, b;
};

struct FfnOffsets {
  Slice w1, b1, w2, b2;
};

struct EncLayerOffsets {
  LnOffsets ln1;
  AttnOffsets attn;
  LnOffsets ln2;
  FfnOffsets ffn;
};

struct DecLayerOffsets {
  LnOffsets ln1;
  AttnOffsets self_attn;
  LnOffsets ln2;
  AttnOffsets cross_attn;
  LnOffsets ln3;
  FfnOffsets ffn;
};

struct Layout {
  Slice enc_in_w, enc_in_b;
  std::vector<EncLayerOffsets> enc;
  LnOffsets enc_final;
  Slice tok_emb;
  std::vector<DecLayerOffsets> dec;
  LnOffsets dec_final;
  Slice out_w, out_b;
  std::size_t total = 0;
  std::vector<Slice> order;  // declaration order, drives init + checkpoint
};

class LayoutBuilder {
 public:
  Slice add(int rows, int cols, SliceKind kind) {
    Slice s{offset_, rows, cols, kind};
    offset_ += static_cast<std::size_t>(rows) * cols;
    order_.push_back(s);
    return s;
  }
  LnOffsets ln(int d) { return {add(d, 1, SliceKind::Gamma), add(d, 1, SliceKind::Bias)}; }
  AttnOffsets attn(int d) {
    AttnOffsets a;
    a.wq = add(d, d, SliceKind::Weight);
    a.bq = add(d, 1, SliceKind::Bias);
    a.wk = add(d, d, SliceKind::Weight);
    a.bk = add(d, 1, SliceKind::Bias);
    a.wv = add(d, d, SliceKind::Weight);
    a.bv = add(d, 1, SliceKind::Bias);
    a.wo = add(d, d, SliceKind::Weight);
    a.bo = add(d, 1, SliceKind::Bias);
    return a;
  }
  FfnOffsets ffn(int d, int d_ff) {
    FfnOffsets f;
    f.w1 = add(d_ff, d, SliceKind::Weight);
    f.b1 = add(d_ff, 1, SliceKind::Bias);
    f.w2 = add(d, d_ff, SliceKind::Weight);
    f.b2 = add(d, 1, SliceKind::Bias);
    return f;
  }
  std::size_t offset() const { return offset_; }
  std::vector<Slice> take_order() { return std::move(order_); }

 private:
  std::size_t offset_ = 0;
  std::vector<Slice> order_;
};

Layout make_layout(const ModelConfig& c) {
  LayoutBuilder b;
  Layout l;
  l.enc_in_w = b.add(c.d_model, c.frontend.d_feat, SliceKind::Weight);
  l.enc_in_b = b.add(c.d_model, 1, SliceKind::Bias);
  for (int i = 0; i < c.n_enc_layers; ++i) {
    EncLayerOffsets e;
    e.ln1 = b.ln(c.d_model);
    e.attn = b.attn(c.d_model);
    e.ln2 = b.ln(c.d_model);
    e.ffn = b.ffn(c.d_model, c.d_ff);
    l.enc.push_back(e);
  }
  l.enc_final = b.ln(c.d_model);
  l.tok_emb = b.add(c.vocab_size, c.d_model, SliceKind::Weight);
  for (int i = 0; i < c.n_dec_layers; ++i) {
    DecLayerOffsets d;
    d.ln1 = b.ln(c.d_model);
    d.self_attn = b.attn(c.d_model);
    d.ln2 = b.ln(c.d_model);
    d.cross_attn = b.attn(c.d_model);
    d.ln3 = b.ln(c.d_model);
    d.ffn = b.ffn(c.d_model, c.d_ff);
    l.dec.push_back(d);
  }
  l.dec_final = b.ln(c.d_model);
  l.out_w = b.add(c.vocab_size, c.d_model, SliceKind::Weight);
  l.out_b = b.add(c.vocab_size, 1, SliceKind::Bias);
  l.total = b.offset();
  l.order = b.take_order();
  return l;
}

ConstMatMap mat(const ParamStore& p, const Slice& s) {
  return ConstMatMap(p.data() + s.offset, s.rows, s.cols);
}
ConstVecMap vec(const ParamStore& p, const Slice& s) {
  return ConstVecMap(p.data() + s.offset, s.rows);
}
MatMap gmat(ParamStore& g, const Slice& s) {
  return MatMap(g.data() + s.offset, s.rows, s.cols);
}
VecMap gvec(ParamStore& g, const Slice& s) {
  return VecMap(g.data() + s.offset, s.rows);
}

// ---- building blocks ------------------------------------------------------

Mat positional_encoding(int n, int d) {
  Mat pe(n, d);
  for (int t = 0; t < n; ++t) {
    for (int i = 0; i < d; i += 2) {
      const double omega = std::pow(10000.0, -static_cast<double>(i) / d);
      pe(t, i) = std::sin(t * omega);
      if (i + 1 < d) pe(t, i + 1) = std::cos(t * omega);
    }
  }
  return pe;
}

void softmax_rows_inplace(Mat& m) {
  for (int i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * phi;
}

Mat layer_norm(const Mat& x, ConstVecMap g, ConstVecMap b, detail::LnCache* cache) {
  Mat out(x.rows(), x.cols());
  Mat x_hat(x.rows(), x.cols());
  Vec inv_std(x.rows());
  const double n = static_cast<double>(x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().sum() / n;
    const double is = 1.0 / std::sqrt(var + kLnEps);
    x_hat.row(i) = (x.row(i).array() - mean) * is;
    out.row(i) = x_hat.row(i).cwiseProduct(g.transpose()) + b.transpose();
    inv_std(i) = is;
  }
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
    cache->out = out;
  }
  return out;
}

// dx for y = gamma .* x_hat + beta; accumulates dgamma/dbeta when given.
Mat layer_norm_backward(const Mat& dy, const detail::LnCache& c, ConstVecMap g,
                        VecMap* dgamma, VecMap* dbeta) {
  const double n = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (int i = 0; i < dy.rows(); ++i) {
    RowVec h = dy.row(i).cwiseProduct(g.transpose());  // d loss / d x_hat
    const double mean_h = h.mean();
    const double mean_hx = h.cwiseProduct(c.x_hat.row(i)).sum() / n;
    dx.row(i) = (h.array() - mean_h - c.x_hat.row(i).array() * mean_hx) * c.inv_std(i);
  }
  if (dgamma) {
    for (int i = 0; i < dy.rows(); ++i)
      *dgamma += dy.row(i).cwiseProduct(c.x_hat.row(i)).transpose();
  }
  if (dbeta) {
    for (int i = 0; i < dy.rows(); ++i) *dbeta += dy.row(i).transpose();
  }
  return dx;
}

struct AttnParams {
  ConstMatMap wq, wk, wv, wo;
  ConstVecMap bq, bk, bv, bo;
};

AttnParams attn_params(const ParamStore& p, const AttnOffsets& o) {
  return {mat(p, o.wq), mat(p, o.wk), mat(p, o.wv), mat(p, o.wo),
          vec(p, o.bq), vec(p, o.bk), vec(p, o.bv), vec(p, o.bo)};
}

// Multi-head attention; queries from `a`, keys/values from `m`.
// Causal masking applies only when a and m are the same stream.
Mat attention(const AttnParams& p, const Mat& a, const Mat& m, int heads, bool causal,
              detail::AttnCache* cache, MacCounts* mac, bool cross) {
  const int d = static_cast<int>(a.cols());
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat q = a * p.wq.transpose();
  q.rowwise() += p.bq.transpose();
  Mat k = m * p.wk.transpose();
  k.rowwise() += p.bk.transpose();
  Mat v = m * p.wv.transpose();
  v.rowwise() += p.bv.transpose();

  Mat concat(a.rows(), d);
  std::vector<Mat> probs(heads);
  for (int h = 0; h < heads; ++h) {
    auto qh = q.middleCols(h * dh, dh);
    auto kh = k.middleCols(h * dh, dh);
    auto vh = v.middleCols(h * dh, dh);
    Mat s = qh * kh.transpose() * scale;
    if (causal) {
      for (int i = 0; i < s.rows(); ++i)
        for (int j = i + 1; j < s.cols(); ++j)
          s(i, j) = -std::numeric_limits<double>::infinity();
    }
    softmax_rows_inplace(s);
    concat.middleCols(h * dh, dh) = s * vh;
    probs[h] = std::move(s);
  }
  Mat out = concat * p.wo.transpose();
  out.rowwise() += p.bo.transpose();

  if (mac) {
    const uint64_t rows = static_cast<uint64_t>(a.rows());
    const uint64_t mrows = static_cast<uint64_t>(m.rows());
    const uint64_t du = static_cast<uint64_t>(d);
    const uint64_t score_ctx = 2 * rows * mrows * du;  // QK^T plus PV
    if (cross) {
      mac->dec_cross_attn += score_ctx;
      mac->dec_proj += rows * du * du + 2 * mrows * du * du + rows * du * du;
    } else {
      mac->dec_self_attn += score_ctx;
      mac->dec_proj += 4 * rows * du * du;
    }
  }
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->concat_o = std::move(concat);
  }
  return out;
}

struct AttnGrads {
  Mat da;  // gradient into the query stream
  Mat dm;  // gradient into the key/value stream
};

AttnGrads attention_backward(const AttnParams& p, const AttnOffsets& o, const Mat& a,
                             const Mat& m, const detail::AttnCache& c, const Mat& dout,
                             int heads, ParamStore* pg) {
  const int d = static_cast<int>(a.cols());
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat d_concat = dout * p.wo;
  if (pg) {
    gmat(*pg, o.wo) += dout.transpose() * c.concat_o;
    gvec(*pg, o.bo) += dout.colwise().sum().transpose();
  }

  Mat dq(a.rows(), d), dk(m.rows(), d), dv(m.rows(), d);
  for (int h = 0; h < heads; ++h) {
    auto qh = c.q.middleCols(h * dh, dh);
    auto kh = c.k.middleCols(h * dh, dh);
    auto vh = c.v.middleCols(h * dh, dh);
    const Mat& ph = c.probs[h];
    auto doh = d_concat.middleCols(h * dh, dh);

    Mat dp = doh * vh.transpose();
    dv.middleCols(h * dh, dh) = ph.transpose() * doh;
    // softmax rows: ds = p .* (dp - rowsum(dp .* p)); masked cells have p=0.
    Mat ds(dp.rows(), dp.cols());
    for (int i = 0; i < dp.rows(); ++i) {
      const double dot = dp.row(i).cwiseProduct(ph.row(i)).sum();
      ds.row(i) = (ph.row(i).array() * (dp.row(i).array() - dot)).matrix();
    }
    dq.middleCols(h * dh, dh) = ds * kh * scale;
    dk.middleCols(h * dh, dh) = ds.transpose() * qh * scale;
  }

  if (pg) {
    gmat(*pg, o.wq) += dq.transpose() * a;
    gvec(*pg, o.bq) += dq.colwise().sum().transpose();
    gmat(*pg, o.wk) += dk.transpose() * m;
    gvec(*pg, o.bk) += dk.colwise().sum().transpose();
    gmat(*pg, o.wv) += dv.transpose() * m;
    gvec(*pg, o.bv) += dv.colwise().sum().transpose();
  }

  AttnGrads g;
  g.da = dq * p.wq;
  g.dm = dk * p.wk + dv * p.wv;
  return g;
}

Mat ffn_forward(const ParamStore& p, const FfnOffsets& o, const Mat& x,
                detail::FfnCache* cache, MacCounts* mac) {
  Mat u = x * mat(p, o.w1).transpose();
  u.rowwise() += vec(p, o.b1).transpose();
  Mat g = u.unaryExpr([](double v) { return gelu(v); });
  Mat out = g * mat(p, o.w2).transpose();
  out.rowwise() += vec(p, o.b2).transpose();
  if (mac)
    mac->dec_ffn += 2ull * static_cast<uint64_t>(x.rows()) * x.cols() * u.cols();
  if (cache) {
    cache->u = std::move(u);
    cache->g = std::move(g);
  }
  return out;
}

Mat ffn_backward(const ParamStore& p, const FfnOffsets& o, const Mat& x,
                 const detail::FfnCache& c, const Mat& dout, ParamStore* pg) {
  Mat dg = dout * mat(p, o.w2);
  if (pg) {
    gmat(*pg, o.w2) += dout.transpose() * c.g;
    gvec(*pg, o.b2) += dout.colwise().sum().transpose();
  }
  Mat du = dg.cwiseProduct(c.u.unaryExpr([](double v) { return gelu_grad(v); }));
  Mat dx = du * mat(p, o.w1);
  if (pg) {
    gmat(*pg, o.w1) += du.transpose() * x;
    gvec(*pg, o.b1) += du.colwise().sum().transpose();
  }
  return dx;
}

}  // namespace

// ---- config / init ---------------------------------------------------------

void ModelConfig::validate() const {
  if (n_enc_layers < 1 || n_dec_layers < 1)
    throw InvalidConfig("model: need at least one encoder and decoder layer");
  if (d_model < 1 || d_ff < 1) throw InvalidConfig("model: widths must be positive");
  if (heads < 1 || d_model % heads != 0)
    throw InvalidConfig("model: d_model must be divisible by heads");
  if (vocab_size < 4) throw InvalidConfig("model: vocab_size must be at least 4");
  if (max_len < 2) throw InvalidConfig("model: max_len must be at least 2");
  frontend.validate();
}

std::size_t ModelConfig::param_count() const {
  validate();
  return make_layout(*this).total;
}

ModelBundle init_model(const ModelConfig& config) {
  config.validate();
  const Layout layout = make_layout(config);
  ModelBundle b;
  b.config = config;
  b.params.resize(layout.total);
  Rng rng(config.init_seed);
  for (const Slice& s : layout.order) {
    double* p = b.params.data() + s.offset;
    const std::size_t n = static_cast<std::size_t>(s.rows) * s.cols;
    switch (s.kind) {
      case SliceKind::Weight: {
        const double scale = 1.0 / std::sqrt(static_cast<double>(s.cols));
        for (std::size_t i = 0; i < n; ++i) p[i] = rng.uniform(-scale, scale);
        break;
      }
      case SliceKind::Bias:
        for (std::size_t i = 0; i < n; ++i) p[i] = 0.0;
        break;
      case SliceKind::Gamma:
        for (std::size_t i = 0; i < n; ++i) p[i] = 1.0;
        break;
    }
  }
  return b;
}

// ---- forward ----------------------------------------------------------------

namespace detail {

Mat encode_cached(const ModelBundle& bundle, const Mat& features, ForwardCache* cache) {
  const ModelConfig& c = bundle.config;
  if (features.cols() != c.frontend.d_feat)
    throw InvalidInput("encode: feature width does not match the frontend config");
  const Layout layout = make_layout(c);
  const ParamStore& p = bundle.params;

  Mat x = features * mat(p, layout.enc_in_w).transpose();
  x.rowwise() += vec(p, layout.enc_in_b).transpose();
  x *= std::sqrt(static_cast<double>(c.d_model));  // keep content on par with positions
  x += positional_encoding(static_cast<int>(x.rows()), c.d_model);
  if (cache) {
    cache->enc_x0 = x;
    cache->enc.resize(c.n_enc_layers);
  }

  for (int l = 0; l < c.n_enc_layers; ++l) {
    const EncLayerOffsets& o = layout.enc[l];
    EncLayerCache* lc = cache ? &cache->enc[l] : nullptr;
    Mat a = layer_norm(x, vec(p, o.ln1.g), vec(p, o.ln1.b), lc ? &lc->ln1 : nullptr);
    x += attention(attn_params(p, o.attn), a, a, c.heads, /*causal=*/false,
                   lc ? &lc->attn : nullptr, nullptr, false);
    Mat f = layer_norm(x, vec(p, o.ln2.g), vec(p, o.ln2.b), lc ? &lc->ln2 : nullptr);
    x += ffn_forward(p, o.ffn, f, lc ? &lc->ffn : nullptr, nullptr);
  }
  Mat out = layer_norm(x, vec(p, layout.enc_final.g), vec(p, layout.enc_final.b),
                       cache ? &cache->enc_final : nullptr);
  if (cache) cache->enc_out = out;
  return out;
}

Mat encode(const ModelBundle& bundle, const Mat& features) {
  return encode_cached(bundle, features, nullptr);
}

Mat decode_teacher_forced(const ModelBundle& bundle, const Mat& enc_out,
                          const TokenSequence& target, ForwardCache* cache, MacCounts* mac) {
  const ModelConfig& c = bundle.config;
  if (target.empty() || target.front() != kBosId)
    throw InvalidInput("teacher-forced target must begin with BOS");
  if (static_cast<int>(target.size()) > c.max_len)
    throw InvalidInput("teacher-forced target longer than max_len");
  for (int t : target)
    if (t < 0 || t >= c.vocab_size) throw InvalidInput("target token out of vocabulary");

  const Layout layout = make_layout(c);
  const ParamStore& p = bundle.params;
  const int n = static_cast<int>(target.size());

  Mat x(n, c.d_model);
  ConstMatMap emb = mat(p, layout.tok_emb);
  const double emb_scale = std::sqrt(static_cast<double>(c.d_model));
  for (int t = 0; t < n; ++t) x.row(t) = emb.row(target[t]) * emb_scale;
  x += positional_encoding(n, c.d_model);
  if (cache) {
    cache->target = target;
    cache->dec_x0 = x;
    cache->dec.resize(c.n_dec_layers);
  }

  for (int l = 0; l < c.n_dec_layers; ++l) {
    const DecLayerOffsets& o = layout.dec[l];
    DecLayerCache* lc = cache ? &cache->dec[l] : nullptr;
    Mat a = layer_norm(x, vec(p, o.ln1.g), vec(p, o.ln1.b), lc ? &lc->ln1 : nullptr);
    x += attention(attn_params(p, o.self_attn), a, a, c.heads, /*causal=*/true,
                   lc ? &lc->self_attn : nullptr, mac, false);
    Mat q = layer_norm(x, vec(p, o.ln2.g), vec(p, o.ln2.b), lc ? &lc->ln2 : nullptr);
    x += attention(attn_params(p, o.cross_attn), q, enc_out, c.heads, /*causal=*/false,
                   lc ? &lc->cross_attn : nullptr, mac, true);
    Mat f = layer_norm(x, vec(p, o.ln3.g), vec(p, o.ln3.b), lc ? &lc->ln3 : nullptr);
    x += ffn_forward(p, o.ffn, f, lc ? &lc->ffn : nullptr, mac);
  }

  Mat xf = layer_norm(x, vec(p, layout.dec_final.g), vec(p, layout.dec_final.b),
                      cache ? &cache->dec_final : nullptr);
  Mat logits = xf * mat(p, layout.out_w).transpose();
  logits.rowwise() += vec(p, layout.out_b).transpose();
  if (mac)
    mac->dec_vocab += static_cast<uint64_t>(n) * c.d_model * c.vocab_size;
  if (cache) cache->logits = logits;
  return logits;
}

Mat forward_full(const ModelBundle& bundle, const Mat& features, const TokenSequence& target,
                 ForwardCache& cache) {
  cache.features = features;
  Mat enc_out = encode_cached(bundle, features, &cache);
  return decode_teacher_forced(bundle, enc_out, target, &cache, nullptr);
}

BackwardResult backward_full(const ModelBundle& bundle, const ForwardCache& cache,
                             const Mat& d_logits, const BackwardOptions& opts) {
  const ModelConfig& c = bundle.config;
  const Layout layout = make_layout(c);
  const ParamStore& p = bundle.params;

  BackwardResult result;
  ParamStore* pg = nullptr;
  if (opts.want_param_grads) {
    result.param_grads.assign(layout.total, 0.0);
    pg = &result.param_grads;
  }

  // Vocabulary head.
  Mat dxf = d_logits * mat(p, layout.out_w);
  if (pg) {
    gmat(*pg, layout.out_w) += d_logits.transpose() * cache.dec_final.out;
    gvec(*pg, layout.out_b) += d_logits.colwise().sum().transpose();
  }

  // Decoder final LN.
  auto ln_back = [&](const Mat& dy, const LnCache& lc, const LnOffsets& o) {
    if (pg) {
      VecMap g1 = gvec(*pg, o.g), b1 = gvec(*pg, o.b);
      return layer_norm_backward(dy, lc, vec(p, o.g), &g1, &b1);
    }
    return layer_norm_backward(dy, lc, vec(p, o.g), nullptr, nullptr);
  };

  Mat dx = ln_back(dxf, cache.dec_final, layout.dec_final);

  Mat d_enc_out = Mat::Zero(cache.enc_out.rows(), cache.enc_out.cols());

  for (int l = c.n_dec_layers - 1; l >= 0; --l) {
    const DecLayerOffsets& o = layout.dec[l];
    const DecLayerCache& lc = cache.dec[l];

    // x3 = x2 + ffn(ln3(x2))
    Mat dffn_in = ffn_backward(p, o.ffn, lc.ln3.out, lc.ffn, dx, pg);
    dx += ln_back(dffn_in, lc.ln3, o.ln3);

    // x2 = x1 + cross_attn(ln2(x1), enc_out)
    AttnGrads cg = attention_backward(attn_params(p, o.cross_attn), o.cross_attn, lc.ln2.out,
                                      cache.enc_out, lc.cross_attn, dx, c.heads, pg);
    d_enc_out += cg.dm;
    dx += ln_back(cg.da, lc.ln2, o.ln2);

    // x1 = x0 + self_attn(ln1(x0))
    AttnGrads sg = attention_backward(attn_params(p, o.self_attn), o.self_attn, lc.ln1.out,
                                      lc.ln1.out, lc.self_attn, dx, c.heads, pg);
    dx += ln_back(sg.da + sg.dm, lc.ln1, o.ln1);
  }

  const double emb_scale = std::sqrt(static_cast<double>(c.d_model));
  if (pg) {
    MatMap demb = gmat(*pg, layout.tok_emb);
    for (int t = 0; t < dx.rows(); ++t)
      demb.row(cache.target[t]) += dx.row(t) * emb_scale;
  }

  // Encoder final LN feeds every decoder layer's cross-attention.
  Mat denc = ln_back(d_enc_out, cache.enc_final, layout.enc_final);

  for (int l = c.n_enc_layers - 1; l >= 0; --l) {
    const EncLayerOffsets& o = layout.enc[l];
    const EncLayerCache& lc = cache.enc[l];

    Mat dffn_in = ffn_backward(p, o.ffn, lc.ln2.out, lc.ffn, denc, pg);
    denc += ln_back(dffn_in, lc.ln2, o.ln2);

    AttnGrads sg = attention_backward(attn_params(p, o.attn), o.attn, lc.ln1.out, lc.ln1.out,
                                      lc.attn, denc, c.heads, pg);
    denc += ln_back(sg.da + sg.dm, lc.ln1, o.ln1);
  }

  denc *= emb_scale;  // mirrors the scaled input projection
  if (pg) {
    gmat(*pg, layout.enc_in_w) += denc.transpose() * cache.features;
    gvec(*pg, layout.enc_in_b) += denc.colwise().sum().transpose();
  }
  if (opts.want_input_grad) result.d_features = denc * mat(p, layout.enc_in_w);
  return result;
}

}  // namespace detail

Mat forward_teacher_forced(const ModelBundle& bundle, const Mat& features,
                           const TokenSequence& target, MacCounts* mac) {
  Mat enc_out = detail::encode(bundle, features);
  return detail::decode_teacher_forced(bundle, enc_out, target, nullptr, mac);
}

// ---- greedy decoding ---------------------------------------------------------

// Incremental decoding with cached self-attention keys/values and cross
// keys/values computed once. Mathematically identical to re-running the
// teacher-forced pass on the growing prefix.
DecodeResult greedy_decode(const ModelBundle& bundle, const Mat& features, int max_len) {
  const ModelConfig& c = bundle.config;
  if (max_len < 1 || max_len > c.max_len)
    throw InvalidInput("greedy_decode: need 1 <= max_len <= model max_len");
  const Layout layout = make_layout(c);
  const ParamStore& p = bundle.params;
  const int d = c.d_model;
  const int dh = d / c.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat enc_out = detail::encode(bundle, features);

  struct LayerState {
    Mat k_self, v_self;  // grow one row per step
    Mat k_cross, v_cross;
  };
  std::vector<LayerState> st(c.n_dec_layers);
  for (int l = 0; l < c.n_dec_layers; ++l) {
    const AttnOffsets& o = layout.dec[l].cross_attn;
    st[l].k_cross = enc_out * mat(p, o.wk).transpose();
    st[l].k_cross.rowwise() += vec(p, o.bk).transpose();
    st[l].v_cross = enc_out * mat(p, o.wv).transpose();
    st[l].v_cross.rowwise() += vec(p, o.bv).transpose();
    st[l].k_self.resize(max_len + 1, d);
    st[l].v_self.resize(max_len + 1, d);
  }

  const Mat pos = positional_encoding(max_len + 1, d);
  ConstMatMap emb = mat(p, layout.tok_emb);

  DecodeResult result;
  result.prob_rows.resize(max_len, c.vocab_size);

  auto ln_row = [&](const RowVec& x, const LnOffsets& o) {
    const double mean = x.mean();
    const double var = (x.array() - mean).square().sum() / x.size();
    const double is = 1.0 / std::sqrt(var + kLnEps);
    RowVec xhat = (x.array() - mean) * is;
    return RowVec(xhat.cwiseProduct(vec(p, o.g).transpose()) + vec(p, o.b).transpose());
  };

  const double emb_scale = std::sqrt(static_cast<double>(d));
  int tok = kBosId;
  for (int step = 0; step < max_len; ++step) {
    RowVec x = emb.row(tok) * emb_scale + pos.row(step);
    for (int l = 0; l < c.n_dec_layers; ++l) {
      const DecLayerOffsets& o = layout.dec[l];
      LayerState& ls = st[l];

      RowVec a = ln_row(x, o.ln1);
      {
        const AttnOffsets& ao = o.self_attn;
        RowVec q = a * mat(p, ao.wq).transpose() + vec(p, ao.bq).transpose();
        ls.k_self.row(step) = a * mat(p, ao.wk).transpose() + vec(p, ao.bk).transpose();
        ls.v_self.row(step) = a * mat(p, ao.wv).transpose() + vec(p, ao.bv).transpose();
        RowVec concat(d);
        for (int h = 0; h < c.heads; ++h) {
          auto kh = ls.k_self.topRows(step + 1).middleCols(h * dh, dh);
          auto vh = ls.v_self.topRows(step + 1).middleCols(h * dh, dh);
          RowVec s = q.middleCols(h * dh, dh) * kh.transpose() * scale;
          const double mx = s.maxCoeff();
          s = (s.array() - mx).exp();
          s /= s.sum();
          concat.middleCols(h * dh, dh) = s * vh;
        }
        x += concat * mat(p, ao.wo).transpose() + vec(p, ao.bo).transpose();
      }

      RowVec cq = ln_row(x, o.ln2);
      {
        const AttnOffsets& ao = o.cross_attn;
        RowVec q = cq * mat(p, ao.wq).transpose() + vec(p, ao.bq).transpose();
        RowVec concat(d);
        for (int h = 0; h < c.heads; ++h) {
          auto kh = ls.k_cross.middleCols(h * dh, dh);
          auto vh = ls.v_cross.middleCols(h * dh, dh);
          RowVec s = q.middleCols(h * dh, dh) * kh.transpose() * scale;
          const double mx = s.maxCoeff();
          s = (s.array() - mx).exp();
          s /= s.sum();
          concat.middleCols(h * dh, dh) = s * vh;
        }
        x += concat * mat(p, ao.wo).transpose() + vec(p, ao.bo).transpose();
      }

      RowVec f = ln_row(x, o.ln3);
      RowVec u = f * mat(p, o.ffn.w1).transpose() + vec(p, o.ffn.b1).transpose();
      RowVec g = u.unaryExpr([](double v) { return gelu(v); });
      x += g * mat(p, o.ffn.w2).transpose() + vec(p, o.ffn.b2).transpose();
    }

    RowVec xf = ln_row(x, layout.dec_final);
    RowVec logits = xf * mat(p, layout.out_w).transpose() + vec(p, layout.out_b).transpose();
    const double mx = logits.maxCoeff();
    RowVec probs = (logits.array() - mx).exp();
    probs /= probs.sum();
    result.prob_rows.row(step) = probs;

    int best = 0;
    for (int v = 1; v < c.vocab_size; ++v)
      if (probs(v) > probs(best)) best = v;
    result.tokens.push_back(best);
    tok = best;
    if (best == kEosId) {
      result.ended_by_eos = true;
      break;
    }
  }
  result.prob_rows.conservativeResize(static_cast<int>(result.tokens.size()), c.vocab_size);
  return result;
}

// ---- input gradient ------------------------------------------------------------

InputGradientResult input_gradient(const ModelBundle& bundle, const Waveform& x,
                                   const std::vector<double>& delta, const LossSpec& spec) {
  const Waveform adv = advasr::apply(x, delta);
  const Mat features = extract_features(adv, bundle.config.frontend);

  detail::ForwardCache cache;
  Mat logits = detail::forward_full(bundle, features, teacher_tokens(spec), cache);
  LossEval eval = evaluate_loss(spec, logits);
  if (!std::isfinite(eval.total))
    throw NumericalFailure("input_gradient: loss is not finite");

  detail::BackwardOptions opts;
  opts.want_input_grad = true;
  opts.want_param_grads = false;
  detail::BackwardResult back = detail::backward_full(bundle, cache, eval.d_logits, opts);

  InputGradientResult out;
  out.loss = eval.total;
  out.loss_eos = eval.eos;
  out.loss_redo = eval.redo;
  out.grad = features_input_gradient(back.d_features, features, delta.size(),
                                     bundle.config.frontend);
  return out;
}

// ---- training -------------------------------------------------------------------

TrainResult train(ModelBundle& bundle, const std::vector<Utterance>& corpus,
                  const TrainConfig& cfg) {
  if (corpus.empty()) throw InvalidInput("train: corpus is empty");
  if (cfg.batch_size < 1) throw InvalidConfig("train: batch_size must be >= 1");
  TrainResult result;
  if (cfg.epochs == 0) return result;

  const Layout layout = make_layout(bundle.config);
  Rng shuffle_rng(cfg.seed);

  std::vector<Mat> features(corpus.size());
  std::vector<TokenSequence> teachers(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    features[i] = extract_features(corpus[i].waveform, bundle.config.frontend);
    TokenSequence t;
    t.reserve(corpus[i].transcript.size() + 2);
    t.push_back(kBosId);
    t.insert(t.end(), corpus[i].transcript.begin(), corpus[i].transcript.end());
    t.push_back(kEosId);
    if (static_cast<int>(t.size()) > bundle.config.max_len)
      throw InvalidInput("train: transcript longer than max_len");
    teachers[i] = std::move(t);
  }

  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const int decay_from = static_cast<int>(cfg.epochs * cfg.lr_decay_at);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        epoch >= decay_from ? cfg.learning_rate * cfg.lr_decay : cfg.learning_rate;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_u64() % i]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t bsz = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      std::vector<ParamStore> grads(bsz);
      std::vector<double> losses(bsz);

      parallel_for(bsz, [&](std::size_t slot) {
        const std::size_t ex = order[start + slot];
        detail::ForwardCache cache;
        Mat logits = detail::forward_full(bundle, features[ex], teachers[ex], cache);
        Mat d_logits;
        losses[slot] = ce_teacher_forced(logits, teachers[ex], &d_logits);
        detail::BackwardOptions opts;
        opts.want_input_grad = false;
        opts.want_param_grads = true;
        grads[slot] =
            std::move(detail::backward_full(bundle, cache, d_logits, opts).param_grads);
      });

      const double inv = 1.0 / static_cast<double>(bsz);
      for (std::size_t slot = 0; slot < bsz; ++slot) {
        if (!std::isfinite(losses[slot]))
          throw NumericalFailure("train: loss diverged");
        epoch_loss += losses[slot];
        const ParamStore& g = grads[slot];
        for (std::size_t j = 0; j < layout.total; ++j)
          bundle.params[j] -= lr * inv * g[j];
      }
    }
    result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(corpus.size()));
  }
  return result;
}

// ---- checkpoints ------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', 'D', 'V', 'A', 'S', 'R', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_i64(std::ofstream& out, int64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

int64_t get_i64(std::ifstream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw CheckpointError("checkpoint truncated in header");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return static_cast<int64_t>(v);
}

}  // namespace

void save_checkpoint(const ModelBundle& bundle, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(kMagic, 8);
  put_i64(out, kVersion);
  const ModelConfig& c = bundle.config;
  for (int64_t v : {static_cast<int64_t>(c.n_enc_layers), static_cast<int64_t>(c.n_dec_layers),
                    static_cast<int64_t>(c.d_model), static_cast<int64_t>(c.heads),
                    static_cast<int64_t>(c.d_ff), static_cast<int64_t>(c.vocab_size),
                    static_cast<int64_t>(c.max_len), static_cast<int64_t>(c.frontend.frame_len),
                    static_cast<int64_t>(c.frontend.hop), static_cast<int64_t>(c.frontend.d_feat),
                    static_cast<int64_t>(c.frontend.projection_seed),
                    static_cast<int64_t>(c.init_seed),
                    static_cast<int64_t>(bundle.params.size())})
    put_i64(out, v);
  out.write(reinterpret_cast<const char*>(bundle.params.data()),
            static_cast<std::streamsize>(bundle.params.size() * sizeof(double)));
  if (!out) throw IoError("write failed: " + path);
}

ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw CheckpointError(path + ": bad magic, not a checkpoint");
  const int64_t version = get_i64(in);
  if (version != kVersion)
    throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version));

  ModelBundle b;
  ModelConfig& c = b.config;
  c.n_enc_layers = static_cast<int>(get_i64(in));
  c.n_dec_layers = static_cast<int>(get_i64(in));
  c.d_model = static_cast<int>(get_i64(in));
  c.heads = static_cast<int>(get_i64(in));
  c.d_ff = static_cast<int>(get_i64(in));
  c.vocab_size = static_cast<int>(get_i64(in));
  c.max_len = static_cast<int>(get_i64(in));
  c.frontend.frame_len = static_cast<int>(get_i64(in));
  c.frontend.hop = static_cast<int>(get_i64(in));
  c.frontend.d_feat = static_cast<int>(get_i64(in));
  c.frontend.projection_seed = static_cast<uint64_t>(get_i64(in));
  c.init_seed = static_cast<uint64_t>(get_i64(in));
  const int64_t n_params = get_i64(in);

  try {
    c.validate();
  } catch (const InvalidConfig& e) {
    throw CheckpointError(path + ": invalid stored config: " + e.what());
  }
  if (n_params < 0 || static_cast<std::size_t>(n_params) != c.param_count())
    throw CheckpointError(path + ": parameter count does not match stored config");

  b.params.resize(static_cast<std::size_t>(n_params));
  in.read(reinterpret_cast<char*>(b.params.data()),
          static_cast<std::streamsize>(b.params.size() * sizeof(double)));
  if (!in || in.gcount() != static_cast<std::streamsize>(b.params.size() * sizeof(double)))
    throw CheckpointError(path + ": truncated parameter block");
  in.peek();
  if (!in.eof()) throw CheckpointError(path + ": trailing bytes after parameter block");
  return b;
}

MacCounts measured_macs(const ModelBundle& bundle, int target_len, int n_frames) {
  if (target_len < 1 || target_len > bundle.config.max_len)
    throw InvalidInput("measured_macs: target_len out of range");
  Mat features = Mat::Zero(n_frames, bundle.config.frontend.d_feat);
  TokenSequence target(static_cast<std::size_t>(target_len), kFirstWordId);
  target[0] = kBosId;
  MacCounts mac;
  forward_teacher_forced(bundle, features, target, &mac);
  return mac;
}

}  // namespace advasr
