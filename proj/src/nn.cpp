#include "arcgen/nn.hpp"

#include <algorithm>
#include <cmath>

#include "arcgen/common.hpp"
#include "arcgen/io.hpp"

namespace arcgen::nn {

void kaiming_init(Param& w, int fan_in, Rng& rng) {
  double scale = std::sqrt(2.0 / std::max(1, fan_in));
  for (auto& v : w.value) v = rng.normal(0.0, scale);
}

// --- Dense -------------------------------------------------------------------

Dense::Dense(int in, int out, std::string name) : in_(in), out_(out) {
  w_.init(name + ".w", ParamKind::weight, {in, out});
  b_.init(name + ".b", ParamKind::bias, {out});
}

Tensor Dense::forward(const Tensor& x, bool, Rng*) {
  x_ = x;
  int n = x.rows();
  Tensor y({n, out_});
  for (int i = 0; i < n; ++i) {
    const double* xi = x.row(i);
    double* yi = y.row(i);
    for (int o = 0; o < out_; ++o) yi[o] = b_.value[static_cast<size_t>(o)];
    for (int k = 0; k < in_; ++k) {
      double xv = xi[k];
      if (xv == 0.0) continue;
      const double* wk = w_.value.data() + static_cast<size_t>(k) * out_;
      for (int o = 0; o < out_; ++o) yi[o] += xv * wk[o];
    }
  }
  return y;
}

Tensor Dense::backward(const Tensor& grad_out) {
  int n = x_.rows();
  Tensor gx({n, in_});
  for (int i = 0; i < n; ++i) {
    const double* gi = grad_out.row(i);
    const double* xi = x_.row(i);
    double* gxi = gx.row(i);
    for (int o = 0; o < out_; ++o) b_.grad[static_cast<size_t>(o)] += gi[o];
    for (int k = 0; k < in_; ++k) {
      const double* wk = w_.value.data() + static_cast<size_t>(k) * out_;
      double* gwk = w_.grad.data() + static_cast<size_t>(k) * out_;
      double acc = 0.0;
      double xv = xi[k];
      for (int o = 0; o < out_; ++o) {
        acc += wk[o] * gi[o];
        gwk[o] += xv * gi[o];
      }
      gxi[k] = acc;
    }
  }
  return gx;
}

LayerPtr Dense::clone() const {
  auto c = std::make_unique<Dense>(in_, out_);
  c->w_ = w_;
  c->b_ = b_;
  return c;
}

// --- Conv2D ------------------------------------------------------------------

Conv2D::Conv2D(int in_c, int out_c, int ksize, int pad, std::string name)
    : in_c_(in_c), out_c_(out_c), k_(ksize), pad_(pad) {
  w_.init(name + ".w", ParamKind::weight, {ksize, ksize, in_c, out_c});
  b_.init(name + ".b", ParamKind::bias, {out_c});
}

Tensor Conv2D::forward(const Tensor& x, bool, Rng*) {
  x_ = x;
  int n = x.dims[0], h = x.dims[1], w = x.dims[2];
  if (x.dims[3] != in_c_) throw NumericalError("conv: channel mismatch");
  int oh = h + 2 * pad_ - k_ + 1, ow = w + 2 * pad_ - k_ + 1;
  Tensor y({n, oh, ow, out_c_});
  auto xat = [&](int b, int r, int c, int ch) {
    return x.v[((static_cast<size_t>(b) * h + r) * w + c) * in_c_ + ch];
  };
  for (int b = 0; b < n; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double* out = y.v.data() + ((static_cast<size_t>(b) * oh + oy) * ow + ox) * out_c_;
        for (int oc = 0; oc < out_c_; ++oc) out[oc] = b_.value[static_cast<size_t>(oc)];
        for (int ky = 0; ky < k_; ++ky) {
          int iy = oy + ky - pad_;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k_; ++kx) {
            int ix = ox + kx - pad_;
            if (ix < 0 || ix >= w) continue;
            const double* wrow =
                w_.value.data() + ((static_cast<size_t>(ky) * k_ + kx) * in_c_) * out_c_;
            for (int ic = 0; ic < in_c_; ++ic) {
              double xv = xat(b, iy, ix, ic);
              const double* wv = wrow + static_cast<size_t>(ic) * out_c_;
              for (int oc = 0; oc < out_c_; ++oc) out[oc] += xv * wv[oc];
            }
          }
        }
      }
  return y;
}

Tensor Conv2D::backward(const Tensor& grad_out) {
  int n = x_.dims[0], h = x_.dims[1], w = x_.dims[2];
  int oh = grad_out.dims[1], ow = grad_out.dims[2];
  Tensor gx(x_.dims);
  for (int b = 0; b < n; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const double* go =
            grad_out.v.data() + ((static_cast<size_t>(b) * oh + oy) * ow + ox) * out_c_;
        for (int oc = 0; oc < out_c_; ++oc) b_.grad[static_cast<size_t>(oc)] += go[oc];
        for (int ky = 0; ky < k_; ++ky) {
          int iy = oy + ky - pad_;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k_; ++kx) {
            int ix = ox + kx - pad_;
            if (ix < 0 || ix >= w) continue;
            size_t xoff = ((static_cast<size_t>(b) * h + iy) * w + ix) * in_c_;
            size_t woff = ((static_cast<size_t>(ky) * k_ + kx) * in_c_) * out_c_;
            for (int ic = 0; ic < in_c_; ++ic) {
              double xv = x_.v[xoff + ic];
              const double* wv = w_.value.data() + woff + static_cast<size_t>(ic) * out_c_;
              double* gwv = w_.grad.data() + woff + static_cast<size_t>(ic) * out_c_;
              double acc = 0.0;
              for (int oc = 0; oc < out_c_; ++oc) {
                acc += wv[oc] * go[oc];
                gwv[oc] += xv * go[oc];
              }
              gx.v[xoff + ic] += acc;
            }
          }
        }
      }
  return gx;
}

LayerPtr Conv2D::clone() const {
  auto c = std::make_unique<Conv2D>(in_c_, out_c_, k_, pad_);
  c->w_ = w_;
  c->b_ = b_;
  return c;
}

// --- DepthwiseConv2D ----------------------------------------------------------

DepthwiseConv2D::DepthwiseConv2D(int channels, int ksize, int pad, std::string name)
    : c_(channels), k_(ksize), pad_(pad) {
  w_.init(name + ".w", ParamKind::weight, {ksize, ksize, channels});
  b_.init(name + ".b", ParamKind::bias, {channels});
}

Tensor DepthwiseConv2D::forward(const Tensor& x, bool, Rng*) {
  x_ = x;
  int n = x.dims[0], h = x.dims[1], w = x.dims[2];
  if (x.dims[3] != c_) throw NumericalError("dwconv: channel mismatch");
  int oh = h + 2 * pad_ - k_ + 1, ow = w + 2 * pad_ - k_ + 1;
  Tensor y({n, oh, ow, c_});
  for (int b = 0; b < n; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double* out = y.v.data() + ((static_cast<size_t>(b) * oh + oy) * ow + ox) * c_;
        for (int ch = 0; ch < c_; ++ch) out[ch] = b_.value[static_cast<size_t>(ch)];
        for (int ky = 0; ky < k_; ++ky) {
          int iy = oy + ky - pad_;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k_; ++kx) {
            int ix = ox + kx - pad_;
            if (ix < 0 || ix >= w) continue;
            const double* xrow = x.v.data() + ((static_cast<size_t>(b) * h + iy) * w + ix) * c_;
            const double* wrow = w_.value.data() + (static_cast<size_t>(ky) * k_ + kx) * c_;
            for (int ch = 0; ch < c_; ++ch) out[ch] += xrow[ch] * wrow[ch];
          }
        }
      }
  return y;
}

Tensor DepthwiseConv2D::backward(const Tensor& grad_out) {
  int n = x_.dims[0], h = x_.dims[1], w = x_.dims[2];
  int oh = grad_out.dims[1], ow = grad_out.dims[2];
  Tensor gx(x_.dims);
  for (int b = 0; b < n; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const double* go =
            grad_out.v.data() + ((static_cast<size_t>(b) * oh + oy) * ow + ox) * c_;
        for (int ch = 0; ch < c_; ++ch) b_.grad[static_cast<size_t>(ch)] += go[ch];
        for (int ky = 0; ky < k_; ++ky) {
          int iy = oy + ky - pad_;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k_; ++kx) {
            int ix = ox + kx - pad_;
            if (ix < 0 || ix >= w) continue;
            size_t xoff = ((static_cast<size_t>(b) * h + iy) * w + ix) * c_;
            size_t woff = (static_cast<size_t>(ky) * k_ + kx) * c_;
            for (int ch = 0; ch < c_; ++ch) {
              gx.v[xoff + ch] += w_.value[woff + ch] * go[ch];
              w_.grad[woff + ch] += x_.v[xoff + ch] * go[ch];
            }
          }
        }
      }
  return gx;
}

LayerPtr DepthwiseConv2D::clone() const {
  auto c = std::make_unique<DepthwiseConv2D>(c_, k_, pad_);
  c->w_ = w_;
  c->b_ = b_;
  return c;
}

// --- MaxPool2D ----------------------------------------------------------------

Tensor MaxPool2D::forward(const Tensor& x, bool, Rng*) {
  in_dims_ = x.dims;
  int n = x.dims[0], h = x.dims[1], w = x.dims[2], c = x.dims[3];
  int oh = h / win_, ow = w / win_;
  Tensor y({n, oh, ow, c});
  argmax_.assign(y.v.size(), 0);
  for (int b = 0; b < n; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int ch = 0; ch < c; ++ch) {
          double best = -1e300;
          int64_t best_idx = 0;
          for (int dy = 0; dy < win_; ++dy)
            for (int dx = 0; dx < win_; ++dx) {
              int iy = oy * win_ + dy, ix = ox * win_ + dx;
              int64_t idx = ((static_cast<int64_t>(b) * h + iy) * w + ix) * c + ch;
              if (x.v[static_cast<size_t>(idx)] > best) {
                best = x.v[static_cast<size_t>(idx)];
                best_idx = idx;
              }
            }
          size_t o = ((static_cast<size_t>(b) * oh + oy) * ow + ox) * c + ch;
          y.v[o] = best;
          argmax_[o] = best_idx;
        }
  return y;
}

Tensor MaxPool2D::backward(const Tensor& grad_out) {
  Tensor gx(in_dims_);
  for (size_t o = 0; o < grad_out.v.size(); ++o)
    gx.v[static_cast<size_t>(argmax_[o])] += grad_out.v[o];
  return gx;
}

// --- ReLU ----------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x, bool, Rng*) {
  Tensor y = x;
  mask_.assign(x.v.size(), 0);
  for (size_t i = 0; i < y.v.size(); ++i) {
    if (y.v[i] > 0.0) {
      mask_[i] = 1;
    } else {
      y.v[i] = 0.0;
    }
  }
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  Tensor gx = grad_out;
  for (size_t i = 0; i < gx.v.size(); ++i)
    if (!mask_[i]) gx.v[i] = 0.0;
  return gx;
}

// --- Flatten --------------------------------------------------------------------

Tensor Flatten::forward(const Tensor& x, bool, Rng*) {
  in_dims_ = x.dims;
  Tensor y = x;
  y.dims = {x.dims[0], static_cast<int>(x.stride0())};
  return y;
}

Tensor Flatten::backward(const Tensor& grad_out) {
  Tensor gx = grad_out;
  gx.dims = in_dims_;
  return gx;
}

// --- BatchNorm -------------------------------------------------------------------

BatchNorm::BatchNorm(int channels, double momentum, double eps, std::string name)
    : c_(channels), momentum_(momentum), eps_(eps) {
  gamma_.init(name + ".gamma", ParamKind::norm, {channels});
  beta_.init(name + ".beta", ParamKind::norm, {channels});
  rmean_.init(name + ".rmean", ParamKind::norm, {channels}, /*train=*/false);
  rvar_.init(name + ".rvar", ParamKind::norm, {channels}, /*train=*/false);
  for (auto& g : gamma_.value) g = 1.0;
  for (auto& v : rvar_.value) v = 1.0;
}

Tensor BatchNorm::forward(const Tensor& x, bool train, Rng*) {
  if (x.dims.back() != c_) throw NumericalError("batchnorm: channel mismatch");
  int64_t groups = x.size() / c_;  // elements per channel
  Tensor y = x;
  train_pass_ = train;
  if (train) {
    std::vector<double> mean(static_cast<size_t>(c_), 0.0), var(static_cast<size_t>(c_), 0.0);
    for (int64_t g = 0; g < groups; ++g)
      for (int ch = 0; ch < c_; ++ch)
        mean[static_cast<size_t>(ch)] += x.v[static_cast<size_t>(g * c_ + ch)];
    for (auto& m : mean) m /= static_cast<double>(groups);
    for (int64_t g = 0; g < groups; ++g)
      for (int ch = 0; ch < c_; ++ch) {
        double d = x.v[static_cast<size_t>(g * c_ + ch)] - mean[static_cast<size_t>(ch)];
        var[static_cast<size_t>(ch)] += d * d;
      }
    for (auto& v : var) v /= static_cast<double>(groups);
    inv_std_.assign(static_cast<size_t>(c_), 0.0);
    for (int ch = 0; ch < c_; ++ch)
      inv_std_[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var[static_cast<size_t>(ch)] + eps_);
    xhat_ = Tensor(x.dims);
    for (int64_t g = 0; g < groups; ++g)
      for (int ch = 0; ch < c_; ++ch) {
        size_t i = static_cast<size_t>(g * c_ + ch);
        xhat_.v[i] = (x.v[i] - mean[static_cast<size_t>(ch)]) * inv_std_[static_cast<size_t>(ch)];
        y.v[i] = gamma_.value[static_cast<size_t>(ch)] * xhat_.v[i] +
                 beta_.value[static_cast<size_t>(ch)];
      }
    for (int ch = 0; ch < c_; ++ch) {
      rmean_.value[static_cast<size_t>(ch)] =
          (1.0 - momentum_) * rmean_.value[static_cast<size_t>(ch)] +
          momentum_ * mean[static_cast<size_t>(ch)];
      rvar_.value[static_cast<size_t>(ch)] =
          (1.0 - momentum_) * rvar_.value[static_cast<size_t>(ch)] +
          momentum_ * var[static_cast<size_t>(ch)];
    }
  } else {
    inv_std_.assign(static_cast<size_t>(c_), 0.0);
    for (int ch = 0; ch < c_; ++ch)
      inv_std_[static_cast<size_t>(ch)] =
          1.0 / std::sqrt(rvar_.value[static_cast<size_t>(ch)] + eps_);
    xhat_ = Tensor(x.dims);
    for (int64_t g = 0; g < groups; ++g)
      for (int ch = 0; ch < c_; ++ch) {
        size_t i = static_cast<size_t>(g * c_ + ch);
        xhat_.v[i] = (x.v[i] - rmean_.value[static_cast<size_t>(ch)]) *
                     inv_std_[static_cast<size_t>(ch)];
        y.v[i] = gamma_.value[static_cast<size_t>(ch)] * xhat_.v[i] +
                 beta_.value[static_cast<size_t>(ch)];
      }
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& grad_out) {
  int64_t groups = grad_out.size() / c_;
  Tensor gx(grad_out.dims);
  std::vector<double> sum_g(static_cast<size_t>(c_), 0.0), sum_gx(static_cast<size_t>(c_), 0.0);
  for (int64_t g = 0; g < groups; ++g)
    for (int ch = 0; ch < c_; ++ch) {
      size_t i = static_cast<size_t>(g * c_ + ch);
      double go = grad_out.v[i];
      gamma_.grad[static_cast<size_t>(ch)] += go * xhat_.v[i];
      beta_.grad[static_cast<size_t>(ch)] += go;
      sum_g[static_cast<size_t>(ch)] += go;
      sum_gx[static_cast<size_t>(ch)] += go * xhat_.v[i];
    }
  if (train_pass_) {
    double inv_n = 1.0 / static_cast<double>(groups);
    for (int64_t g = 0; g < groups; ++g)
      for (int ch = 0; ch < c_; ++ch) {
        size_t i = static_cast<size_t>(g * c_ + ch);
        double go = grad_out.v[i];
        gx.v[i] = gamma_.value[static_cast<size_t>(ch)] * inv_std_[static_cast<size_t>(ch)] *
                  (go - inv_n * sum_g[static_cast<size_t>(ch)] -
                   xhat_.v[i] * inv_n * sum_gx[static_cast<size_t>(ch)]);
      }
  } else {
    for (int64_t g = 0; g < groups; ++g)
      for (int ch = 0; ch < c_; ++ch) {
        size_t i = static_cast<size_t>(g * c_ + ch);
        gx.v[i] = grad_out.v[i] * gamma_.value[static_cast<size_t>(ch)] *
                  inv_std_[static_cast<size_t>(ch)];
      }
  }
  return gx;
}

LayerPtr BatchNorm::clone() const {
  auto c = std::make_unique<BatchNorm>(c_, momentum_, eps_);
  c->gamma_ = gamma_;
  c->beta_ = beta_;
  c->rmean_ = rmean_;
  c->rvar_ = rvar_;
  return c;
}

// --- Dropout --------------------------------------------------------------------

Tensor Dropout::forward(const Tensor& x, bool train, Rng* rng) {
  active_ = train && rate_ > 0.0;
  if (!active_) return x;
  if (rng == nullptr) throw NumericalError("dropout: training forward needs an rng");
  Tensor y = x;
  mask_.assign(x.v.size(), 0.0);
  double keep = 1.0 - rate_;
  double scale = 1.0 / keep;
  for (size_t i = 0; i < y.v.size(); ++i) {
    if (rng->uniform() < keep) {
      mask_[i] = scale;
      y.v[i] *= scale;
    } else {
      y.v[i] = 0.0;
    }
  }
  return y;
}

Tensor Dropout::backward(const Tensor& grad_out) {
  if (!active_) return grad_out;
  Tensor gx = grad_out;
  for (size_t i = 0; i < gx.v.size(); ++i) gx.v[i] *= mask_[i];
  return gx;
}

// --- GradientReversal -------------------------------------------------------------

Tensor GradientReversal::forward(const Tensor& x, bool, Rng*) { return x; }

Tensor GradientReversal::backward(const Tensor& grad_out) {
  Tensor gx = grad_out;
  for (auto& v : gx.v) v *= -lambda_;
  return gx;
}

// --- Softmax ---------------------------------------------------------------------

Tensor Softmax::forward(const Tensor& x, bool, Rng*) {
  Tensor y = x;
  int n = x.rows();
  int k = static_cast<int>(x.stride0());
  for (int i = 0; i < n; ++i) {
    double* row = y.row(i);
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < k; ++j) row[j] /= sum;
  }
  y_ = y;
  return y;
}

Tensor Softmax::backward(const Tensor& grad_out) {
  Tensor gx = grad_out;
  int n = grad_out.rows();
  int k = static_cast<int>(grad_out.stride0());
  for (int i = 0; i < n; ++i) {
    const double* g = grad_out.row(i);
    const double* p = y_.row(i);
    double dot = 0.0;
    for (int j = 0; j < k; ++j) dot += g[j] * p[j];
    double* out = gx.row(i);
    for (int j = 0; j < k; ++j) out[j] = p[j] * (g[j] - dot);
  }
  return gx;
}

// --- Sequential / Residual ----------------------------------------------------------

Tensor Sequential::forward(const Tensor& x, bool train, Rng* rng) {
  Tensor cur = x;
  for (auto& l : layers_) cur = l->forward(cur, train, rng);
  return cur;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor cur = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
  return cur;
}

std::vector<Param*> Sequential::params() {
  std::vector<Param*> out;
  for (auto& l : layers_)
    for (Param* p : l->params()) out.push_back(p);
  return out;
}

LayerPtr Sequential::clone() const {
  auto c = std::make_unique<Sequential>();
  for (const auto& l : layers_) c->add(l->clone());
  return c;
}

Tensor Residual::forward(const Tensor& x, bool train, Rng* rng) {
  Tensor y = body_->forward(x, train, rng);
  if (y.v.size() != x.v.size()) throw NumericalError("residual: shape mismatch");
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += x.v[i];
  return y;
}

Tensor Residual::backward(const Tensor& grad_out) {
  Tensor gx = body_->backward(grad_out);
  for (size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += grad_out.v[i];
  return gx;
}

// --- losses -----------------------------------------------------------------------

Tensor softmax_rows(const Tensor& logits) {
  Softmax sm;
  return sm.forward(logits, false, nullptr);
}

LossGrad softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  int n = logits.rows();
  int k = static_cast<int>(logits.stride0());
  Tensor probs = softmax_rows(logits);
  LossGrad out;
  out.loss = 0.0;
  out.grad = probs;
  double inv_n = 1.0 / std::max(1, n);
  for (int i = 0; i < n; ++i) {
    const double* p = probs.row(i);
    int y = labels[static_cast<size_t>(i)];
    out.loss -= std::log(std::max(p[y], 1e-300));
    double* g = out.grad.row(i);
    for (int j = 0; j < k; ++j) g[j] *= inv_n;
    g[y] -= inv_n;
  }
  out.loss *= inv_n;
  return out;
}

LossGrad bce_with_logits(const Tensor& scores, const std::vector<double>& labels) {
  LossGrad out;
  out.loss = 0.0;
  out.grad = scores;
  size_t n = scores.v.size();
  double inv_n = 1.0 / static_cast<double>(std::max<size_t>(1, n));
  for (size_t i = 0; i < n; ++i) {
    double s = scores.v[i];
    double y = labels[i];
    // log(1 + e^-|s|) + max(s, 0) - s*y, the overflow-safe form
    out.loss += std::log1p(std::exp(-std::abs(s))) + std::max(s, 0.0) - s * y;
    double sig = 1.0 / (1.0 + std::exp(-s));
    out.grad.v[i] = (sig - y) * inv_n;
  }
  out.loss *= inv_n;
  return out;
}

// --- parameter utilities -------------------------------------------------------------

void zero_grads(const std::vector<Param*>& params) {
  for (Param* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
}

int64_t param_count(const std::vector<Param*>& params, bool trainable_only) {
  int64_t n = 0;
  for (Param* p : params)
    if (!trainable_only || p->trainable) n += static_cast<int64_t>(p->value.size());
  return n;
}

double global_grad_norm(const std::vector<Param*>& params) {
  double sq = 0.0;
  for (Param* p : params) {
    if (!p->trainable) continue;
    for (double g : p->grad) sq += g * g;
  }
  return std::sqrt(sq);
}

void clip_global_norm(const std::vector<Param*>& params, double max_norm) {
  double norm = global_grad_norm(params);
  if (norm <= max_norm || norm == 0.0) return;
  double scale = max_norm / norm;
  for (Param* p : params) {
    if (!p->trainable) continue;
    for (double& g : p->grad) g *= scale;
  }
}

void append_params(std::string& out, const std::vector<Param*>& params) {
  io::put_u32(out, static_cast<uint32_t>(params.size()));
  for (const Param* p : params) {
    io::put_u32(out, static_cast<uint32_t>(p->name.size()));
    out += p->name;
    out.push_back(static_cast<char>(p->kind));
    out.push_back(p->trainable ? 1 : 0);
    io::put_u32(out, static_cast<uint32_t>(p->dims.size()));
    for (int d : p->dims) io::put_u32(out, static_cast<uint32_t>(d));
  }
  for (const Param* p : params)
    for (double v : p->value) io::put_f32(out, static_cast<float>(v));
}

void read_params(const std::string& in, size_t& off, const std::vector<Param*>& params) {
  uint32_t np = io::get_u32(in, off);
  if (np != params.size())
    throw IoError("parameter index count mismatch: file has " + std::to_string(np) +
                  ", model has " + std::to_string(params.size()));
  for (Param* p : params) {
    uint32_t nlen = io::get_u32(in, off);
    std::string name = in.substr(off, nlen);
    off += nlen;
    if (name != p->name)
      throw IoError("parameter index order mismatch: " + name + " vs " + p->name);
    off += 2;  // kind, trainable flags are informational
    uint32_t nd = io::get_u32(in, off);
    int64_t count = 1;
    for (uint32_t i = 0; i < nd; ++i) count *= io::get_u32(in, off);
    if (count != static_cast<int64_t>(p->value.size()))
      throw IoError("parameter size mismatch: " + name);
  }
  for (Param* p : params)
    for (double& v : p->value) v = io::get_f32(in, off);
}

// --- Optimizer -------------------------------------------------------------------------

Optimizer::Optimizer(OptimConfig cfg, std::vector<Param*> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  vmax_.resize(params_.size());
  t_.assign(params_.size(), 0);
  for (size_t i = 0; i < params_.size(); ++i) {
    size_t n = params_[i]->value.size();
    m_[i].assign(n, 0.0);
    v_[i].assign(n, 0.0);
    if (cfg_.amsgrad) vmax_[i].assign(n, 0.0);
  }
}

void Optimizer::step(double lr_scale, const std::vector<Param*>* subset) {
  double lr = cfg_.lr * lr_scale;
  for (size_t i = 0; i < params_.size(); ++i) {
    Param* p = params_[i];
    if (!p->trainable) continue;
    if (subset != nullptr &&
        std::find(subset->begin(), subset->end(), p) == subset->end())
      continue;
    ++t_[i];
    if (cfg_.kind == "sgd") {
      for (size_t k = 0; k < p->value.size(); ++k) {
        m_[i][k] = cfg_.momentum * m_[i][k] + p->grad[k];
        p->value[k] -= lr * m_[i][k];
      }
      continue;
    }
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_[i]));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_[i]));
    for (size_t k = 0; k < p->value.size(); ++k) {
      double g = p->grad[k];
      m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g;
      v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g * g;
      double mhat = m_[i][k] / bc1;
      double vhat = v_[i][k] / bc2;
      if (cfg_.amsgrad) {
        vmax_[i][k] = std::max(vmax_[i][k], vhat);
        vhat = vmax_[i][k];
      }
      p->value[k] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace arcgen::nn
