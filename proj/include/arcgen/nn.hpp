#pragma once

#include <memory>
#include <string>
#include <vector>

#include "arcgen/rng.hpp"

namespace arcgen::nn {

struct Tensor {
  std::vector<int> dims;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> d) : dims(std::move(d)) {
    v.assign(static_cast<size_t>(count(dims)), 0.0);
  }
  static int64_t count(const std::vector<int>& dims) {
    int64_t n = 1;
    for (int d : dims) n *= d;
    return n;
  }
  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int rows() const { return dims.empty() ? 0 : dims[0]; }
  // elements per leading-dim slice
  int64_t stride0() const { return dims.empty() ? 0 : size() / dims[0]; }
  double* row(int i) { return v.data() + static_cast<size_t>(i) * stride0(); }
  const double* row(int i) const { return v.data() + static_cast<size_t>(i) * stride0(); }
};

enum class ParamKind { weight, bias, norm };

struct Param {
  std::string name;
  ParamKind kind = ParamKind::weight;
  bool trainable = true;
  std::vector<int> dims;
  std::vector<double> value;
  std::vector<double> grad;

  void init(std::string n, ParamKind k, std::vector<int> d, bool train = true) {
    name = std::move(n);
    kind = k;
    trainable = train;
    dims = std::move(d);
    value.assign(static_cast<size_t>(Tensor::count(dims)), 0.0);
    grad.assign(value.size(), 0.0);
  }
};

class Layer {
public:
  virtual ~Layer() = default;
  // Caches whatever backward() needs; one in-flight forward per layer instance.
  virtual Tensor forward(const Tensor& x, bool train, Rng* rng) = 0;
  // Accumulates parameter gradients and returns the input gradient.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<Param*> params() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual std::string kind() const = 0;
};

using LayerPtr = std::unique_ptr<Layer>;

class Dense : public Layer {
public:
  Dense(int in, int out, std::string name = "dense");
  Tensor forward(const Tensor& x, bool train, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override { return {&w_, &b_}; }
  LayerPtr clone() const override;
  std::string kind() const override { return "dense"; }
  int in_dim() const { return in_; }
  int out_dim() const { return out_; }
  Param& weight() { return w_; }
  Param& bias() { return b_; }

private:
  int in_, out_;
  Param w_, b_;
  Tensor x_;
};

class Conv2D : public Layer {
public:
  Conv2D(int in_c, int out_c, int ksize, int pad, std::string name = "conv");
  Tensor forward(const Tensor& x, bool train, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override { return {&w_, &b_}; }
  LayerPtr clone() const override;
  std::string kind() const override { return "conv"; }

private:
  int in_c_, out_c_, k_, pad_;
  Param w_, b_;
  Tensor x_;
};

class DepthwiseConv2D : public Layer {
public:
  DepthwiseConv2D(int channels, int ksize, int pad, std::string name = "dwconv");
  Tensor forward(const Tensor& x, bool train, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override { return {&w_, &b_}; }
  LayerPtr clone() const override;
  std::string kind() const override { return "dwconv"; }

private:
  int c_, k_, pad_;
  Param w_, b_;
  Tensor x_;
};

class MaxPool2D : public Layer {
public:
  explicit MaxPool2D(int window = 2) : win_(window) {}
  Tensor forward(const Tensor& x, bool train, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  LayerPtr clone() const override { return std::make_unique<MaxPool2D>(win_); }
  std::string kind() const override { return "maxpool"; }

private:
  int win_;
  std::vector<int64_t> argmax_;
  std::vector<int> in_dims_;
};

class ReLU : public Layer {
public:
  Tensor forward(const Tensor& x, bool train, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  LayerPtr clone() const override { return std::make_unique<ReLU>(); }
  std::string kind() const override { return "relu"; }

private:
  std::vector<uint8_t> mask_;
};

class Flatten : public Layer {
public:
  Tensor forward(const Tensor& x, bool train, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  LayerPtr clone() const override { return std::make_unique<Flatten>(); }
  std::string kind() const override { return "flatten"; }

private:
  std::vector<int> in_dims_;
};

// Channels-last batch normalization over (n, h, w) per channel; also accepts
// (n, d) input, normalizing per feature.
class BatchNorm : public Layer {
public:
  explicit BatchNorm(int channels, double momentum = 0.1, double eps = 1e-5,
                     std::string name = "bn");
  Tensor forward(const Tensor& x, bool train, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override { return {&gamma_, &beta_, &rmean_, &rvar_}; }
  LayerPtr clone() const override;
  std::string kind() const override { return "batchnorm"; }

private:
  int c_;
  double momentum_, eps_;
  Param gamma_, beta_, rmean_, rvar_;  // rmean/rvar are non-trainable state
  Tensor xhat_;
  std::vector<double> inv_std_;
  bool train_pass_ = false;
};

class Dropout : public Layer {
public:
  explicit Dropout(double rate) : rate_(rate) {}
  Tensor forward(const Tensor& x, bool train, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  LayerPtr clone() const override { return std::make_unique<Dropout>(rate_); }
  std::string kind() const override { return "dropout"; }
  double rate() const { return rate_; }

private:
  double rate_;
  std::vector<double> mask_;
  bool active_ = false;
};

// Identity in the forward pass; multiplies the incoming gradient by -lambda
// in the backward pass.
class GradientReversal : public Layer {
public:
  explicit GradientReversal(double lambda = 1.0) : lambda_(lambda) {}
  Tensor forward(const Tensor& x, bool train, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  LayerPtr clone() const override { return std::make_unique<GradientReversal>(lambda_); }
  std::string kind() const override { return "grl"; }
  void set_lambda(double l) { lambda_ = l; }
  double lambda() const { return lambda_; }

private:
  double lambda_;
};

class Softmax : public Layer {
public:
  Tensor forward(const Tensor& x, bool train, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  LayerPtr clone() const override { return std::make_unique<Softmax>(); }
  std::string kind() const override { return "softmax"; }

private:
  Tensor y_;
};

class Sequential : public Layer {
public:
  Sequential() = default;
  explicit Sequential(std::vector<LayerPtr> layers) : layers_(std::move(layers)) {}
  void add(LayerPtr layer) { layers_.push_back(std::move(layer)); }
  Tensor forward(const Tensor& x, bool train, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override;
  LayerPtr clone() const override;
  std::string kind() const override { return "sequential"; }
  size_t depth() const { return layers_.size(); }
  Layer& layer(size_t i) { return *layers_[i]; }

private:
  std::vector<LayerPtr> layers_;
};

// y = x + body(x); input and output shapes must agree.
class Residual : public Layer {
public:
  explicit Residual(LayerPtr body) : body_(std::move(body)) {}
  Tensor forward(const Tensor& x, bool train, Rng* rng) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override { return body_->params(); }
  LayerPtr clone() const override { return std::make_unique<Residual>(body_->clone()); }
  std::string kind() const override { return "residual"; }

private:
  LayerPtr body_;
};

// --- losses -----------------------------------------------------------------

struct LossGrad {
  double loss;
  Tensor grad;  // d loss / d input of the loss
};

// Mean softmax cross-entropy over the batch; grad is w.r.t. the logits.
LossGrad softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Per-element mean binary cross-entropy with logits; labels in {0, 1}.
LossGrad bce_with_logits(const Tensor& scores, const std::vector<double>& labels);

Tensor softmax_rows(const Tensor& logits);

// --- parameter utilities -----------------------------------------------------

void zero_grads(const std::vector<Param*>& params);
int64_t param_count(const std::vector<Param*>& params, bool trainable_only = true);
// Parameter index (name, kind, dims) followed by a little-endian float32
// payload; the encoding shared by the weight and detector-state files.
void append_params(std::string& out, const std::vector<Param*>& params);
void read_params(const std::string& in, size_t& off, const std::vector<Param*>& params);
double global_grad_norm(const std::vector<Param*>& params);
// Scales all gradients so their global L2 norm is at most max_norm.
void clip_global_norm(const std::vector<Param*>& params, double max_norm);
void kaiming_init(Param& w, int fan_in, Rng& rng);

// --- optimizers ---------------------------------------------------------------

struct OptimConfig {
  std::string kind = "adam";  // "adam" (optionally amsgrad) or "sgd"
  double lr = 1e-3;
  double momentum = 0.9;    // sgd
  double beta1 = 0.9;       // adam
  double beta2 = 0.999;     // adam
  double eps = 1e-8;        // adam
  bool amsgrad = false;
};

class Optimizer {
public:
  Optimizer(OptimConfig cfg, std::vector<Param*> params);
  // lr_scale multiplies cfg.lr (used for schedules). When subset is given,
  // only those parameters move; moment state and step counts of the others
  // stay put, matching per-parameter optimizer semantics.
  void step(double lr_scale = 1.0, const std::vector<Param*>* subset = nullptr);
  const std::vector<Param*>& params() const { return params_; }
  OptimConfig& config() { return cfg_; }

private:
  OptimConfig cfg_;
  std::vector<Param*> params_;
  std::vector<std::vector<double>> m_, v_, vmax_;
  std::vector<int64_t> t_;  // per-parameter step count
};

}  // namespace arcgen::nn
