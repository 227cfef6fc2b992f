#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bpshift/rng.hpp"
#include "bpshift/tensor.hpp"

namespace bpshift {

// A named trainable tensor with its gradient slot and Adam moments.
struct Param {
    std::string name;
    Tensor value, grad, m, v;

    Param(std::string n, std::vector<std::size_t> shape)
        : name(std::move(n)), value(shape), grad(shape), m(shape), v(std::move(shape)) {}
    void zero_grad() { grad.zero(); }
};

// Forward-pass context. Dropout draws its masks from `rng` in training mode
// and leaves the stream untouched in eval mode, so evaluation is pure.
struct RunCtx {
    bool train = false;
    Rng* rng = nullptr;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, RunCtx& ctx) = 0;
    virtual Tensor backward(const Tensor& gy) = 0;
    virtual void collect(std::vector<Param*>& out) { (void)out; }
};

class Dense : public Layer {
public:
    Dense(std::string name, std::size_t in, std::size_t out);
    Tensor forward(const Tensor& x, RunCtx& ctx) override;
    Tensor backward(const Tensor& gy) override;
    void collect(std::vector<Param*>& out) override;
    std::size_t fan_in() const { return in_; }
    Param& weight() { return w_; }
    Param& bias() { return b_; }

private:
    std::size_t in_, out_;
    Param w_, b_;
    Tensor x_;
};

// 1-D cross-correlation, stride 1, zero padding to keep the length, odd
// kernel centered on the output sample.
class Conv1d : public Layer {
public:
    Conv1d(std::string name, std::size_t cin, std::size_t cout, std::size_t kernel);
    Tensor forward(const Tensor& x, RunCtx& ctx) override;
    Tensor backward(const Tensor& gy) override;
    void collect(std::vector<Param*>& out) override;
    std::size_t fan_in() const { return cin_ * kernel_; }
    std::size_t in_channels() const { return cin_; }
    std::size_t out_channels() const { return cout_; }
    Param& weight() { return w_; }
    Param& bias() { return b_; }

private:
    std::size_t cin_, cout_, kernel_;
    Param w_, b_;
    Tensor x_;
};

// Per-channel normalization over the time axis with population variance and
// trainable gain/shift. eps defaults to 1e-5.
class InstanceNorm : public Layer {
public:
    InstanceNorm(std::string name, std::size_t channels, double eps = 1e-5);
    Tensor forward(const Tensor& x, RunCtx& ctx) override;
    Tensor backward(const Tensor& gy) override;
    void collect(std::vector<Param*>& out) override;

private:
    std::size_t channels_;
    double eps_;
    Param gamma_, beta_;
    Tensor xhat_;
    std::vector<double> inv_std_;
};

// Trainable leaky slope, one per channel (per element for rank-1 inputs).
// Slopes start at 0.25.
class PReLU : public Layer {
public:
    PReLU(std::string name, std::size_t channels);
    Tensor forward(const Tensor& x, RunCtx& ctx) override;
    Tensor backward(const Tensor& gy) override;
    void collect(std::vector<Param*>& out) override;

private:
    std::size_t channels_;
    Param slope_;
    Tensor x_;
};

// Inverted dropout: surviving activations scale by 1/(1-rate) at train time,
// eval is the identity.
class Dropout : public Layer {
public:
    explicit Dropout(double rate);
    Tensor forward(const Tensor& x, RunCtx& ctx) override;
    Tensor backward(const Tensor& gy) override;

private:
    double rate_;
    Tensor mask_;
    bool train_pass_ = false;
};

class MaxPool1d : public Layer {
public:
    MaxPool1d(std::size_t window, std::size_t stride);
    Tensor forward(const Tensor& x, RunCtx& ctx) override;
    Tensor backward(const Tensor& gy) override;

private:
    std::size_t window_, stride_;
    std::vector<std::size_t> argmax_;
    std::vector<std::size_t> in_shape_;
};

class GlobalAvgPool : public Layer {
public:
    Tensor forward(const Tensor& x, RunCtx& ctx) override;
    Tensor backward(const Tensor& gy) override;

private:
    std::vector<std::size_t> in_shape_;
};

// Time attention: per-step scores are channel means, softmax over time, the
// output is the weighted sum of time columns.
class SoftmaxAttention : public Layer {
public:
    Tensor forward(const Tensor& x, RunCtx& ctx) override;
    Tensor backward(const Tensor& gy) override;
    const std::vector<double>& weights() const { return w_; }

private:
    Tensor x_;
    std::vector<double> w_;
};

class Flatten : public Layer {
public:
    Tensor forward(const Tensor& x, RunCtx& ctx) override;
    Tensor backward(const Tensor& gy) override;

private:
    std::vector<std::size_t> in_shape_;
};

Tensor softmax(const Tensor& logits);

// Stabilized negative log-likelihood of the target class; optionally fills
// dlogits with softmax(logits) - onehot(target).
double cross_entropy(const Tensor& logits, int target, Tensor* dlogits = nullptr);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct ParameterSet {
    std::vector<Param*> params;
    long t = 0;

    Param* find(const std::string& name);
    const Param* find(const std::string& name) const;
    std::size_t count_scalars() const;
    void zero_grad();
};

// One bias-corrected Adam update over every parameter; increments t.
void adam_step(ParameterSet& ps, const AdamConfig& cfg);

// He-style uniform fan-in init; the stream is derived from the seed and the
// parameter name, so adding parameters elsewhere never shifts existing draws.
void init_he_uniform(Param& p, std::size_t fan_in, std::uint64_t seed);

// Single-file named-tensor archive: magic "BPNN1", a JSON header describing
// the tensors, then raw little-endian doubles. `meta_json` travels in the
// header untouched.
void save_checkpoint(const std::string& path, const ParameterSet& ps, const std::string& meta_json);
std::string load_checkpoint(const std::string& path, ParameterSet& ps);
std::string read_checkpoint_meta(const std::string& path);

} // namespace bpshift
