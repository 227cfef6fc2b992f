#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "bpshift/labeling.hpp"
#include "bpshift/nn.hpp"

namespace bpshift {

enum class ArchKind { Mlp, Cnn, ResNet, Encoder };

const char* arch_name(ArchKind k);
ArchKind parse_arch(const std::string& s);

struct ModelSpec {
    ArchKind kind = ArchKind::Encoder;
    std::size_t input_channels = 2;
    std::size_t input_length = 875;
    // Scalar side inputs fed through learned linear maps at every block:
    // extracted features and/or the scaled initial BP (always the last slot).
    std::size_t aux_dim = 0;
    bool include_initial_bp = false;
    std::array<std::size_t, 3> conv_widths{64, 64, 64};
    std::array<std::size_t, 3> kernel_sizes{9, 5, 3};
    std::size_t mlp_width = 500;
    double dropout = 0.2;
    std::uint64_t init_seed = 1;

    void validate() const;
    std::string to_json() const;
    static ModelSpec from_json(const std::string& text);
};

// Trunk layer introspection: dense, conv, and attention modules count as
// layers; normalization, activations, pooling, dropout, and the aux
// conditioning maps do not.
struct LayerCounts {
    int layers = 0;
    int conv = 0;
};

class Model {
public:
    virtual ~Model() = default;

    const ModelSpec& spec() const { return spec_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

    // Logits (spike, stable, dip) for one example.
    virtual Tensor forward(const Tensor& x, const std::vector<double>& aux, RunCtx& ctx) = 0;
    // Gradient of the loss w.r.t. the input, accumulating parameter grads.
    virtual Tensor backward(const Tensor& dlogits) = 0;
    virtual LayerCounts layer_counts() const = 0;

protected:
    explicit Model(ModelSpec s) : spec_(std::move(s)) {}

    void check_input(const Tensor& x, const std::vector<double>& aux) const;

    ModelSpec spec_;
    ParameterSet params_;
};

std::unique_ptr<Model> build_model(const ModelSpec& spec);

// Argmax with first-index tie-break, so exact ties resolve in class order
// spike, stable, dip.
ChangeLabel predict(const Tensor& logits);

} // namespace bpshift
