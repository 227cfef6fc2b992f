#include "bpshift/models.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "bpshift/error.hpp"

namespace bpshift {

using nlohmann::json;

const char* arch_name(ArchKind k) {
    switch (k) {
        case ArchKind::Mlp: return "mlp";
        case ArchKind::Cnn: return "cnn";
        case ArchKind::ResNet: return "resnet";
        case ArchKind::Encoder: return "encoder";
    }
    return "?";
}

ArchKind parse_arch(const std::string& s) {
    if (s == "mlp") return ArchKind::Mlp;
    if (s == "cnn") return ArchKind::Cnn;
    if (s == "resnet") return ArchKind::ResNet;
    if (s == "encoder") return ArchKind::Encoder;
    raise(Err::ConfigError, "unknown arch '" + s + "', expected one of {mlp, cnn, resnet, encoder}");
}

void ModelSpec::validate() const {
    if (input_channels == 0) raise(Err::InvalidSpec, "input needs at least one channel");
    if (input_length < 8) raise(Err::InvalidSpec, "input length must be at least 8 samples");
    if (mlp_width == 0) raise(Err::InvalidSpec, "mlp width must be positive");
    if (dropout < 0.0 || dropout >= 1.0) raise(Err::InvalidSpec, "dropout must be in [0, 1)");
    if (include_initial_bp && aux_dim == 0)
        raise(Err::InvalidSpec, "initial-BP conditioning needs an aux slot");
    for (std::size_t w : conv_widths)
        if (w == 0) raise(Err::InvalidSpec, "conv widths must be positive");
    for (std::size_t k : kernel_sizes) {
        if (k == 0 || k % 2 == 0) raise(Err::InvalidSpec, "conv kernels must be odd");
        if (k > input_length) raise(Err::InvalidSpec, "conv kernel longer than the input");
    }
}

std::string ModelSpec::to_json() const {
    json j;
    j["arch"] = arch_name(kind);
    j["input_channels"] = input_channels;
    j["input_length"] = input_length;
    j["aux_dim"] = aux_dim;
    j["include_initial_bp"] = include_initial_bp;
    j["conv_widths"] = conv_widths;
    j["kernel_sizes"] = kernel_sizes;
    j["mlp_width"] = mlp_width;
    j["dropout"] = dropout;
    j["init_seed"] = init_seed;
    return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
    const json j = json::parse(text);
    ModelSpec s;
    s.kind = parse_arch(j.at("arch").get<std::string>());
    s.input_channels = j.at("input_channels").get<std::size_t>();
    s.input_length = j.at("input_length").get<std::size_t>();
    s.aux_dim = j.at("aux_dim").get<std::size_t>();
    s.include_initial_bp = j.at("include_initial_bp").get<bool>();
    const auto w = j.at("conv_widths").get<std::vector<std::size_t>>();
    const auto k = j.at("kernel_sizes").get<std::vector<std::size_t>>();
    if (w.size() != 3 || k.size() != 3) raise(Err::InvalidSpec, "expected three conv blocks");
    std::copy(w.begin(), w.end(), s.conv_widths.begin());
    std::copy(k.begin(), k.end(), s.kernel_sizes.begin());
    s.mlp_width = j.at("mlp_width").get<std::size_t>();
    s.dropout = j.at("dropout").get<double>();
    s.init_seed = j.at("init_seed").get<std::uint64_t>();
    s.validate();
    return s;
}

void Model::check_input(const Tensor& x, const std::vector<double>& aux) const {
    require_shape(x, {spec_.input_channels, spec_.input_length}, "model input");
    if (aux.size() != spec_.aux_dim)
        raise(Err::ShapeMismatch, "aux vector: expected " + std::to_string(spec_.aux_dim) +
                                      " scalars, got " + std::to_string(aux.size()));
}

ChangeLabel predict(const Tensor& logits) {
    require_shape(logits, {3}, "logits");
    std::size_t arg = 0;
    for (std::size_t i = 1; i < 3; ++i)
        if (logits(i) > logits(arg)) arg = i;
    return static_cast<ChangeLabel>(static_cast<int>(arg));
}

namespace {

Tensor concat_vec(const Tensor& a, const Tensor& b) {
    Tensor y({a.numel() + b.numel()});
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(a.numel()));
    return y;
}

void split_vec(const Tensor& g, std::size_t head, Tensor& gh, Tensor& gt) {
    gh = Tensor({head});
    gt = Tensor({g.numel() - head});
    std::copy(g.data.begin(), g.data.begin() + static_cast<std::ptrdiff_t>(head), gh.data.begin());
    std::copy(g.data.begin() + static_cast<std::ptrdiff_t>(head), g.data.end(), gt.data.begin());
}

// Broadcast each aux value as one constant channel appended below x.
Tensor concat_channels(const Tensor& x, const Tensor& v) {
    const std::size_t c = x.dim(0), len = x.dim(1), a = v.numel();
    Tensor y({c + a, len});
    std::copy(x.data.begin(), x.data.end(), y.data.begin());
    for (std::size_t i = 0; i < a; ++i) {
        double* row = y.row(c + i);
        for (std::size_t l = 0; l < len; ++l) row[l] = v(i);
    }
    return y;
}

// Constant channels sum their gradient over time.
void split_channels(const Tensor& g, std::size_t cx, Tensor& gx, Tensor& gv) {
    const std::size_t len = g.dim(1), a = g.dim(0) - cx;
    gx = Tensor({cx, len});
    std::copy(g.data.begin(), g.data.begin() + static_cast<std::ptrdiff_t>(cx * len), gx.data.begin());
    gv = Tensor({a});
    for (std::size_t i = 0; i < a; ++i) {
        const double* row = g.row(cx + i);
        double acc = 0.0;
        for (std::size_t l = 0; l < len; ++l) acc += row[l];
        gv(i) = acc;
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) raise(Err::ShapeMismatch, "residual add with mismatched shapes");
    Tensor y(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) y.data[i] = a.data[i] + b.data[i];
    return y;
}

// Learned linear map of the aux vector feeding one block. Weights start at
// zero, so an untouched conditioned model computes exactly what its
// unconditioned twin computes.
struct Inject {
    std::unique_ptr<Dense> map;

    void build(const std::string& name, std::size_t aux_dim) {
        if (aux_dim > 0) map = std::make_unique<Dense>(name, aux_dim, aux_dim);
    }
    bool active() const { return static_cast<bool>(map); }
    Tensor apply(const Tensor& aux, RunCtx& ctx) { return map->forward(aux, ctx); }
    void backprop(const Tensor& g) { map->backward(g); }
    void collect(std::vector<Param*>& out) {
        if (map) map->collect(out);
    }
};

class MlpModel final : public Model {
public:
    explicit MlpModel(ModelSpec s) : Model(std::move(s)) {
        const std::size_t a = spec_.aux_dim;
        const std::size_t w = spec_.mlp_width;
        std::size_t in = spec_.input_channels * spec_.input_length;
        for (std::size_t b = 0; b < 3; ++b) {
            const std::string tag = "mlp.fc" + std::to_string(b);
            inj_[b].build("mlp.inj" + std::to_string(b), a);
            fc_[b] = std::make_unique<Dense>(tag, in + a, w);
            act_[b] = std::make_unique<PReLU>("mlp.act" + std::to_string(b), w);
            drop_[b] = std::make_unique<Dropout>(spec_.dropout);
            in = w;
        }
        inj_[3].build("mlp.inj3", a);
        head_ = std::make_unique<Dense>("mlp.head", w + a, 3);

        for (auto& fc : fc_) init_he_uniform(fc->weight(), fc->fan_in(), spec_.init_seed);
        init_he_uniform(head_->weight(), head_->fan_in(), spec_.init_seed);

        for (auto& fc : fc_) fc->collect(params_.params);
        for (auto& act : act_) act->collect(params_.params);
        head_->collect(params_.params);
        for (auto& inj : inj_) inj.collect(params_.params);
    }

    Tensor forward(const Tensor& x, const std::vector<double>& aux, RunCtx& ctx) override {
        check_input(x, aux);
        aux_in_ = Tensor::vec(aux);
        Tensor h = flat_.forward(x, ctx);
        for (std::size_t b = 0; b < 3; ++b) {
            if (inj_[b].active()) h = concat_vec(h, inj_[b].apply(aux_in_, ctx));
            h = drop_[b]->forward(act_[b]->forward(fc_[b]->forward(h, ctx), ctx), ctx);
        }
        if (inj_[3].active()) h = concat_vec(h, inj_[3].apply(aux_in_, ctx));
        return head_->forward(h, ctx);
    }

    Tensor backward(const Tensor& dlogits) override {
        Tensor g = head_->backward(dlogits);
        if (inj_[3].active()) {
            Tensor gh, ga;
            split_vec(g, g.numel() - spec_.aux_dim, gh, ga);
            inj_[3].backprop(ga);
            g = std::move(gh);
        }
        for (std::size_t b = 3; b-- > 0;) {
            g = fc_[b]->backward(act_[b]->backward(drop_[b]->backward(g)));
            if (inj_[b].active()) {
                Tensor gh, ga;
                split_vec(g, g.numel() - spec_.aux_dim, gh, ga);
                inj_[b].backprop(ga);
                g = std::move(gh);
            }
        }
        return flat_.backward(g);
    }

    LayerCounts layer_counts() const override { return {4, 0}; }

private:
    Flatten flat_;
    std::array<std::unique_ptr<Dense>, 3> fc_;
    std::array<std::unique_ptr<PReLU>, 3> act_;
    std::array<std::unique_ptr<Dropout>, 3> drop_;
    std::array<Inject, 4> inj_;
    std::unique_ptr<Dense> head_;
    Tensor aux_in_;
};

// conv -> instance norm -> prelu, shared by the three convolutional trunks.
struct ConvBlock {
    std::unique_ptr<Conv1d> conv;
    std::unique_ptr<InstanceNorm> norm;
    std::unique_ptr<PReLU> act;
    std::unique_ptr<Dropout> drop; // encoder only
    Inject inj;

    void build(const std::string& tag, std::size_t cin, std::size_t cout, std::size_t kernel,
               std::size_t aux_dim, double dropout_rate, bool with_dropout, std::uint64_t seed) {
        inj.build(tag + ".inj", aux_dim);
        conv = std::make_unique<Conv1d>(tag + ".conv", cin + aux_dim, cout, kernel);
        norm = std::make_unique<InstanceNorm>(tag + ".norm", cout);
        act = std::make_unique<PReLU>(tag + ".act", cout);
        if (with_dropout) drop = std::make_unique<Dropout>(dropout_rate);
        init_he_uniform(conv->weight(), conv->fan_in(), seed);
    }

    Tensor forward(const Tensor& x, const Tensor& aux, RunCtx& ctx) {
        Tensor h = inj.active() ? concat_channels(x, inj.apply(aux, ctx)) : x;
        h = act->forward(norm->forward(conv->forward(h, ctx), ctx), ctx);
        return drop ? drop->forward(h, ctx) : std::move(h);
    }

    Tensor backward(const Tensor& gy, std::size_t cin) {
        Tensor g = drop ? drop->backward(gy) : gy;
        g = conv->backward(norm->backward(act->backward(g)));
        if (inj.active()) {
            Tensor gx, ga;
            split_channels(g, cin, gx, ga);
            inj.backprop(ga);
            return gx;
        }
        return g;
    }

    void collect(std::vector<Param*>& out) {
        conv->collect(out);
        norm->collect(out);
        act->collect(out);
        inj.collect(out);
    }
};

class CnnModel final : public Model {
public:
    explicit CnnModel(ModelSpec s) : Model(std::move(s)) {
        std::size_t cin = spec_.input_channels;
        for (std::size_t b = 0; b < 3; ++b) {
            block_[b].build("cnn.block" + std::to_string(b), cin, spec_.conv_widths[b],
                            spec_.kernel_sizes[b], spec_.aux_dim, 0.0, false, spec_.init_seed);
            cin_[b] = cin;
            cin = spec_.conv_widths[b];
        }
        inj_head_.build("cnn.head.inj", spec_.aux_dim);
        head_ = std::make_unique<Dense>("cnn.head", cin + spec_.aux_dim, 3);
        init_he_uniform(head_->weight(), head_->fan_in(), spec_.init_seed);

        for (auto& b : block_) b.collect(params_.params);
        head_->collect(params_.params);
        inj_head_.collect(params_.params);
    }

    Tensor forward(const Tensor& x, const std::vector<double>& aux, RunCtx& ctx) override {
        check_input(x, aux);
        aux_in_ = Tensor::vec(aux);
        Tensor h = x;
        for (auto& b : block_) h = b.forward(h, aux_in_, ctx);
        h = gap_.forward(h, ctx);
        if (inj_head_.active()) h = concat_vec(h, inj_head_.apply(aux_in_, ctx));
        return head_->forward(h, ctx);
    }

    Tensor backward(const Tensor& dlogits) override {
        Tensor g = head_->backward(dlogits);
        if (inj_head_.active()) {
            Tensor gh, ga;
            split_vec(g, g.numel() - spec_.aux_dim, gh, ga);
            inj_head_.backprop(ga);
            g = std::move(gh);
        }
        g = gap_.backward(g);
        for (std::size_t b = 3; b-- > 0;) g = block_[b].backward(g, cin_[b]);
        return g;
    }

    LayerCounts layer_counts() const override { return {4, 3}; }

private:
    std::array<ConvBlock, 3> block_;
    std::array<std::size_t, 3> cin_{};
    GlobalAvgPool gap_;
    Inject inj_head_;
    std::unique_ptr<Dense> head_;
    Tensor aux_in_;
};

// Three conv stages with the identity shortcut joined before the last
// activation. The aux channels feed only the first conv; the shortcut
// carries the unaugmented input.
struct ResidualBlock {
    std::unique_ptr<Conv1d> c1, c2, c3, proj;
    std::unique_ptr<InstanceNorm> n1, n2, n3;
    std::unique_ptr<PReLU> a1, a2, a3;
    Inject inj;
    std::size_t cin = 0, aux_dim = 0;

    int build(const std::string& tag, std::size_t cin_, std::size_t width,
              const std::array<std::size_t, 3>& kernels, std::size_t aux_dim_, std::uint64_t seed) {
        cin = cin_;
        aux_dim = aux_dim_;
        inj.build(tag + ".inj", aux_dim);
        c1 = std::make_unique<Conv1d>(tag + ".conv1", cin + aux_dim, width, kernels[0]);
        c2 = std::make_unique<Conv1d>(tag + ".conv2", width, width, kernels[1]);
        c3 = std::make_unique<Conv1d>(tag + ".conv3", width, width, kernels[2]);
        n1 = std::make_unique<InstanceNorm>(tag + ".norm1", width);
        n2 = std::make_unique<InstanceNorm>(tag + ".norm2", width);
        n3 = std::make_unique<InstanceNorm>(tag + ".norm3", width);
        a1 = std::make_unique<PReLU>(tag + ".act1", width);
        a2 = std::make_unique<PReLU>(tag + ".act2", width);
        a3 = std::make_unique<PReLU>(tag + ".act3", width);
        int convs = 3;
        if (cin != width) {
            proj = std::make_unique<Conv1d>(tag + ".proj", cin, width, 1);
            init_he_uniform(proj->weight(), proj->fan_in(), seed);
            ++convs;
        }
        init_he_uniform(c1->weight(), c1->fan_in(), seed);
        init_he_uniform(c2->weight(), c2->fan_in(), seed);
        init_he_uniform(c3->weight(), c3->fan_in(), seed);
        return convs;
    }

    Tensor forward(const Tensor& x, const Tensor& aux, RunCtx& ctx) {
        Tensor h = inj.active() ? concat_channels(x, inj.apply(aux, ctx)) : x;
        h = a1->forward(n1->forward(c1->forward(h, ctx), ctx), ctx);
        h = a2->forward(n2->forward(c2->forward(h, ctx), ctx), ctx);
        h = n3->forward(c3->forward(h, ctx), ctx);
        const Tensor s = proj ? proj->forward(x, ctx) : x;
        return a3->forward(add(h, s), ctx);
    }

    Tensor backward(const Tensor& gy) {
        const Tensor g = a3->backward(gy);
        Tensor gh = c1->backward(n1->backward(a1->backward(
            c2->backward(n2->backward(a2->backward(c3->backward(n3->backward(g))))))));
        Tensor gx;
        if (inj.active()) {
            Tensor ga;
            split_channels(gh, cin, gx, ga);
            inj.backprop(ga);
        } else {
            gx = std::move(gh);
        }
        const Tensor gs = proj ? proj->backward(g) : g;
        return add(gx, gs);
    }

    void collect(std::vector<Param*>& out) {
        c1->collect(out);
        n1->collect(out);
        a1->collect(out);
        c2->collect(out);
        n2->collect(out);
        a2->collect(out);
        c3->collect(out);
        n3->collect(out);
        a3->collect(out);
        if (proj) proj->collect(out);
        inj.collect(out);
    }
};

class ResNetModel final : public Model {
public:
    explicit ResNetModel(ModelSpec s) : Model(std::move(s)) {
        stem_.build("res.stem", spec_.input_channels, spec_.conv_widths[0], spec_.kernel_sizes[0],
                    spec_.aux_dim, 0.0, false, spec_.init_seed);
        conv_count_ = 1;
        std::size_t cin = spec_.conv_widths[0];
        for (std::size_t b = 0; b < 3; ++b) {
            conv_count_ += block_[b].build("res.block" + std::to_string(b), cin, spec_.conv_widths[b],
                                           spec_.kernel_sizes, spec_.aux_dim, spec_.init_seed);
            cin = spec_.conv_widths[b];
        }
        inj_head_.build("res.head.inj", spec_.aux_dim);
        head_ = std::make_unique<Dense>("res.head", cin + spec_.aux_dim, 3);
        init_he_uniform(head_->weight(), head_->fan_in(), spec_.init_seed);

        stem_.collect(params_.params);
        for (auto& b : block_) b.collect(params_.params);
        head_->collect(params_.params);
        inj_head_.collect(params_.params);
    }

    Tensor forward(const Tensor& x, const std::vector<double>& aux, RunCtx& ctx) override {
        check_input(x, aux);
        aux_in_ = Tensor::vec(aux);
        Tensor h = stem_.forward(x, aux_in_, ctx);
        for (auto& b : block_) h = b.forward(h, aux_in_, ctx);
        h = gap_.forward(h, ctx);
        if (inj_head_.active()) h = concat_vec(h, inj_head_.apply(aux_in_, ctx));
        return head_->forward(h, ctx);
    }

    Tensor backward(const Tensor& dlogits) override {
        Tensor g = head_->backward(dlogits);
        if (inj_head_.active()) {
            Tensor gh, ga;
            split_vec(g, g.numel() - spec_.aux_dim, gh, ga);
            inj_head_.backprop(ga);
            g = std::move(gh);
        }
        g = gap_.backward(g);
        for (std::size_t b = 3; b-- > 0;) g = block_[b].backward(g);
        return stem_.backward(g, spec_.input_channels);
    }

    LayerCounts layer_counts() const override { return {conv_count_ + 1, conv_count_}; }

private:
    ConvBlock stem_;
    std::array<ResidualBlock, 3> block_;
    GlobalAvgPool gap_;
    Inject inj_head_;
    std::unique_ptr<Dense> head_;
    Tensor aux_in_;
    int conv_count_ = 0;
};

class EncoderModel final : public Model {
public:
    explicit EncoderModel(ModelSpec s) : Model(std::move(s)) {
        std::size_t cin = spec_.input_channels;
        for (std::size_t b = 0; b < 3; ++b) {
            block_[b].build("enc.block" + std::to_string(b), cin, spec_.conv_widths[b],
                            spec_.kernel_sizes[b], spec_.aux_dim, spec_.dropout, true, spec_.init_seed);
            cin_[b] = cin;
            cin = spec_.conv_widths[b];
        }
        pool_[0] = std::make_unique<MaxPool1d>(2, 2);
        pool_[1] = std::make_unique<MaxPool1d>(2, 2);
        inj_head_.build("enc.head.inj", spec_.aux_dim);
        head_ = std::make_unique<Dense>("enc.head", cin + spec_.aux_dim, 3);
        init_he_uniform(head_->weight(), head_->fan_in(), spec_.init_seed);

        for (auto& b : block_) b.collect(params_.params);
        head_->collect(params_.params);
        inj_head_.collect(params_.params);
    }

    Tensor forward(const Tensor& x, const std::vector<double>& aux, RunCtx& ctx) override {
        check_input(x, aux);
        aux_in_ = Tensor::vec(aux);
        Tensor h = block_[0].forward(x, aux_in_, ctx);
        h = pool_[0]->forward(h, ctx);
        h = block_[1].forward(h, aux_in_, ctx);
        h = pool_[1]->forward(h, ctx);
        h = block_[2].forward(h, aux_in_, ctx);
        h = attn_.forward(h, ctx);
        if (inj_head_.active()) h = concat_vec(h, inj_head_.apply(aux_in_, ctx));
        return head_->forward(h, ctx);
    }

    Tensor backward(const Tensor& dlogits) override {
        Tensor g = head_->backward(dlogits);
        if (inj_head_.active()) {
            Tensor gh, ga;
            split_vec(g, g.numel() - spec_.aux_dim, gh, ga);
            inj_head_.backprop(ga);
            g = std::move(gh);
        }
        g = attn_.backward(g);
        g = block_[2].backward(g, cin_[2]);
        g = pool_[1]->backward(g);
        g = block_[1].backward(g, cin_[1]);
        g = pool_[0]->backward(g);
        return block_[0].backward(g, cin_[0]);
    }

    LayerCounts layer_counts() const override { return {5, 3}; }

private:
    std::array<ConvBlock, 3> block_;
    std::array<std::size_t, 3> cin_{};
    std::array<std::unique_ptr<MaxPool1d>, 2> pool_;
    SoftmaxAttention attn_;
    Inject inj_head_;
    std::unique_ptr<Dense> head_;
    Tensor aux_in_;
};

} // namespace

std::unique_ptr<Model> build_model(const ModelSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case ArchKind::Mlp: return std::make_unique<MlpModel>(spec);
        case ArchKind::Cnn: return std::make_unique<CnnModel>(spec);
        case ArchKind::ResNet: return std::make_unique<ResNetModel>(spec);
        case ArchKind::Encoder: return std::make_unique<EncoderModel>(spec);
    }
    raise(Err::InvalidSpec, "unhandled architecture");
}

} // namespace bpshift
