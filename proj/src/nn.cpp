#include "bpshift/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "bpshift/error.hpp"

namespace bpshift {

using nlohmann::json;

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank)
        raise(Err::ShapeMismatch, std::string(what) + ": expected rank " + std::to_string(rank) +
                                      ", got shape " + shape_str(t.shape));
}

} // namespace

// ---- dense ----------------------------------------------------------------

Dense::Dense(std::string name, std::size_t in, std::size_t out)
    : in_(in), out_(out), w_(name + ".w", {out, in}), b_(name + ".b", {out}) {
    if (in == 0 || out == 0) raise(Err::InvalidSpec, "dense layer with a zero dimension");
}

Tensor Dense::forward(const Tensor& x, RunCtx&) {
    require_shape(x, {in_}, "dense input");
    x_ = x;
    Tensor y({out_});
    for (std::size_t i = 0; i < out_; ++i) {
        const double* wr = w_.value.row(i);
        double acc = b_.value(i);
        for (std::size_t j = 0; j < in_; ++j) acc += wr[j] * x.data[j];
        y(i) = acc;
    }
    return y;
}

Tensor Dense::backward(const Tensor& gy) {
    require_shape(gy, {out_}, "dense gradient");
    Tensor dx({in_});
    for (std::size_t i = 0; i < out_; ++i) {
        const double g = gy(i);
        b_.grad(i) += g;
        double* dwr = w_.grad.row(i);
        const double* wr = w_.value.row(i);
        for (std::size_t j = 0; j < in_; ++j) {
            dwr[j] += g * x_.data[j];
            dx(j) += wr[j] * g;
        }
    }
    return dx;
}

void Dense::collect(std::vector<Param*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
}

// ---- conv1d ---------------------------------------------------------------

Conv1d::Conv1d(std::string name, std::size_t cin, std::size_t cout, std::size_t kernel)
    : cin_(cin), cout_(cout), kernel_(kernel), w_(name + ".w", {cout, cin, kernel}),
      b_(name + ".b", {cout}) {
    if (cin == 0 || cout == 0) raise(Err::InvalidSpec, "conv layer with a zero channel count");
    if (kernel % 2 == 0 || kernel == 0) raise(Err::InvalidSpec, "conv kernel must be odd");
}

Tensor Conv1d::forward(const Tensor& x, RunCtx&) {
    require_rank(x, 2, "conv input");
    if (x.dim(0) != cin_)
        raise(Err::ShapeMismatch, "conv input channels: expected " + std::to_string(cin_) + ", got " +
                                      std::to_string(x.dim(0)));
    x_ = x;
    const std::size_t len = x.dim(1);
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel_ / 2);
    Tensor y({cout_, len});
    for (std::size_t co = 0; co < cout_; ++co) {
        double* yr = y.row(co);
        const double bias = b_.value(co);
        for (std::size_t l = 0; l < len; ++l) yr[l] = bias;
        for (std::size_t ci = 0; ci < cin_; ++ci) {
            const double* xr = x.row(ci);
            for (std::size_t k = 0; k < kernel_; ++k) {
                const double w = w_.value(co, ci, k);
                const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - pad;
                const std::size_t lo = off < 0 ? static_cast<std::size_t>(-off) : 0;
                const std::size_t hi = off > 0 ? len - static_cast<std::size_t>(off) : len;
                for (std::size_t l = lo; l < hi; ++l)
                    yr[l] += w * xr[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(l) + off)];
            }
        }
    }
    return y;
}

Tensor Conv1d::backward(const Tensor& gy) {
    require_shape(gy, {cout_, x_.dim(1)}, "conv gradient");
    const std::size_t len = x_.dim(1);
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel_ / 2);
    Tensor dx({cin_, len});
    for (std::size_t co = 0; co < cout_; ++co) {
        const double* gr = gy.row(co);
        double acc_b = 0.0;
        for (std::size_t l = 0; l < len; ++l) acc_b += gr[l];
        b_.grad(co) += acc_b;
        for (std::size_t ci = 0; ci < cin_; ++ci) {
            const double* xr = x_.row(ci);
            double* dxr = dx.row(ci);
            for (std::size_t k = 0; k < kernel_; ++k) {
                const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - pad;
                const std::size_t lo = off < 0 ? static_cast<std::size_t>(-off) : 0;
                const std::size_t hi = off > 0 ? len - static_cast<std::size_t>(off) : len;
                const double w = w_.value(co, ci, k);
                double acc_w = 0.0;
                for (std::size_t l = lo; l < hi; ++l) {
                    const std::size_t src = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(l) + off);
                    acc_w += gr[l] * xr[src];
                    dxr[src] += w * gr[l];
                }
                w_.grad(co, ci, k) += acc_w;
            }
        }
    }
    return dx;
}

void Conv1d::collect(std::vector<Param*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
}

// ---- instance norm ---------------------------------------------------------

InstanceNorm::InstanceNorm(std::string name, std::size_t channels, double eps)
    : channels_(channels), eps_(eps), gamma_(name + ".gamma", {channels}),
      beta_(name + ".beta", {channels}) {
    gamma_.value.fill(1.0);
}

Tensor InstanceNorm::forward(const Tensor& x, RunCtx&) {
    require_rank(x, 2, "instance norm input");
    if (x.dim(0) != channels_)
        raise(Err::ShapeMismatch, "instance norm channels: expected " + std::to_string(channels_));
    const std::size_t len = x.dim(1);
    if (len == 0) raise(Err::ShapeMismatch, "instance norm over an empty axis");
    xhat_ = Tensor({channels_, len});
    inv_std_.assign(channels_, 0.0);
    Tensor y({channels_, len});
    for (std::size_t c = 0; c < channels_; ++c) {
        const double* xr = x.row(c);
        double mean = 0.0;
        for (std::size_t l = 0; l < len; ++l) mean += xr[l];
        mean /= static_cast<double>(len);
        double var = 0.0;
        for (std::size_t l = 0; l < len; ++l) var += (xr[l] - mean) * (xr[l] - mean);
        var /= static_cast<double>(len);
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[c] = inv;
        double* hr = xhat_.row(c);
        double* yr = y.row(c);
        const double g = gamma_.value(c), b = beta_.value(c);
        for (std::size_t l = 0; l < len; ++l) {
            hr[l] = (xr[l] - mean) * inv;
            yr[l] = g * hr[l] + b;
        }
    }
    return y;
}

Tensor InstanceNorm::backward(const Tensor& gy) {
    require_shape(gy, xhat_.shape, "instance norm gradient");
    const std::size_t len = xhat_.dim(1);
    Tensor dx({channels_, len});
    for (std::size_t c = 0; c < channels_; ++c) {
        const double* gr = gy.row(c);
        const double* hr = xhat_.row(c);
        double sum_g = 0.0, sum_gh = 0.0;
        for (std::size_t l = 0; l < len; ++l) {
            sum_g += gr[l];
            sum_gh += gr[l] * hr[l];
        }
        gamma_.grad(c) += sum_gh;
        beta_.grad(c) += sum_g;
        const double inv = inv_std_[c];
        const double g = gamma_.value(c);
        const double mean_g = sum_g / static_cast<double>(len);
        const double mean_gh = sum_gh / static_cast<double>(len);
        double* dr = dx.row(c);
        for (std::size_t l = 0; l < len; ++l)
            dr[l] = g * inv * (gr[l] - mean_g - hr[l] * mean_gh);
    }
    return dx;
}

void InstanceNorm::collect(std::vector<Param*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
}

// ---- prelu ------------------------------------------------------------------

PReLU::PReLU(std::string name, std::size_t channels)
    : channels_(channels), slope_(name + ".slope", {channels}) {
    slope_.value.fill(0.25);
}

Tensor PReLU::forward(const Tensor& x, RunCtx&) {
    if (x.rank() == 1) {
        require_shape(x, {channels_}, "prelu input");
        x_ = x;
        Tensor y({channels_});
        for (std::size_t i = 0; i < channels_; ++i)
            y(i) = x(i) > 0.0 ? x(i) : slope_.value(i) * x(i);
        return y;
    }
    require_rank(x, 2, "prelu input");
    if (x.dim(0) != channels_)
        raise(Err::ShapeMismatch, "prelu channels: expected " + std::to_string(channels_));
    x_ = x;
    const std::size_t len = x.dim(1);
    Tensor y({channels_, len});
    for (std::size_t c = 0; c < channels_; ++c) {
        const double s = slope_.value(c);
        const double* xr = x.row(c);
        double* yr = y.row(c);
        for (std::size_t l = 0; l < len; ++l) yr[l] = xr[l] > 0.0 ? xr[l] : s * xr[l];
    }
    return y;
}

Tensor PReLU::backward(const Tensor& gy) {
    require_shape(gy, x_.shape, "prelu gradient");
    Tensor dx(x_.shape);
    if (x_.rank() == 1) {
        for (std::size_t i = 0; i < channels_; ++i) {
            if (x_(i) > 0.0) {
                dx(i) = gy(i);
            } else {
                dx(i) = slope_.value(i) * gy(i);
                slope_.grad(i) += gy(i) * x_(i);
            }
        }
        return dx;
    }
    const std::size_t len = x_.dim(1);
    for (std::size_t c = 0; c < channels_; ++c) {
        const double s = slope_.value(c);
        const double* xr = x_.row(c);
        const double* gr = gy.row(c);
        double* dr = dx.row(c);
        double acc = 0.0;
        for (std::size_t l = 0; l < len; ++l) {
            if (xr[l] > 0.0) {
                dr[l] = gr[l];
            } else {
                dr[l] = s * gr[l];
                acc += gr[l] * xr[l];
            }
        }
        slope_.grad(c) += acc;
    }
    return dx;
}

void PReLU::collect(std::vector<Param*>& out) { out.push_back(&slope_); }

// ---- dropout ----------------------------------------------------------------

Dropout::Dropout(double rate) : rate_(rate) {
    if (rate < 0.0 || rate >= 1.0) raise(Err::InvalidSpec, "dropout rate must be in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, RunCtx& ctx) {
    train_pass_ = ctx.train && rate_ > 0.0;
    if (!train_pass_) return x;
    if (ctx.rng == nullptr) raise(Err::InvalidSpec, "training dropout needs a random stream");
    mask_ = Tensor(x.shape);
    const double keep = 1.0 - rate_;
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double m = draw_unit(*ctx.rng) < rate_ ? 0.0 : 1.0 / keep;
        mask_.data[i] = m;
        y.data[i] = x.data[i] * m;
    }
    return y;
}

Tensor Dropout::backward(const Tensor& gy) {
    if (!train_pass_) return gy;
    require_shape(gy, mask_.shape, "dropout gradient");
    Tensor dx(gy.shape);
    for (std::size_t i = 0; i < gy.data.size(); ++i) dx.data[i] = gy.data[i] * mask_.data[i];
    return dx;
}

// ---- max pool -----------------------------------------------------------------

MaxPool1d::MaxPool1d(std::size_t window, std::size_t stride) : window_(window), stride_(stride) {
    if (window == 0 || stride == 0) raise(Err::InvalidSpec, "pool window and stride must be positive");
}

Tensor MaxPool1d::forward(const Tensor& x, RunCtx&) {
    require_rank(x, 2, "max pool input");
    const std::size_t c = x.dim(0), len = x.dim(1);
    if (len < window_) raise(Err::ShapeMismatch, "max pool window longer than the input");
    const std::size_t out_len = (len - window_) / stride_ + 1;
    in_shape_ = x.shape;
    argmax_.assign(c * out_len, 0);
    Tensor y({c, out_len});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xr = x.row(ch);
        double* yr = y.row(ch);
        for (std::size_t o = 0; o < out_len; ++o) {
            std::size_t arg = o * stride_;
            double best = xr[arg];
            for (std::size_t k = 1; k < window_; ++k) {
                const std::size_t i = o * stride_ + k;
                if (xr[i] > best) {
                    best = xr[i];
                    arg = i;
                }
            }
            yr[o] = best;
            argmax_[ch * out_len + o] = arg;
        }
    }
    return y;
}

Tensor MaxPool1d::backward(const Tensor& gy) {
    const std::size_t c = in_shape_[0];
    const std::size_t out_len = argmax_.size() / c;
    require_shape(gy, {c, out_len}, "max pool gradient");
    Tensor dx({c, in_shape_[1]});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* gr = gy.row(ch);
        double* dr = dx.row(ch);
        for (std::size_t o = 0; o < out_len; ++o) dr[argmax_[ch * out_len + o]] += gr[o];
    }
    return dx;
}

// ---- global average pool ---------------------------------------------------

Tensor GlobalAvgPool::forward(const Tensor& x, RunCtx&) {
    require_rank(x, 2, "average pool input");
    in_shape_ = x.shape;
    const std::size_t c = x.dim(0), len = x.dim(1);
    Tensor y({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xr = x.row(ch);
        double acc = 0.0;
        for (std::size_t l = 0; l < len; ++l) acc += xr[l];
        y(ch) = acc / static_cast<double>(len);
    }
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& gy) {
    const std::size_t c = in_shape_[0], len = in_shape_[1];
    require_shape(gy, {c}, "average pool gradient");
    Tensor dx({c, len});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double g = gy(ch) / static_cast<double>(len);
        double* dr = dx.row(ch);
        for (std::size_t l = 0; l < len; ++l) dr[l] = g;
    }
    return dx;
}

// ---- softmax attention -------------------------------------------------------

Tensor SoftmaxAttention::forward(const Tensor& x, RunCtx&) {
    require_rank(x, 2, "attention input");
    x_ = x;
    const std::size_t c = x.dim(0), len = x.dim(1);
    std::vector<double> score(len, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xr = x.row(ch);
        for (std::size_t l = 0; l < len; ++l) score[l] += xr[l];
    }
    for (double& s : score) s /= static_cast<double>(c);
    const double max_s = *std::max_element(score.begin(), score.end());
    double z = 0.0;
    w_.assign(len, 0.0);
    for (std::size_t l = 0; l < len; ++l) {
        w_[l] = std::exp(score[l] - max_s);
        z += w_[l];
    }
    for (std::size_t l = 0; l < len; ++l) w_[l] /= z;

    Tensor y({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xr = x.row(ch);
        double acc = 0.0;
        for (std::size_t l = 0; l < len; ++l) acc += w_[l] * xr[l];
        y(ch) = acc;
    }
    return y;
}

Tensor SoftmaxAttention::backward(const Tensor& gy) {
    const std::size_t c = x_.dim(0), len = x_.dim(1);
    require_shape(gy, {c}, "attention gradient");

    // q[l] = sum_c g_c h_cl, r = sum_l w_l q_l, ds_l = w_l (q_l - r),
    // dh_cl = g_c w_l + ds_l / C.
    std::vector<double> q(len, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* xr = x_.row(ch);
        const double g = gy(ch);
        for (std::size_t l = 0; l < len; ++l) q[l] += g * xr[l];
    }
    double r = 0.0;
    for (std::size_t l = 0; l < len; ++l) r += w_[l] * q[l];

    Tensor dx({c, len});
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double g = gy(ch);
        double* dr = dx.row(ch);
        for (std::size_t l = 0; l < len; ++l)
            dr[l] = g * w_[l] + w_[l] * (q[l] - r) / static_cast<double>(c);
    }
    return dx;
}

// ---- flatten -------------------------------------------------------------------

Tensor Flatten::forward(const Tensor& x, RunCtx&) {
    in_shape_ = x.shape;
    Tensor y;
    y.shape = {x.numel()};
    y.data = x.data;
    return y;
}

Tensor Flatten::backward(const Tensor& gy) {
    Tensor dx;
    dx.shape = in_shape_;
    dx.data = gy.data;
    return dx;
}

// ---- losses -----------------------------------------------------------------

Tensor softmax(const Tensor& logits) {
    Tensor p(logits.shape);
    const double m = *std::max_element(logits.data.begin(), logits.data.end());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
        p.data[i] = std::exp(logits.data[i] - m);
        z += p.data[i];
    }
    for (double& v : p.data) v /= z;
    return p;
}

double cross_entropy(const Tensor& logits, int target, Tensor* dlogits) {
    if (logits.rank() != 1 || logits.numel() == 0)
        raise(Err::ShapeMismatch, "cross entropy expects a logit vector");
    if (target < 0 || static_cast<std::size_t>(target) >= logits.numel())
        raise(Err::IndexOutOfRange, "target class outside the logit vector");
    const double m = *std::max_element(logits.data.begin(), logits.data.end());
    double z = 0.0;
    for (double v : logits.data) z += std::exp(v - m);
    const double loss = m + std::log(z) - logits.data[static_cast<std::size_t>(target)];
    if (dlogits != nullptr) {
        *dlogits = softmax(logits);
        dlogits->data[static_cast<std::size_t>(target)] -= 1.0;
    }
    return loss;
}

// ---- optimizer -----------------------------------------------------------------

Param* ParameterSet::find(const std::string& name) {
    for (Param* p : params)
        if (p->name == name) return p;
    return nullptr;
}

const Param* ParameterSet::find(const std::string& name) const {
    for (const Param* p : params)
        if (p->name == name) return p;
    return nullptr;
}

std::size_t ParameterSet::count_scalars() const {
    std::size_t n = 0;
    for (const Param* p : params) n += p->value.numel();
    return n;
}

void ParameterSet::zero_grad() {
    for (Param* p : params) p->zero_grad();
}

void adam_step(ParameterSet& ps, const AdamConfig& cfg) {
    ps.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(ps.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(ps.t));
    for (Param* p : ps.params) {
        for (std::size_t i = 0; i < p->value.data.size(); ++i) {
            const double g = p->grad.data[i];
            double& m = p->m.data[i];
            double& v = p->v.data[i];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            p->value.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

void init_he_uniform(Param& p, std::size_t fan_in, std::uint64_t seed) {
    if (fan_in == 0) raise(Err::InvalidSpec, "fan-in must be positive for init");
    Rng rng = make_rng(seed, fnv1a64(p.name));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : p.value.data) v = draw_uniform(rng, -limit, limit);
}

// ---- checkpoint -----------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'B', 'P', 'N', 'N', '1', '\0', '\0', '\0'};
}

void save_checkpoint(const std::string& path, const ParameterSet& ps, const std::string& meta_json) {
    json header;
    header["version"] = 1;
    header["meta"] = meta_json.empty() ? json::object() : json::parse(meta_json);
    json tensors = json::array();
    std::size_t offset = 0;
    for (const Param* p : ps.params) {
        json t;
        t["name"] = p->name;
        t["dtype"] = "f64";
        t["shape"] = p->value.shape;
        t["offset"] = offset;
        tensors.push_back(t);
        offset += p->value.numel() * sizeof(double);
    }
    header["tensors"] = tensors;
    const std::string head = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) raise(Err::IoError, "cannot open " + tmp + " for writing");
        f.write(kMagic, sizeof(kMagic));
        const auto head_len = static_cast<std::uint32_t>(head.size());
        f.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
        f.write(head.data(), static_cast<std::streamsize>(head.size()));
        for (const Param* p : ps.params)
            f.write(reinterpret_cast<const char*>(p->value.data.data()),
                    static_cast<std::streamsize>(p->value.numel() * sizeof(double)));
        if (!f) raise(Err::IoError, "short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

namespace {

json read_header(std::ifstream& f, const std::string& path) {
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        raise(Err::IoError, path + " is not a model archive");
    std::uint32_t head_len = 0;
    f.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
    std::string head(head_len, '\0');
    f.read(head.data(), head_len);
    if (!f) raise(Err::IoError, "truncated header in " + path);
    return json::parse(head);
}

} // namespace

std::string load_checkpoint(const std::string& path, ParameterSet& ps) {
    std::ifstream f(path, std::ios::binary);
    if (!f) raise(Err::IoError, "cannot open " + path);
    const json header = read_header(f, path);

    for (const json& t : header.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        Param* p = ps.find(name);
        if (p == nullptr) raise(Err::ShapeMismatch, "archive tensor '" + name + "' has no home");
        const auto shape = t.at("shape").get<std::vector<std::size_t>>();
        if (shape != p->value.shape)
            raise(Err::ShapeMismatch, "tensor '" + name + "' shape " + shape_str(shape) +
                                          " does not match model " + shape_str(p->value.shape));
        f.read(reinterpret_cast<char*>(p->value.data.data()),
               static_cast<std::streamsize>(p->value.numel() * sizeof(double)));
        if (!f) raise(Err::IoError, "truncated payload in " + path);
    }
    return header.at("meta").dump();
}

std::string read_checkpoint_meta(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) raise(Err::IoError, "cannot open " + path);
    return read_header(f, path).at("meta").dump();
}

} // namespace bpshift
