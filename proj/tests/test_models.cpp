#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "bpshift/error.hpp"
#include "bpshift/models.hpp"
#include "bpshift/nn.hpp"
#include "bpshift/rng.hpp"

using namespace bpshift;

namespace {

ModelSpec small_spec(ArchKind kind, std::size_t aux_dim = 0, bool with_bp = false) {
    ModelSpec s;
    s.kind = kind;
    s.input_channels = 2;
    s.input_length = 64;
    s.aux_dim = aux_dim;
    s.include_initial_bp = with_bp;
    s.conv_widths = {8, 8, 8};
    s.kernel_sizes = {9, 5, 3};
    s.mlp_width = 16;
    s.dropout = 0.0;
    s.init_seed = 7;
    return s;
}

Tensor random_input(const ModelSpec& s, std::uint64_t seed) {
    Tensor x({s.input_channels, s.input_length});
    Rng g = make_rng(seed);
    for (double& v : x.data) v = draw_uniform(g, 0.0, 1.0);
    return x;
}

const std::array<ArchKind, 4> kAllArchs{ArchKind::Mlp, ArchKind::Cnn, ArchKind::ResNet,
                                        ArchKind::Encoder};

} // namespace

TEST_CASE("arch names round-trip and unknown names are rejected") {
    for (ArchKind k : kAllArchs) CHECK(parse_arch(arch_name(k)) == k);
    try {
        static_cast<void>(parse_arch("transformer"));
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.kind() == Err::ConfigError);
        CHECK(std::string(e.what()).find("mlp") != std::string::npos);
    }
}

TEST_CASE("trunk layer counts per architecture") {
    for (auto [kind, layers, conv] :
         {std::tuple{ArchKind::Mlp, 4, 0}, std::tuple{ArchKind::Cnn, 4, 3},
          std::tuple{ArchKind::ResNet, 11, 10}, std::tuple{ArchKind::Encoder, 5, 3}}) {
        const auto m = build_model(small_spec(kind));
        CHECK(m->layer_counts().layers == layers);
        CHECK(m->layer_counts().conv == conv);
    }
}

TEST_CASE("mlp parameter count matches the closed form") {
    // Dense stack on a flattened [2, 875] input with width-500 hidden layers:
    //   fc0: 1750*500 + 500, fc1/fc2: 500*500 + 500, head: 500*3 + 3,
    //   plus one PReLU slope per hidden unit (3 * 500).
    ModelSpec s = small_spec(ArchKind::Mlp);
    s.input_length = 875;
    s.mlp_width = 500;
    const auto m = build_model(s);
    const std::size_t expect = (1750 * 500 + 500) + 2 * (500 * 500 + 500) + (500 * 3 + 3) + 3 * 500;
    CHECK(expect == 1379503);
    CHECK(m->params().count_scalars() == expect);
}

TEST_CASE("mlp parameter count with aux conditioning") {
    // Every block consumes its conditioned width: fc_b sees in + 11 inputs and
    // each of the four injectors is an 11x11 map with bias.
    ModelSpec s = small_spec(ArchKind::Mlp, 11, true);
    s.input_length = 875;
    s.mlp_width = 500;
    const auto m = build_model(s);
    const std::size_t expect = (1761 * 500 + 500) + 2 * (511 * 500 + 500) + (511 * 3 + 3) +
                               4 * (11 * 11 + 11) + 3 * 500;
    CHECK(m->params().count_scalars() == expect);
}

TEST_CASE("a zeroed head yields uniform logits and ln(3) loss") {
    for (ArchKind kind : kAllArchs) {
        const auto m = build_model(small_spec(kind));
        bool zeroed = false;
        for (Param* p : m->params().params) {
            if (p->name.find(".head.") != std::string::npos) {
                p->value.zero();
                zeroed = true;
            }
        }
        REQUIRE(zeroed);
        RunCtx ctx{};
        const Tensor logits = m->forward(random_input(m->spec(), 3), {}, ctx);
        REQUIRE(logits.numel() == 3);
        for (std::size_t k = 0; k < 3; ++k) CHECK(logits(k) == 0.0);
        CHECK(cross_entropy(logits, 1) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    }
}

TEST_CASE("untrained conditioning maps are inert") {
    // Injector weights start at zero, so an untouched conditioned model
    // ignores its aux vector entirely.
    for (ArchKind kind : kAllArchs) {
        const auto m = build_model(small_spec(kind, 11, true));
        const Tensor x = random_input(m->spec(), 5);
        std::vector<double> lo(11, 0.0), hi(11, 1.0);
        lo[10] = 80.0 / 200.0;
        hi[10] = 180.0 / 200.0;
        RunCtx ctx{};
        const Tensor y_lo = m->forward(x, lo, ctx);
        const Tensor y_hi = m->forward(x, hi, ctx);
        for (std::size_t k = 0; k < 3; ++k) CHECK(y_lo(k) == y_hi(k));

        // Waking one injector up makes the aux vector matter.
        bool woke = false;
        for (Param* p : m->params().params) {
            if (!woke && p->name.find(".inj") != std::string::npos && p->name.ends_with(".w")) {
                p->value.fill(0.5);
                woke = true;
            }
        }
        REQUIRE(woke);
        const Tensor z_lo = m->forward(x, lo, ctx);
        const Tensor z_hi = m->forward(x, hi, ctx);
        bool differs = false;
        for (std::size_t k = 0; k < 3; ++k) differs = differs || z_lo(k) != z_hi(k);
        CHECK(differs);
    }
}

TEST_CASE("an unconditioned model has no place for aux scalars") {
    const auto m = build_model(small_spec(ArchKind::Encoder));
    RunCtx ctx{};
    CHECK_THROWS_AS(static_cast<void>(m->forward(random_input(m->spec(), 1), {1.0}, ctx)), Error);
    for (Param* p : m->params().params) CHECK(p->name.find(".inj") == std::string::npos);
}

TEST_CASE("forward evaluation is pure") {
    for (ArchKind kind : kAllArchs) {
        ModelSpec s = small_spec(kind);
        s.dropout = 0.5;
        const auto m = build_model(s);
        const Tensor x = random_input(s, 11);
        RunCtx ctx{};
        const Tensor y1 = m->forward(x, {}, ctx);
        const Tensor y2 = m->forward(x, {}, ctx);
        CHECK(y1.data == y2.data);

        // Eval mode must not consume the rng stream.
        Rng probe = make_rng(123);
        const std::uint64_t first = probe();
        Rng rng = make_rng(123);
        RunCtx ev{false, &rng};
        static_cast<void>(m->forward(x, {}, ev));
        CHECK(rng() == first);
    }
}

TEST_CASE("dropout draws differ between training passes") {
    ModelSpec s = small_spec(ArchKind::Mlp);
    s.dropout = 0.5;
    const auto m = build_model(s);
    const Tensor x = random_input(s, 17);
    Rng rng = make_rng(29);
    RunCtx tr{true, &rng};
    const Tensor y1 = m->forward(x, {}, tr);
    const Tensor y2 = m->forward(x, {}, tr);
    CHECK(y1.data != y2.data);
}

TEST_CASE("init is deterministic in the seed") {
    for (ArchKind kind : kAllArchs) {
        const auto a = build_model(small_spec(kind));
        const auto b = build_model(small_spec(kind));
        REQUIRE(a->params().params.size() == b->params().params.size());
        for (std::size_t i = 0; i < a->params().params.size(); ++i) {
            CHECK(a->params().params[i]->name == b->params().params[i]->name);
            CHECK(a->params().params[i]->value.data == b->params().params[i]->value.data);
        }
        ModelSpec other = small_spec(kind);
        other.init_seed = 8;
        const auto c = build_model(other);
        bool differs = false;
        for (std::size_t i = 0; i < a->params().params.size(); ++i)
            differs = differs || a->params().params[i]->value.data != c->params().params[i]->value.data;
        CHECK(differs);
    }
}

TEST_CASE("single-example overfit: a few adam steps push the loss down") {
    for (ArchKind kind : kAllArchs) {
        const auto m = build_model(small_spec(kind));
        const Tensor x = random_input(m->spec(), 31);
        const int target = 2;
        AdamConfig adam;
        adam.lr = 1e-2;
        RunCtx ctx{};
        double first = 0.0, last = 0.0;
        for (int step = 0; step < 80; ++step) {
            const Tensor logits = m->forward(x, {}, ctx);
            Tensor dl;
            const double loss = cross_entropy(logits, target, &dl);
            if (step == 0) first = loss;
            last = loss;
            m->params().zero_grad();
            static_cast<void>(m->backward(dl));
            adam_step(m->params(), adam);
        }
        CHECK(last < first);
        CHECK(last < 0.2);
    }
}

TEST_CASE("backward reports an input gradient of the input shape") {
    for (ArchKind kind : kAllArchs) {
        const auto m = build_model(small_spec(kind));
        const Tensor x = random_input(m->spec(), 41);
        RunCtx ctx{};
        const Tensor logits = m->forward(x, {}, ctx);
        Tensor dl;
        static_cast<void>(cross_entropy(logits, 0, &dl));
        m->params().zero_grad();
        const Tensor gx = m->backward(dl);
        CHECK(gx.shape == x.shape);
        double norm = 0.0;
        for (double v : gx.data) norm += std::abs(v);
        CHECK(norm > 0.0);
    }
}

TEST_CASE("predict breaks exact ties in class order") {
    CHECK(predict(Tensor::vec({1.0, 1.0, 0.0})) == ChangeLabel::Spike);
    CHECK(predict(Tensor::vec({0.0, 2.0, 2.0})) == ChangeLabel::Stable);
    CHECK(predict(Tensor::vec({0.0, 0.0, 0.0})) == ChangeLabel::Spike);
    CHECK(predict(Tensor::vec({-1.0, 0.5, 2.0})) == ChangeLabel::Dip);
    CHECK_THROWS_AS(static_cast<void>(predict(Tensor::vec({1.0, 2.0}))), Error);
}

TEST_CASE("model spec json round-trip") {
    ModelSpec s = small_spec(ArchKind::ResNet, 11, true);
    s.conv_widths = {12, 24, 36};
    s.kernel_sizes = {7, 5, 3};
    s.dropout = 0.35;
    s.init_seed = 99;
    const ModelSpec r = ModelSpec::from_json(s.to_json());
    CHECK(r.kind == s.kind);
    CHECK(r.input_channels == s.input_channels);
    CHECK(r.input_length == s.input_length);
    CHECK(r.aux_dim == s.aux_dim);
    CHECK(r.include_initial_bp == s.include_initial_bp);
    CHECK(r.conv_widths == s.conv_widths);
    CHECK(r.kernel_sizes == s.kernel_sizes);
    CHECK(r.mlp_width == s.mlp_width);
    CHECK(r.dropout == doctest::Approx(s.dropout));
    CHECK(r.init_seed == s.init_seed);
}

TEST_CASE("invalid specs are rejected") {
    auto expect_invalid = [](ModelSpec s) {
        try {
            static_cast<void>(build_model(s));
            FAIL("expected an invalid spec");
        } catch (const Error& e) {
            CHECK(e.kind() == Err::InvalidSpec);
        }
    };
    ModelSpec s = small_spec(ArchKind::Cnn);
    s.input_channels = 0;
    expect_invalid(s);
    s = small_spec(ArchKind::Cnn);
    s.input_length = 4;
    expect_invalid(s);
    s = small_spec(ArchKind::Cnn);
    s.kernel_sizes = {8, 5, 3};
    expect_invalid(s);
    s = small_spec(ArchKind::Cnn);
    s.kernel_sizes = {129, 5, 3};
    s.input_length = 64;
    expect_invalid(s);
    s = small_spec(ArchKind::Mlp);
    s.dropout = 1.0;
    expect_invalid(s);
    s = small_spec(ArchKind::Mlp);
    s.include_initial_bp = true;
    s.aux_dim = 0;
    expect_invalid(s);
    s = small_spec(ArchKind::Mlp);
    s.mlp_width = 0;
    expect_invalid(s);
}

TEST_CASE("wrong input shapes are rejected") {
    const auto m = build_model(small_spec(ArchKind::Cnn));
    RunCtx ctx{};
    Tensor bad({2, 63});
    CHECK_THROWS_AS(static_cast<void>(m->forward(bad, {}, ctx)), Error);
    Tensor bad_rank = Tensor::vec({1.0, 2.0, 3.0});
    CHECK_THROWS_AS(static_cast<void>(m->forward(bad_rank, {}, ctx)), Error);
}
