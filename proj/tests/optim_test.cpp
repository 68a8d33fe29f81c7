#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "pwlock/checkpoint.hpp"
#include "pwlock/optim.hpp"

using namespace pwlock;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 6;
    cfg.context_len = 4;
    cfg.d_model = 4;
    cfg.n_layers = 1;
    cfg.n_heads = 1;
    cfg.mlp_ratio = 2;
    return cfg;
}

}  // namespace

TEST_CASE("lr schedule: linear warmup then constant peak") {
    OptimConfig cfg;
    cfg.peak_lr = 2e-3;
    cfg.warmup_steps = 100;
    CHECK(lr_at(0, cfg) == 0.0);
    CHECK(lr_at(25, cfg) == doctest::Approx(0.25 * cfg.peak_lr));
    CHECK(lr_at(100, cfg) == doctest::Approx(cfg.peak_lr));
    CHECK(lr_at(100000, cfg) == doctest::Approx(cfg.peak_lr));
    CHECK_THROWS_AS(lr_at(-1, cfg), std::invalid_argument);
}

TEST_CASE("one step with zero decay moves every touched weight by exactly lr") {
    const auto mc = tiny_config();
    auto params = init_params<float>(mc, 1);
    const Params<float> before = params;
    auto grads = zeros_like<float>(mc);
    // Nonzero gradient everywhere, alternating sign.
    grads.for_each([&](const std::string&, MatT<float>& g) {
        for (Eigen::Index r = 0; r < g.rows(); ++r)
            for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = ((r + c) % 2) ? 1.0f : -1.0f;
    });
    OptimConfig oc;
    oc.peak_lr = 1e-2;
    oc.weight_decay = 0.0;
    oc.warmup_steps = 1;
    auto state = make_optim_state(mc);
    state.step = 1;  // past warmup: lr == peak
    lion_step(params, grads, state, oc);

    std::vector<const MatT<float>*> b, a, g;
    before.for_each([&](const std::string&, const MatT<float>& m) { b.push_back(&m); });
    params.for_each([&](const std::string&, const MatT<float>& m) { a.push_back(&m); });
    grads.for_each([&](const std::string&, const MatT<float>& m) { g.push_back(&m); });
    for (size_t i = 0; i < b.size(); ++i) {
        for (Eigen::Index r = 0; r < b[i]->rows(); ++r) {
            for (Eigen::Index c = 0; c < b[i]->cols(); ++c) {
                const float delta = (*a[i])(r, c) - (*b[i])(r, c);
                const float expected = -static_cast<float>(oc.peak_lr) *
                                       ((*g[i])(r, c) > 0 ? 1.0f : -1.0f);
                CHECK(delta == doctest::Approx(expected).epsilon(1e-6));
            }
        }
    }
    CHECK(state.step == 2);
}

TEST_CASE("gradient magnitude does not change the sign-driven update") {
    const auto mc = tiny_config();
    OptimConfig oc;
    oc.peak_lr = 1e-2;
    oc.weight_decay = 0.0;
    oc.warmup_steps = 1;

    auto run = [&](float scale) {
        auto params = init_params<float>(mc, 2);
        auto grads = zeros_like<float>(mc);
        Rng rng(5);
        grads.for_each([&](const std::string&, MatT<float>& g) {
            for (Eigen::Index r = 0; r < g.rows(); ++r)
                for (Eigen::Index c = 0; c < g.cols(); ++c)
                    g(r, c) = scale * static_cast<float>(rng.normal() + 3.0);
        });
        auto state = make_optim_state(mc);
        state.step = 1;
        lion_step(params, grads, state, oc);
        return params;
    };
    const auto small = run(1e-3f);
    const auto large = run(1e3f);
    std::vector<const MatT<float>*> s, l;
    small.for_each([&](const std::string&, const MatT<float>& m) { s.push_back(&m); });
    large.for_each([&](const std::string&, const MatT<float>& m) { l.push_back(&m); });
    for (size_t i = 0; i < s.size(); ++i) CHECK(*s[i] == *l[i]);
}

TEST_CASE("pure weight decay shrinks weights toward zero") {
    const auto mc = tiny_config();
    auto params = zeros_like<float>(mc);
    params.tok_embed.setConstant(1.0f);
    auto grads = zeros_like<float>(mc);
    // sign(0) == 0, so only the decay term acts on tok_embed.
    OptimConfig oc;
    oc.peak_lr = 0.1;
    oc.weight_decay = 0.5;
    oc.warmup_steps = 1;
    auto state = make_optim_state(mc);
    state.step = 1;
    lion_step(params, grads, state, oc);
    // theta -= lr * wd * theta = 1 - 0.1*0.5
    CHECK(params.tok_embed(0, 0) == doctest::Approx(0.95f));
}

TEST_CASE("non-finite gradients are rejected before touching state") {
    const auto mc = tiny_config();
    auto params = init_params<float>(mc, 3);
    const Params<float> before = params;
    auto grads = zeros_like<float>(mc);
    grads.unembed(0, 0) = std::numeric_limits<float>::quiet_NaN();
    OptimConfig oc;
    auto state = make_optim_state(mc);
    CHECK_THROWS_AS(lion_step(params, grads, state, oc), std::runtime_error);
    CHECK(state.step == 0);
    CHECK(params.unembed == before.unembed);
    CHECK(state.momentum.unembed == MatT<float>::Zero(mc.d_model, mc.vocab_size));
}

TEST_CASE("lion momentum update follows the closed form") {
    const auto mc = tiny_config();
    auto params = init_params<float>(mc, 4);
    auto grads = zeros_like<float>(mc);
    grads.tok_embed.setConstant(2.0f);
    OptimConfig oc;
    oc.beta1 = 0.9;
    oc.beta2 = 0.99;
    oc.warmup_steps = 1;
    auto state = make_optim_state(mc);
    state.momentum.tok_embed.setConstant(1.0f);
    state.step = 1;
    const float theta0 = params.tok_embed(0, 0);
    lion_step(params, grads, state, oc);
    // c = 0.9*1 + 0.1*2 = 1.1 > 0 -> update -lr*(1 + wd*theta)
    const float lr = static_cast<float>(oc.peak_lr);
    CHECK(params.tok_embed(0, 0) ==
          doctest::Approx(theta0 - lr * (1.0f + static_cast<float>(oc.weight_decay) * theta0)));
    // m = 0.99*1 + 0.01*2 = 1.01
    CHECK(state.momentum.tok_embed(0, 0) == doctest::Approx(1.01f));
}

TEST_CASE("optimizer state survives a checkpoint round-trip") {
    const auto mc = tiny_config();
    Checkpoint ckpt;
    ckpt.config = mc;
    ckpt.params = init_params<float>(mc, 6);
    ckpt.provenance = {"locked", "parenthash", 6};
    auto state = make_optim_state(mc);
    state.momentum.tok_embed.setConstant(0.25f);
    state.step = 42;
    ckpt.opt_state = state;
    const std::string path = "optim_test_ckpt.bin";
    save_checkpoint(path, ckpt);
    const auto loaded = load_checkpoint(path);
    REQUIRE(loaded.opt_state.has_value());
    CHECK(loaded.opt_state->step == 42);
    CHECK(loaded.opt_state->momentum.tok_embed == state.momentum.tok_embed);
    CHECK(checkpoint_hash(loaded) == checkpoint_hash(ckpt));
    std::remove(path.c_str());
}

TEST_CASE("steps are deterministic") {
    const auto mc = tiny_config();
    auto run = [&] {
        auto params = init_params<float>(mc, 9);
        auto grads = zeros_like<float>(mc);
        Rng rng(11);
        auto state = make_optim_state(mc);
        OptimConfig oc;
        for (int i = 0; i < 5; ++i) {
            grads.for_each([&](const std::string&, MatT<float>& g) {
                for (Eigen::Index r = 0; r < g.rows(); ++r)
                    for (Eigen::Index c = 0; c < g.cols(); ++c)
                        g(r, c) = static_cast<float>(rng.normal());
            });
            lion_step(params, grads, state, oc);
        }
        return params;
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.tok_embed == b.tok_embed);
    CHECK(a.unembed == b.unembed);
}
