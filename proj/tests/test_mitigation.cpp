#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "dlab/mitigation.hpp"
#include "dlab/model.hpp"
#include "dlab/objectives.hpp"
#include "dlab/optimizer.hpp"
#include "dlab/param_groups.hpp"
#include "dlab/rng.hpp"

using namespace dlab;

namespace {

TinyLmm default_model(std::uint64_t seed) {
    return init_model(ModelConfig{}, Rng(seed));
}

DenseTensor random_visual(const ModelConfig& cfg, Rng& rng) {
    DenseTensor v({cfg.visual_tokens, cfg.d_v});
    for (std::int64_t i = 0; i < v.size(); ++i) v[i] = rng.uniform(-1.0f, 1.0f);
    return v;
}

void randomize_b(TinyLmm& m, std::uint64_t seed) {
    Rng rng(seed);
    for (const std::string& target : m.lora_targets) {
        DenseTensor& b = m.param("lora." + target + ".b");
        for (std::int64_t i = 0; i < b.size(); ++i)
            b[i] = rng.uniform(-0.1f, 0.1f);
    }
}

}  // namespace

TEST_CASE("adapter shapes and trainable budget") {
    ModelConfig cfg;
    cfg.d = 64;
    cfg.heads = 8;
    cfg.d_k = 8;
    cfg.hidden = 64;
    TinyLmm m = init_model(cfg, Rng(1));
    lora_attach(m, {"block0.wgate"}, 4, 8.0f, Rng(2));
    // Against a 64 x 64 weight (4096 scalars) the rank-4 pair costs 512.
    CHECK(m.param("block0.wgate").size() == 4096);
    CHECK(lora_trainable_count(m) == 512);
    CHECK(m.param("lora.block0.wgate.a").shape() == std::vector<int>{4, 64});
    CHECK(m.param("lora.block0.wgate.b").shape() == std::vector<int>{64, 4});
    CHECK(m.lora_rank == 4);
    CHECK(m.lora_alpha == 8.0f);
    std::vector<std::string> names = lora_param_names(m);
    CHECK(names == std::vector<std::string>{"lora.block0.wgate.a",
                                            "lora.block0.wgate.b"});
}

TEST_CASE("default adapter targets cover the mlp path of every block") {
    ModelConfig cfg;
    std::vector<std::string> targets = lora_default_targets(cfg);
    CHECK(targets.size() == 12);
    CHECK(targets.front() == "block0.wgate");
    CHECK(targets.back() == "block3.wdown");
}

TEST_CASE("attachment guards") {
    TinyLmm m = default_model(3);
    CHECK_THROWS_AS(lora_attach(m, {"block0.wq"}, 0, 8.0f, Rng(4)),
                    ConfigError);
    CHECK_THROWS_AS(lora_attach(m, {"block0.wq"}, 33, 8.0f, Rng(4)),
                    ConfigError);  // rank above min(d, k) = 32
    CHECK_THROWS_AS(lora_attach(m, {"block0.ln1"}, 2, 8.0f, Rng(4)),
                    ConfigError);  // norm gains are not matrices
    lora_attach(m, {"block0.wq"}, 2, 8.0f, Rng(4));
    CHECK_THROWS_AS(lora_attach(m, {"block0.wk"}, 2, 8.0f, Rng(4)),
                    ConfigError);
}

TEST_CASE("fresh adapters start as an exact no-op") {
    TinyLmm m = default_model(5);
    TinyLmm plain = m;
    lora_attach(m, lora_default_targets(m.cfg), 4, 8.0f, Rng(6));

    Rng rng(7);
    DenseTensor vis = random_visual(m.cfg, rng);
    ForwardTrace with = forward_trace(m, {{3, 5}, vis, {2}});
    ForwardTrace without = forward_trace(plain, {{3, 5}, vis, {2}});
    CHECK(bitwise_equal(with.z, without.z));

    // Merging zero-product adapters returns the weights unchanged.
    lora_merge(m);
    for (const auto& [name, p] : plain.params)
        CHECK(bitwise_equal(p, m.param(name)));
    CHECK(m.lora_targets.empty());
    CHECK_THROWS_AS(lora_merge(m), ConfigError);
}

TEST_CASE("adapter forward equals merged forward") {
    TinyLmm m = default_model(8);
    lora_attach(m, lora_default_targets(m.cfg), 4, 8.0f, Rng(9));
    randomize_b(m, 10);
    TinyLmm merged = m;
    lora_merge(merged);

    Rng rng(11);
    DenseTensor vis = random_visual(m.cfg, rng);
    ForwardTrace adapter = forward_trace(m, {{1, 2, 3}, vis, {4}});
    ForwardTrace flat = forward_trace(merged, {{1, 2, 3}, vis, {4}});
    for (std::int64_t i = 0; i < adapter.z.size(); ++i)
        CHECK(std::abs(adapter.z[i] - flat.z[i]) <= 1e-5);
}

TEST_CASE("adapter decode equals merged decode on twenty prompts") {
    TinyLmm m = default_model(12);
    lora_attach(m, lora_default_targets(m.cfg), 4, 8.0f, Rng(13));
    randomize_b(m, 14);
    TinyLmm merged = m;
    lora_merge(merged);

    Rng rng(15);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> prompt = {57, rng.uniform_int(64)};
        DenseTensor vis = random_visual(m.cfg, rng);
        CHECK(greedy_decode(m, prompt, vis, 6, 1) ==
              greedy_decode(merged, prompt, vis, 6, 1));
    }
}

TEST_CASE("training adapters never touches the wrapped weights") {
    TinyLmm m = default_model(16);
    lora_attach(m, lora_default_targets(m.cfg), 4, 8.0f, Rng(17));
    TinyLmm before = m;

    std::set<std::string> trainable;
    for (const std::string& n : lora_param_names(m)) trainable.insert(n);
    TrainHyper hyper;
    hyper.total_steps = 10;
    AdamOptimizer opt(m, apply_freeze(m, trainable), hyper);

    Rng data(18);
    TaskBatch batch;
    TrainExample ex;
    ex.visual = random_visual(m.cfg, data);
    ex.prompt = {52};
    ex.target = {4, 1};
    batch.items.push_back(ex);
    for (int i = 0; i < 10; ++i) opt.step(task_loss(m, batch).grads);

    for (const std::string& name : canonical_param_names(m.cfg))
        CHECK(bitwise_equal(before.param(name), m.param(name)));
    CHECK_FALSE(bitwise_equal(before.param("lora.block0.wgate.a"),
                              m.param("lora.block0.wgate.a")));
}

TEST_CASE("interpolation endpoints are the inputs themselves") {
    TinyLmm base = default_model(19);
    TinyLmm tuned = default_model(20);
    TinyLmm at0 = wise_ft_interpolate(base, tuned, 0.0);
    TinyLmm at1 = wise_ft_interpolate(base, tuned, 1.0);
    for (const auto& [name, p] : base.params) {
        CHECK(bitwise_equal(p, at0.param(name)));
        CHECK(bitwise_equal(tuned.param(name), at1.param(name)));
    }
}

TEST_CASE("interpolation averages scalars exactly at the midpoint") {
    TinyLmm base = default_model(21);
    TinyLmm tuned = base;
    base.param("embed.w")[0] = 2.0f;
    tuned.param("embed.w")[0] = 4.0f;
    TinyLmm mid = wise_ft_interpolate(base, tuned, 0.5);
    CHECK(mid.param("embed.w")[0] == 3.0f);
}

TEST_CASE("interpolation is affine along the whole path") {
    TinyLmm base = default_model(22);
    TinyLmm tuned = default_model(23);
    for (double beta : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        CAPTURE(beta);
        TinyLmm mix = wise_ft_interpolate(base, tuned, beta);
        const DenseTensor& w = mix.param("block1.wq");
        const DenseTensor& a = base.param("block1.wq");
        const DenseTensor& b = tuned.param("block1.wq");
        for (std::int64_t i = 0; i < w.size(); ++i) {
            float expect =
                static_cast<float>((1.0 - beta) * a[i] + beta * b[i]);
            CHECK(std::abs(w[i] - expect) <=
                  2.0f * std::abs(expect) * 1.19209290e-07f + 1e-12f);
        }
    }
}

TEST_CASE("interpolation rejects mismatched inputs") {
    TinyLmm base = default_model(24);
    TinyLmm tuned = base;
    CHECK_THROWS_AS(wise_ft_interpolate(base, tuned, -0.1), ConfigError);
    CHECK_THROWS_AS(wise_ft_interpolate(base, tuned, 1.1), ConfigError);

    ModelConfig other;
    other.layers = 2;
    TinyLmm small = init_model(other, Rng(25));
    CHECK_THROWS_AS(wise_ft_interpolate(base, small, 0.5), ConfigError);

    TinyLmm extra = base;
    extra.params["stray"] = DenseTensor({1});
    CHECK_THROWS_AS(wise_ft_interpolate(base, extra, 0.5), ConfigError);
}

TEST_CASE("a freshly wrapped mixture leaves the forward pass in place") {
    TinyLmm m = default_model(26);
    TinyLmm plain = m;
    moe_wrap(m);
    CHECK(m.moe);
    CHECK(m.params.size() == plain.params.size() + 4 * m.cfg.layers);
    CHECK_THROWS_AS(moe_wrap(m), ConfigError);

    // Zero gate logits route half and half, and the new expert is a copy of
    // the frozen one, so the wrapped output must match the plain model.
    Rng rng(27);
    DenseTensor vis = random_visual(m.cfg, rng);
    ForwardTrace wrapped = forward_trace(m, {{6, 7}, vis, {8}});
    ForwardTrace bare = forward_trace(plain, {{6, 7}, vis, {8}});
    for (std::int64_t i = 0; i < wrapped.z.size(); ++i)
        CHECK(std::abs(wrapped.z[i] - bare.z[i]) <= 1e-6);
}

TEST_CASE("mixture names enumerate gates and expert weights per block") {
    TinyLmm m = default_model(28);
    moe_wrap(m);
    std::vector<std::string> names = moe_param_names(m);
    CHECK(names.size() == 16);
    CHECK(names[0] == "block0.moe_gate");
    CHECK(m.param("block0.moe_gate").shape() == std::vector<int>{32, 2});
    CHECK(bitwise_equal(m.param("block2.moe_wup"), m.param("block2.wup")));
    for (std::int64_t i = 0; i < m.param("block0.moe_gate").size(); ++i)
        CHECK(m.param("block0.moe_gate")[i] == 0.0f);
}

TEST_CASE("training the mixture leaves the original expert untouched") {
    TinyLmm m = default_model(29);
    moe_wrap(m);
    TinyLmm before = m;

    std::set<std::string> trainable;
    for (const std::string& n : moe_param_names(m)) trainable.insert(n);
    TrainHyper hyper;
    hyper.total_steps = 100;
    AdamOptimizer opt(m, apply_freeze(m, trainable), hyper);

    Rng data(30);
    TaskBatch batch;
    for (int i = 0; i < 4; ++i) {
        TrainExample ex;
        ex.visual = random_visual(m.cfg, data);
        ex.prompt = {52};
        ex.target = {static_cast<int>(2 + data.uniform_int(9)), 1};
        batch.items.push_back(ex);
    }
    for (int i = 0; i < 100; ++i) opt.step(task_loss(m, batch).grads);

    for (const std::string& name : canonical_param_names(m.cfg))
        CHECK(bitwise_equal(before.param(name), m.param(name)));
    bool moved = false;
    for (const std::string& name : moe_param_names(m))
        moved = moved || !bitwise_equal(before.param(name), m.param(name));
    CHECK(moved);
}
