#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "dlab/model.hpp"
#include "dlab/optimizer.hpp"
#include "dlab/param_groups.hpp"
#include "dlab/rng.hpp"

using namespace dlab;

namespace {

TinyLmm default_model(std::uint64_t seed = 1) {
    return init_model(ModelConfig{}, Rng(seed));
}

std::set<std::string> resolve_name(const std::string& name,
                                   const TinyLmm& model) {
    return resolve_group(ParamGroupSpec::parse(name), model);
}

bool subset(const std::set<std::string>& a, const std::set<std::string>& b) {
    return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

}  // namespace

TEST_CASE("the selectable group names") {
    const std::vector<std::string> expect = {
        "full",    "vision",      "projector", "vision+projector", "llm",
        "sa_proj", "sa_proj_qkv", "mlp",       "mlp_gate_up"};
    CHECK(group_names() == expect);
    for (const std::string& name : expect)
        CHECK_NOTHROW(ParamGroupSpec::parse(name));
}

TEST_CASE("parse rejects unknown names, exact match wins over splitting") {
    CHECK_THROWS_AS(ParamGroupSpec::parse("mpl"), ConfigError);
    CHECK_THROWS_AS(ParamGroupSpec::parse(""), ConfigError);
    CHECK_THROWS_AS(ParamGroupSpec::parse("mlp+nope"), ConfigError);
    ParamGroupSpec vp = ParamGroupSpec::parse("vision+projector");
    CHECK(vp.kind == Group::VisionAndProjector);
    ParamGroupSpec comp = ParamGroupSpec::parse("sa_proj+mlp_gate_up");
    CHECK(comp.kind == Group::Composite);
    REQUIRE(comp.members.size() == 2);
}

TEST_CASE("attention projection groups resolve to the exact tensor sets") {
    ModelConfig cfg;
    cfg.layers = 2;
    TinyLmm m = init_model(cfg, Rng(2));

    std::set<std::string> qkv = resolve_name("sa_proj_qkv", m);
    std::set<std::string> expect_qkv = {"block0.wq", "block0.wk", "block0.wv",
                                        "block1.wq", "block1.wk", "block1.wv"};
    CHECK(qkv == expect_qkv);

    std::set<std::string> sa = resolve_name("sa_proj", m);
    CHECK(sa.size() == 8);
    CHECK(sa.count("block0.wo") == 1);
    CHECK(sa.count("block1.wo") == 1);
    CHECK(subset(qkv, sa));
}

TEST_CASE("vision-side groups") {
    TinyLmm m = default_model();
    CHECK(resolve_name("vision", m) ==
          std::set<std::string>{"perception.w"});
    CHECK(resolve_name("projector", m) ==
          std::set<std::string>{"projector.w"});
    CHECK(resolve_name("vision+projector", m) ==
          std::set<std::string>{"perception.w", "projector.w"});
}

TEST_CASE("language-side groups exclude embeddings, head, and norms") {
    TinyLmm m = default_model();
    for (const char* name : {"llm", "sa_proj", "sa_proj_qkv", "mlp",
                             "mlp_gate_up"}) {
        std::set<std::string> got = resolve_name(name, m);
        CHECK(got.count("embed.w") == 0);
        CHECK(got.count("head.w") == 0);
        CHECK(got.count("perception.w") == 0);
        CHECK(got.count("projector.w") == 0);
        for (const std::string& p : got)
            CHECK(p.find(".ln") == std::string::npos);
    }
}

TEST_CASE("containment laws hold across shapes") {
    for (int layers : {1, 2, 4, 6}) {
        CAPTURE(layers);
        ModelConfig cfg;
        cfg.layers = layers;
        TinyLmm m = init_model(cfg, Rng(3));
        std::set<std::string> qkv = resolve_name("sa_proj_qkv", m);
        std::set<std::string> sa = resolve_name("sa_proj", m);
        std::set<std::string> gu = resolve_name("mlp_gate_up", m);
        std::set<std::string> mlp = resolve_name("mlp", m);
        std::set<std::string> llm = resolve_name("llm", m);
        std::set<std::string> full = resolve_name("full", m);
        CHECK(subset(qkv, sa));
        CHECK(subset(sa, llm));
        CHECK(subset(gu, mlp));
        CHECK(subset(mlp, llm));
        CHECK(subset(llm, full));
        CHECK(full.size() == canonical_param_names(cfg).size());
    }
}

TEST_CASE("composite groups take unions") {
    TinyLmm m = default_model();
    std::set<std::string> got = resolve_name("sa_proj+mlp_gate_up", m);
    std::set<std::string> sa = resolve_name("sa_proj", m);
    std::set<std::string> gu = resolve_name("mlp_gate_up", m);
    CHECK(got.size() == sa.size() + gu.size());
    CHECK(subset(sa, got));
    CHECK(subset(gu, got));
    CHECK_THROWS_AS(resolve_group(ParamGroupSpec::composite({}), m),
                    ConfigError);
}

TEST_CASE("trainable scalar counts on the default shape") {
    TinyLmm m = default_model();
    CHECK(trainable_scalar_count(m, resolve_name("mlp_gate_up", m)) == 16384);
    CHECK(trainable_scalar_count(m, resolve_name("sa_proj", m)) == 16384);
    CHECK(trainable_scalar_count(m, resolve_name("mlp", m)) == 24576);
    CHECK(trainable_scalar_count(m, resolve_name("projector", m)) == 256);
}

TEST_CASE("apply_freeze rejects unknown names and records frozen bytes") {
    TinyLmm m = default_model();
    CHECK_THROWS_AS(apply_freeze(m, {"block9.wq"}), ConfigError);
    FreezeMask mask = apply_freeze(m, {"block0.wq"});
    CHECK(mask.frozen_bytes.size() == m.params.size() - 1);
    CHECK(mask.frozen_bytes.count("block0.wq") == 0);
    CHECK_NOTHROW(assert_frozen_intact(m, mask));
    m.param("embed.w")[0] += 1.0f;
    CHECK_THROWS_AS(assert_frozen_intact(m, mask), InternalError);
}

TEST_CASE("an empty trainable set leaves the model untouched by training") {
    TinyLmm m = default_model(7);
    TinyLmm before = m;
    AdamOptimizer opt(m, apply_freeze(m, {}), TrainHyper{});
    GradMap grads;
    for (const auto& [name, p] : m.params) {
        DenseTensor g(p.shape());
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] = 0.5f;
        grads[name] = g;
    }
    for (int i = 0; i < 100; ++i) opt.step(grads);
    for (const auto& [name, p] : before.params)
        CHECK(bitwise_equal(p, m.param(name)));
}

TEST_CASE("optimizer updates exactly the unmasked parameters") {
    TinyLmm m = default_model(8);
    TinyLmm before = m;
    std::set<std::string> trainable = resolve_name("sa_proj_qkv", m);
    TrainHyper hyper;
    hyper.total_steps = 10;
    AdamOptimizer opt(m, apply_freeze(m, trainable), hyper);
    GradMap grads;
    for (const auto& [name, p] : m.params) {
        DenseTensor g(p.shape());
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] = 0.25f;
        grads[name] = g;
    }
    for (int i = 0; i < 10; ++i) opt.step(grads);
    for (const auto& [name, p] : before.params) {
        if (trainable.count(name))
            CHECK_FALSE(bitwise_equal(p, m.param(name)));
        else
            CHECK(bitwise_equal(p, m.param(name)));
    }
    CHECK(opt.steps_done() == 10);
}

TEST_CASE("learning rate warms up linearly then decays to zero on a cosine") {
    TinyLmm m = default_model(9);
    TrainHyper hyper;
    hyper.lr = 1e-2;
    hyper.warmup_frac = 0.1;
    hyper.total_steps = 100;
    AdamOptimizer opt(m, apply_freeze(m, {"embed.w"}), hyper);
    // ceil(0.1 * 100) = 10 warmup steps
    CHECK(opt.lr_at(1) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(opt.lr_at(5) == doctest::Approx(5e-3).epsilon(1e-12));
    CHECK(opt.lr_at(10) == doctest::Approx(1e-2).epsilon(1e-12));
    // Halfway through decay the cosine sits at half amplitude.
    CHECK(opt.lr_at(55) == doctest::Approx(5e-3).epsilon(1e-9));
    CHECK(opt.lr_at(100) == doctest::Approx(0.0).epsilon(1e-12));
    for (int s = 11; s <= 100; ++s) CHECK(opt.lr_at(s) <= opt.lr_at(s - 1));
}

TEST_CASE("first optimizer step matches the hand-computed update") {
    ModelConfig cfg{1, 2, 1, 2, 2, 4, 1, 1};
    TinyLmm m = init_model(cfg, Rng(10));
    float w0 = m.param("projector.w")[0];
    TrainHyper hyper;
    hyper.lr = 1e-2;
    hyper.warmup_frac = 0.0;
    hyper.total_steps = 1000;
    AdamOptimizer opt(m, apply_freeze(m, {"projector.w"}), hyper);
    GradMap grads;
    DenseTensor g(m.param("projector.w").shape());
    g[0] = 0.7f;
    grads["projector.w"] = g;
    opt.step(grads);
    double lr1 = opt.lr_at(1);
    double mhat = (0.1 * 0.7) / (1.0 - 0.9);
    double vhat = (0.001 * 0.7 * 0.7) / (1.0 - 0.999);
    double expect = w0 - lr1 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(std::abs(m.param("projector.w")[0] - expect) <= 1e-7);
}

TEST_CASE("gradient entries for missing or misshapen tensors") {
    TinyLmm m = default_model(11);
    AdamOptimizer opt(m, apply_freeze(m, {"embed.w"}), TrainHyper{});
    GradMap none;  // a batch whose tape never touched embed.w
    CHECK_NOTHROW(opt.step(none));
    GradMap bad;
    bad["embed.w"] = DenseTensor({2, 2});
    CHECK_THROWS_AS(opt.step(bad), DataError);
}
