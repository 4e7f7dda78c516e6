#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "dlab/eval.hpp"
#include "dlab/sequence.hpp"

using namespace dlab;

namespace {

std::vector<SyntheticTaskSpec> tiny_stages(const std::string& order) {
    return curriculum_stages(order, 1234, 16, 8);
}

SyntheticTaskSpec tiny_held_out() { return held_out_spec(1234, 16, 8); }

TrainSettings tiny_settings() {
    TrainSettings s;
    s.batch_size = 8;
    return s;
}

TinyLmm tiny_base(std::uint64_t seed = 77) {
    return init_model(ModelConfig{}, Rng(seed));
}

}  // namespace

TEST_CASE("mitigation names round trip") {
    for (const char* name : {"none", "lora", "wise_ft", "moe", "lwf"}) {
        MitigationKind kind = mitigation_from_name(name);
        CHECK(mitigation_name(kind) == name);
    }
    CHECK_THROWS_AS(mitigation_from_name("ewc"), ConfigError);
}

TEST_CASE("curriculum orders cover the same tasks in different positions") {
    std::vector<SyntheticTaskSpec> def = tiny_stages("default");
    REQUIRE(def.size() == 5);
    CHECK(def[0].name == "classify");
    CHECK(def[1].name == "count");
    CHECK(def[2].name == "classify2");
    CHECK(def[3].name == "copy");
    CHECK(def[4].name == "clock");
    CHECK(def[0].kind == TaskKind::Classify);
    CHECK(def[2].kind == TaskKind::Classify);
    CHECK(def[2].seed != def[0].seed);  // a second, distinct classify task

    std::vector<SyntheticTaskSpec> alt1 = tiny_stages("alt1");
    std::vector<SyntheticTaskSpec> alt2 = tiny_stages("alt2");
    std::set<std::string> names;
    for (const auto& s : def) names.insert(s.name);
    std::set<std::string> names1, names2;
    for (const auto& s : alt1) names1.insert(s.name);
    for (const auto& s : alt2) names2.insert(s.name);
    CHECK(names == names1);
    CHECK(names == names2);
    CHECK(alt1[0].name != def[0].name);
    CHECK(alt2[0].name != def[0].name);

    // Each name keeps its seed regardless of position.
    for (const auto& s : alt1)
        for (const auto& d : def)
            if (s.name == d.name) CHECK(s.seed == d.seed);

    CHECK_THROWS_AS(curriculum_stages("alt3", 1, 4, 4), ConfigError);
}

TEST_CASE("the held-out task is caption-style and never in the curriculum") {
    SyntheticTaskSpec held = tiny_held_out();
    CHECK(held.kind == TaskKind::CaptionHeldOut);
    CHECK(held.name == "caption");
    for (const auto& s : tiny_stages("default"))
        CHECK(s.kind != TaskKind::CaptionHeldOut);
}

TEST_CASE("training validates its inputs") {
    TinyLmm m = tiny_base();
    SyntheticTaskSpec spec = tiny_stages("default")[1];
    TaskData data = generate_task(spec, m.cfg.visual_tokens, m.cfg.d_v);
    Rng data_rng(1), distill_rng(2);
    std::set<std::string> trainable = {"block0.wq"};

    TaskDataset empty;
    CHECK_THROWS_AS(train_steps(m, empty, trainable, tiny_settings(), 1,
                                nullptr, DistillConfig{}, 0.0, data_rng,
                                distill_rng, nullptr, 1),
                    DataError);
    CHECK_THROWS_AS(train_steps(m, data.train, trainable, tiny_settings(), 0,
                                nullptr, DistillConfig{}, 0.0, data_rng,
                                distill_rng, nullptr, 1),
                    ConfigError);
    CHECK_THROWS_AS(train_steps(m, data.train, trainable, tiny_settings(), 1,
                                nullptr, DistillConfig{}, 0.5, data_rng,
                                distill_rng, nullptr, 1),
                    ConfigError);  // distillation needs a teacher
}

TEST_CASE("training with an empty trainable set is a frozen no-op") {
    TinyLmm m = tiny_base(78);
    TinyLmm before = m;
    SyntheticTaskSpec spec = tiny_stages("default")[0];
    TaskData data = generate_task(spec, m.cfg.visual_tokens, m.cfg.d_v);
    Rng data_rng(3), distill_rng(4);
    StageOutcome out =
        train_steps(m, data.train, {}, tiny_settings(), 2, nullptr,
                    DistillConfig{}, 0.0, data_rng, distill_rng, nullptr, 1);
    CHECK(out.steps == 2);
    for (const auto& [name, p] : before.params)
        CHECK(bitwise_equal(p, m.param(name)));
    CHECK(evaluate(m, data.eval) == evaluate(before, data.eval));
}

TEST_CASE("training a group moves only that group and reports a loss") {
    TinyLmm m = tiny_base(79);
    TinyLmm before = m;
    SyntheticTaskSpec spec = tiny_stages("default")[1];
    TaskData data = generate_task(spec, m.cfg.visual_tokens, m.cfg.d_v);
    std::set<std::string> trainable =
        resolve_group(ParamGroupSpec::parse("mlp"), m);
    Rng data_rng(5), distill_rng(6);
    DataAccessLog log;
    StageOutcome out =
        train_steps(m, data.train, trainable, tiny_settings(), 4, nullptr,
                    DistillConfig{}, 0.0, data_rng, distill_rng, &log, 3);
    CHECK(out.steps == 4);
    CHECK(out.final_loss > 0.0);
    CHECK(std::isfinite(out.final_loss));
    REQUIRE(log.touches.size() == 4);
    for (const auto& touch : log.touches) {
        CHECK(touch.stage == 3);
        CHECK(touch.dataset == data.train.name);
    }
    bool moved = false;
    for (const auto& [name, p] : before.params) {
        if (trainable.count(name))
            moved = moved || !bitwise_equal(p, m.param(name));
        else
            CHECK(bitwise_equal(p, m.param(name)));
    }
    CHECK(moved);
}

TEST_CASE("a full curriculum run produces a square matrix and checkpoints") {
    TinyLmm base = tiny_base(80);
    SequenceOutcome out = run_sequence(
        base, tiny_stages("default"), {tiny_held_out()},
        ParamGroupSpec::parse("sa_proj"), MitigationSpec{}, tiny_settings(),
        Rng(42));

    REQUIRE(out.matrix.rows.size() == 6);
    REQUIRE(out.matrix.columns.size() == 6);
    CHECK(out.matrix.columns.back() == "held_out");
    CHECK(out.matrix.columns[0] == "classify");
    for (const auto& row : out.matrix.rows) {
        REQUIRE(row.size() == 6);
        for (double v : row) {
            CHECK(v >= 0.0);
            CHECK(v <= 100.0);
        }
    }
    REQUIRE(out.checkpoints.size() == 6);

    SequenceMetrics again = compute_metrics(out.matrix);
    CHECK(again.target_learning == out.metrics.target_learning);
    CHECK(again.target_forgetting == out.metrics.target_forgetting);
    CHECK(again.target_overall == out.metrics.target_overall);
    CHECK(again.held_out_forgetting == out.metrics.held_out_forgetting);

    // Every training touch stays inside its own stage's dataset.
    std::vector<SyntheticTaskSpec> stages = tiny_stages("default");
    CHECK_FALSE(out.log.touches.empty());
    for (const auto& touch : out.log.touches) {
        REQUIRE(touch.stage >= 1);
        REQUIRE(touch.stage <= 5);
        CHECK(touch.dataset == stages[static_cast<std::size_t>(touch.stage - 1)].name);
    }
}

TEST_CASE("sequence runs are deterministic") {
    TinyLmm base = tiny_base(81);
    auto run = [&]() {
        return run_sequence(base, tiny_stages("default"), {tiny_held_out()},
                            ParamGroupSpec::parse("mlp_gate_up"),
                            MitigationSpec{}, tiny_settings(), Rng(7));
    };
    SequenceOutcome a = run();
    SequenceOutcome b = run();
    CHECK(a.matrix.rows == b.matrix.rows);
    REQUIRE(a.checkpoints.size() == b.checkpoints.size());
    for (std::size_t i = 0; i < a.checkpoints.size(); ++i)
        for (const auto& [name, p] : a.checkpoints[i].params)
            CHECK(bitwise_equal(p, b.checkpoints[i].param(name)));
}

TEST_CASE("a task may not repeat within a sequence") {
    TinyLmm base = tiny_base(82);
    std::vector<SyntheticTaskSpec> stages = tiny_stages("default");
    stages[2] = stages[0];  // same kind and seed twice
    CHECK_THROWS_AS(
        run_sequence(base, stages, {tiny_held_out()},
                     ParamGroupSpec::parse("mlp"), MitigationSpec{},
                     tiny_settings(), Rng(1)),
        ConfigError);
}

TEST_CASE("single-stage runs work with every mitigation") {
    TinyLmm base = tiny_base(83);
    std::vector<SyntheticTaskSpec> one = {tiny_stages("default")[1]};
    for (const char* name : {"none", "lora", "wise_ft", "moe", "lwf"}) {
        CAPTURE(name);
        MitigationSpec spec;
        spec.kind = mitigation_from_name(name);
        SequenceOutcome out = run_sequence(
            base, one, {tiny_held_out()}, ParamGroupSpec::parse("mlp"), spec,
            tiny_settings(), Rng(9));
        REQUIRE(out.matrix.rows.size() == 2);
        REQUIRE(out.matrix.rows[1].size() == 2);
        CHECK(out.metrics.target_forgetting == 0.0);
        CHECK(out.metrics.target_overall ==
              doctest::Approx(out.metrics.target_learning));
        // Stage checkpoints never carry unmerged adapters.
        for (const TinyLmm& ckpt : out.checkpoints)
            CHECK(ckpt.lora_targets.empty());
        if (spec.kind == MitigationKind::Moe)
            CHECK(out.checkpoints.back().moe);
    }
}

TEST_CASE("pretraining produces a deterministic caption-competent base") {
    ModelConfig cfg;
    TrainSettings settings = tiny_settings();
    TinyLmm a = make_pretrained_base(cfg, Rng(4), 3, settings, 16);
    TinyLmm b = make_pretrained_base(cfg, Rng(4), 3, settings, 16);
    TinyLmm c = make_pretrained_base(cfg, Rng(5), 3, settings, 16);
    bool same = true, other = false;
    for (const auto& [name, p] : a.params) {
        same = same && bitwise_equal(p, b.param(name));
        other = other || !bitwise_equal(p, c.param(name));
    }
    CHECK(same);
    CHECK(other);
    CHECK(a.cfg == cfg);
}
