#include <tbb/global_control.h>

#include <cmath>
#include <fstream>

#include "doctest.h"
#include "tep/config_io.hpp"
#include "tep/error.hpp"
#include "tep/fusion.hpp"
#include "tep/rng.hpp"
#include "unit/test_util.hpp"

using namespace tep;

namespace {

ModelSpec tiny_tep(std::size_t window, std::size_t features) {
    ModelSpec s;
    s.kind = ModelKind::Tep;
    s.window = window;
    s.input_features = features;
    s.tep.model_size = 8;
    s.tep.layers = 1;
    s.tep.heads = 2;
    s.tep.ff_multiplier = 2;
    return s;
}

FusionConfig three_channel_config(const PreparedSet& data, std::size_t h = 8) {
    FusionConfig c;
    c.representation_size = h;
    for (const auto& ch : data.channels) c.channels.push_back({ch.kind, tiny_tep(ch.window, 2 * ch.features)});
    return c;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Tensor t = Tensor::matrix(r, c);
    for (double& v : t.storage()) v = rng.normal();
    return t;
}

RegimeSchedule capped(RegimeSchedule s, std::size_t max_epochs) {
    for (auto& st : s.stages) st.max_epochs = max_epochs;
    return s;
}

const test_util::SmallData& shared_data() {
    static const test_util::SmallData d = test_util::small_data(test_util::small_generator(), 11);
    return d;
}

}  // namespace

TEST_CASE("multilabel loss examples") {
    const Tensor zeros = Tensor::matrix(1, 6);
    CHECK(multilabel_loss(zeros, Tensor::row({0, 0, 0, 1, 1, 1})) == doctest::Approx(6.0 * std::log(2.0)).epsilon(1e-12));

    // Per-term values against a long-double evaluation of -log sigmoid(z).
    auto term = [](double z) {
        Tensor logits = Tensor::matrix(1, 6, -40.0);
        logits[0] = z;
        Tensor y = Tensor::matrix(1, 6);
        y[0] = 1.0;
        return multilabel_loss(logits, y);
    };
    const double oracle2 = static_cast<double>(std::log1p(std::exp(-2.0L)));
    CHECK(std::abs(term(2.0) - oracle2) < 1e-12);
    CHECK(std::abs(term(2.0) - 0.12692801104297263) < 1e-12);  // frozen from the oracle above
    CHECK(std::abs(term(20.0) - 2.0611536e-9) < 1e-15);
    CHECK(term(20.0) > 0.0);
}

TEST_CASE("loss gradient is sigmoid minus target") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor logits = random_matrix(1, 6, rng);
        for (double& v : logits.storage()) v *= 4.0;
        Tensor y = Tensor::matrix(1, 6);
        for (double& v : y.storage()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
        Tape tape;
        ParamMap p{{"z", logits}};
        ParamBinder b(tape, p);
        const Var loss = multilabel_loss(b("z"), y);
        CHECK(loss.value().item() >= 0.0);
        const GradMap g = tape.backward(loss);
        for (std::size_t t = 0; t < 6; ++t) CHECK(std::abs(g.at("z")[t] - (sigmoid(logits[t]) - y[t])) < 1e-10);
    }
    CHECK_THROWS_AS(multilabel_loss(Tensor::matrix(1, 5), Tensor::matrix(1, 5)), InvalidArgument);
}

TEST_CASE("fusion shapes and projections") {
    FusionConfig c;
    c.representation_size = 72;
    ModelSpec tep = tiny_tep(12, 6);
    tep.tep.model_size = 72;
    tep.tep.heads = 4;
    ModelSpec tcn;
    tcn.kind = ModelKind::Tcn;
    tcn.window = 20;
    tcn.input_features = 4;
    c.channels = {{ChannelKind::Fundamental, tep}, {ChannelKind::Market, tep}, {ChannelKind::Pricing, tcn}};
    const auto m = init_multimodal(c, 1);
    CHECK(m.params.at("fusion.head.w").shape() == Shape{216, 6});
    CHECK(m.params.at("fusion.proj.pricing.w").shape() == Shape{32, 72});
    CHECK(m.params.count("fusion.proj.market.w") == 0);
    CHECK(param_group("fusion.proj.pricing.w") == "fusion");
    CHECK(param_group("market.enc0.attn.wq") == "market");

    Tape tape;
    ParamBinder b(tape, m.params);
    Rng rng(2);
    const Tensor f = random_matrix(12, 6, rng), mk = random_matrix(12, 6, rng), p = random_matrix(20, 4, rng);
    const auto out = multimodal_forward(b, c, {&f, &mk, &p}, Mode::Eval, nullptr);
    CHECK(out.logits.shape() == Shape{1, 6});
    CHECK(out.representations[2].shape() == Shape{20, 72});
}

TEST_CASE("fuse reduces to the pooled vector of a single active channel") {
    FusionConfig c;
    c.representation_size = 3;
    c.channels = {{ChannelKind::Fundamental, tiny_tep(4, 2)}, {ChannelKind::Market, tiny_tep(4, 2)}};
    Rng rng(5);
    ParamMap p{{"fusion.head.w", random_matrix(6, 6, rng)}, {"fusion.head.b", random_matrix(1, 6, rng)}};
    const Tensor rep = Tensor::from_rows({{1, -2, 0.5}, {3, -1, 0.25}, {0, -4, 2}});
    Tape tape;
    ParamBinder b(tape, p);
    const Tensor logits = fuse(b, c, {Var{}, tape.constant_ref(rep)}).value();
    const double pooled[3] = {3, -1, 2};
    for (std::size_t t = 0; t < 6; ++t) {
        double expect = p["fusion.head.b"][t];
        for (std::size_t k = 0; k < 3; ++k) expect += pooled[k] * p["fusion.head.w"](3 + k, t);
        CHECK(logits[t] == doctest::Approx(expect).epsilon(1e-14));
    }

    SUBCASE("duplicating a time step leaves logits unchanged") {
        const Tensor dup = Tensor::from_rows({{1, -2, 0.5}, {3, -1, 0.25}, {3, -1, 0.25}, {0, -4, 2}});
        Tape t2;
        ParamBinder b2(t2, p);
        const Tensor l2 = fuse(b2, c, {t2.constant_ref(dup), t2.constant_ref(rep)}).value();
        Tape t3;
        ParamBinder b3(t3, p);
        const Tensor l3 = fuse(b3, c, {t3.constant_ref(rep), t3.constant_ref(rep)}).value();
        CHECK(l2 == l3);
    }
    SUBCASE("width mismatch") {
        Tape t2;
        ParamBinder b2(t2, p);
        CHECK_THROWS_AS(fuse(b2, c, {t2.constant(Tensor::matrix(2, 4)), Var{}}), InvalidArgument);
    }
}

TEST_CASE("regime presets") {
    const std::vector<ChannelKind> all{ChannelKind::Fundamental, ChannelKind::Market, ChannelKind::Pricing};
    const auto r3 = RegimeSchedule::preset(Regime::R3, all);
    REQUIRE(r3.stages.size() == 3);
    CHECK(r3.stages[0].active == std::vector{ChannelKind::Pricing});
    CHECK(r3.stages[0].trainable == std::vector<std::string>{"pricing", "fusion"});
    CHECK(r3.stages[0].patience == 8);
    CHECK(r3.stages[1].active == std::vector{ChannelKind::Pricing, ChannelKind::Market});
    CHECK(r3.stages[1].trainable == std::vector<std::string>{"market", "fusion"});
    CHECK(r3.stages[1].patience == 5);
    CHECK(r3.stages[2].active.size() == 3);
    CHECK(r3.stages[2].trainable == std::vector<std::string>{"fundamental", "fusion"});
    CHECK(r3.stages[2].patience == 5);
    for (const auto& s : r3.stages) CHECK(s.max_epochs == 50);

    const auto r1 = RegimeSchedule::preset(Regime::R1, all);
    REQUIRE(r1.stages.size() == 4);
    CHECK(r1.stages[3].trainable == std::vector<std::string>{"fusion"});
    CHECK(r1.stages[3].active.size() == 3);
    const auto r2 = RegimeSchedule::preset(Regime::R2, all);
    REQUIRE(r2.stages.size() == 1);
    CHECK(r2.stages[0].trainable.size() == 4);
    CHECK(r2.stages[0].patience == 5);

    CHECK(regime_from_string("r3") == Regime::R3);
    CHECK_THROWS_AS(regime_from_string("r4"), InvalidArgument);
}

TEST_CASE("schedule validation") {
    FusionConfig c;
    c.channels = {{ChannelKind::Fundamental, tiny_tep(4, 2)}, {ChannelKind::Market, tiny_tep(4, 2)}};
    RegimeSchedule s;
    s.stages.push_back({"a", {ChannelKind::Fundamental}, {}, 5, 10});
    CHECK_THROWS_AS(s.validate(c), InvalidArgument);  // empty trainable set
    s.stages[0].trainable = {"market"};
    CHECK_THROWS_AS(s.validate(c), InvalidArgument);  // trainable but inactive
    s.stages[0].trainable = {"fusion"};
    s.stages[0].active = {ChannelKind::Pricing};
    CHECK_THROWS_AS(s.validate(c), InvalidArgument);  // no model for the channel
    s.stages[0].active = {ChannelKind::Fundamental};
    CHECK_NOTHROW(s.validate(c));
}

TEST_CASE("early stopping state machine") {
    EarlyStopping es(3);
    const std::vector<double> losses{1.0, 0.8, 0.9, 0.85, 0.8, 0.7};
    const std::vector<bool> improved{true, true, false, false, false};
    for (std::size_t i = 0; i < improved.size(); ++i) {
        CHECK(!es.should_stop());
        CHECK(es.observe(losses[i]) == improved[i]);
    }
    // Equal to the best is not an improvement: three epochs without one.
    CHECK(es.should_stop());
    CHECK(es.best_epoch() == 1);
    CHECK(es.best_loss() == 0.8);
    CHECK_THROWS_AS(EarlyStopping(0), InvalidArgument);
}

TEST_CASE("isotonic projection") {
    const PdVector v{0.1, 0.3, 0.2, 0.4, 0.35, 0.5};
    const PdVector r = isotonic_increasing(v);
    const PdVector expect{0.1, 0.25, 0.25, 0.375, 0.375, 0.5};
    for (std::size_t i = 0; i < 6; ++i) CHECK(r[i] == doctest::Approx(expect[i]).epsilon(1e-15));
    const PdVector mono{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    CHECK(isotonic_increasing(mono) == mono);
}

TEST_CASE("r3 training freezes earlier channels and restores the best epoch") {
    const auto& d = shared_data();
    const auto config = three_channel_config(d.train);
    const auto schedule = capped(RegimeSchedule::preset(Regime::R3, {ChannelKind::Fundamental, ChannelKind::Market,
                                                                     ChannelKind::Pricing}),
                                 4);
    TrainConfig tc;
    tc.seed = 5;
    tc.batch_size = 32;
    const auto init = init_multimodal(config, 5);
    const Checkpoint ck = train(d.train, d.validation, init, schedule, tc, d.stats);

    REQUIRE(ck.log.stages.size() == 3);
    for (const auto& s : ck.log.stages) {
        CHECK(s.frozen_intact());
        CHECK(!s.epochs.empty());
        CHECK(s.trainable_before != s.trainable_after);
    }
    CHECK(ck.log.stages[1].frozen_before.count("pricing.embed.w") == 1);
    CHECK(ck.log.stages[2].frozen_before.count("market.embed.w") == 1);
    CHECK(ck.log.stages[2].frozen_before.count("fusion.head.w") == 0);

    SUBCASE("the pricing model after stage 1 is untouched afterwards") {
        RegimeSchedule first;
        first.stages = {schedule.stages[0]};
        const Checkpoint solo = train(d.train, d.validation, init, first, tc, d.stats);
        for (const auto& [name, t] : solo.model.params)
            if (param_group(name) == "pricing") CHECK(ck.model.params.at(name) == t);
    }
    SUBCASE("restored weights reproduce the best validation loss") {
        const auto& last = ck.log.stages.back();
        double best = last.epochs.front().validation_loss;
        for (const auto& e : last.epochs) best = std::min(best, e.validation_loss);
        const auto pds = predict(ck, d.validation);
        double total = 0.0;
        for (std::size_t i = 0; i < pds.size(); ++i) {
            Tensor logits = Tensor::matrix(1, 6);
            for (std::size_t t = 0; t < 6; ++t) logits[t] = std::log(pds[i][t] / (1.0 - pds[i][t]));
            total += multilabel_loss(logits, d.validation.items[i].targets);
        }
        CHECK(total / static_cast<double>(pds.size()) == doctest::Approx(best).epsilon(1e-5));
        CHECK(last.best_epoch >= 1);
    }
}

TEST_CASE("training is deterministic across runs and thread counts") {
    const auto& d = shared_data();
    const auto config = three_channel_config(d.train);
    const auto schedule = capped(RegimeSchedule::preset(Regime::R2, {ChannelKind::Fundamental, ChannelKind::Market,
                                                                     ChannelKind::Pricing}),
                                 2);
    TrainConfig tc;
    tc.seed = 9;
    const auto init = init_multimodal(config, 9);
    Checkpoint a, b;
    {
        tbb::global_control one(tbb::global_control::max_allowed_parallelism, 1);
        a = train(d.train, d.validation, init, schedule, tc, d.stats);
    }
    {
        tbb::global_control four(tbb::global_control::max_allowed_parallelism, 4);
        b = train(d.train, d.validation, init, schedule, tc, d.stats);
    }
    CHECK(a.model.params == b.model.params);
    CHECK(a.log.stages[0].epochs.back().validation_loss == b.log.stages[0].epochs.back().validation_loss);
}

TEST_CASE("training errors") {
    const auto& d = shared_data();
    const auto config = three_channel_config(d.train);
    TrainConfig tc;
    auto model = init_multimodal(config, 1);
    RegimeSchedule empty;
    empty.stages.push_back({"x", {ChannelKind::Fundamental}, {}, 5, 1});
    CHECK_THROWS_AS(train(d.train, d.validation, model, empty, tc), InvalidArgument);

    const auto schedule = capped(RegimeSchedule::preset(Regime::R2, {ChannelKind::Fundamental}), 1);
    model.params.at("fundamental.embed.w")[0] = std::nan("");
    try {
        train(d.train, d.validation, model, schedule, tc);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("stage 'joint' epoch 1 batch 1") != std::string::npos);
    }
}

TEST_CASE("predict contract") {
    const auto& d = shared_data();
    const auto config = three_channel_config(d.train);
    Checkpoint ck;
    ck.model = init_multimodal(config, 4);

    SUBCASE("zeroed head gives one half") {
        ck.model.params.at("fusion.head.w").fill(0.0);
        ck.model.params.at("fusion.head.b").fill(0.0);
        for (const auto& pd : predict(ck, d.test))
            for (double p : pd) CHECK(p == 0.5);
    }
    SUBCASE("shifting every logit up raises every PD") {
        const auto before = predict(ck, d.test);
        for (double& v : ck.model.params.at("fusion.head.b").storage()) v += 0.3;
        const auto after = predict(ck, d.test);
        for (std::size_t i = 0; i < before.size(); ++i)
            for (std::size_t t = 0; t < 6; ++t) {
                CHECK(after[i][t] > before[i][t]);
                CHECK(after[i][t] < 1.0);
            }
    }
    SUBCASE("schema mismatch") {
        PreparedSet missing = d.test;
        missing.channels.pop_back();
        for (auto& it : missing.items) it.inputs.pop_back();
        CHECK_THROWS_AS(predict(ck, missing), InvalidArgument);
        FusionConfig wrong = config;
        wrong.channels[0].spec.window += 1;
        CHECK_THROWS_AS(predict(init_multimodal(wrong, 1), d.test), InvalidArgument);
    }
}

TEST_CASE("checkpoint round trip is bitwise") {
    const auto& d = shared_data();
    const auto config = three_channel_config(d.train);
    TrainConfig tc;
    tc.seed = 21;
    const auto schedule = capped(RegimeSchedule::preset(Regime::R3, {ChannelKind::Fundamental, ChannelKind::Market,
                                                                     ChannelKind::Pricing}),
                                 1);
    const Checkpoint ck = train(d.train, d.validation, init_multimodal(config, 21), schedule, tc, d.stats);
    const auto dir = test_util::temp_dir("fusion_ckpt");
    save_checkpoint(ck, dir / "model.tepc");
    const Checkpoint back = load_checkpoint(dir / "model.tepc");

    CHECK(back.model.params == ck.model.params);
    CHECK(back.stats == ck.stats);
    CHECK(to_json(back.model.config) == to_json(ck.model.config));
    CHECK(to_json(back.schedule) == to_json(ck.schedule));
    CHECK(to_json(back.train) == to_json(ck.train));
    REQUIRE(back.log.stages.size() == 3);
    CHECK(back.log.stages[2].frozen_after == ck.log.stages[2].frozen_after);
    CHECK(back.log.stages[0].epochs[0].validation_loss == ck.log.stages[0].epochs[0].validation_loss);

    const auto p1 = predict(ck, d.test);
    const auto p2 = predict(back, d.test);
    CHECK(p1 == p2);

    // Saving again produces identical bytes.
    save_checkpoint(back, dir / "again.tepc");
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(f), {});
    };
    CHECK(slurp(dir / "model.tepc") == slurp(dir / "again.tepc"));

    SUBCASE("corruption is rejected") {
        std::string bytes = slurp(dir / "model.tepc");
        std::string bad = bytes;
        bad[0] = 'X';
        std::ofstream(dir / "bad.tepc", std::ios::binary) << bad;
        CHECK_THROWS_AS(load_checkpoint(dir / "bad.tepc"), InvalidArgument);
        std::ofstream(dir / "short.tepc", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
        CHECK_THROWS_AS(load_checkpoint(dir / "short.tepc"), InvalidArgument);
        CHECK_THROWS_AS(load_checkpoint(dir / "absent.tepc"), InvalidArgument);
    }
}

TEST_CASE("config codecs round trip and report key paths") {
    FusionConfig c;
    c.representation_size = 16;
    ModelSpec s = tiny_tep(12, 6);
    s.nn.hidden = {7, 3};
    c.channels = {{ChannelKind::Pricing, s}, {ChannelKind::Fundamental, tiny_tep(12, 4)}};
    FusionConfig back;
    from_json(to_json(c), "fusion", back);
    CHECK(to_json(back) == to_json(c));
    CHECK(back.channels[0].channel == ChannelKind::Pricing);

    GeneratorConfig g;
    g.alpha_pricing = 0.123456789012345;
    GeneratorConfig gb;
    from_json(to_json(g), "generator", gb);
    CHECK(gb.alpha_pricing == g.alpha_pricing);

    auto key_of = [](auto& out, const std::string& text) {
        try {
            from_json(text, "cfg", out);
        } catch (const ConfigError& e) {
            return e.key_path();
        }
        return std::string("<none>");
    };
    GeneratorConfig gg;
    CHECK(key_of(gg, R"({"firms": 10, "colour": 1})") == "cfg.colour");
    CHECK(key_of(gg, R"({"firms": "ten"})") == "cfg.firms");
    ModelSpec ms;
    CHECK(key_of(ms, R"({"kind": "tep", "window": 4, "input_features": 2, "tep": {"headz": 2}})") == "cfg.tep.headz");
    CHECK(key_of(ms, R"({"kind": "gru"})") == "cfg.kind");
    CHECK(key_of(ms, R"({"kind": "tep", "window": 4, "input_features": 2, "tep": {"heads": 5}})") == "cfg");
    TrainConfig tc;
    CHECK(key_of(tc, R"({"batch_size": 0})") == "cfg.batch_size");
    CHECK(key_of(tc, R"({"optimizer": "rmsprop"})") == "cfg.optimizer");
}
