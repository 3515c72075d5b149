#include <cmath>

#include "doctest.h"
#include "tep/error.hpp"
#include "tep/metrics.hpp"
#include "tep/rng.hpp"
#include "unit/test_util.hpp"

using namespace tep;

namespace {

TrainerConfig tiny_trainer(std::size_t epochs = 2) {
    TrainerConfig c;
    ModelSpec s;
    s.tep.model_size = 8;
    s.tep.layers = 1;
    s.tep.heads = 2;
    s.tep.ff_multiplier = 2;
    for (auto k : {ChannelKind::Fundamental, ChannelKind::Market, ChannelKind::Pricing}) c.models[k] = s;
    c.representation_size = 8;
    c.max_epochs = epochs;
    return c;
}

std::vector<TargetVector> targets_from(const Dataset& d) {
    std::vector<TargetVector> t;
    for (const auto& o : d.observations) t.push_back(o.target);
    return t;
}

}  // namespace

TEST_CASE("roc_auc examples") {
    CHECK(roc_auc({0.9, 0.8, 0.1}, {1, 0, 0}) == 1.0);
    CHECK(roc_auc({0.9, 0.8, 0.1}, {0, 1, 0}) == 0.5);
    CHECK(roc_auc({0.3, 0.3, 0.3, 0.3}, {1, 0, 1, 0}) == 0.5);
    CHECK(roc_auc({0.1, 0.9}, {1, 0}) == 0.0);
    CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {1, 1}), InvalidArgument);
    CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {1, 2}), InvalidArgument);
    CHECK_THROWS_AS(roc_auc({0.1}, {1, 0}), InvalidArgument);
}

TEST_CASE("roc_auc matches the pairwise oracle with ties") {
    Rng rng(123);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(999);
        const std::size_t levels = 1 + rng.below(trial % 2 ? 5 : 1000);  // coarse levels force ties
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.below(levels)) / static_cast<double>(levels);
            y[i] = rng.bernoulli(0.3) ? 1 : 0;
        }
        y[0] = 1;
        y[1] = 0;
        const double auc = roc_auc(s, y);
        CHECK(std::abs(auc - test_util::pairwise_auc(s, y)) < 1e-12);

        // Strictly increasing transforms leave the ranking, hence the AUC, unchanged.
        std::vector<double> t(n);
        for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(3.0 * s[i]) + s[i] * s[i] * s[i];
        CHECK(roc_auc(t, y) == auc);
    }
}

TEST_CASE("roc_auc of negated scores is the complement without ties") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> s(200), neg(200);
        std::vector<int> y(200);
        for (std::size_t i = 0; i < s.size(); ++i) {
            s[i] = rng.normal();
            neg[i] = -s[i];
            y[i] = i % 3 == 0 ? 1 : 0;
        }
        CHECK(roc_auc(s, y) + roc_auc(neg, y) == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("gini") {
    CHECK(gini(0.5) == 0.0);
    CHECK(gini(1.0) == 1.0);
    CHECK(gini(0.0) == -1.0);
    CHECK(gini(0.791) == doctest::Approx(0.582).epsilon(1e-12));
}

TEST_CASE("report layout") {
    CHECK(report_csv_header() == "Average,d_3m,d_6m,d_9m,d_1y,d_2y,d_3y");
    HorizonReport r;
    r.horizons[0].auc = 0.75;
    r.horizons[5].auc = 0.5;
    r.average = 0.625;
    CHECK(report_csv_row("tep", r) == "tep,0.625,0.75,NA,NA,NA,NA,0.5");
}

TEST_CASE("evaluate oracle and random scorers") {
    const Dataset d = generate_synthetic(GeneratorConfig{}, {12, 21}, 5);
    std::vector<double> oracle;
    for (const auto& o : d.observations) oracle.push_back(o.oracle_score);
    const auto r = evaluate_scores(oracle, targets_from(d));
    REQUIRE(r.horizons[0].auc);
    CHECK(*r.horizons[0].auc > 0.9);
    CHECK(r.horizons[0].positives + r.horizons[0].negatives == d.observations.size());

    // Uninformative scores: the five-seed mean sits at 0.5 on every horizon.
    std::array<double, kHorizons> mean{};
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed, "random-scorer");
        std::vector<double> noise(d.observations.size());
        for (double& v : noise) v = rng.uniform();
        const auto rr = evaluate_scores(noise, targets_from(d));
        for (std::size_t h = 0; h < kHorizons; ++h) mean[h] += *rr.horizons[h].auc / 5.0;
    }
    for (double m : mean) CHECK(std::abs(m - 0.5) < 0.05);
}

TEST_CASE("single-class horizons are NA and excluded from the average") {
    std::vector<TargetVector> t(4);
    t[0].y = {0, 0, 0, 0, 1, 1};
    t[1].y = {0, 0, 0, 0, 0, 1};
    const auto r = evaluate_scores({0.9, 0.5, 0.2, 0.1}, t);
    for (std::size_t h = 0; h < 4; ++h) CHECK(!r.horizons[h].auc);
    CHECK(*r.horizons[4].auc == 1.0);
    CHECK(*r.horizons[5].auc == 1.0);
    CHECK(*r.average == 1.0);
    CHECK(r.warnings.size() == 4);
}

TEST_CASE("fold summaries") {
    auto report = [](double auc) {
        HorizonReport r;
        for (auto& h : r.horizons) h.auc = auc;
        r.average = auc;
        return r;
    };
    SUBCASE("sample standard deviation") {
        const auto cv = summarize_folds({report(0.7), report(0.8), report(0.9)});
        CHECK(*cv.horizons[0].mean == doctest::Approx(0.8).epsilon(1e-15));
        // sqrt(((0.1)^2 + 0 + (0.1)^2) / 2) = 0.1
        CHECK(*cv.horizons[0].std == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(format_mean_std(cv.average) == "0.800 (0.100)");
    }
    SUBCASE("identical folds have zero spread") {
        const auto cv = summarize_folds({report(0.83), report(0.83), report(0.83), report(0.83)});
        CHECK(*cv.average.std == 0.0);
    }
    SUBCASE("NA folds are skipped with a warning") {
        auto r = report(0.6);
        r.horizons[2].auc.reset();
        const auto cv = summarize_folds({report(0.8), r});
        CHECK(cv.horizons[2].count == 1);
        CHECK(*cv.horizons[2].mean == 0.8);
        CHECK(!cv.horizons[2].std);
        CHECK(cv.warnings.size() == 1);
    }
}

TEST_CASE("cross_validate runs k folds") {
    const auto g = test_util::small_generator(60);
    const Dataset d = generate_synthetic(g, {4, 42}, 3);
    const auto cfg = tiny_trainer(1);
    const auto cv = cross_validate(d, 3, {ChannelKind::Fundamental}, cfg, 3);
    CHECK(cv.folds.size() == 3);
    CHECK(cv.average.count == 3);
    const std::string csv = cv_csv(cv);
    CHECK(csv.rfind("Statistic,Average,d_3m", 0) == 0);
    CHECK(cv_csv(cross_validate(d, 3, {ChannelKind::Fundamental}, cfg, 3)) == csv);
    CHECK(cross_validate(d, 2, {ChannelKind::Fundamental}, cfg, 3).folds.size() == 2);
    CHECK_THROWS_AS(cross_validate(d, 1, {ChannelKind::Fundamental}, cfg, 3), InvalidArgument);
}

TEST_CASE("window sweep grid") {
    auto g = test_util::small_generator(50);
    const RawPanel raw = generate_raw(g, 4);
    const auto cfg = tiny_trainer(1);
    const auto points = window_sweep(raw, 4, ModelKind::Tep, {21, 42}, cfg, 4);
    REQUIRE(points.size() == 2);
    const std::string csv = sweep_csv(points, "tep");
    CHECK(csv.rfind("Model,Horizon,21d,42d\ntep,Average,", 0) == 0);
    CHECK(window_label(63) == "3m");
    CHECK(window_label(504) == "2y");

    // One window size reproduces a direct fit on that configuration.
    const auto single = window_sweep(raw, 4, ModelKind::Tep, {42}, cfg, 4);
    const auto direct = fit_evaluate(assemble_dataset(raw, {4, 42}), {ChannelKind::Pricing}, cfg, 4);
    CHECK(single[0].report.average == direct.report.average);
    CHECK(single[0].report.average == points[1].report.average);

    CHECK_THROWS_AS(window_sweep(raw, 4, ModelKind::Tep, {100000}, cfg, 4), InvalidArgument);
}
