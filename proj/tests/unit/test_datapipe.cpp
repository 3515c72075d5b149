#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "tep/datapipe.hpp"
#include "tep/error.hpp"
#include "test_util.hpp"

using namespace tep;
namespace fs = std::filesystem;

namespace {

std::array<std::uint8_t, kHorizons> bits(std::initializer_list<int> v) {
    std::array<std::uint8_t, kHorizons> out{};
    std::size_t i = 0;
    for (int b : v) out[i++] = static_cast<std::uint8_t>(b);
    return out;
}

GeneratorConfig small_generator() {
    GeneratorConfig g;
    g.firms = 60;
    g.history_quarters = 12;
    g.observation_quarters = 6;
    return g;
}

PanelConfig small_panel() { return {12, 126}; }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ChannelPanel panel_of(std::vector<std::vector<double>> rows) {
    ChannelPanel p;
    p.values = Tensor::matrix(rows.size(), rows.front().size());
    p.missing.assign(p.values.size(), 0);
    for (std::size_t t = 0; t < rows.size(); ++t)
        for (std::size_t j = 0; j < rows[t].size(); ++j) {
            if (std::isnan(rows[t][j]))
                p.missing[t * rows[t].size() + j] = 1;
            else
                p.values(t, j) = rows[t][j];
        }
    return p;
}

}  // namespace

TEST_CASE("dates parse strictly and add calendar months with end-of-month clamping") {
    CHECK(Date::parse("2020-01-31").add_months(1) == Date(2020, 2, 29));
    CHECK(Date::parse("2021-01-31").add_months(1) == Date(2021, 2, 28));
    CHECK(Date(2019, 11, 15).add_months(3).to_string() == "2020-02-15");
    CHECK_THROWS_AS(Date::parse("2020-13-01"), InvalidArgument);
    CHECK_THROWS_AS(Date::parse("2020-1-01"), InvalidArgument);
    CHECK_THROWS_AS(Date::parse("2020-02-30"), InvalidArgument);
    CHECK(Date(2024, 6, 8).is_weekday() == false);
    CHECK(Date(2024, 6, 7).next_weekday() == Date(2024, 6, 10));
}

TEST_CASE("targets: default 10 months after observation") {
    const Date obs(2010, 3, 31);
    const TargetVector t = build_targets(obs, Date(2011, 1, 31));
    CHECK(t.y == bits({0, 0, 0, 1, 1, 1}));
    REQUIRE(t.default_offset_months.has_value());
    CHECK(*t.default_offset_months == doctest::Approx(10.0));
}

TEST_CASE("targets: default at 18 months and no default") {
    const Date obs(2012, 6, 15);
    CHECK(build_targets(obs, obs.add_months(18)).y == bits({0, 0, 0, 0, 1, 1}));
    const TargetVector none = build_targets(obs, std::nullopt);
    CHECK(none.y == bits({0, 0, 0, 0, 0, 0}));
    CHECK_FALSE(none.default_offset_months.has_value());
}

TEST_CASE("targets: horizon boundaries are inclusive") {
    const Date obs(2015, 8, 31);
    for (std::size_t h = 0; h < kHorizons; ++h) {
        const Date at = obs.add_months(kHorizonMonths[h]);
        CHECK(build_targets(obs, at).y[h] == 1);
        CHECK(build_targets(obs, at.add_days(1)).y[h] == 0);
    }
    CHECK_THROWS_AS(build_targets(obs, obs.add_days(-1)), InvalidArgument);
}

TEST_CASE("quantiles interpolate linearly between order statistics") {
    const std::vector<double> s{1, 2, 3, 4};
    // Positions (n-1)q: 1.5 for the median, 0.75 and 2.25 for the quartiles.
    CHECK(quantile_sorted(s, 0.5) == 2.5);
    CHECK(quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25) == 1.5);
    CHECK(quantile_sorted({7}, 0.3) == 7);
}

TEST_CASE("fit: median/IQR per feature, constant features flagged degenerate, missing cells skipped") {
    const double nan = std::nan("");
    ChannelPanel a = panel_of({{1, 5, nan}, {2, 5, 9}});
    ChannelPanel b = panel_of({{3, 5, nan}, {4, 5, nan}});
    auto stats = fit_feature_stats({&a, &b});
    CHECK(stats[0].median == 2.5);
    CHECK(stats[0].iqr == 1.5);
    CHECK_FALSE(stats[0].degenerate);
    CHECK(stats[1].iqr == 0.0);
    CHECK(stats[1].degenerate);
    CHECK(stats[2].median == 9.0);
    CHECK(stats[2].degenerate);
    CHECK_THROWS_AS(fit_feature_stats({}), InvalidArgument);
    Dataset empty;
    CHECK_THROWS_AS(fit_preprocess(empty), InvalidArgument);
}

TEST_CASE("apply: centring, clamping, imputation with indicators") {
    const double nan = std::nan("");
    const std::vector<FeatureStats> stats{{2.5, 1.5, false}, {5.0, 0.0, true}};
    ChannelPanel p = panel_of({{2.5, 5.0}, {2.5 + 10 * 1.5, 5.5}, {nan, 100.0}, {2.5 - 3.0, nan}});
    Tensor out = apply_preprocess(p, stats);
    REQUIRE(out.shape() == Shape{4, 4});
    CHECK(out(0, 0) == 0.0);
    CHECK(out(1, 0) == 6.0);
    CHECK(out(1, 1) == 0.5);  // degenerate: x - median
    CHECK(out(2, 0) == 0.0);
    CHECK(out(2, 2) == 1.0);
    CHECK(out(2, 1) == 6.0);  // degenerate features are clamped too
    CHECK(out(3, 0) == -2.0);
    CHECK(out(3, 3) == 1.0);
    CHECK(out(0, 2) == 0.0);
    CHECK_THROWS_AS(apply_preprocess(p, {stats[0]}), InvalidArgument);
}

TEST_CASE("folds: 20 firms with 10 defaulters, k = 2") {
    std::map<std::string, bool> flags;
    for (int i = 0; i < 20; ++i) flags["firm" + std::to_string(i)] = i < 10;
    const FoldAssignment folds = assign_folds(flags, 2, 99);
    std::size_t defaulters[2] = {0, 0}, total[2] = {0, 0};
    for (const auto& [firm, fold] : folds) {
        ++total[fold];
        if (flags.at(firm)) ++defaulters[fold];
    }
    CHECK(defaulters[0] == 5);
    CHECK(defaulters[1] == 5);
    CHECK(total[0] == 10);
    CHECK(assign_folds(flags, 2, 99) == folds);
    CHECK_THROWS_AS(assign_folds(flags, 21, 1), InvalidArgument);
    CHECK_THROWS_AS(assign_folds(flags, 1, 1), InvalidArgument);
}

TEST_CASE("folds: k = 10 on generated data, every firm exactly once, balanced defaulters") {
    const Dataset ds = generate_synthetic(small_generator(), small_panel(), 4);
    const auto flags = defaulted_ever(ds);
    const FoldAssignment folds = assign_folds(flags, 10, 17);
    CHECK(folds.size() == ds.firm_ids().size());
    std::vector<std::size_t> per_fold(10, 0);
    std::size_t total = 0;
    for (const auto& [firm, fold] : folds) {
        REQUIRE(fold < 10);
        if (flags.at(firm)) ++per_fold[fold], ++total;
    }
    const auto [lo, hi] = std::minmax_element(per_fold.begin(), per_fold.end());
    CHECK(*hi - *lo <= 1);
    CHECK(total > 0);
}

TEST_CASE("split by firm: disjoint 60/20/20") {
    const Dataset ds = generate_synthetic(small_generator(), small_panel(), 5);
    const Split s = split_by_firm(ds, 3);
    CHECK(s.train.size() == 36);
    CHECK(s.validation.size() == 12);
    CHECK(s.test.size() == 12);
    std::set<std::string> all(s.train.begin(), s.train.end());
    all.insert(s.validation.begin(), s.validation.end());
    all.insert(s.test.begin(), s.test.end());
    CHECK(all.size() == 60);
}

TEST_CASE("preprocessing statistics depend only on the training split") {
    const Dataset ds = generate_synthetic(small_generator(), small_panel(), 6);
    const Split s = split_by_firm(ds, 1);
    const PreprocessStats before = fit_preprocess(ds.subset(s.train));
    Dataset perturbed = ds;
    const std::set<std::string> test(s.test.begin(), s.test.end());
    for (auto& o : perturbed.observations)
        if (test.count(o.firm_id))
            for (auto& p : o.panels)
                for (double& v : p.values.storage()) v = v * 1000.0 + 7.0;
    CHECK(fit_preprocess(perturbed.subset(s.train)) == before);
}

TEST_CASE("generated data: monotone targets, bounded scaled values, binary indicators") {
    const Dataset ds = generate_synthetic(small_generator(), small_panel(), 8);
    REQUIRE(!ds.observations.empty());
    std::size_t positives = 0;
    for (const auto& o : ds.observations) {
        CHECK(o.target.monotone());
        positives += o.target.y[5];
    }
    CHECK(positives > 0);
    const PreparedSet prepared = prepare(ds, fit_preprocess(ds));
    for (const auto& item : prepared.items) {
        for (std::size_t c = 0; c < item.inputs.size(); ++c) {
            const Tensor& x = item.inputs[c];
            const std::size_t f = x.cols() / 2;
            for (std::size_t t = 0; t < x.rows(); ++t) {
                for (std::size_t j = 0; j < f; ++j) {
                    CHECK(std::abs(x(t, j)) <= 6.0);
                    const double ind = x(t, f + j);
                    CHECK((ind == 0.0 || ind == 1.0));
                }
            }
        }
    }
}

TEST_CASE("targets over many generated panels are monotone") {
    GeneratorConfig g = small_generator();
    g.firms = 200;
    std::size_t n = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        for (const auto& o : generate_synthetic(g, small_panel(), seed).observations) {
            REQUIRE(o.target.monotone());
            ++n;
        }
    }
    CHECK(n > 1000);
}

TEST_CASE("no lookahead: every panel ends at the last row on or before the observation date") {
    const RawPanel raw = generate_raw(small_generator(), 9);
    const Dataset ds = assemble_dataset(raw, small_panel());
    std::map<std::string, const FirmRecord*> firms;
    for (const auto& f : raw.firms) firms[f.firm_id] = &f;
    const std::size_t pc = ds.channel_index(ChannelKind::Pricing);
    const std::size_t fc = ds.channel_index(ChannelKind::Fundamental);
    for (const auto& o : ds.observations) {
        const FirmRecord& firm = *firms.at(o.firm_id);
        auto it = std::upper_bound(firm.pricing.begin(), firm.pricing.end(), o.date,
                                   [](Date d, const PriceRow& r) { return d < r.date; });
        REQUIRE(it != firm.pricing.begin());
        const PriceRow& last = *(it - 1);
        CHECK(last.date <= o.date);
        const Tensor& pv = o.panels[pc].values;
        CHECK(pv(pv.rows() - 1, 2) == last.close);
        if (it != firm.pricing.end()) CHECK(it->date > o.date);
        // Fundamental panel ends at the report dated exactly on the observation date.
        const auto& rows = firm.quarterly[0];
        auto q = std::find_if(rows.begin(), rows.end(), [&](const QuarterlyRow& r) { return r.date == o.date; });
        REQUIRE(q != rows.end());
        const ChannelPanel& fp = o.panels[fc];
        for (std::size_t j = 0; j < fp.values.cols(); ++j) {
            const bool missing = fp.missing[(fp.values.rows() - 1) * fp.values.cols() + j];
            CHECK(missing == std::isnan(q->values[j]));
            if (!missing) CHECK(fp.values(fp.values.rows() - 1, j) == q->values[j]);
        }
        if (firm.default_date) CHECK(o.date < *firm.default_date);
    }
}

TEST_CASE("assembly: pricing rows after the observation date are excluded; short history is dropped") {
    RawPanel raw;
    raw.present = {true, false, true, false};
    raw.features = {1, 0, 3, 0};
    FirmRecord a;
    a.firm_id = "A";
    Date d(2020, 1, 6);
    for (int q = 0; q < 3; ++q) a.quarterly[0].push_back({d.add_days(7L * q), {double(q)}});
    for (int i = 0; i < 30; ++i) a.pricing.push_back({d.add_days(i), 1.0 + i, 0.5 + i, 0.75 + i});
    FirmRecord b;
    b.firm_id = "B";
    for (int q = 0; q < 2; ++q) b.quarterly[0].push_back({d.add_days(7L * q), {double(q)}});
    for (int i = 0; i < 30; ++i) b.pricing.push_back({d.add_days(i), 2.0, 1.0, 1.5});
    raw.firms = {a, b};

    const Dataset ds = assemble_dataset(raw, {3, 5});
    REQUIRE(ds.observations.size() == 1);
    const Observation& o = ds.observations[0];
    CHECK(o.firm_id == "A");
    CHECK(o.date == d.add_days(14));
    const Tensor& pv = o.panels[1].values;
    CHECK(pv(4, 2) == 0.75 + 14);  // price row dated exactly on the observation date
    CHECK(pv(0, 2) == 0.75 + 10);
    CHECK(ds.report.candidates == 5);
    CHECK(ds.report.dropped_min_history == 4);  // A's first two reports and both of B's
}

TEST_CASE("generation is deterministic and CSVs round-trip exactly") {
    const fs::path dir = test_util::temp_dir("datapipe_roundtrip");
    GeneratorConfig g = small_generator();
    g.firms = 25;
    g.noise_features = 2;
    const RawPanel raw = generate_raw(g, 11);
    write_raw_panel(raw, dir / "a");
    write_raw_panel(generate_raw(g, 11), dir / "b");
    for (const char* name : {"fundamental.csv", "market.csv", "pricing.csv", "noise.csv", "labels.csv"})
        CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));
    write_raw_panel(generate_raw(g, 12), dir / "c");
    CHECK(slurp(dir / "a" / "fundamental.csv") != slurp(dir / "c" / "fundamental.csv"));

    const Dataset direct = assemble_dataset(raw, small_panel());
    const Dataset loaded = load_channels(default_paths(dir / "a"), small_panel());
    CHECK(loaded.channels == direct.channels);
    REQUIRE(loaded.observations.size() == direct.observations.size());
    for (std::size_t i = 0; i < direct.observations.size(); ++i) CHECK(loaded.observations[i] == direct.observations[i]);
    CHECK(loaded.report.dropped_min_history == direct.report.dropped_min_history);
    fs::remove_all(dir);
}

TEST_CASE("CSV errors carry the line number; unknown label firms warn") {
    const fs::path dir = test_util::temp_dir("datapipe_errors");
    {
        std::ofstream f(dir / "fundamental.csv");
        f << "firm_id,report_date,f_001\nA,2020-01-01,1.5\nA,2020-04-01,abc\n";
        std::ofstream l(dir / "labels.csv");
        l << "firm_id,default_date\nA,\nZ,2021-01-01\n";
    }
    ChannelPaths paths{dir / "fundamental.csv", {}, {}, {}, dir / "labels.csv"};
    try {
        read_raw_panel(paths);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    {
        std::ofstream f(dir / "fundamental.csv");
        f << "firm_id,report_date,f_001\nA,2020-01-01,1.5\nA,2020-04-01,\n";
    }
    const RawPanel raw = read_raw_panel(paths);
    REQUIRE(raw.firms.size() == 1);
    CHECK(std::isnan(raw.firms[0].quarterly[0][1].values[0]));
    REQUIRE(raw.warnings.size() == 1);
    CHECK(raw.warnings[0].find("'Z'") != std::string::npos);
    {
        std::ofstream f(dir / "fundamental.csv");
        f << "firm_id,date,f_001\n";
    }
    CHECK_THROWS_AS(read_raw_panel(paths), ParseError);
    fs::remove_all(dir);
}

TEST_CASE("generator: invalid configuration is rejected") {
    GeneratorConfig g;
    g.firms = 0;
    CHECK_THROWS_AS(generate_raw(g, 1), InvalidArgument);
    g = GeneratorConfig{};
    g.persistence_fundamental = 1.0;
    CHECK_THROWS_AS(generate_raw(g, 1), InvalidArgument);
    g = GeneratorConfig{};
    CHECK_THROWS_AS(generate_synthetic(g, {12, 10000}, 1), InvalidArgument);
}

TEST_CASE("generator: a latent-health oracle separates 3m defaults when the fundamental signal dominates") {
    GeneratorConfig g;
    g.firms = 300;
    g.alpha_fundamental = 3.5;
    g.alpha_market = 0.3;
    g.alpha_pricing = 0.1;
    PanelConfig pc{12, 63};
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::uint64_t seed = 1; seed <= 2; ++seed) {
        scores.clear();
        labels.clear();
        for (const auto& o : generate_synthetic(g, pc, seed).observations) {
            scores.push_back(-o.oracle_health);
            labels.push_back(o.target.y[0]);
        }
        CHECK(test_util::pairwise_auc(scores, labels) > 0.9);
    }
}

TEST_CASE("generator: default times ignore features when every signal strength is zero") {
    GeneratorConfig g;
    g.firms = 400;
    g.alpha_fundamental = g.alpha_market = g.alpha_pricing = 0.0;
    g.base_hazard = -5.0;
    PanelConfig pc{12, 63};
    const Dataset ds = generate_synthetic(g, pc, 3);
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& o : ds.observations) {
        scores.push_back(-o.oracle_health);
        labels.push_back(o.target.y[5]);
    }
    CHECK(test_util::pairwise_auc(scores, labels) == doctest::Approx(0.5).epsilon(0.05));
}
