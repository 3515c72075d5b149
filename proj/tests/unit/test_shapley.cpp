#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "tep/error.hpp"
#include "tep/rng.hpp"
#include "tep/shapley.hpp"
#include "unit/test_util.hpp"

using namespace tep;

namespace {

// Average marginal contribution over all G! player orderings.
std::vector<double> permutation_oracle(const ShapleyGame& game) {
    const std::size_t g = game.groups();
    std::vector<std::size_t> order(g);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> v(g, 0.0);
    double count = 0.0;
    do {
        Profile p = 0;
        for (std::size_t i : order) {
            v[i] += game.score(p | (Profile{1} << i)) - game.score(p);
            p |= Profile{1} << i;
        }
        count += 1.0;
    } while (std::next_permutation(order.begin(), order.end()));
    for (double& x : v) x /= count;
    return v;
}

ShapleyGame random_game(std::size_t g, Rng& rng) {
    return ShapleyGame::from_function(g, [&](Profile p) { return p == 0 ? 0.0 : rng.uniform(); });
}

double factorial(std::size_t n) { return n < 2 ? 1.0 : static_cast<double>(n) * factorial(n - 1); }

TrainerConfig tiny_trainer() {
    TrainerConfig c;
    ModelSpec s;
    s.tep.model_size = 8;
    s.tep.layers = 1;
    s.tep.heads = 2;
    s.tep.ff_multiplier = 2;
    for (auto k : {ChannelKind::Fundamental, ChannelKind::Market, ChannelKind::Pricing}) c.models[k] = s;
    c.representation_size = 8;
    c.max_epochs = 1;
    return c;
}

}  // namespace

TEST_CASE("marginal contributions") {
    ShapleyGame g(3);
    g.set(0, 0.0);
    g.set(1, 0.4);
    CHECK(marginal(g, 0, 0) == 0.4);
    CHECK_THROWS_AS(marginal(g, 1, 0), InvalidArgument);
    CHECK_THROWS_AS(marginal(g, 0, 1), InvalidArgument);  // s({1}) unset

    const auto additive = ShapleyGame::from_function(3, [](Profile p) { return 0.2 * std::popcount(p); });
    for (Profile p = 0; p < 8; ++p)
        for (std::size_t i = 0; i < 3; ++i)
            if (!(p & (1u << i))) CHECK(marginal(additive, p, i) == doctest::Approx(0.2).epsilon(1e-15));

    Rng rng(1);
    const auto r = random_game(3, rng);
    for (Profile p = 0; p < 8; ++p)
        for (std::size_t i = 0; i < 3; ++i)
            if (!(p & (1u << i))) CHECK(marginal(r, p, i) == r.score(p | (1u << i)) - r.score(p));
}

TEST_CASE("coalition weights") {
    CHECK(coalition_weight(1, 3) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
    for (std::size_t g = 1; g <= 8; ++g)
        for (std::size_t k = 0; k < g; ++k)
            CHECK(coalition_weight(k, g) ==
                  doctest::Approx(factorial(k) * factorial(g - k - 1) / factorial(g)).epsilon(1e-14));
    CHECK_THROWS_AS(coalition_weight(3, 3), InvalidArgument);
}

TEST_CASE("symmetric game splits evenly") {
    const auto g = ShapleyGame::from_function(3, [](Profile p) { return std::popcount(p) / 3.0; });
    const auto r = shapley_values(g, {"a", "b", "c"});
    for (double v : r.values) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(r.names[2] == "c");
}

TEST_CASE("exact enumeration equals the permutation oracle and satisfies the axioms") {
    Rng rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t g = 1 + trial % 5;
        const auto game = random_game(g, rng);
        const auto r = shapley_values(game);
        const auto oracle = permutation_oracle(game);
        double sum = 0.0;
        for (std::size_t i = 0; i < g; ++i) {
            CHECK(std::abs(r.values[i] - oracle[i]) < 1e-12);
            sum += r.values[i];
        }
        // Efficiency.
        CHECK(std::abs(sum - (game.score(game.full()) - game.score(0))) < 1e-10);

        if (g >= 2) {
            // Symmetry: make players 0 and 1 interchangeable.
            auto swap01 = [](Profile p) {
                const Profile a = p & 1u, b = (p >> 1) & 1u;
                return (p & ~3u) | (a << 1) | b;
            };
            const auto sym = ShapleyGame::from_function(
                g, [&](Profile p) { return game.score(p) + game.score(swap01(p)); });
            const auto rs = shapley_values(sym);
            CHECK(std::abs(rs.values[0] - rs.values[1]) < 1e-12);

            // Dummy: player g-1 never changes the score.
            const Profile dummy = Profile{1} << (g - 1);
            const auto dum = ShapleyGame::from_function(g, [&](Profile p) { return game.score(p & ~dummy); });
            CHECK(std::abs(shapley_values(dum).values[g - 1]) < 1e-12);
        }

        // Linearity: values of 2u + v equal 2 values(u) + values(v).
        const auto other = random_game(g, rng);
        const auto lin = ShapleyGame::from_function(
            g, [&](Profile p) { return 2.0 * game.score(p) + other.score(p); });
        const auto rl = shapley_values(lin);
        const auto ro = shapley_values(other);
        for (std::size_t i = 0; i < g; ++i) CHECK(std::abs(rl.values[i] - (2.0 * r.values[i] + ro.values[i])) < 1e-12);
    }
}

TEST_CASE("incomplete games are rejected") {
    ShapleyGame g(2);
    g.set(0, 0.0);
    g.set(1, 0.1);
    g.set(3, 0.3);
    CHECK_THROWS_AS(shapley_values(g), InvalidArgument);
    CHECK_THROWS_AS(ShapleyGame(0), InvalidArgument);
    CHECK_THROWS_AS(g.set(4, 0.0), InvalidArgument);
}

TEST_CASE("profile scores clip negative gini") {
    CHECK(profile_score(0.75) == 0.5);
    CHECK(profile_score(0.4) == 0.0);
    CHECK(profile_score(std::nullopt) == 0.0);
}

TEST_CASE("importance from evaluated profiles") {
    const std::vector<ChannelKind> ch{ChannelKind::Fundamental, ChannelKind::Market, ChannelKind::Pricing};
    // AUCs of an additive game: each channel adds a fixed amount of Gini.
    const double add[3] = {0.3, 0.1, 0.05};
    std::map<Profile, HorizonReport> reports;
    for (Profile p = 1; p < 8; ++p) {
        double gsum = 0.0;
        for (int i = 0; i < 3; ++i)
            if (p & (1u << i)) gsum += add[i];
        HorizonReport r;
        for (auto& h : r.horizons) h.auc = (gsum + 1.0) / 2.0;
        r.average = (gsum + 1.0) / 2.0;
        reports[p] = r;
    }
    const auto imp = importance_from_reports(ch, reports);
    for (int i = 0; i < 3; ++i) CHECK(imp.overall.values[i] == doctest::Approx(add[i]).epsilon(1e-12));
    CHECK(imp.per_horizon[0].values[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(importance_csv(imp).rfind("Channel,Shapley\nfundamental,", 0) == 0);
    CHECK(importance_horizon_csv(imp).rfind("Horizon,fundamental,market,pricing\nd_3m,", 0) == 0);
    CHECK(importance_svg(imp).find("<svg") == 0);
    CHECK(profile_name(5, ch) == "{fundamental,pricing}");

    reports.erase(3);
    CHECK_THROWS_AS(importance_from_reports(ch, reports), InvalidArgument);
}

TEST_CASE("temporal splits and ablation") {
    CHECK(temporal_split({ChannelKind::Fundamental, 12, 5}).recent_begin == 8);
    CHECK(temporal_split({ChannelKind::Market, 16, 5}).recent_begin == 12);
    CHECK(temporal_split({ChannelKind::Pricing, 504, 3}).recent_begin == 336);
    CHECK_THROWS_AS(temporal_split({ChannelKind::Fundamental, 8, 5}), InvalidArgument);

    const Tensor x = Tensor::from_rows({{1, 2, 0, 0}, {3, 4, 0, 1}, {5, 6, 0, 0}});
    const Tensor a = ablate_rows(x, 1, 3);
    CHECK(a == Tensor::from_rows({{1, 2, 0, 0}, {0, 0, 1, 1}, {0, 0, 1, 1}}));
    CHECK(ablate_rows(x, 0, 0) == x);
    CHECK_THROWS_AS(ablate_rows(x, 2, 4), InvalidArgument);
}

TEST_CASE("channel importance on a trained game") {
    const auto g = test_util::small_generator(60);
    const Dataset d = generate_synthetic(g, {4, 42}, 8);
    const std::vector<ChannelKind> ch{ChannelKind::Fundamental, ChannelKind::Market, ChannelKind::Pricing};
    const auto imp = channel_importance(d, ch, tiny_trainer(), 8);
    CHECK(imp.reports.size() == 7);
    double sum = 0.0;
    for (double v : imp.overall.values) sum += v;
    CHECK(std::abs(sum - imp.overall.grand) < 1e-10);
    CHECK(imp.overall.grand >= 0.0);
    CHECK(imp.overall.grand <= 1.0);
    for (const auto& h : imp.per_horizon) {
        double hs = 0.0;
        for (double v : h.values) hs += v;
        CHECK(std::abs(hs - h.grand) < 1e-10);
    }
    CHECK(importance_json(channel_importance(d, ch, tiny_trainer(), 8)) == importance_json(imp));
}

TEST_CASE("temporal importance table") {
    auto g = test_util::small_generator(60);
    g.history_quarters = 12;
    const Dataset d = generate_synthetic(g, {12, 21}, 9);
    const auto t = temporal_importance(d, {ChannelKind::Fundamental, ChannelKind::Market}, tiny_trainer(), 9);
    REQUIRE(t.results.size() == 2);
    for (const auto& r : t.results) CHECK(std::abs(r.values[0] + r.values[1] - r.grand) < 1e-12);
    CHECK(temporal_csv(t).rfind("Channel,Past year,Previous 2 years\nfundamental,", 0) == 0);

    const Dataset short_window = generate_synthetic(g, {8, 21}, 9);
    CHECK_THROWS_AS(temporal_importance(short_window, {ChannelKind::Fundamental}, tiny_trainer(), 9), InvalidArgument);
}
