#include <algorithm>
#include <cmath>
#include <cstdio>

#include "tep/datapipe.hpp"
#include "tep/error.hpp"
#include "tep/rng.hpp"

namespace tep {

void GeneratorConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw InvalidArgument(std::string("generator: ") + what);
    };
    require(firms > 0, "firms must be positive");
    require(history_quarters > 0, "history_quarters must be positive");
    require(observation_quarters > 0, "observation_quarters must be positive");
    require(fundamental_features > 0, "fundamental_features must be positive");
    require(market_features > 0, "market_features must be positive");
    for (double p : {persistence_fundamental, persistence_market, persistence_pricing, persistence_market_factor})
        require(p >= 0.0 && p < 1.0, "persistence values must lie in [0,1)");
    require(fundamental_noise >= 0.0 && market_noise >= 0.0, "noise levels must be non-negative");
    require(pricing_volatility > 0.0, "pricing_volatility must be positive");
    require(missing_rate >= 0.0 && missing_rate < 0.5, "missing_rate must lie in [0,0.5)");
    require(outlier_rate >= 0.0 && outlier_rate < 1.0, "outlier_rate must lie in [0,1)");
    require(plant_lag < history_quarters, "plant_lag must be smaller than history_quarters");
    for (double a : {alpha_fundamental, alpha_market, alpha_pricing, base_hazard})
        require(std::isfinite(a), "signal strengths must be finite");
    Date::parse(start_date);
}

namespace {

constexpr std::size_t kMonthsPerQuarter = 3;
constexpr std::size_t kDaysPerMonth = kTradingDaysPerQuarter / kMonthsPerQuarter;
constexpr std::size_t kLabelQuarters = 12;

// AR(1) with unit stationary variance.
std::vector<double> ar1(std::size_t n, double phi, Rng& rng) {
    std::vector<double> x(n);
    const double innovation = std::sqrt(1.0 - phi * phi);
    double prev = rng.normal();
    for (std::size_t t = 0; t < n; ++t) {
        prev = t == 0 ? prev : phi * prev + innovation * rng.normal();
        x[t] = prev;
    }
    return x;
}

struct FeatureDef {
    double offset = 0.0;
    double scale = 1.0;
    double loading = 0.0;
    int source = 0;  // market channel readout selector
};

std::vector<FeatureDef> feature_defs(std::size_t n, Rng& rng, bool fundamental) {
    std::vector<FeatureDef> defs(n);
    const std::size_t informative = (3 * n + 3) / 4;
    for (std::size_t j = 0; j < n; ++j) {
        defs[j].offset = rng.normal(0.0, 2.0);
        defs[j].scale = std::exp(rng.normal(0.0, 0.5));
        if (fundamental) {
            const double sign = j % 2 == 0 ? 1.0 : -1.0;
            defs[j].loading = j < informative ? sign * rng.uniform(0.6, 1.0) : 0.0;
        } else {
            defs[j].source = static_cast<int>(j % 5);
        }
    }
    return defs;
}

std::string firm_name(std::size_t i, std::size_t n) {
    const int width = std::max(4, static_cast<int>(std::to_string(n).size()));
    char buf[32];
    std::snprintf(buf, sizeof buf, "F%0*zu", width, i + 1);
    return buf;
}

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace

RawPanel generate_raw(const GeneratorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t H = cfg.history_quarters, K = cfg.observation_quarters;
    const std::size_t reported = H + K - 1;                 // quarters with reports
    const std::size_t simulated = reported + kLabelQuarters;  // latents drive hazards up to here
    const std::size_t first_obs = H - 1, last_obs = H + K - 2;

    // Business-day calendar covering every simulated quarter.
    std::vector<Date> days;
    days.reserve(simulated * kTradingDaysPerQuarter);
    Date d = Date::parse(cfg.start_date);
    if (!d.is_weekday()) d = d.next_weekday();
    for (std::size_t i = 0; i < simulated * kTradingDaysPerQuarter; ++i, d = d.next_weekday()) days.push_back(d);
    auto quarter_end = [&](std::size_t q) { return days[q * kTradingDaysPerQuarter + kTradingDaysPerQuarter - 1]; };

    Rng defs_rng(seed, "features");
    const auto fdefs = feature_defs(cfg.fundamental_features, defs_rng, true);
    const auto mdefs = feature_defs(cfg.market_features, defs_rng, false);
    const auto ndefs = feature_defs(cfg.noise_features, defs_rng, false);
    Rng market_rng(seed, "market-factor");
    const auto market_factor = ar1(simulated, cfg.persistence_market_factor, market_rng);

    RawPanel raw;
    raw.present[static_cast<std::size_t>(ChannelKind::Fundamental)] = true;
    raw.present[static_cast<std::size_t>(ChannelKind::Market)] = true;
    raw.present[static_cast<std::size_t>(ChannelKind::Pricing)] = true;
    raw.present[static_cast<std::size_t>(ChannelKind::Noise)] = cfg.noise_features > 0;
    raw.features = {cfg.fundamental_features, cfg.market_features, 3, cfg.noise_features};
    raw.firms.resize(cfg.firms);

    for (std::size_t i = 0; i < cfg.firms; ++i) {
        Rng rng(derive_seed(seed, i, 1));
        FirmRecord& firm = raw.firms[i];
        firm.firm_id = firm_name(i, cfg.firms);

        const auto health = ar1(simulated, cfg.persistence_fundamental, rng);
        const auto idio = ar1(simulated, cfg.persistence_market, rng);
        const auto pricing = ar1(simulated, cfg.persistence_pricing, rng);
        const double beta = rng.uniform(0.5, 1.5);
        std::vector<double> market(simulated);
        for (std::size_t q = 0; q < simulated; ++q)
            market[q] = (idio[q] + beta * market_factor[q]) / std::sqrt(1.0 + beta * beta);

        auto logit = [&](std::size_t q) {
            return cfg.base_hazard - cfg.alpha_fundamental * health[q] - cfg.alpha_market * market[q] -
                   cfg.alpha_pricing * pricing[q];
        };

        // Default: monthly hazard over the three months after each quarter end,
        // driven by that quarter's latents. No defaults before the first
        // observation date.
        Rng event_rng(derive_seed(seed, i, 2));
        std::optional<std::size_t> default_day;
        for (std::size_t q = first_obs; q + 1 < simulated && !default_day; ++q) {
            const double p = sigmoid(logit(q));
            for (std::size_t m = 0; m < kMonthsPerQuarter && !default_day; ++m) {
                if (event_rng.bernoulli(p))
                    default_day =
                        (q + 1) * kTradingDaysPerQuarter + m * kDaysPerMonth + event_rng.below(kDaysPerMonth);
            }
        }
        if (default_day) firm.default_date = days[*default_day];
        auto alive = [&](Date date) { return !firm.default_date || date < *firm.default_date; };

        std::optional<std::size_t> plant_quarter;
        if (cfg.plant_lag > 0 && firm.default_date) {
            for (std::size_t q = first_obs; q <= last_obs && quarter_end(q) < *firm.default_date; ++q)
                plant_quarter = q - cfg.plant_lag;
        }

        for (std::size_t q = 0; q < reported; ++q) {
            const Date date = quarter_end(q);
            // Draws happen whether or not the row is emitted so that the
            // feature streams do not depend on the default time.
            QuarterlyRow f{date, std::vector<double>(cfg.fundamental_features)};
            const double distress = 2.0 * sigmoid(-health[q]);
            for (std::size_t j = 0; j < cfg.fundamental_features; ++j) {
                const FeatureDef& def = fdefs[j];
                double z = def.loading * health[q] + cfg.fundamental_noise * rng.normal();
                if (rng.bernoulli(cfg.outlier_rate)) z = 15.0 * rng.normal();
                if (plant_quarter && *plant_quarter == q) z += cfg.plant_amplitude;
                f.values[j] = def.offset + def.scale * z;
                if (rng.bernoulli(cfg.missing_rate * distress)) f.values[j] = std::numeric_limits<double>::quiet_NaN();
            }
            QuarterlyRow m{date, std::vector<double>(cfg.market_features)};
            for (std::size_t j = 0; j < cfg.market_features; ++j) {
                const FeatureDef& def = mdefs[j];
                double signal = 0.0;
                switch (def.source) {
                    case 0: signal = market_factor[q]; break;
                    case 1: signal = market[q]; break;
                    case 2: signal = idio[q]; break;
                    case 3: signal = beta * market_factor[q]; break;
                    default: break;
                }
                double z = signal + cfg.market_noise * rng.normal();
                if (rng.bernoulli(cfg.outlier_rate)) z = 15.0 * rng.normal();
                m.values[j] = def.offset + def.scale * z;
                if (rng.bernoulli(cfg.missing_rate)) m.values[j] = std::numeric_limits<double>::quiet_NaN();
            }
            QuarterlyRow n{date, std::vector<double>(cfg.noise_features)};
            for (std::size_t j = 0; j < cfg.noise_features; ++j)
                n.values[j] = ndefs[j].offset + ndefs[j].scale * rng.normal();
            if (!alive(date)) continue;
            firm.quarterly[0].push_back(std::move(f));
            firm.quarterly[1].push_back(std::move(m));
            if (cfg.noise_features > 0) firm.quarterly[3].push_back(std::move(n));
            if (q >= first_obs) firm.oracle[date] = {logit(q), health[q]};
        }

        // Daily prices: multiplicative random walk whose drift follows the
        // pricing latent of the current quarter.
        double log_close = std::log(20.0) + 0.1 * rng.normal();
        for (std::size_t day = 0; day < reported * kTradingDaysPerQuarter; ++day) {
            const std::size_t q = day / kTradingDaysPerQuarter;
            log_close += cfg.pricing_drift * pricing[q] / static_cast<double>(kTradingDaysPerQuarter) +
                         cfg.pricing_volatility * rng.normal();
            const double close = std::exp(log_close);
            const double up = std::abs(rng.normal()), down = std::abs(rng.normal());
            if (!alive(days[day])) continue;
            firm.pricing.push_back({days[day], close * std::exp(0.5 * cfg.pricing_volatility * up),
                                    close * std::exp(-0.5 * cfg.pricing_volatility * down), close});
        }
    }
    return raw;
}

Dataset generate_synthetic(const GeneratorConfig& config, const PanelConfig& panel, std::uint64_t seed) {
    if (panel.pricing_window > config.history_quarters * kTradingDaysPerQuarter)
        throw InvalidArgument("pricing window of " + std::to_string(panel.pricing_window) +
                              " trading days exceeds the generated history");
    if (panel.quarterly_window > config.history_quarters)
        throw InvalidArgument("quarterly window exceeds the generated history");
    return assemble_dataset(generate_raw(config, seed), panel);
}

}  // namespace tep
