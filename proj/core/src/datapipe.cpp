#include <algorithm>
#include <cmath>

#include "tep/datapipe.hpp"
#include "tep/error.hpp"

namespace tep {

std::string_view to_string(ChannelKind kind) {
    switch (kind) {
        case ChannelKind::Fundamental: return "fundamental";
        case ChannelKind::Market: return "market";
        case ChannelKind::Pricing: return "pricing";
        case ChannelKind::Noise: return "noise";
    }
    return "?";
}

ChannelKind channel_from_string(std::string_view name) {
    for (auto k : {ChannelKind::Fundamental, ChannelKind::Market, ChannelKind::Pricing, ChannelKind::Noise})
        if (to_string(k) == name) return k;
    throw InvalidArgument("unknown channel '" + std::string(name) + "'");
}

bool TargetVector::monotone() const noexcept {
    for (std::size_t i = 1; i < kHorizons; ++i)
        if (y[i - 1] > y[i]) return false;
    return true;
}

Tensor TargetVector::as_row() const {
    Tensor t = Tensor::matrix(1, kHorizons);
    for (std::size_t i = 0; i < kHorizons; ++i) t[i] = y[i];
    return t;
}

double months_between(Date from, Date to) {
    if (to < from) return -months_between(to, from);
    const auto a = from.ymd(), b = to.ymd();
    int m = (static_cast<int>(b.year()) - static_cast<int>(a.year())) * 12 +
            (static_cast<int>(static_cast<unsigned>(b.month())) - static_cast<int>(static_cast<unsigned>(a.month())));
    while (m > 0 && from.add_months(m) > to) --m;
    while (from.add_months(m + 1) <= to) ++m;
    const Date lo = from.add_months(m), hi = from.add_months(m + 1);
    return m + static_cast<double>(to.serial() - lo.serial()) / static_cast<double>(hi.serial() - lo.serial());
}

TargetVector build_targets(Date observation_date, std::optional<Date> default_date) {
    TargetVector t;
    if (!default_date) return t;
    if (*default_date < observation_date)
        throw InvalidArgument("default date " + default_date->to_string() + " precedes observation date " +
                              observation_date.to_string());
    t.default_offset_months = months_between(observation_date, *default_date);
    for (std::size_t h = 0; h < kHorizons; ++h)
        t.y[h] = *default_date <= observation_date.add_months(kHorizonMonths[h]) ? 1 : 0;
    return t;
}

std::size_t Dataset::channel_index(ChannelKind kind) const {
    for (std::size_t i = 0; i < channels.size(); ++i)
        if (channels[i].kind == kind) return i;
    throw InvalidArgument("dataset has no " + std::string(to_string(kind)) + " channel");
}

bool Dataset::has_channel(ChannelKind kind) const noexcept {
    return std::any_of(channels.begin(), channels.end(), [&](const ChannelSpec& c) { return c.kind == kind; });
}

std::vector<std::string> Dataset::firm_ids() const {
    std::vector<std::string> ids;
    for (const auto& o : observations)
        if (ids.empty() || ids.back() != o.firm_id) ids.push_back(o.firm_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

Dataset Dataset::subset(const std::vector<std::string>& firms) const {
    std::vector<std::string> keep = firms;
    std::sort(keep.begin(), keep.end());
    Dataset out;
    out.channels = channels;
    for (const auto& o : observations)
        if (std::binary_search(keep.begin(), keep.end(), o.firm_id)) out.observations.push_back(o);
    out.report.kept = out.observations.size();
    return out;
}

namespace {

// Last `window` quarterly rows dated on or before `date`, or nullopt when the
// history is too short.
std::optional<ChannelPanel> quarterly_panel(const std::vector<QuarterlyRow>& rows, std::size_t features,
                                            std::size_t window, const std::string& firm, Date date,
                                            ChannelKind kind) {
    auto end = std::upper_bound(rows.begin(), rows.end(), date,
                                [](Date d, const QuarterlyRow& r) { return d < r.date; });
    if (static_cast<std::size_t>(end - rows.begin()) < window) return std::nullopt;
    ChannelPanel p{firm, date, kind, Tensor::matrix(window, features), std::vector<std::uint8_t>(window * features)};
    auto it = end - static_cast<std::ptrdiff_t>(window);
    for (std::size_t t = 0; t < window; ++t, ++it) {
        for (std::size_t j = 0; j < features; ++j) {
            const double v = it->values[j];
            if (std::isnan(v)) {
                p.missing[t * features + j] = 1;
            } else {
                p.values(t, j) = v;
            }
        }
    }
    return p;
}

std::optional<ChannelPanel> pricing_panel(const std::vector<PriceRow>& rows, std::size_t window,
                                          const std::string& firm, Date date) {
    auto end =
        std::upper_bound(rows.begin(), rows.end(), date, [](Date d, const PriceRow& r) { return d < r.date; });
    if (static_cast<std::size_t>(end - rows.begin()) < window) return std::nullopt;
    ChannelPanel p{firm, date, ChannelKind::Pricing, Tensor::matrix(window, 3), std::vector<std::uint8_t>(window * 3)};
    auto it = end - static_cast<std::ptrdiff_t>(window);
    for (std::size_t t = 0; t < window; ++t, ++it) {
        p.values(t, 0) = it->high;
        p.values(t, 1) = it->low;
        p.values(t, 2) = it->close;
    }
    return p;
}

}  // namespace

Dataset assemble_dataset(const RawPanel& raw, const PanelConfig& config) {
    if (config.quarterly_window == 0 || config.pricing_window == 0)
        throw InvalidArgument("panel windows must be positive");
    if (!raw.present[static_cast<std::size_t>(ChannelKind::Fundamental)])
        throw InvalidArgument("the fundamental channel is required: its report dates define observations");
    Dataset ds;
    for (auto kind : {ChannelKind::Fundamental, ChannelKind::Market, ChannelKind::Pricing, ChannelKind::Noise}) {
        const auto k = static_cast<std::size_t>(kind);
        if (!raw.present[k]) continue;
        const std::size_t w = kind == ChannelKind::Pricing ? config.pricing_window : config.quarterly_window;
        ds.channels.push_back({kind, w, kind == ChannelKind::Pricing ? 3 : raw.features[k]});
    }

    for (const FirmRecord& firm : raw.firms) {
        for (const QuarterlyRow& report : firm.quarterly[0]) {
            const Date date = report.date;
            ++ds.report.candidates;
            if (firm.default_date && *firm.default_date <= date) {
                ++ds.report.dropped_after_default;
                continue;
            }
            Observation obs;
            obs.firm_id = firm.firm_id;
            obs.date = date;
            bool complete = true;
            for (const ChannelSpec& spec : ds.channels) {
                std::optional<ChannelPanel> p =
                    spec.kind == ChannelKind::Pricing
                        ? pricing_panel(firm.pricing, spec.window, firm.firm_id, date)
                        : quarterly_panel(firm.quarterly[static_cast<std::size_t>(spec.kind)], spec.features,
                                          spec.window, firm.firm_id, date, spec.kind);
                if (!p) {
                    complete = false;
                    break;
                }
                obs.panels.push_back(std::move(*p));
            }
            if (!complete) {
                ++ds.report.dropped_min_history;
                continue;
            }
            obs.target = build_targets(date, firm.default_date);
            if (auto it = firm.oracle.find(date); it != firm.oracle.end()) {
                obs.oracle_score = it->second.first;
                obs.oracle_health = it->second.second;
            }
            ds.observations.push_back(std::move(obs));
        }
    }
    ds.report.kept = ds.observations.size();
    ds.report.warnings = raw.warnings;
    return ds;
}

}  // namespace tep
