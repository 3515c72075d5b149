#include "tep/shapley.hpp"

#include <tbb/parallel_for.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include "json_codec.hpp"
#include "tep/error.hpp"

namespace tep {

using codec::json;

ShapleyGame::ShapleyGame(std::size_t groups) : groups_(groups) {
    if (groups == 0 || groups > kMaxShapleyGroups)
        throw InvalidArgument("shapley game needs between 1 and " + std::to_string(kMaxShapleyGroups) + " groups");
    scores_.resize(std::size_t{1} << groups);
}

ShapleyGame ShapleyGame::from_function(std::size_t groups, const std::function<double(Profile)>& score) {
    ShapleyGame g(groups);
    for (Profile p = 0; p <= g.full(); ++p) g.set(p, score(p));
    return g;
}

void ShapleyGame::set(Profile p, double score) {
    if (p >= scores_.size()) throw InvalidArgument("profile out of range");
    if (!std::isfinite(score)) throw InvalidArgument("profile score must be finite");
    scores_[p] = score;
}

bool ShapleyGame::has(Profile p) const { return p < scores_.size() && scores_[p].has_value(); }

double ShapleyGame::score(Profile p) const {
    if (!has(p)) throw InvalidArgument("missing score for profile " + std::to_string(p));
    return *scores_[p];
}

double marginal(const ShapleyGame& game, Profile p, std::size_t group) {
    if (group >= game.groups()) throw InvalidArgument("group index out of range");
    const Profile bit = Profile{1} << group;
    if (p & bit) throw InvalidArgument("group " + std::to_string(group) + " is already in the profile");
    return game.score(p | bit) - game.score(p);
}

double coalition_weight(std::size_t coalition_size, std::size_t groups) {
    if (coalition_size >= groups) throw InvalidArgument("coalition must exclude the player");
    // |p|! (G-|p|-1)! / G! = 1 / (G * C(G-1, |p|))
    double binom = 1.0;
    for (std::size_t k = 1; k <= coalition_size; ++k)
        binom = binom * static_cast<double>(groups - 1 - coalition_size + k) / static_cast<double>(k);
    return 1.0 / (static_cast<double>(groups) * binom);
}

ShapleyResult shapley_values(const ShapleyGame& game, std::vector<std::string> names) {
    const std::size_t g = game.groups();
    if (names.empty())
        for (std::size_t i = 0; i < g; ++i) names.push_back("group " + std::to_string(i));
    if (names.size() != g) throw InvalidArgument("shapley_values: one name per group required");
    for (Profile p = 0; p <= game.full(); ++p) game.score(p);  // completeness check

    ShapleyResult r;
    r.names = std::move(names);
    r.values.assign(g, 0.0);
    for (std::size_t i = 0; i < g; ++i) {
        const Profile bit = Profile{1} << i;
        for (Profile p = 0; p <= game.full(); ++p) {
            if (p & bit) continue;
            r.values[i] += coalition_weight(static_cast<std::size_t>(std::popcount(p)), g) * marginal(game, p, i);
        }
    }
    r.grand = game.score(game.full());
    r.empty = game.score(0);
    return r;
}

double profile_score(const std::optional<double>& auc) { return auc ? std::max(gini(*auc), 0.0) : 0.0; }

std::string profile_name(Profile p, const std::vector<ChannelKind>& channels) {
    std::string s = "{";
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if (!(p & (Profile{1} << i))) continue;
        if (s.size() > 1) s += ",";
        s += to_string(channels[i]);
    }
    return s + "}";
}

namespace {

std::vector<std::string> channel_names(const std::vector<ChannelKind>& channels) {
    std::vector<std::string> n;
    for (auto c : channels) n.emplace_back(to_string(c));
    return n;
}

std::vector<ChannelKind> members(Profile p, const std::vector<ChannelKind>& channels) {
    std::vector<ChannelKind> out;
    for (std::size_t i = 0; i < channels.size(); ++i)
        if (p & (Profile{1} << i)) out.push_back(channels[i]);
    return out;
}

}  // namespace

ChannelImportance importance_from_reports(const std::vector<ChannelKind>& channels,
                                          std::map<Profile, HorizonReport> reports) {
    ChannelImportance r;
    r.channels = channels;
    ShapleyGame overall(channels.size());
    std::array<ShapleyGame, kHorizons> horizon{overall, overall, overall, overall, overall, overall};
    overall.set(0, 0.0);
    for (auto& g : horizon) g.set(0, 0.0);
    for (Profile p = 1; p <= overall.full(); ++p) {
        auto it = reports.find(p);
        if (it == reports.end()) throw InvalidArgument("no report for profile " + profile_name(p, channels));
        const HorizonReport& rep = it->second;
        if (!rep.average) r.warnings.push_back(profile_name(p, channels) + ": no AUC available, scored 0");
        overall.set(p, profile_score(rep.average));
        for (std::size_t h = 0; h < kHorizons; ++h) {
            if (!rep.horizons[h].auc)
                r.warnings.push_back(profile_name(p, channels) + " " + std::string(kHorizonNames[h]) +
                                     ": single class, scored 0");
            horizon[h].set(p, profile_score(rep.horizons[h].auc));
        }
    }
    const auto names = channel_names(channels);
    r.overall = shapley_values(overall, names);
    for (std::size_t h = 0; h < kHorizons; ++h) r.per_horizon[h] = shapley_values(horizon[h], names);
    r.reports = std::move(reports);
    return r;
}

ChannelImportance channel_importance(const Dataset& data, const std::vector<ChannelKind>& channels,
                                     const TrainerConfig& config, std::uint64_t seed) {
    if (channels.empty()) throw InvalidArgument("channel_importance: no channels");
    for (auto c : channels)
        if (!data.has_channel(c)) throw InvalidArgument("channel_importance: data lacks '" + std::string(to_string(c)) + "'");
    const Split split = split_by_firm(data, seed);
    const Profile full = static_cast<Profile>((std::size_t{1} << channels.size()) - 1);

    std::vector<HorizonReport> reports(full + 1);
    std::vector<std::string> errors(full + 1);
    tbb::parallel_for(Profile{1}, full + 1, [&](Profile p) {
        try {
            reports[p] = fit_evaluate(data, split.train, split.validation, split.test, members(p, channels), config, seed)
                             .report;
        } catch (const std::exception& e) {
            errors[p] = e.what();
        }
    });
    for (Profile p = 1; p <= full; ++p)
        if (!errors[p].empty())
            throw std::runtime_error("training profile " + profile_name(p, channels) + " failed: " + errors[p]);

    std::map<Profile, HorizonReport> by_profile;
    for (Profile p = 1; p <= full; ++p) by_profile.emplace(p, std::move(reports[p]));
    return importance_from_reports(channels, std::move(by_profile));
}

namespace {

json result_json(const ShapleyResult& r) {
    json values = json::object();
    for (std::size_t i = 0; i < r.names.size(); ++i) values[r.names[i]] = r.values[i];
    return {{"values", values}, {"grand", r.grand}, {"empty", r.empty}};
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string importance_json(const ChannelImportance& r) {
    json profiles = json::array();
    for (const auto& [p, rep] : r.reports) {
        json aucs = json::object();
        for (std::size_t h = 0; h < kHorizons; ++h) aucs[std::string(kHorizonNames[h])] = optional_number(rep.horizons[h].auc);
        profiles.push_back({{"profile", profile_name(p, r.channels)},
                            {"average_auc", optional_number(rep.average)},
                            {"score", profile_score(rep.average)},
                            {"auc", aucs}});
    }
    json horizons = json::object();
    for (std::size_t h = 0; h < kHorizons; ++h) horizons[std::string(kHorizonNames[h])] = result_json(r.per_horizon[h]);
    return json{{"channels", channel_names(r.channels)},
                {"overall", result_json(r.overall)},
                {"per_horizon", horizons},
                {"profiles", profiles},
                {"warnings", r.warnings}}
        .dump(2);
}

std::string importance_csv(const ChannelImportance& r) {
    std::string s = "Channel,Shapley\n";
    for (std::size_t i = 0; i < r.overall.names.size(); ++i)
        s += r.overall.names[i] + "," + format_double(r.overall.values[i]) + "\n";
    return s;
}

std::string importance_horizon_csv(const ChannelImportance& r) {
    std::string s = "Horizon";
    for (const auto& n : r.overall.names) s += "," + n;
    s += "\n";
    for (std::size_t h = 0; h < kHorizons; ++h) {
        s += kHorizonNames[h];
        for (double v : r.per_horizon[h].values) s += "," + format_double(v);
        s += "\n";
    }
    return s;
}

std::string importance_svg(const ChannelImportance& r) {
    const auto& v = r.overall.values;
    const double width = 480, bar_h = 28, left = 110, top = 30;
    double vmax = 1e-12;
    for (double x : v) vmax = std::max(vmax, std::abs(x));
    const double scale = (width - left - 60) / vmax;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
       << top + bar_h * static_cast<double>(v.size()) + 20 << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<text x=\"10\" y=\"18\">Average contribution to the Gini score</text>\n";
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double y = top + bar_h * static_cast<double>(i);
        const double w = std::max(0.0, v[i]) * scale;
        os << "<text x=\"10\" y=\"" << y + 17 << "\">" << r.overall.names[i] << "</text>\n";
        os << "<rect x=\"" << left << "\" y=\"" << y + 4 << "\" width=\"" << w << "\" height=\"" << bar_h - 8
           << "\" fill=\"#4a78a8\"/>\n";
        os << "<text x=\"" << left + w + 6 << "\" y=\"" << y + 17 << "\">" << format_double(std::round(v[i] * 1e4) / 1e4)
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

// ---------------------------------------------------------------- temporal groups

TemporalSplit temporal_split(const ChannelSpec& channel) {
    TemporalSplit s;
    s.window = channel.window;
    if (channel.kind == ChannelKind::Pricing) {
        if (channel.window < 3) throw InvalidArgument("temporal groups need a pricing window of at least 3 days");
        s.recent_begin = channel.window - channel.window / 3;
    } else {
        if (channel.window < 12)
            throw InvalidArgument("temporal groups need 12 quarters of '" + std::string(to_string(channel.kind)) +
                                  "' history, window is " + std::to_string(channel.window));
        s.recent_begin = channel.window - 4;
    }
    return s;
}

Tensor ablate_rows(const Tensor& input, std::size_t begin, std::size_t end) {
    if (input.cols() % 2 != 0) throw InvalidArgument("ablate_rows expects value and indicator columns");
    if (begin > end || end > input.rows()) throw InvalidArgument("ablate_rows: row range out of bounds");
    const std::size_t f = input.cols() / 2;
    Tensor out = input;
    for (std::size_t t = begin; t < end; ++t)
        for (std::size_t j = 0; j < f; ++j) {
            out(t, j) = 0.0;
            out(t, f + j) = 1.0;
        }
    return out;
}

std::optional<double> TemporalImportance::percent(std::size_t channel, std::size_t group) const {
    const auto& r = results.at(channel);
    const double total = r.values[0] + r.values[1];
    if (total == 0.0) return std::nullopt;
    return 100.0 * r.values.at(group) / total;
}

TemporalImportance temporal_importance(const Dataset& data, const std::vector<ChannelKind>& channels,
                                       const TrainerConfig& config, std::uint64_t seed) {
    if (channels.empty()) throw InvalidArgument("temporal_importance: no channels");
    TemporalImportance out;
    out.channels = channels;
    const Split split = split_by_firm(data, seed);
    for (auto c : channels) {
        const std::size_t col = data.channel_index(c);
        const TemporalSplit ts = temporal_split(data.channels[col]);
        const FitResult fit = fit_evaluate(data, split.train, split.validation, split.test, {c}, config, seed);
        const PreparedSet test = prepare(data.subset(split.test), fit.checkpoint.stats);

        // Bit 0: past year (recent rows), bit 1: the earlier rows.
        auto masked_score = [&](std::size_t begin, std::size_t end) {
            PreparedSet m = test;
            for (auto& item : m.items) item.inputs[col] = ablate_rows(item.inputs[col], begin, end);
            return profile_score(evaluate(fit.checkpoint, m).average);
        };
        ShapleyGame game(2);
        game.set(0, 0.0);
        game.set(1, masked_score(0, ts.recent_begin));
        game.set(2, masked_score(ts.recent_begin, ts.window));
        game.set(3, profile_score(fit.report.average));
        out.results.push_back(shapley_values(game, {kTemporalGroups[0], kTemporalGroups[1]}));
        out.full_reports.push_back(fit.report);
    }
    return out;
}

std::string temporal_csv(const TemporalImportance& r) {
    std::string s = std::string("Channel,") + kTemporalGroups[0] + "," + kTemporalGroups[1] + "\n";
    for (std::size_t c = 0; c < r.channels.size(); ++c) {
        s += std::string(to_string(r.channels[c]));
        for (std::size_t g = 0; g < 2; ++g) {
            const auto p = r.percent(c, g);
            s += "," + (p ? format_double(std::round(*p * 10.0) / 10.0) + "%" : std::string("NA"));
        }
        s += "\n";
    }
    return s;
}

std::string temporal_json(const TemporalImportance& r) {
    json arr = json::array();
    for (std::size_t c = 0; c < r.channels.size(); ++c)
        arr.push_back({{"channel", std::string(to_string(r.channels[c]))},
                       {"shapley", result_json(r.results[c])},
                       {"percent", {{kTemporalGroups[0], optional_number(r.percent(c, 0))},
                                    {kTemporalGroups[1], optional_number(r.percent(c, 1))}}},
                       {"full_average_auc", optional_number(r.full_reports[c].average)}});
    return arr.dump(2);
}

}  // namespace tep
