#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tep/datapipe.hpp"
#include "tep/metrics.hpp"

namespace tep {

/// Bit g set = group g selected.
using Profile = std::uint32_t;

inline constexpr std::size_t kMaxShapleyGroups = 16;

/// Cooperative game over `groups` players with one score per profile.
class ShapleyGame {
public:
    explicit ShapleyGame(std::size_t groups);
    static ShapleyGame from_function(std::size_t groups, const std::function<double(Profile)>& score);

    std::size_t groups() const noexcept { return groups_; }
    std::size_t profiles() const noexcept { return scores_.size(); }
    void set(Profile p, double score);
    bool has(Profile p) const;
    double score(Profile p) const;  // throws if unset
    Profile full() const noexcept { return static_cast<Profile>(scores_.size() - 1); }

private:
    std::size_t groups_;
    std::vector<std::optional<double>> scores_;
};

/// s(p + e_i) - s(p); throws if group i is already in p.
double marginal(const ShapleyGame& game, Profile p, std::size_t group);

/// |p|! (G - |p| - 1)! / G!
double coalition_weight(std::size_t coalition_size, std::size_t groups);

struct ShapleyResult {
    std::vector<std::string> names;
    std::vector<double> values;
    double grand = 0.0;  // s(full)
    double empty = 0.0;  // s(empty)
};

/// Exact enumeration over all profiles; throws if any score is missing.
ShapleyResult shapley_values(const ShapleyGame& game, std::vector<std::string> names = {});

/// max(gini(auc), 0): profile scores live in [0, 1].
double profile_score(const std::optional<double>& auc);

std::string profile_name(Profile p, const std::vector<ChannelKind>& channels);

struct ChannelImportance {
    std::vector<ChannelKind> channels;
    std::map<Profile, HorizonReport> reports;  // every non-empty profile
    ShapleyResult overall;                     // scores from the average AUC
    std::array<ShapleyResult, kHorizons> per_horizon;
    std::vector<std::string> warnings;
};

/// Trains one model per non-empty channel subset on the same firm split,
/// scores it on the test firms, and attributes the score. s(empty) = 0.
ChannelImportance channel_importance(const Dataset& data, const std::vector<ChannelKind>& channels,
                                     const TrainerConfig& config, std::uint64_t seed);
/// The attribution step alone, from already evaluated profiles.
ChannelImportance importance_from_reports(const std::vector<ChannelKind>& channels,
                                          std::map<Profile, HorizonReport> reports);

std::string importance_json(const ChannelImportance& r);
/// "Channel,Shapley" rows.
std::string importance_csv(const ChannelImportance& r);
/// Rows per horizon, one column per channel.
std::string importance_horizon_csv(const ChannelImportance& r);
std::string importance_svg(const ChannelImportance& r);

// ---------------------------------------------------------------------------
// Temporal groups within a channel.

/// Splits a window into the most recent part and the rest: the last 4 of 12
/// quarters, and the same proportion (last third) of a daily window.
struct TemporalSplit {
    std::size_t recent_begin = 0;  // rows [recent_begin, w) are "past year"
    std::size_t window = 0;
};
TemporalSplit temporal_split(const ChannelSpec& channel);

/// Replaces rows [begin, end) with the training median (0 after scaling) and
/// sets their missing indicators.
Tensor ablate_rows(const Tensor& input, std::size_t begin, std::size_t end);

inline constexpr std::array<const char*, 2> kTemporalGroups{"Past year", "Previous 2 years"};

struct TemporalImportance {
    std::vector<ChannelKind> channels;
    std::vector<ShapleyResult> results;  // players: past year, previous 2 years
    std::vector<HorizonReport> full_reports;

    /// Share of the channel total, in percent; NA when the total is 0.
    std::optional<double> percent(std::size_t channel, std::size_t group) const;
};

/// One single-channel model per channel; coalitions of the two temporal groups
/// are evaluated by ablating the excluded group in the test inputs.
TemporalImportance temporal_importance(const Dataset& data, const std::vector<ChannelKind>& channels,
                                       const TrainerConfig& config, std::uint64_t seed);
/// "Channel,Past year,Previous 2 years" with percentages.
std::string temporal_csv(const TemporalImportance& r);
std::string temporal_json(const TemporalImportance& r);

}  // namespace tep
