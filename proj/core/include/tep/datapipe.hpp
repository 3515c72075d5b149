#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tep/date.hpp"
#include "tep/tensor.hpp"

namespace tep {

inline constexpr std::size_t kHorizons = 6;
inline constexpr std::array<int, kHorizons> kHorizonMonths{3, 6, 9, 12, 24, 36};
inline constexpr std::array<std::string_view, kHorizons> kHorizonNames{"d_3m", "d_6m", "d_9m",
                                                                       "d_1y", "d_2y", "d_3y"};

/// Noise is an optional extra quarterly channel with no signal, used to probe
/// attribution methods.
enum class ChannelKind : std::uint8_t { Fundamental = 0, Market = 1, Pricing = 2, Noise = 3 };
inline constexpr std::size_t kChannelKinds = 4;

std::string_view to_string(ChannelKind kind);
ChannelKind channel_from_string(std::string_view name);

struct ChannelSpec {
    ChannelKind kind = ChannelKind::Fundamental;
    std::size_t window = 0;    // time steps
    std::size_t features = 0;  // raw feature count

    friend bool operator==(const ChannelSpec&, const ChannelSpec&) = default;
};

/// One firm-observation's input for one channel. Rows are time steps, oldest
/// first. Missing cells hold 0 in `values` and 1 in `missing`.
struct ChannelPanel {
    std::string firm_id;
    Date observation_date;
    ChannelKind channel = ChannelKind::Fundamental;
    Tensor values;                      // (w, f)
    std::vector<std::uint8_t> missing;  // row-major, same size as values

    friend bool operator==(const ChannelPanel&, const ChannelPanel&) = default;
};

struct TargetVector {
    std::array<std::uint8_t, kHorizons> y{};
    std::optional<double> default_offset_months;

    bool monotone() const noexcept;
    Tensor as_row() const;

    friend bool operator==(const TargetVector&, const TargetVector&) = default;
};

/// y[h] = 1 iff default_date <= observation_date + horizon months (inclusive).
TargetVector build_targets(Date observation_date, std::optional<Date> default_date);

/// Whole calendar months plus the fraction of the following month.
double months_between(Date from, Date to);

struct Observation {
    std::string firm_id;
    Date date;
    std::vector<ChannelPanel> panels;  // parallel to Dataset::channels
    TargetVector target;
    // Generator-only latent readouts; NaN for loaded data.
    double oracle_score = std::numeric_limits<double>::quiet_NaN();   // next-month hazard logit
    double oracle_health = std::numeric_limits<double>::quiet_NaN();  // fundamental latent at date

    bool operator==(const Observation& o) const {
        return firm_id == o.firm_id && date == o.date && panels == o.panels && target == o.target;
    }
};

struct AssemblyReport {
    std::size_t candidates = 0;
    std::size_t kept = 0;
    std::size_t dropped_min_history = 0;
    std::size_t dropped_after_default = 0;
    std::vector<std::string> warnings;
};

struct Dataset {
    std::vector<ChannelSpec> channels;
    std::vector<Observation> observations;
    AssemblyReport report;

    std::size_t channel_index(ChannelKind kind) const;  // throws if absent
    bool has_channel(ChannelKind kind) const noexcept;
    std::vector<std::string> firm_ids() const;  // sorted, unique
    /// Keeps observations whose firm is in `firms`.
    Dataset subset(const std::vector<std::string>& firms) const;
};

// ---------------------------------------------------------------------------
// Raw per-firm series, the form held in the CSV files.

struct QuarterlyRow {
    Date date;
    std::vector<double> values;  // NaN = missing
};

struct PriceRow {
    Date date;
    double high = 0.0, low = 0.0, close = 0.0;
};

struct FirmRecord {
    std::string firm_id;
    std::array<std::vector<QuarterlyRow>, kChannelKinds> quarterly;  // Pricing slot unused
    std::vector<PriceRow> pricing;
    std::optional<Date> default_date;
    // Generator-only latent series keyed by quarterly report date.
    std::map<Date, std::pair<double, double>> oracle;  // date -> (score, health)
};

struct RawPanel {
    std::array<std::size_t, kChannelKinds> features{};  // per quarterly channel; 3 for pricing
    std::array<bool, kChannelKinds> present{};
    std::vector<FirmRecord> firms;  // sorted by firm_id
    std::vector<std::string> warnings;
};

struct PanelConfig {
    std::size_t quarterly_window = 12;
    std::size_t pricing_window = 504;
};

/// Builds one observation per fundamental report date that has enough history
/// in every present channel and precedes the firm's default. No input row
/// dated after the observation date is used.
Dataset assemble_dataset(const RawPanel& raw, const PanelConfig& config);

// ---------------------------------------------------------------------------
// CSV interface.

struct ChannelPaths {
    std::filesystem::path fundamental, market, pricing, noise, labels;  // empty = absent
};

ChannelPaths default_paths(const std::filesystem::path& dir);
RawPanel read_raw_panel(const ChannelPaths& paths);
void write_raw_panel(const RawPanel& raw, const std::filesystem::path& dir);
Dataset load_channels(const ChannelPaths& paths, const PanelConfig& config);

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);

// ---------------------------------------------------------------------------
// Preprocessing: robust scaling, winsorisation, imputation with indicators.

inline constexpr double kWinsorBound = 6.0;

struct FeatureStats {
    double median = 0.0;
    double iqr = 0.0;
    bool degenerate = false;

    friend bool operator==(const FeatureStats&, const FeatureStats&) = default;
};

struct PreprocessStats {
    std::map<ChannelKind, std::vector<FeatureStats>> channels;

    friend bool operator==(const PreprocessStats&, const PreprocessStats&) = default;
};

/// Linear-interpolation quantile of a sorted sample, q in [0,1].
double quantile_sorted(const std::vector<double>& sorted, double q);

/// Median and IQR per feature over every non-missing cell of the panels.
std::vector<FeatureStats> fit_feature_stats(const std::vector<const ChannelPanel*>& panels);
PreprocessStats fit_preprocess(const Dataset& train);

/// (w, f) panel -> (w, 2f): clamp((x - median)/IQR, ±6) then one indicator
/// column per feature. Degenerate features use (x - median).
Tensor apply_preprocess(const ChannelPanel& panel, const std::vector<FeatureStats>& stats);

/// Model-ready observation: one preprocessed (w, 2f) tensor per channel.
struct PreparedObservation {
    std::size_t source = 0;  // index into Dataset::observations
    std::vector<Tensor> inputs;
    Tensor targets;  // (1, 6)
};

struct PreparedSet {
    std::vector<ChannelSpec> channels;
    std::vector<PreparedObservation> items;
};

PreparedSet prepare(const Dataset& data, const PreprocessStats& stats);

// ---------------------------------------------------------------------------
// Company-level folds and splits.

using FoldAssignment = std::map<std::string, std::size_t>;

/// Stratified on the defaulted-ever flag: each stratum is shuffled and dealt
/// round-robin, the second stratum continuing where the first stopped.
FoldAssignment assign_folds(const std::map<std::string, bool>& defaulted_ever, std::size_t k, std::uint64_t seed);

std::map<std::string, bool> defaulted_ever(const Dataset& data);

struct Split {
    std::vector<std::string> train, validation, test;
};

/// 60/20/20 by firm: five stratified folds, three for training, one each for
/// validation and test.
Split split_by_firm(const Dataset& data, std::uint64_t seed);
/// Fold `test_fold` for testing, the next fold for validation, the rest train.
Split split_from_folds(const FoldAssignment& folds, std::size_t k, std::size_t test_fold);

// ---------------------------------------------------------------------------
// Synthetic panel generator.

struct GeneratorConfig {
    std::size_t firms = 500;
    std::size_t history_quarters = 12;
    std::size_t observation_quarters = 12;
    std::size_t fundamental_features = 8;
    std::size_t market_features = 6;
    std::size_t noise_features = 0;  // > 0 adds the Noise channel

    double alpha_fundamental = 3.0;
    double alpha_market = 1.0;
    double alpha_pricing = 0.5;
    double base_hazard = -9.0;  // monthly default logit at zero latents

    double persistence_fundamental = 0.85;
    double persistence_market = 0.85;
    double persistence_pricing = 0.85;
    double persistence_market_factor = 0.9;

    double fundamental_noise = 0.6;
    double market_noise = 0.6;
    double pricing_drift = 0.15;      // quarterly log-price drift per unit latent
    double pricing_volatility = 0.01;  // daily
    double missing_rate = 0.03;
    double outlier_rate = 0.002;

    /// When > 0, defaulting firms get a spike in every fundamental feature at
    /// this many quarters before their last observation.
    std::size_t plant_lag = 0;
    double plant_amplitude = 3.0;

    std::string start_date = "2000-01-03";

    void validate() const;
};

inline constexpr std::size_t kTradingDaysPerQuarter = 63;

RawPanel generate_raw(const GeneratorConfig& config, std::uint64_t seed);
Dataset generate_synthetic(const GeneratorConfig& config, const PanelConfig& panel, std::uint64_t seed);

}  // namespace tep
