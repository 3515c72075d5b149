#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tep/datapipe.hpp"
#include "tep/fusion.hpp"

namespace tep {

/// Mann-Whitney AUC: (correctly ordered pairs + half the tied pairs) / (pos * neg).
/// O(n log n) via sorting and tie groups. Throws when only one class is present.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

inline double gini(double auc) { return 2.0 * auc - 1.0; }

struct HorizonMetric {
    std::optional<double> auc;  // unset when the horizon has a single class
    std::size_t positives = 0;
    std::size_t negatives = 0;
};

struct HorizonReport {
    std::array<HorizonMetric, kHorizons> horizons{};
    /// Mean over the horizons that have an AUC; unset when none does.
    std::optional<double> average;
    std::vector<std::string> warnings;
};

HorizonReport evaluate(const std::vector<PdVector>& pds, const PreparedSet& data);
HorizonReport evaluate(const Checkpoint& checkpoint, const PreparedSet& data);
/// AUC of an arbitrary per-observation score against every horizon.
HorizonReport evaluate_scores(const std::vector<double>& scores, const std::vector<TargetVector>& targets);

/// "Average,d_3m,d_6m,d_9m,d_1y,d_2y,d_3y"
std::string report_csv_header();
/// One CSV row, `label` first; NA for missing AUCs.
std::string report_csv_row(const std::string& label, const HorizonReport& r);
std::string report_json(const HorizonReport& r);

// ---------------------------------------------------------------------------
// Training pipeline shared by evaluation drivers.

/// Model templates per channel; window and input width are filled in from the
/// data at fit time.
struct TrainerConfig {
    std::map<ChannelKind, ModelSpec> models;  // absent channel -> default TEP
    std::size_t representation_size = 72;
    Regime regime = Regime::R3;
    std::size_t max_epochs = 50;
    std::optional<RegimeSchedule> schedule;  // replaces the regime preset when set
    TrainConfig train;

    ModelSpec model_for(ChannelKind kind, const ChannelSpec& data) const;
    FusionConfig fusion_for(const std::vector<ChannelKind>& channels, const std::vector<ChannelSpec>& data) const;
    RegimeSchedule schedule_for(const std::vector<ChannelKind>& channels) const;
};

struct FitResult {
    Checkpoint checkpoint;
    std::vector<PdVector> test_pds;
    HorizonReport report;
    std::size_t train_items = 0, validation_items = 0, test_items = 0;
};

/// Preprocessing fitted on `train_firms`, then staged training on the given
/// channels and evaluation on `test_firms`. `seed` drives initialisation and
/// shuffling.
FitResult fit_evaluate(const Dataset& data, const std::vector<std::string>& train_firms,
                       const std::vector<std::string>& validation_firms, const std::vector<std::string>& test_firms,
                       const std::vector<ChannelKind>& channels, const TrainerConfig& config, std::uint64_t seed);

/// Same, with the 60/20/20 firm split derived from `seed`.
FitResult fit_evaluate(const Dataset& data, const std::vector<ChannelKind>& channels, const TrainerConfig& config,
                       std::uint64_t seed);

// ---------------------------------------------------------------------------
// Cross-validation and window sweep.

struct MeanStd {
    std::optional<double> mean;
    std::optional<double> std;  // sample standard deviation (k-1); unset with fewer than 2 values
    std::size_t count = 0;
};

struct CvReport {
    std::array<MeanStd, kHorizons> horizons{};
    MeanStd average;
    std::vector<HorizonReport> folds;
    std::vector<std::string> warnings;
};

MeanStd mean_std(const std::vector<double>& values);
/// Per-horizon mean and sample std over folds; NA horizons are skipped with a warning.
CvReport summarize_folds(std::vector<HorizonReport> folds);

/// Fold i is the test set, fold (i+1) mod k validation, the rest training.
/// With k = 2 the validation firms are a stratified quarter of the training fold.
CvReport cross_validate(const Dataset& data, std::size_t k, const std::vector<ChannelKind>& channels,
                        const TrainerConfig& config, std::uint64_t seed);

/// "mean (std)" with three decimals, NA when missing.
std::string format_mean_std(const MeanStd& m);
std::string cv_csv(const CvReport& r);
std::string cv_json(const CvReport& r);

/// Trading-day windows 3m, 6m, 9m, 1y, 2y.
inline constexpr std::array<std::size_t, 5> kSweepWindows{63, 126, 189, 252, 504};
std::string window_label(std::size_t trading_days);

struct WindowPoint {
    std::size_t window = 0;
    HorizonReport report;
    std::size_t observations = 0;
    std::size_t dropped = 0;  // observations lacking this much pricing history
};

/// Trains a pricing-only model of `kind` for every window size.
std::vector<WindowPoint> window_sweep(const RawPanel& raw, std::size_t quarterly_window, ModelKind kind,
                                      const std::vector<std::size_t>& windows, const TrainerConfig& config,
                                      std::uint64_t seed);
/// Header "Model,Horizon,<window labels>"; rows Average, d_3m ... d_3y, then
/// Observations and Dropped.
std::string sweep_csv(const std::vector<WindowPoint>& points, const std::string& model);
std::string sweep_json(const std::vector<WindowPoint>& points);

}  // namespace tep
