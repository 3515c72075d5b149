#include <algorithm>
#include <cmath>

#include "tep/datapipe.hpp"
#include "tep/error.hpp"
#include "tep/rng.hpp"

namespace tep {

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw InvalidArgument("quantile of an empty sample");
    if (q < 0.0 || q > 1.0) throw InvalidArgument("quantile level outside [0,1]");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<FeatureStats> fit_feature_stats(const std::vector<const ChannelPanel*>& panels) {
    if (panels.empty()) throw InvalidArgument("fit_preprocess: no training panels");
    const std::size_t f = panels.front()->values.cols();
    std::vector<FeatureStats> out(f);
    std::vector<double> column;
    for (std::size_t j = 0; j < f; ++j) {
        column.clear();
        for (const ChannelPanel* p : panels) {
            if (p->values.cols() != f) throw InvalidArgument("fit_preprocess: inconsistent feature count");
            for (std::size_t t = 0; t < p->values.rows(); ++t)
                if (!p->missing[t * f + j]) column.push_back(p->values(t, j));
        }
        if (column.empty()) {
            out[j] = {0.0, 0.0, true};
            continue;
        }
        std::sort(column.begin(), column.end());
        out[j].median = quantile_sorted(column, 0.5);
        out[j].iqr = quantile_sorted(column, 0.75) - quantile_sorted(column, 0.25);
        out[j].degenerate = !(out[j].iqr > 0.0);
    }
    return out;
}

PreprocessStats fit_preprocess(const Dataset& train) {
    if (train.observations.empty()) throw InvalidArgument("fit_preprocess: empty training set");
    PreprocessStats stats;
    for (std::size_t c = 0; c < train.channels.size(); ++c) {
        std::vector<const ChannelPanel*> panels;
        panels.reserve(train.observations.size());
        for (const auto& o : train.observations) panels.push_back(&o.panels[c]);
        stats.channels[train.channels[c].kind] = fit_feature_stats(panels);
    }
    return stats;
}

Tensor apply_preprocess(const ChannelPanel& panel, const std::vector<FeatureStats>& stats) {
    const std::size_t w = panel.values.rows(), f = panel.values.cols();
    if (f != stats.size())
        throw InvalidArgument("apply_preprocess: panel has " + std::to_string(f) + " features, stats have " +
                              std::to_string(stats.size()));
    Tensor out = Tensor::matrix(w, 2 * f);
    for (std::size_t t = 0; t < w; ++t) {
        for (std::size_t j = 0; j < f; ++j) {
            if (panel.missing[t * f + j]) {
                out(t, f + j) = 1.0;
                continue;
            }
            const FeatureStats& s = stats[j];
            const double centred = panel.values(t, j) - s.median;
            const double scaled = s.degenerate ? centred : centred / s.iqr;
            out(t, j) = std::clamp(scaled, -kWinsorBound, kWinsorBound);
        }
    }
    return out;
}

PreparedSet prepare(const Dataset& data, const PreprocessStats& stats) {
    PreparedSet set;
    set.channels = data.channels;
    set.items.resize(data.observations.size());
    for (std::size_t i = 0; i < data.observations.size(); ++i) {
        const Observation& o = data.observations[i];
        PreparedObservation& p = set.items[i];
        p.source = i;
        for (std::size_t c = 0; c < data.channels.size(); ++c) {
            auto it = stats.channels.find(data.channels[c].kind);
            if (it == stats.channels.end())
                throw InvalidArgument("no preprocessing stats for channel " +
                                      std::string(to_string(data.channels[c].kind)));
            p.inputs.push_back(apply_preprocess(o.panels[c], it->second));
        }
        p.targets = o.target.as_row();
    }
    return set;
}

FoldAssignment assign_folds(const std::map<std::string, bool>& defaulted, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw InvalidArgument("fold count must be at least 2");
    if (k > defaulted.size())
        throw InvalidArgument("fold count " + std::to_string(k) + " exceeds firm count " +
                              std::to_string(defaulted.size()));
    std::vector<std::string> strata[2];
    for (const auto& [firm, flag] : defaulted) strata[flag ? 1 : 0].push_back(firm);
    Rng rng(seed, "folds");
    FoldAssignment folds;
    std::size_t next = 0;
    for (int s : {1, 0}) {
        rng.shuffle(strata[s]);
        for (const auto& firm : strata[s]) folds[firm] = next++ % k;
    }
    return folds;
}

std::map<std::string, bool> defaulted_ever(const Dataset& data) {
    std::map<std::string, bool> flags;
    for (const auto& o : data.observations) {
        bool& f = flags[o.firm_id];
        f = f || o.target.y[kHorizons - 1] == 1;
    }
    return flags;
}

Split split_from_folds(const FoldAssignment& folds, std::size_t k, std::size_t test_fold) {
    if (test_fold >= k) throw InvalidArgument("test fold out of range");
    const std::size_t val_fold = (test_fold + 1) % k;
    Split s;
    for (const auto& [firm, fold] : folds) {
        if (fold == test_fold)
            s.test.push_back(firm);
        else if (fold == val_fold)
            s.validation.push_back(firm);
        else
            s.train.push_back(firm);
    }
    return s;
}

Split split_by_firm(const Dataset& data, std::uint64_t seed) {
    // Folds 3 and 4 of five hold test and validation: 60/20/20.
    return split_from_folds(assign_folds(defaulted_ever(data), 5, seed), 5, 3);
}

}  // namespace tep
