#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace test_util {

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("tep_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// O(n^2) Mann-Whitney oracle: correctly ordered pos/neg pairs plus half the ties.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double credit = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            pairs += 1.0;
            if (scores[i] > scores[j])
                credit += 1.0;
            else if (scores[i] == scores[j])
                credit += 0.5;
        }
    }
    return credit / pairs;
}

}  // namespace test_util

#include "tep/datapipe.hpp"

namespace test_util {

/// A small generated panel, split by firm and preprocessed with train stats.
struct SmallData {
    tep::Dataset data;
    tep::PreprocessStats stats;
    tep::PreparedSet train, validation, test;
};

inline tep::GeneratorConfig small_generator(std::size_t firms = 80) {
    tep::GeneratorConfig g;
    g.firms = firms;
    g.history_quarters = 4;
    g.observation_quarters = 4;
    g.fundamental_features = 3;
    g.market_features = 2;
    g.base_hazard = -6.5;
    return g;
}

inline SmallData small_data(const tep::GeneratorConfig& g, std::uint64_t seed, std::size_t quarterly_window = 4,
                            std::size_t pricing_window = 42) {
    SmallData s;
    s.data = tep::generate_synthetic(g, {quarterly_window, pricing_window}, seed);
    const auto split = tep::split_by_firm(s.data, seed);
    const auto train = s.data.subset(split.train);
    s.stats = tep::fit_preprocess(train);
    s.train = tep::prepare(train, s.stats);
    s.validation = tep::prepare(s.data.subset(split.validation), s.stats);
    s.test = tep::prepare(s.data.subset(split.test), s.stats);
    return s;
}

}  // namespace test_util
