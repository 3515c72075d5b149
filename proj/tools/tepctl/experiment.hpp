#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tep/datapipe.hpp"
#include "tep/fusion.hpp"
#include "tep/metrics.hpp"

namespace tepctl {

using nlohmann::json;

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "tep-out";

    std::string data_dir;  // CSV directory; empty = generate
    tep::GeneratorConfig generator;
    tep::PanelConfig panel;

    std::map<tep::ChannelKind, bool> enabled;  // absent = enabled when present in the data
    std::map<tep::ChannelKind, tep::ModelSpec> models;
    std::size_t representation_size = 72;
    tep::Regime regime = tep::Regime::R3;
    std::optional<tep::RegimeSchedule> schedule;
    std::size_t max_epochs = 50;
    tep::TrainConfig train;

    std::string checkpoint;  // eval / attention input; empty = <output>/checkpoint.tepc
    bool isotonic = false;
    std::size_t cv_k = 10;
    std::vector<std::size_t> sweep_windows{tep::kSweepWindows.begin(), tep::kSweepWindows.end()};
    tep::ModelKind sweep_model = tep::ModelKind::Tep;
    bool shapley_temporal = true;
    tep::ChannelKind attention_channel = tep::ChannelKind::Fundamental;
    std::size_t attention_horizon = tep::kHorizons - 1;

    tep::TrainerConfig trainer() const;
};

/// Applies a JSON document on top of the defaults. Throws tep::ConfigError
/// with the offending key path.
void apply_config(const std::string& text, ExperimentConfig& out);

/// Fully resolved configuration, every key present.
json snapshot(const ExperimentConfig& c);

/// Dotted key paths with their default values for the given top-level
/// sections ("data", "train", ...).
std::vector<std::pair<std::string, std::string>> config_keys(const std::vector<std::string>& sections);

}  // namespace tepctl
