#pragma once

#include <string>
#include <string_view>

#include "tep/datapipe.hpp"
#include "tep/fusion.hpp"
#include "tep/nets.hpp"

namespace tep {

// JSON text codecs for configuration structs. Decoding applies the keys
// present in `text` on top of `out`, so partial objects keep defaults.
// Unknown keys, wrong types and failed validation raise ConfigError carrying
// the key path rooted at `path`.

std::string to_json(const GeneratorConfig& c);
std::string to_json(const PanelConfig& c);
std::string to_json(const ModelSpec& c);
std::string to_json(const FusionConfig& c);
std::string to_json(const TrainConfig& c);
std::string to_json(const RegimeSchedule& c);
std::string to_json(const PreprocessStats& c);
/// Encode only; hashes as 16-digit hex strings.
std::string to_json(const TrainingLog& c);

void from_json(std::string_view text, const std::string& path, GeneratorConfig& out);
void from_json(std::string_view text, const std::string& path, PanelConfig& out);
void from_json(std::string_view text, const std::string& path, ModelSpec& out);
void from_json(std::string_view text, const std::string& path, FusionConfig& out);
void from_json(std::string_view text, const std::string& path, TrainConfig& out);
void from_json(std::string_view text, const std::string& path, RegimeSchedule& out);
void from_json(std::string_view text, const std::string& path, PreprocessStats& out);

}  // namespace tep
