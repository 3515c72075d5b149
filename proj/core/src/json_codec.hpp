#pragma once

// nlohmann-based encoders shared by config_io.cpp and checkpoint.cpp.

#include <cstdint>
#include <set>
#include <string>

#include "json.hpp"
#include "tep/datapipe.hpp"
#include "tep/error.hpp"
#include "tep/fusion.hpp"
#include "tep/nets.hpp"

namespace tep::codec {

using nlohmann::json;

/// Reads an object field by field and rejects keys nobody asked for.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path);

    std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    /// The member, or nullptr when absent; marks the key as known.
    const json* find(const std::string& key);

    void get(const std::string& key, std::size_t& out);  // also std::uint64_t on LP64
    void get(const std::string& key, double& out);
    void get(const std::string& key, bool& out);
    void get(const std::string& key, std::string& out);
    void get(const std::string& key, std::vector<std::size_t>& out);

    /// Throws on the first key that was never looked up.
    void finish() const;

private:
    const json& j_;
    std::string path_;
    std::set<std::string> known_;
};

json encode(const GeneratorConfig& c);
json encode(const PanelConfig& c);
json encode(const ModelSpec& c);
json encode(const FusionConfig& c);
json encode(const TrainConfig& c);
json encode(const RegimeSchedule& c);
json encode(const PreprocessStats& c);
json encode(const TrainingLog& c);

void decode(const json& j, const std::string& path, GeneratorConfig& out);
void decode(const json& j, const std::string& path, PanelConfig& out);
void decode(const json& j, const std::string& path, ModelSpec& out);
void decode(const json& j, const std::string& path, FusionConfig& out);
void decode(const json& j, const std::string& path, TrainConfig& out);
void decode(const json& j, const std::string& path, RegimeSchedule& out);
void decode(const json& j, const std::string& path, PreprocessStats& out);
void decode(const json& j, const std::string& path, TrainingLog& out);

}  // namespace tep::codec
