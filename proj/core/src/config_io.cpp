#include "tep/config_io.hpp"

#include <type_traits>

#include "json_codec.hpp"

namespace tep::codec {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seeds are read through the size_t path");

ObjectReader::ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
}

const json* ObjectReader::find(const std::string& key) {
    known_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
}

void ObjectReader::get(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) {
        if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0))
            throw ConfigError(key_path(key), "expected a non-negative integer");
        out = v->get<std::size_t>();
    }
}

void ObjectReader::get(const std::string& key, double& out) {
    if (const json* v = find(key)) {
        if (!v->is_number()) throw ConfigError(key_path(key), "expected a number");
        out = v->get<double>();
    }
}

void ObjectReader::get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
        if (!v->is_boolean()) throw ConfigError(key_path(key), "expected true or false");
        out = v->get<bool>();
    }
}

void ObjectReader::get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
        if (!v->is_string()) throw ConfigError(key_path(key), "expected a string");
        out = v->get<std::string>();
    }
}

void ObjectReader::get(const std::string& key, std::vector<std::size_t>& out) {
    if (const json* v = find(key)) {
        if (!v->is_array()) throw ConfigError(key_path(key), "expected an array of integers");
        std::vector<std::size_t> r;
        for (std::size_t i = 0; i < v->size(); ++i) {
            const json& e = (*v)[i];
            if (!e.is_number_unsigned())
                throw ConfigError(key_path(key) + "[" + std::to_string(i) + "]", "expected a non-negative integer");
            r.push_back(e.get<std::size_t>());
        }
        out = std::move(r);
    }
}

void ObjectReader::finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
        if (!known_.count(it.key())) throw ConfigError(key_path(it.key()), "unknown key");
}

namespace {

template <class F>
void validated(const std::string& path, F&& check) {
    try {
        check();
    } catch (const InvalidArgument& e) {
        throw ConfigError(path.empty() ? "<root>" : path, e.what());
    }
}

ChannelKind channel_at(const json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path, "expected a channel name");
    try {
        return channel_from_string(v.get<std::string>());
    } catch (const InvalidArgument& e) {
        throw ConfigError(path, e.what());
    }
}

std::string hex(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t unhex(const json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path, "expected a hex string");
    const std::string s = v.get<std::string>();
    std::size_t used = 0;
    std::uint64_t r = 0;
    try {
        r = std::stoull(s, &used, 16);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw ConfigError(path, "expected a hex string");
    return r;
}

}  // namespace

// ---------------------------------------------------------------- generator

json encode(const GeneratorConfig& c) {
    return {{"firms", c.firms},
            {"history_quarters", c.history_quarters},
            {"observation_quarters", c.observation_quarters},
            {"fundamental_features", c.fundamental_features},
            {"market_features", c.market_features},
            {"noise_features", c.noise_features},
            {"alpha_fundamental", c.alpha_fundamental},
            {"alpha_market", c.alpha_market},
            {"alpha_pricing", c.alpha_pricing},
            {"base_hazard", c.base_hazard},
            {"persistence_fundamental", c.persistence_fundamental},
            {"persistence_market", c.persistence_market},
            {"persistence_pricing", c.persistence_pricing},
            {"persistence_market_factor", c.persistence_market_factor},
            {"fundamental_noise", c.fundamental_noise},
            {"market_noise", c.market_noise},
            {"pricing_drift", c.pricing_drift},
            {"pricing_volatility", c.pricing_volatility},
            {"missing_rate", c.missing_rate},
            {"outlier_rate", c.outlier_rate},
            {"plant_lag", c.plant_lag},
            {"plant_amplitude", c.plant_amplitude},
            {"start_date", c.start_date}};
}

void decode(const json& j, const std::string& path, GeneratorConfig& c) {
    ObjectReader r(j, path);
    r.get("firms", c.firms);
    r.get("history_quarters", c.history_quarters);
    r.get("observation_quarters", c.observation_quarters);
    r.get("fundamental_features", c.fundamental_features);
    r.get("market_features", c.market_features);
    r.get("noise_features", c.noise_features);
    r.get("alpha_fundamental", c.alpha_fundamental);
    r.get("alpha_market", c.alpha_market);
    r.get("alpha_pricing", c.alpha_pricing);
    r.get("base_hazard", c.base_hazard);
    r.get("persistence_fundamental", c.persistence_fundamental);
    r.get("persistence_market", c.persistence_market);
    r.get("persistence_pricing", c.persistence_pricing);
    r.get("persistence_market_factor", c.persistence_market_factor);
    r.get("fundamental_noise", c.fundamental_noise);
    r.get("market_noise", c.market_noise);
    r.get("pricing_drift", c.pricing_drift);
    r.get("pricing_volatility", c.pricing_volatility);
    r.get("missing_rate", c.missing_rate);
    r.get("outlier_rate", c.outlier_rate);
    r.get("plant_lag", c.plant_lag);
    r.get("plant_amplitude", c.plant_amplitude);
    r.get("start_date", c.start_date);
    r.finish();
    validated(path, [&] { c.validate(); });
}

// ---------------------------------------------------------------- panel

json encode(const PanelConfig& c) {
    return {{"quarterly_window", c.quarterly_window}, {"pricing_window", c.pricing_window}};
}

void decode(const json& j, const std::string& path, PanelConfig& c) {
    ObjectReader r(j, path);
    r.get("quarterly_window", c.quarterly_window);
    r.get("pricing_window", c.pricing_window);
    r.finish();
    if (c.quarterly_window == 0) throw ConfigError(r.key_path("quarterly_window"), "must be positive");
    if (c.pricing_window == 0) throw ConfigError(r.key_path("pricing_window"), "must be positive");
}

// ---------------------------------------------------------------- models

json encode(const ModelSpec& c) {
    return {{"kind", std::string(to_string(c.kind))},
            {"window", c.window},
            {"input_features", c.input_features},
            {"tep",
             {{"model_size", c.tep.model_size},
              {"layers", c.tep.layers},
              {"heads", c.tep.heads},
              {"conv_kernel", c.tep.conv_kernel},
              {"ff_multiplier", c.tep.ff_multiplier},
              {"dropout", c.tep.dropout},
              {"positional_encoding", c.tep.positional_encoding}}},
            {"tcn",
             {{"filters", c.tcn.filters},
              {"kernel", c.tcn.kernel},
              {"levels", c.tcn.levels},
              {"dropout", c.tcn.dropout}}},
            {"lstm", {{"units", c.lstm.units}, {"layers", c.lstm.layers}}},
            {"nn", {{"hidden", c.nn.hidden}, {"dropout", c.nn.dropout}}}};
}

void decode(const json& j, const std::string& path, ModelSpec& c) {
    ObjectReader r(j, path);
    std::string kind(to_string(c.kind));
    r.get("kind", kind);
    validated(r.key_path("kind"), [&] { c.kind = model_kind_from_string(kind); });
    r.get("window", c.window);
    r.get("input_features", c.input_features);
    if (const json* t = r.find("tep")) {
        ObjectReader s(*t, r.key_path("tep"));
        s.get("model_size", c.tep.model_size);
        s.get("layers", c.tep.layers);
        s.get("heads", c.tep.heads);
        s.get("conv_kernel", c.tep.conv_kernel);
        s.get("ff_multiplier", c.tep.ff_multiplier);
        s.get("dropout", c.tep.dropout);
        s.get("positional_encoding", c.tep.positional_encoding);
        s.finish();
    }
    if (const json* t = r.find("tcn")) {
        ObjectReader s(*t, r.key_path("tcn"));
        s.get("filters", c.tcn.filters);
        s.get("kernel", c.tcn.kernel);
        s.get("levels", c.tcn.levels);
        s.get("dropout", c.tcn.dropout);
        s.finish();
    }
    if (const json* t = r.find("lstm")) {
        ObjectReader s(*t, r.key_path("lstm"));
        s.get("units", c.lstm.units);
        s.get("layers", c.lstm.layers);
        s.finish();
    }
    if (const json* t = r.find("nn")) {
        ObjectReader s(*t, r.key_path("nn"));
        s.get("hidden", c.nn.hidden);
        s.get("dropout", c.nn.dropout);
        s.finish();
    }
    r.finish();
    validated(path, [&] { c.validate(); });
}

json encode(const FusionConfig& c) {
    json channels = json::array();
    for (const auto& m : c.channels)
        channels.push_back({{"channel", std::string(to_string(m.channel))}, {"model", encode(m.spec)}});
    return {{"representation_size", c.representation_size}, {"channels", channels}};
}

void decode(const json& j, const std::string& path, FusionConfig& c) {
    ObjectReader r(j, path);
    r.get("representation_size", c.representation_size);
    if (const json* chans = r.find("channels")) {
        if (!chans->is_array()) throw ConfigError(r.key_path("channels"), "expected an array");
        c.channels.clear();
        for (std::size_t i = 0; i < chans->size(); ++i) {
            const std::string p = r.key_path("channels") + "[" + std::to_string(i) + "]";
            ObjectReader e((*chans)[i], p);
            ChannelModelConfig m;
            const json* ch = e.find("channel");
            if (!ch) throw ConfigError(p + ".channel", "missing");
            m.channel = channel_at(*ch, p + ".channel");
            if (const json* model = e.find("model")) decode(*model, p + ".model", m.spec);
            e.finish();
            c.channels.push_back(std::move(m));
        }
    }
    r.finish();
    validated(path, [&] { c.validate(); });
}

// ---------------------------------------------------------------- training

json encode(const TrainConfig& c) {
    return {{"batch_size", c.batch_size},
            {"optimizer", c.optimizer.kind == OptimizerKind::Adam ? "adam" : "sgd"},
            {"learning_rate", c.optimizer.learning_rate},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"epsilon", c.optimizer.epsilon},
            {"seed", c.seed}};
}

void decode(const json& j, const std::string& path, TrainConfig& c) {
    ObjectReader r(j, path);
    r.get("batch_size", c.batch_size);
    std::string opt = c.optimizer.kind == OptimizerKind::Adam ? "adam" : "sgd";
    r.get("optimizer", opt);
    if (opt == "adam")
        c.optimizer.kind = OptimizerKind::Adam;
    else if (opt == "sgd")
        c.optimizer.kind = OptimizerKind::Sgd;
    else
        throw ConfigError(r.key_path("optimizer"), "expected \"adam\" or \"sgd\"");
    r.get("learning_rate", c.optimizer.learning_rate);
    r.get("beta1", c.optimizer.beta1);
    r.get("beta2", c.optimizer.beta2);
    r.get("epsilon", c.optimizer.epsilon);
    r.get("seed", c.seed);
    r.finish();
    if (c.batch_size == 0) throw ConfigError(r.key_path("batch_size"), "must be positive");
    if (!(c.optimizer.learning_rate > 0.0)) throw ConfigError(r.key_path("learning_rate"), "must be positive");
}

json encode(const RegimeSchedule& c) {
    json stages = json::array();
    for (const auto& s : c.stages) {
        json active = json::array();
        for (auto k : s.active) active.push_back(std::string(to_string(k)));
        stages.push_back({{"name", s.name},
                          {"active", active},
                          {"trainable", s.trainable},
                          {"patience", s.patience},
                          {"max_epochs", s.max_epochs}});
    }
    return {{"stages", stages}};
}

void decode(const json& j, const std::string& path, RegimeSchedule& c) {
    ObjectReader r(j, path);
    if (const json* stages = r.find("stages")) {
        if (!stages->is_array()) throw ConfigError(r.key_path("stages"), "expected an array");
        c.stages.clear();
        for (std::size_t i = 0; i < stages->size(); ++i) {
            const std::string p = r.key_path("stages") + "[" + std::to_string(i) + "]";
            ObjectReader e((*stages)[i], p);
            Stage s;
            e.get("name", s.name);
            if (const json* a = e.find("active")) {
                if (!a->is_array()) throw ConfigError(p + ".active", "expected an array of channel names");
                for (std::size_t k = 0; k < a->size(); ++k)
                    s.active.push_back(channel_at((*a)[k], p + ".active[" + std::to_string(k) + "]"));
            }
            if (const json* t = e.find("trainable")) {
                if (!t->is_array()) throw ConfigError(p + ".trainable", "expected an array of group names");
                for (std::size_t k = 0; k < t->size(); ++k) {
                    if (!(*t)[k].is_string())
                        throw ConfigError(p + ".trainable[" + std::to_string(k) + "]", "expected a string");
                    s.trainable.push_back((*t)[k].get<std::string>());
                }
            }
            e.get("patience", s.patience);
            e.get("max_epochs", s.max_epochs);
            e.finish();
            c.stages.push_back(std::move(s));
        }
    }
    r.finish();
}

// ---------------------------------------------------------------- stats and log

json encode(const PreprocessStats& c) {
    json out = json::object();
    for (const auto& [kind, feats] : c.channels) {
        json arr = json::array();
        for (const auto& f : feats) arr.push_back({{"median", f.median}, {"iqr", f.iqr}, {"degenerate", f.degenerate}});
        out[std::string(to_string(kind))] = arr;
    }
    return out;
}

void decode(const json& j, const std::string& path, PreprocessStats& c) {
    if (!j.is_object()) throw ConfigError(path, "expected an object");
    c.channels.clear();
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string p = path + "." + it.key();
        const ChannelKind kind = channel_at(json(it.key()), p);
        if (!it->is_array()) throw ConfigError(p, "expected an array");
        std::vector<FeatureStats> feats;
        for (std::size_t i = 0; i < it->size(); ++i) {
            ObjectReader e((*it)[i], p + "[" + std::to_string(i) + "]");
            FeatureStats f;
            e.get("median", f.median);
            e.get("iqr", f.iqr);
            e.get("degenerate", f.degenerate);
            e.finish();
            feats.push_back(f);
        }
        c.channels[kind] = std::move(feats);
    }
}

namespace {

json encode_hashes(const std::map<std::string, std::uint64_t>& h) {
    json out = json::object();
    for (const auto& [name, v] : h) out[name] = hex(v);
    return out;
}

std::map<std::string, std::uint64_t> decode_hashes(const json* j, const std::string& path) {
    std::map<std::string, std::uint64_t> out;
    if (!j) return out;
    if (!j->is_object()) throw ConfigError(path, "expected an object");
    for (auto it = j->begin(); it != j->end(); ++it) out[it.key()] = unhex(*it, path + "." + it.key());
    return out;
}

}  // namespace

json encode(const TrainingLog& c) {
    json stages = json::array();
    for (const auto& s : c.stages) {
        json epochs = json::array();
        for (const auto& e : s.epochs)
            epochs.push_back({{"epoch", e.epoch},
                              {"train_loss", e.train_loss},
                              {"validation_loss", e.validation_loss},
                              {"improved", e.improved}});
        stages.push_back({{"name", s.name},
                          {"active", s.active},
                          {"trainable", s.trainable},
                          {"patience", s.patience},
                          {"epochs", epochs},
                          {"best_epoch", s.best_epoch},
                          {"early_stopped", s.early_stopped},
                          {"frozen_intact", s.frozen_intact()},
                          {"frozen_before", encode_hashes(s.frozen_before)},
                          {"frozen_after", encode_hashes(s.frozen_after)},
                          {"trainable_before", encode_hashes(s.trainable_before)},
                          {"trainable_after", encode_hashes(s.trainable_after)}});
    }
    return {{"stages", stages}};
}

void decode(const json& j, const std::string& path, TrainingLog& c) {
    ObjectReader r(j, path);
    c.stages.clear();
    if (const json* stages = r.find("stages")) {
        if (!stages->is_array()) throw ConfigError(r.key_path("stages"), "expected an array");
        for (std::size_t i = 0; i < stages->size(); ++i) {
            const std::string p = r.key_path("stages") + "[" + std::to_string(i) + "]";
            ObjectReader e((*stages)[i], p);
            StageLog s;
            e.get("name", s.name);
            for (auto* field : {&s.active, &s.trainable}) {
                const std::string key = field == &s.active ? "active" : "trainable";
                if (const json* a = e.find(key)) {
                    if (!a->is_array()) throw ConfigError(p + "." + key, "expected an array");
                    for (const auto& v : *a) field->push_back(v.get<std::string>());
                }
            }
            e.get("patience", s.patience);
            if (const json* ep = e.find("epochs")) {
                if (!ep->is_array()) throw ConfigError(p + ".epochs", "expected an array");
                for (std::size_t k = 0; k < ep->size(); ++k) {
                    ObjectReader er((*ep)[k], p + ".epochs[" + std::to_string(k) + "]");
                    EpochLog l;
                    er.get("epoch", l.epoch);
                    er.get("train_loss", l.train_loss);
                    er.get("validation_loss", l.validation_loss);
                    er.get("improved", l.improved);
                    er.finish();
                    s.epochs.push_back(l);
                }
            }
            e.get("best_epoch", s.best_epoch);
            e.get("early_stopped", s.early_stopped);
            e.find("frozen_intact");  // derived from the hashes
            s.frozen_before = decode_hashes(e.find("frozen_before"), p + ".frozen_before");
            s.frozen_after = decode_hashes(e.find("frozen_after"), p + ".frozen_after");
            s.trainable_before = decode_hashes(e.find("trainable_before"), p + ".trainable_before");
            s.trainable_after = decode_hashes(e.find("trainable_after"), p + ".trainable_after");
            e.finish();
            c.stages.push_back(std::move(s));
        }
    }
    r.finish();
}

}  // namespace tep::codec

namespace tep {

namespace {

codec::json parse_text(std::string_view text, const std::string& path) {
    try {
        return codec::json::parse(text);
    } catch (const codec::json::parse_error& e) {
        throw ConfigError(path.empty() ? "<root>" : path, std::string("invalid JSON: ") + e.what());
    }
}

template <class T>
void from_text(std::string_view text, const std::string& path, T& out) {
    codec::decode(parse_text(text, path), path, out);
}

}  // namespace

std::string to_json(const GeneratorConfig& c) { return codec::encode(c).dump(); }
std::string to_json(const PanelConfig& c) { return codec::encode(c).dump(); }
std::string to_json(const ModelSpec& c) { return codec::encode(c).dump(); }
std::string to_json(const FusionConfig& c) { return codec::encode(c).dump(); }
std::string to_json(const TrainConfig& c) { return codec::encode(c).dump(); }
std::string to_json(const RegimeSchedule& c) { return codec::encode(c).dump(); }
std::string to_json(const PreprocessStats& c) { return codec::encode(c).dump(); }
std::string to_json(const TrainingLog& c) { return codec::encode(c).dump(); }

void from_json(std::string_view text, const std::string& path, GeneratorConfig& out) { from_text(text, path, out); }
void from_json(std::string_view text, const std::string& path, PanelConfig& out) { from_text(text, path, out); }
void from_json(std::string_view text, const std::string& path, ModelSpec& out) { from_text(text, path, out); }
void from_json(std::string_view text, const std::string& path, FusionConfig& out) { from_text(text, path, out); }
void from_json(std::string_view text, const std::string& path, TrainConfig& out) { from_text(text, path, out); }
void from_json(std::string_view text, const std::string& path, RegimeSchedule& out) { from_text(text, path, out); }
void from_json(std::string_view text, const std::string& path, PreprocessStats& out) { from_text(text, path, out); }

}  // namespace tep
