#include "experiment.hpp"

#include <algorithm>
#include <functional>
#include <set>

#include "tep/config_io.hpp"
#include "tep/error.hpp"

namespace tepctl {

namespace {

using tep::ConfigError;

// Tracks which members of one JSON object were read so leftovers can be
// reported by key path.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

    const json* find(const std::string& k) {
        known_.insert(k);
        auto it = j_.find(k);
        return it == j_.end() ? nullptr : &*it;
    }

    template <class T>
    void get(const std::string& k, T& out) {
        const json* v = find(k);
        if (!v) return;
        try {
            if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
                if (!v->is_number_unsigned()) throw ConfigError(key(k), "expected a non-negative integer");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v->is_boolean()) throw ConfigError(key(k), "expected true or false");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v->is_string()) throw ConfigError(key(k), "expected a string");
            }
            out = v->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(key(k), e.what());
        }
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!known_.count(it.key())) throw ConfigError(key(it.key()), "unknown key");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> known_;
};

template <class F>
void checked(const std::string& path, F&& f) {
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(path, e.what());
    }
}

constexpr tep::ChannelKind kAllChannels[] = {tep::ChannelKind::Fundamental, tep::ChannelKind::Market,
                                             tep::ChannelKind::Pricing, tep::ChannelKind::Noise};

// Window and feature count come from the data, so model objects omit them.
json model_json(const tep::ModelSpec& m) {
    json j = json::parse(tep::to_json(m));
    j.erase("window");
    j.erase("input_features");
    return j;
}

tep::ModelSpec decode_model(const json& j, const std::string& path, tep::ModelSpec base) {
    if (!j.is_object()) throw ConfigError(path, "expected an object");
    for (const char* derived : {"window", "input_features"})
        if (j.contains(derived)) throw ConfigError(path + "." + derived, "derived from the data; remove this key");
    // Placeholders satisfy validation until the data fixes the real shape.
    base.window = 1;
    base.input_features = 1;
    tep::from_json(j.dump(), path, base);
    return base;
}

std::size_t horizon_index(const std::string& name, const std::string& path) {
    for (std::size_t h = 0; h < tep::kHorizons; ++h)
        if (tep::kHorizonNames[h] == name || tep::kHorizonNames[h].substr(2) == name) return h;
    throw ConfigError(path, "unknown horizon '" + name + "'");
}

}  // namespace

tep::TrainerConfig ExperimentConfig::trainer() const {
    tep::TrainerConfig t;
    t.models = models;
    t.representation_size = representation_size;
    t.regime = regime;
    t.schedule = schedule;
    t.max_epochs = max_epochs;
    t.train = train;
    return t;
}

void apply_config(const std::string& text, ExperimentConfig& c) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
    }
    Reader r(root, "");
    r.get("seed", c.seed);
    r.get("output_dir", c.output_dir);

    if (const json* d = r.find("data")) {
        Reader dr(*d, "data");
        dr.get("dir", c.data_dir);
        if (const json* g = dr.find("generator")) tep::from_json(g->dump(), "data.generator", c.generator);
        if (const json* p = dr.find("panel")) tep::from_json(p->dump(), "data.panel", c.panel);
        dr.finish();
    }

    if (const json* ch = r.find("channels")) {
        Reader cr(*ch, "channels");
        for (auto kind : kAllChannels) {
            const std::string name(tep::to_string(kind));
            const json* entry = cr.find(name);
            if (!entry) continue;
            Reader er(*entry, cr.key(name));
            bool on = true;
            if (er.find("enabled")) {
                er.get("enabled", on);
                c.enabled[kind] = on;
            }
            if (const json* m = er.find("model")) {
                auto it = c.models.find(kind);
                c.models[kind] = decode_model(*m, er.key("model"), it == c.models.end() ? tep::ModelSpec{} : it->second);
            }
            er.finish();
        }
        cr.finish();
    }

    if (const json* f = r.find("fusion")) {
        Reader fr(*f, "fusion");
        fr.get("representation_size", c.representation_size);
        fr.finish();
        if (c.representation_size == 0) throw ConfigError("fusion.representation_size", "must be positive");
    }
    if (const json* g = r.find("regime")) {
        if (!g->is_string()) throw ConfigError("regime", "expected a string");
        checked("regime", [&] { c.regime = tep::regime_from_string(g->get<std::string>()); });
    }
    if (const json* s = r.find("schedule")) {
        if (s->is_null()) {
            c.schedule.reset();
        } else {
            tep::RegimeSchedule sched;
            tep::from_json(s->dump(), "schedule", sched);
            c.schedule = sched;
        }
    }
    r.get("max_epochs", c.max_epochs);
    if (c.max_epochs == 0) throw ConfigError("max_epochs", "must be positive");
    if (const json* t = r.find("train")) {
        const std::uint64_t seed = c.train.seed;
        tep::from_json(t->dump(), "train", c.train);
        if (c.train.seed != seed) throw ConfigError("train.seed", "set the top-level seed instead");
    }

    if (const json* e = r.find("eval")) {
        Reader er(*e, "eval");
        er.get("checkpoint", c.checkpoint);
        er.get("isotonic", c.isotonic);
        er.finish();
    }
    if (const json* v = r.find("cv")) {
        Reader vr(*v, "cv");
        vr.get("k", c.cv_k);
        vr.finish();
        if (c.cv_k == 0) throw ConfigError("cv.k", "must be positive");
    }
    if (const json* s = r.find("sweep")) {
        Reader sr(*s, "sweep");
        if (const json* w = sr.find("windows")) {
            if (!w->is_array() || w->empty()) throw ConfigError("sweep.windows", "expected a non-empty array");
            c.sweep_windows.clear();
            for (const auto& x : *w) {
                if (!x.is_number_unsigned() || x.get<std::size_t>() == 0)
                    throw ConfigError("sweep.windows", "expected positive integers");
                c.sweep_windows.push_back(x.get<std::size_t>());
            }
        }
        std::string model(tep::to_string(c.sweep_model));
        sr.get("model", model);
        checked("sweep.model", [&] { c.sweep_model = tep::model_kind_from_string(model); });
        sr.finish();
    }
    if (const json* s = r.find("shapley")) {
        Reader sr(*s, "shapley");
        sr.get("temporal", c.shapley_temporal);
        sr.finish();
    }
    if (const json* a = r.find("attention")) {
        Reader ar(*a, "attention");
        std::string channel(tep::to_string(c.attention_channel));
        ar.get("channel", channel);
        checked("attention.channel", [&] { c.attention_channel = tep::channel_from_string(channel); });
        std::string horizon(tep::kHorizonNames[c.attention_horizon]);
        ar.get("horizon", horizon);
        c.attention_horizon = horizon_index(horizon, "attention.horizon");
        ar.finish();
    }
    r.finish();
}

json snapshot(const ExperimentConfig& c) {
    json channels = json::object();
    for (auto kind : kAllChannels) {
        auto e = c.enabled.find(kind);
        auto m = c.models.find(kind);
        channels[std::string(tep::to_string(kind))] = {
            {"enabled", e == c.enabled.end() || e->second},
            {"model", model_json(m == c.models.end() ? tep::ModelSpec{} : m->second)}};
    }
    json train = json::parse(tep::to_json(c.train));
    train.erase("seed");
    return {{"seed", c.seed},
            {"output_dir", c.output_dir},
            {"data",
             {{"dir", c.data_dir},
              {"generator", json::parse(tep::to_json(c.generator))},
              {"panel", json::parse(tep::to_json(c.panel))}}},
            {"channels", channels},
            {"fusion", {{"representation_size", c.representation_size}}},
            {"regime", std::string(tep::to_string(c.regime))},
            {"schedule", c.schedule ? json::parse(tep::to_json(*c.schedule)) : json(nullptr)},
            {"max_epochs", c.max_epochs},
            {"train", train},
            {"eval", {{"checkpoint", c.checkpoint}, {"isotonic", c.isotonic}}},
            {"cv", {{"k", c.cv_k}}},
            {"sweep", {{"windows", c.sweep_windows}, {"model", std::string(tep::to_string(c.sweep_model))}}},
            {"shapley", {{"temporal", c.shapley_temporal}}},
            {"attention",
             {{"channel", std::string(tep::to_string(c.attention_channel))},
              {"horizon", std::string(tep::kHorizonNames[c.attention_horizon])}}}};
}

std::vector<std::pair<std::string, std::string>> config_keys(const std::vector<std::string>& sections) {
    std::vector<std::pair<std::string, std::string>> out;
    // Walk the resolved defaults; arrays are leaves.
    std::function<void(const json&, const std::string&)> walk = [&](const json& j, const std::string& key) {
        if (j.is_object() && !j.empty()) {
            for (auto it = j.begin(); it != j.end(); ++it) walk(it.value(), key.empty() ? it.key() : key + "." + it.key());
            return;
        }
        out.emplace_back(key, j.dump());
    };
    const json defaults = snapshot(ExperimentConfig{});
    for (const auto& s : sections)
        if (defaults.contains(s)) walk(defaults.at(s), s);
    return out;
}

}  // namespace tepctl
