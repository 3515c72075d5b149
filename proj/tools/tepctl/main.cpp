// tepctl: data generation, training, evaluation and attribution runs driven
// by one JSON experiment config.

#include <tbb/global_control.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include "CLI11.hpp"
#include "experiment.hpp"
#include "tep/config_io.hpp"
#include "tep/error.hpp"
#include "tep/interpret.hpp"
#include "tep/shapley.hpp"

namespace fs = std::filesystem;
using namespace tepctl;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kRuntimeFailure = 1;
constexpr int kConfigFailure = 2;

class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what) : std::runtime_error(what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

// Line-delimited JSON on stderr and in <output>/log.jsonl.
class Logger {
public:
    void open(const fs::path& file) { file_.open(file, std::ios::app); }

    void event(const std::string& name, json fields = json::object()) {
        fields["event"] = name;
        fields["elapsed_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        const std::string line = fields.dump();
        std::lock_guard lock(mu_);
        std::cerr << line << '\n';
        if (file_) file_ << line << '\n' << std::flush;
    }

private:
    std::mutex mu_;
    std::ofstream file_;
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

Logger logger;

// Runs one named step; failures are reported with the step name.
template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
    logger.event("stage", {{"stage", name}});
    try {
        return f();
    } catch (const tep::ConfigError&) {
        throw;
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("failed writing " + path.string());
    logger.event("artifact", {{"path", path.string()}});
}

std::string read_text(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw tep::ConfigError("--config", "cannot read " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out, data, regime, checkpoint;
    std::optional<std::size_t> k, max_epochs;
    std::size_t threads = 0;
};

struct Run {
    ExperimentConfig cfg;
    fs::path out;

    fs::path checkpoint_path() const { return cfg.checkpoint.empty() ? out / "checkpoint.tepc" : fs::path(cfg.checkpoint); }
};

Run resolve(const Flags& f) {
    Run r;
    if (!f.config.empty()) apply_config(read_text(f.config), r.cfg);
    if (f.seed) r.cfg.seed = *f.seed;
    if (f.out) r.cfg.output_dir = *f.out;
    if (f.data) r.cfg.data_dir = *f.data;
    if (f.regime) {
        try {
            r.cfg.regime = tep::regime_from_string(*f.regime);
        } catch (const std::exception& e) {
            throw tep::ConfigError("regime", e.what());
        }
    }
    if (f.checkpoint) r.cfg.checkpoint = *f.checkpoint;
    if (f.k) {
        if (*f.k == 0) throw tep::ConfigError("cv.k", "must be positive");
        r.cfg.cv_k = *f.k;
    }
    if (f.max_epochs) {
        if (*f.max_epochs == 0) throw tep::ConfigError("max_epochs", "must be positive");
        r.cfg.max_epochs = *f.max_epochs;
    }
    r.cfg.train.seed = r.cfg.seed;

    r.out = r.cfg.output_dir;
    if (const char* root = std::getenv("TEP_OUTPUT_ROOT"); root && *root && r.out.is_relative()) r.out = fs::path(root) / r.out;
    std::error_code ec;
    fs::create_directories(r.out, ec);
    if (ec) throw StageError("setup", "cannot create output directory " + r.out.string() + ": " + ec.message());
    logger.open(r.out / "log.jsonl");
    return r;
}

void write_snapshot(const Run& r, const std::string& command) {
    json s = snapshot(r.cfg);
    write_text(r.out / ("config." + command + ".json"), s.dump(2) + "\n");
}

tep::RawPanel load_raw(const Run& r) {
    return stage("load-data", [&] {
        if (!r.cfg.data_dir.empty()) return tep::read_raw_panel(tep::default_paths(r.cfg.data_dir));
        return tep::generate_raw(r.cfg.generator, r.cfg.seed);
    });
}

tep::Dataset load_dataset(const Run& r) {
    const tep::RawPanel raw = load_raw(r);
    return stage("assemble", [&] {
        tep::Dataset d = tep::assemble_dataset(raw, r.cfg.panel);
        for (const auto& w : d.report.warnings) logger.event("warning", {{"message", w}});
        logger.event("dataset", {{"observations", d.observations.size()}, {"firms", d.firm_ids().size()}});
        return d;
    });
}

// Channels present in the data and not switched off.
std::vector<tep::ChannelKind> channels_of(const Run& r, const tep::Dataset& d) {
    std::vector<tep::ChannelKind> out;
    for (const auto& c : d.channels) {
        auto it = r.cfg.enabled.find(c.kind);
        if (it == r.cfg.enabled.end() || it->second) out.push_back(c.kind);
    }
    if (out.empty()) throw tep::ConfigError("channels", "no channel enabled");
    return out;
}

tep::TrainerConfig trainer_with_progress(const Run& r) {
    tep::TrainerConfig t = r.cfg.trainer();
    t.train.on_epoch = [](const tep::StageLog& s, const tep::EpochLog& e) {
        logger.event("epoch", {{"stage", s.name},
                               {"epoch", e.epoch},
                               {"train_loss", e.train_loss},
                               {"validation_loss", e.validation_loss},
                               {"improved", e.improved}});
    };
    return t;
}

json positives(const tep::Dataset& d) {
    json h = json::object();
    for (std::size_t k = 0; k < tep::kHorizons; ++k) {
        std::size_t n = 0;
        for (const auto& o : d.observations) n += o.target.y[k];
        h[std::string(tep::kHorizonNames[k])] = n;
    }
    return h;
}

json split_summary(const tep::Dataset& d) {
    return {{"firms", d.firm_ids().size()}, {"observations", d.observations.size()}, {"positives", positives(d)}};
}

// ---------------------------------------------------------------- commands

int cmd_gen(const Run& r) {
    write_snapshot(r, "gen");
    const tep::RawPanel raw = stage("generate", [&] { return tep::generate_raw(r.cfg.generator, r.cfg.seed); });
    stage("write-outputs", [&] { tep::write_raw_panel(raw, r.out / "data"); });
    logger.event("done", {{"firms", raw.firms.size()}, {"dir", (r.out / "data").string()}});
    return kOk;
}

int cmd_prep(const Run& r) {
    write_snapshot(r, "prep");
    const tep::Dataset d = load_dataset(r);
    const auto split = stage("split", [&] { return tep::split_by_firm(d, r.cfg.seed); });
    const tep::Dataset train = d.subset(split.train);
    const auto stats = stage("fit-preprocess", [&] { return tep::fit_preprocess(train); });

    json audit;
    stage("audit", [&] {
        audit["assembly"] = {{"candidates", d.report.candidates},
                             {"kept", d.report.kept},
                             {"dropped_min_history", d.report.dropped_min_history},
                             {"dropped_after_default", d.report.dropped_after_default},
                             {"warnings", d.report.warnings}};
        audit["splits"] = {{"train", split_summary(train)},
                           {"validation", split_summary(d.subset(split.validation))},
                           {"test", split_summary(d.subset(split.test))}};
        json channels = json::object();
        for (std::size_t c = 0; c < d.channels.size(); ++c) {
            const auto& spec = d.channels[c];
            const auto& fs = stats.channels.at(spec.kind);
            std::vector<std::size_t> missing(spec.features, 0), clipped(spec.features, 0);
            std::size_t rows = 0;
            for (const auto& o : train.observations) {
                const auto& p = o.panels[c];
                const tep::Tensor x = tep::apply_preprocess(p, fs);
                for (std::size_t t = 0; t < spec.window; ++t)
                    for (std::size_t j = 0; j < spec.features; ++j) {
                        missing[j] += p.missing[t * spec.features + j];
                        clipped[j] += std::abs(x(t, j)) >= tep::kWinsorBound;
                    }
                rows += spec.window;
            }
            json features = json::array();
            for (std::size_t j = 0; j < spec.features; ++j)
                features.push_back({{"feature", j + 1},
                                    {"median", fs[j].median},
                                    {"iqr", fs[j].iqr},
                                    {"degenerate", fs[j].degenerate},
                                    {"missing_rate", rows ? double(missing[j]) / double(rows) : 0.0},
                                    {"clipped_rate", rows ? double(clipped[j]) / double(rows) : 0.0}});
            channels[std::string(tep::to_string(spec.kind))] = {{"window", spec.window}, {"features", features}};
        }
        audit["channels"] = channels;
    });
    stage("write-outputs", [&] {
        write_text(r.out / "preprocess.json", json::parse(tep::to_json(stats)).dump(2) + "\n");
        write_text(r.out / "audit.json", audit.dump(2) + "\n");
    });
    logger.event("done");
    return kOk;
}

int cmd_train(const Run& r) {
    write_snapshot(r, "train");
    const tep::Dataset d = load_dataset(r);
    const auto channels = channels_of(r, d);
    const auto trainer = trainer_with_progress(r);
    const auto fit = stage("train", [&] { return tep::fit_evaluate(d, channels, trainer, r.cfg.seed); });
    bool intact = true;
    for (const auto& s : fit.checkpoint.log.stages) {
        logger.event("stage-summary", {{"stage", s.name},
                                       {"epochs", s.epochs.size()},
                                       {"best_epoch", s.best_epoch},
                                       {"frozen_intact", s.frozen_intact()}});
        intact = intact && s.frozen_intact();
    }
    if (!intact) throw StageError("train", "frozen parameters changed during training");
    stage("write-outputs", [&] {
        tep::save_checkpoint(fit.checkpoint, r.out / "checkpoint.tepc");
        write_text(r.out / "training_log.json", json::parse(tep::to_json(fit.checkpoint.log)).dump(2) + "\n");
        write_text(r.out / "test_report.csv",
                   tep::report_csv_header() + "\n" + tep::report_csv_row("test", fit.report) + "\n");
        write_text(r.out / "test_report.json", tep::report_json(fit.report) + "\n");
    });
    logger.event("done", {{"average_auc", fit.report.average ? json(*fit.report.average) : json(nullptr)}});
    return kOk;
}

int cmd_eval(const Run& r) {
    write_snapshot(r, "eval");
    const auto cp = stage("load-checkpoint", [&] { return tep::load_checkpoint(r.checkpoint_path()); });
    const tep::Dataset d = load_dataset(r);
    const auto split = tep::split_by_firm(d, r.cfg.seed);
    const tep::Dataset test = d.subset(split.test);
    const auto prepared = stage("prepare", [&] { return tep::prepare(test, cp.stats); });
    const auto pds = stage("predict", [&] { return tep::predict(cp, prepared, r.cfg.isotonic); });
    const auto report = stage("evaluate", [&] { return tep::evaluate(pds, prepared); });
    stage("write-outputs", [&] {
        std::string csv = "firm_id,observation_date";
        for (auto h : tep::kHorizonNames) csv += ",pd_" + std::string(h.substr(2));
        csv += "\n";
        for (std::size_t i = 0; i < prepared.items.size(); ++i) {
            const auto& o = test.observations[prepared.items[i].source];
            csv += o.firm_id + "," + o.date.to_string();
            for (double p : pds[i]) csv += "," + tep::format_double(p);
            csv += "\n";
        }
        write_text(r.out / "predictions.csv", csv);
        write_text(r.out / "eval_report.csv", tep::report_csv_header() + "\n" + tep::report_csv_row("test", report) + "\n");
        write_text(r.out / "eval_report.json", tep::report_json(report) + "\n");
    });
    logger.event("done", {{"average_auc", report.average ? json(*report.average) : json(nullptr)}});
    return kOk;
}

int cmd_cv(const Run& r) {
    write_snapshot(r, "cv");
    const tep::Dataset d = load_dataset(r);
    const auto channels = channels_of(r, d);
    const auto trainer = trainer_with_progress(r);
    const auto cv = stage("cross-validate", [&] { return tep::cross_validate(d, r.cfg.cv_k, channels, trainer, r.cfg.seed); });
    for (const auto& w : cv.warnings) logger.event("warning", {{"message", w}});
    stage("write-outputs", [&] {
        write_text(r.out / "cv_report.csv", tep::cv_csv(cv));
        write_text(r.out / "cv_report.json", tep::cv_json(cv) + "\n");
    });
    logger.event("done");
    return kOk;
}

int cmd_sweep(const Run& r) {
    write_snapshot(r, "sweep-window");
    const tep::RawPanel raw = load_raw(r);
    const auto trainer = trainer_with_progress(r);
    const auto points = stage("sweep", [&] {
        return tep::window_sweep(raw, r.cfg.panel.quarterly_window, r.cfg.sweep_model, r.cfg.sweep_windows, trainer,
                                 r.cfg.seed);
    });
    stage("write-outputs", [&] {
        write_text(r.out / "window_sweep.csv", tep::sweep_csv(points, std::string(tep::to_string(r.cfg.sweep_model))));
        write_text(r.out / "window_sweep.json", tep::sweep_json(points) + "\n");
    });
    logger.event("done");
    return kOk;
}

int cmd_shapley(const Run& r) {
    if (r.cfg.schedule) throw tep::ConfigError("schedule", "shapley trains channel subsets; use a regime preset");
    write_snapshot(r, "shapley");
    const tep::Dataset d = load_dataset(r);
    const auto channels = channels_of(r, d);
    const auto trainer = trainer_with_progress(r);
    const auto imp = stage("channel-importance", [&] { return tep::channel_importance(d, channels, trainer, r.cfg.seed); });
    for (const auto& w : imp.warnings) logger.event("warning", {{"message", w}});
    stage("write-outputs", [&] {
        write_text(r.out / "shapley.json", tep::importance_json(imp) + "\n");
        write_text(r.out / "shapley.csv", tep::importance_csv(imp));
        write_text(r.out / "shapley_horizons.csv", tep::importance_horizon_csv(imp));
        write_text(r.out / "shapley.svg", tep::importance_svg(imp));
    });
    if (r.cfg.shapley_temporal) {
        const auto t = stage("temporal-importance", [&] { return tep::temporal_importance(d, channels, trainer, r.cfg.seed); });
        stage("write-outputs", [&] {
            write_text(r.out / "temporal.csv", tep::temporal_csv(t));
            write_text(r.out / "temporal.json", tep::temporal_json(t) + "\n");
        });
    }
    logger.event("done");
    return kOk;
}

int cmd_attention(const Run& r) {
    write_snapshot(r, "attention");
    const auto cp = stage("load-checkpoint", [&] { return tep::load_checkpoint(r.checkpoint_path()); });
    const tep::Dataset d = load_dataset(r);
    const auto split = tep::split_by_firm(d, r.cfg.seed);
    const auto prepared = stage("prepare", [&] { return tep::prepare(d.subset(split.test), cp.stats); });
    const auto maps = stage("extract", [&] {
        return tep::extract_attention(cp, prepared, r.cfg.attention_channel, r.cfg.attention_horizon);
    });
    for (const auto& w : maps.warnings) logger.event("warning", {{"message", w}});
    stage("write-outputs", [&] {
        tep::export_heatmap(maps, r.out / "attention");
        json summary = {{"channel", std::string(tep::to_string(maps.channel))},
                        {"horizon", std::string(tep::kHorizonNames[maps.horizon])},
                        {"layers", maps.layers},
                        {"heads", maps.heads},
                        {"window", maps.window},
                        {"warnings", maps.warnings}};
        for (const auto* g : {&maps.defaulted, &maps.non_defaulted}) {
            if (!*g) continue;
            json peaks = json::array();
            for (const auto& m : (*g)->maps)
                peaks.push_back(tep::position_label(tep::column_mass_argmax(m), maps.window));
            summary["groups"][(*g)->tag] = {{"observations", (*g)->count}, {"column_mass_peak", peaks}};
        }
        write_text(r.out / "attention.json", summary.dump(2) + "\n");
    });
    logger.event("done");
    return kOk;
}

struct Command {
    const char* name;
    const char* about;
    std::vector<std::string> sections;
    int (*run)(const Run&);
};

const std::vector<Command> kCommands = {
    {"gen", "Generate a synthetic panel as CSV files", {"seed", "output_dir", "data"}, cmd_gen},
    {"prep", "Fit preprocessing on the training firms and write an audit report",
     {"seed", "output_dir", "data", "channels"}, cmd_prep},
    {"train", "Train a fused model and write a checkpoint, training log and test metrics",
     {"seed", "output_dir", "data", "channels", "fusion", "regime", "schedule", "max_epochs", "train"}, cmd_train},
    {"eval", "Score the test firms with a saved checkpoint", {"seed", "output_dir", "data", "eval"}, cmd_eval},
    {"cv", "Company-level k-fold cross-validation",
     {"seed", "output_dir", "data", "channels", "fusion", "regime", "schedule", "max_epochs", "train", "cv"}, cmd_cv},
    {"sweep-window", "Pricing-only models over a grid of window lengths",
     {"seed", "output_dir", "data", "channels", "fusion", "regime", "max_epochs", "train", "sweep"}, cmd_sweep},
    {"shapley", "Channel and temporal Shapley attribution",
     {"seed", "output_dir", "data", "channels", "fusion", "regime", "max_epochs", "train", "shapley"}, cmd_shapley},
    {"attention", "Attention heat maps from a saved checkpoint", {"seed", "output_dir", "data", "eval", "attention"},
     cmd_attention},
};

std::string key_reference(const Command& c) {
    std::string s = "\nConfig keys (JSON, dotted path = default):\n";
    for (const auto& [k, v] : config_keys(c.sections)) {
        if (std::string(c.name) == "attention" && k == "eval.isotonic") continue;
        s += "  " + k + " = " + v + "\n";
    }
    s += "Environment: TEP_OUTPUT_ROOT prefixes a relative output_dir.\n";
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tepctl: multi-horizon default prediction experiments"};
    app.require_subcommand(1);
    Flags flags;
    std::map<std::string, CLI::App*> subs;
    for (const auto& c : kCommands) {
        auto* sub = app.add_subcommand(c.name, c.about);
        sub->footer(key_reference(c));
        sub->add_option("-c,--config", flags.config, "JSON experiment config");
        sub->add_option("--seed", flags.seed, "Overrides seed");
        sub->add_option("-o,--out", flags.out, "Overrides output_dir");
        sub->add_option("--threads", flags.threads, "Worker threads (0 = all cores)");
        const std::string name = c.name;
        if (name != "gen") sub->add_option("--data", flags.data, "Overrides data.dir");
        if (name == "train" || name == "cv" || name == "shapley" || name == "sweep-window") {
            sub->add_option("--regime", flags.regime, "Overrides regime (r1, r2, r3)");
            sub->add_option("--max-epochs", flags.max_epochs, "Overrides max_epochs");
        }
        if (name == "cv") sub->add_option("-k,--k", flags.k, "Overrides cv.k");
        if (name == "eval" || name == "attention") sub->add_option("--checkpoint", flags.checkpoint, "Overrides eval.checkpoint");
        subs[name] = sub;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigFailure;
    }

    const Command* command = nullptr;
    for (const auto& c : kCommands)
        if (subs[c.name]->parsed()) command = &c;

    std::optional<tbb::global_control> threads;
    if (flags.threads > 0) threads.emplace(tbb::global_control::max_allowed_parallelism, flags.threads);

    try {
        const Run run = resolve(flags);
        logger.event("start", {{"command", command->name}, {"output", run.out.string()}, {"seed", run.cfg.seed}});
        return command->run(run);
    } catch (const tep::ConfigError& e) {
        std::cerr << "tepctl: config error: " << e.what() << "\n";
        return kConfigFailure;
    } catch (const StageError& e) {
        logger.event("error", {{"stage", e.stage()}, {"message", e.what()}});
        std::cerr << "tepctl: " << command->name << " failed in stage '" << e.stage() << "': " << e.what() << '\n';
        return kRuntimeFailure;
    } catch (const std::exception& e) {
        std::cerr << "tepctl: " << command->name << " failed: " << e.what() << '\n';
        return kRuntimeFailure;
    }
}
