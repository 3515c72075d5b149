#include "tep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json_codec.hpp"
#include "tep/error.hpp"
#include "tep/rng.hpp"

namespace tep {

using codec::json;

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw InvalidArgument("roc_auc: scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (std::isnan(scores[i])) throw InvalidArgument("roc_auc: NaN score");
        if (labels[i] != 0 && labels[i] != 1) throw InvalidArgument("roc_auc: labels must be 0 or 1");
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Walk tie groups in increasing score; each positive beats every negative
    // below its group and shares half credit with negatives inside it.
    double credit = 0.0, negatives_below = 0.0, positives = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        double pos = 0.0, neg = 0.0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1 ? pos : neg) += 1.0;
            ++j;
        }
        credit += pos * negatives_below + 0.5 * pos * neg;
        negatives_below += neg;
        positives += pos;
        i = j;
    }
    if (positives == 0.0 || negatives_below == 0.0)
        throw InvalidArgument("roc_auc: labels contain a single class");
    return credit / (positives * negatives_below);
}

namespace {

HorizonReport evaluate_columns(const std::vector<PdVector>& scores, const std::vector<const TargetVector*>& targets) {
    if (scores.size() != targets.size()) throw InvalidArgument("evaluate: scores and targets differ in length");
    HorizonReport r;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t h = 0; h < kHorizons; ++h) {
        std::vector<double> s(scores.size());
        std::vector<int> y(scores.size());
        auto& m = r.horizons[h];
        for (std::size_t i = 0; i < scores.size(); ++i) {
            s[i] = scores[i][h];
            y[i] = targets[i]->y[h];
            (y[i] ? m.positives : m.negatives) += 1;
        }
        if (m.positives == 0 || m.negatives == 0) {
            r.warnings.push_back(std::string(kHorizonNames[h]) + ": single class, AUC not available");
            continue;
        }
        m.auc = roc_auc(s, y);
        sum += *m.auc;
        ++n;
    }
    if (n > 0) r.average = sum / static_cast<double>(n);
    return r;
}

std::vector<TargetVector> targets_of(const PreparedSet& data) {
    std::vector<TargetVector> out;
    out.reserve(data.items.size());
    for (const auto& it : data.items) {
        TargetVector t;
        for (std::size_t h = 0; h < kHorizons; ++h) t.y[h] = it.targets[h] > 0.5 ? 1 : 0;
        out.push_back(t);
    }
    return out;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : "NA"; }

}  // namespace

HorizonReport evaluate(const std::vector<PdVector>& pds, const PreparedSet& data) {
    const auto targets = targets_of(data);
    std::vector<const TargetVector*> ptrs;
    for (const auto& t : targets) ptrs.push_back(&t);
    return evaluate_columns(pds, ptrs);
}

HorizonReport evaluate(const Checkpoint& checkpoint, const PreparedSet& data) {
    return evaluate(predict(checkpoint, data), data);
}

HorizonReport evaluate_scores(const std::vector<double>& scores, const std::vector<TargetVector>& targets) {
    std::vector<PdVector> cols(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) cols[i].fill(scores[i]);
    std::vector<const TargetVector*> ptrs;
    for (const auto& t : targets) ptrs.push_back(&t);
    return evaluate_columns(cols, ptrs);
}

std::string report_csv_header() {
    std::string s = "Average";
    for (auto name : kHorizonNames) s += "," + std::string(name);
    return s;
}

std::string report_csv_row(const std::string& label, const HorizonReport& r) {
    std::string s = label + "," + cell(r.average);
    for (const auto& h : r.horizons) s += "," + cell(h.auc);
    return s;
}

namespace {

json report_to_json(const HorizonReport& r) {
    json horizons = json::object();
    for (std::size_t h = 0; h < kHorizons; ++h)
        horizons[std::string(kHorizonNames[h])] = {{"auc", optional_number(r.horizons[h].auc)},
                                                   {"positives", r.horizons[h].positives},
                                                   {"negatives", r.horizons[h].negatives}};
    return {{"average", optional_number(r.average)}, {"horizons", horizons}, {"warnings", r.warnings}};
}

}  // namespace

std::string report_json(const HorizonReport& r) { return report_to_json(r).dump(2); }

// ---------------------------------------------------------------- pipeline

ModelSpec TrainerConfig::model_for(ChannelKind kind, const ChannelSpec& data) const {
    auto it = models.find(kind);
    ModelSpec s = it == models.end() ? ModelSpec{} : it->second;
    s.window = data.window;
    s.input_features = 2 * data.features;
    return s;
}

FusionConfig TrainerConfig::fusion_for(const std::vector<ChannelKind>& channels,
                                       const std::vector<ChannelSpec>& data) const {
    FusionConfig f;
    f.representation_size = representation_size;
    // Slots follow the dataset's channel order whatever order was requested.
    for (const auto& spec : data)
        if (std::find(channels.begin(), channels.end(), spec.kind) != channels.end())
            f.channels.push_back({spec.kind, model_for(spec.kind, spec)});
    if (f.channels.size() != channels.size()) throw InvalidArgument("requested channel missing from the data");
    return f;
}

RegimeSchedule TrainerConfig::schedule_for(const std::vector<ChannelKind>& channels) const {
    return schedule ? *schedule : RegimeSchedule::preset(regime, channels, max_epochs);
}

FitResult fit_evaluate(const Dataset& data, const std::vector<std::string>& train_firms,
                       const std::vector<std::string>& validation_firms, const std::vector<std::string>& test_firms,
                       const std::vector<ChannelKind>& channels, const TrainerConfig& config, std::uint64_t seed) {
    const Dataset train_data = data.subset(train_firms);
    const PreprocessStats stats = fit_preprocess(train_data);
    const PreparedSet train_set = prepare(train_data, stats);
    const PreparedSet validation_set = prepare(data.subset(validation_firms), stats);
    const PreparedSet test_set = prepare(data.subset(test_firms), stats);

    const FusionConfig fusion = config.fusion_for(channels, data.channels);
    const RegimeSchedule schedule = config.schedule_for(channels);
    TrainConfig tc = config.train;
    tc.seed = seed;

    FitResult r;
    r.checkpoint = train(train_set, validation_set, init_multimodal(fusion, seed), schedule, tc, stats);
    r.test_pds = predict(r.checkpoint, test_set);
    r.report = evaluate(r.test_pds, test_set);
    r.train_items = train_set.items.size();
    r.validation_items = validation_set.items.size();
    r.test_items = test_set.items.size();
    return r;
}

FitResult fit_evaluate(const Dataset& data, const std::vector<ChannelKind>& channels, const TrainerConfig& config,
                       std::uint64_t seed) {
    const Split s = split_by_firm(data, seed);
    return fit_evaluate(data, s.train, s.validation, s.test, channels, config, seed);
}

// ---------------------------------------------------------------- cross-validation

MeanStd mean_std(const std::vector<double>& values) {
    MeanStd m;
    m.count = values.size();
    if (values.empty()) return m;
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    m.mean = mean;
    if (values.size() >= 2) {
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return m;
}

CvReport summarize_folds(std::vector<HorizonReport> folds) {
    CvReport r;
    std::vector<double> averages;
    for (std::size_t h = 0; h < kHorizons; ++h) {
        std::vector<double> v;
        for (std::size_t f = 0; f < folds.size(); ++f) {
            if (folds[f].horizons[h].auc)
                v.push_back(*folds[f].horizons[h].auc);
            else
                r.warnings.push_back("fold " + std::to_string(f + 1) + " " + std::string(kHorizonNames[h]) +
                                     ": single class, excluded from the mean");
        }
        r.horizons[h] = mean_std(v);
    }
    for (const auto& f : folds)
        if (f.average) averages.push_back(*f.average);
    r.average = mean_std(averages);
    r.folds = std::move(folds);
    return r;
}

CvReport cross_validate(const Dataset& data, std::size_t k, const std::vector<ChannelKind>& channels,
                        const TrainerConfig& config, std::uint64_t seed) {
    if (k < 2) throw InvalidArgument("cross_validate: k must be at least 2");
    const auto flags = defaulted_ever(data);
    const FoldAssignment folds = assign_folds(flags, k, seed);
    std::vector<std::vector<std::string>> members(k);
    for (const auto& [firm, fold] : folds) members[fold].push_back(firm);

    std::vector<HorizonReport> reports;
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<std::string> train, validation;
        const std::vector<std::string>& test = members[i];
        if (k == 2) {
            std::map<std::string, bool> sub;
            for (const auto& f : members[1 - i]) sub[f] = flags.at(f);
            for (const auto& [firm, fold] : assign_folds(sub, 4, derive_seed(derive_seed(seed, "cv-validation"), i)))
                (fold == 0 ? validation : train).push_back(firm);
        } else {
            for (std::size_t f = 0; f < k; ++f) {
                if (f == i) continue;
                auto& dst = f == (i + 1) % k ? validation : train;
                dst.insert(dst.end(), members[f].begin(), members[f].end());
            }
        }
        reports.push_back(
            fit_evaluate(data, train, validation, test, channels, config, derive_seed(derive_seed(seed, "cv-fold"), i)).report);
    }
    return summarize_folds(std::move(reports));
}

std::string format_mean_std(const MeanStd& m) {
    if (!m.mean) return "NA";
    return fixed(*m.mean, 3) + " (" + (m.std ? fixed(*m.std, 3) : std::string("NA")) + ")";
}

std::string cv_csv(const CvReport& r) {
    std::string s = "Statistic," + report_csv_header() + "\n";
    s += "mean (std)," + format_mean_std(r.average);
    for (const auto& h : r.horizons) s += "," + format_mean_std(h);
    s += "\n";
    for (std::size_t f = 0; f < r.folds.size(); ++f) s += report_csv_row("fold " + std::to_string(f + 1), r.folds[f]) + "\n";
    return s;
}

std::string cv_json(const CvReport& r) {
    auto ms = [](const MeanStd& m) {
        return json{{"mean", optional_number(m.mean)}, {"std", optional_number(m.std)}, {"folds", m.count}};
    };
    json horizons = json::object();
    for (std::size_t h = 0; h < kHorizons; ++h) horizons[std::string(kHorizonNames[h])] = ms(r.horizons[h]);
    json folds = json::array();
    for (const auto& f : r.folds) folds.push_back(report_to_json(f));
    return json{{"average", ms(r.average)}, {"horizons", horizons}, {"folds", folds}, {"warnings", r.warnings}}.dump(2);
}

// ---------------------------------------------------------------- window sweep

std::string window_label(std::size_t trading_days) {
    switch (trading_days) {
        case 63: return "3m";
        case 126: return "6m";
        case 189: return "9m";
        case 252: return "1y";
        case 504: return "2y";
    }
    return std::to_string(trading_days) + "d";
}

std::vector<WindowPoint> window_sweep(const RawPanel& raw, std::size_t quarterly_window, ModelKind kind,
                                      const std::vector<std::size_t>& windows, const TrainerConfig& config,
                                      std::uint64_t seed) {
    if (windows.empty()) throw InvalidArgument("window_sweep: no window sizes");
    TrainerConfig cfg = config;
    ModelSpec spec = cfg.models.count(ChannelKind::Pricing) ? cfg.models.at(ChannelKind::Pricing) : ModelSpec{};
    spec.kind = kind;
    cfg.models[ChannelKind::Pricing] = spec;

    std::vector<WindowPoint> out;
    for (std::size_t w : windows) {
        if (w == 0) throw InvalidArgument("window_sweep: window sizes must be positive");
        const Dataset data = assemble_dataset(raw, {quarterly_window, w});
        if (data.observations.empty())
            throw InvalidArgument("window_sweep: no observation has " + std::to_string(w) + " days of pricing history");
        WindowPoint p;
        p.window = w;
        p.observations = data.observations.size();
        p.dropped = data.report.dropped_min_history;
        p.report = fit_evaluate(data, {ChannelKind::Pricing}, cfg, seed).report;
        out.push_back(std::move(p));
    }
    return out;
}

std::string sweep_csv(const std::vector<WindowPoint>& points, const std::string& model) {
    std::string s = "Model,Horizon";
    for (const auto& p : points) s += "," + window_label(p.window);
    s += "\n" + model + ",Average";
    for (const auto& p : points) s += "," + cell(p.report.average);
    for (std::size_t h = 0; h < kHorizons; ++h) {
        s += "\n" + model + "," + std::string(kHorizonNames[h]);
        for (const auto& p : points) s += "," + cell(p.report.horizons[h].auc);
    }
    s += "\n" + model + ",Observations";
    for (const auto& p : points) s += "," + std::to_string(p.observations);
    s += "\n" + model + ",Dropped";
    for (const auto& p : points) s += "," + std::to_string(p.dropped);
    return s + "\n";
}

std::string sweep_json(const std::vector<WindowPoint>& points) {
    json arr = json::array();
    for (const auto& p : points)
        arr.push_back({{"window", p.window},
                       {"label", window_label(p.window)},
                       {"observations", p.observations},
                       {"dropped", p.dropped},
                       {"report", report_to_json(p.report)}});
    return arr.dump(2);
}

}  // namespace tep
