// Per-sample forward/backward cost of each channel model at the default
// experiment sizes, plus the evaluation and attribution kernels.

#include <benchmark/benchmark.h>

#include "tep/fusion.hpp"
#include "tep/interpret.hpp"
#include "tep/metrics.hpp"
#include "tep/rng.hpp"
#include "tep/shapley.hpp"

using namespace tep;

namespace {

// Default experiment shapes: 12 quarters of 8 fundamentals, 504 trading days
// of 3 price series, 72-wide representations.
constexpr std::size_t kFundamentalFeatures = 8;
constexpr std::size_t kQuarterlyWindow = 12;
constexpr std::size_t kPricingWindow = 504;

ModelSpec spec_for(ModelKind kind, std::size_t window, std::size_t features) {
    ModelSpec s;
    s.kind = kind;
    s.window = window;
    s.input_features = 2 * features;
    return s;
}

Tensor random_panel(std::size_t w, std::size_t f, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t = Tensor::matrix(w, 2 * f);
    for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j < f; ++j) t(i, j) = rng.normal();
    return t;
}

void run_sample(benchmark::State& state, const ModelSpec& spec, ChannelKind channel, bool backward) {
    FusionConfig c;
    c.channels = {{channel, spec}};
    const MultimodalModel model = init_multimodal(c, 1);
    const Tensor x = random_panel(spec.window, spec.input_features / 2, 2);
    const Tensor y = Tensor::row({0, 0, 0, 1, 1, 1});
    Rng dropout(3);
    for (auto _ : state) {
        Tape tape;
        ParamBinder b(tape, model.params, [](const std::string&) { return true; });
        const auto out = multimodal_forward(b, c, {&x}, backward ? Mode::Train : Mode::Eval, &dropout);
        const Var loss = multilabel_loss(out.logits, y);
        if (backward) {
            auto g = tape.backward(loss);
            benchmark::DoNotOptimize(g);
        } else {
            benchmark::DoNotOptimize(loss.value());
        }
    }
}

void BM_TepFundamental(benchmark::State& s) {
    run_sample(s, spec_for(ModelKind::Tep, kQuarterlyWindow, kFundamentalFeatures), ChannelKind::Fundamental, s.range(0));
}
void BM_TepPricing(benchmark::State& s) {
    run_sample(s, spec_for(ModelKind::Tep, kPricingWindow, 3), ChannelKind::Pricing, s.range(0));
}
void BM_TcnPricing(benchmark::State& s) {
    run_sample(s, spec_for(ModelKind::Tcn, kPricingWindow, 3), ChannelKind::Pricing, s.range(0));
}
void BM_LstmPricing(benchmark::State& s) {
    run_sample(s, spec_for(ModelKind::Lstm, kPricingWindow, 3), ChannelKind::Pricing, s.range(0));
}
void BM_NnFundamental(benchmark::State& s) {
    run_sample(s, spec_for(ModelKind::Nn, kQuarterlyWindow, kFundamentalFeatures), ChannelKind::Fundamental, s.range(0));
}

BENCHMARK(BM_TepFundamental)->ArgName("backward")->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_TepPricing)->ArgName("backward")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TcnPricing)->ArgName("backward")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LstmPricing)->ArgName("backward")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NnFundamental)->ArgName("backward")->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

void BM_RocAuc(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(4);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = rng.bernoulli(0.05);
        scores[i] = std::round(rng.normal() * 100.0) / 100.0 + labels[i];
    }
    for (auto _ : state) benchmark::DoNotOptimize(roc_auc(scores, labels));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_RocAuc)->Arg(1000)->Arg(100000);

void BM_ShapleyExact(benchmark::State& state) {
    const auto g = static_cast<std::size_t>(state.range(0));
    Rng rng(5);
    const auto game = ShapleyGame::from_function(g, [&](Profile p) { return p == 0 ? 0.0 : rng.uniform(); });
    for (auto _ : state) benchmark::DoNotOptimize(shapley_values(game));
}
BENCHMARK(BM_ShapleyExact)->DenseRange(2, 10, 4);

// One full epoch of the default fundamental TEP on a reduced panel.
void BM_TrainEpoch(benchmark::State& state) {
    GeneratorConfig g;
    g.firms = 100;
    const Dataset d = generate_synthetic(g, {kQuarterlyWindow, 63}, 6);
    const auto split = split_by_firm(d, 6);
    const auto stats = fit_preprocess(d.subset(split.train));
    const auto tr = prepare(d.subset(split.train), stats);
    const auto va = prepare(d.subset(split.validation), stats);
    TrainerConfig t;
    const auto fusion = t.fusion_for({ChannelKind::Fundamental}, d.channels);
    const auto schedule = RegimeSchedule::preset(Regime::R2, {ChannelKind::Fundamental}, 1);
    for (auto _ : state) {
        auto cp = train(tr, va, init_multimodal(fusion, 7), schedule, TrainConfig{});
        benchmark::DoNotOptimize(cp);
    }
    state.counters["samples"] = static_cast<double>(tr.items.size());
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond)->Iterations(2);

}  // namespace

BENCHMARK_MAIN();
