#include "tep/fusion.hpp"

#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <functional>

#include "tep/error.hpp"
#include "tep/rng.hpp"

namespace tep {

// ---------------------------------------------------------------- config

std::size_t FusionConfig::slot(ChannelKind kind) const {
    for (std::size_t i = 0; i < channels.size(); ++i)
        if (channels[i].channel == kind) return i;
    throw InvalidArgument("fusion: no model configured for channel '" + std::string(to_string(kind)) + "'");
}

bool FusionConfig::has(ChannelKind kind) const noexcept {
    return std::any_of(channels.begin(), channels.end(), [&](const auto& c) { return c.channel == kind; });
}

void FusionConfig::validate() const {
    if (representation_size == 0) throw InvalidArgument("fusion: representation_size must be positive");
    if (channels.empty()) throw InvalidArgument("fusion: at least one channel model required");
    std::set<ChannelKind> seen;
    for (const auto& c : channels) {
        if (!seen.insert(c.channel).second)
            throw InvalidArgument("fusion: duplicate channel '" + std::string(to_string(c.channel)) + "'");
        c.spec.validate();
    }
}

namespace {

std::string channel_prefix(ChannelKind kind) { return std::string(to_string(kind)); }
std::string projection_prefix(ChannelKind kind) { return std::string(kFusionGroup) + ".proj." + channel_prefix(kind); }
const std::string kHeadPrefix = std::string(kFusionGroup) + ".head";

bool needs_projection(const FusionConfig& config, const ChannelModelConfig& c) {
    return c.spec.representation_width() != config.representation_size;
}

}  // namespace

MultimodalModel init_multimodal(const FusionConfig& config, std::uint64_t seed) {
    config.validate();
    MultimodalModel m{config, {}};
    for (const auto& c : config.channels) {
        Rng rng(seed, "init." + channel_prefix(c.channel));
        m.params.merge(init_model(c.spec, channel_prefix(c.channel), rng, false).tensors);
        if (needs_projection(config, c))
            init::dense(m.params, projection_prefix(c.channel), c.spec.representation_width(),
                        config.representation_size, rng);
    }
    Rng rng(seed, "init.fusion");
    init::dense(m.params, kHeadPrefix, config.channels.size() * config.representation_size, kHorizons, rng);
    return m;
}

std::string param_group(const std::string& name) { return name.substr(0, name.find('.')); }

// ---------------------------------------------------------------- regimes

std::string_view to_string(Regime r) {
    switch (r) {
        case Regime::R1: return "r1";
        case Regime::R2: return "r2";
        case Regime::R3: return "r3";
    }
    return "?";
}

Regime regime_from_string(std::string_view name) {
    for (auto r : {Regime::R1, Regime::R2, Regime::R3})
        if (to_string(r) == name) return r;
    throw InvalidArgument("unknown regime '" + std::string(name) + "' (expected r1, r2 or r3)");
}

namespace {

constexpr std::size_t kDefaultPatience = 5;
constexpr std::size_t kPricingPatience = 8;

int training_order(ChannelKind k) {
    switch (k) {
        case ChannelKind::Pricing: return 0;
        case ChannelKind::Market: return 1;
        case ChannelKind::Noise: return 2;
        case ChannelKind::Fundamental: return 3;
    }
    return 4;
}

std::size_t stage_patience(const std::vector<std::string>& trainable) {
    std::size_t models = 0;
    bool pricing = false;
    for (const auto& g : trainable) {
        if (g == kFusionGroup) continue;
        ++models;
        pricing = pricing || g == to_string(ChannelKind::Pricing);
    }
    return models == 1 && pricing ? kPricingPatience : kDefaultPatience;
}

Stage make_stage(std::string name, std::vector<ChannelKind> active, std::vector<std::string> trainable,
                 std::size_t max_epochs) {
    Stage s{std::move(name), std::move(active), std::move(trainable), 0, max_epochs};
    s.patience = stage_patience(s.trainable);
    return s;
}

}  // namespace

RegimeSchedule RegimeSchedule::preset(Regime regime, std::vector<ChannelKind> channels, std::size_t max_epochs) {
    if (channels.empty()) throw InvalidArgument("regime preset needs at least one channel");
    std::stable_sort(channels.begin(), channels.end(),
                     [](ChannelKind a, ChannelKind b) { return training_order(a) < training_order(b); });
    channels.erase(std::unique(channels.begin(), channels.end()), channels.end());

    RegimeSchedule s;
    switch (regime) {
        case Regime::R1:
            for (auto c : channels)
                s.stages.push_back(make_stage(channel_prefix(c) + "-solo", {c}, {channel_prefix(c), kFusionGroup},
                                              max_epochs));
            if (channels.size() > 1) s.stages.push_back(make_stage("fusion", channels, {kFusionGroup}, max_epochs));
            break;
        case Regime::R2: {
            std::vector<std::string> all;
            for (auto c : channels) all.push_back(channel_prefix(c));
            all.emplace_back(kFusionGroup);
            s.stages.push_back(make_stage("joint", channels, all, max_epochs));
            break;
        }
        case Regime::R3: {
            std::vector<ChannelKind> active;
            for (auto c : channels) {
                active.push_back(c);
                const std::string name = active.size() == 1 ? channel_prefix(c) + "-solo" : "add-" + channel_prefix(c);
                s.stages.push_back(make_stage(name, active, {channel_prefix(c), kFusionGroup}, max_epochs));
            }
            break;
        }
    }
    return s;
}

void RegimeSchedule::validate(const FusionConfig& config) const {
    if (stages.empty()) throw InvalidArgument("schedule has no stages");
    for (const auto& st : stages) {
        const std::string where = "stage '" + st.name + "': ";
        if (st.active.empty()) throw InvalidArgument(where + "no active channels");
        if (st.trainable.empty()) throw InvalidArgument(where + "empty trainable set");
        if (st.patience == 0) throw InvalidArgument(where + "patience must be positive");
        if (st.max_epochs == 0) throw InvalidArgument(where + "max_epochs must be positive");
        for (auto c : st.active)
            if (!config.has(c)) throw InvalidArgument(where + "channel '" + channel_prefix(c) + "' has no model");
        for (const auto& g : st.trainable) {
            if (g == kFusionGroup) continue;
            const ChannelKind c = channel_from_string(g);
            if (std::find(st.active.begin(), st.active.end(), c) == st.active.end())
                throw InvalidArgument(where + "trainable group '" + g + "' is not active");
        }
    }
}

// ---------------------------------------------------------------- forward

Var multilabel_loss(Var logits, const Tensor& targets) {
    if (logits.value().size() != kHorizons || targets.size() != kHorizons)
        throw InvalidArgument("multilabel_loss expects 6 logits and 6 targets");
    return ops::sigmoid_bce_sum(logits, targets);
}

double multilabel_loss(const Tensor& logits, const Tensor& targets) {
    Tape tape;
    return multilabel_loss(tape.constant_ref(logits), targets).value().item();
}

Var fuse(ParamBinder& b, const FusionConfig& config, const std::vector<Var>& representations) {
    if (representations.size() != config.channels.size())
        throw InvalidArgument("fuse: expected one representation slot per configured channel");
    const std::size_t h = config.representation_size;
    std::vector<Var> pooled;
    pooled.reserve(representations.size());
    for (std::size_t i = 0; i < representations.size(); ++i) {
        const Var& r = representations[i];
        if (!r.valid()) {
            pooled.push_back(b.tape().constant(Tensor::matrix(1, h)));
            continue;
        }
        if (r.cols() != h)
            throw InvalidArgument("fuse: channel '" + channel_prefix(config.channels[i].channel) + "' has width " +
                                  std::to_string(r.cols()) + ", expected " + std::to_string(h));
        pooled.push_back(ops::max_rows(r));
    }
    return layers::dense(b, kHeadPrefix, ops::concat_cols(pooled));
}

MultimodalForward multimodal_forward(ParamBinder& b, const FusionConfig& config,
                                     const std::vector<const Tensor*>& inputs, Mode mode, Rng* dropout_rng,
                                     AttentionTrace* trace, ChannelKind trace_channel) {
    if (inputs.size() != config.channels.size())
        throw InvalidArgument("multimodal_forward: expected one input slot per configured channel");
    MultimodalForward out;
    out.representations.resize(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (inputs[i] == nullptr) continue;
        const auto& c = config.channels[i];
        const ForwardContext ctx{mode, dropout_rng, c.channel == trace_channel ? trace : nullptr};
        Var rep = model_forward(b, channel_prefix(c.channel), c.spec, b.tape().constant_ref(*inputs[i]), ctx, false)
                      .representation;
        if (needs_projection(config, c)) rep = layers::dense(b, projection_prefix(c.channel), rep);
        out.representations[i] = rep;
    }
    out.logits = fuse(b, config, out.representations);
    return out;
}

std::vector<std::size_t> channel_columns(const FusionConfig& config, const PreparedSet& data) {
    std::vector<std::size_t> cols;
    for (const auto& c : config.channels) {
        auto it = std::find_if(data.channels.begin(), data.channels.end(),
                               [&](const ChannelSpec& s) { return s.kind == c.channel; });
        if (it == data.channels.end())
            throw InvalidArgument("data has no '" + channel_prefix(c.channel) + "' channel required by the model");
        if (it->window != c.spec.window || 2 * it->features != c.spec.input_features)
            throw InvalidArgument("channel '" + channel_prefix(c.channel) + "': data is (" + std::to_string(it->window) +
                                  ", " + std::to_string(2 * it->features) + ") but the model expects (" +
                                  std::to_string(c.spec.window) + ", " + std::to_string(c.spec.input_features) + ")");
        cols.push_back(static_cast<std::size_t>(it - data.channels.begin()));
    }
    return cols;
}

// ---------------------------------------------------------------- training

EarlyStopping::EarlyStopping(std::size_t patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
    if (patience == 0) throw InvalidArgument("early stopping patience must be positive");
}

bool EarlyStopping::observe(double validation_loss) {
    const std::size_t epoch = epochs_++;
    if (validation_loss < best_) {
        best_ = validation_loss;
        best_epoch_ = epoch;
        since_best_ = 0;
        return true;
    }
    ++since_best_;
    return false;
}

namespace {

// Per-sample gradients are summed within fixed chunks and the chunks in index
// order, so results do not depend on how TBB schedules them.
constexpr std::size_t kChunk = 8;

using Predicate = std::function<bool(const std::string&)>;

std::vector<const Tensor*> slot_inputs(const PreparedObservation& item, const std::vector<std::size_t>& columns,
                                       const std::vector<bool>& active) {
    std::vector<const Tensor*> in(columns.size(), nullptr);
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (active[i]) in[i] = &item.inputs.at(columns[i]);
    return in;
}

void accumulate(GradMap& into, GradMap&& g) {
    if (into.empty()) {
        into = std::move(g);
        return;
    }
    for (auto& [name, t] : g) {
        auto [it, inserted] = into.try_emplace(name, std::move(t));
        if (inserted) continue;
        auto dst = it->second.data();
        auto src = t.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
}

struct BatchResult {
    GradMap grads;  // summed over the batch
    double loss = 0.0;
};

BatchResult batch_gradients(const MultimodalModel& model, const PreparedSet& data,
                            const std::vector<std::size_t>& columns, const std::vector<bool>& active,
                            const Predicate& trainable, std::span<const std::size_t> batch, std::uint64_t dropout_seed) {
    const std::size_t chunks = (batch.size() + kChunk - 1) / kChunk;
    std::vector<BatchResult> parts(chunks);
    tbb::parallel_for(std::size_t{0}, chunks, [&](std::size_t c) {
        BatchResult& part = parts[c];
        const std::size_t end = std::min(batch.size(), (c + 1) * kChunk);
        for (std::size_t k = c * kChunk; k < end; ++k) {
            const auto& item = data.items[batch[k]];
            Tape tape;
            ParamBinder b(tape, model.params, trainable);
            Rng rng(derive_seed(dropout_seed, batch[k]));
            const auto fwd = multimodal_forward(b, model.config, slot_inputs(item, columns, active), Mode::Train, &rng);
            const Var loss = multilabel_loss(fwd.logits, item.targets);
            part.loss += loss.value().item();
            accumulate(part.grads, tape.backward(loss));
        }
    });
    BatchResult total;
    for (auto& p : parts) {
        total.loss += p.loss;
        accumulate(total.grads, std::move(p.grads));
    }
    return total;
}

std::vector<Tensor> eval_logits(const MultimodalModel& model, const PreparedSet& data,
                                const std::vector<std::size_t>& columns, const std::vector<bool>& active) {
    std::vector<Tensor> out(data.items.size());
    const Predicate frozen = [](const std::string&) { return false; };
    tbb::parallel_for(std::size_t{0}, data.items.size(), [&](std::size_t i) {
        Tape tape;
        ParamBinder b(tape, model.params, frozen);
        out[i] = multimodal_forward(b, model.config, slot_inputs(data.items[i], columns, active), Mode::Eval, nullptr)
                     .logits.value();
    });
    return out;
}

double mean_loss(const MultimodalModel& model, const PreparedSet& data, const std::vector<std::size_t>& columns,
                 const std::vector<bool>& active) {
    const auto logits = eval_logits(model, data, columns, active);
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) total += multilabel_loss(logits[i], data.items[i].targets);
    return total / static_cast<double>(logits.size());
}

std::map<std::string, std::uint64_t> hashes(const ParamMap& params, const Predicate& keep) {
    std::map<std::string, std::uint64_t> out;
    for (const auto& [name, t] : params)
        if (keep(name)) out.emplace(name, tensor_hash(t));
    return out;
}

std::string epoch_context(const Stage& st, std::size_t epoch) {
    return "stage '" + st.name + "' epoch " + std::to_string(epoch + 1);
}

}  // namespace

Checkpoint train(const PreparedSet& train_set, const PreparedSet& validation_set, MultimodalModel model,
                 const RegimeSchedule& schedule, const TrainConfig& config, const PreprocessStats& stats) {
    model.config.validate();
    schedule.validate(model.config);
    if (config.batch_size == 0) throw InvalidArgument("batch_size must be positive");
    if (train_set.items.empty()) throw InvalidArgument("training set is empty");
    if (validation_set.items.empty()) throw InvalidArgument("validation set is empty");
    const auto train_cols = channel_columns(model.config, train_set);
    const auto val_cols = channel_columns(model.config, validation_set);

    Checkpoint ck;
    ck.stats = stats;
    ck.schedule = schedule;
    ck.train = config;

    const std::uint64_t shuffle_seed = derive_seed(config.seed, "shuffle");
    const std::uint64_t dropout_seed = derive_seed(config.seed, "dropout");
    const std::size_t n = train_set.items.size();

    for (std::size_t s = 0; s < schedule.stages.size(); ++s) {
        const Stage& st = schedule.stages[s];
        std::vector<bool> active(model.config.channels.size(), false);
        for (auto c : st.active) active[model.config.slot(c)] = true;
        const std::set<std::string> groups(st.trainable.begin(), st.trainable.end());
        const Predicate trainable = [&groups](const std::string& name) { return groups.count(param_group(name)) > 0; };
        const Predicate frozen = [&trainable](const std::string& name) { return !trainable(name); };

        StageLog log;
        log.name = st.name;
        for (auto c : st.active) log.active.push_back(channel_prefix(c));
        log.trainable = st.trainable;
        log.patience = st.patience;
        log.frozen_before = hashes(model.params, frozen);
        log.trainable_before = hashes(model.params, trainable);

        OptimizerState opt{config.optimizer, 0, {}, {}};
        EarlyStopping stopper(st.patience);
        ParamMap best;
        for (const auto& [name, t] : model.params)
            if (trainable(name)) best.emplace(name, t);

        std::vector<std::size_t> order(n);
        for (std::size_t epoch = 0; epoch < st.max_epochs; ++epoch) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            Rng(derive_seed(shuffle_seed, s, epoch)).shuffle(order);
            const std::uint64_t epoch_dropout = derive_seed(dropout_seed, s, epoch);

            double train_total = 0.0;
            for (std::size_t start = 0, batch_no = 0; start < n; start += config.batch_size, ++batch_no) {
                const std::span<const std::size_t> batch(order.data() + start, std::min(config.batch_size, n - start));
                BatchResult r;
                try {
                    r = batch_gradients(model, train_set, train_cols, active, trainable, batch, epoch_dropout);
                } catch (const NumericError& e) {
                    throw NumericError(epoch_context(st, epoch) + " batch " + std::to_string(batch_no + 1) + ": " +
                                       e.what());
                }
                if (!std::isfinite(r.loss))
                    throw NumericError(epoch_context(st, epoch) + " batch " + std::to_string(batch_no + 1) +
                                       ": non-finite training loss");
                const double inv = 1.0 / static_cast<double>(batch.size());
                for (auto& [name, g] : r.grads)
                    for (double& v : g.storage()) v *= inv;
                optimizer_step(model.params, r.grads, opt);
                train_total += r.loss;
            }

            const double val = mean_loss(model, validation_set, val_cols, active);
            if (!std::isfinite(val)) throw NumericError(epoch_context(st, epoch) + ": non-finite validation loss");
            const bool improved = stopper.observe(val);
            if (improved)
                for (auto& [name, t] : best) t = model.params.at(name);
            log.epochs.push_back({epoch + 1, train_total / static_cast<double>(n), val, improved});
            if (config.on_epoch) config.on_epoch(log, log.epochs.back());
            if (stopper.should_stop()) {
                log.early_stopped = true;
                break;
            }
        }
        for (auto& [name, t] : best) model.params.at(name) = std::move(t);
        log.best_epoch = stopper.best_epoch() + 1;
        log.frozen_after = hashes(model.params, frozen);
        log.trainable_after = hashes(model.params, trainable);
        if (!log.frozen_intact()) throw std::logic_error("frozen parameters changed during " + st.name);
        ck.log.stages.push_back(std::move(log));
    }

    for (auto& [name, t] : model.params) t = round_to_fp32(t);
    ck.model = std::move(model);
    return ck;
}

// ---------------------------------------------------------------- predict

PdVector isotonic_increasing(const PdVector& values) {
    // Blocks of (sum, count); merge while the previous mean exceeds the last.
    std::vector<std::pair<double, std::size_t>> blocks;
    for (double v : values) {
        blocks.emplace_back(v, 1);
        while (blocks.size() > 1) {
            auto& last = blocks.back();
            auto& prev = blocks[blocks.size() - 2];
            if (prev.first / static_cast<double>(prev.second) <= last.first / static_cast<double>(last.second)) break;
            prev.first += last.first;
            prev.second += last.second;
            blocks.pop_back();
        }
    }
    PdVector out{};
    std::size_t i = 0;
    for (const auto& [sum, count] : blocks)
        for (std::size_t k = 0; k < count; ++k) out[i++] = sum / static_cast<double>(count);
    return out;
}

std::vector<PdVector> predict(const MultimodalModel& model, const PreparedSet& data, bool isotonic) {
    model.config.validate();
    const auto cols = channel_columns(model.config, data);
    const std::vector<bool> active(model.config.channels.size(), true);
    const auto logits = eval_logits(model, data, cols, active);
    std::vector<PdVector> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        for (std::size_t t = 0; t < kHorizons; ++t) out[i][t] = 1.0 / (1.0 + std::exp(-logits[i][t]));
        if (isotonic) out[i] = isotonic_increasing(out[i]);
    }
    return out;
}

std::vector<PdVector> predict(const Checkpoint& checkpoint, const PreparedSet& data, bool isotonic) {
    return predict(checkpoint.model, data, isotonic);
}

}  // namespace tep
