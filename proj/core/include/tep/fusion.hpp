#pragma once

#include <functional>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tep/datapipe.hpp"
#include "tep/nets.hpp"
#include "tep/optim.hpp"

namespace tep {

struct ChannelModelConfig {
    ChannelKind channel = ChannelKind::Fundamental;
    ModelSpec spec;
};

/// Channel models feeding a shared head: each representation is projected to
/// `representation_size` (when its width differs), max-pooled over time, the
/// pooled vectors concatenated in channel order and mapped to 6 logits.
struct FusionConfig {
    std::size_t representation_size = 72;
    std::vector<ChannelModelConfig> channels;

    std::size_t slot(ChannelKind kind) const;  // throws if absent
    bool has(ChannelKind kind) const noexcept;
    void validate() const;
};

/// Parameters are named "<channel>.<...>" for channel models and "fusion.<...>"
/// for the head and the per-channel projections.
struct MultimodalModel {
    FusionConfig config;
    ParamMap params;
};

inline constexpr const char* kFusionGroup = "fusion";

MultimodalModel init_multimodal(const FusionConfig& config, std::uint64_t seed);
/// "fusion" or the channel name owning a parameter.
std::string param_group(const std::string& name);

struct Stage {
    std::string name;
    std::vector<ChannelKind> active;
    std::vector<std::string> trainable;  // groups: channel names and/or "fusion"
    std::size_t patience = 5;
    std::size_t max_epochs = 50;
};

enum class Regime { R1, R2, R3 };
std::string_view to_string(Regime r);
Regime regime_from_string(std::string_view name);

struct RegimeSchedule {
    std::vector<Stage> stages;

    /// Presets over the given channels, ordered pricing, market, noise,
    /// fundamental. r1: each channel solo with the head, then the head alone
    /// over all channels. r2: one stage, everything trainable. r3: the first
    /// channel solo, then each further channel trained with the head while
    /// earlier channels stay frozen. Solo pricing stages use patience 8.
    static RegimeSchedule preset(Regime regime, std::vector<ChannelKind> channels, std::size_t max_epochs = 50);
    void validate(const FusionConfig& config) const;
};

/// Sum over horizons of sigmoid cross-entropy with logits, stable form.
Var multilabel_loss(Var logits, const Tensor& targets);
double multilabel_loss(const Tensor& logits, const Tensor& targets);

/// Max over time per channel, concatenate, dense. `pooled_inputs` holds one
/// (steps, H) representation per configured channel; unset entries (inactive
/// channels) contribute a zero slot.
Var fuse(ParamBinder& b, const FusionConfig& config, const std::vector<Var>& representations);

struct MultimodalForward {
    Var logits;
    std::vector<Var> representations;  // projected, per slot; unset if inactive
};

/// `inputs` holds one preprocessed panel per configured channel, nullptr for
/// inactive channels. The trace, when given, records attention of `trace_channel`.
MultimodalForward multimodal_forward(ParamBinder& b, const FusionConfig& config,
                                     const std::vector<const Tensor*>& inputs, Mode mode, Rng* dropout_rng,
                                     AttentionTrace* trace = nullptr,
                                     ChannelKind trace_channel = ChannelKind::Fundamental);

struct StageLog;
struct EpochLog;

struct TrainConfig {
    std::size_t batch_size = 64;
    OptimizerHyper optimizer;
    std::uint64_t seed = 0;
    /// Progress hook, called after every epoch. Not serialised.
    std::function<void(const StageLog&, const EpochLog&)> on_epoch;
};

/// Stops after `patience` consecutive epochs without a strict improvement of
/// the validation loss.
class EarlyStopping {
public:
    explicit EarlyStopping(std::size_t patience);
    /// Records one epoch; returns true when it is the new best.
    bool observe(double validation_loss);
    bool should_stop() const noexcept { return since_best_ >= patience_; }
    std::size_t best_epoch() const noexcept { return best_epoch_; }  // 0-based
    double best_loss() const noexcept { return best_; }
    std::size_t epochs() const noexcept { return epochs_; }

private:
    std::size_t patience_;
    std::size_t epochs_ = 0;
    std::size_t best_epoch_ = 0;
    std::size_t since_best_ = 0;
    double best_;
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
    bool improved = false;
};

struct StageLog {
    std::string name;
    std::vector<std::string> active;
    std::vector<std::string> trainable;
    std::size_t patience = 0;
    std::vector<EpochLog> epochs;
    std::size_t best_epoch = 0;
    bool early_stopped = false;
    std::map<std::string, std::uint64_t> frozen_before, frozen_after;  // tensor hashes
    std::map<std::string, std::uint64_t> trainable_before, trainable_after;

    bool frozen_intact() const { return frozen_before == frozen_after; }
};

struct TrainingLog {
    std::vector<StageLog> stages;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    MultimodalModel model;  // parameters rounded to fp32
    PreprocessStats stats;
    RegimeSchedule schedule;
    TrainConfig train;
    TrainingLog log;
};

/// Staged mini-batch training of the multilabel loss. Within a stage only the
/// trainable groups move; the best-validation weights are restored at the end
/// of every stage. Deterministic for a given seed regardless of thread count.
Checkpoint train(const PreparedSet& train_set, const PreparedSet& validation_set, MultimodalModel model,
                 const RegimeSchedule& schedule, const TrainConfig& config, const PreprocessStats& stats = {});

using PdVector = std::array<double, kHorizons>;

/// Eval-mode default probabilities for every item.
std::vector<PdVector> predict(const Checkpoint& checkpoint, const PreparedSet& data, bool isotonic = false);
std::vector<PdVector> predict(const MultimodalModel& model, const PreparedSet& data, bool isotonic = false);

/// Pool-adjacent-violators projection onto non-decreasing sequences.
PdVector isotonic_increasing(const PdVector& values);

/// Maps each configured channel to its column in `data`; throws on a missing
/// channel or mismatched window/feature count.
std::vector<std::size_t> channel_columns(const FusionConfig& config, const PreparedSet& data);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tep
