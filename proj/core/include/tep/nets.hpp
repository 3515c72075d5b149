#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tep/autograd.hpp"
#include "tep/layers.hpp"
#include "tep/optim.hpp"

namespace tep {

class Rng;

enum class ModelKind { Tep, Tcn, Lstm, Nn, Logistic };

std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view name);

enum class Mode { Train, Eval };

struct TepConfig {
    std::size_t model_size = 72;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t conv_kernel = 1;
    std::size_t ff_multiplier = 4;
    double dropout = 0.1;
    bool positional_encoding = true;

    /// heads = model_size / layers.
    static TepConfig heads_from_layers(std::size_t model_size, std::size_t layers);
    void validate() const;
};

struct TcnConfig {
    std::size_t filters = 32;
    std::size_t kernel = 3;
    std::size_t levels = 3;
    double dropout = 0.1;

    /// 1 + 2(k-1)(2^L - 1): two convolutions per level, dilation 2^i.
    std::size_t receptive_field() const;
    void validate() const;
};

struct LstmConfig {
    std::size_t units = 16;
    std::size_t layers = 1;
    void validate() const;
};

struct NnConfig {
    std::vector<std::size_t> hidden{100, 30};
    double dropout = 0.1;
    void validate() const;
};

/// A model for one channel: kind, hyper-parameters and input geometry.
struct ModelSpec {
    ModelKind kind = ModelKind::Tep;
    std::size_t window = 0;          // time steps
    std::size_t input_features = 0;  // columns of the (preprocessed) panel
    TepConfig tep;
    TcnConfig tcn;
    LstmConfig lstm;
    NnConfig nn;

    void validate() const;
    /// Per-step representation width.
    std::size_t representation_width() const;
    /// Rows of the representation (1 for nn and logistic).
    std::size_t representation_steps() const;
};

struct ModelParams {
    ModelSpec spec;
    std::string prefix;
    ParamMap tensors;
};

/// Random initialisation. With `with_head`, adds the standalone dense head
/// `<prefix>.head` mapping the max-pooled representation to 6 logits.
ModelParams init_model(const ModelSpec& spec, const std::string& prefix, Rng& rng, bool with_head = true);

std::size_t parameter_count(const ParamMap& params);

struct ForwardContext {
    Mode mode = Mode::Eval;
    Rng* dropout_rng = nullptr;         // required when training with dropout > 0
    AttentionTrace* trace = nullptr;    // TEP only
};

struct ForwardOutput {
    Var representation;  // (steps, width)
    Var logits;          // (1, 6); unset when the head is not requested
};

/// softmax(Q Kᵀ / sqrt(d)) V for one head, d = Q.cols().
layers::AttentionHead attention(Var queries, Var keys, Var values);

ForwardOutput tep_forward(ParamBinder& b, const std::string& prefix, const ModelSpec& spec, Var panel,
                          const ForwardContext& ctx, bool with_head = true);
ForwardOutput tcn_forward(ParamBinder& b, const std::string& prefix, const ModelSpec& spec, Var panel,
                          const ForwardContext& ctx, bool with_head = true);
/// LSTM, shallow NN or logistic regression.
ForwardOutput baseline_forward(ParamBinder& b, const std::string& prefix, const ModelSpec& spec, Var panel,
                               const ForwardContext& ctx, bool with_head = true);
/// Dispatches on spec.kind.
ForwardOutput model_forward(ParamBinder& b, const std::string& prefix, const ModelSpec& spec, Var panel,
                            const ForwardContext& ctx, bool with_head = true);

/// Eval-mode logits of a standalone model on one panel.
Tensor model_logits(const ModelParams& model, const Tensor& panel);

}  // namespace tep
