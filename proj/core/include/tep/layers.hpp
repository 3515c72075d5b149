#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tep/autograd.hpp"
#include "tep/optim.hpp"

namespace tep {

class Rng;

/// Binds named parameters to leaves on a tape, one leaf per name.
class ParamBinder {
public:
    using TrainableFn = std::function<bool(const std::string&)>;

    ParamBinder(Tape& tape, const ParamMap& params, TrainableFn trainable = {});

    Var operator()(const std::string& name);
    Tape& tape() noexcept { return tape_; }
    const ParamMap& params() const noexcept { return params_; }

private:
    Tape& tape_;
    const ParamMap& params_;
    TrainableFn trainable_;
    std::unordered_map<std::string, Var> bound_;
};

enum class Activation { Relu, Tanh };

Var activate(Var x, Activation act);

/// Per-head attention weights captured during a forward pass, indexed
/// [layer * heads + head].
struct AttentionTrace {
    std::size_t heads = 0;
    std::vector<Tensor> weights;
};

namespace init {

/// Uniform in ±sqrt(6/(fan_in+fan_out)).
Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng, std::size_t rows, std::size_t cols);

void dense(ParamMap& p, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);
void conv1d(ParamMap& p, const std::string& prefix, std::size_t kernel, std::size_t in, std::size_t out, Rng& rng);
void weight_norm_conv1d(ParamMap& p, const std::string& prefix, std::size_t kernel, std::size_t in, std::size_t out, Rng& rng);
void layernorm(ParamMap& p, const std::string& prefix, std::size_t width);
void attention(ParamMap& p, const std::string& prefix, std::size_t model_size, Rng& rng);
void encoder_layer(ParamMap& p, const std::string& prefix, std::size_t model_size, std::size_t ff_size, Rng& rng);
void lstm_cell(ParamMap& p, const std::string& prefix, std::size_t in, std::size_t units, Rng& rng);
void tcn_block(ParamMap& p, const std::string& prefix, std::size_t kernel, std::size_t in, std::size_t out, Rng& rng);

}  // namespace init

namespace layers {

struct AttentionHead {
    Var weights;  // (w, w), row-stochastic
    Var output;   // (w, d)
};

/// softmax(Q Kᵀ / sqrt(d)) V for one head; no causal mask.
AttentionHead attention_head(Var q, Var k, Var v);

Var dense(ParamBinder& b, const std::string& prefix, Var x);
Var conv1d(ParamBinder& b, const std::string& prefix, Var x, std::size_t kernel, std::size_t dilation, ops::Padding padding);
Var layernorm(ParamBinder& b, const std::string& prefix, Var x);
Var multi_head_attention(ParamBinder& b, const std::string& prefix, Var x, std::size_t heads,
                         AttentionTrace* trace = nullptr);

/// Post-norm transformer encoder layer: LN(x + MHA(x)), then LN(x + FFN(x)).
Var encoder_layer(ParamBinder& b, const std::string& prefix, Var x, std::size_t heads, double dropout, bool train,
                  Rng* rng, AttentionTrace* trace = nullptr);

struct LstmState {
    Var h;  // (1, units)
    Var c;  // (1, units)
};

/// One LSTM step given the precomputed input projection x_t·Wx + b (1, 4·units).
/// Gate order: input, forget, cell, output.
LstmState lstm_step(Var input_proj, Var recurrent_weight, const LstmState& prev);

/// Full cell: x_t (1, in) -> next state. Used by the gradient checker.
LstmState lstm_cell(ParamBinder& b, const std::string& prefix, Var x_t, const LstmState& prev);

/// Residual block of two causal dilated weight-normalised convolutions.
Var tcn_block(ParamBinder& b, const std::string& prefix, Var x, std::size_t kernel, std::size_t dilation,
              Activation act, double dropout, bool train, Rng* rng);

}  // namespace layers

/// Sinusoidal position table, (length, width).
Tensor positional_encoding(std::size_t length, std::size_t width);

}  // namespace tep
