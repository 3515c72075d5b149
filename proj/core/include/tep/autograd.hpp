#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tep/tensor.hpp"

namespace tep {

class Rng;
class Tape;

using NodeId = std::uint32_t;
using GradMap = std::map<std::string, Tensor>;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

    /// False for a default-constructed handle.
    bool valid() const noexcept { return tape_ != nullptr; }
    Tape& tape() const { return *tape_; }
    NodeId id() const noexcept { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }

private:
    Tape* tape_ = nullptr;
    NodeId id_ = 0;
};

struct BackwardContext {
    std::span<const Tensor* const> inputs;
    const Tensor& output;
    const Tensor& grad_output;
    // Null where the corresponding input does not need a gradient.
    std::span<Tensor* const> grad_inputs;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

/// Records a forward computation in topological order and replays it
/// backwards. Single-threaded; one tape per sample.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    /// References `value` without copying; it must outlive the tape.
    Var constant_ref(const Tensor& value);
    /// Leaf for a named parameter. Non-trainable parameters behave as constants.
    Var parameter(const std::string& name, const Tensor& value, bool trainable = true);

    Var record(Tensor value, std::vector<NodeId> inputs, BackwardFn backward, const char* op);

    const Tensor& value(NodeId id) const;
    bool needs_grad(NodeId id) const { return nodes_[id].needs_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// d(loss)/d(param) for every trainable parameter on the tape. Trainable
    /// parameters the loss does not depend on get a zero gradient.
    GradMap backward(Var loss) const;

private:
    struct Node {
        Tensor owned;
        const Tensor* ref = nullptr;
        std::vector<NodeId> inputs;
        BackwardFn backward;
        std::string param;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
};

/// Convenience wrapper matching the tensorcore contract.
GradMap forward_backward(const Tape& tape, Var loss);

namespace ops {

Var matmul(Var a, Var b);     // (n,k)·(k,m)
Var matmul_nt(Var a, Var b);  // (n,k)·(m,k)ᵀ
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);             // elementwise
Var add_row(Var x, Var bias);      // bias (1,m) broadcast over rows
Var scale(Var x, double s);
Var add_scalar(Var x, double s);
Var relu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var softmax_rows(Var x);
Var layernorm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var stack_rows(std::span<const Var> rows);  // each (1,m) -> (n,m)
Var row(Var x, std::size_t r);
Var flatten(Var x);  // (n,m) -> (1,n*m)
/// Column-wise max over rows; ties go to the earliest row.
Var max_rows(Var x);
Var sum(Var x);
Var mean(Var x);

enum class Padding { Same, Causal };

/// 1D convolution over rows (time). weight is (kernel*c_in, c_out) with row
/// index tap*c_in + channel; tap 0 is the oldest input in the window.
Var conv1d(Var x, Var weight, Var bias, std::size_t kernel, std::size_t dilation, Padding padding);

/// Weight normalisation: column j of the result is g_j * v[:,j] / ||v[:,j]||.
Var weight_norm(Var v, Var g);

/// Inverted dropout; identity when !train or p == 0.
Var dropout(Var x, double p, bool train, Rng* rng);

/// Sum over horizons of sigmoid cross-entropy with logits, in the stable
/// max(z,0) - z*y + log1p(exp(-|z|)) form. logits and targets both (1,H).
Var sigmoid_bce_sum(Var logits, const Tensor& targets);

}  // namespace ops

}  // namespace tep
