#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tep/tensor.hpp"

namespace tep {

enum class LayerKind { Dense, Conv1d, Attention, LayerNorm, LstmCell, TcnBlock, MaxPool };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

struct GradCheckOptions {
    std::size_t output_width = 3;  // dense / conv / tcn output channels, lstm units
    std::size_t heads = 2;         // attention
    std::size_t kernel = 3;        // conv / tcn
    std::size_t dilation = 2;      // conv / tcn
    double step = 1e-5;            // central-difference step
    std::uint64_t seed = 1;
};

struct GradCheckEntry {
    std::string name;  // parameter name, or "input"
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    bool passed = false;
};

struct GradCheckReport {
    LayerKind kind = LayerKind::Dense;
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    bool passed = false;
};

/// Relative error used throughout: |a - n| / max(|a|, |n|, 1e-4). The floor
/// keeps analytically-zero gradients from amplifying finite-difference noise.
double relative_error(double analytic, double numeric);

/// Compares autodiff gradients of a random scalar projection of the layer
/// output against central finite differences, for the input and every
/// parameter. Failures are reported, never thrown.
GradCheckReport grad_check(LayerKind kind, const Shape& input_shape, double tolerance,
                           const GradCheckOptions& options = {});

}  // namespace tep
