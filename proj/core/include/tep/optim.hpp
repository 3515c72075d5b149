#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "tep/autograd.hpp"
#include "tep/tensor.hpp"

namespace tep {

using ParamMap = std::map<std::string, Tensor>;

enum class OptimizerKind { Adam, Sgd };

struct OptimizerHyper {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    OptimizerHyper hyper;
    std::uint64_t step = 0;
    std::map<std::string, Tensor> first_moment;
    std::map<std::string, Tensor> second_moment;
};

/// One Adam or SGD update. Only parameters present in `grads` move; the step
/// counter advances by exactly one per call.
void optimizer_step(ParamMap& params, const GradMap& grads, OptimizerState& state);

}  // namespace tep
