#include "tep/optim.hpp"

#include <cmath>

#include "tep/error.hpp"

namespace tep {

void optimizer_step(ParamMap& params, const GradMap& grads, OptimizerState& state) {
    const OptimizerHyper& h = state.hyper;
    if (!(h.learning_rate > 0.0)) throw InvalidArgument("optimizer_step: learning rate must be positive");

    for (const auto& [name, g] : grads) {
        auto it = params.find(name);
        if (it == params.end()) throw InvalidArgument("optimizer_step: gradient for unknown parameter " + name);
        if (it->second.shape() != g.shape()) {
            throw InvalidArgument("optimizer_step: shape mismatch for " + name + ": " +
                                  shape_to_string(it->second.shape()) + " vs " + shape_to_string(g.shape()));
        }
    }

    ++state.step;
    if (h.kind == OptimizerKind::Sgd) {
        for (const auto& [name, g] : grads) {
            auto p = params.at(name).data();
            auto gd = g.data();
            for (std::size_t i = 0; i < p.size(); ++i) p[i] -= h.learning_rate * gd[i];
        }
        return;
    }

    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(h.beta1, t);
    const double bc2 = 1.0 - std::pow(h.beta2, t);
    for (const auto& [name, g] : grads) {
        Tensor& param = params.at(name);
        auto [m_it, m_new] = state.first_moment.try_emplace(name, param.shape(), 0.0);
        auto [v_it, v_new] = state.second_moment.try_emplace(name, param.shape(), 0.0);
        if (m_it->second.shape() != param.shape() || v_it->second.shape() != param.shape()) {
            throw InvalidArgument("optimizer_step: moment shape mismatch for " + name);
        }
        auto p = param.data();
        auto gd = g.data();
        auto m = m_it->second.data();
        auto v = v_it->second.data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gd[i];
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gd[i] * gd[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= h.learning_rate * mhat / (std::sqrt(vhat) + h.epsilon);
        }
    }
}

}  // namespace tep
