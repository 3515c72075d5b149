#include "tep/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "tep/autograd.hpp"
#include "tep/error.hpp"
#include "tep/layers.hpp"
#include "tep/rng.hpp"

namespace tep {

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv1d: return "conv1d";
        case LayerKind::Attention: return "attention";
        case LayerKind::LayerNorm: return "layernorm";
        case LayerKind::LstmCell: return "lstm-cell";
        case LayerKind::TcnBlock: return "tcn-block";
        case LayerKind::MaxPool: return "max-pool";
    }
    return "?";
}

LayerKind layer_kind_from_string(std::string_view name) {
    for (auto k : {LayerKind::Dense, LayerKind::Conv1d, LayerKind::Attention, LayerKind::LayerNorm,
                   LayerKind::LstmCell, LayerKind::TcnBlock, LayerKind::MaxPool}) {
        if (to_string(k) == name) return k;
    }
    throw InvalidArgument("unknown layer kind '" + std::string(name) + "'");
}

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
    return std::abs(analytic - numeric) / denom;
}

namespace {

using LayerFn = std::function<Var(ParamBinder&)>;

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
    Tensor t(shape, 0.0);
    for (double& v : t.storage()) v = scale * rng.normal();
    return t;
}

}  // namespace

GradCheckReport grad_check(LayerKind kind, const Shape& input_shape, double tolerance, const GradCheckOptions& o) {
    GradCheckReport report;
    report.kind = kind;
    if (input_shape.size() != 2 || input_shape[0] == 0 || input_shape[1] == 0) {
        GradCheckEntry e{"shape", 0, INFINITY, INFINITY, false};
        report.entries.push_back(e);
        return report;
    }
    const std::size_t w = input_shape[0], f = input_shape[1];
    Rng rng(o.seed, "gradcheck");
    ParamMap params;
    params["input"] = random_tensor(input_shape, rng);

    LayerFn layer;
    switch (kind) {
        case LayerKind::Dense:
            init::dense(params, "l", f, o.output_width, rng);
            layer = [](ParamBinder& b) { return layers::dense(b, "l", b("input")); };
            break;
        case LayerKind::Conv1d:
            init::conv1d(params, "l", o.kernel, f, o.output_width, rng);
            layer = [&o](ParamBinder& b) {
                return layers::conv1d(b, "l", b("input"), o.kernel, o.dilation, ops::Padding::Same);
            };
            break;
        case LayerKind::Attention:
            init::attention(params, "l", f, rng);
            layer = [&o](ParamBinder& b) { return layers::multi_head_attention(b, "l", b("input"), o.heads); };
            break;
        case LayerKind::LayerNorm:
            init::layernorm(params, "l", f);
            // Non-trivial affine part so gamma/beta gradients are exercised.
            params["l.gamma"] = random_tensor({1, f}, rng);
            params["l.beta"] = random_tensor({1, f}, rng);
            layer = [](ParamBinder& b) { return layers::layernorm(b, "l", b("input")); };
            break;
        case LayerKind::LstmCell:
            // input is one timestep per row; the cell is unrolled over all rows.
            init::lstm_cell(params, "l", f, o.output_width, rng);
            params["h0"] = random_tensor({1, o.output_width}, rng, 0.5);
            params["c0"] = random_tensor({1, o.output_width}, rng, 0.5);
            layer = [w](ParamBinder& b) {
                layers::LstmState s{b("h0"), b("c0")};
                std::vector<Var> hs;
                for (std::size_t t = 0; t < w; ++t) {
                    s = layers::lstm_cell(b, "l", ops::row(b("input"), t), s);
                    hs.push_back(s.h);
                }
                hs.push_back(s.c);
                return ops::stack_rows(hs);
            };
            break;
        case LayerKind::TcnBlock:
            init::tcn_block(params, "l", o.kernel, f, o.output_width, rng);
            layer = [&o](ParamBinder& b) {
                return layers::tcn_block(b, "l", b("input"), o.kernel, o.dilation, Activation::Tanh, 0.0, false,
                                         nullptr);
            };
            break;
        case LayerKind::MaxPool: {
            // Distinct dyadic inputs keep every perturbed sum exact, so the
            // finite difference is exact as well.
            std::vector<double> levels(w * f);
            for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = (static_cast<double>(i) + 0.5) / 8.0;
            rng.shuffle(levels);
            params["input"] = Tensor(input_shape, std::move(levels));
            layer = [](ParamBinder& b) { return ops::max_rows(b("input")); };
            break;
        }
    }

    // Probe the output shape once to draw the projection weights.
    Tensor projection;
    {
        Tape tape;
        ParamBinder b(tape, params);
        projection = random_tensor(layer(b).shape(), rng);
    }
    double step = o.step;
    if (kind == LayerKind::MaxPool) {
        for (double& v : projection.storage()) v = std::round(v * 16.0) / 16.0;
        step = 1.0 / 1024.0;
    }

    auto loss_of = [&](ParamBinder& b) {
        Var y = layer(b);
        return ops::sum(ops::mul(y, b.tape().constant_ref(projection)));
    };

    GradMap analytic;
    {
        Tape tape;
        ParamBinder b(tape, params);
        analytic = tape.backward(loss_of(b));
    }

    auto eval = [&]() {
        Tape tape;
        ParamBinder b(tape, params, [](const std::string&) { return false; });
        return loss_of(b).value().item();
    };

    report.passed = true;
    for (auto& [name, tensor] : params) {
        GradCheckEntry e;
        e.name = name;
        const Tensor& g = analytic.at(name);
        for (std::size_t i = 0; i < tensor.size(); ++i) {
            const double orig = tensor[i];
            tensor[i] = orig + step;
            const double up = eval();
            tensor[i] = orig - step;
            const double down = eval();
            tensor[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            e.max_rel_error = std::max(e.max_rel_error, relative_error(g[i], numeric));
            e.max_abs_error = std::max(e.max_abs_error, std::abs(g[i] - numeric));
            ++e.checked;
        }
        e.passed = e.max_rel_error < tolerance;
        report.passed = report.passed && e.passed;
        report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
        report.entries.push_back(std::move(e));
    }
    return report;
}

}  // namespace tep
