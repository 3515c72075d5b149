#include "tep/nets.hpp"

#include <map>
#include <mutex>

#include "tep/datapipe.hpp"
#include "tep/error.hpp"
#include "tep/rng.hpp"

namespace tep {

std::string_view to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::Tep: return "tep";
        case ModelKind::Tcn: return "tcn";
        case ModelKind::Lstm: return "lstm";
        case ModelKind::Nn: return "nn";
        case ModelKind::Logistic: return "logistic";
    }
    return "?";
}

ModelKind model_kind_from_string(std::string_view name) {
    for (auto k : {ModelKind::Tep, ModelKind::Tcn, ModelKind::Lstm, ModelKind::Nn, ModelKind::Logistic})
        if (to_string(k) == name) return k;
    throw InvalidArgument("unknown model kind '" + std::string(name) + "'");
}

TepConfig TepConfig::heads_from_layers(std::size_t model_size, std::size_t layers) {
    TepConfig c;
    c.model_size = model_size;
    c.layers = layers;
    if (layers == 0) throw InvalidArgument("tep: layers must be positive");
    c.heads = model_size / layers;
    return c;
}

void TepConfig::validate() const {
    if (model_size == 0 || layers == 0 || heads == 0) throw InvalidArgument("tep: sizes must be positive");
    if (model_size % heads != 0)
        throw InvalidArgument("tep: model_size " + std::to_string(model_size) + " is not divisible by heads " +
                              std::to_string(heads));
    if (conv_kernel == 0 || conv_kernel % 2 == 0) throw InvalidArgument("tep: conv_kernel must be a positive odd number");
    if (ff_multiplier == 0) throw InvalidArgument("tep: ff_multiplier must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("tep: dropout must lie in [0,1)");
}

std::size_t TcnConfig::receptive_field() const {
    return 1 + 2 * (kernel - 1) * ((std::size_t{1} << levels) - 1);
}

void TcnConfig::validate() const {
    if (filters == 0 || kernel == 0 || levels == 0) throw InvalidArgument("tcn: sizes must be positive");
    if (levels > 16) throw InvalidArgument("tcn: at most 16 levels");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("tcn: dropout must lie in [0,1)");
}

void LstmConfig::validate() const {
    if (units == 0 || layers == 0) throw InvalidArgument("lstm: sizes must be positive");
}

void NnConfig::validate() const {
    if (hidden.empty()) throw InvalidArgument("nn: at least one hidden layer");
    for (auto h : hidden)
        if (h == 0) throw InvalidArgument("nn: hidden sizes must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("nn: dropout must lie in [0,1)");
}

void ModelSpec::validate() const {
    if (window == 0 || input_features == 0) throw InvalidArgument("model input must have positive window and features");
    switch (kind) {
        case ModelKind::Tep: tep.validate(); break;
        case ModelKind::Tcn: tcn.validate(); break;
        case ModelKind::Lstm: lstm.validate(); break;
        case ModelKind::Nn: nn.validate(); break;
        case ModelKind::Logistic: break;
    }
}

std::size_t ModelSpec::representation_width() const {
    switch (kind) {
        case ModelKind::Tep: return tep.model_size;
        case ModelKind::Tcn: return tcn.filters;
        case ModelKind::Lstm: return lstm.units;
        case ModelKind::Nn: return nn.hidden.back();
        case ModelKind::Logistic: return window * input_features;
    }
    return 0;
}

std::size_t ModelSpec::representation_steps() const {
    return kind == ModelKind::Nn || kind == ModelKind::Logistic ? 1 : window;
}

ModelParams init_model(const ModelSpec& spec, const std::string& prefix, Rng& rng, bool with_head) {
    spec.validate();
    ModelParams m{spec, prefix, {}};
    ParamMap& p = m.tensors;
    const std::size_t f = spec.input_features;
    switch (spec.kind) {
        case ModelKind::Tep: {
            const auto& c = spec.tep;
            init::conv1d(p, prefix + ".embed", c.conv_kernel, f, c.model_size, rng);
            for (std::size_t l = 0; l < c.layers; ++l)
                init::encoder_layer(p, prefix + ".enc" + std::to_string(l), c.model_size, c.ff_multiplier * c.model_size,
                                    rng);
            break;
        }
        case ModelKind::Tcn: {
            const auto& c = spec.tcn;
            for (std::size_t l = 0; l < c.levels; ++l)
                init::tcn_block(p, prefix + ".block" + std::to_string(l), c.kernel, l == 0 ? f : c.filters, c.filters,
                                rng);
            break;
        }
        case ModelKind::Lstm:
            for (std::size_t l = 0; l < spec.lstm.layers; ++l)
                init::lstm_cell(p, prefix + ".lstm" + std::to_string(l), l == 0 ? f : spec.lstm.units, spec.lstm.units,
                                rng);
            break;
        case ModelKind::Nn: {
            std::size_t in = spec.window * f;
            for (std::size_t l = 0; l < spec.nn.hidden.size(); ++l) {
                init::dense(p, prefix + ".hidden" + std::to_string(l), in, spec.nn.hidden[l], rng);
                in = spec.nn.hidden[l];
            }
            break;
        }
        case ModelKind::Logistic: break;
    }
    if (with_head) init::dense(p, prefix + ".head", spec.representation_width(), kHorizons, rng);
    return m;
}

std::size_t parameter_count(const ParamMap& params) {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.size();
    return n;
}

layers::AttentionHead attention(Var queries, Var keys, Var values) {
    if (queries.cols() != keys.cols() || keys.rows() != values.rows())
        throw InvalidArgument("attention: inconsistent query/key/value shapes");
    return layers::attention_head(queries, keys, values);
}

namespace {

const Tensor& cached_positional_encoding(std::size_t length, std::size_t width) {
    static std::mutex mu;
    static std::map<std::pair<std::size_t, std::size_t>, Tensor> cache;
    std::lock_guard lock(mu);
    auto [it, inserted] = cache.try_emplace({length, width});
    if (inserted) it->second = positional_encoding(length, width);
    return it->second;
}

void check_panel(const ModelSpec& spec, Var panel) {
    if (panel.rows() != spec.window || panel.cols() != spec.input_features)
        throw InvalidArgument("model expects a (" + std::to_string(spec.window) + ", " +
                              std::to_string(spec.input_features) + ") panel, got " + shape_to_string(panel.shape()));
}

bool training(const ForwardContext& ctx) { return ctx.mode == Mode::Train; }

Var pooled_head(ParamBinder& b, const std::string& prefix, Var representation) {
    return layers::dense(b, prefix + ".head", ops::max_rows(representation));
}

}  // namespace

ForwardOutput tep_forward(ParamBinder& b, const std::string& prefix, const ModelSpec& spec, Var panel,
                          const ForwardContext& ctx, bool with_head) {
    check_panel(spec, panel);
    const auto& c = spec.tep;
    Var x = layers::conv1d(b, prefix + ".embed", panel, c.conv_kernel, 1, ops::Padding::Same);
    if (c.positional_encoding)
        x = ops::add(x, b.tape().constant_ref(cached_positional_encoding(spec.window, c.model_size)));
    for (std::size_t l = 0; l < c.layers; ++l)
        x = layers::encoder_layer(b, prefix + ".enc" + std::to_string(l), x, c.heads, c.dropout, training(ctx),
                                  ctx.dropout_rng, ctx.trace);
    return {x, with_head ? pooled_head(b, prefix, x) : Var{}};
}

ForwardOutput tcn_forward(ParamBinder& b, const std::string& prefix, const ModelSpec& spec, Var panel,
                          const ForwardContext& ctx, bool with_head) {
    check_panel(spec, panel);
    const auto& c = spec.tcn;
    Var x = panel;
    for (std::size_t l = 0; l < c.levels; ++l)
        x = layers::tcn_block(b, prefix + ".block" + std::to_string(l), x, c.kernel, std::size_t{1} << l,
                              Activation::Relu, c.dropout, training(ctx), ctx.dropout_rng);
    return {x, with_head ? pooled_head(b, prefix, x) : Var{}};
}

ForwardOutput baseline_forward(ParamBinder& b, const std::string& prefix, const ModelSpec& spec, Var panel,
                               const ForwardContext& ctx, bool with_head) {
    check_panel(spec, panel);
    Var rep;
    switch (spec.kind) {
        case ModelKind::Lstm: {
            Var x = panel;
            const std::size_t u = spec.lstm.units;
            for (std::size_t l = 0; l < spec.lstm.layers; ++l) {
                const std::string name = prefix + ".lstm" + std::to_string(l);
                Var proj = ops::add_row(ops::matmul(x, b(name + ".wx")), b(name + ".b"));
                Var wh = b(name + ".wh");
                layers::LstmState s{b.tape().constant(Tensor::matrix(1, u)), b.tape().constant(Tensor::matrix(1, u))};
                std::vector<Var> hs;
                hs.reserve(spec.window);
                for (std::size_t t = 0; t < spec.window; ++t) {
                    s = layers::lstm_step(ops::row(proj, t), wh, s);
                    hs.push_back(s.h);
                }
                x = ops::stack_rows(hs);
            }
            rep = x;
            break;
        }
        case ModelKind::Nn: {
            Var x = ops::flatten(panel);
            for (std::size_t l = 0; l < spec.nn.hidden.size(); ++l) {
                x = ops::relu(layers::dense(b, prefix + ".hidden" + std::to_string(l), x));
                x = ops::dropout(x, spec.nn.dropout, training(ctx), ctx.dropout_rng);
            }
            rep = x;
            break;
        }
        case ModelKind::Logistic: rep = ops::flatten(panel); break;
        default: throw InvalidArgument("baseline_forward: kind must be lstm, nn or logistic");
    }
    return {rep, with_head ? pooled_head(b, prefix, rep) : Var{}};
}

ForwardOutput model_forward(ParamBinder& b, const std::string& prefix, const ModelSpec& spec, Var panel,
                            const ForwardContext& ctx, bool with_head) {
    switch (spec.kind) {
        case ModelKind::Tep: return tep_forward(b, prefix, spec, panel, ctx, with_head);
        case ModelKind::Tcn: return tcn_forward(b, prefix, spec, panel, ctx, with_head);
        default: return baseline_forward(b, prefix, spec, panel, ctx, with_head);
    }
}

Tensor model_logits(const ModelParams& model, const Tensor& panel) {
    Tape tape;
    ParamBinder b(tape, model.tensors, [](const std::string&) { return false; });
    return model_forward(b, model.prefix, model.spec, tape.constant_ref(panel), {}).logits.value();
}

}  // namespace tep
