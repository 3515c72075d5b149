#include "tep/layers.hpp"

#include <cmath>

#include "tep/error.hpp"
#include "tep/rng.hpp"

namespace tep {

ParamBinder::ParamBinder(Tape& tape, const ParamMap& params, TrainableFn trainable)
    : tape_(tape), params_(params), trainable_(std::move(trainable)) {}

Var ParamBinder::operator()(const std::string& name) {
    if (auto it = bound_.find(name); it != bound_.end()) return it->second;
    auto p = params_.find(name);
    if (p == params_.end()) throw InvalidArgument("missing parameter '" + name + "'");
    const bool trainable = trainable_ ? trainable_(name) : true;
    Var v = tape_.parameter(name, p->second, trainable);
    bound_.emplace(name, v);
    return v;
}

Var activate(Var x, Activation act) { return act == Activation::Relu ? ops::relu(x) : ops::tanh(x); }

namespace init {

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng, std::size_t rows, std::size_t cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = Tensor::matrix(rows, cols);
    for (double& v : t.storage()) v = rng.uniform(-limit, limit);
    return t;
}

void dense(ParamMap& p, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    p[prefix + ".w"] = glorot(in, out, rng, in, out);
    p[prefix + ".b"] = Tensor::matrix(1, out);
}

void conv1d(ParamMap& p, const std::string& prefix, std::size_t kernel, std::size_t in, std::size_t out, Rng& rng) {
    p[prefix + ".w"] = glorot(kernel * in, out, rng, kernel * in, out);
    p[prefix + ".b"] = Tensor::matrix(1, out);
}

void weight_norm_conv1d(ParamMap& p, const std::string& prefix, std::size_t kernel, std::size_t in, std::size_t out,
                        Rng& rng) {
    Tensor v = glorot(kernel * in, out, rng, kernel * in, out);
    Tensor g = Tensor::matrix(1, out);
    for (std::size_t j = 0; j < out; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < v.rows(); ++i) s += v(i, j) * v(i, j);
        g(0, j) = std::sqrt(s);
    }
    p[prefix + ".v"] = std::move(v);
    p[prefix + ".g"] = std::move(g);
    p[prefix + ".b"] = Tensor::matrix(1, out);
}

void layernorm(ParamMap& p, const std::string& prefix, std::size_t width) {
    p[prefix + ".gamma"] = Tensor::matrix(1, width, 1.0);
    p[prefix + ".beta"] = Tensor::matrix(1, width);
}

void attention(ParamMap& p, const std::string& prefix, std::size_t model_size, Rng& rng) {
    for (const char* part : {".q", ".k", ".v", ".o"}) dense(p, prefix + part, model_size, model_size, rng);
}

void encoder_layer(ParamMap& p, const std::string& prefix, std::size_t model_size, std::size_t ff_size, Rng& rng) {
    attention(p, prefix + ".attn", model_size, rng);
    layernorm(p, prefix + ".ln1", model_size);
    dense(p, prefix + ".ff1", model_size, ff_size, rng);
    dense(p, prefix + ".ff2", ff_size, model_size, rng);
    layernorm(p, prefix + ".ln2", model_size);
}

void lstm_cell(ParamMap& p, const std::string& prefix, std::size_t in, std::size_t units, Rng& rng) {
    p[prefix + ".wx"] = glorot(in, 4 * units, rng, in, 4 * units);
    p[prefix + ".wh"] = glorot(units, 4 * units, rng, units, 4 * units);
    p[prefix + ".b"] = Tensor::matrix(1, 4 * units);
}

void tcn_block(ParamMap& p, const std::string& prefix, std::size_t kernel, std::size_t in, std::size_t out, Rng& rng) {
    weight_norm_conv1d(p, prefix + ".conv1", kernel, in, out, rng);
    weight_norm_conv1d(p, prefix + ".conv2", kernel, out, out, rng);
    if (in != out) dense(p, prefix + ".down", in, out, rng);
}

}  // namespace init

namespace layers {

AttentionHead attention_head(Var q, Var k, Var v) {
    if (q.cols() != k.cols() || k.rows() != v.rows()) {
        throw InvalidArgument("attention: inconsistent shapes q" + shape_to_string(q.shape()) + " k" +
                              shape_to_string(k.shape()) + " v" + shape_to_string(v.shape()));
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Var scores = ops::scale(ops::matmul_nt(q, k), inv_sqrt_d);
    Var weights = ops::softmax_rows(scores);
    return {weights, ops::matmul(weights, v)};
}

Var dense(ParamBinder& b, const std::string& prefix, Var x) {
    return ops::add_row(ops::matmul(x, b(prefix + ".w")), b(prefix + ".b"));
}

Var conv1d(ParamBinder& b, const std::string& prefix, Var x, std::size_t kernel, std::size_t dilation,
           ops::Padding padding) {
    return ops::conv1d(x, b(prefix + ".w"), b(prefix + ".b"), kernel, dilation, padding);
}

Var layernorm(ParamBinder& b, const std::string& prefix, Var x) {
    return ops::layernorm_rows(x, b(prefix + ".gamma"), b(prefix + ".beta"));
}

Var multi_head_attention(ParamBinder& b, const std::string& prefix, Var x, std::size_t heads, AttentionTrace* trace) {
    const std::size_t m = x.cols();
    if (heads == 0 || m % heads != 0) {
        throw InvalidArgument("attention: model size " + std::to_string(m) + " not divisible by " +
                              std::to_string(heads) + " heads");
    }
    const std::size_t d = m / heads;
    Var q = dense(b, prefix + ".q", x);
    Var k = dense(b, prefix + ".k", x);
    Var v = dense(b, prefix + ".v", x);
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        auto head = attention_head(ops::slice_cols(q, h * d, d), ops::slice_cols(k, h * d, d),
                                   ops::slice_cols(v, h * d, d));
        if (trace) trace->weights.push_back(head.weights.value());
        outs.push_back(head.output);
    }
    Var merged = heads == 1 ? outs[0] : ops::concat_cols(outs);
    return dense(b, prefix + ".o", merged);
}

Var encoder_layer(ParamBinder& b, const std::string& prefix, Var x, std::size_t heads, double dropout, bool train,
                  Rng* rng, AttentionTrace* trace) {
    Var a = multi_head_attention(b, prefix + ".attn", x, heads, trace);
    x = layernorm(b, prefix + ".ln1", ops::add(x, ops::dropout(a, dropout, train, rng)));
    Var f = dense(b, prefix + ".ff2", ops::relu(dense(b, prefix + ".ff1", x)));
    return layernorm(b, prefix + ".ln2", ops::add(x, ops::dropout(f, dropout, train, rng)));
}

LstmState lstm_step(Var input_proj, Var recurrent_weight, const LstmState& prev) {
    const std::size_t u = recurrent_weight.rows();
    Var z = ops::add(input_proj, ops::matmul(prev.h, recurrent_weight));
    Var i = ops::sigmoid(ops::slice_cols(z, 0, u));
    Var f = ops::sigmoid(ops::slice_cols(z, u, u));
    Var g = ops::tanh(ops::slice_cols(z, 2 * u, u));
    Var o = ops::sigmoid(ops::slice_cols(z, 3 * u, u));
    Var c = ops::add(ops::mul(f, prev.c), ops::mul(i, g));
    Var h = ops::mul(o, ops::tanh(c));
    return {h, c};
}

LstmState lstm_cell(ParamBinder& b, const std::string& prefix, Var x_t, const LstmState& prev) {
    Var proj = ops::add_row(ops::matmul(x_t, b(prefix + ".wx")), b(prefix + ".b"));
    return lstm_step(proj, b(prefix + ".wh"), prev);
}

Var tcn_block(ParamBinder& b, const std::string& prefix, Var x, std::size_t kernel, std::size_t dilation,
              Activation act, double dropout, bool train, Rng* rng) {
    auto wn_conv = [&](const std::string& name, Var in) {
        Var w = ops::weight_norm(b(name + ".v"), b(name + ".g"));
        return ops::conv1d(in, w, b(name + ".b"), kernel, dilation, ops::Padding::Causal);
    };
    Var y = ops::dropout(activate(wn_conv(prefix + ".conv1", x), act), dropout, train, rng);
    y = ops::dropout(activate(wn_conv(prefix + ".conv2", y), act), dropout, train, rng);
    const std::string down = prefix + ".down.w";
    Var res = b.params().contains(down) ? dense(b, prefix + ".down", x) : x;
    return activate(ops::add(y, res), act);
}

}  // namespace layers

Tensor positional_encoding(std::size_t length, std::size_t width) {
    Tensor pe = Tensor::matrix(length, width);
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; i < width; ++i) {
            const double expo = static_cast<double>(2 * (i / 2)) / static_cast<double>(width);
            const double angle = static_cast<double>(pos) / std::pow(10000.0, expo);
            pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

}  // namespace tep
