#include "tep/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "tep/error.hpp"
#include "tep/rng.hpp"

namespace tep {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat as_mat(const Tensor& t) {
    return ConstMapMat(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

Eigen::Map<const Eigen::RowVectorXd> as_row(const Tensor& t) {
    return Eigen::Map<const Eigen::RowVectorXd>(t.data().data(), static_cast<Eigen::Index>(t.size()));
}

MapMat as_mat(Tensor& t) {
    return MapMat(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void require(bool ok, const char* op, const std::string& detail) {
    if (!ok) throw InvalidArgument(std::string(op) + ": " + detail);
}

void require_matrix(const Tensor& t, const char* op) {
    require(t.rank() == 2, op, "expected a matrix, got shape " + shape_to_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(), op, shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
}

Tape& tape_of(Var a, Var b) {
    require(&a.tape() == &b.tape(), "tape", "operands recorded on different tapes");
    return a.tape();
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
    Node n;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::constant_ref(const Tensor& value) {
    Node n;
    n.ref = &value;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::parameter(const std::string& name, const Tensor& value, bool trainable) {
    Node n;
    n.ref = &value;
    if (trainable) {
        n.param = name;
        n.needs_grad = true;
    }
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::vector<NodeId> inputs, BackwardFn backward, const char* op) {
    value.ensure_finite(op);
    Node n;
    n.owned = std::move(value);
    for (NodeId in : inputs) {
        require(in < nodes_.size(), op, "input node out of range");
        n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
    }
    n.inputs = std::move(inputs);
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

const Tensor& Tape::value(NodeId id) const {
    const Node& n = nodes_.at(id);
    return n.ref ? *n.ref : n.owned;
}

GradMap Tape::backward(Var loss) const {
    if (&loss.tape() != this) throw InvalidArgument("backward: loss recorded on a different tape");
    const Tensor& lv = value(loss.id());
    if (lv.size() != 1) throw InvalidArgument("backward: loss must be a scalar, got " + shape_to_string(lv.shape()));

    GradMap out;
    for (const Node& n : nodes_) {
        if (!n.param.empty() && !out.contains(n.param)) out.emplace(n.param, Tensor(n.ref->shape(), 0.0));
    }
    if (!nodes_[loss.id()].needs_grad) return out;

    std::vector<Tensor> grads(loss.id() + 1);
    grads[loss.id()] = Tensor(lv.shape(), 1.0);

    std::vector<const Tensor*> in_vals;
    std::vector<Tensor*> in_grads;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        const Node& n = nodes_[i];
        if (!n.needs_grad || grads[i].empty()) continue;
        if (!n.param.empty()) {
            auto& acc = out.at(n.param);
            auto dst = acc.data();
            auto src = grads[i].data();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
            continue;
        }
        if (!n.backward) continue;
        in_vals.clear();
        in_grads.clear();
        for (NodeId in : n.inputs) {
            in_vals.push_back(&value(in));
            if (nodes_[in].needs_grad) {
                if (grads[in].empty()) grads[in] = Tensor(value(in).shape(), 0.0);
                in_grads.push_back(&grads[in]);
            } else {
                in_grads.push_back(nullptr);
            }
        }
        n.backward(BackwardContext{in_vals, value(static_cast<NodeId>(i)), grads[i], in_grads});
        // Free as we go; each node is visited once.
        grads[i] = Tensor();
    }
    return out;
}

GradMap forward_backward(const Tape& tape, Var loss) { return tape.backward(loss); }

namespace ops {

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_matrix(av, "matmul");
    require_matrix(bv, "matmul");
    require(av.cols() == bv.rows(), "matmul", shape_to_string(av.shape()) + " x " + shape_to_string(bv.shape()));
    Tensor out = Tensor::matrix(av.rows(), bv.cols());
    as_mat(out).noalias() = as_mat(av) * as_mat(bv);
    return t.record(std::move(out), {a.id(), b.id()}, [](const BackwardContext& c) {
        if (c.grad_inputs[0]) as_mat(*c.grad_inputs[0]).noalias() += as_mat(c.grad_output) * as_mat(*c.inputs[1]).transpose();
        if (c.grad_inputs[1]) as_mat(*c.grad_inputs[1]).noalias() += as_mat(*c.inputs[0]).transpose() * as_mat(c.grad_output);
    }, "matmul");
}

Var matmul_nt(Var a, Var b) {
    Tape& t = tape_of(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_matrix(av, "matmul_nt");
    require_matrix(bv, "matmul_nt");
    require(av.cols() == bv.cols(), "matmul_nt", shape_to_string(av.shape()) + " x " + shape_to_string(bv.shape()) + "^T");
    Tensor out = Tensor::matrix(av.rows(), bv.rows());
    as_mat(out).noalias() = as_mat(av) * as_mat(bv).transpose();
    return t.record(std::move(out), {a.id(), b.id()}, [](const BackwardContext& c) {
        if (c.grad_inputs[0]) as_mat(*c.grad_inputs[0]).noalias() += as_mat(c.grad_output) * as_mat(*c.inputs[1]);
        if (c.grad_inputs[1]) as_mat(*c.grad_inputs[1]).noalias() += as_mat(c.grad_output).transpose() * as_mat(*c.inputs[0]);
    }, "matmul_nt");
}

Var add(Var a, Var b) {
    Tape& t = tape_of(a, b);
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    auto o = out.data();
    auto bd = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
    return t.record(std::move(out), {a.id(), b.id()}, [](const BackwardContext& c) {
        auto g = c.grad_output.data();
        for (auto* gi : c.grad_inputs) {
            if (!gi) continue;
            auto d = gi->data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        }
    }, "add");
}

Var sub(Var a, Var b) {
    Tape& t = tape_of(a, b);
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    auto o = out.data();
    auto bd = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bd[i];
    return t.record(std::move(out), {a.id(), b.id()}, [](const BackwardContext& c) {
        auto g = c.grad_output.data();
        if (c.grad_inputs[0]) {
            auto d = c.grad_inputs[0]->data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        }
        if (c.grad_inputs[1]) {
            auto d = c.grad_inputs[1]->data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
        }
    }, "sub");
}

Var mul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    auto o = out.data();
    auto bd = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
    return t.record(std::move(out), {a.id(), b.id()}, [](const BackwardContext& c) {
        auto g = c.grad_output.data();
        auto av = c.inputs[0]->data();
        auto bv = c.inputs[1]->data();
        if (c.grad_inputs[0]) {
            auto d = c.grad_inputs[0]->data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
        }
        if (c.grad_inputs[1]) {
            auto d = c.grad_inputs[1]->data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
        }
    }, "mul");
}

Var add_row(Var x, Var bias) {
    Tape& t = tape_of(x, bias);
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    require_matrix(xv, "add_row");
    require(bv.size() == xv.cols(), "add_row", "bias " + shape_to_string(bv.shape()) + " vs " + shape_to_string(xv.shape()));
    Tensor out = xv;
    as_mat(out).rowwise() += as_row(bv);
    return t.record(std::move(out), {x.id(), bias.id()}, [](const BackwardContext& c) {
        if (c.grad_inputs[0]) as_mat(*c.grad_inputs[0]) += as_mat(c.grad_output);
        if (c.grad_inputs[1]) {
            auto sums = as_mat(c.grad_output).colwise().sum();
            auto d = c.grad_inputs[1]->data();
            for (std::size_t j = 0; j < d.size(); ++j) d[j] += sums(static_cast<Eigen::Index>(j));
        }
    }, "add_row");
}

Var scale(Var x, double s) {
    Tensor out = x.value();
    for (double& v : out.storage()) v *= s;
    return x.tape().record(std::move(out), {x.id()}, [s](const BackwardContext& c) {
        auto g = c.grad_output.data();
        auto d = c.grad_inputs[0]->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * g[i];
    }, "scale");
}

Var add_scalar(Var x, double s) {
    Tensor out = x.value();
    for (double& v : out.storage()) v += s;
    return x.tape().record(std::move(out), {x.id()}, [](const BackwardContext& c) {
        auto g = c.grad_output.data();
        auto d = c.grad_inputs[0]->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }, "add_scalar");
}

Var relu(Var x) {
    Tensor out = x.value();
    for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
    return x.tape().record(std::move(out), {x.id()}, [](const BackwardContext& c) {
        auto g = c.grad_output.data();
        auto y = c.output.data();
        auto d = c.grad_inputs[0]->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += y[i] > 0.0 ? g[i] : 0.0;
    }, "relu");
}

Var tanh(Var x) {
    Tensor out = x.value();
    for (double& v : out.storage()) v = std::tanh(v);
    return x.tape().record(std::move(out), {x.id()}, [](const BackwardContext& c) {
        auto g = c.grad_output.data();
        auto y = c.output.data();
        auto d = c.grad_inputs[0]->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
    }, "tanh");
}

namespace {
double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}
}  // namespace

Var sigmoid(Var x) {
    Tensor out = x.value();
    for (double& v : out.storage()) v = stable_sigmoid(v);
    return x.tape().record(std::move(out), {x.id()}, [](const BackwardContext& c) {
        auto g = c.grad_output.data();
        auto y = c.output.data();
        auto d = c.grad_inputs[0]->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
    }, "sigmoid");
}

Var softmax_rows(Var x) {
    const Tensor& xv = x.value();
    require_matrix(xv, "softmax_rows");
    Tensor out = xv;
    const std::size_t n = out.rows(), m = out.cols();
    for (std::size_t r = 0; r < n; ++r) {
        double* p = &out(r, 0);
        const double mx = *std::max_element(p, p + m);
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            p[j] = std::exp(p[j] - mx);
            s += p[j];
        }
        for (std::size_t j = 0; j < m; ++j) p[j] /= s;
    }
    return x.tape().record(std::move(out), {x.id()}, [](const BackwardContext& c) {
        const Tensor& y = c.output;
        const Tensor& g = c.grad_output;
        Tensor& d = *c.grad_inputs[0];
        const std::size_t n = y.rows(), m = y.cols();
        for (std::size_t r = 0; r < n; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += g(r, j) * y(r, j);
            for (std::size_t j = 0; j < m; ++j) d(r, j) += y(r, j) * (g(r, j) - dot);
        }
    }, "softmax_rows");
}

Var layernorm_rows(Var x, Var gamma, Var beta, double eps) {
    Tape& t = tape_of(x, gamma);
    const Tensor& xv = x.value();
    require_matrix(xv, "layernorm_rows");
    const std::size_t n = xv.rows(), m = xv.cols();
    require(gamma.value().size() == m && beta.value().size() == m, "layernorm_rows", "gamma/beta width mismatch");
    Tensor xhat = Tensor::matrix(n, m);
    std::vector<double> inv_std(n);
    Tensor out = Tensor::matrix(n, m);
    const auto gv = gamma.value().data();
    const auto bv = beta.value().data();
    for (std::size_t r = 0; r < n; ++r) {
        double mu = 0.0;
        for (std::size_t j = 0; j < m; ++j) mu += xv(r, j);
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t j = 0; j < m; ++j) var += (xv(r, j) - mu) * (xv(r, j) - mu);
        var /= static_cast<double>(m);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < m; ++j) {
            xhat(r, j) = (xv(r, j) - mu) * inv_std[r];
            out(r, j) = gv[j] * xhat(r, j) + bv[j];
        }
    }
    return t.record(std::move(out), {x.id(), gamma.id(), beta.id()},
                    [xhat = std::move(xhat), inv_std = std::move(inv_std)](const BackwardContext& c) {
        const Tensor& g = c.grad_output;
        const auto gam = c.inputs[1]->data();
        const std::size_t n = g.rows(), m = g.cols();
        if (c.grad_inputs[1]) {
            auto d = c.grad_inputs[1]->data();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < m; ++j) d[j] += g(r, j) * xhat(r, j);
        }
        if (c.grad_inputs[2]) {
            auto d = c.grad_inputs[2]->data();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < m; ++j) d[j] += g(r, j);
        }
        if (c.grad_inputs[0]) {
            Tensor& d = *c.grad_inputs[0];
            const double inv_m = 1.0 / static_cast<double>(m);
            for (std::size_t r = 0; r < n; ++r) {
                double s1 = 0.0, s2 = 0.0;
                for (std::size_t j = 0; j < m; ++j) {
                    const double dxh = g(r, j) * gam[j];
                    s1 += dxh;
                    s2 += dxh * xhat(r, j);
                }
                for (std::size_t j = 0; j < m; ++j) {
                    const double dxh = g(r, j) * gam[j];
                    d(r, j) += inv_std[r] * (dxh - s1 * inv_m - xhat(r, j) * s2 * inv_m);
                }
            }
        }
    }, "layernorm_rows");
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
    const Tensor& xv = x.value();
    require_matrix(xv, "slice_cols");
    require(begin + count <= xv.cols(), "slice_cols", "range out of bounds");
    Tensor out = Tensor::matrix(xv.rows(), count);
    for (std::size_t r = 0; r < xv.rows(); ++r)
        std::copy_n(&xv(r, begin), count, &out(r, 0));
    return x.tape().record(std::move(out), {x.id()}, [begin, count](const BackwardContext& c) {
        Tensor& d = *c.grad_inputs[0];
        for (std::size_t r = 0; r < c.grad_output.rows(); ++r)
            for (std::size_t j = 0; j < count; ++j) d(r, begin + j) += c.grad_output(r, j);
    }, "slice_cols");
}

Var concat_cols(std::span<const Var> parts) {
    require(!parts.empty(), "concat_cols", "no inputs");
    Tape& t = parts[0].tape();
    const std::size_t n = parts[0].rows();
    std::size_t total = 0;
    std::vector<NodeId> ids;
    for (const Var& p : parts) {
        require(&p.tape() == &t, "concat_cols", "operands recorded on different tapes");
        require_matrix(p.value(), "concat_cols");
        require(p.rows() == n, "concat_cols", "row count mismatch");
        total += p.cols();
        ids.push_back(p.id());
    }
    Tensor out = Tensor::matrix(n, total);
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        for (std::size_t r = 0; r < n; ++r) std::copy_n(&v(r, 0), v.cols(), &out(r, off));
        off += v.cols();
    }
    return t.record(std::move(out), std::move(ids), [](const BackwardContext& c) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < c.inputs.size(); ++k) {
            const std::size_t w = c.inputs[k]->cols();
            if (Tensor* d = c.grad_inputs[k]) {
                for (std::size_t r = 0; r < d->rows(); ++r)
                    for (std::size_t j = 0; j < w; ++j) (*d)(r, j) += c.grad_output(r, off + j);
            }
            off += w;
        }
    }, "concat_cols");
}

Var stack_rows(std::span<const Var> rows) {
    require(!rows.empty(), "stack_rows", "no inputs");
    Tape& t = rows[0].tape();
    const std::size_t m = rows[0].value().size();
    std::vector<NodeId> ids;
    Tensor out = Tensor::matrix(rows.size(), m);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        require(&rows[r].tape() == &t, "stack_rows", "operands recorded on different tapes");
        const Tensor& v = rows[r].value();
        require(v.size() == m, "stack_rows", "width mismatch");
        std::copy_n(v.data().data(), m, &out(r, 0));
        ids.push_back(rows[r].id());
    }
    return t.record(std::move(out), std::move(ids), [](const BackwardContext& c) {
        const std::size_t m = c.grad_output.cols();
        for (std::size_t r = 0; r < c.inputs.size(); ++r) {
            if (Tensor* d = c.grad_inputs[r]) {
                auto dd = d->data();
                for (std::size_t j = 0; j < m; ++j) dd[j] += c.grad_output(r, j);
            }
        }
    }, "stack_rows");
}

Var row(Var x, std::size_t r) {
    const Tensor& xv = x.value();
    require_matrix(xv, "row");
    require(r < xv.rows(), "row", "index out of range");
    Tensor out = Tensor::matrix(1, xv.cols());
    std::copy_n(&xv(r, 0), xv.cols(), &out(0, 0));
    return x.tape().record(std::move(out), {x.id()}, [r](const BackwardContext& c) {
        Tensor& d = *c.grad_inputs[0];
        for (std::size_t j = 0; j < d.cols(); ++j) d(r, j) += c.grad_output(0, j);
    }, "row");
}

Var flatten(Var x) {
    const Tensor& xv = x.value();
    Tensor out = xv.reshaped(Shape{1, xv.size()});
    out.set_requires_grad(false);
    return x.tape().record(std::move(out), {x.id()}, [](const BackwardContext& c) {
        auto d = c.grad_inputs[0]->data();
        auto g = c.grad_output.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }, "flatten");
}

Var max_rows(Var x) {
    const Tensor& xv = x.value();
    require_matrix(xv, "max_rows");
    require(xv.rows() >= 1, "max_rows", "empty sequence");
    const std::size_t n = xv.rows(), m = xv.cols();
    Tensor out = Tensor::matrix(1, m);
    std::vector<std::size_t> arg(m, 0);
    for (std::size_t j = 0; j < m; ++j) {
        double best = xv(0, j);
        for (std::size_t r = 1; r < n; ++r) {
            if (xv(r, j) > best) {
                best = xv(r, j);
                arg[j] = r;
            }
        }
        out(0, j) = best;
    }
    return x.tape().record(std::move(out), {x.id()}, [arg = std::move(arg)](const BackwardContext& c) {
        Tensor& d = *c.grad_inputs[0];
        for (std::size_t j = 0; j < arg.size(); ++j) d(arg[j], j) += c.grad_output(0, j);
    }, "max_rows");
}

Var sum(Var x) {
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return x.tape().record(Tensor::scalar(s), {x.id()}, [](const BackwardContext& c) {
        const double g = c.grad_output.item();
        for (double& v : c.grad_inputs[0]->storage()) v += g;
    }, "sum");
}

Var mean(Var x) {
    const double n = static_cast<double>(x.value().size());
    require(n > 0, "mean", "empty tensor");
    return scale(sum(x), 1.0 / n);
}

Var conv1d(Var x, Var weight, Var bias, std::size_t kernel, std::size_t dilation, Padding padding) {
    Tape& t = tape_of(x, weight);
    const Tensor& xv = x.value();
    require_matrix(xv, "conv1d");
    require(kernel >= 1 && dilation >= 1, "conv1d", "kernel and dilation must be positive");
    const std::size_t w = xv.rows(), cin = xv.cols();
    const Tensor& wv = weight.value();
    require(wv.rank() == 2 && wv.rows() == kernel * cin, "conv1d",
            "weight " + shape_to_string(wv.shape()) + " does not match kernel " + std::to_string(kernel) +
                " x " + std::to_string(cin) + " input channels");
    require(bias.value().size() == wv.cols(), "conv1d", "bias width mismatch");
    const std::size_t span = (kernel - 1) * dilation;
    if (padding == Padding::Same) require(kernel % 2 == 1, "conv1d", "same padding requires an odd kernel");
    const std::ptrdiff_t offset = padding == Padding::Causal ? static_cast<std::ptrdiff_t>(span)
                                                             : static_cast<std::ptrdiff_t>(span / 2);

    Tensor cols = Tensor::matrix(w, kernel * cin);
    for (std::size_t r = 0; r < w; ++r) {
        for (std::size_t k = 0; k < kernel; ++k) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(r) - offset + static_cast<std::ptrdiff_t>(k * dilation);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(w)) continue;
            std::copy_n(&xv(static_cast<std::size_t>(src), 0), cin, &cols(r, k * cin));
        }
    }
    Tensor out = Tensor::matrix(w, wv.cols());
    as_mat(out).noalias() = as_mat(cols) * as_mat(wv);
    as_mat(out).rowwise() += as_row(bias.value());

    return t.record(std::move(out), {x.id(), weight.id(), bias.id()},
                    [cols = std::move(cols), kernel, dilation, offset, cin](const BackwardContext& c) {
        const Tensor& g = c.grad_output;
        if (c.grad_inputs[1]) as_mat(*c.grad_inputs[1]).noalias() += as_mat(cols).transpose() * as_mat(g);
        if (c.grad_inputs[2]) {
            auto sums = as_mat(g).colwise().sum();
            auto d = c.grad_inputs[2]->data();
            for (std::size_t j = 0; j < d.size(); ++j) d[j] += sums(static_cast<Eigen::Index>(j));
        }
        if (c.grad_inputs[0]) {
            Tensor dcols = Tensor::matrix(cols.rows(), cols.cols());
            as_mat(dcols).noalias() = as_mat(g) * as_mat(*c.inputs[1]).transpose();
            Tensor& dx = *c.grad_inputs[0];
            const std::size_t w = dx.rows();
            for (std::size_t r = 0; r < w; ++r) {
                for (std::size_t k = 0; k < kernel; ++k) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(r) - offset + static_cast<std::ptrdiff_t>(k * dilation);
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(w)) continue;
                    double* dst = &dx(static_cast<std::size_t>(src), 0);
                    const double* s = &dcols(r, k * cin);
                    for (std::size_t j = 0; j < cin; ++j) dst[j] += s[j];
                }
            }
        }
    }, "conv1d");
}

Var weight_norm(Var v, Var g) {
    Tape& t = tape_of(v, g);
    const Tensor& vv = v.value();
    require_matrix(vv, "weight_norm");
    const std::size_t n = vv.rows(), m = vv.cols();
    require(g.value().size() == m, "weight_norm", "gain width mismatch");
    std::vector<double> norms(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) norms[j] += vv(i, j) * vv(i, j);
    for (double& s : norms) {
        s = std::sqrt(s);
        if (s == 0.0) throw NumericError("weight_norm: zero direction vector");
    }
    const auto gv = g.value().data();
    Tensor out = Tensor::matrix(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out(i, j) = gv[j] * vv(i, j) / norms[j];
    return t.record(std::move(out), {v.id(), g.id()}, [norms = std::move(norms)](const BackwardContext& c) {
        const Tensor& vv = *c.inputs[0];
        const auto gv = c.inputs[1]->data();
        const Tensor& go = c.grad_output;
        const std::size_t n = vv.rows(), m = vv.cols();
        for (std::size_t j = 0; j < m; ++j) {
            double dot = 0.0;  // vhat . dW[:,j]
            for (std::size_t i = 0; i < n; ++i) dot += vv(i, j) / norms[j] * go(i, j);
            if (c.grad_inputs[1]) c.grad_inputs[1]->data()[j] += dot;
            if (c.grad_inputs[0]) {
                Tensor& dv = *c.grad_inputs[0];
                const double s = gv[j] / norms[j];
                for (std::size_t i = 0; i < n; ++i) dv(i, j) += s * (go(i, j) - dot * vv(i, j) / norms[j]);
            }
        }
    }, "weight_norm");
}

Var dropout(Var x, double p, bool train, Rng* rng) {
    if (!train || p <= 0.0) return x;
    require(p < 1.0, "dropout", "rate must be in [0,1)");
    require(rng != nullptr, "dropout", "training-mode dropout needs an RNG stream");
    Tensor mask(x.value().shape(), 0.0);
    const double keep = 1.0 / (1.0 - p);
    for (double& m : mask.storage()) m = rng->uniform() < p ? 0.0 : keep;
    return mul(x, x.tape().constant(std::move(mask)));
}

Var sigmoid_bce_sum(Var logits, const Tensor& targets) {
    const Tensor& z = logits.value();
    require(z.size() == targets.size(), "sigmoid_bce_sum",
            "logits " + shape_to_string(z.shape()) + " vs targets " + shape_to_string(targets.shape()));
    double loss = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double zi = z[i], yi = targets[i];
        loss += std::max(zi, 0.0) - zi * yi + std::log1p(std::exp(-std::abs(zi)));
    }
    return logits.tape().record(Tensor::scalar(loss), {logits.id()}, [targets](const BackwardContext& c) {
        const double g = c.grad_output.item();
        const Tensor& z = *c.inputs[0];
        auto d = c.grad_inputs[0]->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * (stable_sigmoid(z[i]) - targets[i]);
    }, "sigmoid_bce_sum");
}

}  // namespace ops

}  // namespace tep
