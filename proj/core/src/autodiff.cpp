#include "harope/autodiff.hpp"

#include <cmath>

namespace harope {

namespace {

enum class Op : std::uint8_t {
    Leaf,
    Constant,
    MatMul,
    MatMulNT,
    Add,
    Sub,
    AddScaled,
    Scale,
    Hadamard,
    Transpose,
    Softplus,
    Dot,
    SumAll,
    MeanRows,
    SliceCols,
    SliceRows,
    StackRows,
    GatherRows,
    SoftmaxRows,
    SkewFromVec,
    DiagFromVec,
    RotateRows,
    CrossEntropyRows,
};

struct Node {
    Op op;
    bool needs_grad;
    NodeId a{0}, b{0};
    double scalar{0.0};
    std::size_t i0{0}, i1{0};  // slice offset/extent
    Matrix value;
    std::shared_ptr<const RotaryPositions> rotary;
    std::vector<std::size_t> indices;  // gather rows / labels
};

Matrix softmax_rows_value(const Matrix& a) {
    Matrix p(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* in = a.row(i);
        double* out = p.row(i);
        double mx = in[0];
        for (std::size_t j = 1; j < a.cols(); ++j) mx = std::max(mx, in[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out[j] = std::exp(in[j] - mx);
            z += out[j];
        }
        const double inv = 1.0 / z;
        for (std::size_t j = 0; j < a.cols(); ++j) out[j] *= inv;
    }
    return p;
}

}  // namespace

struct Tape::Impl {
    std::vector<Node> nodes;

    NodeId push(Node n) {
        nodes.push_back(std::move(n));
        return static_cast<NodeId>(nodes.size() - 1);
    }
    const Node& at(NodeId id) const { return nodes[id]; }
    bool grad_flows(NodeId id) const { return nodes[id].needs_grad; }
};

Tape::Tape() : impl_(std::make_unique<Impl>()) {}
Tape::~Tape() = default;
Tape::Tape(Tape&&) noexcept = default;
Tape& Tape::operator=(Tape&&) noexcept = default;

const Matrix& Tape::value(NodeId id) const { return impl_->nodes[id].value; }
std::size_t Tape::node_count() const { return impl_->nodes.size(); }
void Tape::reset() { impl_->nodes.clear(); }
void Tape::reserve(std::size_t n) { impl_->nodes.reserve(n); }

NodeId Tape::leaf(Matrix value) {
    return impl_->push({Op::Leaf, true, 0, 0, 0.0, 0, 0, std::move(value), {}, {}});
}

NodeId Tape::constant(Matrix value) {
    return impl_->push({Op::Constant, false, 0, 0, 0.0, 0, 0, std::move(value), {}, {}});
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    Matrix v = harope::matmul(value(a), value(b));
    const bool g = impl_->grad_flows(a) || impl_->grad_flows(b);
    return impl_->push({Op::MatMul, g, a, b, 0.0, 0, 0, std::move(v), {}, {}});
}

NodeId Tape::matmul_nt(NodeId a, NodeId b) {
    Matrix v = harope::matmul_nt(value(a), value(b));
    const bool g = impl_->grad_flows(a) || impl_->grad_flows(b);
    return impl_->push({Op::MatMulNT, g, a, b, 0.0, 0, 0, std::move(v), {}, {}});
}

NodeId Tape::add(NodeId a, NodeId b) {
    Matrix v = harope::add(value(a), value(b));
    const bool g = impl_->grad_flows(a) || impl_->grad_flows(b);
    return impl_->push({Op::Add, g, a, b, 0.0, 0, 0, std::move(v), {}, {}});
}

NodeId Tape::sub(NodeId a, NodeId b) {
    Matrix v = harope::sub(value(a), value(b));
    const bool g = impl_->grad_flows(a) || impl_->grad_flows(b);
    return impl_->push({Op::Sub, g, a, b, 0.0, 0, 0, std::move(v), {}, {}});
}

NodeId Tape::add_scaled(NodeId a, NodeId b, double s) {
    Matrix v = value(a);
    add_scaled_in_place(v, value(b), s);
    const bool g = impl_->grad_flows(a) || impl_->grad_flows(b);
    return impl_->push({Op::AddScaled, g, a, b, s, 0, 0, std::move(v), {}, {}});
}

NodeId Tape::scale(NodeId a, double s) {
    Matrix v = harope::scale(value(a), s);
    return impl_->push({Op::Scale, impl_->grad_flows(a), a, 0, s, 0, 0, std::move(v), {}, {}});
}

NodeId Tape::hadamard(NodeId a, NodeId b) {
    const Matrix& x = value(a);
    const Matrix& y = value(b);
    if (!x.same_shape(y)) throw ShapeError("hadamard: shape mismatch");
    Matrix v = x;
    double* p = v.data();
    const double* q = y.data();
    for (std::size_t i = 0; i < v.size(); ++i) p[i] *= q[i];
    const bool g = impl_->grad_flows(a) || impl_->grad_flows(b);
    return impl_->push({Op::Hadamard, g, a, b, 0.0, 0, 0, std::move(v), {}, {}});
}

NodeId Tape::transpose(NodeId a) {
    Matrix v = harope::transpose(value(a));
    return impl_->push(
        {Op::Transpose, impl_->grad_flows(a), a, 0, 0.0, 0, 0, std::move(v), {}, {}});
}

NodeId Tape::softplus(NodeId a) {
    Matrix v = value(a);
    for (double& x : v.values()) x = harope::softplus(x);
    return impl_->push(
        {Op::Softplus, impl_->grad_flows(a), a, 0, 0.0, 0, 0, std::move(v), {}, {}});
}

NodeId Tape::dot(NodeId a, NodeId b) {
    const Matrix& x = value(a);
    const Matrix& y = value(b);
    if (x.size() != y.size()) throw ShapeError("dot: size mismatch");
    double s = 0.0;
    const double* p = x.data();
    const double* q = y.data();
    for (std::size_t i = 0; i < x.size(); ++i) s += p[i] * q[i];
    Matrix v(1, 1);
    v(0, 0) = s;
    const bool g = impl_->grad_flows(a) || impl_->grad_flows(b);
    return impl_->push({Op::Dot, g, a, b, 0.0, 0, 0, std::move(v), {}, {}});
}

NodeId Tape::sum_all(NodeId a) {
    double s = 0.0;
    for (double x : value(a).values()) s += x;
    Matrix v(1, 1);
    v(0, 0) = s;
    return impl_->push(
        {Op::SumAll, impl_->grad_flows(a), a, 0, 0.0, 0, 0, std::move(v), {}, {}});
}

NodeId Tape::mean_rows(NodeId a) {
    const Matrix& x = value(a);
    if (x.rows() == 0) throw ShapeError("mean_rows: empty matrix");
    Matrix v(1, x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) v(0, j) += x(i, j);
    const double inv = 1.0 / static_cast<double>(x.rows());
    for (double& e : v.values()) e *= inv;
    return impl_->push(
        {Op::MeanRows, impl_->grad_flows(a), a, 0, 0.0, 0, 0, std::move(v), {}, {}});
}

NodeId Tape::slice_cols(NodeId a, std::size_t j0, std::size_t w) {
    const Matrix& x = value(a);
    if (j0 + w > x.cols()) throw ShapeError("slice_cols: out of range");
    Matrix v(x.rows(), w);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < w; ++j) v(i, j) = x(i, j0 + j);
    return impl_->push(
        {Op::SliceCols, impl_->grad_flows(a), a, 0, 0.0, j0, w, std::move(v), {}, {}});
}

NodeId Tape::slice_rows(NodeId a, std::size_t i0, std::size_t h) {
    const Matrix& x = value(a);
    if (i0 + h > x.rows()) throw ShapeError("slice_rows: out of range");
    Matrix v(h, x.cols());
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) v(i, j) = x(i0 + i, j);
    return impl_->push(
        {Op::SliceRows, impl_->grad_flows(a), a, 0, 0.0, i0, h, std::move(v), {}, {}});
}

NodeId Tape::stack_rows(std::vector<NodeId> parts) {
    if (parts.empty()) throw ShapeError("stack_rows: no parts");
    std::size_t rows = 0;
    const std::size_t cols = value(parts[0]).cols();
    bool g = false;
    for (NodeId p : parts) {
        const Matrix& v = value(p);
        if (v.cols() != cols) throw ShapeError("stack_rows: column mismatch");
        rows += v.rows();
        g = g || impl_->grad_flows(p);
    }
    Matrix out(rows, cols);
    std::size_t at = 0;
    std::vector<std::size_t> part_ids;
    part_ids.reserve(parts.size());
    for (NodeId p : parts) {
        const Matrix& v = value(p);
        std::copy(v.data(), v.data() + v.size(), out.row(at));
        at += v.rows();
        part_ids.push_back(p);
    }
    return impl_->push({Op::StackRows, g, 0, 0, 0.0, 0, 0, std::move(out), {},
                        std::move(part_ids)});
}

NodeId Tape::gather_rows(NodeId table, std::vector<std::size_t> idx) {
    const Matrix& t = value(table);
    Matrix v(idx.size(), t.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= t.rows()) throw ShapeError("gather_rows: index out of range");
        for (std::size_t j = 0; j < t.cols(); ++j) v(i, j) = t(idx[i], j);
    }
    return impl_->push({Op::GatherRows, impl_->grad_flows(table), table, 0, 0.0, 0, 0,
                        std::move(v), {}, std::move(idx)});
}

NodeId Tape::softmax_rows(NodeId a) {
    Matrix v = softmax_rows_value(value(a));
    return impl_->push(
        {Op::SoftmaxRows, impl_->grad_flows(a), a, 0, 0.0, 0, 0, std::move(v), {}, {}});
}

NodeId Tape::skew_from_vector(NodeId a) {
    const Matrix& x = value(a);
    const std::size_t k = x.size();
    std::size_t dim = 2;
    while (skew_param_count(dim) < k) ++dim;
    if (skew_param_count(dim) != k)
        throw ShapeError("skew_from_vector: length is not d(d-1)/2 for any d");
    SkewParams p{dim, std::vector<double>(x.data(), x.data() + k)};
    Matrix v = skew_to_matrix(p);
    return impl_->push(
        {Op::SkewFromVec, impl_->grad_flows(a), a, 0, 0.0, 0, 0, std::move(v), {}, {}});
}

NodeId Tape::diag_from_vector(NodeId a) {
    const Matrix& x = value(a);
    const std::size_t d = x.size();
    Matrix v(d, d);
    for (std::size_t i = 0; i < d; ++i) v(i, i) = x.data()[i];
    return impl_->push(
        {Op::DiagFromVec, impl_->grad_flows(a), a, 0, 0.0, 0, 0, std::move(v), {}, {}});
}

NodeId Tape::rotate_rows(NodeId a, std::shared_ptr<const RotaryPositions> rp) {
    const Matrix& x = value(a);
    if (!rp) throw ConfigError("rotate_rows: null rotation table");
    if (rp->positions.size() != x.rows()) throw ShapeError("rotate_rows: one position per row");
    if (x.cols() != rp->cfg.head_dim) throw ShapeError("rotate_rows: row width != head_dim");
    Matrix v = x;
    for (std::size_t i = 0; i < v.rows(); ++i) rp->rotate_row(i, v.row(i), 1.0);
    return impl_->push({Op::RotateRows, impl_->grad_flows(a), a, 0, 0.0, 0, 0, std::move(v),
                        std::move(rp), {}});
}

NodeId Tape::cross_entropy_rows(NodeId logits, std::vector<std::size_t> labels) {
    const Matrix& x = value(logits);
    if (labels.size() != x.rows()) throw ShapeError("cross_entropy: one label per row");
    double total = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        if (labels[i] >= x.cols()) throw ShapeError("cross_entropy: label out of range");
        const double* row = x.row(i);
        double mx = row[0];
        for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) z += std::exp(row[j] - mx);
        total += std::log(z) + mx - row[labels[i]];
    }
    Matrix v(1, 1);
    v(0, 0) = total / static_cast<double>(x.rows());
    return impl_->push({Op::CrossEntropyRows, impl_->grad_flows(logits), logits, 0, 0.0, 0, 0,
                        std::move(v), {}, std::move(labels)});
}

NodeId Tape::expm_taylor(NodeId a) {
    const Matrix& m = value(a);
    if (m.rows() != m.cols()) throw ShapeError("expm_taylor: matrix must be square");
    const std::size_t n = m.rows();

    int s = 0;
    double norm = one_norm(m);
    while (norm > 0.5 && s < 60) {
        norm *= 0.5;
        ++s;
    }
    NodeId x = scale(a, std::ldexp(1.0, -s));
    NodeId result = constant(Matrix::identity(n));
    NodeId term = constant(Matrix::identity(n));
    for (int k = 1; k <= 18; ++k) {
        term = scale(matmul(term, x), 1.0 / k);
        result = add(result, term);
    }
    for (int i = 0; i < s; ++i) result = matmul(result, result);
    return result;
}

std::vector<Matrix> Tape::backward(NodeId loss, std::span<const NodeId> leaves) const {
    const auto& nodes = impl_->nodes;
    const Matrix& lv = nodes[loss].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw DomainError("backward: loss must be a 1x1 scalar");
    }

    std::vector<Matrix> adj(nodes.size());
    std::vector<char> has(nodes.size(), 0);

    auto accumulate = [&](NodeId id, Matrix&& g) {
        if (!nodes[id].needs_grad) return;
        if (!has[id]) {
            adj[id] = std::move(g);
            has[id] = 1;
        } else {
            add_in_place(adj[id], g);
        }
    };
    auto accumulate_scaled = [&](NodeId id, const Matrix& g, double s) {
        if (!nodes[id].needs_grad) return;
        if (!has[id]) {
            adj[id] = harope::scale(g, s);
            has[id] = 1;
        } else {
            add_scaled_in_place(adj[id], g, s);
        }
    };
    // consumes the finished adjoint of the node being processed; the moved
    // buffer must not be read afterwards in the same case
    auto accumulate_move = [&](NodeId id, Matrix&& g) {
        if (!nodes[id].needs_grad) return;
        if (!has[id]) {
            adj[id] = std::move(g);
            has[id] = 1;
        } else {
            add_in_place(adj[id], g);
        }
    };

    {
        Matrix seed(1, 1);
        seed(0, 0) = 1.0;
        adj[loss] = std::move(seed);
        has[loss] = 1;
    }

    for (NodeId id = loss + 1; id-- > 0;) {
        if (!has[id] || !nodes[id].needs_grad) continue;
        const Node& n = nodes[id];
        const Matrix& g = adj[id];
        switch (n.op) {
            case Op::Leaf:
            case Op::Constant:
                break;
            case Op::MatMul:
                accumulate(n.a, harope::matmul_nt(g, nodes[n.b].value));
                accumulate(n.b, harope::matmul_tn(nodes[n.a].value, g));
                break;
            case Op::MatMulNT:
                accumulate(n.a, harope::matmul(g, nodes[n.b].value));
                accumulate(n.b, harope::matmul_tn(g, nodes[n.a].value));
                break;
            case Op::Add:
                accumulate(n.b, Matrix(g));
                accumulate_move(n.a, std::move(adj[id]));
                break;
            case Op::Sub:
                accumulate_scaled(n.b, g, -1.0);
                accumulate_move(n.a, std::move(adj[id]));
                break;
            case Op::AddScaled:
                accumulate_scaled(n.b, g, n.scalar);
                accumulate_move(n.a, std::move(adj[id]));
                break;
            case Op::Scale: {
                if (!has[n.a] && nodes[n.a].needs_grad) {
                    Matrix ga = std::move(adj[id]);
                    for (double& v : ga.values()) v *= n.scalar;
                    accumulate_move(n.a, std::move(ga));
                } else {
                    accumulate_scaled(n.a, g, n.scalar);
                }
                break;
            }
            case Op::Hadamard: {
                const Matrix& av = nodes[n.a].value;
                const Matrix& bv = nodes[n.b].value;
                Matrix gb = g;
                double* p = gb.data();
                const double* r = av.data();
                for (std::size_t i = 0; i < gb.size(); ++i) p[i] *= r[i];
                accumulate(n.b, std::move(gb));
                Matrix ga = std::move(adj[id]);
                p = ga.data();
                const double* q = bv.data();
                for (std::size_t i = 0; i < ga.size(); ++i) p[i] *= q[i];
                accumulate_move(n.a, std::move(ga));
                break;
            }
            case Op::Transpose:
                accumulate(n.a, harope::transpose(g));
                break;
            case Op::Softplus: {
                Matrix ga = std::move(adj[id]);
                const Matrix& av = nodes[n.a].value;
                double* p = ga.data();
                const double* x = av.data();
                for (std::size_t i = 0; i < ga.size(); ++i) p[i] *= sigmoid(x[i]);
                accumulate_move(n.a, std::move(ga));
                break;
            }
            case Op::Dot: {
                const double s = g(0, 0);
                accumulate_scaled(n.a, nodes[n.b].value, s);
                accumulate_scaled(n.b, nodes[n.a].value, s);
                break;
            }
            case Op::SumAll: {
                const Matrix& av = nodes[n.a].value;
                Matrix ga(av.rows(), av.cols());
                const double s = g(0, 0);
                for (double& e : ga.values()) e = s;
                accumulate(n.a, std::move(ga));
                break;
            }
            case Op::MeanRows: {
                const Matrix& av = nodes[n.a].value;
                Matrix ga(av.rows(), av.cols());
                const double inv = 1.0 / static_cast<double>(av.rows());
                for (std::size_t i = 0; i < av.rows(); ++i)
                    for (std::size_t j = 0; j < av.cols(); ++j) ga(i, j) = g(0, j) * inv;
                accumulate(n.a, std::move(ga));
                break;
            }
            case Op::SliceCols: {
                // accumulate straight into the source adjoint; a scratch
                // full-size matrix per slice would dominate the backward pass
                if (!nodes[n.a].needs_grad) break;
                const Matrix& av = nodes[n.a].value;
                if (!has[n.a]) {
                    adj[n.a] = Matrix(av.rows(), av.cols());
                    has[n.a] = 1;
                }
                Matrix& ga = adj[n.a];
                for (std::size_t i = 0; i < g.rows(); ++i) {
                    const double* grow = g.row(i);
                    double* arow = ga.row(i) + n.i0;
                    for (std::size_t j = 0; j < g.cols(); ++j) arow[j] += grow[j];
                }
                break;
            }
            case Op::SliceRows: {
                if (!nodes[n.a].needs_grad) break;
                const Matrix& av = nodes[n.a].value;
                if (!has[n.a]) {
                    adj[n.a] = Matrix(av.rows(), av.cols());
                    has[n.a] = 1;
                }
                Matrix& ga = adj[n.a];
                for (std::size_t i = 0; i < g.rows(); ++i) {
                    const double* grow = g.row(i);
                    double* arow = ga.row(n.i0 + i);
                    for (std::size_t j = 0; j < g.cols(); ++j) arow[j] += grow[j];
                }
                break;
            }
            case Op::StackRows: {
                std::size_t at = 0;
                for (std::size_t part : n.indices) {
                    const NodeId pid = static_cast<NodeId>(part);
                    const Matrix& pv = nodes[pid].value;
                    if (nodes[pid].needs_grad) {
                        Matrix gp(pv.rows(), pv.cols());
                        std::copy(g.row(at), g.row(at) + gp.size(), gp.data());
                        accumulate(pid, std::move(gp));
                    }
                    at += pv.rows();
                }
                break;
            }
            case Op::GatherRows: {
                if (!nodes[n.a].needs_grad) break;
                const Matrix& av = nodes[n.a].value;
                if (!has[n.a]) {
                    adj[n.a] = Matrix(av.rows(), av.cols());
                    has[n.a] = 1;
                }
                Matrix& ga = adj[n.a];
                for (std::size_t i = 0; i < n.indices.size(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) ga(n.indices[i], j) += g(i, j);
                break;
            }
            case Op::SoftmaxRows: {
                const Matrix& p = n.value;
                Matrix ga = std::move(adj[id]);
                for (std::size_t i = 0; i < p.rows(); ++i) {
                    const double* prow = p.row(i);
                    double* grow = ga.row(i);
                    double inner = 0.0;
                    for (std::size_t j = 0; j < p.cols(); ++j) inner += grow[j] * prow[j];
                    for (std::size_t j = 0; j < p.cols(); ++j)
                        grow[j] = (grow[j] - inner) * prow[j];
                }
                accumulate_move(n.a, std::move(ga));
                break;
            }
            case Op::SkewFromVec: {
                const Matrix& av = nodes[n.a].value;
                Matrix ga(av.rows(), av.cols());
                const std::size_t d = n.value.rows();
                std::size_t t = 0;
                double* gp = ga.data();
                for (std::size_t i = 0; i < d; ++i)
                    for (std::size_t j = i + 1; j < d; ++j, ++t) gp[t] = g(i, j) - g(j, i);
                accumulate(n.a, std::move(ga));
                break;
            }
            case Op::DiagFromVec: {
                const Matrix& av = nodes[n.a].value;
                Matrix ga(av.rows(), av.cols());
                double* gp = ga.data();
                for (std::size_t i = 0; i < av.size(); ++i) gp[i] = g(i, i);
                accumulate(n.a, std::move(ga));
                break;
            }
            case Op::RotateRows: {
                // inverse rotation: same table with the sine negated
                Matrix ga = std::move(adj[id]);
                for (std::size_t i = 0; i < ga.rows(); ++i) {
                    n.rotary->rotate_row(i, ga.row(i), -1.0);
                }
                accumulate_move(n.a, std::move(ga));
                break;
            }
            case Op::CrossEntropyRows: {
                const Matrix& logits = nodes[n.a].value;
                Matrix ga = softmax_rows_value(logits);
                const double s = g(0, 0) / static_cast<double>(logits.rows());
                for (std::size_t i = 0; i < ga.rows(); ++i) {
                    ga(i, n.indices[i]) -= 1.0;
                    for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) *= s;
                }
                accumulate(n.a, std::move(ga));
                break;
            }
        }
    }

    std::vector<Matrix> out;
    out.reserve(leaves.size());
    for (NodeId leaf_id : leaves) {
        if (has[leaf_id]) {
            out.push_back(adj[leaf_id]);
        } else {
            const Matrix& v = nodes[leaf_id].value;
            out.emplace_back(v.rows(), v.cols());
        }
    }
    return out;
}

bool GradReport::passes(double rel_tol, double abs_tol) const {
    for (const auto& e : entries) {
        if (e.rel_err >= rel_tol && std::abs(e.analytic - e.numeric) >= abs_tol) return false;
    }
    return true;
}

double GradReport::max_gated_err(double abs_tol) const {
    double worst = 0.0;
    for (const auto& e : entries) {
        if (std::abs(e.analytic - e.numeric) >= abs_tol) worst = std::max(worst, e.rel_err);
    }
    return worst;
}

std::string GradReport::to_csv() const {
    std::string out = "param_group,index,analytic,numeric,rel_err\n";
    for (const auto& e : entries) {
        out += e.group;
        out += ',';
        out += std::to_string(e.index);
        out += ',';
        out += format_double(e.analytic);
        out += ',';
        out += format_double(e.numeric);
        out += ',';
        out += format_double(e.rel_err);
        out += '\n';
    }
    return out;
}

GradReport grad_check(const GradCheckProblem& problem, double h) {
    auto eval = [&](const std::vector<std::pair<std::string, Matrix>>& groups) {
        Tape tape;
        std::vector<NodeId> ids;
        ids.reserve(groups.size());
        for (const auto& [name, m] : groups) ids.push_back(tape.leaf(m));
        const NodeId loss = problem.build(tape, ids);
        return tape.value(loss)(0, 0);
    };

    // analytic side: one tape, one backward
    Tape tape;
    std::vector<NodeId> ids;
    ids.reserve(problem.groups.size());
    for (const auto& [name, m] : problem.groups) ids.push_back(tape.leaf(m));
    const NodeId loss = problem.build(tape, ids);
    const std::vector<Matrix> grads = tape.backward(loss, ids);

    GradReport report;
    for (std::size_t gi = 0; gi < problem.groups.size(); ++gi) {
        const auto& [name, base] = problem.groups[gi];
        for (std::size_t i = 0; i < base.size(); ++i) {
            auto perturbed = problem.groups;
            perturbed[gi].second.data()[i] = base.data()[i] + h;
            const double fp = eval(perturbed);
            perturbed[gi].second.data()[i] = base.data()[i] - h;
            const double fm = eval(perturbed);
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw NumericError("grad_check: non-finite value at group '" + name +
                                   "' index " + std::to_string(i));
            }
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = grads[gi].data()[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            const double rel = std::abs(analytic - numeric) / denom;
            report.entries.push_back({name, i, analytic, numeric, rel});
            report.max_rel_err = std::max(report.max_rel_err, rel);
        }
    }
    return report;
}

}  // namespace harope
