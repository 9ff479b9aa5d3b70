#include "harope/adapt.hpp"

#include <cmath>

namespace harope {

std::string to_string(AdaptVariant v) {
    switch (v) {
        case AdaptVariant::Identity: return "identity";
        case AdaptVariant::Normal: return "normal";
        case AdaptVariant::Orthogonal: return "orthogonal";
        case AdaptVariant::SVD: return "svd";
    }
    return "?";
}

AdaptVariant adapt_variant_from_string(const std::string& s) {
    if (s == "identity") return AdaptVariant::Identity;
    if (s == "normal") return AdaptVariant::Normal;
    if (s == "orthogonal") return AdaptVariant::Orthogonal;
    if (s == "svd") return AdaptVariant::SVD;
    throw ConfigError("unknown adapt variant '" + s + "'");
}

HeadAdaptParams init_identity(std::size_t dim, AdaptVariant variant) {
    if (dim < 2) throw DomainError("init_identity: dim must be >= 2");
    HeadAdaptParams p;
    p.dim = dim;
    p.variant = variant;
    switch (variant) {
        case AdaptVariant::Identity:
            break;
        case AdaptVariant::Normal:
            p.dense = Matrix::identity(dim);
            break;
        case AdaptVariant::Orthogonal:
            p.skew_v = SkewParams::zeros(dim);
            break;
        case AdaptVariant::SVD:
            p.skew_u = SkewParams::zeros(dim);
            p.skew_v = SkewParams::zeros(dim);
            p.sigma_raw.assign(dim, softplus_inverse(1.0));  // ln(e - 1)
            break;
    }
    return p;
}

void validate(const HeadAdaptParams& p) {
    if (p.dim < 2) throw ConfigError("adapt params: dim must be >= 2");
    const std::size_t k = skew_param_count(p.dim);
    const bool has_u = !p.skew_u.entries.empty() || p.skew_u.dim != 0;
    const bool has_v = !p.skew_v.entries.empty() || p.skew_v.dim != 0;
    const bool has_sigma = !p.sigma_raw.empty();
    const bool has_dense = p.dense.size() != 0;
    switch (p.variant) {
        case AdaptVariant::Identity:
            if (has_u || has_v || has_sigma || has_dense)
                throw ConfigError("identity variant carries no parameters");
            break;
        case AdaptVariant::Normal:
            if (has_u || has_v || has_sigma)
                throw ConfigError("normal variant carries only a dense matrix");
            if (p.dense.rows() != p.dim || p.dense.cols() != p.dim)
                throw ConfigError("normal variant: dense matrix must be dim x dim");
            break;
        case AdaptVariant::Orthogonal:
            if (has_u || has_sigma || has_dense)
                throw ConfigError("orthogonal variant carries only skew_v");
            if (p.skew_v.dim != p.dim || p.skew_v.entries.size() != k)
                throw ConfigError("orthogonal variant: skew_v has wrong size");
            break;
        case AdaptVariant::SVD:
            if (has_dense) throw ConfigError("svd variant does not carry a dense matrix");
            if (p.skew_u.dim != p.dim || p.skew_u.entries.size() != k ||
                p.skew_v.dim != p.dim || p.skew_v.entries.size() != k)
                throw ConfigError("svd variant: skew params have wrong size");
            if (p.sigma_raw.size() != p.dim)
                throw ConfigError("svd variant: sigma_raw must have dim entries");
            break;
    }
}

Matrix build_adapt_matrix(const HeadAdaptParams& p) {
    validate(p);
    switch (p.variant) {
        case AdaptVariant::Identity:
            return Matrix::identity(p.dim);
        case AdaptVariant::Normal:
            return p.dense;
        case AdaptVariant::Orthogonal:
            return expm(skew_to_matrix(p.skew_v));
        case AdaptVariant::SVD: {
            const Matrix u = expm(skew_to_matrix(p.skew_u));
            const Matrix v = expm(skew_to_matrix(p.skew_v));
            Matrix us(u);
            for (std::size_t i = 0; i < p.dim; ++i) {
                const double s = softplus(p.sigma_raw[i]);
                for (std::size_t r = 0; r < p.dim; ++r) us(r, i) = u(r, i) * s;
            }
            return matmul_nt(us, v);  // U Sigma V^T
        }
    }
    throw ConfigError("unreachable adapt variant");
}

double sigma_regularizer(const HeadAdaptParams& p) {
    if (p.variant != AdaptVariant::SVD)
        throw ConfigError("sigma_regularizer applies to the SVD variant only");
    validate(p);
    double s = 0.0;
    for (double raw : p.sigma_raw) {
        const double d = softplus(raw) - 1.0;
        s += d * d;
    }
    return s;
}

namespace {

std::vector<double> apply_matrix(const Matrix& a, std::span<const double> v) {
    std::vector<double> out(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* row = a.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += row[j] * v[j];
        out[i] = s;
    }
    return out;
}

}  // namespace

std::pair<std::vector<double>, std::vector<double>> apply_harope(
    std::span<const double> q, std::span<const double> k, const GridPosition& pos_q,
    const GridPosition& pos_k, const HeadAdaptParams& p, const RotaryConfig& cfg) {
    if (q.size() != cfg.head_dim || k.size() != cfg.head_dim || p.dim != cfg.head_dim) {
        throw ShapeError("apply_harope: q/k/params dims must equal head_dim");
    }
    const Matrix a = build_adapt_matrix(p);
    std::vector<double> aq = apply_matrix(a, q);
    std::vector<double> ak = apply_matrix(a, k);
    apply_rotary_nd_in_place(aq, pos_q, cfg);
    apply_rotary_nd_in_place(ak, pos_k, cfg);
    return {std::move(aq), std::move(ak)};
}

double adapted_score(std::span<const double> q, std::span<const double> k,
                     const GridPosition& delta, const HeadAdaptParams& p,
                     const RotaryConfig& cfg) {
    if (q.size() != cfg.head_dim || k.size() != cfg.head_dim || p.dim != cfg.head_dim) {
        throw ShapeError("adapted_score: q/k/params dims must equal head_dim");
    }
    const Matrix a = build_adapt_matrix(p);
    const std::vector<double> aq = apply_matrix(a, q);
    std::vector<double> ak = apply_matrix(a, k);
    apply_rotary_nd_in_place(ak, delta, cfg);
    return dot(aq, ak);
}

AdaptParamNodes adapt_leaves(Tape& tape, const HeadAdaptParams& p) {
    validate(p);
    AdaptParamNodes n;
    switch (p.variant) {
        case AdaptVariant::Identity:
            break;
        case AdaptVariant::Normal:
            n.dense = tape.leaf(p.dense);
            break;
        case AdaptVariant::Orthogonal:
            n.skew_v = tape.leaf(Matrix::column(p.skew_v.entries));
            break;
        case AdaptVariant::SVD:
            n.skew_u = tape.leaf(Matrix::column(p.skew_u.entries));
            n.skew_v = tape.leaf(Matrix::column(p.skew_v.entries));
            n.sigma_raw = tape.leaf(Matrix::column(p.sigma_raw));
            break;
    }
    return n;
}

NodeId build_adapt_matrix_taped(Tape& tape, const AdaptParamNodes& nodes, AdaptShape shape) {
    switch (shape.variant) {
        case AdaptVariant::Identity:
            return tape.constant(Matrix::identity(shape.dim));
        case AdaptVariant::Normal:
            return nodes.dense;
        case AdaptVariant::Orthogonal:
            return tape.expm_taylor(tape.skew_from_vector(nodes.skew_v));
        case AdaptVariant::SVD: {
            const NodeId u = tape.expm_taylor(tape.skew_from_vector(nodes.skew_u));
            const NodeId v = tape.expm_taylor(tape.skew_from_vector(nodes.skew_v));
            const NodeId sigma = tape.diag_from_vector(tape.softplus(nodes.sigma_raw));
            return tape.matmul_nt(tape.matmul(u, sigma), v);
        }
    }
    throw ConfigError("unreachable adapt variant");
}

NodeId sigma_regularizer_taped(Tape& tape, const AdaptParamNodes& nodes, AdaptShape shape) {
    if (shape.variant != AdaptVariant::SVD)
        throw ConfigError("sigma_regularizer applies to the SVD variant only");
    const NodeId sigma = tape.softplus(nodes.sigma_raw);
    const NodeId ones = tape.constant(Matrix(shape.dim, 1, std::vector<double>(shape.dim, 1.0)));
    const NodeId diff = tape.sub(sigma, ones);
    return tape.sum_all(tape.hadamard(diff, diff));
}

AdaptBank AdaptBank::identity(std::size_t heads, std::size_t dim, AdaptVariant variant,
                              bool shared) {
    AdaptBank b;
    b.heads = heads;
    b.shared = shared;
    const std::size_t n = shared ? 1 : heads;
    b.params.reserve(n);
    for (std::size_t i = 0; i < n; ++i) b.params.push_back(init_identity(dim, variant));
    return b;
}

void AdaptBank::validate_bank() const {
    const std::size_t expected = shared ? 1 : heads;
    if (params.size() != expected) {
        throw ConfigError("adapt bank: expected " + std::to_string(expected) +
                          " parameter records, got " + std::to_string(params.size()));
    }
    for (const auto& p : params) validate(p);
}

}  // namespace harope
