#pragma once

#include <string>
#include <utility>
#include <vector>

#include "harope/autodiff.hpp"
#include "harope/matrix.hpp"
#include "harope/rotary.hpp"

namespace harope {

// How the pre-rotary adaptation matrix A is parameterized.
//   Identity:   A = I, no parameters
//   Normal:     A = dense, unconstrained d x d matrix
//   Orthogonal: A = expm(skew(v))
//   SVD:        A = expm(skew(u)) diag(softplus(sigma_raw)) expm(skew(v))^T
enum class AdaptVariant { Identity, Normal, Orthogonal, SVD };

std::string to_string(AdaptVariant v);
AdaptVariant adapt_variant_from_string(const std::string& s);

struct HeadAdaptParams {
    std::size_t dim{0};
    AdaptVariant variant{AdaptVariant::Identity};
    SkewParams skew_u;             // SVD only
    SkewParams skew_v;             // SVD and Orthogonal
    std::vector<double> sigma_raw; // SVD only, pre-softplus
    Matrix dense;                  // Normal only

    bool operator==(const HeadAdaptParams&) const = default;
};

// A = I for every variant; SVD starts at sigma_raw = softplus^-1(1) = ln(e-1)
HeadAdaptParams init_identity(std::size_t dim, AdaptVariant variant);

// Throws ConfigError if the populated fields do not match the variant.
void validate(const HeadAdaptParams& p);

Matrix build_adapt_matrix(const HeadAdaptParams& p);

// Sum of (softplus(sigma_raw_i) - 1)^2; SVD variant only.
double sigma_regularizer(const HeadAdaptParams& p);

// (R_{pos_q} A q, R_{pos_k} A k); the one adaptation matrix maps both sides.
std::pair<std::vector<double>, std::vector<double>> apply_harope(
    std::span<const double> q, std::span<const double> k, const GridPosition& pos_q,
    const GridPosition& pos_k, const HeadAdaptParams& p, const RotaryConfig& cfg);

// q^T A^T R_delta A k computed from the offset alone.
double adapted_score(std::span<const double> q, std::span<const double> k,
                     const GridPosition& delta, const HeadAdaptParams& p,
                     const RotaryConfig& cfg);

// Variant + dimension without parameter values; shape carrier for tape code.
struct AdaptShape {
    AdaptVariant variant{AdaptVariant::Identity};
    std::size_t dim{0};
};

// Tape-side construction of A, so gradients flow to the raw parameters.
struct AdaptParamNodes {
    NodeId skew_u{0};
    NodeId skew_v{0};
    NodeId sigma_raw{0};
    NodeId dense{0};
};

// Registers the variant's parameters as tape leaves (vectors as k x 1).
AdaptParamNodes adapt_leaves(Tape& tape, const HeadAdaptParams& p);

// A on the tape: SVD as expm(skew_u) diag(softplus(sigma)) expm(skew_v)^T,
// recorded through the Taylor expm so backward falls out of the primitives.
NodeId build_adapt_matrix_taped(Tape& tape, const AdaptParamNodes& nodes, AdaptShape shape);

NodeId sigma_regularizer_taped(Tape& tape, const AdaptParamNodes& nodes, AdaptShape shape);

// Per-head adaptation parameters; one shared record or one per head.
struct AdaptBank {
    std::size_t heads{0};
    bool shared{false};
    std::vector<HeadAdaptParams> params;  // length 1 if shared, else heads

    static AdaptBank identity(std::size_t heads, std::size_t dim, AdaptVariant variant,
                              bool shared);

    const HeadAdaptParams& head(std::size_t h) const { return params[shared ? 0 : h]; }
    HeadAdaptParams& head(std::size_t h) { return params[shared ? 0 : h]; }
    void validate_bank() const;

    bool operator==(const AdaptBank&) const = default;
};

}  // namespace harope
