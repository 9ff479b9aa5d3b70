#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "harope/matrix.hpp"
#include "harope/rotary.hpp"

namespace harope {

using NodeId = std::uint32_t;

// Reverse-mode tape over a fixed primitive set. Values are eagerly computed
// at record time; backward replays the node list once in reverse. Vectors
// ride along as 1 x d or d x 1 matrices.
class Tape {
  public:
    NodeId leaf(Matrix value);      // parameter, receives a gradient
    NodeId constant(Matrix value);  // input/fixed data, no gradient

    NodeId matmul(NodeId a, NodeId b);     // A * B
    NodeId matmul_nt(NodeId a, NodeId b);  // A * B^T
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId add_scaled(NodeId a, NodeId b, double s);  // A + s*B
    NodeId scale(NodeId a, double s);
    NodeId hadamard(NodeId a, NodeId b);
    NodeId transpose(NodeId a);
    NodeId softplus(NodeId a);  // elementwise
    NodeId dot(NodeId a, NodeId b);      // Frobenius inner product -> 1x1
    NodeId sum_all(NodeId a);            // -> 1x1
    NodeId mean_rows(NodeId a);          // n x d -> 1 x d
    NodeId slice_cols(NodeId a, std::size_t j0, std::size_t w);
    NodeId slice_rows(NodeId a, std::size_t i0, std::size_t h);
    NodeId stack_rows(std::vector<NodeId> parts);  // row-wise concatenation
    NodeId gather_rows(NodeId table, std::vector<std::size_t> idx);
    NodeId softmax_rows(NodeId a);

    // d(d-1)/2 x 1 packed strict upper triangle -> d x d skew matrix
    NodeId skew_from_vector(NodeId a);
    // d x 1 (or 1 x d) vector -> d x d diagonal matrix
    NodeId diag_from_vector(NodeId a);

    // Applies the ND rotary map to every row at its position. The rotation
    // table is shared by pointer; one table serves many nodes, and backward
    // reuses it for the inverse rotation with no fresh trig.
    NodeId rotate_rows(NodeId a, std::shared_ptr<const RotaryPositions> rp);

    // Mean negative log likelihood of labels under row-wise softmax(logits).
    NodeId cross_entropy_rows(NodeId logits, std::vector<std::size_t> labels);

    // Matrix exponential recorded as its scaling-and-squaring Taylor
    // computation, so backward needs no dedicated expm rule.
    NodeId expm_taylor(NodeId a);

    const Matrix& value(NodeId id) const;
    std::size_t node_count() const;

    // Gradients of a scalar loss with respect to the given leaves;
    // leaves the loss does not reach get zero gradients.
    std::vector<Matrix> backward(NodeId loss, std::span<const NodeId> leaves) const;

    void reset();
    void reserve(std::size_t n);

    Tape();
    ~Tape();
    Tape(Tape&&) noexcept;
    Tape& operator=(Tape&&) noexcept;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// One scalar function of named parameter groups, expressed as a tape builder
// so the same definition serves both the analytic and the numeric side.
struct GradCheckProblem {
    std::vector<std::pair<std::string, Matrix>> groups;
    std::function<NodeId(Tape&, std::span<const NodeId>)> build;
};

struct GradReport {
    struct Entry {
        std::string group;
        std::size_t index;
        double analytic;
        double numeric;
        double rel_err;  // |a-n| / max(|a|, |n|, 1e-8)
    };
    std::vector<Entry> entries;
    double max_rel_err{0.0};

    // Pass rule: rel_err < rel_tol, or |analytic - numeric| < abs_tol. The
    // absolute guard covers coordinates whose true gradient is exactly zero
    // (symmetry directions), where central differences return rounding noise
    // that the relative formula cannot distinguish from an error.
    bool passes(double rel_tol, double abs_tol = 1e-6) const;
    // max rel_err over entries with |analytic - numeric| >= abs_tol
    double max_gated_err(double abs_tol = 1e-6) const;

    std::string to_csv() const;  // param_group,index,analytic,numeric,rel_err
};

// Central differences (f(p+h e_i) - f(p-h e_i)) / 2h against backward().
GradReport grad_check(const GradCheckProblem& problem, double h = 1e-5);

}  // namespace harope
