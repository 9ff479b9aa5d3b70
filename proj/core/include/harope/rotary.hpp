#pragma once

#include <memory>
#include <span>
#include <vector>

#include "harope/matrix.hpp"

namespace harope {

// Per-axis rotary frequencies: thetas[i] = base^(-2i/dim), i < dim/2.
struct FreqSpectrum {
    std::size_t dim{0};
    double base{0.0};
    std::vector<double> thetas;
};

FreqSpectrum make_spectrum(std::size_t dim, double base);

// A position on a p-dimensional grid. Coordinates are real-valued; Eq-style
// rotations are defined for any real position. Callers should keep |coord|
// below ~1e6, past which plain double trig loses the tolerances used here.
struct GridPosition {
    std::vector<double> coords;

    GridPosition() = default;
    explicit GridPosition(std::vector<double> c) : coords(std::move(c)) {}
    GridPosition(double x) : coords{x} {}
    GridPosition(double x, double y) : coords{x, y} {}

    std::size_t axes() const { return coords.size(); }
    bool operator==(const GridPosition&) const = default;
};

GridPosition operator+(const GridPosition& a, const GridPosition& b);
GridPosition operator-(const GridPosition& a, const GridPosition& b);

// Block layout for multi-axis rotary: head_dim splits into `axes` contiguous
// blocks of head_dim/axes dims, one spectrum per axis.
struct RotaryConfig {
    std::size_t axes{0};
    std::size_t head_dim{0};
    std::vector<double> base_per_axis;
    std::vector<FreqSpectrum> spectra;

    std::size_t block_dim() const { return axes ? head_dim / axes : 0; }
};

RotaryConfig make_rotary_config(std::size_t axes, std::size_t head_dim,
                                std::vector<double> base_per_axis);
RotaryConfig make_rotary_config(std::size_t axes, std::size_t head_dim, double base = 10000.0);

// dim x dim block-diagonal matrix of 2x2 rotations with angles pos*thetas[i]
Matrix rotation_matrix(double pos, const FreqSpectrum& spec);

// Rotates adjacent pairs (v[2i], v[2i+1]) in place by angles pos*thetas[i];
// equals rotation_matrix(pos, spec) * v without materializing the matrix.
void rotate_pairs_in_place(std::span<double> v, double pos, const FreqSpectrum& spec);

std::vector<double> apply_rotary_1d(std::span<const double> v, double pos,
                                    const FreqSpectrum& spec);

// Axis k rotates the k-th contiguous block by coordinate k with spectrum k.
std::vector<double> apply_rotary_nd(std::span<const double> v, const GridPosition& pos,
                                    const RotaryConfig& cfg);
void apply_rotary_nd_in_place(std::span<double> v, const GridPosition& pos,
                              const RotaryConfig& cfg);

// Per-axis separable form of the rotated dot product: sum over axes of
// q_axis . R_axis(delta_axis) k_axis, with delta = pos_k - pos_q.
double separable_score(std::span<const double> q, std::span<const double> k,
                       const GridPosition& pos_q, const GridPosition& pos_k,
                       const RotaryConfig& cfg);

double dot(std::span<const double> a, std::span<const double> b);

// Positions bundled with their per-row cos/sin tables for one rotary config,
// so repeated row rotations (heads, q/k, forward/backward) share the trig.
// Layout: row t occupies head_dim doubles, plane i at (2i, 2i+1) = (cos, sin).
struct RotaryPositions {
    std::vector<GridPosition> positions;
    RotaryConfig cfg;
    std::vector<double> cos_sin;

    static std::shared_ptr<const RotaryPositions> make(std::vector<GridPosition> positions,
                                                       const RotaryConfig& cfg);

    // rotates one row in place; sign = -1.0 applies the inverse rotation
    void rotate_row(std::size_t t, double* row, double sign) const;
};

}  // namespace harope
