#include "harope/rotary.hpp"

#include <cmath>

namespace harope {

FreqSpectrum make_spectrum(std::size_t dim, double base) {
    if (dim < 2 || dim % 2 != 0) {
        throw ShapeError("make_spectrum: dim must be even and >= 2, got " + std::to_string(dim));
    }
    if (!(base > 0.0)) throw DomainError("make_spectrum: base must be positive");
    FreqSpectrum s;
    s.dim = dim;
    s.base = base;
    s.thetas.resize(dim / 2);
    for (std::size_t i = 0; i < dim / 2; ++i) {
        s.thetas[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    }
    return s;
}

GridPosition operator+(const GridPosition& a, const GridPosition& b) {
    if (a.axes() != b.axes()) throw ShapeError("position add: axis count mismatch");
    GridPosition r = a;
    for (std::size_t i = 0; i < r.coords.size(); ++i) r.coords[i] += b.coords[i];
    return r;
}

GridPosition operator-(const GridPosition& a, const GridPosition& b) {
    if (a.axes() != b.axes()) throw ShapeError("position sub: axis count mismatch");
    GridPosition r = a;
    for (std::size_t i = 0; i < r.coords.size(); ++i) r.coords[i] -= b.coords[i];
    return r;
}

RotaryConfig make_rotary_config(std::size_t axes, std::size_t head_dim,
                                std::vector<double> base_per_axis) {
    if (axes == 0) throw DomainError("rotary config: axes must be >= 1");
    if (head_dim == 0 || head_dim % (2 * axes) != 0) {
        throw ShapeError("rotary config: head_dim " + std::to_string(head_dim) +
                         " not divisible by 2*axes = " + std::to_string(2 * axes));
    }
    if (base_per_axis.size() != axes) throw ShapeError("rotary config: need one base per axis");
    RotaryConfig cfg;
    cfg.axes = axes;
    cfg.head_dim = head_dim;
    cfg.base_per_axis = std::move(base_per_axis);
    cfg.spectra.reserve(axes);
    for (std::size_t a = 0; a < axes; ++a) {
        cfg.spectra.push_back(make_spectrum(head_dim / axes, cfg.base_per_axis[a]));
    }
    return cfg;
}

RotaryConfig make_rotary_config(std::size_t axes, std::size_t head_dim, double base) {
    return make_rotary_config(axes, head_dim, std::vector<double>(axes, base));
}

Matrix rotation_matrix(double pos, const FreqSpectrum& spec) {
    Matrix r(spec.dim, spec.dim);
    for (std::size_t i = 0; i < spec.dim / 2; ++i) {
        const double a = pos * spec.thetas[i];
        const double c = std::cos(a), s = std::sin(a);
        r(2 * i, 2 * i) = c;
        r(2 * i, 2 * i + 1) = -s;
        r(2 * i + 1, 2 * i) = s;
        r(2 * i + 1, 2 * i + 1) = c;
    }
    return r;
}

void rotate_pairs_in_place(std::span<double> v, double pos, const FreqSpectrum& spec) {
    if (v.size() != spec.dim) {
        throw ShapeError("rotary: vector length " + std::to_string(v.size()) +
                         " != spectrum dim " + std::to_string(spec.dim));
    }
    for (std::size_t i = 0; i < spec.dim / 2; ++i) {
        const double a = pos * spec.thetas[i];
        const double c = std::cos(a), s = std::sin(a);
        const double x = v[2 * i], y = v[2 * i + 1];
        v[2 * i] = c * x - s * y;
        v[2 * i + 1] = s * x + c * y;
    }
}

std::vector<double> apply_rotary_1d(std::span<const double> v, double pos,
                                    const FreqSpectrum& spec) {
    std::vector<double> out(v.begin(), v.end());
    rotate_pairs_in_place(out, pos, spec);
    return out;
}

void apply_rotary_nd_in_place(std::span<double> v, const GridPosition& pos,
                              const RotaryConfig& cfg) {
    if (v.size() != cfg.head_dim) {
        throw ShapeError("rotary nd: vector length " + std::to_string(v.size()) +
                         " != head_dim " + std::to_string(cfg.head_dim));
    }
    if (pos.axes() != cfg.axes) {
        throw ShapeError("rotary nd: position has " + std::to_string(pos.axes()) +
                         " axes, config expects " + std::to_string(cfg.axes));
    }
    const std::size_t block = cfg.block_dim();
    for (std::size_t a = 0; a < cfg.axes; ++a) {
        rotate_pairs_in_place(v.subspan(a * block, block), pos.coords[a], cfg.spectra[a]);
    }
}

std::vector<double> apply_rotary_nd(std::span<const double> v, const GridPosition& pos,
                                    const RotaryConfig& cfg) {
    std::vector<double> out(v.begin(), v.end());
    apply_rotary_nd_in_place(out, pos, cfg);
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::shared_ptr<const RotaryPositions> RotaryPositions::make(
    std::vector<GridPosition> positions, const RotaryConfig& cfg) {
    auto rp = std::make_shared<RotaryPositions>();
    rp->cfg = cfg;
    const std::size_t block = cfg.block_dim();
    rp->cos_sin.resize(positions.size() * cfg.head_dim);
    for (std::size_t t = 0; t < positions.size(); ++t) {
        if (positions[t].axes() != cfg.axes) {
            throw ShapeError("rotary positions: axis count mismatch");
        }
        double* row = rp->cos_sin.data() + t * cfg.head_dim;
        for (std::size_t a = 0; a < cfg.axes; ++a) {
            const FreqSpectrum& spec = cfg.spectra[a];
            for (std::size_t i = 0; i < block / 2; ++i) {
                const double angle = positions[t].coords[a] * spec.thetas[i];
                row[a * block + 2 * i] = std::cos(angle);
                row[a * block + 2 * i + 1] = std::sin(angle);
            }
        }
    }
    rp->positions = std::move(positions);
    return rp;
}

void RotaryPositions::rotate_row(std::size_t t, double* row, double sign) const {
    const double* cs = cos_sin.data() + t * cfg.head_dim;
    for (std::size_t i = 0; i < cfg.head_dim / 2; ++i) {
        const double c = cs[2 * i];
        const double s = sign * cs[2 * i + 1];
        const double x = row[2 * i], y = row[2 * i + 1];
        row[2 * i] = c * x - s * y;
        row[2 * i + 1] = s * x + c * y;
    }
}

double separable_score(std::span<const double> q, std::span<const double> k,
                       const GridPosition& pos_q, const GridPosition& pos_k,
                       const RotaryConfig& cfg) {
    if (q.size() != cfg.head_dim || k.size() != cfg.head_dim) {
        throw ShapeError("separable_score: vector length != head_dim");
    }
    if (pos_q.axes() != cfg.axes || pos_k.axes() != cfg.axes) {
        throw ShapeError("separable_score: position axes mismatch");
    }
    const std::size_t block = cfg.block_dim();
    double score = 0.0;
    for (std::size_t a = 0; a < cfg.axes; ++a) {
        const double delta = pos_k.coords[a] - pos_q.coords[a];
        std::vector<double> rk(k.begin() + a * block, k.begin() + (a + 1) * block);
        rotate_pairs_in_place(rk, delta, cfg.spectra[a]);
        score += dot(q.subspan(a * block, block), rk);
    }
    return score;
}

}  // namespace harope
