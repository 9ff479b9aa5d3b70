#include "harope/attention.hpp"

#include <cmath>

namespace harope {

std::string to_string(SchemeTag t) {
    switch (t) {
        case SchemeTag::APE_learned: return "ape_learned";
        case SchemeTag::APE_sinusoidal: return "ape_sinusoidal";
        case SchemeTag::RoPE_1D: return "rope_1d";
        case SchemeTag::RoPE_ND_axial: return "rope_nd_axial";
        case SchemeTag::HARoPE: return "harope";
    }
    return "?";
}

SchemeTag scheme_tag_from_string(const std::string& s) {
    if (s == "ape_learned") return SchemeTag::APE_learned;
    if (s == "ape_sinusoidal") return SchemeTag::APE_sinusoidal;
    if (s == "rope_1d") return SchemeTag::RoPE_1D;
    if (s == "rope_nd_axial") return SchemeTag::RoPE_ND_axial;
    if (s == "harope") return SchemeTag::HARoPE;
    throw ConfigError("unknown scheme tag '" + s + "'");
}

void PEScheme::cache_adapt() {
    adapt_cache.clear();
    if (tag != SchemeTag::HARoPE) return;
    adapt_cache.reserve(bank.params.size());
    for (const auto& p : bank.params) adapt_cache.push_back(build_adapt_matrix(p));
}

void TokenBatch::validate() const {
    if (features.rows() != n_tokens || features.cols() != model_dim) {
        throw ShapeError("token batch: features must be n_tokens x model_dim");
    }
    if (positions.size() != n_tokens) {
        throw ShapeError("token batch: one position per token");
    }
}

void MHAConfig::validate() const {
    const std::size_t d = model_dim();
    if (n_heads == 0 || head_dim == 0) throw ConfigError("mha: zero heads or head_dim");
    auto check = [&](const Matrix& w, const char* name) {
        if (w.rows() != d || w.cols() != d) {
            throw ShapeError(std::string("mha: ") + name + " must be model_dim x model_dim");
        }
    };
    check(w_q, "w_q");
    check(w_k, "w_k");
    check(w_v, "w_v");
    check(w_o, "w_o");
    if (scheme.uses_rotary()) {
        if (scheme.rotary.head_dim != head_dim) {
            throw ConfigError("mha: rotary config head_dim mismatch");
        }
        if (scheme.tag == SchemeTag::RoPE_1D && scheme.rotary.axes != 1) {
            throw ConfigError("mha: rope_1d needs a single-axis rotary config");
        }
    }
    if (scheme.tag == SchemeTag::HARoPE) {
        if (scheme.bank.heads != n_heads) throw ConfigError("mha: bank head count mismatch");
        scheme.bank.validate_bank();
        for (const auto& p : scheme.bank.params) {
            if (p.dim != head_dim) throw ConfigError("mha: bank params dim != head_dim");
        }
    }
}

std::vector<double> sinusoidal_encoding(const GridPosition& pos, std::size_t model_dim) {
    const std::size_t axes = pos.axes();
    if (axes == 0 || model_dim % (2 * axes) != 0) {
        throw ShapeError("sinusoidal encoding: model_dim not divisible by 2*axes");
    }
    const std::size_t block = model_dim / axes;
    std::vector<double> out(model_dim, 0.0);
    for (std::size_t a = 0; a < axes; ++a) {
        const FreqSpectrum spec = make_spectrum(block, 10000.0);
        for (std::size_t i = 0; i < block / 2; ++i) {
            const double angle = pos.coords[a] * spec.thetas[i];
            out[a * block + 2 * i] = std::sin(angle);
            out[a * block + 2 * i + 1] = std::cos(angle);
        }
    }
    return out;
}

std::size_t ape_table_index(const GridPosition& pos, std::size_t grid, std::size_t table_rows) {
    std::size_t idx = 0;
    for (double c : pos.coords) {
        const double r = std::nearbyint(c);
        if (std::abs(c - r) > 1e-9 || r < 0.0) {
            throw DomainError("learned APE requires nonnegative integer grid positions");
        }
        if (pos.coords.size() > 1 && static_cast<std::size_t>(r) >= grid) {
            throw DomainError("learned APE position outside the table grid");
        }
        idx = idx * grid + static_cast<std::size_t>(r);
    }
    if (idx >= table_rows) throw DomainError("learned APE position outside the table");
    return idx;
}

namespace {

Matrix col_block(const Matrix& m, std::size_t j0, std::size_t w) {
    Matrix out(m.rows(), w);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < w; ++j) out(i, j) = m(i, j0 + j);
    return out;
}

Matrix row_block(const Matrix& m, std::size_t i0, std::size_t h) {
    Matrix out(h, m.cols());
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i0 + i, j);
    return out;
}

// token features after the scheme's pre-projection additive step
Matrix positional_features(const TokenBatch& batch, const PEScheme& scheme) {
    Matrix x = batch.features;
    if (scheme.tag == SchemeTag::APE_learned) {
        for (std::size_t t = 0; t < batch.n_tokens; ++t) {
            const std::size_t idx =
                ape_table_index(batch.positions[t], scheme.ape_grid, scheme.ape_table.rows());
            for (std::size_t j = 0; j < x.cols(); ++j) x(t, j) += scheme.ape_table(idx, j);
        }
    } else if (scheme.tag == SchemeTag::APE_sinusoidal) {
        for (std::size_t t = 0; t < batch.n_tokens; ++t) {
            const auto pe = sinusoidal_encoding(batch.positions[t], batch.model_dim);
            for (std::size_t j = 0; j < x.cols(); ++j) x(t, j) += pe[j];
        }
    }
    return x;
}

// the scheme's q/k mapping for one head, in place on a row-per-token matrix
void map_head_rows(Matrix& rows, const std::vector<GridPosition>& positions,
                   const PEScheme& scheme, const Matrix* adapt) {
    if (!scheme.uses_rotary()) return;
    if (adapt) rows = matmul_nt(rows, *adapt);  // row form of A q
    for (std::size_t t = 0; t < rows.rows(); ++t) {
        apply_rotary_nd_in_place(std::span<double>(rows.row(t), rows.cols()), positions[t],
                                 scheme.rotary);
    }
}

void softmax_rows_in_place(Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double* row = m.row(i);
        double mx = row[0];
        for (std::size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            row[j] = std::exp(row[j] - mx);
            z += row[j];
        }
        for (std::size_t j = 0; j < m.cols(); ++j) row[j] /= z;
    }
}

const Matrix* head_adapt(const PEScheme& scheme, std::size_t head, Matrix& storage) {
    if (scheme.tag != SchemeTag::HARoPE) return nullptr;
    if (!scheme.adapt_cache.empty()) {
        return &scheme.adapt_cache[scheme.bank.shared ? 0 : head];
    }
    storage = build_adapt_matrix(scheme.bank.head(head));
    return &storage;
}

}  // namespace

TokenBatch mha_forward(const TokenBatch& batch, const MHAConfig& cfg) {
    batch.validate();
    cfg.validate();
    if (batch.model_dim != cfg.model_dim()) {
        throw ShapeError("mha_forward: batch model_dim != config model_dim");
    }
    const std::size_t d = cfg.head_dim;
    const Matrix x = positional_features(batch, cfg.scheme);
    const Matrix q_all = matmul(x, cfg.w_q);
    const Matrix k_all = matmul(x, cfg.w_k);
    const Matrix v_all = matmul(x, cfg.w_v);

    Matrix out(batch.n_tokens, batch.model_dim);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        Matrix q = col_block(q_all, h * d, d);
        Matrix k = col_block(k_all, h * d, d);
        Matrix a_storage;
        const Matrix* adapt = head_adapt(cfg.scheme, h, a_storage);
        map_head_rows(q, batch.positions, cfg.scheme, adapt);
        map_head_rows(k, batch.positions, cfg.scheme, adapt);

        Matrix p = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
        softmax_rows_in_place(p);
        const Matrix head_out = matmul(p, col_block(v_all, h * d, d));
        add_in_place(out, matmul(head_out, row_block(cfg.w_o, h * d, d)));
    }

    TokenBatch result;
    result.n_tokens = batch.n_tokens;
    result.model_dim = batch.model_dim;
    result.features = std::move(out);
    result.positions = batch.positions;
    return result;
}

Matrix attention_scores(const TokenBatch& batch, const MHAConfig& cfg, std::size_t head) {
    batch.validate();
    cfg.validate();
    if (head >= cfg.n_heads) {
        throw std::out_of_range("attention_scores: head " + std::to_string(head) +
                                " out of range (" + std::to_string(cfg.n_heads) + " heads)");
    }
    if (batch.model_dim != cfg.model_dim()) {
        throw ShapeError("attention_scores: batch model_dim != config model_dim");
    }
    const std::size_t d = cfg.head_dim;
    const Matrix x = positional_features(batch, cfg.scheme);
    Matrix q = col_block(matmul(x, cfg.w_q), head * d, d);
    Matrix k = col_block(matmul(x, cfg.w_k), head * d, d);
    Matrix a_storage;
    const Matrix* adapt = head_adapt(cfg.scheme, head, a_storage);
    map_head_rows(q, batch.positions, cfg.scheme, adapt);
    map_head_rows(k, batch.positions, cfg.scheme, adapt);
    return scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
}

MHAShape MHAShape::of(const MHAConfig& cfg) {
    MHAShape s;
    s.n_heads = cfg.n_heads;
    s.head_dim = cfg.head_dim;
    s.tag = cfg.scheme.tag;
    s.rotary = cfg.scheme.rotary;
    s.bank_shared = cfg.scheme.bank.shared;
    if (cfg.scheme.tag == SchemeTag::HARoPE) {
        for (const auto& p : cfg.scheme.bank.params) s.bank.push_back({p.variant, p.dim});
    }
    return s;
}

MHAParamNodes mha_leaves(Tape& tape, const MHAConfig& cfg) {
    MHAParamNodes n;
    n.w_q = tape.leaf(cfg.w_q);
    n.w_k = tape.leaf(cfg.w_k);
    n.w_v = tape.leaf(cfg.w_v);
    n.w_o = tape.leaf(cfg.w_o);
    if (cfg.scheme.tag == SchemeTag::HARoPE) {
        for (const auto& p : cfg.scheme.bank.params) n.bank.push_back(adapt_leaves(tape, p));
    }
    return n;
}

MHASharedNodes mha_shared_nodes(Tape& tape, const MHAShape& shape, const MHAParamNodes& params) {
    MHASharedNodes shared;
    if (shape.tag == SchemeTag::HARoPE) {
        // one A node per bank record; a shared bank reuses the same node for
        // all heads, so the gradients accumulate across heads on their own
        for (std::size_t i = 0; i < params.bank.size(); ++i) {
            shared.adapt.push_back(build_adapt_matrix_taped(tape, params.bank[i], shape.bank[i]));
        }
    }
    for (std::size_t h = 0; h < shape.n_heads; ++h) {
        shared.wo_rows.push_back(
            tape.slice_rows(params.w_o, h * shape.head_dim, shape.head_dim));
    }
    return shared;
}

NodeId mha_forward_taped(Tape& tape, NodeId features,
                         std::shared_ptr<const RotaryPositions> rotary_positions,
                         const MHAShape& shape, const MHAParamNodes& params,
                         const MHASharedNodes* shared) {
    const std::size_t d = shape.head_dim;
    const bool harope = shape.tag == SchemeTag::HARoPE;
    const bool rotary = harope || shape.tag == SchemeTag::RoPE_1D ||
                        shape.tag == SchemeTag::RoPE_ND_axial;
    if (rotary && !rotary_positions) {
        throw ConfigError("mha_forward_taped: rotary scheme needs a rotation table");
    }

    MHASharedNodes local;
    if (!shared) {
        local = mha_shared_nodes(tape, shape, params);
        shared = &local;
    }

    const NodeId q_all = tape.matmul(features, params.w_q);
    const NodeId k_all = tape.matmul(features, params.w_k);
    const NodeId v_all = tape.matmul(features, params.w_v);

    NodeId out = 0;
    for (std::size_t h = 0; h < shape.n_heads; ++h) {
        NodeId q = tape.slice_cols(q_all, h * d, d);
        NodeId k = tape.slice_cols(k_all, h * d, d);
        if (harope) {
            const NodeId a = shared->adapt[shape.bank_shared ? 0 : h];
            q = tape.matmul_nt(q, a);
            k = tape.matmul_nt(k, a);
        }
        if (rotary) {
            q = tape.rotate_rows(q, rotary_positions);
            k = tape.rotate_rows(k, rotary_positions);
        }
        const NodeId scores =
            tape.scale(tape.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
        const NodeId probs = tape.softmax_rows(scores);
        const NodeId head_out = tape.matmul(probs, tape.slice_cols(v_all, h * d, d));
        const NodeId projected = tape.matmul(head_out, shared->wo_rows[h]);
        out = h == 0 ? projected : tape.add(out, projected);
    }
    return out;
}

}  // namespace harope
