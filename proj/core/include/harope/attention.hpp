#pragma once

#include <memory>
#include <string>
#include <vector>

#include "harope/adapt.hpp"
#include "harope/autodiff.hpp"
#include "harope/matrix.hpp"
#include "harope/rotary.hpp"

namespace harope {

enum class SchemeTag { APE_learned, APE_sinusoidal, RoPE_1D, RoPE_ND_axial, HARoPE };

std::string to_string(SchemeTag t);
SchemeTag scheme_tag_from_string(const std::string& s);

// Positional scheme plugged into attention. The rotary config drives the
// RoPE/HARoPE tags; the bank only matters for HARoPE; the table only for
// learned APE (rows indexed by flattened integer grid position).
struct PEScheme {
    SchemeTag tag{SchemeTag::RoPE_ND_axial};
    RotaryConfig rotary;
    AdaptBank bank;
    Matrix ape_table;
    std::size_t ape_grid{0};  // per-axis extent backing the table

    // Optional inference cache of built A matrices (one per bank record).
    // Parameters change every training step, so training never populates
    // this; call cache_adapt() on a frozen scheme to skip the rebuilds.
    std::vector<Matrix> adapt_cache;
    void cache_adapt();

    bool uses_rotary() const {
        return tag == SchemeTag::RoPE_1D || tag == SchemeTag::RoPE_ND_axial ||
               tag == SchemeTag::HARoPE;
    }
};

struct TokenBatch {
    std::size_t n_tokens{0};
    std::size_t model_dim{0};
    Matrix features;  // n_tokens x model_dim
    std::vector<GridPosition> positions;

    void validate() const;
};

struct MHAConfig {
    std::size_t n_heads{0};
    std::size_t head_dim{0};
    PEScheme scheme;
    Matrix w_q, w_k, w_v, w_o;  // model_dim x model_dim

    std::size_t model_dim() const { return n_heads * head_dim; }
    void validate() const;
};

// Scaled dot-product attention over all tokens (no causal mask). Positional
// mapping touches queries and keys only; for HARoPE the adaptation runs
// before the rotation.
TokenBatch mha_forward(const TokenBatch& batch, const MHAConfig& cfg);

// Pre-softmax score matrix (already scaled by 1/sqrt(d)) for one head.
Matrix attention_scores(const TokenBatch& batch, const MHAConfig& cfg, std::size_t head);

// Sinusoidal table row for one position (axis-blocked sin/cos, base 10000).
std::vector<double> sinusoidal_encoding(const GridPosition& pos, std::size_t model_dim);

// Flattened table row index for a learned-APE position; the coordinates must
// be integral and inside the grid.
std::size_t ape_table_index(const GridPosition& pos, std::size_t grid, std::size_t table_rows);

// ---- taped forward (training path) --------------------------------------

// Shapes and scheme metadata without any parameter values.
struct MHAShape {
    std::size_t n_heads{0};
    std::size_t head_dim{0};
    SchemeTag tag{SchemeTag::RoPE_ND_axial};
    RotaryConfig rotary;
    bool bank_shared{false};
    std::vector<AdaptShape> bank;  // HARoPE: 1 if shared else n_heads

    static MHAShape of(const MHAConfig& cfg);
};

struct MHAParamNodes {
    NodeId w_q{0}, w_k{0}, w_v{0}, w_o{0};
    std::vector<AdaptParamNodes> bank;
};

// Registers projection weights and adaptation parameters as leaves.
MHAParamNodes mha_leaves(Tape& tape, const MHAConfig& cfg);

// Batch-invariant nodes (built adaptation matrices, W_o row blocks) that a
// training step records once and reuses across every sample's subgraph.
struct MHASharedNodes {
    std::vector<NodeId> adapt;    // one built A per bank record
    std::vector<NodeId> wo_rows;  // one W_o row block per head
};
MHASharedNodes mha_shared_nodes(Tape& tape, const MHAShape& shape, const MHAParamNodes& params);

// Same computation as mha_forward's attention stack, recorded on the tape.
// APE feature adds are the caller's job (gather/constant + add); this covers
// the rotary-family q/k mapping, scores, softmax and output projection.
// Passing `shared` avoids re-recording the per-step invariants per sample.
// `rotary_positions` may be null for APE schemes.
NodeId mha_forward_taped(Tape& tape, NodeId features,
                         std::shared_ptr<const RotaryPositions> rotary_positions,
                         const MHAShape& shape, const MHAParamNodes& params,
                         const MHASharedNodes* shared = nullptr);

}  // namespace harope
