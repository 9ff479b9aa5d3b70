#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "harope/checkpoint.hpp"
#include "harope/config.hpp"
#include "harope/tasks.hpp"

namespace harope {

struct RunOutcome {
    SchemeSpec scheme;
    std::uint64_t seed{0};
    TrainRun run;
    Checkpoint checkpoint;
    double final_eval_acc{0.0};
    std::string error;  // nonempty if the run failed
};

struct SchemeSummary {
    SchemeSpec scheme;
    double mean_acc{0.0};
    double sd_acc{0.0};
    std::size_t n_runs{0};
};

// Trains every scheme x seed combination. Task data depends only on the seed
// and the task config, so schemes sharing a seed see identical data and
// initial weights (paired comparison). Runs are independent; `workers` of
// them execute concurrently.
std::vector<RunOutcome> run_grid(const RunConfig& cfg, std::size_t workers = 0);

std::vector<SchemeSummary> summarize(const std::vector<RunOutcome>& outcomes);

// Writes per-run metrics.csv/checkpoint.txt/task dumps plus a summary.csv
// under dir; returns the summary.
std::vector<SchemeSummary> write_grid_outputs(const std::vector<RunOutcome>& outcomes,
                                              const std::filesystem::path& dir,
                                              const RunConfig& cfg);

std::string summary_table(const std::vector<SchemeSummary>& summary);

// deterministic eval-task seed for a run seed
std::uint64_t eval_seed(std::uint64_t train_seed);

// Per-head built-A export: block{b}_head{h}_A.csv / .pgm plus one
// block{b}_head_distances.csv per block (pairwise Frobenius distances).
struct ExportResult {
    std::size_t blocks{0};
    double max_pairwise_distance{0.0};
    std::vector<std::filesystem::path> files;
};
ExportResult export_checkpoint_matrices(const Checkpoint& ckpt,
                                        const std::filesystem::path& out_dir);

// ---- analytic cost model ----------------------------------------------------
// Flop counts for one attention layer forward at sequence length n with H
// heads of dimension d (model width H*d). A multiply-add counts as 2 flops;
// `harope_extra_macs` is the multiply-accumulate count (2 flops each).

struct FlopModel {
    std::size_t n_heads{0};
    std::size_t n_tokens{0};
    std::size_t head_dim{0};

    // q/k/v/output projections: 4 matmuls of (n x D)*(D x D), D = H*d
    std::uint64_t projection_flops() const;
    // scores q k^T and the weighted value sum, per head
    std::uint64_t attention_flops() const;
    std::uint64_t baseline_flops() const { return projection_flops() + attention_flops(); }

    // one d x d matvec for each of q and k per token per head
    std::uint64_t harope_extra_macs() const;  // = 2*H*n*d^2
    std::uint64_t harope_extra_flops() const { return 2 * harope_extra_macs(); }

    double overhead_ratio() const {
        return static_cast<double>(harope_extra_flops()) /
               static_cast<double>(baseline_flops());
    }
};

struct BenchResult {
    FlopModel model;
    double rope_ms_per_forward{0.0};
    double harope_ms_per_forward{0.0};
    std::uint64_t reps{0};
    std::string report() const;
};

// Times mha_forward with axial RoPE vs HARoPE (identity-initialized SVD, the
// built matrices cached as in inference) at matched shapes.
BenchResult run_bench(std::size_t n_heads, std::size_t n_tokens, std::size_t head_dim,
                      std::size_t reps, std::uint64_t seed = 7);

}  // namespace harope
