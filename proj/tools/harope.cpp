// harope CLI: property verification, toy-task training grids, checkpoint
// matrix export, and the forward-cost audit.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "harope/checkpoint.hpp"
#include "harope/harness.hpp"
#include "harope/io.hpp"
#include "harope/verify.hpp"

namespace fs = std::filesystem;
using namespace harope;

namespace {

int cmd_verify(const std::string& suite, bool inject_expm_sign_flip) {
    if (!is_verify_suite(suite)) {
        std::cerr << "unknown suite '" << suite << "'\n"
                  << "usage: harope verify <suite>\n"
                  << "  suites: all";
        for (const auto& s : verify_suite_names()) std::cerr << ", " << s;
        std::cerr << "\n";
        return 2;
    }
    VerifyOptions opts;
    if (inject_expm_sign_flip) {
        opts.expm_fn = [](const Matrix& m) {
            Matrix broken = m;
            if (broken.size() >= 2) broken(0, 1) = -broken(0, 1);
            return expm(broken);
        };
    }
    const auto results = run_verify_suite(suite, opts);
    std::cout << format_results(results);
    if (!all_passed(results)) {
        for (const auto& r : results) {
            if (!r.passed) {
                std::cerr << "FAILED property: " << r.suite << "/" << r.name
                          << " (max_err=" << r.max_error << ", tol=" << r.tolerance << ")\n";
            }
        }
        return 1;
    }
    return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              std::size_t workers) {
    RunConfig cfg;
    if (!config_path.empty()) cfg = RunConfig::parse(read_text_file(config_path));
    const auto leftover = cfg.apply_overrides(overrides);
    if (!leftover.empty()) throw ConfigError("unrecognized argument '" + leftover.front() + "'");
    cfg.validate();

    const fs::path out_dir = resolve_out_dir(cfg.out_dir);
    const auto outcomes = run_grid(cfg, workers);
    const auto summary = write_grid_outputs(outcomes, out_dir, cfg);

    std::cout << "wrote " << outcomes.size() << " runs under " << out_dir.string() << "\n\n";
    std::cout << summary_table(summary);

    bool failed = false;
    for (const auto& out : outcomes) {
        if (!out.error.empty()) {
            std::cerr << "run " << out.scheme.text() << "/seed" << out.seed
                      << " failed: " << out.error << "\n";
            failed = true;
        }
    }
    return failed ? 1 : 0;
}

int cmd_export_matrices(const std::string& checkpoint_path, const std::string& out_dir_arg) {
    const Checkpoint ckpt = checkpoint_from_text(read_text_file(checkpoint_path));
    const fs::path out_dir = resolve_out_dir(out_dir_arg);
    const ExportResult result = export_checkpoint_matrices(ckpt, out_dir);
    std::cout << "exported " << result.blocks << " block(s) to " << out_dir.string()
              << ", max pairwise head distance " << format_double(result.max_pairwise_distance)
              << "\n";
    return 0;
}

int cmd_bench(std::size_t heads, std::size_t tokens, std::size_t head_dim, std::size_t reps) {
    const BenchResult result = run_bench(heads, tokens, head_dim, reps);
    std::cout << result.report();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"positional-encoding numerics: RoPE, axial ND RoPE and HARoPE"};
    app.require_subcommand(1);

    // verify ----------------------------------------------------------------
    auto* verify = app.add_subcommand("verify", "run executable property suites");
    std::string suite;
    bool inject = false;
    verify->add_option("suite", suite, "suite name or 'all'")->required();
    verify->add_flag("--inject-expm-sign-flip", inject,
                     "fault-injection fixture: corrupt expm inputs")
        ->group("");  // hidden; test fixture only

    // train -------------------------------------------------------------------
    auto* train = app.add_subcommand("train", "train a scheme x seed grid on a toy task");
    std::string config_path;
    std::size_t workers = 0;
    train->add_option("-c,--config", config_path, "config file (ini-style sections)");
    train->add_option("--workers", workers, "parallel runs (default: hardware threads)");
    train->allow_extras();  // --section.key=value overrides

    // export-matrices ---------------------------------------------------------
    auto* exportm = app.add_subcommand("export-matrices",
                                       "emit per-head A matrices as CSV + PGM heatmaps");
    std::string ckpt_path, export_dir;
    exportm->add_option("checkpoint", ckpt_path, "checkpoint file")->required();
    exportm->add_option("outdir", export_dir, "output directory")->required();

    // bench ---------------------------------------------------------------------
    auto* bench = app.add_subcommand("bench", "wall-time + analytic flops, RoPE vs HARoPE");
    std::size_t b_heads = 8, b_tokens = 256, b_head_dim = 64, b_reps = 20;
    bench->add_option("--heads", b_heads, "attention heads");
    bench->add_option("--tokens", b_tokens, "sequence length");
    bench->add_option("--head-dim", b_head_dim, "per-head dimension");
    bench->add_option("--reps", b_reps, "timing repetitions");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*verify) return cmd_verify(suite, inject);
        if (*train) return cmd_train(config_path, train->remaining(), workers);
        if (*exportm) return cmd_export_matrices(ckpt_path, export_dir);
        if (*bench) return cmd_bench(b_heads, b_tokens, b_head_dim, b_reps);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const TrainingError& e) {
        std::cerr << "training error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
