#include "harope/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include "harope/io.hpp"
#include "harope/rng.hpp"

namespace harope {

std::uint64_t eval_seed(std::uint64_t train_seed) {
    return Rng(train_seed).fork(0xE7A1ull).seed();
}

std::vector<RunOutcome> run_grid(const RunConfig& cfg, std::size_t workers) {
    cfg.validate();
    std::vector<SchemeSpec> schemes = cfg.schemes;
    if (schemes.empty()) schemes.push_back(cfg.scheme);

    struct Job {
        SchemeSpec scheme;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const auto& s : schemes) {
        for (std::uint64_t seed : cfg.seeds) jobs.push_back({s, seed});
    }
    std::vector<RunOutcome> outcomes(jobs.size());

    if (workers == 0) {
        workers = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    }
    workers = std::min(workers, jobs.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t j = next.fetch_add(1);
            if (j >= jobs.size()) return;
            RunOutcome& out = outcomes[j];
            out.scheme = jobs[j].scheme;
            out.seed = jobs[j].seed;
            try {
                const TaskInstance train_task =
                    make_task(cfg.task, jobs[j].seed, cfg.grid, cfg.n_train);
                const TaskInstance eval_task =
                    make_task(cfg.task, eval_seed(jobs[j].seed), cfg.grid, cfg.n_eval);
                TrainRun run = cfg.train_run(jobs[j].scheme, train_task.n_classes, jobs[j].seed);
                TrainResult result = train(train_task, eval_task, run);
                out.run = std::move(result.run);
                out.final_eval_acc = evaluate(eval_task, result.model);
                out.checkpoint.banks = result.model.adapt_banks();
            } catch (const std::exception& e) {
                out.error = e.what();
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return outcomes;
}

std::vector<SchemeSummary> summarize(const std::vector<RunOutcome>& outcomes) {
    std::vector<SchemeSummary> summary;
    for (const auto& out : outcomes) {
        if (!out.error.empty()) continue;
        SchemeSummary* entry = nullptr;
        for (auto& s : summary) {
            if (s.scheme == out.scheme) entry = &s;
        }
        if (!entry) {
            summary.push_back({out.scheme, 0.0, 0.0, 0});
            entry = &summary.back();
        }
        entry->mean_acc += out.final_eval_acc;
        entry->sd_acc += out.final_eval_acc * out.final_eval_acc;
        entry->n_runs += 1;
    }
    for (auto& s : summary) {
        const double n = static_cast<double>(s.n_runs);
        s.mean_acc /= n;
        const double var = std::max(0.0, s.sd_acc / n - s.mean_acc * s.mean_acc);
        s.sd_acc = std::sqrt(var);
    }
    return summary;
}

std::vector<SchemeSummary> write_grid_outputs(const std::vector<RunOutcome>& outcomes,
                                              const std::filesystem::path& dir,
                                              const RunConfig& cfg) {
    std::filesystem::create_directories(dir);
    write_text_file(dir / "config.ini", cfg.serialize());
    for (const auto& out : outcomes) {
        const std::filesystem::path run_dir =
            dir / out.scheme.text() / ("seed" + std::to_string(out.seed));
        std::filesystem::create_directories(run_dir);
        if (!out.error.empty()) {
            write_text_file(run_dir / "error.txt", out.error + "\n");
            continue;
        }
        write_text_file(run_dir / "metrics.csv", out.run.metrics_csv());
        write_text_file(run_dir / "checkpoint.txt", checkpoint_to_text(out.checkpoint));
    }
    // dataset dumps, once per seed (identical across schemes by construction)
    for (std::uint64_t seed : cfg.seeds) {
        const TaskInstance t = make_task(cfg.task, seed, cfg.grid, cfg.n_train);
        write_text_file(dir / ("task_seed" + std::to_string(seed) + ".txt"), t.dump());
    }

    const auto summary = summarize(outcomes);
    std::string csv = "scheme,mean_eval_acc,sd_eval_acc,n_runs\n";
    for (const auto& s : summary) {
        csv += s.scheme.text() + ',' + format_double(s.mean_acc) + ',' +
               format_double(s.sd_acc) + ',' + std::to_string(s.n_runs) + '\n';
    }
    write_text_file(dir / "summary.csv", csv);
    return summary;
}

std::string summary_table(const std::vector<SchemeSummary>& summary) {
    std::string out = "scheme                         mean_eval_acc   sd        runs\n";
    for (const auto& s : summary) {
        std::string name = s.scheme.text();
        name.resize(30, ' ');
        char buf[80];
        std::snprintf(buf, sizeof(buf), "%s %.4f          %.4f    %zu\n", name.c_str(),
                      s.mean_acc, s.sd_acc, s.n_runs);
        out += buf;
    }
    return out;
}

ExportResult export_checkpoint_matrices(const Checkpoint& ckpt,
                                         const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    ExportResult result;
    result.blocks = ckpt.banks.size();
    for (std::size_t b = 0; b < ckpt.banks.size(); ++b) {
        const AdaptBank& bank = ckpt.banks[b];
        bank.validate_bank();
        std::vector<Matrix> built;
        built.reserve(bank.heads);
        for (std::size_t h = 0; h < bank.heads; ++h) {
            built.push_back(build_adapt_matrix(bank.head(h)));
        }
        const std::string prefix = "block" + std::to_string(b);
        for (std::size_t h = 0; h < bank.heads; ++h) {
            const std::string stem = prefix + "_head" + std::to_string(h) + "_A";
            const auto csv_path = out_dir / (stem + ".csv");
            const auto pgm_path = out_dir / (stem + ".pgm");
            write_text_file(csv_path, matrix_to_csv(built[h]));
            write_text_file(pgm_path, matrix_to_pgm(built[h]));
            result.files.push_back(csv_path);
            result.files.push_back(pgm_path);
        }
        Matrix distances(bank.heads, bank.heads);
        for (std::size_t i = 0; i < bank.heads; ++i) {
            for (std::size_t j = 0; j < bank.heads; ++j) {
                distances(i, j) = frobenius_distance(built[i], built[j]);
                result.max_pairwise_distance =
                    std::max(result.max_pairwise_distance, distances(i, j));
            }
        }
        const auto dist_path = out_dir / (prefix + "_head_distances.csv");
        write_text_file(dist_path, matrix_to_csv(distances));
        result.files.push_back(dist_path);
    }
    return result;
}

// ---- analytic cost model ----------------------------------------------------

std::uint64_t FlopModel::projection_flops() const {
    const std::uint64_t d_model = n_heads * head_dim;
    return 2ull * 4ull * n_tokens * d_model * d_model;
}

std::uint64_t FlopModel::attention_flops() const {
    // scores: H * n * n * d MACs; attention-weighted values: the same
    return 2ull * 2ull * n_heads * n_tokens * n_tokens * head_dim;
}

std::uint64_t FlopModel::harope_extra_macs() const {
    return 2ull * n_heads * n_tokens * head_dim * head_dim;
}

std::string BenchResult::report() const {
    char buf[1024];
    std::snprintf(
        buf, sizeof(buf),
        "# mha_forward cost audit (flop model: one multiply-add = 2 flops)\n"
        "shape: heads=%zu tokens=%zu head_dim=%zu (model_dim=%zu), reps=%llu\n"
        "projection_flops        %llu\n"
        "attention_flops         %llu\n"
        "baseline_flops          %llu\n"
        "harope_extra_macs       %llu   # 2*H*n*d^2: one dxd matvec for q and k per token/head\n"
        "harope_extra_flops      %llu\n"
        "overhead_ratio          %.6f\n"
        "rope_ms_per_forward     %.4f\n"
        "harope_ms_per_forward   %.4f\n"
        "measured_overhead       %.4f\n",
        model.n_heads, model.n_tokens, model.head_dim, model.n_heads * model.head_dim,
        static_cast<unsigned long long>(reps),
        static_cast<unsigned long long>(model.projection_flops()),
        static_cast<unsigned long long>(model.attention_flops()),
        static_cast<unsigned long long>(model.baseline_flops()),
        static_cast<unsigned long long>(model.harope_extra_macs()),
        static_cast<unsigned long long>(model.harope_extra_flops()), model.overhead_ratio(),
        rope_ms_per_forward, harope_ms_per_forward,
        rope_ms_per_forward > 0.0 ? harope_ms_per_forward / rope_ms_per_forward - 1.0 : 0.0);
    return buf;
}

BenchResult run_bench(std::size_t n_heads, std::size_t n_tokens, std::size_t head_dim,
                      std::size_t reps, std::uint64_t seed) {
    const std::size_t d_model = n_heads * head_dim;
    Rng rng(seed);
    TokenBatch batch;
    batch.n_tokens = n_tokens;
    batch.model_dim = d_model;
    batch.features = Matrix(n_tokens, d_model);
    for (double& v : batch.features.values()) v = rng.normal();
    const std::size_t side = static_cast<std::size_t>(std::ceil(std::sqrt(n_tokens)));
    batch.positions.reserve(n_tokens);
    for (std::size_t t = 0; t < n_tokens; ++t) {
        batch.positions.emplace_back(static_cast<double>(t / side),
                                     static_cast<double>(t % side));
    }

    auto make_cfg = [&](SchemeTag tag) {
        MHAConfig cfg;
        cfg.n_heads = n_heads;
        cfg.head_dim = head_dim;
        cfg.scheme.tag = tag;
        cfg.scheme.rotary = make_rotary_config(2, head_dim, 10000.0);
        if (tag == SchemeTag::HARoPE) {
            cfg.scheme.bank = AdaptBank::identity(n_heads, head_dim, AdaptVariant::SVD, false);
            cfg.scheme.cache_adapt();
        }
        Rng wr(seed ^ 0x5EED);
        auto draw = [&]() {
            Matrix m(d_model, d_model);
            for (double& v : m.values()) v = wr.normal() / std::sqrt(static_cast<double>(d_model));
            return m;
        };
        cfg.w_q = draw();
        cfg.w_k = draw();
        cfg.w_v = draw();
        cfg.w_o = draw();
        return cfg;
    };

    const MHAConfig rope_cfg = make_cfg(SchemeTag::RoPE_ND_axial);
    const MHAConfig harope_cfg = make_cfg(SchemeTag::HARoPE);

    auto time_forward = [&](const MHAConfig& cfg) {
        volatile double sink = 0.0;
        mha_forward(batch, cfg);  // warm up
        const auto start = std::chrono::steady_clock::now();
        for (std::size_t r = 0; r < reps; ++r) {
            const TokenBatch out = mha_forward(batch, cfg);
            sink = sink + out.features(0, 0);
        }
        const auto stop = std::chrono::steady_clock::now();
        (void)sink;
        return std::chrono::duration<double, std::milli>(stop - start).count() /
               static_cast<double>(reps);
    };

    BenchResult result;
    result.model = FlopModel{n_heads, n_tokens, head_dim};
    result.reps = reps;
    result.rope_ms_per_forward = time_forward(rope_cfg);
    result.harope_ms_per_forward = time_forward(harope_cfg);
    return result;
}

}  // namespace harope
