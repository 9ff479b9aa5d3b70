// End-to-end CLI tests; argv[1] is the harope binary path.
#define DOCTEST_CONFIG_IMPLEMENT
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "harope/adapt.hpp"
#include "harope/checkpoint.hpp"
#include "harope/config.hpp"
#include "harope/io.hpp"

namespace fs = std::filesystem;

namespace {

std::string g_binary;
fs::path g_workdir;

struct RunResult {
    int exit_code;
    std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
    const fs::path out_file = g_workdir / "cmd_output.txt";
    const std::string cmd = g_binary + " " + args + " > " + out_file.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out_file);
    result.output.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return result;
}

void write_file(const fs::path& p, const std::string& content) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p);
    out << content;
}

const char* kTinyConfig =
    "[model]\n"
    "blocks = 1\n"
    "heads = 2\n"
    "head_dim = 8\n"
    "[task]\n"
    "name = offset\n"
    "grid = 3\n"
    "n_train = 32\n"
    "n_eval = 16\n"
    "[train]\n"
    "steps = 10\n"
    "batch = 8\n"
    "eval_interval = 5\n"
    "seeds = 0,1\n"
    "schemes = rope_nd_axial,harope_svd_headwise\n";

}  // namespace

TEST_CASE("verify subcommand exit codes") {
    CHECK(run_cli("verify rotary").exit_code == 0);
    CHECK(run_cli("verify numerics").exit_code == 0);

    const RunResult unknown = run_cli("verify nosuch");
    CHECK(unknown.exit_code == 2);
    CHECK(unknown.output.find("usage") != std::string::npos);

    const RunResult missing = run_cli("verify");
    CHECK(missing.exit_code == 2);
}

TEST_CASE("fault injection makes verify fail naming the property") {
    const RunResult broken = run_cli("verify all --inject-expm-sign-flip");
    CHECK(broken.exit_code == 1);
    CHECK(broken.output.find("FAILED property") != std::string::npos);
    CHECK(broken.output.find("expm") != std::string::npos);
}

TEST_CASE("train produces metrics, checkpoints, summary and obeys overrides") {
    const fs::path cfg_path = g_workdir / "tiny.ini";
    const fs::path out_dir = g_workdir / "train_out";  // does not exist yet
    write_file(cfg_path, std::string(kTinyConfig) + "[out]\ndir = " + out_dir.string() + "\n");

    const RunResult r = run_cli("train -c " + cfg_path.string() + " --workers 2");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("rope_nd_axial") != std::string::npos);
    CHECK(fs::exists(out_dir / "summary.csv"));
    CHECK(fs::exists(out_dir / "config.ini"));
    CHECK(fs::exists(out_dir / "task_seed0.txt"));
    for (const char* scheme : {"rope_nd_axial", "harope_svd_headwise"}) {
        for (const char* seed : {"seed0", "seed1"}) {
            CHECK(fs::exists(out_dir / scheme / seed / "metrics.csv"));
            CHECK(fs::exists(out_dir / scheme / seed / "checkpoint.txt"));
        }
    }
    // effective config round-trips
    const std::string cfg_text = harope::read_text_file(out_dir / "config.ini");
    CHECK(harope::RunConfig::parse(cfg_text).serialize() == cfg_text);

    // reruns are bit-identical
    const fs::path out2 = g_workdir / "train_out2";
    const RunResult r2 = run_cli("train -c " + cfg_path.string() + " --out.dir=" + out2.string());
    CHECK(r2.exit_code == 0);
    CHECK(harope::read_text_file(out_dir / "rope_nd_axial" / "seed0" / "metrics.csv") ==
          harope::read_text_file(out2 / "rope_nd_axial" / "seed0" / "metrics.csv"));

    // lr=0 override gives flat loss curves
    const fs::path out3 = g_workdir / "train_flat";
    const RunResult r3 = run_cli("train -c " + cfg_path.string() + " --train.lr=0 --out.dir=" +
                                 out3.string());
    CHECK(r3.exit_code == 0);
    const std::string csv =
        harope::read_text_file(out3 / "rope_nd_axial" / "seed0" / "metrics.csv");
    std::string first_loss;
    std::size_t rows = 0;
    std::size_t pos = csv.find('\n') + 1;  // skip header
    while (pos < csv.size()) {
        const std::size_t c1 = csv.find(',', pos);
        const std::size_t c2 = csv.find(',', c1 + 1);
        const std::string loss = csv.substr(c1 + 1, c2 - c1 - 1);
        if (first_loss.empty()) first_loss = loss;
        CHECK(loss == first_loss);
        ++rows;
        pos = csv.find('\n', pos) + 1;
        if (pos == 0) break;
    }
    CHECK(rows == 3);  // steps 0, 5, 10
}

TEST_CASE("train rejects bad configs with exit 2") {
    const fs::path cfg_path = g_workdir / "bad.ini";
    write_file(cfg_path, "[task]\nname = nosuch\n");
    CHECK(run_cli("train -c " + cfg_path.string()).exit_code == 2);
    CHECK(run_cli("train -c " + (g_workdir / "missing.ini").string()).exit_code == 2);
    const fs::path cfg2 = g_workdir / "tiny2.ini";
    write_file(cfg2, kTinyConfig);
    CHECK(run_cli("train -c " + cfg2.string() + " --train.nope=1").exit_code == 2);
}

TEST_CASE("export-matrices emits identity-diagonal heatmaps and distances") {
    // checkpoint from the earlier train run (harope scheme)
    const fs::path ckpt = g_workdir / "train_out" / "harope_svd_headwise" / "seed0" /
                          "checkpoint.txt";
    REQUIRE(fs::exists(ckpt));
    const fs::path export_dir = g_workdir / "export_out";
    const RunResult r = run_cli("export-matrices " + ckpt.string() + " " + export_dir.string());
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(export_dir / "block0_head0_A.csv"));
    CHECK(fs::exists(export_dir / "block0_head0_A.pgm"));
    CHECK(fs::exists(export_dir / "block0_head_distances.csv"));

    // an identity checkpoint puts the bright pixels exactly on the diagonal
    harope::Checkpoint ident;
    harope::AdaptBank bank;
    bank.heads = 2;
    bank.shared = false;
    bank.params = {harope::init_identity(8, harope::AdaptVariant::SVD),
                   harope::init_identity(8, harope::AdaptVariant::SVD)};
    ident.banks.push_back(bank);
    const fs::path ident_path = g_workdir / "ident_ckpt.txt";
    harope::write_text_file(ident_path, harope::checkpoint_to_text(ident));
    const fs::path ident_dir = g_workdir / "export_ident";
    CHECK(run_cli("export-matrices " + ident_path.string() + " " + ident_dir.string())
              .exit_code == 0);
    const harope::PgmImage img =
        harope::parse_pgm(harope::read_text_file(ident_dir / "block0_head0_A.pgm"));
    REQUIRE(img.width == 8);
    for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            CHECK(img.pixels[i * 8 + j] == (i == j ? 255 : 0));
        }
    }

    // corrupt checkpoints are a format error -> exit 2
    const fs::path bad = g_workdir / "bad_ckpt.txt";
    write_file(bad, "harope-checkpoint v1\nblocks zzz\n");
    const RunResult rb = run_cli("export-matrices " + bad.string() + " " + ident_dir.string());
    CHECK(rb.exit_code == 2);
    CHECK(rb.output.find("byte offset") != std::string::npos);
}

TEST_CASE("bench reports the analytic flop model with deterministic counts") {
    const RunResult r = run_cli("bench --heads 2 --tokens 32 --head-dim 8 --reps 3");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("harope_extra_macs") != std::string::npos);
    CHECK(r.output.find("multiply-add = 2 flops") != std::string::npos);
    // 2*H*n*d^2 = 2*2*32*64 = 8192
    CHECK(r.output.find("harope_extra_macs       8192") != std::string::npos);

    const RunResult r2 = run_cli("bench --heads 2 --tokens 32 --head-dim 8 --reps 3");
    auto flops_lines = [](const std::string& s) {
        std::string acc;
        std::size_t pos = 0;
        while ((pos = s.find("flops", pos)) != std::string::npos) {
            const std::size_t line_start = s.rfind('\n', pos) + 1;
            const std::size_t line_end = s.find('\n', pos);
            acc += s.substr(line_start, line_end - line_start) + "\n";
            pos = line_end;
        }
        return acc;
    };
    CHECK(flops_lines(r.output) == flops_lines(r2.output));
}

int run_doctest(int argc, char** argv) {
    doctest::Context context;
    context.applyCommandLine(1, argv);  // binary path is ours, not doctest's
    return context.run();
}

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: cli_tests <path-to-harope-binary>\n");
        return 1;
    }
    g_binary = argv[1];
    g_workdir = fs::temp_directory_path() / "harope_cli_tests";
    fs::remove_all(g_workdir);
    fs::create_directories(g_workdir);
    const int rc = run_doctest(argc, argv);
    fs::remove_all(g_workdir);
    return rc;
}
