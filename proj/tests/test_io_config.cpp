#include <filesystem>

#include "doctest.h"
#include "harope/checkpoint.hpp"
#include "harope/config.hpp"
#include "harope/harness.hpp"
#include "harope/io.hpp"
#include "harope/rng.hpp"

using namespace harope;
namespace fs = std::filesystem;

namespace {

Checkpoint sample_checkpoint() {
    Checkpoint c;
    AdaptBank bank = AdaptBank::identity(3, 4, AdaptVariant::SVD, false);
    Rng rng(61);
    for (auto& rec : bank.params) {
        for (double& e : rec.skew_u.entries) e = rng.normal();
        for (double& e : rec.skew_v.entries) e = rng.normal();
        for (double& e : rec.sigma_raw) e = rng.normal() * 0.3;
    }
    c.banks.push_back(bank);
    AdaptBank mixed;
    mixed.heads = 2;
    mixed.shared = false;
    HeadAdaptParams normal = init_identity(4, AdaptVariant::Normal);
    normal.dense(0, 3) = 1.0 / 3.0;
    HeadAdaptParams orth = init_identity(4, AdaptVariant::Orthogonal);
    orth.skew_v.entries[1] = -0.125;
    mixed.params = {normal, orth};
    c.banks.push_back(mixed);
    return c;
}

}  // namespace

TEST_CASE("checkpoint text round-trips exactly") {
    const Checkpoint c = sample_checkpoint();
    const std::string text = checkpoint_to_text(c);
    const Checkpoint back = checkpoint_from_text(text);
    CHECK(back == c);
    CHECK(checkpoint_to_text(back) == text);  // byte-identical re-export
}

TEST_CASE("checkpoint parser reports byte offsets for corruption") {
    const std::string good = checkpoint_to_text(sample_checkpoint());

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS((void)checkpoint_from_text(bad_magic), FormatError);

    std::string bad_number = good;
    const auto pos = bad_number.find("sigma_raw 4 ");
    REQUIRE(pos != std::string::npos);
    bad_number.replace(pos + 12, 1, "?");
    try {
        (void)checkpoint_from_text(bad_number);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.offset >= pos);  // points at the offending token
        CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }

    CHECK_THROWS_AS((void)checkpoint_from_text(good + "extra"), FormatError);
    CHECK_THROWS_AS((void)checkpoint_from_text(""), FormatError);
}

TEST_CASE("identity checkpoints load as identity matrices") {
    Checkpoint c;
    AdaptBank bank;
    bank.heads = 2;
    bank.shared = false;
    bank.params = {init_identity(4, AdaptVariant::Identity),
                   init_identity(4, AdaptVariant::Identity)};
    c.banks.push_back(bank);
    const Checkpoint back = checkpoint_from_text(checkpoint_to_text(c));
    CHECK(frobenius_distance(build_adapt_matrix(back.banks[0].head(1)), Matrix::identity(4)) ==
          0.0);
}

TEST_CASE("run config round-trips through its canonical serialization") {
    RunConfig cfg;
    cfg.task = "anisotropic";
    cfg.grid = 5;
    cfg.lr = 1e-3;
    cfg.seeds = {4, 5, 6};
    cfg.schemes = {SchemeSpec::parse("rope_nd_axial"), SchemeSpec::parse("harope_svd_shared"),
                   SchemeSpec::parse("harope_orthogonal_headwise")};
    cfg.out_dir = "runs/exp7";
    const std::string text = cfg.serialize();
    const RunConfig back = RunConfig::parse(text);
    CHECK(back == cfg);
    CHECK(back.serialize() == text);
}

TEST_CASE("config parsing accepts comments and applies overrides") {
    const std::string text =
        "# experiment\n"
        "[model]\n"
        "heads = 4\n"
        "; another comment\n"
        "[train]\n"
        "lr = 0.001\n"
        "seeds = 1, 2, 3\n";
    RunConfig cfg = RunConfig::parse(text);
    CHECK(cfg.heads == 4);
    CHECK(cfg.lr == 0.001);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});

    const auto rest = cfg.apply_overrides({"--train.lr=5e-4", "--task.grid=6", "positional"});
    CHECK(cfg.lr == 5e-4);
    CHECK(cfg.grid == 6);
    CHECK(rest == std::vector<std::string>{"positional"});

    CHECK_THROWS_AS(cfg.apply_override("train.nope", "1"), ConfigError);
    CHECK_THROWS_AS(cfg.apply_override("train.lr", "fast"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("[model]\nblocks 2\n"), ConfigError);
}

TEST_CASE("config validation catches dimensional inconsistencies") {
    RunConfig cfg;
    cfg.head_dim = 10;  // not divisible by 2*axes=4
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.head_dim = 16;
    cfg.task = "nosuch";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.task = "headmix";
    cfg.grid = 3;  // headmix needs >= 4
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.grid = 4;
    cfg.validate();
}

TEST_CASE("scheme spec strings") {
    CHECK(SchemeSpec::parse("rope_nd_axial").tag == SchemeTag::RoPE_ND_axial);
    const SchemeSpec hw = SchemeSpec::parse("harope_svd_headwise");
    CHECK(hw.tag == SchemeTag::HARoPE);
    CHECK(hw.variant == AdaptVariant::SVD);
    CHECK(!hw.shared);
    const SchemeSpec sh = SchemeSpec::parse("harope_orthogonal_shared");
    CHECK(sh.variant == AdaptVariant::Orthogonal);
    CHECK(sh.shared);
    CHECK(SchemeSpec::parse("harope").text() == "harope_svd_headwise");
    for (const char* s : {"rope_1d", "ape_learned", "harope_normal_shared"}) {
        CHECK(SchemeSpec::parse(s).text() == s);
    }
    CHECK_THROWS_AS(SchemeSpec::parse("harope_svd_sideways"), ConfigError);
    CHECK_THROWS_AS(SchemeSpec::parse("rope_3d"), ConfigError);
}

TEST_CASE("pgm heatmaps normalize per matrix with min->0 max->255") {
    const Matrix ident = Matrix::identity(3);
    const PgmImage img = parse_pgm(matrix_to_pgm(ident));
    CHECK(img.width == 3);
    CHECK(img.height == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(img.pixels[i * 3 + j] == (i == j ? 255 : 0));
        }
    }
    // constant matrices map to all zeros
    Matrix flat(2, 2);
    for (double& v : flat.values()) v = 3.5;
    const PgmImage flat_img = parse_pgm(matrix_to_pgm(flat));
    for (auto px : flat_img.pixels) CHECK(px == 0);

    CHECK_THROWS_AS((void)parse_pgm("P2\n1 1\n255\n0"), FormatError);
}

TEST_CASE("export writes csv, pgm and distance files") {
    const fs::path dir = fs::temp_directory_path() / "harope_export_test";
    fs::remove_all(dir);
    const Checkpoint c = sample_checkpoint();
    const ExportResult result = export_checkpoint_matrices(c, dir);
    CHECK(result.blocks == 2);
    // 3 heads + 2 heads -> 5 csv + 5 pgm + 2 distance files
    CHECK(result.files.size() == 12);
    for (const auto& f : result.files) CHECK(fs::exists(f));
    // distances are symmetric with a zero diagonal
    const Matrix d = matrix_from_csv(read_text_file(dir / "block0_head_distances.csv"));
    REQUIRE(d.rows() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(d(i, i) == 0.0);
        for (std::size_t j = 0; j < 3; ++j) CHECK(d(i, j) == d(j, i));
    }
    fs::remove_all(dir);
}

TEST_CASE("shared-bank checkpoints export zero pairwise distances") {
    Checkpoint c;
    AdaptBank bank = AdaptBank::identity(4, 4, AdaptVariant::SVD, true);
    bank.params[0].skew_u.entries[0] = 0.9;
    c.banks.push_back(bank);
    const fs::path dir = fs::temp_directory_path() / "harope_export_shared";
    fs::remove_all(dir);
    const ExportResult result = export_checkpoint_matrices(c, dir);
    CHECK(result.max_pairwise_distance == 0.0);
    fs::remove_all(dir);
}

TEST_CASE("HAROPE_OUT_ROOT redirects relative output directories") {
    setenv("HAROPE_OUT_ROOT", "/tmp/harope_root_test", 1);
    CHECK(resolve_out_dir("runs/x") == fs::path("/tmp/harope_root_test/runs/x"));
    CHECK(resolve_out_dir("/abs/path") == fs::path("/abs/path"));
    unsetenv("HAROPE_OUT_ROOT");
    CHECK(resolve_out_dir("runs/x") == fs::path("runs/x"));
}
