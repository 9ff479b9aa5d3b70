#include <cmath>

#include "doctest.h"
#include "harope/attention.hpp"
#include "harope/rng.hpp"

using namespace harope;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double s = 1.0) {
    Matrix m(r, c);
    for (double& v : m.values()) v = s * rng.normal();
    return m;
}

constexpr std::size_t kHeads = 2;
constexpr std::size_t kHeadDim = 8;
constexpr std::size_t kModelDim = kHeads * kHeadDim;

TokenBatch grid_tokens(Rng& rng, std::size_t n, std::size_t grid) {
    TokenBatch b;
    b.n_tokens = n;
    b.model_dim = kModelDim;
    b.features = random_matrix(rng, n, kModelDim, 0.6);
    for (std::size_t t = 0; t < n; ++t) {
        b.positions.emplace_back(static_cast<double>(t / grid), static_cast<double>(t % grid));
    }
    return b;
}

MHAConfig base_config(Rng& rng, SchemeTag tag) {
    MHAConfig cfg;
    cfg.n_heads = kHeads;
    cfg.head_dim = kHeadDim;
    cfg.scheme.tag = tag;
    cfg.scheme.rotary = make_rotary_config(tag == SchemeTag::RoPE_1D ? 1 : 2, kHeadDim, 10000.0);
    cfg.w_q = random_matrix(rng, kModelDim, kModelDim, 0.3);
    cfg.w_k = random_matrix(rng, kModelDim, kModelDim, 0.3);
    cfg.w_v = random_matrix(rng, kModelDim, kModelDim, 0.3);
    cfg.w_o = random_matrix(rng, kModelDim, kModelDim, 0.3);
    return cfg;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    REQUIRE(a.same_shape(b));
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    }
    return worst;
}

}  // namespace

TEST_CASE("single token collapses to the value path for every scheme") {
    Rng rng(41);
    for (SchemeTag tag : {SchemeTag::APE_sinusoidal, SchemeTag::RoPE_1D,
                          SchemeTag::RoPE_ND_axial, SchemeTag::HARoPE}) {
        MHAConfig cfg = base_config(rng, tag);
        if (tag == SchemeTag::HARoPE) {
            cfg.scheme.bank = AdaptBank::identity(kHeads, kHeadDim, AdaptVariant::SVD, false);
            for (double& e : cfg.scheme.bank.params[0].skew_u.entries) e = 0.3;
        }
        TokenBatch batch;
        batch.n_tokens = 1;
        batch.model_dim = kModelDim;
        batch.features = random_matrix(rng, 1, kModelDim);
        batch.positions = {tag == SchemeTag::RoPE_1D ? GridPosition(5.0)
                                                     : GridPosition{2.0, 3.0}};
        const TokenBatch out = mha_forward(batch, cfg);
        // softmax over one key is 1, so output = (x + pe) W_v W_o
        Matrix x = batch.features;
        if (tag == SchemeTag::APE_sinusoidal) {
            const auto pe = sinusoidal_encoding(batch.positions[0], kModelDim);
            for (std::size_t j = 0; j < kModelDim; ++j) x(0, j) += pe[j];
        }
        const Matrix expect = matmul(matmul(x, cfg.w_v), cfg.w_o);
        CHECK(max_abs_diff(out.features, expect) < 1e-12);
    }
}

TEST_CASE("identity-initialized HARoPE matches axial RoPE end to end") {
    Rng rng(42);
    for (int rep = 0; rep < 10; ++rep) {
        MHAConfig rope = base_config(rng, SchemeTag::RoPE_ND_axial);
        MHAConfig hrp = rope;
        hrp.scheme.tag = SchemeTag::HARoPE;
        hrp.scheme.bank = AdaptBank::identity(kHeads, kHeadDim, AdaptVariant::SVD, false);
        Rng brng(100 + rep);
        const TokenBatch batch = grid_tokens(brng, 9, 3);
        CHECK(max_abs_diff(mha_forward(batch, rope).features,
                           mha_forward(batch, hrp).features) < 1e-10);
    }
}

TEST_CASE("common position shift leaves rotary-family outputs unchanged") {
    Rng rng(43);
    for (SchemeTag tag : {SchemeTag::RoPE_ND_axial, SchemeTag::HARoPE}) {
        MHAConfig cfg = base_config(rng, tag);
        if (tag == SchemeTag::HARoPE) {
            cfg.scheme.bank = AdaptBank::identity(kHeads, kHeadDim, AdaptVariant::SVD, false);
            for (auto& rec : cfg.scheme.bank.params) {
                for (double& e : rec.skew_u.entries) e = rng.uniform(-0.5, 0.5);
                for (double& e : rec.skew_v.entries) e = rng.uniform(-0.5, 0.5);
            }
        }
        const TokenBatch batch = grid_tokens(rng, 9, 3);
        TokenBatch shifted = batch;
        for (auto& p : shifted.positions) {
            p.coords[0] += 7.5;
            p.coords[1] -= 3.25;
        }
        CHECK(max_abs_diff(mha_forward(batch, cfg).features,
                           mha_forward(shifted, cfg).features) < 1e-9);
    }
}

TEST_CASE("attention scores at equal positions reduce to the projected dot product") {
    Rng rng(44);
    MHAConfig cfg = base_config(rng, SchemeTag::RoPE_ND_axial);
    TokenBatch batch = grid_tokens(rng, 6, 3);
    for (auto& p : batch.positions) p = GridPosition{2.0, 2.0};

    const Matrix q = matmul(batch.features, cfg.w_q);
    const Matrix k = matmul(batch.features, cfg.w_k);
    for (std::size_t h = 0; h < kHeads; ++h) {
        const Matrix scores = attention_scores(batch, cfg, h);
        for (std::size_t i = 0; i < batch.n_tokens; ++i) {
            for (std::size_t j = 0; j < batch.n_tokens; ++j) {
                double dot_qk = 0.0;
                for (std::size_t c = 0; c < kHeadDim; ++c) {
                    dot_qk += q(i, h * kHeadDim + c) * k(j, h * kHeadDim + c);
                }
                CHECK(std::abs(scores(i, j) - dot_qk / std::sqrt(double(kHeadDim))) < 1e-10);
            }
        }
    }
    CHECK_THROWS_AS((void)attention_scores(batch, cfg, kHeads), std::out_of_range);
}

TEST_CASE("learned APE scores move under a position shift") {
    Rng rng(45);
    MHAConfig cfg = base_config(rng, SchemeTag::APE_learned);
    cfg.scheme.ape_grid = 8;
    cfg.scheme.ape_table = random_matrix(rng, 64, kModelDim, 0.5);
    const TokenBatch batch = grid_tokens(rng, 9, 3);
    TokenBatch shifted = batch;
    for (auto& p : shifted.positions) {
        p.coords[0] += 2.0;
        p.coords[1] += 1.0;
    }
    const double moved =
        max_abs_diff(attention_scores(batch, cfg, 0), attention_scores(shifted, cfg, 0));
    CHECK(moved > 1e-6);

    // non-integer positions are rejected for the learned table
    TokenBatch frac = batch;
    frac.positions[0].coords[0] = 0.5;
    CHECK_THROWS_AS(mha_forward(frac, cfg), DomainError);
}

TEST_CASE("HARoPE scores match the adapt-module oracle entrywise") {
    Rng rng(46);
    MHAConfig cfg = base_config(rng, SchemeTag::HARoPE);
    cfg.scheme.bank = AdaptBank::identity(kHeads, kHeadDim, AdaptVariant::SVD, false);
    for (auto& rec : cfg.scheme.bank.params) {
        for (double& e : rec.skew_u.entries) e = rng.uniform(-0.8, 0.8);
        for (double& e : rec.skew_v.entries) e = rng.uniform(-0.8, 0.8);
        for (double& e : rec.sigma_raw) e = rng.uniform(-0.5, 1.0);
    }
    const TokenBatch batch = grid_tokens(rng, 9, 3);
    const Matrix q_all = matmul(batch.features, cfg.w_q);
    const Matrix k_all = matmul(batch.features, cfg.w_k);
    const double scale = 1.0 / std::sqrt(static_cast<double>(kHeadDim));
    for (std::size_t h = 0; h < kHeads; ++h) {
        const Matrix scores = attention_scores(batch, cfg, h);
        for (std::size_t i = 0; i < batch.n_tokens; ++i) {
            for (std::size_t j = 0; j < batch.n_tokens; ++j) {
                std::vector<double> qi(kHeadDim), kj(kHeadDim);
                for (std::size_t c = 0; c < kHeadDim; ++c) {
                    qi[c] = q_all(i, h * kHeadDim + c);
                    kj[c] = k_all(j, h * kHeadDim + c);
                }
                const double oracle =
                    adapted_score(qi, kj, batch.positions[j] - batch.positions[i],
                                  cfg.scheme.bank.head(h), cfg.scheme.rotary) *
                    scale;
                CHECK(std::abs(scores(i, j) - oracle) < 1e-10);
            }
        }
    }
}

TEST_CASE("taped forward agrees with the pure forward") {
    Rng rng(47);
    for (SchemeTag tag : {SchemeTag::RoPE_ND_axial, SchemeTag::HARoPE}) {
        MHAConfig cfg = base_config(rng, tag);
        if (tag == SchemeTag::HARoPE) {
            cfg.scheme.bank = AdaptBank::identity(kHeads, kHeadDim, AdaptVariant::SVD, false);
            for (auto& rec : cfg.scheme.bank.params) {
                for (double& e : rec.skew_u.entries) e = rng.uniform(-0.6, 0.6);
                for (double& e : rec.sigma_raw) e = rng.uniform(-0.2, 0.8);
            }
        }
        const TokenBatch batch = grid_tokens(rng, 9, 3);
        const TokenBatch pure = mha_forward(batch, cfg);

        Tape tape;
        const MHAParamNodes params = mha_leaves(tape, cfg);
        auto positions = RotaryPositions::make(batch.positions, cfg.scheme.rotary);
        const NodeId out = mha_forward_taped(tape, tape.constant(batch.features), positions,
                                             MHAShape::of(cfg), params);
        CHECK(max_abs_diff(tape.value(out), pure.features) < 1e-13);
    }
}

TEST_CASE("cached adaptation matrices give the same outputs as rebuilding") {
    Rng rng(48);
    MHAConfig cfg = base_config(rng, SchemeTag::HARoPE);
    cfg.scheme.bank = AdaptBank::identity(kHeads, kHeadDim, AdaptVariant::SVD, false);
    for (auto& rec : cfg.scheme.bank.params) {
        for (double& e : rec.skew_v.entries) e = rng.uniform(-0.9, 0.9);
    }
    const TokenBatch batch = grid_tokens(rng, 9, 3);
    const Matrix uncached = mha_forward(batch, cfg).features;
    cfg.scheme.cache_adapt();
    CHECK(max_abs_diff(mha_forward(batch, cfg).features, uncached) == 0.0);
}

TEST_CASE("mha validation rejects inconsistent setups") {
    Rng rng(49);
    MHAConfig cfg = base_config(rng, SchemeTag::RoPE_ND_axial);
    TokenBatch batch = grid_tokens(rng, 4, 2);

    MHAConfig bad_w = cfg;
    bad_w.w_q = Matrix(3, 3);
    CHECK_THROWS_AS(mha_forward(batch, bad_w), ShapeError);

    MHAConfig bad_rotary = cfg;
    bad_rotary.scheme.rotary = make_rotary_config(2, 4, 10000.0);
    CHECK_THROWS_AS(mha_forward(batch, bad_rotary), ConfigError);

    MHAConfig harope = cfg;
    harope.scheme.tag = SchemeTag::HARoPE;
    harope.scheme.bank = AdaptBank::identity(3, kHeadDim, AdaptVariant::SVD, false);
    CHECK_THROWS_AS(mha_forward(batch, harope), ConfigError);

    TokenBatch bad_batch = batch;
    bad_batch.positions.pop_back();
    CHECK_THROWS_AS(mha_forward(bad_batch, cfg), ShapeError);
}

TEST_CASE("attention score matrices export through CSV unchanged") {
    Rng rng(50);
    MHAConfig cfg = base_config(rng, SchemeTag::RoPE_ND_axial);
    const TokenBatch batch = grid_tokens(rng, 6, 3);
    const Matrix scores = attention_scores(batch, cfg, 1);
    const Matrix back = matrix_from_csv(matrix_to_csv(scores));
    CHECK(back == scores);
}

TEST_CASE("scheme tags round-trip through strings") {
    for (SchemeTag t : {SchemeTag::APE_learned, SchemeTag::APE_sinusoidal, SchemeTag::RoPE_1D,
                        SchemeTag::RoPE_ND_axial, SchemeTag::HARoPE}) {
        CHECK(scheme_tag_from_string(to_string(t)) == t);
    }
    CHECK_THROWS_AS(scheme_tag_from_string("rope"), ConfigError);
}
