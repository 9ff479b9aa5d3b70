#include <cmath>

#include "doctest.h"
#include "harope/adapt.hpp"
#include "harope/rng.hpp"

using namespace harope;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

HeadAdaptParams random_svd(Rng& rng, std::size_t dim, double limit = 1.0) {
    HeadAdaptParams p = init_identity(dim, AdaptVariant::SVD);
    for (double& e : p.skew_u.entries) e = rng.uniform(-limit, limit);
    for (double& e : p.skew_v.entries) e = rng.uniform(-limit, limit);
    for (double& e : p.sigma_raw) e = rng.uniform(-limit, limit);
    return p;
}

}  // namespace

TEST_CASE("identity initialization recovers I for every variant") {
    for (AdaptVariant variant : {AdaptVariant::Identity, AdaptVariant::Normal,
                                 AdaptVariant::Orthogonal, AdaptVariant::SVD}) {
        const HeadAdaptParams p = init_identity(4, variant);
        const Matrix a = build_adapt_matrix(p);
        CHECK(frobenius_distance(a, Matrix::identity(4)) < 1e-14);
    }
    // orthogonal and normal are exact
    CHECK(frobenius_distance(build_adapt_matrix(init_identity(4, AdaptVariant::Orthogonal)),
                             Matrix::identity(4)) == 0.0);
    CHECK(frobenius_distance(build_adapt_matrix(init_identity(4, AdaptVariant::Normal)),
                             Matrix::identity(4)) == 0.0);
    // SVD: raw sigma sits at softplus^-1(1)
    const HeadAdaptParams svd = init_identity(4, AdaptVariant::SVD);
    for (double raw : svd.sigma_raw) {
        CHECK(raw == doctest::Approx(std::log(std::exp(1.0) - 1.0)).epsilon(1e-15));
    }
    CHECK_THROWS_AS(init_identity(1, AdaptVariant::SVD), DomainError);
}

TEST_CASE("build_adapt_matrix for the SVD variant applies softplus singulars") {
    HeadAdaptParams p = init_identity(4, AdaptVariant::SVD);
    const double raw2 = std::log(std::exp(2.0) - 1.0);
    for (double& e : p.sigma_raw) e = raw2;
    const Matrix a = build_adapt_matrix(p);
    Matrix expect = Matrix::identity(4);
    for (std::size_t i = 0; i < 4; ++i) expect(i, i) = 2.0;
    CHECK(frobenius_distance(a, expect) < 1e-12);
}

TEST_CASE("build_adapt_matrix orthogonal variant is the 2x2 rotation") {
    HeadAdaptParams p = init_identity(2, AdaptVariant::Orthogonal);
    const double theta = 0.42;
    p.skew_v.entries[0] = theta;
    const Matrix a = build_adapt_matrix(p);
    CHECK(a(0, 0) == doctest::Approx(std::cos(theta)).epsilon(1e-13));
    CHECK(a(0, 1) == doctest::Approx(std::sin(theta)).epsilon(1e-13));
    CHECK(a(1, 0) == doctest::Approx(-std::sin(theta)).epsilon(1e-13));
    CHECK(a(1, 1) == doctest::Approx(std::cos(theta)).epsilon(1e-13));
}

TEST_CASE("built SVD factors stay orthogonal with positive singulars") {
    Rng rng(21);
    for (int rep = 0; rep < 20; ++rep) {
        const HeadAdaptParams p = random_svd(rng, 8, 2.0);
        CHECK(orthogonality_defect(expm(skew_to_matrix(p.skew_u))) < 1e-10);
        CHECK(orthogonality_defect(expm(skew_to_matrix(p.skew_v))) < 1e-10);
        for (double raw : p.sigma_raw) CHECK(softplus(raw) > 0.0);
        CHECK(build_adapt_matrix(p).all_finite());
    }
}

TEST_CASE("variant field validation") {
    HeadAdaptParams bad = init_identity(4, AdaptVariant::SVD);
    bad.variant = AdaptVariant::Identity;  // carries params it should not
    CHECK_THROWS_AS(build_adapt_matrix(bad), ConfigError);

    HeadAdaptParams missing;
    missing.dim = 4;
    missing.variant = AdaptVariant::SVD;  // no params at all
    CHECK_THROWS_AS(build_adapt_matrix(missing), ConfigError);

    HeadAdaptParams wrong_dense = init_identity(4, AdaptVariant::Normal);
    wrong_dense.dense = Matrix(3, 3);
    CHECK_THROWS_AS(build_adapt_matrix(wrong_dense), ConfigError);
}

TEST_CASE("sigma regularizer values") {
    const HeadAdaptParams at_identity = init_identity(4, AdaptVariant::SVD);
    CHECK(sigma_regularizer(at_identity) < 1e-28);

    HeadAdaptParams p = init_identity(4, AdaptVariant::SVD);
    p.sigma_raw[0] = softplus_inverse(2.0);  // sigma = (2,1,1,1)
    CHECK(sigma_regularizer(p) == doctest::Approx(1.0).epsilon(1e-12));

    HeadAdaptParams q = init_identity(2, AdaptVariant::SVD);
    q.sigma_raw[0] = softplus_inverse(0.5);
    q.sigma_raw[1] = softplus_inverse(1.5);
    CHECK(sigma_regularizer(q) == doctest::Approx(0.5).epsilon(1e-12));

    CHECK_THROWS_AS(sigma_regularizer(init_identity(4, AdaptVariant::Orthogonal)), ConfigError);
    CHECK_THROWS_AS(sigma_regularizer(init_identity(4, AdaptVariant::Normal)), ConfigError);
}

TEST_CASE("apply_harope against adapted_score and the plain rotary baseline") {
    Rng rng(22);
    const RotaryConfig cfg = make_rotary_config(2, 8, 10000.0);

    // identity variant: exactly the rotary map
    {
        const HeadAdaptParams id = init_identity(8, AdaptVariant::Identity);
        const auto q = random_vec(rng, 8);
        const auto k = random_vec(rng, 8);
        const GridPosition pq{1.0, 2.0}, pk{3.0, -1.0};
        const auto [qr, kr] = apply_harope(q, k, pq, pk, id, cfg);
        CHECK(qr == apply_rotary_nd(q, pq, cfg));
        CHECK(kr == apply_rotary_nd(k, pk, cfg));
    }

    // zero positions: (A q, A k)
    {
        const HeadAdaptParams p = random_svd(rng, 8);
        const Matrix a = build_adapt_matrix(p);
        const auto q = random_vec(rng, 8);
        const auto k = random_vec(rng, 8);
        const GridPosition zero{0.0, 0.0};
        const auto [qr, kr] = apply_harope(q, k, zero, zero, p, cfg);
        for (std::size_t i = 0; i < 8; ++i) {
            double aq = 0.0, ak = 0.0;
            for (std::size_t j = 0; j < 8; ++j) {
                aq += a(i, j) * q[j];
                ak += a(i, j) * k[j];
            }
            CHECK(std::abs(qr[i] - aq) < 1e-14);
            CHECK(std::abs(kr[i] - ak) < 1e-14);
        }
    }

    // random inputs: dot of apply_harope outputs equals adapted_score
    for (int rep = 0; rep < 100; ++rep) {
        const HeadAdaptParams p = random_svd(rng, 8);
        const auto q = random_vec(rng, 8);
        const auto k = random_vec(rng, 8);
        const GridPosition pq{rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)};
        const GridPosition pk{rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)};
        const auto [qr, kr] = apply_harope(q, k, pq, pk, p, cfg);
        const double direct = dot(qr, kr);
        const double from_offset = adapted_score(q, k, pk - pq, p, cfg);
        CHECK(std::abs(direct - from_offset) < 1e-10);
    }

    CHECK_THROWS_AS(
        apply_harope(random_vec(rng, 6), random_vec(rng, 8), GridPosition{0.0, 0.0},
                     GridPosition{0.0, 0.0}, random_svd(rng, 8), cfg),
        ShapeError);
}

TEST_CASE("adapted_score degenerate cases") {
    Rng rng(23);
    const RotaryConfig cfg = make_rotary_config(2, 8, 10000.0);
    const auto q = random_vec(rng, 8);
    const auto k = random_vec(rng, 8);
    const GridPosition zero{0.0, 0.0};

    const HeadAdaptParams id = init_identity(8, AdaptVariant::Identity);
    CHECK(std::abs(adapted_score(q, k, zero, id, cfg) - dot(q, k)) < 1e-14);

    const HeadAdaptParams p = random_svd(rng, 8);
    const Matrix a = build_adapt_matrix(p);
    std::vector<double> aq(8, 0.0), ak(8, 0.0);
    for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            aq[i] += a(i, j) * q[j];
            ak[i] += a(i, j) * k[j];
        }
    }
    CHECK(std::abs(adapted_score(q, k, zero, p, cfg) - dot(aq, ak)) < 1e-12);
}

TEST_CASE("offset-only dependence across absolute positions") {
    Rng rng(24);
    const RotaryConfig cfg = make_rotary_config(2, 8, 10000.0);
    const HeadAdaptParams p = random_svd(rng, 8);
    const auto q = random_vec(rng, 8);
    const auto k = random_vec(rng, 8);
    const GridPosition delta{rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)};
    const double reference = adapted_score(q, k, delta, p, cfg);
    for (int rep = 0; rep < 100; ++rep) {
        const GridPosition pq{rng.uniform(-40.0, 40.0), rng.uniform(-40.0, 40.0)};
        const auto [qr, kr] = apply_harope(q, k, pq, pq + delta, p, cfg);
        CHECK(std::abs(dot(qr, kr) - reference) < 1e-10);
    }
}

TEST_CASE("adapt bank shape and independence") {
    AdaptBank shared = AdaptBank::identity(4, 8, AdaptVariant::SVD, true);
    CHECK(shared.params.size() == 1);
    shared.validate_bank();
    for (std::size_t h = 0; h < 4; ++h) {
        CHECK(&shared.head(h) == &shared.params[0]);
    }

    AdaptBank separate = AdaptBank::identity(4, 8, AdaptVariant::SVD, false);
    CHECK(separate.params.size() == 4);
    std::vector<Matrix> before;
    for (std::size_t h = 0; h < 4; ++h) before.push_back(build_adapt_matrix(separate.head(h)));
    separate.head(1).skew_u.entries[0] = 0.33;
    for (std::size_t h = 0; h < 4; ++h) {
        const Matrix after = build_adapt_matrix(separate.head(h));
        if (h == 1) {
            CHECK(!(after == before[h]));
        } else {
            CHECK(after == before[h]);  // others bit-identical
        }
    }

    AdaptBank bad = separate;
    bad.params.pop_back();
    CHECK_THROWS_AS(bad.validate_bank(), ConfigError);
}

TEST_CASE("variant tags round-trip through strings") {
    for (AdaptVariant v : {AdaptVariant::Identity, AdaptVariant::Normal, AdaptVariant::Orthogonal,
                           AdaptVariant::SVD}) {
        CHECK(adapt_variant_from_string(to_string(v)) == v);
    }
    CHECK_THROWS_AS(adapt_variant_from_string("diag"), ConfigError);
}
