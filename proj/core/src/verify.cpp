#include "harope/verify.hpp"

#include <cmath>
#include <cstdio>

#include "harope/adapt.hpp"
#include "harope/attention.hpp"
#include "harope/autodiff.hpp"
#include "harope/rng.hpp"
#include "harope/rotary.hpp"

namespace harope {

namespace {

using ExpmFn = std::function<Matrix(const Matrix&)>;

SkewParams random_skew(Rng& rng, std::size_t dim, double limit) {
    SkewParams p = SkewParams::zeros(dim);
    for (double& e : p.entries) e = rng.uniform(-limit, limit);
    return p;
}

std::vector<double> random_vec(Rng& rng, std::size_t n, double s = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = s * rng.normal();
    return v;
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double s = 1.0) {
    Matrix m(r, c);
    for (double& x : m.values()) x = s * rng.normal();
    return m;
}

HeadAdaptParams random_svd_params(Rng& rng, std::size_t dim, double limit) {
    HeadAdaptParams p = init_identity(dim, AdaptVariant::SVD);
    for (double& e : p.skew_u.entries) e = rng.uniform(-limit, limit);
    for (double& e : p.skew_v.entries) e = rng.uniform(-limit, limit);
    for (double& e : p.sigma_raw) e = rng.uniform(-limit, limit);
    return p;
}

struct Suite {
    std::string name;
    std::vector<PropertyResult> results;

    void property(const std::string& prop, double max_error, double tolerance) {
        results.push_back({name, prop, max_error, tolerance, max_error <= tolerance});
    }
};

// ---- numerics ---------------------------------------------------------------

std::vector<PropertyResult> numerics_suite(const VerifyOptions& opts, const ExpmFn& expm_fn) {
    Suite suite{"numerics", {}};
    Rng rng(opts.seed);

    {
        double worst = 0.0;
        for (std::size_t dim : {2u, 3u, 4u, 8u, 16u}) {
            for (int rep = 0; rep < 20; ++rep) {
                const Matrix u = expm_fn(skew_to_matrix(random_skew(rng, dim, 10.0)));
                worst = std::max(worst, orthogonality_defect(u));
            }
        }
        suite.property("expm-orthogonality", worst, 1e-10);
    }
    {
        double worst = 0.0;
        for (std::size_t dim : {2u, 4u, 8u}) {
            for (int rep = 0; rep < 20; ++rep) {
                const Matrix s = skew_to_matrix(random_skew(rng, dim, 10.0));
                const Matrix prod = matmul(expm_fn(s), expm_fn(scale(s, -1.0)));
                worst = std::max(worst, frobenius_distance(prod, Matrix::identity(dim)));
            }
        }
        suite.property("expm-inverse", worst, 1e-10);
    }
    {
        double worst = 0.0;
        for (std::size_t dim = 2; dim <= 8; ++dim) {
            for (int rep = 0; rep < 10; ++rep) {
                const Matrix u = expm_fn(skew_to_matrix(random_skew(rng, dim, 10.0)));
                worst = std::max(worst, std::abs(determinant(u) - 1.0));
            }
        }
        suite.property("expm-det-one", worst, 1e-8);
    }
    {
        // strict monotonicity holds up to the documented clamp at x < -708,
        // below which everything maps to the smallest positive normal
        std::size_t violations = 0;
        for (int rep = 0; rep < 1000; ++rep) {
            double x = rng.uniform(-700.0, 700.0);
            double y = rng.uniform(-700.0, 700.0);
            if (x == y) continue;
            if (x > y) std::swap(x, y);
            if (!(softplus(x) < softplus(y))) ++violations;
        }
        suite.property("softplus-monotone", static_cast<double>(violations), 0.0);
    }
    {
        double worst = 0.0;
        for (int rep = 0; rep < 50; ++rep) {
            const Matrix a = random_matrix(rng, 8, 8);
            const Matrix b = random_matrix(rng, 8, 8);
            const Matrix c = random_matrix(rng, 8, 8);
            const Matrix left = matmul(matmul(a, b), c);
            const Matrix right = matmul(a, matmul(b, c));
            worst = std::max(worst, frobenius_distance(left, right) / frobenius_norm(right));
        }
        suite.property("matmul-associativity", worst, 1e-9);
    }
    return suite.results;
}

// ---- rotary -----------------------------------------------------------------

std::vector<PropertyResult> rotary_suite(const VerifyOptions& opts) {
    Suite suite{"rotary", {}};
    Rng rng(opts.seed + 1);

    {
        double worst = 0.0;
        for (std::size_t dim : {4u, 8u}) {
            const FreqSpectrum spec = make_spectrum(dim, 10000.0);
            for (int rep = 0; rep < 50; ++rep) {
                const double m = rng.uniform(-1e4, 1e4);
                const double n = rng.uniform(-1e4, 1e4);
                const Matrix lhs = matmul(rotation_matrix(m, spec), rotation_matrix(n, spec));
                worst = std::max(worst, frobenius_distance(lhs, rotation_matrix(m + n, spec)));
            }
        }
        suite.property("composition", worst, 1e-11);
    }
    {
        double worst = 0.0;
        const FreqSpectrum spec = make_spectrum(8, 10000.0);
        for (int rep = 0; rep < 50; ++rep) {
            const double m = rng.uniform(-1e4, 1e4);
            worst = std::max(worst, frobenius_distance(transpose(rotation_matrix(m, spec)),
                                                       rotation_matrix(-m, spec)));
        }
        suite.property("transpose-inverse", worst, 1e-12);
    }
    {
        double worst = 0.0;
        const FreqSpectrum spec = make_spectrum(8, 10000.0);
        for (int rep = 0; rep < 200; ++rep) {
            const auto q = random_vec(rng, 8);
            const auto k = random_vec(rng, 8);
            const double m = rng.uniform(-100.0, 100.0);
            const double n = rng.uniform(-100.0, 100.0);
            const double s = rng.uniform(-100.0, 100.0);
            const double rotated = dot(apply_rotary_1d(q, m, spec), apply_rotary_1d(k, n, spec));
            const double offset = dot(q, apply_rotary_1d(k, n - m, spec));
            const double shifted =
                dot(apply_rotary_1d(q, m + s, spec), apply_rotary_1d(k, n + s, spec));
            worst = std::max({worst, std::abs(rotated - offset), std::abs(rotated - shifted)});
        }
        suite.property("relative-offset-identity", worst, 1e-10);
    }
    {
        double worst = 0.0;
        const RotaryConfig cfg = make_rotary_config(2, 8, 10000.0);
        for (int rep = 0; rep < 200; ++rep) {
            const auto v = random_vec(rng, 8);
            const GridPosition pos{rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0)};
            const auto rotated = apply_rotary_nd(v, pos, cfg);
            double n0 = 0.0, n1 = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) {
                n0 += v[i] * v[i];
                n1 += rotated[i] * rotated[i];
            }
            worst = std::max(worst, std::abs(std::sqrt(n0) - std::sqrt(n1)));
        }
        suite.property("norm-preservation", worst, 1e-12);
    }
    {
        double worst = 0.0;
        const RotaryConfig cfg = make_rotary_config(2, 8, 10000.0);
        for (int rep = 0; rep < 200; ++rep) {
            const auto q = random_vec(rng, 8);
            const auto k = random_vec(rng, 8);
            const GridPosition pq{rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)};
            const GridPosition pk{rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)};
            const GridPosition shift{rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)};
            const double base = separable_score(q, k, pq, pk, cfg);
            const double moved = separable_score(q, k, pq + shift, pk + shift, cfg);
            worst = std::max(worst, std::abs(base - moved));
        }
        suite.property("nd-translation-invariance", worst, 1e-10);
    }
    {
        double worst = 0.0;
        const RotaryConfig cfg = make_rotary_config(2, 8, 10000.0);
        for (int rep = 0; rep < 200; ++rep) {
            const auto q = random_vec(rng, 8);
            const auto k = random_vec(rng, 8);
            const GridPosition pq{rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)};
            const GridPosition pk{rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)};
            const double separable = separable_score(q, k, pq, pk, cfg);
            const double direct =
                dot(apply_rotary_nd(q, pq, cfg), apply_rotary_nd(k, pk, cfg));
            worst = std::max(worst, std::abs(separable - direct));
        }
        suite.property("separability", worst, 1e-10);
    }
    return suite.results;
}

// ---- adapt ------------------------------------------------------------------

std::vector<PropertyResult> adapt_suite(const VerifyOptions& opts, const ExpmFn& expm_fn) {
    Suite suite{"adapt", {}};
    Rng rng(opts.seed + 2);

    {
        double worst = 0.0;
        for (std::size_t axes : {1u, 2u}) {
            const std::size_t dim = 8;
            const RotaryConfig cfg = make_rotary_config(axes, dim, 10000.0);
            const HeadAdaptParams params = random_svd_params(rng, dim, 1.0);
            const auto q = random_vec(rng, dim);
            const auto k = random_vec(rng, dim);
            GridPosition delta;
            for (std::size_t a = 0; a < axes; ++a)
                delta.coords.push_back(rng.uniform(-10.0, 10.0));
            const double reference = adapted_score(q, k, delta, params, cfg);
            for (int rep = 0; rep < 100; ++rep) {
                GridPosition pq;
                for (std::size_t a = 0; a < axes; ++a)
                    pq.coords.push_back(rng.uniform(-30.0, 30.0));
                const GridPosition pk = pq + delta;
                const auto [qr, kr] = apply_harope(q, k, pq, pk, params, cfg);
                worst = std::max(worst, std::abs(dot(qr, kr) - reference));
            }
        }
        suite.property("offset-only-dependence", worst, 1e-10);
    }
    {
        double worst = 0.0;
        const std::size_t dim = 8;
        const RotaryConfig cfg = make_rotary_config(2, dim, 10000.0);
        for (AdaptVariant variant : {AdaptVariant::Identity, AdaptVariant::Normal,
                                     AdaptVariant::Orthogonal, AdaptVariant::SVD}) {
            const HeadAdaptParams params = init_identity(dim, variant);
            for (int rep = 0; rep < 20; ++rep) {
                const auto q = random_vec(rng, dim);
                const auto k = random_vec(rng, dim);
                const GridPosition pq{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
                const GridPosition pk{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
                const auto [qr, kr] = apply_harope(q, k, pq, pk, params, cfg);
                const auto q_plain = apply_rotary_nd(q, pq, cfg);
                const auto k_plain = apply_rotary_nd(k, pk, cfg);
                for (std::size_t i = 0; i < dim; ++i) {
                    worst = std::max({worst, std::abs(qr[i] - q_plain[i]),
                                      std::abs(kr[i] - k_plain[i])});
                }
            }
        }
        suite.property("baseline-recovery", worst, 1e-12);
    }
    {
        double worst = 0.0;
        double min_sigma = 1.0;
        for (int rep = 0; rep < 20; ++rep) {
            const HeadAdaptParams p = random_svd_params(rng, 8, 2.0);
            worst = std::max(worst, orthogonality_defect(expm_fn(skew_to_matrix(p.skew_u))));
            worst = std::max(worst, orthogonality_defect(expm_fn(skew_to_matrix(p.skew_v))));
            for (double raw : p.sigma_raw) min_sigma = std::min(min_sigma, softplus(raw));
        }
        if (min_sigma <= 0.0) worst = 1.0;
        suite.property("svd-factor-validity", worst, 1e-10);
    }
    {
        double worst = 0.0;
        const std::size_t dim = 8;
        const RotaryConfig cfg = make_rotary_config(2, dim, 10000.0);
        for (int rep = 0; rep < 50; ++rep) {
            const HeadAdaptParams params = random_svd_params(rng, dim, 1.0);
            const Matrix a = build_adapt_matrix(params);
            const auto v = random_vec(rng, dim);
            std::vector<double> av(dim, 0.0);
            for (std::size_t i = 0; i < dim; ++i)
                for (std::size_t j = 0; j < dim; ++j) av[i] += a(i, j) * v[j];
            const GridPosition pos{rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)};
            const auto rotated = apply_rotary_nd(av, pos, cfg);
            double n0 = 0.0, n1 = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                n0 += av[i] * av[i];
                n1 += rotated[i] * rotated[i];
            }
            worst = std::max(worst, std::abs(std::sqrt(n0) - std::sqrt(n1)));
        }
        suite.property("rotation-isometry", worst, 1e-12);
    }
    {
        AdaptBank bank = AdaptBank::identity(4, 8, AdaptVariant::SVD, false);
        std::vector<Matrix> before;
        for (std::size_t h = 0; h < 4; ++h) before.push_back(build_adapt_matrix(bank.head(h)));
        bank.head(2).skew_u.entries[3] = 0.7;
        bank.head(2).sigma_raw[1] = 1.3;
        double violations = 0.0;
        for (std::size_t h = 0; h < 4; ++h) {
            const Matrix after = build_adapt_matrix(bank.head(h));
            const bool identical = after == before[h];
            if (h == 2 && identical) violations += 1.0;
            if (h != 2 && !identical) violations += 1.0;
        }
        suite.property("head-independence", violations, 0.0);
    }
    return suite.results;
}

// ---- autodiff ---------------------------------------------------------------

std::vector<PropertyResult> autodiff_suite(const VerifyOptions& opts) {
    Suite suite{"autodiff", {}};
    Rng rng(opts.seed + 3);

    {
        // every primitive against central differences through a scalar probe
        double worst = 0.0;
        auto probe = [&](const char* name, std::vector<std::pair<std::string, Matrix>> groups,
                         std::function<NodeId(Tape&, std::span<const NodeId>)> build) {
            const GradReport r = grad_check({std::move(groups), std::move(build)});
            worst = std::max(worst, r.max_rel_err);
            (void)name;
        };
        const Matrix a = random_matrix(rng, 3, 4, 0.5);
        const Matrix b = random_matrix(rng, 4, 3, 0.5);
        const Matrix sq = random_matrix(rng, 3, 3, 0.5);
        const Matrix c34 = random_matrix(rng, 3, 4, 0.5);
        auto sum_probe = [](Tape& t, NodeId x) { return t.sum_all(x); };

        probe("matmul", {{"a", a}, {"b", b}}, [&](Tape& t, std::span<const NodeId> ids) {
            return sum_probe(t, t.matmul(ids[0], ids[1]));
        });
        probe("matmul_nt", {{"a", a}, {"b", c34}}, [&](Tape& t, std::span<const NodeId> ids) {
            return sum_probe(t, t.matmul_nt(ids[0], ids[1]));
        });
        probe("add_sub_scale", {{"a", a}, {"b", c34}}, [&](Tape& t, std::span<const NodeId> ids) {
            return sum_probe(t, t.scale(t.sub(t.add(ids[0], ids[1]), ids[1]), 1.7));
        });
        probe("add_scaled", {{"a", a}, {"b", c34}}, [&](Tape& t, std::span<const NodeId> ids) {
            return sum_probe(t, t.add_scaled(ids[0], ids[1], -0.3));
        });
        probe("hadamard", {{"a", a}, {"b", c34}}, [&](Tape& t, std::span<const NodeId> ids) {
            return sum_probe(t, t.hadamard(ids[0], ids[1]));
        });
        probe("transpose", {{"a", a}}, [&](Tape& t, std::span<const NodeId> ids) {
            return sum_probe(t, t.transpose(ids[0]));
        });
        probe("softplus", {{"a", a}}, [&](Tape& t, std::span<const NodeId> ids) {
            return sum_probe(t, t.softplus(ids[0]));
        });
        probe("dot", {{"a", a}, {"b", c34}}, [&](Tape& t, std::span<const NodeId> ids) {
            return t.dot(ids[0], ids[1]);
        });
        probe("mean_rows", {{"a", a}}, [&](Tape& t, std::span<const NodeId> ids) {
            return sum_probe(t, t.mean_rows(ids[0]));
        });
        probe("slices", {{"a", a}}, [&](Tape& t, std::span<const NodeId> ids) {
            return sum_probe(t, t.slice_rows(t.slice_cols(ids[0], 1, 3), 1, 2));
        });
        probe("gather_rows", {{"a", a}}, [&](Tape& t, std::span<const NodeId> ids) {
            return sum_probe(t, t.gather_rows(ids[0], {0, 2, 2, 1}));
        });
        const Matrix softmax_w = random_matrix(rng, 3, 4, 1.0);
        probe("softmax_rows", {{"a", a}}, [&](Tape& t, std::span<const NodeId> ids) {
            return t.dot(t.softmax_rows(ids[0]), t.constant(softmax_w));
        });
        probe("skew_diag", {{"v", random_matrix(rng, 6, 1, 0.5)}, {"d", random_matrix(rng, 4, 1, 0.5)}},
              [&](Tape& t, std::span<const NodeId> ids) {
                  const NodeId s = t.skew_from_vector(ids[0]);
                  const NodeId d = t.diag_from_vector(ids[1]);
                  return sum_probe(t, t.matmul(s, d));
              });
        {
            auto table = RotaryPositions::make({{0.5, -1.5}, {2.0, 3.0}, {-1.0, 0.0}},
                                               make_rotary_config(2, 4, 100.0));
            const Matrix rot_w = random_matrix(rng, 3, 4, 1.0);
            probe("rotate_rows", {{"a", random_matrix(rng, 3, 4, 0.7)}},
                  [&](Tape& t, std::span<const NodeId> ids) {
                      return t.dot(t.rotate_rows(ids[0], table), t.constant(rot_w));
                  });
        }
        probe("cross_entropy", {{"a", random_matrix(rng, 3, 5, 1.0)}},
              [&](Tape& t, std::span<const NodeId> ids) {
                  return t.cross_entropy_rows(ids[0], {1, 4, 0});
              });
        const Matrix expm_w = random_matrix(rng, 4, 4, 1.0);
        probe("expm_taylor", {{"v", random_matrix(rng, 6, 1, 0.8)}},
              [&](Tape& t, std::span<const NodeId> ids) {
                  return t.dot(t.expm_taylor(t.skew_from_vector(ids[0])), t.constant(expm_w));
              });
        suite.property("primitive-gradients", worst, 1e-6);
    }
    {
        // HARoPE score gradients at identity init and 10 random points
        double worst = 0.0;
        const std::size_t dim = 8;
        const RotaryConfig rc = make_rotary_config(2, dim, 100.0);
        const Matrix qv = random_matrix(rng, 1, dim, 1.0);
        const Matrix kv = random_matrix(rng, 1, dim, 1.0);
        for (int point = 0; point < 11; ++point) {
            HeadAdaptParams p = point == 0 ? init_identity(dim, AdaptVariant::SVD)
                                           : random_svd_params(rng, dim, 1.0);
            auto pqc = RotaryPositions::make(
                {{rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)}}, rc);
            auto pkc = RotaryPositions::make(
                {{rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)}}, rc);
            GradCheckProblem problem;
            problem.groups = {{"skew_u", Matrix::column(p.skew_u.entries)},
                              {"skew_v", Matrix::column(p.skew_v.entries)},
                              {"sigma_raw", Matrix::column(p.sigma_raw)}};
            problem.build = [&](Tape& t, std::span<const NodeId> ids) {
                AdaptParamNodes nodes;
                nodes.skew_u = ids[0];
                nodes.skew_v = ids[1];
                nodes.sigma_raw = ids[2];
                const NodeId a = build_adapt_matrix_taped(t, nodes, {AdaptVariant::SVD, dim});
                const NodeId qr = t.rotate_rows(t.matmul_nt(t.constant(qv), a), pqc);
                const NodeId kr = t.rotate_rows(t.matmul_nt(t.constant(kv), a), pkc);
                return t.dot(qr, kr);
            };
            worst = std::max(worst, grad_check(problem).max_gated_err());
        }
        suite.property("harope-score-gradients", worst, 1e-4);
    }
    {
        // backward of a*f + b*g vs a*grad f + b*grad g, exact for
        // power-of-two coefficients
        const Matrix x0 = random_matrix(rng, 4, 4, 0.8);
        Tape tape;
        const NodeId x = tape.leaf(x0);
        const NodeId w1 = tape.constant(random_matrix(rng, 4, 4, 1.0));
        const NodeId w2 = tape.constant(random_matrix(rng, 4, 4, 1.0));
        const NodeId f = tape.dot(tape.softplus(x), w1);
        const NodeId g = tape.dot(tape.scale(x, 1.5), w2);
        const double ca = 2.0, cb = 0.5;  // dyadic, so scaling is exact
        const NodeId combined = tape.add_scaled(tape.scale(f, ca), g, cb);
        const NodeId leaves[] = {x};
        const Matrix grad_f = tape.backward(f, leaves)[0];
        const Matrix grad_g = tape.backward(g, leaves)[0];
        const Matrix grad_c = tape.backward(combined, leaves)[0];
        double worst = 0.0;
        for (std::size_t i = 0; i < grad_c.size(); ++i) {
            const double expect = cb * grad_g.data()[i] + ca * grad_f.data()[i];
            if (grad_c.data()[i] != expect) worst += 1.0;
        }
        suite.property("linearity-exact", worst, 0.0);
    }
    return suite.results;
}

// ---- attention ----------------------------------------------------------------

std::vector<PropertyResult> attention_suite(const VerifyOptions& opts) {
    Suite suite{"attention", {}};
    Rng rng(opts.seed + 4);

    const std::size_t n_heads = 2, head_dim = 8;
    const std::size_t d_model = n_heads * head_dim;

    auto make_batch = [&](std::size_t n_tokens, std::size_t grid) {
        TokenBatch b;
        b.n_tokens = n_tokens;
        b.model_dim = d_model;
        b.features = random_matrix(rng, n_tokens, d_model, 0.7);
        for (std::size_t t = 0; t < n_tokens; ++t) {
            b.positions.emplace_back(static_cast<double>(t / grid),
                                     static_cast<double>(t % grid));
        }
        return b;
    };
    auto base_cfg = [&](SchemeTag tag) {
        MHAConfig cfg;
        cfg.n_heads = n_heads;
        cfg.head_dim = head_dim;
        cfg.scheme.tag = tag;
        cfg.scheme.rotary =
            make_rotary_config(tag == SchemeTag::RoPE_1D ? 1 : 2, head_dim, 10000.0);
        cfg.w_q = random_matrix(rng, d_model, d_model, 0.3);
        cfg.w_k = random_matrix(rng, d_model, d_model, 0.3);
        cfg.w_v = random_matrix(rng, d_model, d_model, 0.3);
        cfg.w_o = random_matrix(rng, d_model, d_model, 0.3);
        return cfg;
    };

    {
        // rotary-family scores invariant under a common shift; learned APE not
        double worst = 0.0;
        for (SchemeTag tag :
             {SchemeTag::RoPE_1D, SchemeTag::RoPE_ND_axial, SchemeTag::HARoPE}) {
            MHAConfig cfg = base_cfg(tag);
            if (tag == SchemeTag::HARoPE) {
                cfg.scheme.bank = AdaptBank::identity(n_heads, head_dim, AdaptVariant::SVD, false);
                for (auto& rec : cfg.scheme.bank.params) {
                    for (double& e : rec.skew_u.entries) e = rng.uniform(-0.5, 0.5);
                    for (double& e : rec.skew_v.entries) e = rng.uniform(-0.5, 0.5);
                }
            }
            TokenBatch batch = make_batch(9, 3);
            if (tag == SchemeTag::RoPE_1D) {
                for (std::size_t t = 0; t < batch.n_tokens; ++t) {
                    batch.positions[t] = GridPosition(static_cast<double>(t));
                }
            }
            TokenBatch shifted = batch;
            for (auto& p : shifted.positions) {
                for (double& c : p.coords) c += 13.25;
            }
            for (std::size_t h = 0; h < n_heads; ++h) {
                const Matrix s0 = attention_scores(batch, cfg, h);
                const Matrix s1 = attention_scores(shifted, cfg, h);
                worst = std::max(worst, frobenius_distance(s0, s1));
            }
        }
        suite.property("translation-invariance", worst, 1e-9);

        MHAConfig ape = base_cfg(SchemeTag::APE_learned);
        ape.scheme.ape_grid = 8;
        ape.scheme.ape_table = random_matrix(rng, 64, d_model, 0.5);
        TokenBatch batch = make_batch(9, 3);
        TokenBatch shifted = batch;
        for (auto& p : shifted.positions) {
            for (double& c : p.coords) c += 2.0;
        }
        const double moved =
            frobenius_distance(attention_scores(batch, ape, 0), attention_scores(shifted, ape, 0));
        suite.property("ape-shift-sensitivity-witness", moved > 1e-6 ? 0.0 : 1.0, 0.0);
    }
    {
        double worst = 0.0;
        MHAConfig cfg = base_cfg(SchemeTag::RoPE_ND_axial);
        const TokenBatch batch = make_batch(9, 3);
        for (std::size_t h = 0; h < n_heads; ++h) {
            const Matrix scores = attention_scores(batch, cfg, h);
            Tape tape;
            const Matrix probs = tape.value(tape.softmax_rows(tape.constant(scores)));
            for (std::size_t i = 0; i < probs.rows(); ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < probs.cols(); ++j) s += probs(i, j);
                worst = std::max(worst, std::abs(s - 1.0));
            }
        }
        suite.property("softmax-rows-sum-one", worst, 1e-12);
    }
    {
        // shared bank: identical built matrices; head-wise with different
        // parameters: at least one pair differs
        AdaptBank shared = AdaptBank::identity(4, head_dim, AdaptVariant::SVD, true);
        shared.params[0].skew_u.entries[0] = 0.4;
        double violations = 0.0;
        const Matrix a0 = build_adapt_matrix(shared.head(0));
        for (std::size_t h = 1; h < 4; ++h) {
            if (!(build_adapt_matrix(shared.head(h)) == a0)) violations += 1.0;
        }
        AdaptBank separate = AdaptBank::identity(4, head_dim, AdaptVariant::SVD, false);
        separate.head(1).skew_v.entries[2] = 0.9;
        bool any_differ = false;
        for (std::size_t h = 1; h < 4; ++h) {
            if (!(build_adapt_matrix(separate.head(h)) ==
                  build_adapt_matrix(separate.head(0)))) {
                any_differ = true;
            }
        }
        if (!any_differ) violations += 1.0;
        suite.property("shared-vs-headwise-banks", violations, 0.0);
    }
    {
        double worst = 0.0;
        for (int rep = 0; rep < 20; ++rep) {
            MHAConfig rope = base_cfg(SchemeTag::RoPE_ND_axial);
            MHAConfig hrp = rope;
            hrp.scheme.tag = SchemeTag::HARoPE;
            hrp.scheme.bank = AdaptBank::identity(n_heads, head_dim, AdaptVariant::SVD, false);
            const TokenBatch batch = make_batch(9, 3);
            const Matrix out_rope = mha_forward(batch, rope).features;
            const Matrix out_hrp = mha_forward(batch, hrp).features;
            for (std::size_t i = 0; i < out_rope.size(); ++i) {
                worst = std::max(worst,
                                 std::abs(out_rope.data()[i] - out_hrp.data()[i]));
            }
        }
        suite.property("identity-harope-equals-axial", worst, 1e-10);
    }
    {
        // per-entry score oracle from the adapt module
        double worst = 0.0;
        MHAConfig cfg = base_cfg(SchemeTag::HARoPE);
        cfg.scheme.bank = AdaptBank::identity(n_heads, head_dim, AdaptVariant::SVD, false);
        for (auto& rec : cfg.scheme.bank.params) {
            for (double& e : rec.skew_u.entries) e = rng.uniform(-0.8, 0.8);
            for (double& e : rec.skew_v.entries) e = rng.uniform(-0.8, 0.8);
            for (double& e : rec.sigma_raw) e = rng.uniform(-0.5, 1.5);
        }
        const TokenBatch batch = make_batch(9, 3);
        const Matrix q_all = matmul(batch.features, cfg.w_q);
        const Matrix k_all = matmul(batch.features, cfg.w_k);
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
        for (std::size_t h = 0; h < n_heads; ++h) {
            const Matrix scores = attention_scores(batch, cfg, h);
            for (std::size_t i = 0; i < batch.n_tokens; ++i) {
                for (std::size_t j = 0; j < batch.n_tokens; ++j) {
                    std::vector<double> qi(head_dim), kj(head_dim);
                    for (std::size_t c = 0; c < head_dim; ++c) {
                        qi[c] = q_all(i, h * head_dim + c);
                        kj[c] = k_all(j, h * head_dim + c);
                    }
                    const GridPosition delta = batch.positions[j] - batch.positions[i];
                    const double oracle = adapted_score(qi, kj, delta, cfg.scheme.bank.head(h),
                                                        cfg.scheme.rotary) *
                                          inv_sqrt_d;
                    worst = std::max(worst, std::abs(scores(i, j) - oracle));
                }
            }
        }
        suite.property("scores-match-adapted-score", worst, 1e-10);
    }
    return suite.results;
}

}  // namespace

std::vector<std::string> verify_suite_names() {
    return {"numerics", "rotary", "adapt", "autodiff", "attention"};
}

bool is_verify_suite(const std::string& name) {
    for (const auto& s : verify_suite_names()) {
        if (s == name) return true;
    }
    return name == "all";
}

std::vector<PropertyResult> run_verify_suite(const std::string& name,
                                             const VerifyOptions& opts) {
    ExpmFn expm_fn = opts.expm_fn ? opts.expm_fn : [](const Matrix& m) { return expm(m); };
    if (name == "numerics") return numerics_suite(opts, expm_fn);
    if (name == "rotary") return rotary_suite(opts);
    if (name == "adapt") return adapt_suite(opts, expm_fn);
    if (name == "autodiff") return autodiff_suite(opts);
    if (name == "attention") return attention_suite(opts);
    if (name == "all") return run_all_verify_suites(opts);
    throw ConfigError("unknown verify suite '" + name + "'");
}

std::vector<PropertyResult> run_all_verify_suites(const VerifyOptions& opts) {
    std::vector<PropertyResult> all;
    for (const auto& name : verify_suite_names()) {
        const auto results = run_verify_suite(name, opts);
        all.insert(all.end(), results.begin(), results.end());
    }
    return all;
}

bool all_passed(const std::vector<PropertyResult>& results) {
    for (const auto& r : results) {
        if (!r.passed) return false;
    }
    return true;
}

std::string format_results(const std::vector<PropertyResult>& results) {
    std::string out;
    for (const auto& r : results) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "[%s] %-28s %-28s max_err=%-12.3e tol=%-9.0e\n",
                      r.passed ? "PASS" : "FAIL", r.suite.c_str(), r.name.c_str(), r.max_error,
                      r.tolerance);
        out += buf;
    }
    return out;
}

}  // namespace harope
