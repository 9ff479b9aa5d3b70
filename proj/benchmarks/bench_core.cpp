#include <benchmark/benchmark.h>

#include "harope/adapt.hpp"
#include "harope/attention.hpp"
#include "harope/rng.hpp"
#include "harope/tasks.hpp"

using namespace harope;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double s = 1.0) {
    Matrix m(r, c);
    for (double& v : m.values()) v = s * rng.normal();
    return m;
}

void BM_Matmul(benchmark::State& state) {
    const std::size_t n = state.range(0);
    Rng rng(1);
    const Matrix a = random_matrix(rng, n, n);
    const Matrix b = random_matrix(rng, n, n);
    for (auto _ : state) {
        benchmark::DoNotOptimize(matmul(a, b));
    }
    state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_Expm(benchmark::State& state) {
    const std::size_t dim = state.range(0);
    Rng rng(2);
    SkewParams p = SkewParams::zeros(dim);
    for (double& e : p.entries) e = rng.uniform(-1.0, 1.0);
    const Matrix s = skew_to_matrix(p);
    for (auto _ : state) {
        benchmark::DoNotOptimize(expm(s));
    }
}
BENCHMARK(BM_Expm)->Arg(16)->Arg(64);

void BM_BuildAdaptSVD(benchmark::State& state) {
    Rng rng(3);
    HeadAdaptParams p = init_identity(state.range(0), AdaptVariant::SVD);
    for (double& e : p.skew_u.entries) e = rng.uniform(-1.0, 1.0);
    for (double& e : p.skew_v.entries) e = rng.uniform(-1.0, 1.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(build_adapt_matrix(p));
    }
}
BENCHMARK(BM_BuildAdaptSVD)->Arg(16)->Arg(64);

void BM_ApplyRotaryNd(benchmark::State& state) {
    Rng rng(4);
    const RotaryConfig cfg = make_rotary_config(2, 64, 10000.0);
    std::vector<double> v(64);
    for (double& x : v) x = rng.normal();
    const GridPosition pos{3.0, 7.0};
    for (auto _ : state) {
        auto out = apply_rotary_nd(v, pos, cfg);
        benchmark::DoNotOptimize(out);
    }
}
BENCHMARK(BM_ApplyRotaryNd);

TokenBatch bench_batch(Rng& rng, std::size_t n_tokens, std::size_t d_model) {
    TokenBatch batch;
    batch.n_tokens = n_tokens;
    batch.model_dim = d_model;
    batch.features = random_matrix(rng, n_tokens, d_model, 0.5);
    const std::size_t side = 16;
    for (std::size_t t = 0; t < n_tokens; ++t) {
        batch.positions.emplace_back(double(t / side), double(t % side));
    }
    return batch;
}

MHAConfig bench_config(Rng& rng, SchemeTag tag, std::size_t heads, std::size_t head_dim) {
    const std::size_t d = heads * head_dim;
    MHAConfig cfg;
    cfg.n_heads = heads;
    cfg.head_dim = head_dim;
    cfg.scheme.tag = tag;
    cfg.scheme.rotary = make_rotary_config(2, head_dim, 10000.0);
    if (tag == SchemeTag::HARoPE) {
        cfg.scheme.bank = AdaptBank::identity(heads, head_dim, AdaptVariant::SVD, false);
        cfg.scheme.cache_adapt();
    }
    cfg.w_q = random_matrix(rng, d, d, 0.1);
    cfg.w_k = random_matrix(rng, d, d, 0.1);
    cfg.w_v = random_matrix(rng, d, d, 0.1);
    cfg.w_o = random_matrix(rng, d, d, 0.1);
    return cfg;
}

void BM_MhaForwardRope(benchmark::State& state) {
    Rng rng(5);
    const MHAConfig cfg = bench_config(rng, SchemeTag::RoPE_ND_axial, 8, 64);
    const TokenBatch batch = bench_batch(rng, state.range(0), 512);
    for (auto _ : state) {
        benchmark::DoNotOptimize(mha_forward(batch, cfg));
    }
}
BENCHMARK(BM_MhaForwardRope)->Arg(64)->Arg(256);

void BM_MhaForwardHarope(benchmark::State& state) {
    Rng rng(5);
    const MHAConfig cfg = bench_config(rng, SchemeTag::HARoPE, 8, 64);
    const TokenBatch batch = bench_batch(rng, state.range(0), 512);
    for (auto _ : state) {
        benchmark::DoNotOptimize(mha_forward(batch, cfg));
    }
}
BENCHMARK(BM_MhaForwardHarope)->Arg(64)->Arg(256);

void BM_TrainStep(benchmark::State& state) {
    const TaskInstance task = gen_offset_task(0, 4, 128);
    ModelSpec spec;
    spec.n_classes = task.n_classes;
    spec.scheme = SchemeTag::HARoPE;
    spec.grid = 4;
    ToyModel model(spec, 0);
    Rng rng(0);
    Tape tape;
    std::vector<std::size_t> idx(64);
    for (auto _ : state) {
        for (auto& i : idx) i = rng.below(task.inputs.size());
        tape.reset();
        const auto leaves = model.register_leaves(tape);
        const NodeId loss = model.batch_loss_taped(tape, leaves, task, idx, 1e-3);
        benchmark::DoNotOptimize(tape.backward(loss, leaves));
    }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
