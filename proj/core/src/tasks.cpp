#include "harope/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "harope/rng.hpp"

namespace harope {

void TaskInstance::validate() const {
    if (inputs.size() != labels.size()) throw ShapeError("task: inputs/labels length mismatch");
    for (std::size_t l : labels) {
        if (l >= n_classes) throw DomainError("task: label out of range");
    }
}

namespace {

constexpr std::size_t kChBackground = 0;
constexpr std::size_t kChMarkerA = 1;
constexpr std::size_t kChMarkerB = 2;
constexpr std::size_t kChBias = 3;

TokenBatch grid_batch(std::size_t gx, std::size_t gy) {
    TokenBatch b;
    b.n_tokens = gx * gy;
    b.model_dim = kTaskFeatureDim;
    b.features = Matrix(b.n_tokens, kTaskFeatureDim);
    b.positions.reserve(b.n_tokens);
    for (std::size_t x = 0; x < gx; ++x) {
        for (std::size_t y = 0; y < gy; ++y) {
            const std::size_t t = x * gy + y;
            b.features(t, kChBackground) = 1.0;
            b.features(t, kChBias) = 1.0;
            b.positions.emplace_back(static_cast<double>(x), static_cast<double>(y));
        }
    }
    return b;
}

void set_marker(TokenBatch& b, std::size_t gy, std::size_t x, std::size_t y,
                std::size_t channel) {
    const std::size_t t = x * gy + y;
    b.features(t, kChBackground) = 0.0;
    b.features(t, channel) = 1.0;
}

long sample_component(Rng& rng, int sign, std::size_t g) {
    if (sign == 0) return 0;
    return sign * rng.range_int(1, static_cast<std::int64_t>(g) - 1);
}

// uniform base coordinate such that base and base+delta stay inside [0, g)
std::size_t sample_base(Rng& rng, long delta, std::size_t g) {
    const long lo = std::max<long>(0, -delta);
    const long hi = static_cast<long>(g) - 1 - std::max<long>(0, delta);
    return static_cast<std::size_t>(rng.range_int(lo, hi));
}

}  // namespace

const char* const kOffsetDirectionNames[8] = {"N", "NE", "E", "SE", "S", "SW", "W", "NW"};

std::size_t offset_direction_class(long dx, long dy) {
    const int sx = (dx > 0) - (dx < 0);
    const int sy = (dy > 0) - (dy < 0);
    if (sx == 0 && sy == 0) throw DomainError("direction class: zero offset");
    if (sx > 0 && sy == 0) return 0;  // N
    if (sx > 0 && sy > 0) return 1;   // NE
    if (sx == 0 && sy > 0) return 2;  // E
    if (sx < 0 && sy > 0) return 3;   // SE
    if (sx < 0 && sy == 0) return 4;  // S
    if (sx < 0 && sy < 0) return 5;   // SW
    if (sx == 0 && sy < 0) return 6;  // W
    return 7;                         // NW
}

TaskInstance gen_offset_task(std::uint64_t seed, std::size_t grid, std::size_t n_samples) {
    if (grid < 2) throw DomainError("offset task: grid must be >= 2");
    static constexpr int kSigns[8][2] = {{+1, 0}, {+1, +1}, {0, +1}, {-1, +1},
                                         {-1, 0}, {-1, -1}, {0, -1}, {+1, -1}};
    TaskInstance task;
    task.name = "offset";
    task.seed = seed;
    task.grid = grid;
    task.n_classes = 8;
    for (const char* n : kOffsetDirectionNames) task.class_names.emplace_back(n);

    Rng rng(seed);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const std::size_t cls = i % 8;  // stratified for exact label balance
        const long dx = sample_component(rng, kSigns[cls][0], grid);
        const long dy = sample_component(rng, kSigns[cls][1], grid);
        const std::size_t xa = sample_base(rng, dx, grid);
        const std::size_t ya = sample_base(rng, dy, grid);
        TokenBatch b = grid_batch(grid, grid);
        set_marker(b, grid, xa, ya, kChMarkerA);
        set_marker(b, grid, xa + dx, ya + dy, kChMarkerB);
        task.inputs.push_back(std::move(b));
        task.labels.push_back(cls);
    }
    return task;
}

// The two axes are deliberately mismatched in scale and complexity. x is a
// fine integer lattice of g columns carrying the exact offset. y has 3 rows
// whose coordinates are redrawn per sample as ordered reals on a coarse,
// jittered scale: only the sign of a y-offset is ever informative, while its
// magnitude varies wildly and leaks phase noise into every high-frequency
// y-plane. Suppressing that noise while keeping the sign is where a scheme's
// frequency budget gets tested.
inline constexpr std::size_t kAnisoRows = 3;
inline constexpr double kAnisoYScale = 8.0;

TaskInstance gen_anisotropic_task(std::uint64_t seed, std::size_t grid, std::size_t n_samples) {
    if (grid < 4) throw DomainError("anisotropic task: grid must be >= 4");
    TaskInstance task;
    task.name = "anisotropic";
    task.seed = seed;
    task.grid = grid;
    task.n_classes = (2 * grid - 1) * 2;
    for (long dx = -(static_cast<long>(grid) - 1); dx <= static_cast<long>(grid) - 1; ++dx) {
        task.class_names.push_back("dx=" + std::to_string(dx) + ",dy-");
        task.class_names.push_back("dx=" + std::to_string(dx) + ",dy+");
    }

    Rng rng(seed);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const std::size_t cls = i % task.n_classes;
        const long dx = static_cast<long>(cls / 2) - (static_cast<long>(grid) - 1);
        const int sy = (cls % 2) ? +1 : -1;
        const long drow = sy * rng.range_int(1, kAnisoRows - 1);
        const std::size_t xa = sample_base(rng, dx, grid);
        const std::size_t row_a = sample_base(rng, drow, kAnisoRows);

        // ordered random row coordinates: row r sits at (r + u_r) * scale with
        // u_r in [0, 0.5], so adjacent-row gaps stay in [scale/2, 3*scale/2]
        // and the sign is never borderline while magnitudes vary freely
        double row_y[kAnisoRows];
        for (std::size_t r = 0; r < kAnisoRows; ++r) {
            row_y[r] = (static_cast<double>(r) + 0.5 * rng.uniform()) * kAnisoYScale;
        }

        TokenBatch b = grid_batch(grid, kAnisoRows);
        for (std::size_t t = 0; t < b.n_tokens; ++t) {
            const std::size_t r = t % kAnisoRows;
            b.positions[t].coords[1] = row_y[r];
        }
        set_marker(b, kAnisoRows, xa, row_a, kChMarkerA);
        set_marker(b, kAnisoRows, xa + dx, row_a + drow, kChMarkerB);
        task.inputs.push_back(std::move(b));
        task.labels.push_back(cls);
    }
    return task;
}

TaskInstance gen_headmix_task(std::uint64_t seed, std::size_t grid, std::size_t n_samples) {
    if (grid < 4) throw DomainError("headmix task: grid must be >= 4");
    TaskInstance task;
    task.name = "headmix";
    task.seed = seed;
    task.grid = grid;
    task.n_classes = 4;
    task.class_names = {"neither", "local", "longrange", "both"};

    const double far = static_cast<double>(grid) / 2.0;
    Rng rng(seed);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const std::size_t cls = i % 4;
        const bool want_local = cls & 1u;
        const bool want_long = cls & 2u;
        std::size_t cells[3];
        for (std::size_t attempt = 0;; ++attempt) {
            if (attempt > 200000) {
                throw DomainError("headmix task: could not realize class " +
                                  std::to_string(cls) + " on grid " + std::to_string(grid));
            }
            for (auto& c : cells) c = rng.below(grid * grid);
            if (cells[0] == cells[1] || cells[0] == cells[2] || cells[1] == cells[2]) continue;
            bool local = false, longrange = false;
            for (int a = 0; a < 3; ++a) {
                for (int b = a + 1; b < 3; ++b) {
                    const long ax = cells[a] / grid, ay = cells[a] % grid;
                    const long bx = cells[b] / grid, by = cells[b] % grid;
                    const long manhattan = std::labs(ax - bx) + std::labs(ay - by);
                    const double euclid = std::hypot(static_cast<double>(ax - bx),
                                                     static_cast<double>(ay - by));
                    if (manhattan == 1) local = true;
                    if (euclid > far) longrange = true;
                }
            }
            if (local == want_local && longrange == want_long) break;
        }
        TokenBatch b = grid_batch(grid, grid);
        for (std::size_t c : cells) set_marker(b, grid, c / grid, c % grid, kChMarkerA);
        task.inputs.push_back(std::move(b));
        task.labels.push_back(cls);
    }
    return task;
}

std::string TaskInstance::dump() const {
    std::string out;
    out += "task " + name + "\n";
    out += "seed " + std::to_string(seed) + "\n";
    out += "grid " + std::to_string(grid) + "\n";
    out += "classes " + std::to_string(n_classes) + "\n";
    if (!class_names.empty()) {
        out += "class_names";
        for (const auto& n : class_names) out += " " + n;
        out += "\n";
    }
    out += "samples " + std::to_string(inputs.size()) + "\n";
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        out += "sample " + std::to_string(i) + " label " + std::to_string(labels[i]);
        const TokenBatch& b = inputs[i];
        for (std::size_t t = 0; t < b.n_tokens; ++t) {
            if (b.features(t, kChBackground) != 0.0) continue;
            const char mark = b.features(t, kChMarkerA) != 0.0 ? 'a' : 'b';
            out += std::string(" ") + mark + "=(" +
                   format_double(b.positions[t].coords[0]) + "," +
                   format_double(b.positions[t].coords[1]) + ")";
        }
        out += "\n";
    }
    return out;
}

// ---- model -----------------------------------------------------------------

RotaryConfig ModelSpec::rotary() const {
    if (scheme == SchemeTag::RoPE_1D) return make_rotary_config(1, head_dim, rope_base);
    return make_rotary_config(axes, head_dim, rope_base);
}

void ModelSpec::validate() const {
    if (blocks == 0 || n_heads == 0 || head_dim == 0) throw ConfigError("model: zero dims");
    if (n_classes < 2) throw ConfigError("model: need at least 2 classes");
    if (scheme == SchemeTag::RoPE_1D) {
        if (head_dim % 2 != 0) throw ConfigError("model: head_dim must be even for rope_1d");
    } else if (scheme == SchemeTag::RoPE_ND_axial || scheme == SchemeTag::HARoPE) {
        if (head_dim % (2 * axes) != 0) {
            throw ConfigError("model: head_dim not divisible by 2*axes");
        }
    }
    if (scheme == SchemeTag::APE_learned && grid == 0) {
        throw ConfigError("model: learned APE needs a grid extent");
    }
}

AdaptParamsM AdaptParamsM::identity(std::size_t dim, AdaptVariant variant) {
    AdaptParamsM m;
    m.variant = variant;
    m.dim = dim;
    const HeadAdaptParams p = init_identity(dim, variant);
    m.from_params(p);
    return m;
}

HeadAdaptParams AdaptParamsM::to_params() const {
    HeadAdaptParams p;
    p.dim = dim;
    p.variant = variant;
    switch (variant) {
        case AdaptVariant::Identity:
            break;
        case AdaptVariant::Normal:
            p.dense = dense;
            break;
        case AdaptVariant::Orthogonal:
            p.skew_v.dim = dim;
            p.skew_v.entries.assign(skew_v.data(), skew_v.data() + skew_v.size());
            break;
        case AdaptVariant::SVD:
            p.skew_u.dim = dim;
            p.skew_u.entries.assign(skew_u.data(), skew_u.data() + skew_u.size());
            p.skew_v.dim = dim;
            p.skew_v.entries.assign(skew_v.data(), skew_v.data() + skew_v.size());
            p.sigma_raw.assign(sigma_raw.data(), sigma_raw.data() + sigma_raw.size());
            break;
    }
    return p;
}

void AdaptParamsM::from_params(const HeadAdaptParams& p) {
    validate(p);
    variant = p.variant;
    dim = p.dim;
    skew_u = Matrix();
    skew_v = Matrix();
    sigma_raw = Matrix();
    dense = Matrix();
    switch (p.variant) {
        case AdaptVariant::Identity:
            break;
        case AdaptVariant::Normal:
            dense = p.dense;
            break;
        case AdaptVariant::Orthogonal:
            skew_v = Matrix::column(p.skew_v.entries);
            break;
        case AdaptVariant::SVD:
            skew_u = Matrix::column(p.skew_u.entries);
            skew_v = Matrix::column(p.skew_v.entries);
            sigma_raw = Matrix::column(p.sigma_raw);
            break;
    }
}

namespace {

Matrix xavier(Rng rng, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix m(fan_in, fan_out);
    for (double& v : m.values()) v = rng.uniform(-limit, limit);
    return m;
}

constexpr std::uint64_t kSaltWIn = 0x11;
constexpr std::uint64_t kSaltCls = 0x21;
constexpr std::uint64_t kSaltApe = 0x31;
constexpr std::uint64_t block_salt(std::size_t b, std::size_t k) { return 0x100 + b * 16 + k; }

}  // namespace

ToyModel::ToyModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    const Rng root(seed);
    const std::size_t d = spec_.model_dim();
    w_in_ = xavier(root.fork(kSaltWIn), spec_.feat_dim, d);
    blocks_.resize(spec_.blocks);
    for (std::size_t b = 0; b < spec_.blocks; ++b) {
        blocks_[b].w_q = xavier(root.fork(block_salt(b, 0)), d, d);
        blocks_[b].w_k = xavier(root.fork(block_salt(b, 1)), d, d);
        blocks_[b].w_v = xavier(root.fork(block_salt(b, 2)), d, d);
        blocks_[b].w_o = xavier(root.fork(block_salt(b, 3)), d, d);
        if (spec_.scheme == SchemeTag::HARoPE) {
            const std::size_t records = spec_.shared_adapt ? 1 : spec_.n_heads;
            for (std::size_t r = 0; r < records; ++r) {
                blocks_[b].adapt.push_back(
                    AdaptParamsM::identity(spec_.head_dim, spec_.variant));
            }
        }
    }
    w_cls_ = xavier(root.fork(kSaltCls), d, spec_.n_classes);
    b_cls_ = Matrix(1, spec_.n_classes);
    if (spec_.scheme == SchemeTag::APE_learned) {
        Rng ape_rng = root.fork(kSaltApe);
        std::size_t rows = 1;
        for (std::size_t a = 0; a < spec_.axes; ++a) rows *= spec_.grid;
        ape_table_ = Matrix(rows, d);
        for (double& v : ape_table_.values()) v = 0.02 * ape_rng.normal();
    }
}

std::vector<std::pair<std::string, Matrix*>> ToyModel::parameters() {
    // callers get mutable views, so any cached built state may be stale
    eval_cache_valid_ = false;
    return const_cast<const ToyModel*>(this)->enumerate_params();
}

std::vector<std::pair<std::string, Matrix*>> ToyModel::enumerate_params() const {
    auto& self = const_cast<ToyModel&>(*this);
    std::vector<std::pair<std::string, Matrix*>> out;
    out.emplace_back("w_in", &self.w_in_);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const std::string prefix = "block" + std::to_string(b) + ".";
        out.emplace_back(prefix + "w_q", &self.blocks_[b].w_q);
        out.emplace_back(prefix + "w_k", &self.blocks_[b].w_k);
        out.emplace_back(prefix + "w_v", &self.blocks_[b].w_v);
        out.emplace_back(prefix + "w_o", &self.blocks_[b].w_o);
        for (std::size_t r = 0; r < blocks_[b].adapt.size(); ++r) {
            const std::string ap = prefix + "adapt" + std::to_string(r) + ".";
            AdaptParamsM& m = self.blocks_[b].adapt[r];
            switch (m.variant) {
                case AdaptVariant::Identity:
                    break;
                case AdaptVariant::Normal:
                    out.emplace_back(ap + "dense", &m.dense);
                    break;
                case AdaptVariant::Orthogonal:
                    out.emplace_back(ap + "skew_v", &m.skew_v);
                    break;
                case AdaptVariant::SVD:
                    out.emplace_back(ap + "skew_u", &m.skew_u);
                    out.emplace_back(ap + "skew_v", &m.skew_v);
                    out.emplace_back(ap + "sigma_raw", &m.sigma_raw);
                    break;
            }
        }
    }
    out.emplace_back("cls.w", &self.w_cls_);
    out.emplace_back("cls.b", &self.b_cls_);
    if (spec_.scheme == SchemeTag::APE_learned) out.emplace_back("ape.table", &self.ape_table_);
    return out;
}

std::vector<std::pair<std::string, const Matrix*>> ToyModel::parameters() const {
    std::vector<std::pair<std::string, const Matrix*>> out;
    for (auto& [name, ptr] : enumerate_params()) out.emplace_back(name, ptr);
    return out;
}

std::vector<NodeId> ToyModel::register_leaves(Tape& tape) const {
    std::vector<NodeId> ids;
    for (const auto& [name, ptr] : enumerate_params()) ids.push_back(tape.leaf(*ptr));
    return ids;
}

GridPosition ToyModel::scheme_position(const GridPosition& p) const {
    if (spec_.scheme == SchemeTag::RoPE_1D && p.axes() == 2) {
        return GridPosition(p.coords[0] * static_cast<double>(spec_.grid) + p.coords[1]);
    }
    return p;
}

NodeId ToyModel::batch_loss_taped(Tape& tape, std::span<const NodeId> leaves,
                                  const TaskInstance& task,
                                  std::span<const std::size_t> sample_idx,
                                  double lambda) const {
    if (sample_idx.empty()) throw DomainError("batch loss: empty batch");

    // walk the leaf list in parameters() order
    std::size_t cursor = 0;
    auto next = [&]() { return leaves[cursor++]; };
    const NodeId w_in = next();
    struct BlockNodes {
        MHAParamNodes params;
    };
    std::vector<BlockNodes> bn(blocks_.size());
    std::vector<MHAShape> shapes(blocks_.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        MHAShape& sh = shapes[b];
        sh.n_heads = spec_.n_heads;
        sh.head_dim = spec_.head_dim;
        sh.tag = spec_.scheme;
        if (sh.tag == SchemeTag::RoPE_1D || sh.tag == SchemeTag::RoPE_ND_axial ||
            sh.tag == SchemeTag::HARoPE) {
            sh.rotary = spec_.rotary();
        }
        sh.bank_shared = spec_.shared_adapt;
        MHAParamNodes& pn = bn[b].params;
        pn.w_q = next();
        pn.w_k = next();
        pn.w_v = next();
        pn.w_o = next();
        for (const AdaptParamsM& m : blocks_[b].adapt) {
            sh.bank.push_back({m.variant, m.dim});
            AdaptParamNodes an;
            switch (m.variant) {
                case AdaptVariant::Identity:
                    break;
                case AdaptVariant::Normal:
                    an.dense = next();
                    break;
                case AdaptVariant::Orthogonal:
                    an.skew_v = next();
                    break;
                case AdaptVariant::SVD:
                    an.skew_u = next();
                    an.skew_v = next();
                    an.sigma_raw = next();
                    break;
            }
            pn.bank.push_back(an);
        }
    }
    const NodeId cls_w = next();
    const NodeId cls_b = next();
    const NodeId ape = spec_.scheme == SchemeTag::APE_learned ? next() : 0;

    // per-step invariants (built A matrices, W_o blocks) recorded once
    std::vector<MHASharedNodes> shared(blocks_.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        shared[b] = mha_shared_nodes(tape, shapes[b], bn[b].params);
    }

    // The whole batch rides as one stacked (B*n_tokens) x model_dim matrix so
    // the projections run as a few large matmuls; attention itself stays
    // per-sample via row slices.
    const bool rotary_scheme = spec_.scheme == SchemeTag::RoPE_1D ||
                               spec_.scheme == SchemeTag::RoPE_ND_axial ||
                               spec_.scheme == SchemeTag::HARoPE;
    const std::size_t batch = sample_idx.size();
    const std::size_t n_tokens = task.inputs[sample_idx[0]].n_tokens;
    const std::size_t d_model = spec_.model_dim();

    Matrix stacked_features(batch * n_tokens, spec_.feat_dim);
    std::vector<GridPosition> stacked_positions;
    stacked_positions.reserve(batch * n_tokens);
    for (std::size_t si = 0; si < batch; ++si) {
        const TokenBatch& sample = task.inputs[sample_idx[si]];
        if (sample.n_tokens != n_tokens) {
            throw ShapeError("batch loss: samples must share the token count");
        }
        std::copy(sample.features.data(), sample.features.data() + sample.features.size(),
                  stacked_features.row(si * n_tokens));
        for (const auto& p : sample.positions) stacked_positions.push_back(scheme_position(p));
    }
    std::shared_ptr<const RotaryPositions> table;
    if (rotary_scheme) {
        table = RotaryPositions::make(stacked_positions, spec_.rotary());
    }

    NodeId h = tape.matmul(tape.constant(std::move(stacked_features)), w_in);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(spec_.head_dim));
    std::vector<NodeId> attn_parts(batch);
    std::vector<NodeId> ce_parts(batch);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        // APE schemes add the positional vector before every block's
        // projections, matching mha_forward
        NodeId x = h;
        if (spec_.scheme == SchemeTag::APE_learned) {
            std::vector<std::size_t> idx;
            idx.reserve(batch * n_tokens);
            for (std::size_t si = 0; si < batch; ++si) {
                for (const auto& p : task.inputs[sample_idx[si]].positions) {
                    idx.push_back(ape_table_index(p, spec_.grid, ape_table_.rows()));
                }
            }
            x = tape.add(x, tape.gather_rows(ape, std::move(idx)));
        } else if (spec_.scheme == SchemeTag::APE_sinusoidal) {
            Matrix pe(batch * n_tokens, d_model);
            for (std::size_t si = 0; si < batch; ++si) {
                for (std::size_t t = 0; t < n_tokens; ++t) {
                    const auto row = sinusoidal_encoding(
                        task.inputs[sample_idx[si]].positions[t], d_model);
                    std::copy(row.begin(), row.end(), pe.row(si * n_tokens + t));
                }
            }
            x = tape.add(x, tape.constant(std::move(pe)));
        }

        const NodeId q_all = tape.matmul(x, bn[b].params.w_q);
        const NodeId k_all = tape.matmul(x, bn[b].params.w_k);
        const NodeId v_all = tape.matmul(x, bn[b].params.w_v);
        const std::size_t d = spec_.head_dim;
        std::vector<NodeId> q_heads(spec_.n_heads), k_heads(spec_.n_heads),
            v_heads(spec_.n_heads);
        for (std::size_t head = 0; head < spec_.n_heads; ++head) {
            NodeId q = tape.slice_cols(q_all, head * d, d);
            NodeId k = tape.slice_cols(k_all, head * d, d);
            if (spec_.scheme == SchemeTag::HARoPE) {
                const NodeId a = shared[b].adapt[spec_.shared_adapt ? 0 : head];
                q = tape.matmul_nt(q, a);
                k = tape.matmul_nt(k, a);
            }
            if (rotary_scheme) {
                q = tape.rotate_rows(q, table);
                k = tape.rotate_rows(k, table);
            }
            q_heads[head] = q;
            k_heads[head] = k;
            v_heads[head] = tape.slice_cols(v_all, head * d, d);
        }
        for (std::size_t si = 0; si < batch; ++si) {
            NodeId attn = 0;
            for (std::size_t head = 0; head < spec_.n_heads; ++head) {
                const NodeId qs = tape.slice_rows(q_heads[head], si * n_tokens, n_tokens);
                const NodeId ks = tape.slice_rows(k_heads[head], si * n_tokens, n_tokens);
                const NodeId vs = tape.slice_rows(v_heads[head], si * n_tokens, n_tokens);
                const NodeId probs =
                    tape.softmax_rows(tape.scale(tape.matmul_nt(qs, ks), inv_sqrt_d));
                const NodeId projected =
                    tape.matmul(tape.matmul(probs, vs), shared[b].wo_rows[head]);
                attn = head == 0 ? projected : tape.add(attn, projected);
            }
            attn_parts[si] = attn;
        }
        h = tape.add(h, tape.stack_rows(attn_parts));  // residual
    }
    for (std::size_t si = 0; si < batch; ++si) {
        const NodeId pooled = tape.mean_rows(tape.slice_rows(h, si * n_tokens, n_tokens));
        const NodeId logits = tape.add(tape.matmul(pooled, cls_w), cls_b);
        ce_parts[si] = tape.cross_entropy_rows(logits, {task.labels[sample_idx[si]]});
    }
    NodeId total = ce_parts[0];
    for (std::size_t si = 1; si < batch; ++si) total = tape.add(total, ce_parts[si]);
    NodeId loss = tape.scale(total, 1.0 / static_cast<double>(batch));

    if (spec_.scheme == SchemeTag::HARoPE && spec_.variant == AdaptVariant::SVD &&
        lambda != 0.0) {
        NodeId reg = 0;
        bool have_reg = false;
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            for (std::size_t r = 0; r < bn[b].params.bank.size(); ++r) {
                const NodeId term = sigma_regularizer_taped(tape, bn[b].params.bank[r],
                                                            shapes[b].bank[r]);
                reg = have_reg ? tape.add(reg, term) : term;
                have_reg = true;
            }
        }
        if (have_reg) loss = tape.add_scaled(loss, reg, lambda);
    }
    return loss;
}

MHAConfig ToyModel::block_config(std::size_t b) const {
    MHAConfig cfg;
    cfg.n_heads = spec_.n_heads;
    cfg.head_dim = spec_.head_dim;
    cfg.w_q = blocks_[b].w_q;
    cfg.w_k = blocks_[b].w_k;
    cfg.w_v = blocks_[b].w_v;
    cfg.w_o = blocks_[b].w_o;
    cfg.scheme.tag = spec_.scheme;
    if (cfg.scheme.uses_rotary()) cfg.scheme.rotary = spec_.rotary();
    if (spec_.scheme == SchemeTag::HARoPE) {
        AdaptBank bank;
        bank.heads = spec_.n_heads;
        bank.shared = spec_.shared_adapt;
        for (const auto& m : blocks_[b].adapt) bank.params.push_back(m.to_params());
        cfg.scheme.bank = std::move(bank);
    }
    if (spec_.scheme == SchemeTag::APE_learned) {
        cfg.scheme.ape_table = ape_table_;
        cfg.scheme.ape_grid = spec_.grid;
    }
    return cfg;
}

void ToyModel::refresh_eval_cache() const {
    eval_cache_.clear();
    eval_cache_.reserve(blocks_.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        MHAConfig cfg = block_config(b);
        cfg.scheme.cache_adapt();
        eval_cache_.push_back(std::move(cfg));
    }
    eval_cache_valid_ = true;
}

Matrix ToyModel::logits(const TokenBatch& input) const {
    if (!eval_cache_valid_) refresh_eval_cache();
    if (input.model_dim != spec_.feat_dim) {
        throw ShapeError("model: input feature dim " + std::to_string(input.model_dim) +
                         " != " + std::to_string(spec_.feat_dim));
    }
    TokenBatch h;
    h.n_tokens = input.n_tokens;
    h.model_dim = spec_.model_dim();
    h.features = matmul(input.features, w_in_);
    h.positions.reserve(input.n_tokens);
    for (const auto& p : input.positions) h.positions.push_back(scheme_position(p));

    for (const MHAConfig& cfg : eval_cache_) {
        TokenBatch out = mha_forward(h, cfg);
        add_in_place(h.features, out.features);
    }
    Matrix pooled(1, h.model_dim);
    for (std::size_t t = 0; t < h.n_tokens; ++t)
        for (std::size_t j = 0; j < h.model_dim; ++j) pooled(0, j) += h.features(t, j);
    for (double& v : pooled.values()) v /= static_cast<double>(h.n_tokens);
    Matrix out = matmul(pooled, w_cls_);
    add_in_place(out, b_cls_);
    return out;
}

double ToyModel::sigma_penalty() const {
    if (spec_.scheme != SchemeTag::HARoPE || spec_.variant != AdaptVariant::SVD) return 0.0;
    double s = 0.0;
    for (const auto& block : blocks_) {
        for (const auto& m : block.adapt) s += sigma_regularizer(m.to_params());
    }
    return s;
}

std::vector<AdaptBank> ToyModel::adapt_banks() const {
    std::vector<AdaptBank> banks;
    banks.reserve(blocks_.size());
    for (const auto& block : blocks_) {
        AdaptBank bank;
        bank.heads = spec_.n_heads;
        bank.shared = spec_.shared_adapt;
        if (spec_.scheme == SchemeTag::HARoPE) {
            for (const auto& m : block.adapt) bank.params.push_back(m.to_params());
        } else {
            // non-adaptive schemes export identity records for inspection
            bank.shared = false;
            for (std::size_t h = 0; h < spec_.n_heads; ++h) {
                bank.params.push_back(init_identity(spec_.head_dim, AdaptVariant::Identity));
            }
        }
        banks.push_back(std::move(bank));
    }
    return banks;
}

void ToyModel::set_adapt_banks(const std::vector<AdaptBank>& banks) {
    if (spec_.scheme != SchemeTag::HARoPE) {
        throw ConfigError("set_adapt_banks: model has no adaptation parameters");
    }
    if (banks.size() != blocks_.size()) throw ConfigError("set_adapt_banks: block count");
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        banks[b].validate_bank();
        if (banks[b].params.size() != blocks_[b].adapt.size()) {
            throw ConfigError("set_adapt_banks: record count mismatch");
        }
        for (std::size_t r = 0; r < banks[b].params.size(); ++r) {
            blocks_[b].adapt[r].from_params(banks[b].params[r]);
        }
    }
    eval_cache_valid_ = false;
}

// ---- training ---------------------------------------------------------------

std::string TrainRun::metrics_csv() const {
    std::string out = "step,loss,train_acc,eval_acc,sigma_penalty\n";
    for (const auto& p : history) {
        out += std::to_string(p.step) + ',' + format_double(p.loss) + ',' +
               format_double(p.train_acc) + ',' + format_double(p.eval_acc) + ',' +
               format_double(p.sigma_penalty) + '\n';
    }
    return out;
}

namespace {

double mean_loss_pure(const TaskInstance& task, const ToyModel& model, std::size_t count,
                      double lambda) {
    count = std::min(count, task.inputs.size());
    double total = 0.0;
    for (std::size_t s = 0; s < count; ++s) {
        const Matrix lg = model.logits(task.inputs[s]);
        const double* row = lg.row(0);
        double mx = row[0];
        for (std::size_t j = 1; j < lg.cols(); ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < lg.cols(); ++j) z += std::exp(row[j] - mx);
        total += std::log(z) + mx - row[task.labels[s]];
    }
    return total / static_cast<double>(count) + lambda * model.sigma_penalty();
}

}  // namespace

TrainResult train(const TaskInstance& train_task, const TaskInstance& eval_task, TrainRun run) {
    train_task.validate();
    eval_task.validate();
    if (train_task.inputs.empty()) throw DomainError("train: empty training task");
    if (run.model.n_classes != train_task.n_classes) {
        throw ConfigError("train: model n_classes != task n_classes");
    }
    run.history.clear();

    ToyModel model(run.model, run.seed);
    Rng batch_rng = Rng(run.seed).fork(0xBA7C4);

    auto params = model.parameters();
    std::vector<Matrix> m_state, v_state;
    m_state.reserve(params.size());
    v_state.reserve(params.size());
    for (auto& [name, ptr] : params) {
        m_state.emplace_back(ptr->rows(), ptr->cols());
        v_state.emplace_back(ptr->rows(), ptr->cols());
    }

    const std::size_t metric_samples = std::min<std::size_t>(train_task.inputs.size(), 256);
    auto record_metrics = [&](std::size_t step) {
        model.refresh_eval_cache();
        MetricPoint p;
        p.step = step;
        p.loss = mean_loss_pure(train_task, model, metric_samples, run.hyper.lambda);
        p.train_acc = evaluate_subset(train_task, model, 0,
                                      std::min(run.hyper.train_acc_samples,
                                               train_task.inputs.size()));
        p.eval_acc = evaluate(eval_task, model);
        p.sigma_penalty = model.sigma_penalty();
        run.history.push_back(p);
    };

    Tape tape;
    std::vector<std::size_t> batch_idx(run.hyper.batch);
    for (std::size_t step = 0; step < run.hyper.steps; ++step) {
        if (step % run.hyper.eval_interval == 0) record_metrics(step);

        for (auto& i : batch_idx) i = batch_rng.below(train_task.inputs.size());
        tape.reset();
        const std::vector<NodeId> leaves = model.register_leaves(tape);
        const NodeId loss_node =
            model.batch_loss_taped(tape, leaves, train_task, batch_idx, run.hyper.lambda);
        const double loss = tape.value(loss_node)(0, 0);
        if (!std::isfinite(loss)) throw TrainingError("training loss is not finite", step);

        const std::vector<Matrix> grads = tape.backward(loss_node, leaves);

        const double t = static_cast<double>(step + 1);
        const double bc1 = 1.0 - std::pow(run.hyper.beta1, t);
        const double bc2 = 1.0 - std::pow(run.hyper.beta2, t);
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            double* p = params[pi].second->data();
            double* m = m_state[pi].data();
            double* v = v_state[pi].data();
            const double* g = grads[pi].data();
            const std::size_t n = params[pi].second->size();
            for (std::size_t i = 0; i < n; ++i) {
                m[i] = run.hyper.beta1 * m[i] + (1.0 - run.hyper.beta1) * g[i];
                v[i] = run.hyper.beta2 * v[i] + (1.0 - run.hyper.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p[i] -= run.hyper.lr * mhat / (std::sqrt(vhat) + run.hyper.eps);
            }
        }
    }
    record_metrics(run.hyper.steps);

    return TrainResult{std::move(run), std::move(model)};
}

double evaluate(const TaskInstance& task, const ToyModel& model) {
    return evaluate_subset(task, model, 0, task.inputs.size());
}

double evaluate_subset(const TaskInstance& task, const ToyModel& model, std::size_t first,
                       std::size_t count) {
    task.validate();
    if (count == 0 || first + count > task.inputs.size()) {
        throw DomainError("evaluate: empty or out-of-range split");
    }
    std::size_t correct = 0;
    for (std::size_t s = first; s < first + count; ++s) {
        const Matrix lg = model.logits(task.inputs[s]);
        std::size_t best = 0;
        for (std::size_t j = 1; j < lg.cols(); ++j) {
            if (lg(0, j) > lg(0, best)) best = j;
        }
        if (best == task.labels[s]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(count);
}

}  // namespace harope
