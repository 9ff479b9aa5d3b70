#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "harope/attention.hpp"

namespace harope {

// Synthetic supervised dataset. Tokens are a g x g grid of background cells
// with a few marker cells; features carry 4 channels:
//   [is_background, is_marker_a, is_marker_b, 1]
// Regenerating with the same seed is bit-identical.
struct TaskInstance {
    std::string name;
    std::vector<TokenBatch> inputs;
    std::vector<std::size_t> labels;
    std::size_t n_classes{0};
    std::uint64_t seed{0};
    std::size_t grid{0};
    std::vector<std::string> class_names;

    void validate() const;
    std::string dump() const;  // audit text: seed + every sample
};

inline constexpr std::size_t kTaskFeatureDim = 4;

// Two ordered markers A and B; label is the compass direction of B relative
// to A, 8 classes including diagonals. Axis convention: +x = north,
// +y = east (fixed here; diagonal classes need both axes at once).
TaskInstance gen_offset_task(std::uint64_t seed, std::size_t grid, std::size_t n_samples);

// Label encodes the exact x-offset but only the sign of the y-offset,
// (2g-1) * 2 classes; pairs with a zero y-offset are never generated.
TaskInstance gen_anisotropic_task(std::uint64_t seed, std::size_t grid, std::size_t n_samples);

// Three indistinguishable markers; label = local + 2*longrange where
// local = some pair at Manhattan distance 1 and longrange = some pair at
// Euclidean distance > g/2. Four classes.
TaskInstance gen_headmix_task(std::uint64_t seed, std::size_t grid, std::size_t n_samples);

// 8-direction compass class index for an offset (dx, dy) != (0, 0).
std::size_t offset_direction_class(long dx, long dy);
extern const char* const kOffsetDirectionNames[8];

// ---- toy model ------------------------------------------------------------

struct ModelSpec {
    std::size_t blocks{2};
    std::size_t n_heads{4};
    std::size_t head_dim{16};
    std::size_t feat_dim{kTaskFeatureDim};
    std::size_t n_classes{0};
    SchemeTag scheme{SchemeTag::RoPE_ND_axial};
    AdaptVariant variant{AdaptVariant::SVD};
    bool shared_adapt{false};
    std::size_t axes{2};
    std::size_t grid{4};  // APE table extent and 1D flattening stride
    double rope_base{10000.0};

    std::size_t model_dim() const { return n_heads * head_dim; }
    RotaryConfig rotary() const;  // single axis for RoPE_1D, `axes` otherwise
    void validate() const;
};

// Matrix-backed adaptation parameters (vectors as k x 1), so the optimizer
// sees a uniform list of matrices.
struct AdaptParamsM {
    AdaptVariant variant{AdaptVariant::Identity};
    std::size_t dim{0};
    Matrix skew_u, skew_v, sigma_raw, dense;

    static AdaptParamsM identity(std::size_t dim, AdaptVariant variant);
    HeadAdaptParams to_params() const;
    void from_params(const HeadAdaptParams& p);
};

struct BlockParams {
    Matrix w_q, w_k, w_v, w_o;
    std::vector<AdaptParamsM> adapt;  // HARoPE: 1 if shared else n_heads
};

// 2-block attention-only transformer: input embedding, per-block
// (positional add for APE schemes, MHA, residual), mean pool, linear head.
class ToyModel {
  public:
    ToyModel(ModelSpec spec, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }

    // pure forward to class logits (1 x n_classes)
    Matrix logits(const TokenBatch& input) const;

    // refreshes the cached per-block attention configs after param changes
    void refresh_eval_cache() const;

    // named views over every trainable matrix, in a fixed order
    std::vector<std::pair<std::string, Matrix*>> parameters();
    std::vector<std::pair<std::string, const Matrix*>> parameters() const;

    // taped batch loss: mean cross entropy (+ lambda * sigma regularizer for
    // SVD adaptation); leaf order matches parameters()
    std::vector<NodeId> register_leaves(Tape& tape) const;
    NodeId batch_loss_taped(Tape& tape, std::span<const NodeId> leaves,
                            const TaskInstance& task, std::span<const std::size_t> sample_idx,
                            double lambda) const;

    // raw sigma regularizer sum over all blocks/records (0 for non-SVD)
    double sigma_penalty() const;

    std::vector<AdaptBank> adapt_banks() const;  // one per block
    void set_adapt_banks(const std::vector<AdaptBank>& banks);

    // positions as the scheme sees them (RoPE_1D flattens 2D grids)
    GridPosition scheme_position(const GridPosition& p) const;

  private:
    ModelSpec spec_;
    Matrix w_in_;
    std::vector<BlockParams> blocks_;
    Matrix w_cls_, b_cls_;
    Matrix ape_table_;

    mutable std::vector<MHAConfig> eval_cache_;
    mutable bool eval_cache_valid_{false};

    MHAConfig block_config(std::size_t b) const;
    std::vector<std::pair<std::string, Matrix*>> enumerate_params() const;
};

// ---- training -------------------------------------------------------------

struct TrainHyper {
    double lr{3e-4};
    std::size_t steps{2000};
    std::size_t batch{64};
    double lambda{1e-3};
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};
    std::size_t eval_interval{250};
    std::size_t train_acc_samples{128};
};

struct MetricPoint {
    std::size_t step;
    double loss;
    double train_acc;
    double eval_acc;
    double sigma_penalty;
};

struct TrainRun {
    ModelSpec model;
    TrainHyper hyper;
    std::uint64_t seed{0};
    std::vector<MetricPoint> history;

    std::string metrics_csv() const;  // step,loss,train_acc,eval_acc,sigma_penalty
};

struct TrainResult {
    TrainRun run;
    ToyModel model;
};

// Adam on cross entropy (+ sigma regularizer); deterministic given run.seed.
// Throws TrainingError with the step index if the loss goes non-finite.
TrainResult train(const TaskInstance& train_task, const TaskInstance& eval_task, TrainRun run);

// Fraction of argmax-correct samples; DomainError on an empty task.
double evaluate(const TaskInstance& task, const ToyModel& model);
double evaluate_subset(const TaskInstance& task, const ToyModel& model, std::size_t first,
                       std::size_t count);

}  // namespace harope
