#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "harope/adapt.hpp"
#include "harope/attention.hpp"
#include "harope/tasks.hpp"

namespace harope {

// One scheme under comparison: tag plus (for HARoPE) the variant and the
// shared-vs-head-wise choice. Text forms: "rope_nd_axial", "ape_learned",
// "harope_svd_headwise", "harope_orthogonal_shared", ...
struct SchemeSpec {
    SchemeTag tag{SchemeTag::RoPE_ND_axial};
    AdaptVariant variant{AdaptVariant::SVD};
    bool shared{false};

    std::string text() const;
    static SchemeSpec parse(const std::string& s);
    bool operator==(const SchemeSpec&) const = default;
};

// Parsed run configuration: `[section]` + `key = value` lines, `#` comments;
// every key can be overridden with --section.key=value tokens.
struct RunConfig {
    // [model]
    std::size_t blocks{2};
    std::size_t heads{4};
    std::size_t head_dim{16};
    std::size_t axes{2};
    double rope_base{10000.0};
    SchemeSpec scheme;  // used when [train] schemes is empty

    // [task]
    std::string task{"offset"};  // offset | anisotropic | headmix
    std::size_t grid{4};
    std::size_t n_train{512};
    std::size_t n_eval{512};

    // [train]
    double lr{3e-4};
    std::size_t steps{2000};
    std::size_t batch{64};
    double lambda{1e-3};
    std::size_t eval_interval{250};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::vector<SchemeSpec> schemes;  // grid of schemes; empty = [model] scheme

    // [out]
    std::string out_dir{"runs/out"};

    void validate() const;
    std::string serialize() const;  // canonical form, reparses identically

    static RunConfig parse(const std::string& text);
    void apply_override(const std::string& key, const std::string& value);
    // consumes --section.key=value tokens, returns unrecognized ones
    std::vector<std::string> apply_overrides(const std::vector<std::string>& args);

    ModelSpec model_spec(const SchemeSpec& s, std::size_t n_classes) const;
    TrainRun train_run(const SchemeSpec& s, std::size_t n_classes, std::uint64_t seed) const;

    bool operator==(const RunConfig&) const = default;
};

TaskInstance make_task(const std::string& name, std::uint64_t seed, std::size_t grid,
                       std::size_t n_samples);

}  // namespace harope
