#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "harope/matrix.hpp"

namespace harope {

struct PropertyResult {
    std::string suite;
    std::string name;
    double max_error{0.0};
    double tolerance{0.0};
    bool passed{false};
};

struct VerifyOptions {
    std::uint64_t seed{42};
    // Hook for fault-injection tests; the suites route their expm calls
    // through this. Defaults to harope::expm.
    std::function<Matrix(const Matrix&)> expm_fn;
};

// Suites: numerics, rotary, adapt, autodiff, attention.
std::vector<std::string> verify_suite_names();
bool is_verify_suite(const std::string& name);

std::vector<PropertyResult> run_verify_suite(const std::string& name,
                                             const VerifyOptions& opts = {});
std::vector<PropertyResult> run_all_verify_suites(const VerifyOptions& opts = {});

bool all_passed(const std::vector<PropertyResult>& results);
std::string format_results(const std::vector<PropertyResult>& results);

}  // namespace harope
