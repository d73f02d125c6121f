#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tinydet::gradcheck {

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

inline constexpr double kStep = 1e-3;
inline constexpr double kTolerance = 1e-4;

// Finite-difference checks for every differentiable op, one entry per op,
// worst case over `seeds` random draws.
std::vector<CheckResult> op_suite(int seeds, std::uint64_t base_seed = 2024);

// End-to-end checks of the two contrastive losses through the encoders, and
// of the detection head loss through the masked transformer (routing frozen).
std::vector<CheckResult> loss_suite(int seeds, std::uint64_t base_seed = 4097);

std::vector<CheckResult> run_all(int seeds);

bool all_pass(const std::vector<CheckResult>& results);

}  // namespace tinydet::gradcheck
