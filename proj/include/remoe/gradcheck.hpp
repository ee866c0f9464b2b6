// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checks. The oracle only ever calls
// forward evaluation, so it is independent of every backward rule it checks.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "remoe/tensor.hpp"

namespace remoe::gradcheck {

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

// build must construct a scalar loss from the current leaf values on the
// given tape. Leaves are perturbed in place for the finite differences.
// element_cap > 0 limits how many elements per leaf are probed.
double max_grad_error(const std::function<TensorPtr(Tape&)>& build,
                      const std::vector<TensorPtr>& leaves, double step = 1e-5,
                      std::size_t element_cap = 0);

// Per-primitive suites on random inputs (one entry per op).
std::vector<CheckResult> op_suite(std::uint64_t seed, double tol = 1e-4);

// Full micro-config model (V=17, d=8, L=2, E=4, heads=2): one entry per
// parameter group.
std::vector<CheckResult> model_suite(std::uint64_t seed, double tol = 1e-3);

}  // namespace remoe::gradcheck
