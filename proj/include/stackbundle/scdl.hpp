#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "stackbundle/engine.hpp"
#include "stackbundle/tensor.hpp"

namespace stackbundle {

struct ScdlProblem {
    Tensor s_h;                 // P x K
    Tensor s_l;                 // M x K
    std::size_t atoms = 64;     // A
    double c1 = 1.0, c2 = 1.0, c3 = 1.0;
    double lambda_h = 0.1, lambda_l = 0.1;
    double delta = 1e-6;
    int max_iter = 100;
    std::uint64_t seed = 0;
    std::size_t partitions = 1;
};

struct ScdlResult {
    Tensor x_h;                 // P x A
    Tensor x_l;                 // M x A
    std::vector<std::pair<double, double>> nrmse_history;  // (high, low)
    std::vector<double> consensus_history;                 // ||W_h - W_l||_F
    int iterations = 0;
};

/// Seeded sample-without-replacement init; the same column indices are used
/// for both resolutions and every column is scaled to unit l2 norm.
std::pair<Tensor, Tensor> init_dictionaries(const ScdlProblem& problem);

/// Damped least-squares dictionary step X + (SWt - X*phi)(phi + delta*I)^-1,
/// then columns with norm > 1 rescaled to unit norm.
Tensor update_dictionary(const Tensor& x, const Tensor& swt, const Tensor& phi, double delta);

using ScdlIterationHook = std::function<void(int iter, double wall_ms, double nrmse_h)>;
using ScdlStateHook = std::function<void(int iter, const Tensor& x_h, const Tensor& x_l)>;

ScdlResult scdl_train(const ScdlProblem& problem, Engine& engine,
                      const ScdlIterationHook& hook = nullptr,
                      const ScdlStateHook& state_hook = nullptr);

} // namespace stackbundle
