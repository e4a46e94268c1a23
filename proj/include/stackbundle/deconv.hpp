#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stackbundle/engine.hpp"
#include "stackbundle/tensor.hpp"

namespace stackbundle {

enum class DeconvPrior { Sparse, LowRank };

struct DeconvProblem {
    Tensor y;                       // n x h x w
    Tensor psf;                     // n x p x p, unit-sum each
    std::vector<double> sigma;      // empty -> estimated per image
    DeconvPrior prior = DeconvPrior::Sparse;
    std::optional<double> lambda;   // low-rank; unset -> 0.1 * s_max(Ht(Y))
    std::size_t scales = 3;         // wavelet scales J
    int reweight_rounds = 0;
    double kappa = 3.0;             // k-sigma threshold factor
    int max_iter = 300;
    double eps = 1e-4;
    std::size_t partitions = 1;
};

struct DeconvResult {
    Tensor x;                       // n x h x w
    std::vector<double> cost_history;
    bool converged = false;
    int iterations = 0;
};

/// Per-object convolution with the paired PSF and its adjoint.
Tensor apply_h(const Tensor& x, const Tensor& psf);
Tensor apply_ht(const Tensor& y, const Tensor& psf);

/// l2 norms of the starlet detail filters per scale (detail planes of a
/// centered delta image).
std::vector<double> detail_filter_norms(std::size_t h, std::size_t w, std::size_t scales);

/// k-sigma thresholds: W[i][s] = kappa * sigma_i * ||detail_s(Ht_i(delta))||_2,
/// expanded to per-object J x h x w planes. psf: n x p x p.
Tensor compute_weights(const Tensor& psf, const std::vector<double>& sigma,
                       std::size_t scales, std::size_t h, std::size_t w, double kappa = 3.0);

/// MAD of the finest starlet scale over 0.6745.
double estimate_noise_sigma(const Tensor& image);

/// Full cost of the current primal stack (sequential; used by tests and the
/// driver-side low-rank nuclear term).
double deconv_cost_sparse(const Tensor& y, const Tensor& psf, const Tensor& weights,
                          const Tensor& x, std::size_t scales);

/// Iteration hooks: telemetry (wall/cost) and, for tests, the collected
/// primal stack after every iteration.
using IterationHook = std::function<void(int iter, double wall_ms, double cost)>;
using StateHook = std::function<void(int iter, const Tensor& x_p)>;

DeconvResult deconv_solve(const DeconvProblem& problem, Engine& engine,
                          const IterationHook& hook = nullptr,
                          const StateHook& state_hook = nullptr);

} // namespace stackbundle
