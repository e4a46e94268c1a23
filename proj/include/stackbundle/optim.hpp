#pragma once

#include <functional>
#include <utility>

#include "stackbundle/tensor.hpp"

namespace stackbundle {

/// Steps for the primal-dual splitting iteration. Callers must satisfy
/// tau * sigma * L_norm^2 + tau * beta / 2 <= 1.
struct PrimalDualParams {
    double tau = 0.0;
    double sigma = 1.0;
    double rho = 1.0;
    int max_iter = 300;
    double eps = 1e-4;
};

/// Derive steps satisfying the convergence condition with a 10% margin:
/// sigma = 1, tau = 0.9 / (beta/2 + sigma * l_norm^2).
PrimalDualParams make_primal_dual_params(double beta, double l_norm,
                                         int max_iter = 300, double eps = 1e-4);

Tensor soft_threshold(const Tensor& x, double t);
Tensor soft_threshold(const Tensor& x, const Tensor& t);

/// Singular value soft thresholding; returns the shrunk matrix and the
/// nuclear norm after shrinkage.
std::pair<Tensor, double> svd_soft_threshold(const Tensor& m, double lambda);

Tensor project_nonneg(const Tensor& x);

struct PowerMethodResult {
    double norm = 0.0;
    bool converged = false;
};

using LinearMap = std::function<Tensor(const Tensor&)>;

/// Spectral norm estimate of the map apply (with adjoint apply_adjoint) by
/// power iteration on the normal operator. Deterministic start vector.
PowerMethodResult power_method_norm(const LinearMap& apply, const LinearMap& apply_adjoint,
                                    const std::vector<std::size_t>& probe_shape,
                                    int iters = 50, double tol = 1e-6);

/// One relaxed primal-dual step (Condat). The dual prox is realized through
/// the Moreau identity: prox_{sigma h*}(u) = u - sigma * prox_{h/sigma}(u/sigma).
/// prox_h(u, 1/sigma) must compute prox of h scaled by 1/sigma.
struct CondatOps {
    std::function<Tensor(const Tensor&)> grad_f;
    std::function<Tensor(const Tensor&)> prox_g;
    std::function<Tensor(const Tensor&)> lmap;         // L
    std::function<Tensor(const Tensor&)> lmap_adjoint; // L^T
    std::function<Tensor(const Tensor&, double)> prox_h;  // (u, scale) -> prox_{scale*h}(u)
};

std::pair<Tensor, Tensor> condat_iterate(const Tensor& x_primal, const Tensor& x_dual,
                                         const CondatOps& ops, const PrimalDualParams& params);

} // namespace stackbundle
