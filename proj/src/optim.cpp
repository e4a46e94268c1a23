#include "stackbundle/optim.hpp"

#include <cmath>
#include <string>

namespace stackbundle {

PrimalDualParams make_primal_dual_params(double beta, double l_norm, int max_iter, double eps) {
    PrimalDualParams p;
    p.sigma = 1.0;
    p.tau = 0.9 / (beta / 2.0 + p.sigma * l_norm * l_norm);
    p.rho = 1.0;
    p.max_iter = max_iter;
    p.eps = eps;
    return p;
}

Tensor soft_threshold(const Tensor& x, double t) {
    if (t < 0.0) throw DomainError("soft_threshold: negative threshold");
    Tensor out = x;
    for (double& v : out.data()) {
        const double m = std::fabs(v) - t;
        v = m > 0.0 ? (v > 0.0 ? m : -m) : 0.0;
    }
    return out;
}

Tensor soft_threshold(const Tensor& x, const Tensor& t) {
    if (!x.same_shape(t)) throw ShapeError("soft_threshold: threshold shape mismatch");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (t[i] < 0.0) throw DomainError("soft_threshold: negative threshold");
        const double m = std::fabs(out[i]) - t[i];
        out[i] = m > 0.0 ? (out[i] > 0.0 ? m : -m) : 0.0;
    }
    return out;
}

std::pair<Tensor, double> svd_soft_threshold(const Tensor& m, double lambda) {
    SvdResult r = svd(m);
    double nuclear = 0.0;
    for (double& s : r.s) {
        s = std::max(s - lambda, 0.0);
        nuclear += s;
    }
    // U * diag(s) * V^T
    Tensor us = r.u;
    for (std::size_t i = 0; i < us.rows(); ++i)
        for (std::size_t j = 0; j < us.cols(); ++j)
            us.at2(i, j) *= r.s[j];
    return {matmul(us, transpose(r.v)), nuclear};
}

Tensor project_nonneg(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

PowerMethodResult power_method_norm(const LinearMap& apply, const LinearMap& apply_adjoint,
                                    const std::vector<std::size_t>& probe_shape,
                                    int iters, double tol) {
    // deterministic non-degenerate start: pseudo-random but fixed pattern
    Tensor v = Tensor::zeros(probe_shape);
    {
        std::uint64_t s = 0x9e3779b97f4a7c15ull;
        for (double& x : v.data()) {
            s ^= s << 13; s ^= s >> 7; s ^= s << 17;
            x = 0.5 + static_cast<double>(s % 1000003) / 2000006.0;
        }
    }
    double nrm = v.norm_fro();
    v *= 1.0 / nrm;
    double est = 0.0;
    bool converged = false;
    for (int i = 0; i < iters; ++i) {
        Tensor w = apply_adjoint(apply(v));
        const double wn = w.norm_fro();
        if (wn == 0.0) return {0.0, true};
        const double next = std::sqrt(wn);  // ||A^T A v|| -> sigma^2
        w *= 1.0 / wn;
        if (i > 0 && std::fabs(next - est) <= tol * std::max(next, 1e-300)) {
            est = next;
            converged = true;
            break;
        }
        est = next;
        v = std::move(w);
    }
    return {est, converged};
}

std::pair<Tensor, Tensor> condat_iterate(const Tensor& x_primal, const Tensor& x_dual,
                                         const CondatOps& ops, const PrimalDualParams& params) {
    const double tau = params.tau, sigma = params.sigma, rho = params.rho;

    Tensor step = x_primal;
    if (ops.grad_f) step -= tau * ops.grad_f(x_primal);
    if (ops.lmap_adjoint) step -= tau * ops.lmap_adjoint(x_dual);
    Tensor xp_new = ops.prox_g ? ops.prox_g(step) : step;

    Tensor xd_new = x_dual;
    if (ops.lmap) {
        Tensor u = x_dual + sigma * ops.lmap(2.0 * xp_new - x_primal);
        // Moreau: prox_{sigma h*}(u) = u - sigma prox_{h/sigma}(u / sigma)
        Tensor pr = ops.prox_h ? ops.prox_h(u * (1.0 / sigma), 1.0 / sigma)
                               : u * (1.0 / sigma);
        xd_new = u - sigma * pr;
    }

    if (rho != 1.0) {
        xp_new = rho * xp_new + (1.0 - rho) * x_primal;
        xd_new = rho * xd_new + (1.0 - rho) * x_dual;
    }
    if (!xp_new.all_finite() || !xd_new.all_finite())
        throw NumericError("condat_iterate: non-finite intermediate");
    return {std::move(xp_new), std::move(xd_new)};
}

} // namespace stackbundle
