#include "reference_solvers.hpp"

#include <algorithm>
#include <cmath>

#include "stackbundle/engine.hpp"  // partition_sizes only
#include "stackbundle/optim.hpp"
#include "stackbundle/starlet.hpp"

namespace stackbundle::reference {

namespace {

Tensor details_to_tensor(const std::vector<Tensor>& details) {
    const auto h = details.at(0).dims()[0], w = details.at(0).dims()[1];
    Tensor out = Tensor::zeros({details.size(), h, w});
    for (std::size_t j = 0; j < details.size(); ++j)
        std::copy(details[j].data().begin(), details[j].data().end(),
                  out.data().begin() + j * h * w);
    return out;
}

std::vector<Tensor> tensor_to_details(const Tensor& t) {
    std::vector<Tensor> out;
    for (std::size_t j = 0; j < t.dims()[0]; ++j) out.push_back(t.slice(j));
    return out;
}

struct Gate {
    double eps;
    int streak = 0;
    std::vector<double>* history;
    bool step(double cost) {
        const double prev = history->empty() ? 0.0 : history->back();
        history->push_back(cost);
        if (history->size() < 2) return false;
        const double rel = std::fabs(cost - prev) / std::max(std::fabs(prev), 1e-300);
        streak = rel < eps ? streak + 1 : 0;
        return streak >= 5;
    }
};

double smax_conv(const Tensor& psf, std::size_t h, std::size_t w) {
    return power_method_norm(
               [&psf](const Tensor& v) { return convolve2d_same(v, psf); },
               [&psf](const Tensor& v) { return correlate2d_same(v, psf); }, {h, w})
        .norm;
}

double nuclear(const Tensor& m) {
    double out = 0.0;
    for (double s : svd(m).s) out += s;
    return out;
}

Tensor stack_planes(const std::vector<Tensor>& planes) {
    std::vector<std::size_t> dims{planes.size()};
    dims.insert(dims.end(), planes[0].dims().begin(), planes[0].dims().end());
    Tensor out = Tensor::zeros(dims);
    const std::size_t vol = planes[0].size();
    for (std::size_t i = 0; i < planes.size(); ++i)
        std::copy(planes[i].data().begin(), planes[i].data().end(),
                  out.data().begin() + i * vol);
    return out;
}

} // namespace

RefDeconvResult reference_deconv(const DeconvProblem& pb) {
    const std::size_t n = pb.y.dims()[0], h = pb.y.dims()[1], w = pb.y.dims()[2];
    const std::size_t scales = std::min(pb.scales, starlet_max_scales(h, w));

    std::vector<double> sigma = pb.sigma;
    if (sigma.empty())
        for (std::size_t i = 0; i < n; ++i)
            sigma.push_back(estimate_noise_sigma(pb.y.slice(i)));

    double beta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = smax_conv(pb.psf.slice(i), h, w);
        beta = std::max(beta, s * s);
    }
    const bool sparse = pb.prior == DeconvPrior::Sparse;
    double l_norm = 1.0;
    if (sparse)
        l_norm = power_method_norm(
                     [scales](const Tensor& x) {
                         return details_to_tensor(starlet_decompose(x, scales).details);
                     },
                     [](const Tensor& u) {
                         return starlet_adjoint_details(tensor_to_details(u));
                     },
                     {h, w})
                     .norm;
    const PrimalDualParams pd = make_primal_dual_params(beta, l_norm, pb.max_iter, pb.eps);

    RefDeconvResult result;
    Gate gate{pb.eps, 0, &result.cost_history};

    if (sparse) {
        const Tensor w0 = compute_weights(pb.psf, sigma, scales, h, w, pb.kappa);
        const auto fnorms = detail_filter_norms(h, w, scales);
        std::vector<Tensor> wi, xp, xd;
        for (std::size_t i = 0; i < n; ++i) {
            wi.push_back(w0.slice(i));
            xp.push_back(Tensor::zeros({h, w}));
            xd.push_back(Tensor::zeros({scales, h, w}));
        }

        int round = 0;
        for (int iter = 1; iter <= pb.max_iter; ++iter) {
            double cost = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const Tensor y = pb.y.slice(i), psf = pb.psf.slice(i);
                CondatOps ops;
                ops.grad_f = [&y, &psf](const Tensor& x) {
                    return correlate2d_same(convolve2d_same(x, psf) - y, psf);
                };
                ops.prox_g = [](const Tensor& x) { return project_nonneg(x); };
                ops.lmap = [scales](const Tensor& x) {
                    return details_to_tensor(starlet_decompose(x, scales).details);
                };
                ops.lmap_adjoint = [](const Tensor& u) {
                    return starlet_adjoint_details(tensor_to_details(u));
                };
                ops.prox_h = [&wi, i](const Tensor& u, double scale) {
                    return soft_threshold(u, wi[i] * scale);
                };
                std::tie(xp[i], xd[i]) = condat_iterate(xp[i], xd[i], ops, pd);

                const Tensor resid = convolve2d_same(xp[i], psf) - y;
                double c = 0.5 * resid.norm_fro() * resid.norm_fro();
                const StarletCoeffs sc = starlet_decompose(xp[i], scales);
                const std::size_t plane = h * w;
                for (std::size_t s = 0; s < scales; ++s)
                    for (std::size_t k = 0; k < plane; ++k)
                        c += wi[i][s * plane + k] * std::fabs(sc.details[s][k]);
                cost += c;
            }
            result.iterations = iter;
            const bool settled = gate.step(cost);
            result.states.push_back(stack_planes(xp));
            if (settled) {
                if (round < pb.reweight_rounds) {
                    for (std::size_t i = 0; i < n; ++i) {
                        const StarletCoeffs sc = starlet_decompose(xp[i], scales);
                        Tensor wk = Tensor::zeros({scales, h, w});
                        const std::size_t plane = h * w;
                        for (std::size_t s = 0; s < scales; ++s) {
                            const double denom =
                                sigma[i] > 0.0 ? sigma[i] * fnorms[s] : 1.0;
                            for (std::size_t k = 0; k < plane; ++k)
                                wk[s * plane + k] = w0[i * scales * plane + s * plane + k] /
                                    (1.0 + std::fabs(sc.details[s][k]) / denom);
                        }
                        wi[i] = std::move(wk);
                    }
                    ++round;
                    gate.streak = 0;
                } else {
                    result.converged = true;
                    break;
                }
            }
        }
        result.x = stack_planes(xp);
        return result;
    }

    // low-rank prior
    const Tensor hty = apply_ht(pb.y, pb.psf).reshape({n, h * w});
    double lambda;
    if (pb.lambda) {
        lambda = *pb.lambda;
    } else {
        lambda = 0.1 * power_method_norm(
                           [&hty](const Tensor& v) { return matmul(hty, v); },
                           [&hty](const Tensor& v) { return matmul(transpose(hty), v); },
                           {hty.cols(), std::size_t{1}})
                           .norm;
    }

    Tensor xp = Tensor::zeros({n, h, w});
    Tensor xd = Tensor::zeros({n, h, w});
    for (int iter = 1; iter <= pb.max_iter; ++iter) {
        std::vector<Tensor> xtp_planes;
        for (std::size_t i = 0; i < n; ++i) {
            const Tensor y = pb.y.slice(i), psf = pb.psf.slice(i);
            const Tensor grad =
                correlate2d_same(convolve2d_same(xp.slice(i), psf) - y, psf);
            xtp_planes.push_back(
                project_nonneg(xp.slice(i) - pd.tau * (grad + xd.slice(i))));
        }
        const Tensor xtp = stack_planes(xtp_planes);
        Tensor u = (xd + pd.sigma * (2.0 * xtp - xp)).reshape({n, h * w});
        const Tensor shrunk =
            svd_soft_threshold(u * (1.0 / pd.sigma), lambda / pd.sigma).first;
        Tensor xd_new = (u - pd.sigma * shrunk).reshape({n, h, w});
        if (pd.rho != 1.0) {
            xp = pd.rho * xtp + (1.0 - pd.rho) * xp;
            xd = pd.rho * xd_new + (1.0 - pd.rho) * xd;
        } else {
            xp = xtp;
            xd = std::move(xd_new);
        }
        double fid = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const Tensor resid =
                convolve2d_same(xp.slice(i), pb.psf.slice(i)) - pb.y.slice(i);
            fid += 0.5 * resid.norm_fro() * resid.norm_fro();
        }
        const double cost = fid + lambda * nuclear(xp.reshape({n, h * w}));
        result.iterations = iter;
        const bool settled = gate.step(cost);
        result.states.push_back(xp);
        if (settled) {
            result.converged = true;
            break;
        }
    }
    result.x = xp;
    return result;
}

namespace {

Tensor columns_slice(const Tensor& m, std::size_t c0, std::size_t count) {
    Tensor out = Tensor::zeros({m.rows(), count});
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) out.at2(r, c) = m.at2(r, c0 + c);
    return out;
}

} // namespace

RefScdlResult reference_scdl(const ScdlProblem& pb) {
    const std::size_t k = pb.s_h.cols(), a = pb.atoms, parts = pb.partitions;
    const auto counts = partition_sizes(k, parts);

    struct Block {
        Tensor sh, sl, wh, wl, p, q, y1, y2, y3;
    };
    std::vector<Block> blocks;
    std::size_t c0 = 0;
    for (std::size_t j = 0; j < parts; ++j) {
        Block b;
        b.sh = columns_slice(pb.s_h, c0, counts[j]);
        b.sl = columns_slice(pb.s_l, c0, counts[j]);
        for (Tensor* t : {&b.wh, &b.wl, &b.p, &b.q, &b.y1, &b.y2, &b.y3})
            *t = Tensor::zeros({a, counts[j]});
        blocks.push_back(std::move(b));
        c0 += counts[j];
    }

    auto [x_h, x_l] = init_dictionaries(pb);
    const double sh_norm = pb.s_h.norm_fro(), sl_norm = pb.s_l.norm_fro();

    RefScdlResult result;
    for (int iter = 1; iter <= pb.max_iter; ++iter) {
        const double ch = pb.c1 + pb.c3, cl = pb.c2 + pb.c3;
        const Tensor bh = inverse_spd(2.0 * matmul(transpose(x_h), x_h) + ch * identity(a));
        const Tensor bl = inverse_spd(2.0 * matmul(transpose(x_l), x_l) + cl * identity(a));

        Tensor swh_h, swl_l, phi_h, phi_l;
        for (std::size_t j = 0; j < parts; ++j) {
            Block& b = blocks[j];
            const Tensor wh = matmul(
                bh, 2.0 * matmul(transpose(x_h), b.sh) + b.y1 - b.y3 + pb.c1 * b.p +
                        pb.c3 * b.wl);
            b.wl = matmul(
                bl, 2.0 * matmul(transpose(x_l), b.sl) + b.y2 + b.y3 + pb.c2 * b.q +
                        pb.c3 * wh);
            b.p = soft_threshold(wh - (1.0 / pb.c1) * b.y1, pb.lambda_h / pb.c1);
            b.q = soft_threshold(b.wl - (1.0 / pb.c2) * b.y2, pb.lambda_l / pb.c2);
            b.y1 += pb.c1 * (b.p - wh);
            b.y2 += pb.c2 * (b.q - b.wl);
            b.y3 += pb.c3 * (wh - b.wl);
            b.wh = wh;

            const Tensor wh_t = transpose(b.wh), wl_t = transpose(b.wl);
            if (j == 0) {
                swh_h = matmul(b.sh, wh_t);
                swl_l = matmul(b.sl, wl_t);
                phi_h = matmul(b.wh, wh_t);
                phi_l = matmul(b.wl, wl_t);
            } else {
                swh_h += matmul(b.sh, wh_t);
                swl_l += matmul(b.sl, wl_t);
                phi_h += matmul(b.wh, wh_t);
                phi_l += matmul(b.wl, wl_t);
            }
        }

        x_h = update_dictionary(x_h, swh_h, phi_h, pb.delta);
        x_l = update_dictionary(x_l, swl_l, phi_l, pb.delta);

        double rh = 0.0, rl = 0.0, cons = 0.0;
        for (const Block& b : blocks) {
            const Tensor eh = b.sh - matmul(x_h, b.wh);
            const Tensor el = b.sl - matmul(x_l, b.wl);
            const Tensor ec = b.wh - b.wl;
            rh += eh.norm_fro() * eh.norm_fro();
            rl += el.norm_fro() * el.norm_fro();
            cons += ec.norm_fro() * ec.norm_fro();
        }
        result.nrmse_history.emplace_back(std::sqrt(rh) / std::max(sh_norm, 1e-300),
                                          std::sqrt(rl) / std::max(sl_norm, 1e-300));
        result.consensus_history.push_back(std::sqrt(cons));
        result.states.emplace_back(x_h, x_l);
    }
    result.x_h = std::move(x_h);
    result.x_l = std::move(x_l);
    return result;
}

} // namespace stackbundle::reference
