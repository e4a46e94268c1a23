#include "stackbundle/deconv.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

#include "stackbundle/optim.hpp"
#include "stackbundle/starlet.hpp"

namespace stackbundle {

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
    out.reserve(t.dims()[0]);
    for (std::size_t j = 0; j < t.dims()[0]; ++j) out.push_back(t.slice(j));
    return out;
}

Tensor delta_image(std::size_t h, std::size_t w) {
    Tensor d = Tensor::zeros({h, w});
    d.at2(h / 2, w / 2) = 1.0;
    return d;
}

} // namespace

Tensor apply_h(const Tensor& x, const Tensor& psf) {
    if (x.ndim() != 3 || psf.ndim() != 3 || x.dims()[0] != psf.dims()[0])
        throw ShapeError("apply_h: need matching n x h x w and n x p x p stacks");
    Tensor out = Tensor::zeros(x.dims());
    const std::size_t plane = x.dims()[1] * x.dims()[2];
    for (std::size_t i = 0; i < x.dims()[0]; ++i) {
        Tensor y = convolve2d_same(x.slice(i), psf.slice(i));
        std::copy(y.data().begin(), y.data().end(), out.data().begin() + i * plane);
    }
    return out;
}

Tensor apply_ht(const Tensor& y, const Tensor& psf) {
    if (y.ndim() != 3 || psf.ndim() != 3 || y.dims()[0] != psf.dims()[0])
        throw ShapeError("apply_ht: need matching n x h x w and n x p x p stacks");
    Tensor out = Tensor::zeros(y.dims());
    const std::size_t plane = y.dims()[1] * y.dims()[2];
    for (std::size_t i = 0; i < y.dims()[0]; ++i) {
        Tensor x = correlate2d_same(y.slice(i), psf.slice(i));
        std::copy(x.data().begin(), x.data().end(), out.data().begin() + i * plane);
    }
    return out;
}

std::vector<double> detail_filter_norms(std::size_t h, std::size_t w, std::size_t scales) {
    const StarletCoeffs c = starlet_decompose(delta_image(h, w), scales);
    std::vector<double> out;
    out.reserve(scales);
    for (const auto& d : c.details) out.push_back(d.norm_fro());
    return out;
}

namespace {

/// Per-object thresholds: kappa * sigma * ||detail_s(Ht(delta))||, constant
/// per scale plane.
Tensor weights_for(const Tensor& psf, double sigma, std::size_t scales,
                   std::size_t h, std::size_t w, double kappa) {
    if (sigma < 0.0) throw DomainError("compute_weights: negative sigma");
    const Tensor d = correlate2d_same(delta_image(h, w), psf);
    const StarletCoeffs c = starlet_decompose(d, scales);
    Tensor out = Tensor::zeros({scales, h, w});
    for (std::size_t s = 0; s < scales; ++s) {
        const double t = kappa * sigma * c.details[s].norm_fro();
        std::fill(out.data().begin() + s * h * w, out.data().begin() + (s + 1) * h * w, t);
    }
    return out;
}

} // namespace

Tensor compute_weights(const Tensor& psf, const std::vector<double>& sigma,
                       std::size_t scales, std::size_t h, std::size_t w, double kappa) {
    if (psf.ndim() != 3 || psf.dims()[0] != sigma.size())
        throw ShapeError("compute_weights: PSF count must match sigma count");
    const std::size_t n = psf.dims()[0];
    Tensor out = Tensor::zeros({n, scales, h, w});
    const std::size_t vol = scales * h * w;
    for (std::size_t i = 0; i < n; ++i) {
        Tensor wi = weights_for(psf.slice(i), sigma[i], scales, h, w, kappa);
        std::copy(wi.data().begin(), wi.data().end(), out.data().begin() + i * vol);
    }
    return out;
}

double estimate_noise_sigma(const Tensor& image) {
    const StarletCoeffs c = starlet_decompose(image, 1);
    std::vector<double> mags;
    mags.reserve(c.details[0].size());
    for (double v : c.details[0].data()) mags.push_back(std::fabs(v));
    std::nth_element(mags.begin(), mags.begin() + mags.size() / 2, mags.end());
    double med = mags[mags.size() / 2];
    if (mags.size() % 2 == 0) {
        const double lo = *std::max_element(mags.begin(), mags.begin() + mags.size() / 2);
        med = 0.5 * (med + lo);
    }
    return med / 0.6745;
}

double deconv_cost_sparse(const Tensor& y, const Tensor& psf, const Tensor& weights,
                          const Tensor& x, std::size_t scales) {
    double cost = 0.0;
    const Tensor r = apply_h(x, psf) - y;
    cost += 0.5 * r.norm_fro() * r.norm_fro();
    const std::size_t n = x.dims()[0];
    for (std::size_t i = 0; i < n; ++i) {
        const StarletCoeffs c = starlet_decompose(x.slice(i), scales);
        const Tensor wi = weights.slice(i);
        const std::size_t plane = x.dims()[1] * x.dims()[2];
        for (std::size_t s = 0; s < scales; ++s)
            for (std::size_t k = 0; k < plane; ++k)
                cost += wi[s * plane + k] * std::fabs(c.details[s][k]);
    }
    return cost;
}

namespace {

// Record layouts:
//   sparse bundle  [y, psf, sigma(1), w(JxHxW), xp, xd(JxHxW)]
//   lowrank bundle [y, psf, sigma(1), xp, xd]
// Broadcasts: "deconv.params" (sparse [tau, sigma, rho, J]; lowrank
// [tau, sigma, rho]), "deconv.wparams" [J, h, w, kappa].

CondatOps sparse_ops(const Tensor& y, const Tensor& psf, const Tensor& w,
                     std::size_t scales) {
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
    ops.prox_h = [&w](const Tensor& u, double scale) {
        return soft_threshold(u, w * scale);
    };
    return ops;
}

double record_cost_sparse(const Record& r) {
    const Tensor& y = r[0];
    const Tensor& psf = r[1];
    const Tensor& w = r[3];
    const Tensor& xp = r[4];
    const Tensor resid = convolve2d_same(xp, psf) - y;
    double cost = 0.5 * resid.norm_fro() * resid.norm_fro();
    const auto scales = w.dims()[0];
    const StarletCoeffs c = starlet_decompose(xp, scales);
    const std::size_t plane = xp.size();
    for (std::size_t s = 0; s < scales; ++s)
        for (std::size_t k = 0; k < plane; ++k)
            cost += w[s * plane + k] * std::fabs(c.details[s][k]);
    return cost;
}

} // namespace

namespace detail {

void register_deconv_kernels() {
    auto& reg = KernelRegistry::instance();

    reg.register_map("deconv.weights", [](const KernelCtx& ctx, const Record& r) {
        const Tensor& wp = ctx.broadcast("deconv.wparams").at(0);
        const auto scales = static_cast<std::size_t>(wp[0]);
        const auto h = static_cast<std::size_t>(wp[1]);
        const auto w = static_cast<std::size_t>(wp[2]);
        return Record{weights_for(r.at(0), r.at(1)[0], scales, h, w, wp[3])};
    });

    reg.register_map("deconv.condat_sparse", [](const KernelCtx& ctx, const Record& r) {
        const Tensor& p = ctx.broadcast("deconv.params").at(0);
        PrimalDualParams params;
        params.tau = p[0];
        params.sigma = p[1];
        params.rho = p[2];
        const auto scales = static_cast<std::size_t>(p[3]);
        const CondatOps ops = sparse_ops(r.at(0), r.at(1), r.at(3), scales);
        auto [xp, xd] = condat_iterate(r.at(4), r.at(5), ops, params);
        Record out = r;
        out[4] = std::move(xp);
        out[5] = std::move(xd);
        return out;
    });

    reg.register_map("deconv.cost_sparse", [](const KernelCtx&, const Record& r) {
        return Record{Tensor({1}, {record_cost_sparse(r)})};
    });

    reg.register_map("deconv.cost_fid", [](const KernelCtx&, const Record& r) {
        const Tensor resid = convolve2d_same(r.at(3), r.at(1)) - r.at(0);
        return Record{Tensor({1}, {0.5 * resid.norm_fro() * resid.norm_fro()})};
    });

    reg.register_map("deconv.lowrank_primal", [](const KernelCtx& ctx, const Record& r) {
        const Tensor& p = ctx.broadcast("deconv.params").at(0);
        const double tau = p[0];
        const Tensor& y = r.at(0);
        const Tensor& psf = r.at(1);
        const Tensor& xp = r.at(3);
        const Tensor& xd = r.at(4);
        const Tensor grad = correlate2d_same(convolve2d_same(xp, psf) - y, psf);
        Tensor xtp = project_nonneg(xp - tau * (grad + xd));
        if (!xtp.all_finite()) throw NumericError("deconv: non-finite primal step");
        Record out = r;
        out.push_back(std::move(xtp));
        return out;
    });

    reg.register_map("deconv.reweight", [](const KernelCtx& ctx, const Record& r) {
        const Tensor& wp = ctx.broadcast("deconv.wparams").at(0);
        const auto scales = static_cast<std::size_t>(wp[0]);
        const auto h = static_cast<std::size_t>(wp[1]);
        const auto w = static_cast<std::size_t>(wp[2]);
        const double kappa = wp[3];
        const double sigma = r.at(2)[0];
        const Tensor w0 = weights_for(r.at(1), sigma, scales, h, w, kappa);
        const auto fnorms = detail_filter_norms(h, w, scales);
        const StarletCoeffs c = starlet_decompose(r.at(4), scales);
        Tensor wk = Tensor::zeros({scales, h, w});
        const std::size_t plane = h * w;
        for (std::size_t s = 0; s < scales; ++s) {
            const double denom = sigma > 0.0 ? sigma * fnorms[s] : 1.0;
            for (std::size_t k = 0; k < plane; ++k)
                wk[s * plane + k] = w0[s * plane + k] /
                    (1.0 + std::fabs(c.details[s][k]) / denom);
        }
        Record out = r;
        out[3] = std::move(wk);
        return out;
    });
}

} // namespace detail

namespace {

std::uint64_t bytes_hash(const std::vector<double>& v) {
    std::uint64_t h = 1469598103934665603ull;
    const auto* p = reinterpret_cast<const unsigned char*>(v.data());
    for (std::size_t i = 0; i < v.size() * sizeof(double); ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

/// max_i sigma_max(H_i)^2 over distinct PSFs (Lipschitz constant of grad f).
double gradient_lipschitz(const Tensor& psf_stack, std::size_t h, std::size_t w) {
    std::map<std::uint64_t, double> cache;
    double beta = 0.0;
    for (std::size_t i = 0; i < psf_stack.dims()[0]; ++i) {
        const Tensor psf = psf_stack.slice(i);
        const auto key = bytes_hash(psf.data());
        auto it = cache.find(key);
        if (it == cache.end()) {
            const auto r = power_method_norm(
                [&psf](const Tensor& v) { return convolve2d_same(v, psf); },
                [&psf](const Tensor& v) { return correlate2d_same(v, psf); }, {h, w});
            it = cache.emplace(key, r.norm).first;
        }
        beta = std::max(beta, it->second * it->second);
    }
    return beta;
}

double matrix_smax(const Tensor& m) {
    return power_method_norm(
               [&m](const Tensor& v) { return matmul(m, v); },
               [&m](const Tensor& v) { return matmul(transpose(m), v); },
               {m.cols(), std::size_t{1}})
        .norm;
}

double nuclear_norm(const Tensor& m) {
    double out = 0.0;
    for (double s : svd(m).s) out += s;
    return out;
}

struct ConvergenceGate {
    double eps;
    int streak = 0;
    std::vector<double>* history;

    bool step(double cost) {
        if (!std::isfinite(cost)) throw NumericError("deconv: non-finite cost");
        const double prev = history->empty() ? 0.0 : history->back();
        history->push_back(cost);
        if (history->size() < 2) return false;
        const double rel = std::fabs(cost - prev) / std::max(std::fabs(prev), 1e-300);
        streak = rel < eps ? streak + 1 : 0;
        return streak >= 5;
    }
};

Tensor stack_from_records(const std::vector<Record>& recs, std::size_t slot,
                          std::vector<std::size_t> plane_dims) {
    std::vector<std::size_t> dims{recs.size()};
    dims.insert(dims.end(), plane_dims.begin(), plane_dims.end());
    Tensor out = Tensor::zeros(dims);
    const std::size_t vol = shape_product(plane_dims);
    for (std::size_t i = 0; i < recs.size(); ++i)
        std::copy(recs[i].at(slot).data().begin(), recs[i].at(slot).data().end(),
                  out.data().begin() + i * vol);
    return out;
}

void validate_problem(const DeconvProblem& pb) {
    if (pb.y.ndim() != 3 || pb.psf.ndim() != 3)
        throw ShapeError("deconv: Y and PSF must be 3-d stacks");
    if (pb.y.dims()[0] != pb.psf.dims()[0])
        throw ShapeError("deconv: PSF count must equal image count");
    if (pb.y.dims()[0] == 0) throw ConfigError("deconv: empty stack");
    if (pb.partitions == 0) throw ConfigError("deconv: partitions must be >= 1");
    for (std::size_t i = 0; i < pb.psf.dims()[0]; ++i)
        if (std::fabs(pb.psf.slice(i).sum() - 1.0) > 1e-8)
            throw DomainError("deconv: PSF " + std::to_string(i) + " not unit-sum");
}

} // namespace

DeconvResult deconv_solve(const DeconvProblem& problem, Engine& engine,
                          const IterationHook& hook, const StateHook& state_hook) {
    register_builtin_kernels();
    validate_problem(problem);

    const std::size_t n = problem.y.dims()[0];
    const std::size_t h = problem.y.dims()[1];
    const std::size_t w = problem.y.dims()[2];
    const std::size_t scales = std::min(problem.scales, starlet_max_scales(h, w));
    if (scales == 0) throw ConfigError("deconv: image too small for any wavelet scale");

    std::vector<double> sigma = problem.sigma;
    if (sigma.empty()) {
        sigma.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            sigma.push_back(estimate_noise_sigma(problem.y.slice(i)));
    }
    if (sigma.size() != n) throw ShapeError("deconv: sigma count must equal image count");
    for (double s : sigma)
        if (s < 0.0) throw DomainError("deconv: negative sigma");

    const double beta = gradient_lipschitz(problem.psf, h, w);
    const bool sparse = problem.prior == DeconvPrior::Sparse;
    double l_norm = 1.0;  // low-rank: L = identity
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
    const PrimalDualParams pd = make_primal_dual_params(beta, l_norm, problem.max_iter,
                                                        problem.eps);

    // Source datasets shared by both priors.
    std::vector<Record> psf_records;
    psf_records.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        psf_records.push_back({problem.psf.slice(i), Tensor({1}, {sigma[i]})});
    const std::size_t parts = problem.partitions;
    const DatasetHandle d_y = engine.parallelize(problem.y, parts);
    const DatasetHandle d_psf = engine.parallelize_records(std::move(psf_records), parts);

    DeconvResult result;
    ConvergenceGate gate{problem.eps, 0, &result.cost_history};

    using clock = std::chrono::steady_clock;

    if (sparse) {
        engine.broadcast("deconv.wparams",
                         {Tensor({4}, {static_cast<double>(scales), static_cast<double>(h),
                                       static_cast<double>(w), problem.kappa})});
        engine.broadcast("deconv.params",
                         {Tensor({4}, {pd.tau, pd.sigma, pd.rho,
                                       static_cast<double>(scales)})});

        const DatasetHandle d_w = engine.map(d_psf, "deconv.weights");
        const DatasetHandle d_xp = engine.parallelize(Tensor::zeros({n, h, w}), parts);
        const DatasetHandle d_xd =
            engine.parallelize(Tensor::zeros({n, scales, h, w}), parts);
        DatasetHandle bundle = engine.zip_bundle({d_y, d_psf, d_w, d_xp, d_xd});

        int round = 0;
        for (int iter = 1; iter <= problem.max_iter; ++iter) {
            const auto t0 = clock::now();
            const DatasetHandle next = engine.map(bundle, "deconv.condat_sparse");
            const Record c = engine.reduce(next, "deconv.cost_sparse", "add");
            const DatasetHandle prev = bundle;
            bundle = engine.checkpoint(next);
            if (bundle.id != prev.id) engine.release(prev);
            const double cost = c.at(0)[0];
            const double wall_ms =
                std::chrono::duration<double, std::milli>(clock::now() - t0).count();
            result.iterations = iter;
            const bool settled = gate.step(cost);
            if (hook) hook(iter, wall_ms, cost);
            if (state_hook) {
                const auto recs = engine.collect(engine.unbundle(bundle, 4));
                state_hook(iter, stack_from_records(recs, 0, {h, w}));
            }
            if (settled) {
                if (round < problem.reweight_rounds) {
                    const DatasetHandle before = bundle;
                    bundle = engine.checkpoint(engine.map(bundle, "deconv.reweight"));
                    if (bundle.id != before.id) engine.release(before);
                    ++round;
                    gate.streak = 0;
                } else {
                    result.converged = true;
                    break;
                }
            }
        }
        const auto recs = engine.collect(engine.unbundle(bundle, 4));
        result.x = stack_from_records(recs, 0, {h, w});
        return result;
    }

    // Low-rank prior: primal step distributed, SVD prox at the driver on the
    // gathered n x (h*w) stack matrix.
    Tensor hty = apply_ht(problem.y, problem.psf).reshape({n, h * w});
    const double lambda = problem.lambda ? *problem.lambda : 0.1 * matrix_smax(hty);
    if (lambda < 0.0) throw DomainError("deconv: negative lambda");

    engine.broadcast("deconv.params", {Tensor({3}, {pd.tau, pd.sigma, pd.rho})});
    const DatasetHandle d_static = engine.checkpoint(engine.zip_bundle({d_y, d_psf}));

    Tensor xp = Tensor::zeros({n, h, w});
    Tensor xd = Tensor::zeros({n, h, w});
    DatasetHandle d_xp = engine.parallelize(xp, parts);
    DatasetHandle d_xd = engine.parallelize(xd, parts);
    auto remake_bundle = [&] {
        engine.release(d_xp);
        engine.release(d_xd);
        d_xp = engine.parallelize(xp, parts);
        d_xd = engine.parallelize(xd, parts);
        return engine.zip_bundle({d_static, d_xp, d_xd});
    };
    DatasetHandle bundle = engine.zip_bundle({d_static, d_xp, d_xd});

    for (int iter = 1; iter <= problem.max_iter; ++iter) {
        const auto t0 = clock::now();
        const auto recs = engine.collect(engine.map(bundle, "deconv.lowrank_primal"));
        const Tensor xtp = stack_from_records(recs, 5, {h, w});
        // Dual prox via Moreau on the stack-as-matrix: u = xd + sigma(2 xtp - xp).
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
        bundle = remake_bundle();
        const Record fid = engine.reduce(bundle, "deconv.cost_fid", "add");
        const double cost = fid.at(0)[0] + lambda * nuclear_norm(xp.reshape({n, h * w}));
        const double wall_ms =
            std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        result.iterations = iter;
        const bool settled = gate.step(cost);
        if (hook) hook(iter, wall_ms, cost);
        if (state_hook) state_hook(iter, xp);
        if (settled) {
            result.converged = true;
            break;
        }
    }
    result.x = xp;
    return result;
}

} // namespace stackbundle
