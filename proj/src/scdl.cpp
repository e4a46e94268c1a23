#include "stackbundle/scdl.hpp"

#include <chrono>
#include <cmath>

#include "stackbundle/datagen.hpp"
#include "stackbundle/optim.hpp"

namespace stackbundle {

namespace {

Tensor unit_norm_columns(Tensor x) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
        double nrm2 = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r) nrm2 += x.at2(r, c) * x.at2(r, c);
        if (nrm2 > 0.0) {
            const double inv = 1.0 / std::sqrt(nrm2);
            for (std::size_t r = 0; r < x.rows(); ++r) x.at2(r, c) *= inv;
        }
    }
    return x;
}

Tensor columns_slice(const Tensor& m, std::size_t c0, std::size_t count) {
    Tensor out = Tensor::zeros({m.rows(), count});
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) out.at2(r, c) = m.at2(r, c0 + c);
    return out;
}

void validate_problem(const ScdlProblem& pb) {
    if (pb.s_h.ndim() != 2 || pb.s_l.ndim() != 2)
        throw ShapeError("scdl: S_h and S_l must be matrices");
    if (pb.s_h.cols() != pb.s_l.cols())
        throw ShapeError("scdl: sample counts differ between resolutions");
    if (pb.atoms == 0 || pb.atoms > pb.s_h.cols())
        throw ConfigError("scdl: need K >= A >= 1");
    if (pb.c1 <= 0 || pb.c2 <= 0 || pb.c3 <= 0 || pb.delta <= 0)
        throw ConfigError("scdl: ADMM steps and delta must be positive");
    if (pb.lambda_h < 0 || pb.lambda_l < 0)
        throw ConfigError("scdl: sparsity weights must be non-negative");
    if (pb.partitions == 0) throw ConfigError("scdl: partitions must be >= 1");
}

} // namespace

std::pair<Tensor, Tensor> init_dictionaries(const ScdlProblem& problem) {
    validate_problem(problem);
    const std::size_t k = problem.s_h.cols(), a = problem.atoms;
    // Partial Fisher-Yates over column indices; both dictionaries take the
    // same indices so the low/high coupling is preserved.
    GaussianRng rng(problem.seed);
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i;
    for (std::size_t t = 0; t < a; ++t)
        std::swap(idx[t], idx[t + rng.next_u64() % (k - t)]);

    Tensor x_h = Tensor::zeros({problem.s_h.rows(), a});
    Tensor x_l = Tensor::zeros({problem.s_l.rows(), a});
    for (std::size_t c = 0; c < a; ++c) {
        for (std::size_t r = 0; r < x_h.rows(); ++r) x_h.at2(r, c) = problem.s_h.at2(r, idx[c]);
        for (std::size_t r = 0; r < x_l.rows(); ++r) x_l.at2(r, c) = problem.s_l.at2(r, idx[c]);
    }
    return {unit_norm_columns(std::move(x_h)), unit_norm_columns(std::move(x_l))};
}

Tensor update_dictionary(const Tensor& x, const Tensor& swt, const Tensor& phi, double delta) {
    if (phi.rows() != phi.cols() || phi.rows() != x.cols() || !swt.same_shape(x))
        throw ShapeError("update_dictionary: inconsistent shapes");
    const Tensor resid = swt - matmul(x, phi);
    // resid * (phi + delta I)^-1 via the transposed SPD solve.
    const Tensor step = transpose(solve_spd(phi, delta, transpose(resid)));
    Tensor out = x + step;
    for (std::size_t c = 0; c < out.cols(); ++c) {
        double nrm2 = 0.0;
        for (std::size_t r = 0; r < out.rows(); ++r) nrm2 += out.at2(r, c) * out.at2(r, c);
        if (nrm2 > 1.0) {
            const double inv = 1.0 / std::sqrt(nrm2);
            for (std::size_t r = 0; r < out.rows(); ++r) out.at2(r, c) *= inv;
        }
    }
    return out;
}

namespace detail {

// Record layout per partition (one record = one column block):
//   [s_h, s_l, w_h, w_l, p, q, y1, y2, y3], code matrices A x K_j.
// Broadcasts: "scdl.params" [c1,c2,c3,lambda_h,lambda_l,A]; per-iteration
// "scdl.xh", "scdl.xl", "scdl.bh", "scdl.bl".

void register_scdl_kernels() {
    auto& reg = KernelRegistry::instance();

    reg.register_map("scdl.init", [](const KernelCtx& ctx, const Record& r) {
        const Tensor& p = ctx.broadcast("scdl.params").at(0);
        const auto atoms = static_cast<std::size_t>(p[5]);
        const std::size_t kj = r.at(0).cols();
        Record out{r.at(0), r.at(1)};
        for (int i = 0; i < 7; ++i) out.push_back(Tensor::zeros({atoms, kj}));
        return out;
    });

    reg.register_map("scdl.admm", [](const KernelCtx& ctx, const Record& r) {
        const Tensor& prm = ctx.broadcast("scdl.params").at(0);
        const double c1 = prm[0], c2 = prm[1], c3 = prm[2];
        const double lh = prm[3], ll = prm[4];
        const Tensor& xh = ctx.broadcast("scdl.xh").at(0);
        const Tensor& xl = ctx.broadcast("scdl.xl").at(0);
        const Tensor& bh = ctx.broadcast("scdl.bh").at(0);
        const Tensor& bl = ctx.broadcast("scdl.bl").at(0);

        const Tensor& sh = r.at(0);
        const Tensor& sl = r.at(1);
        Tensor wl = r.at(3), p = r.at(4), q = r.at(5);
        Tensor y1 = r.at(6), y2 = r.at(7), y3 = r.at(8);

        // Gauss-Seidel sweep in the listed variable order; W_l sees the
        // just-updated W_h.
        const Tensor wh = matmul(
            bh, 2.0 * matmul(transpose(xh), sh) + y1 - y3 + c1 * p + c3 * wl);
        wl = matmul(
            bl, 2.0 * matmul(transpose(xl), sl) + y2 + y3 + c2 * q + c3 * wh);
        p = soft_threshold(wh - (1.0 / c1) * y1, lh / c1);
        q = soft_threshold(wl - (1.0 / c2) * y2, ll / c2);
        y1 += c1 * (p - wh);
        y2 += c2 * (q - wl);
        y3 += c3 * (wh - wl);

        for (const Tensor* t : std::initializer_list<const Tensor*>{
                 &wh, &wl, &p, &q, &y1, &y2, &y3})
            if (!t->all_finite()) throw NumericError("scdl: non-finite block update");
        return Record{sh, sl, wh, wl, p, q, y1, y2, y3};
    });

    reg.register_map("scdl.outer", [](const KernelCtx&, const Record& r) {
        const Tensor wh_t = transpose(r.at(2)), wl_t = transpose(r.at(3));
        return Record{matmul(r.at(0), wh_t), matmul(r.at(1), wl_t),
                      matmul(r.at(2), wh_t), matmul(r.at(3), wl_t)};
    });

    reg.register_map("scdl.nrmse", [](const KernelCtx& ctx, const Record& r) {
        const Tensor& xh = ctx.broadcast("scdl.xh").at(0);
        const Tensor& xl = ctx.broadcast("scdl.xl").at(0);
        const Tensor rh = r.at(0) - matmul(xh, r.at(2));
        const Tensor rl = r.at(1) - matmul(xl, r.at(3));
        const Tensor cons = r.at(2) - r.at(3);
        auto sq = [](const Tensor& t) { return t.norm_fro() * t.norm_fro(); };
        return Record{Tensor({3}, {sq(rh), sq(rl), sq(cons)})};
    });
}

} // namespace detail

ScdlResult scdl_train(const ScdlProblem& problem, Engine& engine,
                      const ScdlIterationHook& hook, const ScdlStateHook& state_hook) {
    register_builtin_kernels();
    validate_problem(problem);

    const std::size_t k = problem.s_h.cols(), a = problem.atoms;
    const std::size_t parts = problem.partitions;

    engine.broadcast("scdl.params",
                     {Tensor({6}, {problem.c1, problem.c2, problem.c3, problem.lambda_h,
                                   problem.lambda_l, static_cast<double>(a)})});

    // Column blocks, one record per partition, in fixed column order.
    const auto counts = partition_sizes(k, parts);
    std::vector<Record> sh_recs, sl_recs;
    std::size_t c0 = 0;
    for (std::size_t j = 0; j < parts; ++j) {
        sh_recs.push_back({columns_slice(problem.s_h, c0, counts[j])});
        sl_recs.push_back({columns_slice(problem.s_l, c0, counts[j])});
        c0 += counts[j];
    }
    const DatasetHandle d_sh = engine.parallelize_records(std::move(sh_recs), parts);
    const DatasetHandle d_sl = engine.parallelize_records(std::move(sl_recs), parts);
    DatasetHandle state = engine.checkpoint(
        engine.map(engine.zip_bundle({d_sh, d_sl}), "scdl.init"));

    auto [x_h, x_l] = init_dictionaries(problem);
    const double sh_norm = problem.s_h.norm_fro();
    const double sl_norm = problem.s_l.norm_fro();

    ScdlResult result;
    using clock = std::chrono::steady_clock;

    for (int iter = 1; iter <= problem.max_iter; ++iter) {
        const auto t0 = clock::now();

        const double ch = problem.c1 + problem.c3, cl = problem.c2 + problem.c3;
        const Tensor bh = inverse_spd(2.0 * matmul(transpose(x_h), x_h) + ch * identity(a));
        const Tensor bl = inverse_spd(2.0 * matmul(transpose(x_l), x_l) + cl * identity(a));
        engine.broadcast("scdl.xh", {x_h});
        engine.broadcast("scdl.xl", {x_l});
        engine.broadcast("scdl.bh", {bh});
        engine.broadcast("scdl.bl", {bl});

        const DatasetHandle next = engine.map(state, "scdl.admm");
        const Record outer = engine.reduce(next, "scdl.outer", "add");
        // Re-root before the next broadcast epoch so lineage recomputation
        // can never observe newer dictionaries.
        const DatasetHandle prev = state;
        state = engine.checkpoint(next);
        if (state.id != prev.id) engine.release(prev);

        x_h = update_dictionary(x_h, outer.at(0), outer.at(2), problem.delta);
        x_l = update_dictionary(x_l, outer.at(1), outer.at(3), problem.delta);

        engine.broadcast("scdl.xh", {x_h});
        engine.broadcast("scdl.xl", {x_l});
        const Record nr = engine.reduce(state, "scdl.nrmse", "add");
        const double nrmse_h = std::sqrt(nr.at(0)[0]) / std::max(sh_norm, 1e-300);
        const double nrmse_l = std::sqrt(nr.at(0)[1]) / std::max(sl_norm, 1e-300);
        const double consensus = std::sqrt(nr.at(0)[2]);
        if (!std::isfinite(nrmse_h) || !std::isfinite(nrmse_l))
            throw NumericError("scdl: non-finite NRMSE");

        result.nrmse_history.emplace_back(nrmse_h, nrmse_l);
        result.consensus_history.push_back(consensus);
        result.iterations = iter;
        const double wall_ms =
            std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        if (hook) hook(iter, wall_ms, nrmse_h);
        if (state_hook) state_hook(iter, x_h, x_l);
    }

    result.x_h = std::move(x_h);
    result.x_l = std::move(x_l);
    return result;
}

} // namespace stackbundle
