#include <doctest.h>

#include <cmath>
#include <memory>

#include "reference_solvers.hpp"
#include "stackbundle/datagen.hpp"
#include "stackbundle/deconv.hpp"
#include "stackbundle/local_executor.hpp"
#include "stackbundle/scdl.hpp"

using namespace stackbundle;

namespace {

std::unique_ptr<Engine> local_engine(int workers) {
    LocalExecutorConfig lc;
    lc.workers = workers;
    EngineConfig ec;
    return std::make_unique<Engine>(ec, std::make_unique<LocalExecutor>(lc));
}

GalaxyStack small_stack(std::size_t n, std::size_t size, double sigma, std::uint64_t seed) {
    GalaxyStackSpec spec;
    spec.n_images = n;
    spec.stamp_size = size;
    spec.psf_size = 5;
    spec.n_unique_psfs = 3;
    spec.noise_sigma = sigma;
    spec.seed = seed;
    return gen_galaxy_stack(spec);
}

} // namespace

TEST_CASE("apply_h / apply_ht adjoint dot-test") {
    const GalaxyStack s = small_stack(4, 9, 0.01, 1);
    Tensor x = s.truth, y = s.observed;
    const double lhs = dot(apply_h(x, s.psf), y);
    const double rhs = dot(x, apply_ht(y, s.psf));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("compute_weights produces per-scale constant k-sigma planes") {
    const GalaxyStack s = small_stack(2, 17, 0.05, 2);
    const std::vector<double> sigma = {0.05, 0.1};
    const Tensor w = compute_weights(s.psf, sigma, 2, 17, 17, 3.0);
    CHECK(w.dims() == std::vector<std::size_t>{2, 2, 17, 17});

    const std::size_t plane = 17 * 17;
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t sc = 0; sc < 2; ++sc) {
            const double v0 = w[i * 2 * plane + sc * plane];
            for (std::size_t k = 1; k < plane; ++k)
                CHECK(w[i * 2 * plane + sc * plane + k] == v0);
            CHECK(v0 > 0.0);
        }
    }

    // thresholds scale linearly in sigma
    const Tensor w2 = compute_weights(s.psf, {0.1, 0.2}, 2, 17, 17, 3.0);
    CHECK(w2[0] / w[0] == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(w2[2 * plane] / w[2 * plane] == doctest::Approx(2.0).epsilon(1e-10));

    CHECK_THROWS_AS(compute_weights(s.psf, {0.05, -1.0}, 2, 17, 17), DomainError);
    CHECK_THROWS_AS(compute_weights(s.psf, {0.05}, 2, 17, 17), ShapeError);
}

TEST_CASE("deconv input validation") {
    const GalaxyStack s = small_stack(3, 9, 0.01, 4);
    auto engine = local_engine(1);
    DeconvProblem pb;
    pb.y = s.observed;
    pb.psf = s.psf;
    pb.max_iter = 1;

    DeconvProblem bad = pb;
    bad.psf = s.psf * 2.0;  // not unit-sum
    CHECK_THROWS_AS(deconv_solve(bad, *engine), DomainError);

    bad = pb;
    bad.sigma = {0.1, 0.1};  // wrong count
    CHECK_THROWS_AS(deconv_solve(bad, *engine), ShapeError);

    bad = pb;
    bad.sigma = {0.1, 0.1, -0.1};
    CHECK_THROWS_AS(deconv_solve(bad, *engine), DomainError);

    bad = pb;
    bad.partitions = 0;
    CHECK_THROWS_AS(deconv_solve(bad, *engine), ConfigError);
}

TEST_CASE("distributed sparse deconv matches the sequential reference") {
    const GalaxyStack s = small_stack(8, 9, 0.02, 6);
    DeconvProblem pb;
    pb.y = s.observed;
    pb.psf = s.psf;
    pb.sigma = s.sigma;
    pb.prior = DeconvPrior::Sparse;
    pb.scales = 2;
    pb.max_iter = 4;
    pb.eps = 0.0;
    pb.partitions = 3;

    auto engine = local_engine(2);
    std::vector<Tensor> states;
    const DeconvResult r = deconv_solve(
        pb, *engine, nullptr,
        [&states](int, const Tensor& x) { states.push_back(x); });
    const auto ref = reference::reference_deconv(pb);

    REQUIRE(r.iterations == ref.iterations);
    REQUIRE(states.size() == ref.states.size());
    for (std::size_t i = 0; i < states.size(); ++i)
        CHECK((states[i] - ref.states[i]).max_abs() <= 1e-12);
    CHECK((r.x - ref.x).max_abs() <= 1e-12);
    REQUIRE(r.cost_history.size() == ref.cost_history.size());
    for (std::size_t i = 0; i < r.cost_history.size(); ++i)
        CHECK(r.cost_history[i] ==
              doctest::Approx(ref.cost_history[i]).epsilon(1e-9));
}

TEST_CASE("reweighting keeps the distributed run on the reference trajectory") {
    const GalaxyStack s = small_stack(4, 9, 0.05, 8);
    DeconvProblem pb;
    pb.y = s.observed;
    pb.psf = s.psf;
    pb.sigma = s.sigma;
    pb.scales = 2;
    pb.max_iter = 60;
    pb.eps = 1e-3;
    pb.reweight_rounds = 1;
    pb.partitions = 2;

    auto engine = local_engine(2);
    const DeconvResult r = deconv_solve(pb, *engine);
    const auto ref = reference::reference_deconv(pb);
    CHECK(r.iterations == ref.iterations);
    CHECK(r.converged == ref.converged);
    CHECK((r.x - ref.x).max_abs() <= 1e-11);
}

TEST_CASE("distributed low-rank deconv matches the sequential reference") {
    const GalaxyStack s = small_stack(6, 9, 0.02, 7);
    DeconvProblem pb;
    pb.y = s.observed;
    pb.psf = s.psf;
    pb.sigma = s.sigma;
    pb.prior = DeconvPrior::LowRank;
    pb.max_iter = 4;
    pb.eps = 0.0;
    pb.partitions = 3;

    auto engine = local_engine(2);
    std::vector<Tensor> states;
    const DeconvResult r = deconv_solve(
        pb, *engine, nullptr,
        [&states](int, const Tensor& x) { states.push_back(x); });
    const auto ref = reference::reference_deconv(pb);

    REQUIRE(states.size() == ref.states.size());
    for (std::size_t i = 0; i < states.size(); ++i)
        CHECK((states[i] - ref.states[i]).max_abs() <= 1e-10);
    CHECK((r.x - ref.x).max_abs() <= 1e-10);
}

TEST_CASE("scdl input validation") {
    auto engine = local_engine(1);
    ScdlProblem pb;
    pb.s_h = Tensor::zeros({9, 20});
    pb.s_l = Tensor::zeros({4, 20});
    pb.atoms = 30;  // more atoms than samples
    CHECK_THROWS_AS(scdl_train(pb, *engine), ConfigError);
    pb.atoms = 4;
    pb.s_l = Tensor::zeros({4, 19});
    CHECK_THROWS_AS(scdl_train(pb, *engine), ShapeError);
    pb.s_l = Tensor::zeros({4, 20});
    pb.c1 = -1.0;
    CHECK_THROWS_AS(scdl_train(pb, *engine), ConfigError);
}

TEST_CASE("distributed scdl matches the sequential reference") {
    const PatchPairs data = gen_coupled_sparse(9, 4, 8, 48, 3, 12);
    ScdlProblem pb;
    pb.s_h = data.s_h;
    pb.s_l = data.s_l;
    pb.atoms = 8;
    pb.max_iter = 3;
    pb.seed = 5;
    pb.partitions = 3;

    auto engine = local_engine(2);
    std::vector<std::pair<Tensor, Tensor>> states;
    const ScdlResult r = scdl_train(
        pb, *engine, nullptr,
        [&states](int, const Tensor& xh, const Tensor& xl) { states.emplace_back(xh, xl); });
    const auto ref = reference::reference_scdl(pb);

    REQUIRE(states.size() == ref.states.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
        CHECK((states[i].first - ref.states[i].first).max_abs() <= 1e-10);
        CHECK((states[i].second - ref.states[i].second).max_abs() <= 1e-10);
    }
    REQUIRE(r.nrmse_history.size() == ref.nrmse_history.size());
    for (std::size_t i = 0; i < r.nrmse_history.size(); ++i) {
        CHECK(r.nrmse_history[i].first ==
              doctest::Approx(ref.nrmse_history[i].first).epsilon(1e-9));
        CHECK(r.consensus_history[i] ==
              doctest::Approx(ref.consensus_history[i]).epsilon(1e-9));
    }
}
