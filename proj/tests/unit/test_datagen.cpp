#include <doctest.h>

#include <cmath>

#include "stackbundle/datagen.hpp"

using namespace stackbundle;

TEST_CASE("gaussian rng is deterministic with sane moments") {
    GaussianRng a(42), b(42), c(43);
    CHECK(a.next() == b.next());
    CHECK(a.next_u64() == b.next_u64());
    CHECK(a.next() != c.next());

    GaussianRng g(7);
    double sum = 0.0, sum2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double v = g.next();
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::fabs(mean) < 0.05);
    CHECK(std::fabs(var - 1.0) < 0.05);

    GaussianRng u(11);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.uniform();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("galaxy stack shapes, determinism, and PSF normalization") {
    GalaxyStackSpec spec;
    spec.n_images = 12;
    spec.stamp_size = 17;
    spec.psf_size = 5;
    spec.n_unique_psfs = 4;
    spec.noise_sigma = 0.02;
    spec.seed = 9;

    const GalaxyStack s1 = gen_galaxy_stack(spec);
    CHECK(s1.observed.dims() == std::vector<std::size_t>{12, 17, 17});
    CHECK(s1.truth.dims() == std::vector<std::size_t>{12, 17, 17});
    CHECK(s1.psf.dims() == std::vector<std::size_t>{12, 5, 5});
    CHECK(s1.sigma.size() == 12);
    for (double sg : s1.sigma) CHECK(sg == 0.02);

    for (std::size_t i = 0; i < 12; ++i)
        CHECK(std::fabs(s1.psf.slice(i).sum() - 1.0) <= 1e-12);

    // 4 unique PSFs reused round-robin
    CHECK((s1.psf.slice(0) - s1.psf.slice(4)).max_abs() == 0.0);
    CHECK((s1.psf.slice(1) - s1.psf.slice(5)).max_abs() == 0.0);
    CHECK((s1.psf.slice(0) - s1.psf.slice(1)).max_abs() > 0.0);

    const GalaxyStack s2 = gen_galaxy_stack(spec);
    CHECK((s1.observed - s2.observed).max_abs() == 0.0);

    spec.seed = 10;
    const GalaxyStack s3 = gen_galaxy_stack(spec);
    CHECK((s1.observed - s3.observed).max_abs() > 0.0);

    // sigma = 0: observed equals the blurred truth exactly
    spec.seed = 9;
    spec.noise_sigma = 0.0;
    const GalaxyStack clean = gen_galaxy_stack(spec);
    CHECK((clean.observed - clean.truth).max_abs() > 0.0);  // still blurred
    const double resid = (clean.observed - s1.observed).max_abs();
    CHECK(resid > 0.0);  // the noisy run differs
}

TEST_CASE("coupled sparse pairs share the generating codes") {
    const PatchPairs p = gen_coupled_sparse(25, 9, 16, 200, 5, 3);
    CHECK(p.s_h.dims() == std::vector<std::size_t>{25, 200});
    CHECK(p.s_l.dims() == std::vector<std::size_t>{9, 200});
    CHECK(p.s_h.norm_fro() > 0.0);
    CHECK(p.s_l.norm_fro() > 0.0);

    const PatchPairs q = gen_coupled_sparse(25, 9, 16, 200, 5, 3);
    CHECK((p.s_h - q.s_h).max_abs() == 0.0);
    CHECK((p.s_l - q.s_l).max_abs() == 0.0);
}

TEST_CASE("patch pairs have the decimated geometry") {
    PatchPairSpec spec;
    spec.p_side = 6;
    spec.m_side = 3;
    spec.patches = 64;
    spec.seed = 5;
    const PatchPairs p = gen_patch_pairs(spec);
    CHECK(p.s_h.dims() == std::vector<std::size_t>{36, 64});
    CHECK(p.s_l.dims() == std::vector<std::size_t>{9, 64});
    const PatchPairs q = gen_patch_pairs(spec);
    CHECK((p.s_h - q.s_h).max_abs() == 0.0);
}
