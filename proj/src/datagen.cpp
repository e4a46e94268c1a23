#include "stackbundle/datagen.hpp"

#include <cmath>
#include <numbers>

namespace stackbundle {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

} // namespace

GaussianRng::GaussianRng(std::uint64_t seed) {
    // xoshiro256** state seeded via splitmix64, never all-zero.
    for (auto& s : s_) s = splitmix64(seed);
}

std::uint64_t GaussianRng::next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double GaussianRng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double GaussianRng::next() {
    // Box-Muller; std::normal_distribution is implementation-defined.
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
}

namespace {

/// Anisotropic Gaussian stamp, normalized to unit sum.
Tensor gaussian_stamp(std::size_t size, double cx, double cy, double sx, double sy,
                      double theta, double amplitude) {
    Tensor out = Tensor::zeros({size, size});
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t r = 0; r < size; ++r) {
        for (std::size_t c = 0; c < size; ++c) {
            const double dy = static_cast<double>(r) - cy;
            const double dx = static_cast<double>(c) - cx;
            const double xr = ct * dx + st * dy;
            const double yr = -st * dx + ct * dy;
            out.at2(r, c) = amplitude *
                std::exp(-0.5 * (xr * xr / (sx * sx) + yr * yr / (sy * sy)));
        }
    }
    return out;
}

Tensor unit_sum(Tensor t) {
    const double s = t.sum();
    if (s <= 0.0) throw NumericError("datagen: degenerate stamp");
    t *= 1.0 / s;
    return t;
}

} // namespace

GalaxyStack gen_galaxy_stack(const GalaxyStackSpec& spec) {
    if (spec.n_images == 0) throw ConfigError("gen_galaxy_stack: n_images must be >= 1");
    if (spec.stamp_size % 2 == 0) throw ConfigError("gen_galaxy_stack: stamp_size must be odd");
    if (spec.psf_size % 2 == 0 || spec.psf_size > spec.stamp_size)
        throw ConfigError("gen_galaxy_stack: psf_size must be odd and <= stamp_size");
    if (spec.n_unique_psfs == 0) throw ConfigError("gen_galaxy_stack: n_unique_psfs must be >= 1");
    if (spec.noise_sigma < 0) throw DomainError("gen_galaxy_stack: noise_sigma must be >= 0");

    const std::size_t n = spec.n_images, s = spec.stamp_size, p = spec.psf_size;

    // Unique PSFs: ellipticity and width vary smoothly with a virtual (u,v)
    // field position laid out on a ring; images pick PSFs round-robin.
    std::vector<Tensor> psfs;
    psfs.reserve(spec.n_unique_psfs);
    const double pc = static_cast<double>(p - 1) / 2.0;
    for (std::size_t i = 0; i < spec.n_unique_psfs; ++i) {
        const double u = 2.0 * std::numbers::pi * static_cast<double>(i) /
                         static_cast<double>(spec.n_unique_psfs);
        const double sx = 1.2 + 0.5 * std::sin(u);
        const double sy = 1.2 + 0.5 * std::cos(2.0 * u);
        const double theta = 0.5 * std::numbers::pi * std::sin(3.0 * u);
        psfs.push_back(unit_sum(gaussian_stamp(p, pc, pc, sx, sy, theta, 1.0)));
    }

    GalaxyStack out;
    out.truth = Tensor::zeros({n, s, s});
    out.observed = Tensor::zeros({n, s, s});
    out.psf = Tensor::zeros({n, p, p});
    out.sigma.assign(n, spec.noise_sigma);

    GaussianRng rng(spec.seed);
    const double sc = static_cast<double>(s - 1) / 2.0;
    for (std::size_t i = 0; i < n; ++i) {
        // Elliptical-Gaussian blob near the stamp center.
        const double cx = sc + 2.0 * (rng.uniform() - 0.5);
        const double cy = sc + 2.0 * (rng.uniform() - 0.5);
        const double gx = 1.5 + 2.0 * rng.uniform();
        const double gy = 1.5 + 2.0 * rng.uniform();
        const double th = std::numbers::pi * rng.uniform();
        const double amp = 0.5 + rng.uniform();
        Tensor x = gaussian_stamp(s, cx, cy, gx, gy, th, amp);

        const Tensor& psf = psfs[i % psfs.size()];
        Tensor y = convolve2d_same(x, psf);
        for (std::size_t k = 0; k < s * s; ++k) {
            // Noise is drawn even at sigma=0 so sigma only scales the field.
            const double z = rng.next();
            y[k] += spec.noise_sigma * z;
        }

        std::copy(x.data().begin(), x.data().end(), out.truth.data().begin() + i * s * s);
        std::copy(y.data().begin(), y.data().end(), out.observed.data().begin() + i * s * s);
        std::copy(psf.data().begin(), psf.data().end(), out.psf.data().begin() + i * p * p);
    }
    return out;
}

namespace {

/// Separable Gaussian blur with mirror boundary; radius 3*sigma.
Tensor gaussian_blur(const Tensor& img, double sigma) {
    if (sigma <= 0.0) return img;
    const auto h = img.dims()[0], w = img.dims()[1];
    const int rad = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> taps(2 * rad + 1);
    double sum = 0.0;
    for (int k = -rad; k <= rad; ++k) {
        taps[k + rad] = std::exp(-0.5 * k * k / (sigma * sigma));
        sum += taps[k + rad];
    }
    for (auto& t : taps) t /= sum;
    auto mirror = [](long i, long nlen) {
        while (i < 0 || i >= nlen) {
            if (i < 0) i = -i;
            if (i >= nlen) i = 2 * nlen - 2 - i;
        }
        return static_cast<std::size_t>(i);
    };
    Tensor tmp = Tensor::zeros({h, w});
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int k = -rad; k <= rad; ++k)
                acc += taps[k + rad] * img.at2(r, mirror(static_cast<long>(c) + k, w));
            tmp.at2(r, c) = acc;
        }
    Tensor out = Tensor::zeros({h, w});
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int k = -rad; k <= rad; ++k)
                acc += taps[k + rad] * tmp.at2(mirror(static_cast<long>(r) + k, h), c);
            out.at2(r, c) = acc;
        }
    return out;
}

/// Band-limited texture: sum of a few seeded sinusoids plus smoothed noise.
Tensor base_texture(std::size_t side, GaussianRng& rng) {
    Tensor img = Tensor::zeros({side, side});
    for (int wave = 0; wave < 6; ++wave) {
        const double fx = 0.05 + 0.2 * rng.uniform();
        const double fy = 0.05 + 0.2 * rng.uniform();
        const double ph = 2.0 * std::numbers::pi * rng.uniform();
        const double a = 0.3 + rng.uniform();
        for (std::size_t r = 0; r < side; ++r)
            for (std::size_t c = 0; c < side; ++c)
                img.at2(r, c) += a * std::sin(2.0 * std::numbers::pi *
                                              (fx * static_cast<double>(c) +
                                               fy * static_cast<double>(r)) + ph);
    }
    Tensor noise = Tensor::zeros({side, side});
    for (std::size_t k = 0; k < side * side; ++k) noise[k] = rng.next();
    img += gaussian_blur(noise, 1.5);
    return img;
}

} // namespace

PatchPairs gen_patch_pairs(const PatchPairSpec& spec) {
    if (spec.p_side <= spec.m_side)
        throw ConfigError("gen_patch_pairs: p_side must exceed m_side");
    if (spec.patches == 0) throw ConfigError("gen_patch_pairs: need K >= 1");

    const std::size_t p = spec.p_side, m = spec.m_side, k = spec.patches;
    PatchPairs out;
    out.s_h = Tensor::zeros({p * p, k});
    out.s_l = Tensor::zeros({m * m, k});

    GaussianRng rng(spec.seed);
    const std::size_t tex_side = 64;
    const std::size_t per_tex = 256;
    Tensor tex, tex_lo;
    for (std::size_t j = 0; j < k; ++j) {
        if (j % per_tex == 0) {
            tex = base_texture(tex_side, rng);
            tex_lo = gaussian_blur(tex, spec.blur_sigma);
        }
        const std::size_t r0 = rng.next_u64() % (tex_side - p);
        const std::size_t c0 = rng.next_u64() % (tex_side - p);
        for (std::size_t r = 0; r < p; ++r)
            for (std::size_t c = 0; c < p; ++c)
                out.s_h.at2(r * p + c, j) = tex.at2(r0 + r, c0 + c);
        // Decimate the blurred patch: sample m x m points spanning the p-patch.
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < m; ++c) {
                const auto rr = r0 + (r * (p - 1)) / (m - 1 > 0 ? m - 1 : 1);
                const auto cc = c0 + (c * (p - 1)) / (m - 1 > 0 ? m - 1 : 1);
                out.s_l.at2(r * m + c, j) = tex_lo.at2(rr, cc);
            }
    }
    return out;
}

PatchPairs gen_coupled_sparse(std::size_t p_dim, std::size_t m_dim, std::size_t atoms,
                              std::size_t samples, std::size_t sparsity, std::uint64_t seed) {
    if (atoms == 0 || samples == 0 || sparsity == 0 || sparsity > atoms)
        throw ConfigError("gen_coupled_sparse: bad dimensions");
    GaussianRng rng(seed);

    auto unit_cols = [&](std::size_t rows) {
        Tensor x = Tensor::zeros({rows, atoms});
        for (std::size_t a = 0; a < atoms; ++a) {
            double nrm2 = 0.0;
            for (std::size_t r = 0; r < rows; ++r) {
                const double v = rng.next();
                x.at2(r, a) = v;
                nrm2 += v * v;
            }
            const double inv = 1.0 / std::sqrt(nrm2);
            for (std::size_t r = 0; r < rows; ++r) x.at2(r, a) *= inv;
        }
        return x;
    };
    const Tensor x_h = unit_cols(p_dim);
    const Tensor x_l = unit_cols(m_dim);

    // Shared sparse codes so both resolutions come from one process.
    Tensor w = Tensor::zeros({atoms, samples});
    std::vector<std::size_t> idx(atoms);
    for (std::size_t j = 0; j < samples; ++j) {
        for (std::size_t a = 0; a < atoms; ++a) idx[a] = a;
        for (std::size_t t = 0; t < sparsity; ++t) {
            const std::size_t pick = t + rng.next_u64() % (atoms - t);
            std::swap(idx[t], idx[pick]);
            w.at2(idx[t], j) = rng.next();
        }
    }

    PatchPairs out;
    out.s_h = matmul(x_h, w);
    out.s_l = matmul(x_l, w);
    return out;
}

} // namespace stackbundle
