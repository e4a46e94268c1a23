#pragma once

#include <cstdint>
#include <vector>

#include "stackbundle/tensor.hpp"

namespace stackbundle {

struct GalaxyStackSpec {
    std::size_t n_images = 0;
    std::size_t stamp_size = 41;   // odd
    std::size_t psf_size = 13;     // odd, <= stamp_size
    std::size_t n_unique_psfs = 600;
    double noise_sigma = 0.01;     // 0 disables noise
    std::uint64_t seed = 0;
};

struct GalaxyStack {
    Tensor observed;   // n x s x s
    Tensor truth;      // n x s x s
    Tensor psf;        // n x p x p, each unit-sum
    std::vector<double> sigma;  // per image
};

/// Elliptical-Gaussian blobs convolved with smoothly varying anisotropic
/// Gaussian PSFs plus Gaussian noise. Fully deterministic under seed.
GalaxyStack gen_galaxy_stack(const GalaxyStackSpec& spec);

struct PatchPairSpec {
    std::size_t p_side = 5;
    std::size_t m_side = 3;
    std::size_t patches = 0;   // K
    double blur_sigma = 1.0;
    std::uint64_t seed = 0;
};

struct PatchPairs {
    Tensor s_h;  // P x K (P = p_side^2)
    Tensor s_l;  // M x K, column i paired with column i of s_h
};

/// Patches cut from seeded band-limited noise textures; low-resolution
/// columns are the same patches blurred and decimated.
PatchPairs gen_patch_pairs(const PatchPairSpec& spec);

/// Coupled synthetic SCDL problem with known ground truth: S = X_true * W_true,
/// W_true sparsity-per-column codes shared between resolutions.
PatchPairs gen_coupled_sparse(std::size_t p_dim, std::size_t m_dim, std::size_t atoms,
                              std::size_t samples, std::size_t sparsity, std::uint64_t seed);

/// Deterministic N(0,1) via Box-Muller over a seeded xoshiro-style stream
/// (std::normal_distribution is implementation-defined, so not used).
class GaussianRng {
public:
    explicit GaussianRng(std::uint64_t seed);
    double next();       // standard normal
    double uniform();    // [0, 1)
    std::uint64_t next_u64();

private:
    std::uint64_t s_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace stackbundle
