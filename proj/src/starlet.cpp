#include "stackbundle/starlet.hpp"

#include <cmath>

namespace stackbundle {

namespace {

constexpr double kB3[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};

// mirror without edge repetition: -1 -> 1, n -> n-2
std::ptrdiff_t mirror(std::ptrdiff_t i, std::ptrdiff_t n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

// separable pass over one axis; adjoint scatters instead of gathers
Tensor pass_axis(const Tensor& in, std::size_t step, bool rows, bool adjoint) {
    const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(in.rows());
    const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(in.cols());
    Tensor out = Tensor::zeros({in.rows(), in.cols()});
    const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(step);
    for (std::ptrdiff_t y = 0; y < h; ++y) {
        for (std::ptrdiff_t x = 0; x < w; ++x) {
            for (int t = -2; t <= 2; ++t) {
                const double coef = kB3[t + 2];
                std::ptrdiff_t sy = y, sx = x;
                if (rows)
                    sy = mirror(y + t * s, h);
                else
                    sx = mirror(x + t * s, w);
                if (adjoint)
                    out.at2(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) +=
                        coef * in.at2(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                else
                    out.at2(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) +=
                        coef * in.at2(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
        }
    }
    return out;
}

} // namespace

std::size_t starlet_max_scales(std::size_t h, std::size_t w) {
    std::size_t m = std::min(h, w), log2m = 0;
    while ((m >> 1) >= 1) { m >>= 1; ++log2m; }
    return log2m > 1 ? log2m - 1 : 0;  // floor(log2(min)) - 1
}

Tensor starlet_smooth(const Tensor& image, std::size_t scale) {
    const std::size_t step = static_cast<std::size_t>(1) << scale;
    return pass_axis(pass_axis(image, step, true, false), step, false, false);
}

Tensor starlet_smooth_adjoint(const Tensor& image, std::size_t scale) {
    const std::size_t step = static_cast<std::size_t>(1) << scale;
    // adjoint of (rows then cols) is (cols-adjoint then rows-adjoint)
    return pass_axis(pass_axis(image, step, false, true), step, true, true);
}

StarletCoeffs starlet_decompose(const Tensor& image, std::size_t scales) {
    if (image.ndim() != 2) throw ShapeError("starlet: matrix expected");
    if (scales < 1) throw ConfigError("starlet: scales must be >= 1");
    if (scales > starlet_max_scales(image.rows(), image.cols()))
        throw ConfigError("starlet: too many scales for image size");
    StarletCoeffs c;
    Tensor smooth = image;
    for (std::size_t j = 0; j < scales; ++j) {
        Tensor next = starlet_smooth(smooth, j);
        c.details.push_back(smooth - next);
        smooth = std::move(next);
    }
    c.coarse = std::move(smooth);
    return c;
}

Tensor starlet_reconstruct(const StarletCoeffs& c) {
    Tensor out = c.coarse;
    for (const Tensor& d : c.details) {
        if (!d.same_shape(out)) throw ShapeError("starlet_reconstruct: shape mismatch");
        out += d;
    }
    return out;
}

Tensor starlet_adjoint_details(const std::vector<Tensor>& details) {
    if (details.empty()) throw ShapeError("starlet_adjoint_details: no detail planes");
    const std::size_t scales = details.size();
    for (const Tensor& d : details)
        if (!d.same_shape(details[0]))
            throw ShapeError("starlet_adjoint_details: inconsistent plane shapes");
    // Phi^T u = sum_j A_{j-1}^T (I - S_{j-1}^T) u_j, accumulated backwards:
    // r = (I - S_{j-1}^T) u_j + S_{j-1}^T r for j = J..1
    Tensor r = Tensor::zeros(details[0].dims());
    for (std::size_t j = scales; j-- > 0;) {
        Tensor t = r - details[j];
        r = details[j] + starlet_smooth_adjoint(t, j);
        // r = u_j + S_j^T (r - u_j)
    }
    return r;
}

} // namespace stackbundle
