#include "stackbundle/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stackbundle {

std::size_t shape_product(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
    if (dims_.empty())
        throw ShapeError("tensor: dims must be non-empty");
    for (auto d : dims_)
        if (d == 0) throw ShapeError("tensor: every extent must be >= 1");
    if (data_.size() != shape_product(dims_))
        throw ShapeError("tensor: data length does not match dims");
}

Tensor Tensor::zeros(std::vector<std::size_t> dims) {
    auto n = shape_product(dims);
    return Tensor(std::move(dims), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> dims, double value) {
    auto n = shape_product(dims);
    return Tensor(std::move(dims), std::vector<double>(n, value));
}

Tensor Tensor::from_external(std::vector<std::size_t> dims, std::vector<double> data) {
    Tensor t(std::move(dims), std::move(data));
    if (!t.all_finite())
        throw NumericError("tensor: non-finite value in external input");
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::reshape(std::vector<std::size_t> dims) const {
    if (shape_product(dims) != data_.size())
        throw ShapeError("reshape: element count mismatch");
    return Tensor(std::move(dims), data_);
}

Tensor Tensor::slice(std::size_t index) const {
    if (ndim() < 2) throw ShapeError("slice: need ndim >= 2");
    if (index >= dims_[0]) throw ShapeError("slice: index out of range");
    std::vector<std::size_t> sub(dims_.begin() + 1, dims_.end());
    std::size_t stride = shape_product(sub);
    std::vector<double> out(data_.begin() + index * stride,
                            data_.begin() + (index + 1) * stride);
    return Tensor(std::move(sub), std::move(out));
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Tensor::norm_fro() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

Tensor& Tensor::operator+=(const Tensor& o) {
    if (!same_shape(o)) throw ShapeError("operator+=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
    if (!same_shape(o)) throw ShapeError("operator-=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw ShapeError("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw ShapeError("matmul: operands must be matrices");
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions differ");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.at2(i, p);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j)
                out.at2(i, j) += av * b.at2(p, j);
        }
    }
    return out;
}

Tensor transpose(const Tensor& m) {
    if (m.ndim() != 2) throw ShapeError("transpose: matrix expected");
    Tensor out = Tensor::zeros({m.cols(), m.rows()});
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            out.at2(j, i) = m.at2(i, j);
    return out;
}

Tensor identity(std::size_t n) {
    Tensor out = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) out.at2(i, i) = 1.0;
    return out;
}

namespace {

Tensor conv2d_impl(const Tensor& image, const Tensor& kernel, bool flip) {
    if (image.ndim() != 2 || kernel.ndim() != 2)
        throw ShapeError("convolve2d_same: matrices expected");
    const std::size_t h = image.rows(), w = image.cols();
    const std::size_t p = kernel.rows(), q = kernel.cols();
    if (p % 2 == 0 || q % 2 == 0)
        throw ShapeError("convolve2d_same: kernel extents must be odd");
    if (p > h || q > w)
        throw ShapeError("convolve2d_same: kernel larger than image");
    const std::ptrdiff_t cy = static_cast<std::ptrdiff_t>(p) / 2;
    const std::ptrdiff_t cx = static_cast<std::ptrdiff_t>(q) / 2;
    Tensor out = Tensor::zeros({h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::size_t ky = 0; ky < p; ++ky) {
                for (std::size_t kx = 0; kx < q; ++kx) {
                    // convolution: out(y,x) = sum_k img(y - (ky-cy), x - (kx-cx)) * ker(ky,kx)
                    std::ptrdiff_t sy, sx;
                    if (flip) {
                        sy = static_cast<std::ptrdiff_t>(y) - (static_cast<std::ptrdiff_t>(ky) - cy);
                        sx = static_cast<std::ptrdiff_t>(x) - (static_cast<std::ptrdiff_t>(kx) - cx);
                    } else {
                        sy = static_cast<std::ptrdiff_t>(y) + (static_cast<std::ptrdiff_t>(ky) - cy);
                        sx = static_cast<std::ptrdiff_t>(x) + (static_cast<std::ptrdiff_t>(kx) - cx);
                    }
                    if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(h) ||
                        sx >= static_cast<std::ptrdiff_t>(w))
                        continue;  // zero padding
                    acc += image.at2(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) *
                           kernel.at2(ky, kx);
                }
            }
            out.at2(y, x) = acc;
        }
    }
    return out;
}

} // namespace

Tensor convolve2d_same(const Tensor& image, const Tensor& kernel) {
    return conv2d_impl(image, kernel, true);
}

Tensor correlate2d_same(const Tensor& image, const Tensor& kernel) {
    return conv2d_impl(image, kernel, false);
}

SvdResult svd(const Tensor& m) {
    if (m.ndim() != 2) throw ShapeError("svd: matrix expected");
    if (!m.all_finite()) throw NumericError("svd: non-finite input");
    const bool wide = m.cols() > m.rows();
    // work on a tall matrix so the one-sided sweep runs over <= rows columns
    Tensor a = wide ? transpose(m) : m;
    const std::size_t r = a.rows(), c = a.cols();

    // One-sided Jacobi: orthogonalize the columns of a in place, accumulate V.
    Tensor v = identity(c);
    const double eps = 1e-14;
    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < c; ++p) {
            for (std::size_t q = p + 1; q < c; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < r; ++i) {
                    const double ap = a.at2(i, p), aq = a.at2(i, q);
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                off = std::max(off, std::fabs(gamma) / std::max(std::sqrt(alpha * beta), 1e-300));
                if (std::fabs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                for (std::size_t i = 0; i < r; ++i) {
                    const double ap = a.at2(i, p), aq = a.at2(i, q);
                    a.at2(i, p) = cs * ap - sn * aq;
                    a.at2(i, q) = sn * ap + cs * aq;
                }
                for (std::size_t i = 0; i < c; ++i) {
                    const double vp = v.at2(i, p), vq = v.at2(i, q);
                    v.at2(i, p) = cs * vp - sn * vq;
                    v.at2(i, q) = sn * vp + cs * vq;
                }
            }
        }
        if (off < eps) break;
    }

    std::vector<double> s(c, 0.0);
    Tensor u = Tensor::zeros({r, c});
    for (std::size_t j = 0; j < c; ++j) {
        double nrm = 0.0;
        for (std::size_t i = 0; i < r; ++i) nrm += a.at2(i, j) * a.at2(i, j);
        nrm = std::sqrt(nrm);
        s[j] = nrm;
        if (nrm > 0.0)
            for (std::size_t i = 0; i < r; ++i) u.at2(i, j) = a.at2(i, j) / nrm;
        else
            u.at2(j % r, j) = 1.0;  // arbitrary unit vector for a null column
    }

    // sort singular values descending
    std::vector<std::size_t> order(c);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return s[x] > s[y]; });
    Tensor us = Tensor::zeros({r, c}), vs = Tensor::zeros({c, c});
    std::vector<double> ss(c);
    for (std::size_t j = 0; j < c; ++j) {
        ss[j] = s[order[j]];
        for (std::size_t i = 0; i < r; ++i) us.at2(i, j) = u.at2(i, order[j]);
        for (std::size_t i = 0; i < c; ++i) vs.at2(i, j) = v.at2(i, order[j]);
    }

    if (wide) return SvdResult{std::move(vs), std::move(ss), std::move(us)};
    return SvdResult{std::move(us), std::move(ss), std::move(vs)};
}

Tensor solve_spd(const Tensor& a, double delta, const Tensor& b) {
    if (a.ndim() != 2 || a.rows() != a.cols())
        throw ShapeError("solve_spd: square matrix expected");
    if (b.rows() != a.rows()) throw ShapeError("solve_spd: rhs rows mismatch");
    const std::size_t n = a.rows(), m = b.cols();
    Tensor l = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a.at2(i, j) + (i == j ? delta : 0.0);
            for (std::size_t k = 0; k < j; ++k) s -= l.at2(i, k) * l.at2(j, k);
            if (i == j) {
                if (s <= 0.0) throw NumericError("solve_spd: matrix not positive definite");
                l.at2(i, i) = std::sqrt(s);
            } else {
                l.at2(i, j) = s / l.at2(j, j);
            }
        }
    }
    Tensor x = b;
    // forward then backward substitution, column by column
    for (std::size_t col = 0; col < m; ++col) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = x.at2(i, col);
            for (std::size_t k = 0; k < i; ++k) s -= l.at2(i, k) * x.at2(k, col);
            x.at2(i, col) = s / l.at2(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = x.at2(ii, col);
            for (std::size_t k = ii + 1; k < n; ++k) s -= l.at2(k, ii) * x.at2(k, col);
            x.at2(ii, col) = s / l.at2(ii, ii);
        }
    }
    return x;
}

Tensor inverse_spd(const Tensor& a) {
    return solve_spd(a, 0.0, identity(a.rows()));
}

} // namespace stackbundle
