#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "stackbundle/errors.hpp"

namespace stackbundle {

/// Dense row-major n-dimensional array of doubles. Immutable by convention
/// once handed to the engine; all numeric kernels below are pure.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<std::size_t> dims, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> dims);
    static Tensor full(std::vector<std::size_t> dims, double value);
    /// Validates finiteness; use for data entering from files or sockets.
    static Tensor from_external(std::vector<std::size_t> dims, std::vector<double> data);

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t ndim() const { return dims_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t rows() const { return dims_.at(0); }
    std::size_t cols() const { return dims_.at(1); }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double at2(std::size_t r, std::size_t c) const { return data_[r * dims_[1] + c]; }
    double& at2(std::size_t r, std::size_t c) { return data_[r * dims_[1] + c]; }

    bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }
    bool all_finite() const;

    Tensor reshape(std::vector<std::size_t> dims) const;

    /// Slice along the leading axis: returns tensor with dims()[1:].
    Tensor slice(std::size_t index) const;

    double sum() const;
    double norm_fro() const;
    double max_abs() const;

    Tensor& operator+=(const Tensor& o);
    Tensor& operator-=(const Tensor& o);
    Tensor& operator*=(double s);

    friend Tensor operator+(Tensor a, const Tensor& b) { a += b; return a; }
    friend Tensor operator-(Tensor a, const Tensor& b) { a -= b; return a; }
    friend Tensor operator*(Tensor a, double s) { a *= s; return a; }
    friend Tensor operator*(double s, Tensor a) { a *= s; return a; }

private:
    std::vector<std::size_t> dims_;
    std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& dims);

double dot(const Tensor& a, const Tensor& b);

/// a: m x k, b: k x n -> m x n
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);
Tensor identity(std::size_t n);

/// Linear convolution, zero-padded boundary, output cropped to the image
/// size centered on the kernel center. Kernel extents must be odd and no
/// larger than the image.
Tensor convolve2d_same(const Tensor& image, const Tensor& kernel);
/// Adjoint of convolve2d_same: convolution with the kernel rotated 180 deg.
Tensor correlate2d_same(const Tensor& image, const Tensor& kernel);

struct SvdResult {
    Tensor u;                    // r x t, orthonormal columns
    std::vector<double> s;       // t singular values, non-increasing
    Tensor v;                    // c x t, orthonormal columns
};

/// Thin SVD (t = min(r, c)) via one-sided Jacobi rotations.
SvdResult svd(const Tensor& m);

/// Solve (A + delta*I) X = B for symmetric positive semidefinite A (n x n),
/// B given as n x m. Cholesky; delta > 0 keeps it definite.
Tensor solve_spd(const Tensor& a, double delta, const Tensor& b);

/// Inverse of a symmetric positive definite matrix.
Tensor inverse_spd(const Tensor& a);

} // namespace stackbundle
