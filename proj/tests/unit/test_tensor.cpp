#include <doctest.h>

#include <cmath>

#include "stackbundle/tensor.hpp"

using namespace stackbundle;

namespace {

Tensor analytic(std::size_t r, std::size_t c, double a, double b) {
    Tensor t = Tensor::zeros({r, c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            t.at2(i, j) = std::sin(a * i + b * (j + 1) * (i + 2)) + 0.1 * (double(i) - double(j));
    return t;
}

} // namespace

TEST_CASE("tensor shape and arithmetic basics") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.at2(1, 2) == 6.0);
    CHECK(t.sum() == doctest::Approx(21.0));

    Tensor u = t;
    u += t;
    CHECK(u.at2(0, 1) == 4.0);
    CHECK_THROWS_AS(u += Tensor::zeros({3, 2}), ShapeError);
    CHECK_THROWS_AS(t.reshape({4, 2}), ShapeError);

    const Tensor s3 = Tensor({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}).slice(1);
    CHECK(s3.dims() == std::vector<std::size_t>{2, 2});
    CHECK(s3.at2(1, 0) == 7.0);

    CHECK_THROWS_AS(Tensor({2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor::from_external({1}, {std::nan("")}), NumericError);
}

TEST_CASE("matmul and transpose") {
    const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
    const Tensor c = matmul(a, b);
    CHECK(c.at2(0, 0) == 58.0);
    CHECK(c.at2(1, 1) == 154.0);
    const Tensor at = transpose(a);
    CHECK(at.dims() == std::vector<std::size_t>{3, 2});
    CHECK(at.at2(2, 1) == 6.0);
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("convolve2d_same matches the zero-padded oracle") {
    // DERIVED: scipy.signal.convolve2d(img, ker, mode='same', boundary='fill')
    Tensor img({3, 4}, {1, 2, 3, 4, 5, 6, -5, 8, 9, 10, 11, 12});
    Tensor ker({3, 3}, {0, 0.25, 0, 0.125, 0.25, 0.125, 0, 0.25, 0});
    const double expect[12] = {1.75, 2.5,  0.25, 3.375, 4.5,  4.5,
                               4.0,  5.375, 4.75, 6.5,   4.25, 6.375};
    const Tensor out = convolve2d_same(img, ker);
    for (int i = 0; i < 12; ++i) CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("correlate2d_same is the adjoint of convolve2d_same") {
    const Tensor x = analytic(7, 9, 1.1, 0.4);
    const Tensor y = analytic(7, 9, 0.7, 0.9);
    const Tensor k = analytic(3, 3, 2.0, 0.5);
    const double lhs = dot(convolve2d_same(x, k), y);
    const double rhs = dot(x, correlate2d_same(y, k));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("svd reproduces the oracle singular values and factorization") {
    const Tensor m({4, 3}, {2, -1, 0.5, 1.5, 3, -2, 0, 1, 1, -0.5, 2, 4});
    const SvdResult r = svd(m);
    // DERIVED: numpy.linalg.svd
    const double expect[3] = {4.777240057479465, 3.85793015341162, 2.24596357152359};
    REQUIRE(r.s.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(r.s[i] == doctest::Approx(expect[i]).epsilon(1e-10));

    // reconstruction U diag(s) V^T == m
    Tensor us = r.u;
    for (std::size_t i = 0; i < us.rows(); ++i)
        for (std::size_t j = 0; j < us.cols(); ++j) us.at2(i, j) *= r.s[j];
    const Tensor recon = matmul(us, transpose(r.v));
    CHECK((recon - m).max_abs() <= 1e-10);

    // orthonormal columns
    const Tensor utu = matmul(transpose(r.u), r.u);
    const Tensor vtv = matmul(transpose(r.v), r.v);
    CHECK((utu - identity(3)).max_abs() <= 1e-10);
    CHECK((vtv - identity(3)).max_abs() <= 1e-10);
}

TEST_CASE("solve_spd and inverse_spd match the oracle") {
    const Tensor a({3, 3}, {4, 1, 0.5, 1, 3, -0.5, 0.5, -0.5, 2});
    const Tensor b({3, 2}, {1, 2, 0, -1, 3, 0.5});
    // DERIVED: numpy.linalg.solve(a + 1e-3*I, b)
    const double expect[6] = {-0.012465492821467026, 0.6453132160881813,
                              0.26551860274935185,   -0.5566636824936253,
                              1.5687116680586755,    -0.05046899015037648};
    const Tensor x = solve_spd(a, 1e-3, b);
    for (int i = 0; i < 6; ++i) CHECK(x[i] == doctest::Approx(expect[i]).epsilon(1e-10));

    // DERIVED: numpy.linalg.inv(a)
    const double inv_expect[9] = {0.2911392405063291,   -0.11392405063291139,
                                  -0.10126582278481011, -0.1139240506329114,
                                  0.3924050632911392,   0.12658227848101264,
                                  -0.10126582278481013, 0.12658227848101267,
                                  0.5569620253164557};
    const Tensor inv = inverse_spd(a);
    for (int i = 0; i < 9; ++i) CHECK(inv[i] == doctest::Approx(inv_expect[i]).epsilon(1e-10));
}
