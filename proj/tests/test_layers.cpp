#include <doctest.h>

#include <cmath>

#include "ckd/layers.hpp"
#include "ckd/rng.hpp"
#include "oracles.hpp"

using namespace ckd;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

} // namespace

TEST_CASE("conv2d: full-overlap sum of ones") {
    Tensor x = Tensor::full({1, 3, 3}, 1.0);
    Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor out = conv2d(x, k, 1, 0);
    CHECK(out.shape() == std::vector<int>{1, 1, 1});
    CHECK(out[0] == doctest::Approx(9.0).epsilon(0));
}

TEST_CASE("conv2d: 1x1 identity kernel returns the input") {
    Rng rng(11);
    Tensor x = random_tensor({1, 2, 2}, rng);
    Tensor k({1, 1, 1, 1}, {1.0});
    Tensor out = conv2d(x, k, 1, 0);
    CHECK(max_abs_diff(out, x) == 0.0);
}

TEST_CASE("conv2d matches the nested-loop reference on random shapes") {
    Rng rng(12);
    for (int trial = 0; trial < 12; ++trial) {
        const int ci = 1 + static_cast<int>(rng.uniform_int(4));
        const int co = 1 + static_cast<int>(rng.uniform_int(3));
        const int h = 3 + static_cast<int>(rng.uniform_int(6));
        const int w = 3 + static_cast<int>(rng.uniform_int(6));
        const int kk = 1 + 2 * static_cast<int>(rng.uniform_int(2)); // 1 or 3
        const int stride = 1 + static_cast<int>(rng.uniform_int(2));
        const int pad = static_cast<int>(rng.uniform_int(2));
        Tensor x = random_tensor({ci, h, w}, rng);
        Tensor k = random_tensor({co, ci, kk, kk}, rng);
        Tensor got = conv2d(x, k, stride, pad);
        Tensor want = oracle::conv2d_ref(x, k, stride, pad);
        CHECK(max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("conv2d: the spec's 2x5x5 random case") {
    Rng rng(13);
    Tensor x = random_tensor({2, 5, 5}, rng);
    Tensor k = random_tensor({3, 2, 3, 3}, rng);
    CHECK(max_abs_diff(conv2d(x, k, 1, 0), oracle::conv2d_ref(x, k, 1, 0)) < 1e-12);
}

TEST_CASE("conv2d rejects mismatched shapes") {
    Tensor x({2, 4, 4});
    Tensor k({1, 3, 3, 3});
    CHECK_THROWS_AS(conv2d(x, k, 1, 0), std::invalid_argument);
    Tensor big_kernel({1, 2, 7, 7});
    CHECK_THROWS_AS(conv2d(x, big_kernel, 1, 0), std::invalid_argument);
}

TEST_CASE("transposed_conv2d: single pixel spreads the kernel") {
    Tensor x({1, 1, 1}, {1.0});
    Tensor k = Tensor::full({1, 1, 2, 2}, 1.0);
    Tensor out = transposed_conv2d(x, k, 1, 0);
    CHECK(out.shape() == std::vector<int>{1, 2, 2});
    for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == 1.0);
}

TEST_CASE("transposed_conv2d: stride-2 block scatter matches the loop oracle") {
    Rng rng(14);
    Tensor x = random_tensor({1, 2, 2}, rng);
    Tensor k = Tensor::full({1, 1, 2, 2}, 1.0);
    Tensor got = transposed_conv2d(x, k, 2, 0);
    CHECK(got.shape() == std::vector<int>{1, 4, 4});
    CHECK(max_abs_diff(got, oracle::tconv2d_ref(x, k, 2, 0)) < 1e-12);
}

TEST_CASE("transposed_conv2d: zero kernel gives zero output") {
    Rng rng(15);
    Tensor x = random_tensor({2, 3, 3}, rng);
    Tensor k({2, 3, 3, 3});
    Tensor out = transposed_conv2d(x, k, 1, 0);
    CHECK(out.max_abs() == 0.0);
}

TEST_CASE("transposed_conv2d matches the scatter-add reference on random shapes") {
    Rng rng(16);
    for (int trial = 0; trial < 12; ++trial) {
        const int ca = 1 + static_cast<int>(rng.uniform_int(3));
        const int cb = 1 + static_cast<int>(rng.uniform_int(3));
        const int h = 2 + static_cast<int>(rng.uniform_int(5));
        const int kk = 2 + static_cast<int>(rng.uniform_int(2));
        const int stride = 1 + static_cast<int>(rng.uniform_int(2));
        const int pad = static_cast<int>(rng.uniform_int(2));
        if ((h - 1) * stride - 2 * pad + kk <= 0) continue;
        Tensor x = random_tensor({ca, h, h}, rng);
        Tensor k = random_tensor({ca, cb, kk, kk}, rng);
        CHECK(max_abs_diff(transposed_conv2d(x, k, stride, pad),
                           oracle::tconv2d_ref(x, k, stride, pad)) < 1e-12);
    }
}

TEST_CASE("transposed_conv2d is the adjoint of conv2d") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const int ci = 1 + static_cast<int>(rng.uniform_int(3));
        const int co = 1 + static_cast<int>(rng.uniform_int(3));
        const int stride = 1 + static_cast<int>(rng.uniform_int(2));
        const int pad = static_cast<int>(rng.uniform_int(2));
        const int kk = 3;
        // Pick H so the conv output size divides back exactly.
        const int oh = 2 + static_cast<int>(rng.uniform_int(4));
        const int h = (oh - 1) * stride + kk - 2 * pad;
        if (h < kk) continue;
        Tensor x = random_tensor({ci, h, h}, rng);
        Tensor k = random_tensor({co, ci, kk, kk}, rng);
        Tensor cx = conv2d(x, k, stride, pad);
        Tensor y = random_tensor(cx.shape(), rng);
        Tensor ty = transposed_conv2d(y, k, stride, pad);
        REQUIRE(ty.shape() == x.shape());
        CHECK(std::fabs(cx.dot(y) - x.dot(ty)) < 1e-10);
    }
}

TEST_CASE("batchnorm2d: constant channels standardize to zero in train mode") {
    Tensor x = Tensor::full({2, 3, 3}, 4.25);
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta({2});
    Tensor rm({2});
    Tensor rv = Tensor::full({2}, 1.0);
    Tensor out = batchnorm2d(x, gamma, beta, rm, rv, true, true, 1e-5, 0.1, nullptr);
    CHECK(out.max_abs() == 0.0);
    // Running stats moved toward the batch statistics with momentum 0.1.
    CHECK(rm[0] == doctest::Approx(0.425));
    CHECK(rv[0] == doctest::Approx(0.9));
}

TEST_CASE("batchnorm2d: gamma=0 pins the output at beta") {
    Rng rng(18);
    Tensor x = random_tensor({3, 4, 4}, rng);
    Tensor gamma({3});
    Tensor beta = Tensor::full({3}, -1.75);
    Tensor rm({3});
    Tensor rv = Tensor::full({3}, 1.0);
    Tensor out = batchnorm2d(x, gamma, beta, rm, rv, true, false, 1e-5, 0.1, nullptr);
    for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == -1.75);
}

TEST_CASE("batchnorm2d: normalized output has mean 0, var 1 per channel") {
    Rng rng(19);
    Tensor x = random_tensor({2, 3, 3}, rng, -3.0, 5.0);
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta({2});
    Tensor rm({2});
    Tensor rv = Tensor::full({2}, 1.0);
    const double eps = 1e-12; // negligible next to the unit-scale variance here
    Tensor out = batchnorm2d(x, gamma, beta, rm, rv, true, false, eps, 0.1, nullptr);
    for (int c = 0; c < 2; ++c) {
        double mean, var;
        oracle::channel_moments(out, c, mean, var);
        CHECK(std::fabs(mean) < 1e-10);
        CHECK(std::fabs(var - 1.0) < 1e-10);
    }
}

TEST_CASE("batchnorm2d eval mode uses running statistics") {
    Rng rng(20);
    Tensor x = random_tensor({2, 2, 2}, rng);
    Tensor gamma = Tensor::full({2}, 2.0);
    Tensor beta = Tensor::full({2}, 1.0);
    Tensor rm = Tensor::full({2}, 0.5);
    Tensor rv = Tensor::full({2}, 4.0);
    Tensor out = batchnorm2d(x, gamma, beta, rm, rv, false, false, 1e-5, 0.1, nullptr);
    for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < 4; ++i) {
            const double want = 2.0 * (x[c * 4 + i] - 0.5) / std::sqrt(4.0 + 1e-5) + 1.0;
            CHECK(out[c * 4 + i] == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("relu clamps negatives and passes positives") {
    Tensor x({3}, {-1.0, 0.0, 2.0});
    Tensor out = relu(x);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
    CHECK(out[2] == 2.0);

    Tensor neg = Tensor::full({2, 2, 2}, -3.0);
    CHECK(relu(neg).max_abs() == 0.0);
}

TEST_CASE("relu gradient equals the positive-part indicator (central differences)") {
    Rng rng(21);
    Tensor x = random_tensor({16}, rng, -1.0, 1.0);
    const double h = 1e-6;
    Tensor dy = Tensor::full({16}, 1.0);
    Tensor dx({16});
    relu_backward(x, dy, &dx);
    for (int i = 0; i < 16; ++i) {
        if (std::fabs(x[i]) < 2 * h) continue; // kink
        Tensor xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double central = (relu(xp).sum() - relu(xm).sum()) / (2 * h);
        CHECK(std::fabs(dx[i] - central) < 1e-9);
    }
}

TEST_CASE("interpolate_nearest: single pixel replicates") {
    Tensor x({1, 1, 1}, {5.0});
    Tensor out = interpolate_nearest(x, 2, 2);
    for (std::int64_t i = 0; i < 4; ++i) CHECK(out[i] == 5.0);
}

TEST_CASE("interpolate_nearest is the identity at the source size") {
    Rng rng(22);
    Tensor x = random_tensor({1, 2, 2}, rng);
    CHECK(max_abs_diff(interpolate_nearest(x, 2, 2), x) == 0.0);
}

TEST_CASE("interpolate_nearest: 2x upscale matches per-pixel replication") {
    Rng rng(23);
    Tensor x = random_tensor({1, 2, 2}, rng);
    Tensor out = interpolate_nearest(x, 4, 4);
    for (int y = 0; y < 4; ++y) {
        for (int xx = 0; xx < 4; ++xx) {
            CHECK(out.at(0, y, xx) == x.at(0, y * 2 / 4, xx * 2 / 4));
        }
    }
}

TEST_CASE("affine: identity weight and zero bias reproduce the input") {
    Tensor x({3}, {1.0, -2.0, 3.0});
    Tensor w({3, 3});
    for (int i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
    Tensor b({3});
    CHECK(max_abs_diff(affine(x, w, b), x) == 0.0);
}

TEST_CASE("affine: zero weight returns the bias") {
    Tensor x({4}, {1.0, 2.0, 3.0, 4.0});
    Tensor w({2, 4});
    Tensor b({2}, {0.5, -0.5});
    Tensor out = affine(x, w, b);
    CHECK(out[0] == 0.5);
    CHECK(out[1] == -0.5);
}

TEST_CASE("affine matches the dot-product loop oracle") {
    Rng rng(24);
    Tensor x = random_tensor({4}, rng);
    Tensor w = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor out = affine(x, w, b);
    for (int o = 0; o < 3; ++o) {
        double acc = b[o];
        for (int i = 0; i < 4; ++i) acc += w[o * 4 + i] * x[i];
        CHECK(std::fabs(out[o] - acc) < 1e-12);
    }
    Tensor bad_w({3, 5});
    CHECK_THROWS_AS(affine(x, bad_w, b), std::invalid_argument);
}

TEST_CASE("global_avg_pool averages each channel") {
    Tensor x({2, 2, 2}, {1.0, 2.0, 3.0, 4.0, -1.0, -1.0, -1.0, -1.0});
    Tensor out = global_avg_pool(x);
    CHECK(out[0] == doctest::Approx(2.5));
    CHECK(out[1] == doctest::Approx(-1.0));
}
