// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rxgs/metrics.hpp"
#include "rxgs/rng.hpp"
#include "testutil.hpp"

using namespace rxgs;
using namespace rxgs::met;
using rxgs::testutil::rel_err;

TEST_CASE("mae: hand values") {
    CHECK(mae(std::vector<double>{-50, -60}, std::vector<double>{-52, -58}) == 2.0);
    CHECK(mae(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}) == 0.0);
    CHECK(mae(std::vector<double>{-47.5}, std::vector<double>{-50.0}) == 2.5);
}

TEST_CASE("psnr: closed forms and sentinel") {
    std::vector<double> gt(100, 0.0);
    std::vector<double> pred(100, 0.1);  // mse = 0.01
    CHECK(rel_err(psnr(pred, gt, 1.0), 20.0) < 1e-12);
    CHECK(psnr(gt, gt, 1.0) == kDbSentinel);
    std::vector<double> off(100, 1.0);
    CHECK(std::abs(psnr(off, gt, 1.0)) < 1e-12);
}

TEST_CASE("psnr/mse consistency identity") {
    Rng rng = derive_stream(201, "test.psnr");
    std::vector<double> a(64), b(64);
    for (std::size_t i = 0; i < 64; ++i) {
        a[i] = rng.uniform();
        b[i] = rng.uniform();
    }
    const double m = mse(a, b);
    CHECK(psnr(a, b, 1.0) == 10.0 * std::log10(1.0) - 10.0 * std::log10(m) + 10.0 * std::log10(1.0));
    CHECK(psnr(a, b, 2.0) == 10.0 * std::log10(4.0 / m));
}

TEST_CASE("ssim: identical images give 1, symmetric, shifted smooth image stays high") {
    const int h = 16, w = 16;
    std::vector<double> img(h * w), shifted(h * w), other(h * w);
    Rng rng = derive_stream(202, "test.ssim");
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            // Smooth low-frequency image in [0, 1].
            img[r * w + c] = 0.5 + 0.3 * std::sin(0.4 * r) * std::cos(0.35 * c);
            shifted[r * w + c] = img[r * w + c] + 0.02;
            other[r * w + c] = rng.uniform();
        }
    CHECK(ssim(img, img, h, w) == doctest::Approx(1.0).epsilon(1e-12));
    const double s_shift = ssim(shifted, img, h, w);
    CHECK(s_shift < 1.0);
    CHECK(s_shift > 0.9);
    CHECK(std::abs(ssim(img, other, h, w) - ssim(other, img, h, w)) < 1e-12);
    CHECK_THROWS_AS(ssim(std::vector<double>(25, 0.0), std::vector<double>(25, 0.0), 5, 5),
                    std::invalid_argument);
}

TEST_CASE("ssim: reference direct computation on a small case") {
    // Independent check: 11x11 image has exactly one window; compute SSIM
    // from the definition with explicit sums.
    const int n = 11;
    std::vector<double> x(n * n), y(n * n);
    Rng rng = derive_stream(203, "test.ssim_ref");
    for (int i = 0; i < n * n; ++i) {
        x[i] = rng.uniform();
        y[i] = rng.uniform();
    }
    // Gaussian weights, sigma 1.5, normalized.
    std::vector<double> k(n * n);
    double sum = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double di = i - 5, dj = j - 5;
            k[i * n + j] = std::exp(-(di * di + dj * dj) / (2 * 1.5 * 1.5));
            sum += k[i * n + j];
        }
    for (auto& v : k) v /= sum;
    double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
    for (int i = 0; i < n * n; ++i) {
        mx += k[i] * x[i];
        my += k[i] * y[i];
        xx += k[i] * x[i] * x[i];
        yy += k[i] * y[i] * y[i];
        xy += k[i] * x[i] * y[i];
    }
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const double want = ((2 * mx * my + c1) * (2 * (xy - mx * my) + c2)) /
                        ((mx * mx + my * my + c1) * ((xx - mx * mx) + (yy - my * my) + c2));
    CHECK(rel_err(ssim(x, y, n, n), want) < 1e-12);
}

TEST_CASE("ssim gradient matches finite differences") {
    const int h = 12, w = 13;
    std::vector<double> x(h * w), y(h * w);
    Rng rng = derive_stream(204, "test.ssim_grad");
    for (auto& v : x) v = rng.uniform();
    for (auto& v : y) v = rng.uniform();
    std::vector<double> grad;
    (void)ssim(x, y, h, w, {}, &grad);
    const double step = 1e-6;
    double max_err = 0.0;
    for (std::size_t i = 0; i < x.size(); i += 7) {  // sample coordinates
        auto xp = x;
        xp[i] += step;
        const double fp = ssim(xp, y, h, w);
        xp[i] -= 2 * step;
        const double fm = ssim(xp, y, h, w);
        max_err = std::max(max_err, std::abs((fp - fm) / (2 * step) - grad[i]));
    }
    CHECK(max_err < 1e-6);
}

TEST_CASE("snr_csi: closed forms, sentinel, scale invariance") {
    std::vector<cplx> gt = {{1, 0}, {0, 1}, {0.5, -0.5}};
    std::vector<cplx> zero(3, cplx{0, 0});
    CHECK(std::abs(snr_csi(zero, gt)) < 1e-12);
    CHECK(snr_csi(gt, gt) == kDbSentinel);

    // Error energy = 0.1 x signal energy -> 10 dB.
    double sig = 0;
    for (const auto& g : gt) sig += std::norm(g);
    const double scale = std::sqrt(0.1 * sig / sig);
    std::vector<cplx> pred(3);
    for (int i = 0; i < 3; ++i) pred[i] = gt[i] * (1.0 + scale);
    CHECK(rel_err(snr_csi(pred, gt), 10.0) < 1e-10);

    // Common complex scaling leaves the ratio unchanged.
    const cplx c{0.3, -1.7};
    std::vector<cplx> pred_s(3), gt_s(3);
    for (int i = 0; i < 3; ++i) {
        pred_s[i] = pred[i] * c;
        gt_s[i] = gt[i] * c;
    }
    CHECK(std::abs(snr_csi(pred_s, gt_s) - snr_csi(pred, gt)) < 1e-12);
}

TEST_CASE("per_receiver_aggregate: two-level convention") {
    const auto two = per_receiver_aggregate({{0, 1.0}, {1, 3.0}});
    CHECK(two.mean == 2.0);
    CHECK(two.stddev == 1.0);

    const auto single = per_receiver_aggregate({{7, 5.0}, {7, 7.0}});
    CHECK(single.mean == 6.0);
    CHECK(single.stddev == 0.0);

    // Unbalanced counts: receiver means first, then the unweighted mean.
    const auto unbalanced = per_receiver_aggregate({{0, 2.0}, {0, 4.0}, {0, 6.0}, {1, 10.0}});
    CHECK(unbalanced.mean == 7.0);
}

TEST_CASE("per_receiver_aggregate: permutation invariant") {
    std::vector<std::pair<int, double>> records = {{2, 1.0}, {0, 5.0}, {1, 2.0}, {0, 3.0}};
    const auto a = per_receiver_aggregate(records);
    std::reverse(records.begin(), records.end());
    const auto b = per_receiver_aggregate(records);
    CHECK(a.mean == b.mean);
    CHECK(a.stddev == b.stddev);
}
