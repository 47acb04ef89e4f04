// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <utility>
#include <vector>

#include "rxgs/linalg.hpp"

namespace rxgs::met {

inline constexpr double kDbSentinel = 300.0;  // stands in for +inf dB

double mae(std::span<const double> pred, std::span<const double> gt);
double mse(std::span<const double> pred, std::span<const double> gt);

// 10 log10(max^2 / mse); identical inputs return the sentinel.
double psnr(std::span<const double> pred, std::span<const double> gt, double max_val);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double dynamic_range = 1.0;  // L_dyn; C1 = (0.01 L)^2, C2 = (0.03 L)^2
};

// Mean local SSIM over all fully-contained windows. Images must be at least
// window x window. d_pred, when given, receives the gradient w.r.t. pred.
double ssim(std::span<const double> pred, std::span<const double> gt, int h, int w,
            const SsimOptions& options = {}, std::vector<double>* d_pred = nullptr);

// -10 log10(sum |pred-gt|^2 / sum |gt|^2); equality returns the sentinel and
// an all-zero prediction returns exactly 0 dB.
double snr_csi(std::span<const cplx> pred, std::span<const cplx> gt);

struct ReceiverAggregate {
    double mean = 0.0;  // mean of per-receiver means
    double stddev = 0.0;  // population std across per-receiver means
    std::vector<std::tuple<int, double, std::size_t>> per_receiver;  // (rx, mean, n)
};

ReceiverAggregate per_receiver_aggregate(const std::vector<std::pair<int, double>>& records);

}  // namespace rxgs::met
