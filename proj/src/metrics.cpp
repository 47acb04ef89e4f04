// SPDX-License-Identifier: Apache-2.0
#include "rxgs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace rxgs::met {

double mae(std::span<const double> pred, std::span<const double> gt) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("mae: need equal non-empty inputs");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - gt[i]);
    return acc / static_cast<double>(pred.size());
}

double mse(std::span<const double> pred, std::span<const double> gt) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("mse: need equal non-empty inputs");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - gt[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

double psnr(std::span<const double> pred, std::span<const double> gt, double max_val) {
    const double err = mse(pred, gt);
    if (err == 0.0) return kDbSentinel;
    return 10.0 * std::log10(max_val * max_val / err);
}

namespace {

std::vector<double> gaussian_window(int n, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(n) * n);
    const int half = n / 2;
    double sum = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double di = i - half, dj = j - half;
            const double v = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
            w[static_cast<std::size_t>(i) * n + j] = v;
            sum += v;
        }
    for (double& v : w) v /= sum;
    return w;
}

}  // namespace

double ssim(std::span<const double> pred, std::span<const double> gt, int h, int w,
            const SsimOptions& options, std::vector<double>* d_pred) {
    const int win = options.window;
    if (h < win || w < win)
        throw std::invalid_argument("ssim: image smaller than the window");
    if (pred.size() != static_cast<std::size_t>(h) * w || gt.size() != pred.size())
        throw std::invalid_argument("ssim: shape mismatch");

    const std::vector<double> kernel = gaussian_window(win, options.sigma);
    const double c1 = 0.01 * options.dynamic_range * 0.01 * options.dynamic_range;
    const double c2 = 0.03 * options.dynamic_range * 0.03 * options.dynamic_range;

    if (d_pred) d_pred->assign(pred.size(), 0.0);
    const int rows = h - win + 1, cols = w - win + 1;
    const double n_windows = static_cast<double>(rows) * cols;
    double total = 0.0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    const double k = kernel[static_cast<std::size_t>(i) * win + j];
                    const double x = pred[static_cast<std::size_t>(r + i) * w + (c + j)];
                    const double y = gt[static_cast<std::size_t>(r + i) * w + (c + j)];
                    mx += k * x;
                    my += k * y;
                    xx += k * x * x;
                    yy += k * y * y;
                    xy += k * x * y;
                }
            const double vx = xx - mx * mx;
            const double vy = yy - my * my;
            const double cov = xy - mx * my;
            const double a1 = 2.0 * mx * my + c1;
            const double b1 = mx * mx + my * my + c1;
            const double a2 = 2.0 * cov + c2;
            const double b2 = vx + vy + c2;
            const double s = (a1 * a2) / (b1 * b2);
            total += s;
            if (d_pred) {
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        const double k = kernel[static_cast<std::size_t>(i) * win + j];
                        const std::size_t idx = static_cast<std::size_t>(r + i) * w + (c + j);
                        const double x = pred[idx];
                        const double y = gt[idx];
                        const double da1 = 2.0 * my * k;
                        const double db1 = 2.0 * mx * k;
                        const double da2 = 2.0 * k * (y - my);
                        const double db2 = 2.0 * k * (x - mx);
                        const double ds =
                            (da1 * a2 + a1 * da2) / (b1 * b2) - s * (db1 / b1 + db2 / b2);
                        (*d_pred)[idx] += ds / n_windows;
                    }
            }
        }
    return total / n_windows;
}

double snr_csi(std::span<const cplx> pred, std::span<const cplx> gt) {
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("snr_csi: need equal non-empty inputs");
    double err = 0.0, sig = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        err += std::norm(pred[i] - gt[i]);
        sig += std::norm(gt[i]);
    }
    if (sig == 0.0) throw std::invalid_argument("snr_csi: zero ground-truth energy");
    if (err == 0.0) return kDbSentinel;
    return -10.0 * std::log10(err / sig);
}

ReceiverAggregate per_receiver_aggregate(const std::vector<std::pair<int, double>>& records) {
    if (records.empty()) throw std::invalid_argument("per_receiver_aggregate: no records");
    std::map<int, std::pair<double, std::size_t>> sums;
    for (const auto& [rx, value] : records) {
        auto& slot = sums[rx];
        slot.first += value;
        slot.second += 1;
    }
    ReceiverAggregate out;
    for (const auto& [rx, slot] : sums)
        out.per_receiver.emplace_back(rx, slot.first / static_cast<double>(slot.second),
                                      slot.second);
    const double n = static_cast<double>(out.per_receiver.size());
    for (const auto& [rx, mean, cnt] : out.per_receiver) out.mean += mean;
    out.mean /= n;
    double var = 0.0;
    for (const auto& [rx, mean, cnt] : out.per_receiver) {
        const double d = mean - out.mean;
        var += d * d;
    }
    out.stddev = std::sqrt(var / n);
    return out;
}

}  // namespace rxgs::met
