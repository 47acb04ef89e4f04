// SPDX-License-Identifier: Apache-2.0
#include "rxgs/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "rxgs/rng.hpp"

namespace rxgs {

Mat3 GaussianScene::covariance(int k) const {
    return covariance_from({log_scales[3 * k], log_scales[3 * k + 1], log_scales[3 * k + 2]},
                           quaternion(k));
}

Aabb GaussianScene::position_bounds() const {
    Aabb box{{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
              std::numeric_limits<double>::max()},
             {std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest(),
              std::numeric_limits<double>::lowest()}};
    for (int k = 0; k < count(); ++k) {
        const Vec3 p = position(k);
        for (int a = 0; a < 3; ++a) {
            box.lo[a] = std::min(box.lo[a], p[a]);
            box.hi[a] = std::max(box.hi[a], p[a]);
        }
    }
    return box;
}

void GaussianScene::validate() const {
    const std::size_t k = tau_logits.size();
    if (positions.size() != 3 * k || log_scales.size() != 3 * k || quaternions.size() != 4 * k ||
        fle_coeffs.size() != k * coeff_stride())
        throw std::invalid_argument("scene: per-Gaussian arrays out of alignment");
    for (const double v : positions)
        if (!std::isfinite(v)) throw std::invalid_argument("scene: non-finite position");
}

Mat3 covariance_from(const Vec3& log_scale, const std::array<double, 4>& quaternion) {
    if (!log_scale.finite()) throw std::invalid_argument("covariance_from: non-finite log_scale");
    for (const double q : quaternion)
        if (!std::isfinite(q)) throw std::invalid_argument("covariance_from: non-finite quaternion");
    const Mat3 r = quat_to_rotation(quaternion);
    Mat3 m = r;
    for (int row = 0; row < 3; ++row)
        for (int col = 0; col < 3; ++col) m(row, col) *= std::exp(log_scale[col]);
    return m * m.transposed();
}

namespace {

// Partials of the (normalized-quaternion) rotation matrix entries.
std::array<Mat3, 4> rotation_quat_partials(double w, double x, double y, double z) {
    std::array<Mat3, 4> d;
    d[0].m = {0, -z, y, z, 0, -x, -y, x, 0};           // d/dw
    d[1].m = {0, y, z, y, -2 * x, -w, z, w, -2 * x};   // d/dx
    d[2].m = {-2 * y, x, w, x, 0, z, -w, z, -2 * y};   // d/dy
    d[3].m = {-2 * z, -w, x, w, -2 * z, y, x, y, 0};   // d/dz
    for (auto& mat : d) mat = mat * 2.0;
    return d;
}

}  // namespace

CovarianceGrad covariance_from_backward(const Vec3& log_scale,
                                        const std::array<double, 4>& quaternion,
                                        const Mat3& d_sigma) {
    const double n = std::sqrt(quaternion[0] * quaternion[0] + quaternion[1] * quaternion[1] +
                               quaternion[2] * quaternion[2] + quaternion[3] * quaternion[3]);
    const std::array<double, 4> qn{quaternion[0] / n, quaternion[1] / n, quaternion[2] / n,
                                   quaternion[3] / n};
    const Mat3 r = quat_to_rotation(quaternion);
    const Vec3 s{std::exp(log_scale.x), std::exp(log_scale.y), std::exp(log_scale.z)};

    // Sigma = M M^T with M = R diag(s):  dL/dM = (G + G^T) M.
    Mat3 m = r;
    for (int row = 0; row < 3; ++row)
        for (int col = 0; col < 3; ++col) m(row, col) *= s[col];
    const Mat3 dm = (d_sigma + d_sigma.transposed()) * m;

    CovarianceGrad out{};
    Mat3 dr;
    for (int row = 0; row < 3; ++row)
        for (int col = 0; col < 3; ++col) {
            dr(row, col) = dm(row, col) * s[col];
            out.d_log_scale[col] += dm(row, col) * r(row, col) * s[col];
        }

    const auto partials = rotation_quat_partials(qn[0], qn[1], qn[2], qn[3]);
    std::array<double, 4> d_qn{};
    for (int i = 0; i < 4; ++i) {
        double acc = 0.0;
        for (int e = 0; e < 9; ++e) acc += dr.m[e] * partials[i].m[e];
        d_qn[i] = acc;
    }
    // Through normalization: dq = (I - qn qn^T) / n * d_qn.
    double dot = 0.0;
    for (int i = 0; i < 4; ++i) dot += qn[i] * d_qn[i];
    for (int i = 0; i < 4; ++i) out.d_quaternion[i] = (d_qn[i] - qn[i] * dot) / n;
    return out;
}

GaussianScene init_scene(const std::vector<Vec3>& point_cloud, int l_max, int channels,
                         Modality modality) {
    const int k = static_cast<int>(point_cloud.size());
    if (k < 2) throw std::invalid_argument("init_scene: need at least 2 points");
    if (l_max < 0 || channels < 1) throw std::invalid_argument("init_scene: bad l_max/channels");

    GaussianScene scene;
    scene.l_max = l_max;
    scene.channels = channels;
    scene.modality = modality;
    scene.positions.resize(static_cast<std::size_t>(k) * 3);
    scene.log_scales.resize(static_cast<std::size_t>(k) * 3);
    scene.quaternions.assign(static_cast<std::size_t>(k) * 4, 0.0);
    scene.tau_logits.assign(static_cast<std::size_t>(k), logit(0.1));
    scene.fle_coeffs.assign(static_cast<std::size_t>(k) * scene.coeff_stride(), 0.0);

    for (int i = 0; i < k; ++i) {
        scene.positions[3 * i] = point_cloud[i].x;
        scene.positions[3 * i + 1] = point_cloud[i].y;
        scene.positions[3 * i + 2] = point_cloud[i].z;
        scene.quaternions[4 * i] = 1.0;  // identity rotation

        double nn2 = std::numeric_limits<double>::max();
        for (int j = 0; j < k; ++j) {
            if (j == i) continue;
            nn2 = std::min(nn2, (point_cloud[i] - point_cloud[j]).norm2());
        }
        if (nn2 == 0.0) throw std::invalid_argument("init_scene: duplicate points in cloud");
        const double log_nn = 0.5 * std::log(nn2);
        scene.log_scales[3 * i] = log_nn;
        scene.log_scales[3 * i + 1] = log_nn;
        scene.log_scales[3 * i + 2] = log_nn;
    }
    return scene;
}

void DensifyState::accumulate(const std::vector<double>& d_positions) {
    const std::size_t k = grad_accum.size();
    if (d_positions.size() != 3 * k)
        throw std::invalid_argument("DensifyState::accumulate: gradient size mismatch");
    for (std::size_t i = 0; i < k; ++i) {
        const double gx = d_positions[3 * i], gy = d_positions[3 * i + 1],
                     gz = d_positions[3 * i + 2];
        grad_accum[i] += std::sqrt(gx * gx + gy * gy + gz * gz);
        accum_count[i] += 1;
    }
}

namespace {

double gaussian_size(const GaussianScene& scene, int k) {
    return std::exp(std::max({scene.log_scales[3 * k], scene.log_scales[3 * k + 1],
                              scene.log_scales[3 * k + 2]}));
}

struct RowBuffer {
    std::vector<double> positions, log_scales, quaternions, tau_logits, fle_coeffs;
    std::vector<int> source;

    void push(const GaussianScene& s, int k, int src, std::size_t stride) {
        for (int a = 0; a < 3; ++a) positions.push_back(s.positions[3 * k + a]);
        for (int a = 0; a < 3; ++a) log_scales.push_back(s.log_scales[3 * k + a]);
        for (int a = 0; a < 4; ++a) quaternions.push_back(s.quaternions[4 * k + a]);
        tau_logits.push_back(s.tau_logits[k]);
        for (std::size_t a = 0; a < stride; ++a)
            fle_coeffs.push_back(s.fle_coeffs[k * stride + a]);
        source.push_back(src);
    }
};

}  // namespace

DensifyReport densify_and_prune(GaussianScene& scene, DensifyState& state,
                                const DensifyThresholds& thresholds, uint64_t seed,
                                uint64_t pass_index) {
    const int k = scene.count();
    if (static_cast<int>(state.grad_accum.size()) != k)
        throw std::invalid_argument("densify_and_prune: state size mismatch");
    const std::size_t stride = scene.coeff_stride();
    const double extent = state.scene_extent;

    DensifyReport report;
    RowBuffer rows;
    RowBuffer appended;
    Rng rng = derive_stream(seed, "scene.densify", pass_index);

    for (int i = 0; i < k; ++i) {
        const double mean_grad =
            state.accum_count[i] > 0 ? state.grad_accum[i] / state.accum_count[i] : 0.0;
        const double size = gaussian_size(scene, i);
        if (mean_grad <= thresholds.grad_threshold) {
            rows.push(scene, i, i, stride);
            continue;
        }
        if (size < thresholds.size_frac * extent) {
            // Clone: keep the original, append an exact copy.
            rows.push(scene, i, i, stride);
            appended.push(scene, i, -1, stride);
            ++report.cloned;
        } else {
            // Split: two children offset +/- one standard deviation along the
            // largest principal axis, scales shrunk by the split factor.
            const Mat3 rot = quat_to_rotation(scene.quaternion(i));
            int axis = 0;
            for (int a = 1; a < 3; ++a)
                if (scene.log_scales[3 * i + a] > scene.log_scales[3 * i + axis]) axis = a;
            const double sigma = std::exp(scene.log_scales[3 * i + axis]);
            const Vec3 dir{rot(0, axis), rot(1, axis), rot(2, axis)};
            const double side = rng.uniform() < 0.5 ? 1.0 : -1.0;  // seeded sign assignment

            const std::size_t base_first = rows.positions.size();
            rows.push(scene, i, -1, stride);
            const std::size_t base_second = appended.positions.size();
            appended.push(scene, i, -1, stride);
            for (int a = 0; a < 3; ++a) {
                rows.positions[base_first + a] += side * sigma * dir[a];
                appended.positions[base_second + a] -= side * sigma * dir[a];
            }
            const double shrink = std::log(thresholds.split_scale_factor);
            const std::size_t sfirst = rows.log_scales.size() - 3;
            const std::size_t ssecond = appended.log_scales.size() - 3;
            for (int a = 0; a < 3; ++a) {
                rows.log_scales[sfirst + a] += shrink;
                appended.log_scales[ssecond + a] += shrink;
            }
            ++report.split;
        }
    }

    // Merge appended rows after the in-place ones, then prune oversized rows.
    auto concat = [](std::vector<double>& dst, const std::vector<double>& src) {
        dst.insert(dst.end(), src.begin(), src.end());
    };
    concat(rows.positions, appended.positions);
    concat(rows.log_scales, appended.log_scales);
    concat(rows.quaternions, appended.quaternions);
    concat(rows.tau_logits, appended.tau_logits);
    concat(rows.fle_coeffs, appended.fle_coeffs);
    rows.source.insert(rows.source.end(), appended.source.begin(), appended.source.end());

    GaussianScene merged;
    merged.l_max = scene.l_max;
    merged.channels = scene.channels;
    merged.modality = scene.modality;
    merged.positions = std::move(rows.positions);
    merged.log_scales = std::move(rows.log_scales);
    merged.quaternions = std::move(rows.quaternions);
    merged.tau_logits = std::move(rows.tau_logits);
    merged.fle_coeffs = std::move(rows.fle_coeffs);

    RowBuffer kept;
    for (int i = 0; i < merged.count(); ++i) {
        if (gaussian_size(merged, i) > thresholds.prune_extent_frac * extent) {
            ++report.pruned;
            continue;
        }
        kept.push(merged, i, rows.source[i], stride);
    }

    scene.positions = std::move(kept.positions);
    scene.log_scales = std::move(kept.log_scales);
    scene.quaternions = std::move(kept.quaternions);
    scene.tau_logits = std::move(kept.tau_logits);
    scene.fle_coeffs = std::move(kept.fle_coeffs);
    report.source_row = std::move(kept.source);

    state.resize(scene.count());
    return report;
}

void reset_transmittance(GaussianScene& scene) {
    const double v = logit(0.01);
    std::fill(scene.tau_logits.begin(), scene.tau_logits.end(), v);
}

void renormalize_quaternions(GaussianScene& scene) {
    for (int k = 0; k < scene.count(); ++k) {
        double n2 = 0.0;
        for (int a = 0; a < 4; ++a) n2 += scene.quaternions[4 * k + a] * scene.quaternions[4 * k + a];
        const double inv = 1.0 / std::sqrt(n2);
        for (int a = 0; a < 4; ++a) scene.quaternions[4 * k + a] *= inv;
    }
}

}  // namespace rxgs
