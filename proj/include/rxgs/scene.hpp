// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "rxgs/channelsim.hpp"  // Modality
#include "rxgs/linalg.hpp"
#include "rxgs/radiance.hpp"

namespace rxgs {

using sim::Modality;

// Explicit Gaussian scene. All per-Gaussian arrays share leading dimension K;
// FLE coefficients are stored as interleaved (a, b) pairs, index
// ((k * L + comp) * C + c) * 2 + {0, 1}.
struct GaussianScene {
    int l_max = 0;
    int channels = 1;
    Modality modality = Modality::Rssi;

    std::vector<double> positions;    // K x 3
    std::vector<double> log_scales;   // K x 3
    std::vector<double> quaternions;  // K x 4, (w, x, y, z)
    std::vector<double> tau_logits;   // K
    std::vector<double> fle_coeffs;   // K x L x C x 2

    int count() const { return static_cast<int>(tau_logits.size()); }
    int n_components() const { return fle::component_count(l_max); }
    std::size_t coeff_stride() const {
        return static_cast<std::size_t>(n_components()) * channels * 2;
    }

    Vec3 position(int k) const {
        return {positions[3 * k], positions[3 * k + 1], positions[3 * k + 2]};
    }
    std::array<double, 4> quaternion(int k) const {
        return {quaternions[4 * k], quaternions[4 * k + 1], quaternions[4 * k + 2],
                quaternions[4 * k + 3]};
    }
    double tau(int k) const { return sigmoid(tau_logits[k]); }
    Mat3 covariance(int k) const;
    Aabb position_bounds() const;

    void validate() const;  // shape / finiteness sanity
};

// Sigma = R * diag(exp(2 s)) * R^T.
Mat3 covariance_from(const Vec3& log_scale, const std::array<double, 4>& quaternion);

// Gradient of a loss w.r.t. log_scale and quaternion given dL/dSigma.
struct CovarianceGrad {
    Vec3 d_log_scale;
    std::array<double, 4> d_quaternion;
};
CovarianceGrad covariance_from_backward(const Vec3& log_scale,
                                        const std::array<double, 4>& quaternion,
                                        const Mat3& d_sigma);

// Positions from a point cloud, isotropic log scales from nearest-neighbor
// distances, identity rotations, transmittance at sigmoid^-1(0.1), zero
// coefficients.
GaussianScene init_scene(const std::vector<Vec3>& point_cloud, int l_max, int channels,
                         Modality modality);

// Accumulated positional-gradient statistics driving densification.
struct DensifyState {
    std::vector<double> grad_accum;  // sum of ||dL/dp_k||_2 per Gaussian
    std::vector<int> accum_count;
    double scene_extent = 0.0;

    void resize(int k) {
        grad_accum.assign(static_cast<std::size_t>(k), 0.0);
        accum_count.assign(static_cast<std::size_t>(k), 0);
    }
    void accumulate(const std::vector<double>& d_positions);
};

struct DensifyThresholds {
    double grad_threshold = 2e-4;       // tau_g
    double size_frac = 0.01;            // clone below, split above (x extent)
    double prune_extent_frac = 0.1;     // remove Gaussians larger than this x extent
    double split_scale_factor = 0.8;
};

// Result maps each surviving row to its source row (for optimizer-state
// carry-over); rows created by clone/split map to -1.
struct DensifyReport {
    int cloned = 0, split = 0, pruned = 0;
    std::vector<int> source_row;
};

DensifyReport densify_and_prune(GaussianScene& scene, DensifyState& state,
                                const DensifyThresholds& thresholds, uint64_t seed,
                                uint64_t pass_index);

void reset_transmittance(GaussianScene& scene);

void renormalize_quaternions(GaussianScene& scene);

}  // namespace rxgs
