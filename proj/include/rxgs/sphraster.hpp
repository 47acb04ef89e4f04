// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "rxgs/linalg.hpp"
#include "rxgs/radiance.hpp"
#include "rxgs/scene.hpp"

namespace rxgs::raster {

// Direction grid on the emission sphere anchored at the transmitter.
// Directions sit at cell centers; rows are elevation-major.
struct SphericalGrid {
    int n_theta = 1;
    int n_phi = 1;
    int tile_size = 8;
    double radius = 1.0;      // emission sphere radius r_rx
    double theta_min = 0.0;   // configured elevation span
    double theta_max = kPi;

    double dtheta() const { return (theta_max - theta_min) / n_theta; }
    double dphi() const { return kTwoPi / n_phi; }
    double theta_at(int i) const { return theta_min + (i + 0.5) * dtheta(); }
    double phi_at(int j) const { return (j + 0.5) * dphi(); }
    double solid_angle(int i) const { return std::sin(theta_at(i)) * dtheta() * dphi(); }
    int tiles_theta() const { return (n_theta + tile_size - 1) / tile_size; }
    int tiles_phi() const { return (n_phi + tile_size - 1) / tile_size; }
    std::size_t cells() const { return static_cast<std::size_t>(n_theta) * n_phi; }
    void validate() const;
};

struct ProjectedGaussian {
    bool culled = true;
    double theta = 0.0, phi = 0.0;  // center angles of p - t
    double depth = 0.0;             // |p - t|
    Mat2 angular_cov;               // tangent-frame covariance / depth^2
    Mat2 angular_prec;              // its inverse
    double weight_scale = 0.0;      // activated tau
    // Inclusive tile spans. Azimuth iterates p0..p1 modulo tiles_phi, so a
    // seam-crossing span has p1 >= tiles_phi.
    int t0 = 0, t1 = -1, p0 = 0, p1 = -1;
};

ProjectedGaussian project_gaussian(const Vec3& position, const Mat3& cov3, double tau,
                                   const Vec3& tx, const SphericalGrid& grid);

// Everything that depends on the transmitter but not on any receiver:
// projections, per-tile depth-sorted lists, directional basis at each
// Gaussian center. Built once and shared across all receivers.
struct TxState {
    SphericalGrid grid;
    int k = 0;
    int l_max = 0;
    std::vector<ProjectedGaussian> proj;
    std::vector<std::vector<int>> tile_lists;  // tiles_theta * tiles_phi entries
    std::vector<cplx> basis;                   // k * L

    uint64_t hash() const;
};

TxState build_tx_state(const GaussianScene& scene, const Vec3& tx, const SphericalGrid& grid);

// Per-tile lists, depth ascending with index tiebreak. Exposed for tests;
// build_tx_state calls it.
std::vector<std::vector<int>> bin_and_sort(const std::vector<ProjectedGaussian>& projected,
                                           const SphericalGrid& grid);

inline constexpr double kWeightClamp = 0.999;
inline constexpr double kEarlyExitT = 1e-4;

// Front-to-back alpha blend of one ray given precomputed weights and
// per-Gaussian signals. The renderer inlines the same recurrence.
struct BlendResult {
    cplx c{0.0, 0.0};
    double transmittance = 1.0;
};
BlendResult blend_ray(const std::vector<double>& weights, const std::vector<cplx>& signals);

struct RenderedField {
    int n_rx = 0, channels = 1, h = 0, w = 0;
    std::vector<double> values;         // [n][c][2][h][w]
    std::vector<double> transmittance;  // [n][h][w]

    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    double value(int j, int c, int reim, std::size_t cell) const {
        return values[((static_cast<std::size_t>(j) * channels + c) * 2 + reim) * plane() + cell];
    }
};

// Batched multi-receiver render. Coefficients are per receiver, layout
// (((j * K + k) * L + comp) * C + c) * 2 + {0, 1}.
RenderedField render_field(const TxState& tx_state, const GaussianScene& scene,
                           const std::vector<double>& coeffs, int n_rx, int threads = 1);
RenderedField render_field(const GaussianScene& scene, const Vec3& tx, const SphericalGrid& grid,
                           const std::vector<double>& coeffs, int n_rx, int threads = 1);

// One modality measurement per receiver.
struct Measurement {
    Modality modality = Modality::Rssi;
    double scalar = 0.0;         // rssi
    std::vector<cplx> csi;       // csi, one entry per channel
    std::vector<double> image;   // spectrum amplitudes, h * w
};

std::vector<Measurement> aggregate_modality(const RenderedField& field, Modality modality,
                                            const SphericalGrid& grid);

// Adjoint of aggregate_modality: upstream gradients in Measurement form
// (same shapes as the forward outputs) to gradients w.r.t. field values.
std::vector<double> aggregate_modality_backward(const RenderedField& field, Modality modality,
                                                const SphericalGrid& grid,
                                                const std::vector<Measurement>& upstream);

// Gradients of the render w.r.t. every scene parameter and the per-receiver
// coefficient tensor.
struct GradientBundle {
    std::vector<double> d_positions;    // K x 3
    std::vector<double> d_log_scales;   // K x 3
    std::vector<double> d_quaternions;  // K x 4
    std::vector<double> d_tau_logits;   // K
    std::vector<double> d_coeffs;       // N x K x L x C x 2

    void resize(int k, int n_rx, std::size_t coeff_stride);
    void add(const GradientBundle& other);
};

// Exact adjoint of render_field. d_values has the RenderedField::values
// layout. Accumulation order is tile-major, then ray, then Gaussian.
GradientBundle backward_render(const TxState& tx_state, const GaussianScene& scene,
                               const std::vector<double>& coeffs, int n_rx,
                               const std::vector<double>& d_values, int threads = 1);

}  // namespace rxgs::raster
