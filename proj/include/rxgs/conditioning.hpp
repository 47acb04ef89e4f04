// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "rxgs/linalg.hpp"
#include "rxgs/scene.hpp"

namespace rxgs::cond {

// Dense layer, weights row-major (out x in).
struct MlpLayer {
    int in = 0, out = 0;
    std::vector<double> w;
    std::vector<double> b;

    void forward(const double* x, double* y) const;
};

// Three dense layers with rectifier activations in between.
struct Mlp {
    MlpLayer l1, l2, l3;
    std::size_t param_count() const {
        return l1.w.size() + l1.b.size() + l2.w.size() + l2.b.size() + l3.w.size() + l3.b.size();
    }
};

struct OccupancyGrid {
    int resolution = 0;
    Aabb bounds;
    std::vector<double> densities;  // resolution^3, index (ix * R + iy) * R + iz

    bool empty() const { return densities.empty(); }
    double sample_trilinear(const Vec3& p) const;
    double sample_nearest(const Vec3& p) const;
};

// Splat every Gaussian's activated transmittance into the voxel field with a
// 2-sigma support; overlaps combine by max so densities stay in [0, 1].
OccupancyGrid build_occupancy(const GaussianScene& scene, int resolution, const Aabb& bounds);

struct ProbeResult {
    double transmittance = 1.0;  // T_k = prod (1 - V(q_s))
    double mean_density = 0.0;   // rho_bar
};

// Probe S points on the segment at t in [0.05, 0.95]; out-of-bounds points
// read zero.
ProbeResult probe_segment(const OccupancyGrid& grid, const Vec3& from, const Vec3& to,
                          int samples, bool nearest_lookup = false);

enum class ConditioningMode { Full, GlobalOnly, LocalOnly, AdditiveOnly, NoOcclusion };

const char* conditioning_mode_name(ConditioningMode m);
ConditioningMode conditioning_mode_from_name(const std::string& name);

struct ConditioningConfig {
    int fourier_bands = 6;       // F
    int hidden = 64;             // d
    int embed_dim = 16;          // d_c
    int probe_samples = 16;      // S
    int occupancy_resolution = 32;
    bool nearest_lookup = false;  // ablation flag; default trilinear
    ConditioningMode mode = ConditioningMode::Full;
};

// Everything receiver-dependent that is learned: Fourier frequencies, the
// per-component global branch, per-Gaussian local branch, embeddings, and
// the frozen occupancy grid.
struct ConditioningState {
    ConditioningConfig config;
    int l_max = 0, channels = 1;
    std::vector<double> fourier_freqs;    // F x 3, index f * 3 + axis
    Mlp global_mlp;                       // [gamma; c_l; e_l] -> 4C
    std::vector<double> component_embed;  // L x d_c
    Mlp local_mlp;                        // 6 features -> 4C
    OccupancyGrid occupancy;

    // Cost-shape instrumentation: per-branch MLP invocation counts.
    mutable std::int64_t global_calls = 0;
    mutable std::int64_t local_calls = 0;

    int n_components() const { return fle::component_count(l_max); }
    std::size_t coeff_stride() const {
        return static_cast<std::size_t>(n_components()) * channels * 2;
    }
};

// Fresh state: frequencies at 2^f spacing over the scene extent, hidden
// weights fan-in scaled from the seed, final layers zeroed so conditioning
// starts as the identity.
ConditioningState init_conditioning(const ConditioningConfig& config, int l_max, int channels,
                                    const Aabb& scene_bounds, uint64_t seed);

// [sin(w r_a), cos(w r_a)] per axis and band, axis-major; length 6F.
std::vector<double> fourier_encode(const Vec3& r, const std::vector<double>& freqs);

// Retained intermediates for the adjoint pass.
struct ConditionWorkspace {
    Vec3 rx;
    std::vector<double> gamma;
    std::vector<double> global_in;    // L x global-in-dim
    std::vector<double> global_h1;    // L x hidden (post-activation)
    std::vector<double> global_h2;
    std::vector<double> global_out;   // L x 4C
    std::vector<double> mid;          // K x L x C x 2 (after the global branch)
    std::vector<double> local_in;     // K x 6
    std::vector<double> local_h1;     // K x hidden
    std::vector<double> local_h2;
    std::vector<double> local_out;    // K x 4C
};

// Receiver-conditioned coefficients for one receiver. base has the scene
// coefficient layout (K x L x C x 2); output matches.
std::vector<double> condition_forward(const ConditioningState& state,
                                      const std::vector<double>& base,
                                      const GaussianScene& scene, const Vec3& rx,
                                      ConditionWorkspace* workspace = nullptr);

// Batched over receivers: row j equals condition_forward at rx_j.
std::vector<double> condition_batch(const ConditioningState& state,
                                    const std::vector<double>& base, const GaussianScene& scene,
                                    const std::vector<Vec3>& rx_list);

struct MlpGrads {
    std::vector<double> w1, b1, w2, b2, w3, b3;

    void resize(const Mlp& mlp);
    void add_scaled(const MlpGrads& other, double s);
};

struct ConditioningGrads {
    std::vector<double> d_freqs;
    MlpGrads d_global;
    std::vector<double> d_embed;
    MlpGrads d_local;

    void resize(const ConditioningState& state);
    void add(const ConditioningGrads& other);
};

// Adjoint of condition_forward: accumulates into d_base and grads.
void condition_backward(const ConditioningState& state, const ConditionWorkspace& workspace,
                        const std::vector<double>& base, const std::vector<double>& d_out,
                        std::vector<double>& d_base, ConditioningGrads& grads);

}  // namespace rxgs::cond
