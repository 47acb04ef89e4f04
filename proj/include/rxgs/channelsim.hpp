// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <vector>

#include "rxgs/linalg.hpp"

namespace rxgs::sim {

// A point interactor with a complex reflection coefficient, |coeff| <= 1.
struct Scatterer {
    Vec3 position;
    cplx reflection_coeff{1.0, 0.0};
};

// One propagation path: the ordered scatterer bounce sequence plus the
// segment lengths tx -> s_1 -> ... -> s_P -> rx. A line-of-sight path has an
// empty index list and a single segment.
struct PropagationPath {
    std::vector<int> scatterer_indices;
    std::vector<double> segment_lengths;

    int bounces() const { return static_cast<int>(scatterer_indices.size()); }
    double total_length() const {
        double s = 0.0;
        for (const double d : segment_lengths) s += d;
        return s;
    }
    // Index of the scatterer owning the last segment; -1 for line of sight.
    int last_scatterer() const {
        return scatterer_indices.empty() ? -1 : scatterer_indices.back();
    }
};

struct OracleScene {
    std::vector<Scatterer> scatterers;
    double wavelength = 0.125;  // meters
    int max_bounces = 1;
    Aabb room_bounds{{-10, -10, -10}, {10, 10, 10}};

    void validate() const;
};

// Multiplier in [0, 1] applied to one path's coefficient, e.g. to emulate
// occlusion on the last segment. Default (absent) multiplier is 1.
using PathOcclusionFn = std::function<double(const PropagationPath&)>;

// All paths up to scene.max_bounces: the LoS path first, then bounce
// sequences ordered by length and lexicographically by index sequence.
// Immediate self-repeats (s -> s) are excluded; longer cycles are allowed.
std::vector<PropagationPath> enumerate_paths(const OracleScene& scene, const Vec3& tx,
                                             const Vec3& rx);

// prod Gamma(s) * prod lambda/(4 pi d_j) * exp(-j (2 pi / lambda) sum d_j).
cplx path_coefficient(const OracleScene& scene, const PropagationPath& path);

// Sum of path coefficients in enumeration order.
cplx channel_response(const OracleScene& scene, const Vec3& tx, const Vec3& rx,
                      const PathOcclusionFn& occlusion = nullptr);

// Analytic gradient of channel_response w.r.t. the receiver position:
// sum_l h_l * (1/d_last + j 2 pi / lambda) * (o_l - r)/|o_l - r| where o_l is
// the last scatterer (the transmitter for LoS).
std::array<cplx, 3> channel_response_rx_gradient(const OracleScene& scene, const Vec3& tx,
                                                 const Vec3& rx,
                                                 const PathOcclusionFn& occlusion = nullptr);

// Last-segment propagation factor lambda/(4 pi d) * exp(-j 2 pi d / lambda) * T.
cplx eta_eff_oracle(const Vec3& scatterer_pos, const Vec3& rx, double wavelength,
                    double occlusion_product);

// Group aggregate Phi_k = sum over paths whose last interaction is scatterer
// k. The LoS path lands in the reserved group -1.
std::map<int, cplx> group_paths_by_last_scatterer(const std::vector<PropagationPath>& paths,
                                                  const std::vector<cplx>& coefficients);

enum class Modality { Rssi, Csi, Spectrum };

const char* modality_name(Modality m);
Modality modality_from_name(const std::string& name);

// Angular binning grid for synthetic spectra (elevation-major rows).
struct SpectrumGridSpec {
    int n_theta = 18;
    int n_phi = 36;
    double kernel_concentration = 0.0;  // 0 = auto: main lobe spans ~3 cells
};

struct SyntheticDataset {
    std::vector<Vec3> tx_positions;
    std::vector<Vec3> rx_positions;
    Modality modality = Modality::Rssi;
    int csi_channels = 1;
    int spec_n_theta = 0, spec_n_phi = 0;

    // Dense over the M x N pair grid, pair index i * N + j.
    std::vector<double> rssi;            // one scalar per pair
    std::vector<cplx> csi;               // csi_channels per pair
    std::vector<std::vector<double>> spectra;  // n_theta * n_phi per pair

    std::size_t pair_count() const { return tx_positions.size() * rx_positions.size(); }
    std::size_t pair_index(std::size_t i, std::size_t j) const {
        return i * rx_positions.size() + j;
    }
};

struct SynthOptions {
    int csi_channels = 8;
    double csi_bandwidth_frac = 0.04;  // wavelengths spaced linearly over this span
    SpectrumGridSpec spectrum_grid;
};

inline constexpr double kRssiFloor = 1e-12;  // added to |h|^2 before the log

// Evaluate the analytic channel for every (tx, rx) pair in the requested
// modality. Pure given the scene; pairs are independent.
SyntheticDataset synth_dataset(const OracleScene& scene, const std::vector<Vec3>& tx_grid,
                               const std::vector<Vec3>& rx_list, Modality modality,
                               const SynthOptions& options = {});

}  // namespace rxgs::sim
