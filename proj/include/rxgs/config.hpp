// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "rxgs/conditioning.hpp"
#include "rxgs/dataset.hpp"
#include "rxgs/trainer.hpp"

namespace rxgs::io {

struct SimulateSection {
    Modality modality = Modality::Rssi;
    int tx_count = 0;                  // random placement when positions empty
    std::vector<Vec3> tx_positions;
    int rx_count = 0;
    std::vector<Vec3> rx_positions;
    int csi_channels = 8;
    double csi_bandwidth_frac = 0.04;
    int spectrum_n_theta = 18;
    int spectrum_n_phi = 36;
};

struct RandomSceneSection {
    bool enabled = false;
    int count = 20;
    double reflection_min = 0.2;
    double reflection_max = 0.95;
};

struct ModelSection {
    int k_init = 150;
    int l_max = 2;
    int channels = 1;
    raster::SphericalGrid grid;
};

struct FullConfig {
    uint64_t seed = 1;
    sim::OracleScene scene;
    RandomSceneSection scene_random;  // filled into `scene` at load time
    SimulateSection simulate;
    ModelSection model;
    train::TrainConfig train;
    cond::ConditioningConfig conditioning;
};

// Versioned JSON config; unknown keys are errors (fail-closed) and messages
// carry the offending field path.
FullConfig load_config(const std::filesystem::path& path);

// Seeded helpers shared by the CLI: uniform positions inside bounds, margin
// away from the walls.
std::vector<Vec3> random_positions(const Aabb& bounds, int count, uint64_t seed,
                                   std::string_view tag, double margin_frac = 0.05);

}  // namespace rxgs::io
