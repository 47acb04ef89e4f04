// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rxgs/channelsim.hpp"

namespace rxgs::io {

// Error taxonomy mapped to CLI exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Scene file: scatterer list, wavelength, bounds, max_bounces.
sim::OracleScene load_oracle_scene(const std::filesystem::path& path);
void save_oracle_scene(const std::filesystem::path& path, const sim::OracleScene& scene);

// Spectrum sidecar: magic RXSP, u32 height, u32 width, h*w f32 amplitudes
// row-major (elevation-major).
void save_spectrum_rxsp(const std::filesystem::path& path, const std::vector<double>& amplitudes,
                        int h, int w);
std::vector<double> load_spectrum_rxsp(const std::filesystem::path& path, int* h, int* w);

// 8-bit max-normalized PGM export.
void save_pgm(const std::filesystem::path& path, const std::vector<double>& image, int h, int w);

// Dataset: JSON-lines, one record per (tx, rx) pair; spectrum records point
// at sidecar .rxsp files stored next to the dataset.
void save_dataset(const std::filesystem::path& path, const sim::SyntheticDataset& ds);
sim::SyntheticDataset load_dataset(const std::filesystem::path& path);

}  // namespace rxgs::io
