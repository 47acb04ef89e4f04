// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "rxgs/linalg.hpp"

namespace rxgs::apps {

// Fingerprint database: one row per surveyed transmitter position, one
// column per receiver. Masked entries are treated as missing.
struct FingerprintDB {
    std::vector<Vec3> positions;          // M
    std::vector<double> fingerprints;     // M x N, dB
    std::vector<uint8_t> mask;            // M x N, 1 = valid
    int dims = 0;                         // N

    std::size_t rows() const { return positions.size(); }
    double at(std::size_t row, int dim) const {
        return fingerprints[row * static_cast<std::size_t>(dims) + dim];
    }
    bool valid(std::size_t row, int dim) const {
        return mask[row * static_cast<std::size_t>(dims) + dim] != 0;
    }
};

// Weighted K-nearest-neighbor position estimate with inverse-distance
// weights 1 / (d + 1e-6). Distances run over the dimensions valid in both
// the query mask and the row, rescaled by sqrt(N / valid_count).
Vec3 wknn_localize(const FingerprintDB& db, const std::vector<double>& query,
                   const std::vector<uint8_t>& query_mask, int k);
Vec3 wknn_localize(const FingerprintDB& db, const std::vector<double>& query, int k);

// Fraction of transmitters whose strongest selected-candidate RSSI exceeds
// the threshold. rssi_table is tx-major: tx_count x candidate_count.
double coverage_fraction(const std::vector<double>& rssi_table, std::size_t tx_count,
                         std::size_t candidate_count, const std::vector<int>& selected,
                         double threshold_dbm);

// Greedy maximum-coverage selection of k candidates; ties break on the
// lower candidate index. Returns candidates in selection order.
std::vector<int> greedy_plan(const std::vector<double>& rssi_table, std::size_t tx_count,
                             std::size_t candidate_count, int k, double threshold_dbm);

}  // namespace rxgs::apps
