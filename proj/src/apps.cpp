// SPDX-License-Identifier: Apache-2.0
#include "rxgs/apps.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rxgs::apps {

Vec3 wknn_localize(const FingerprintDB& db, const std::vector<double>& query,
                   const std::vector<uint8_t>& query_mask, int k) {
    if (db.rows() == 0) throw std::invalid_argument("wknn_localize: empty database");
    if (static_cast<int>(query.size()) != db.dims)
        throw std::invalid_argument("wknn_localize: query dimension mismatch");
    if (k < 1 || static_cast<std::size_t>(k) > db.rows())
        throw std::invalid_argument("wknn_localize: k out of range");

    // Distance over jointly valid dimensions, rescaled to keep magnitudes
    // comparable across rows with different coverage.
    std::vector<std::pair<double, std::size_t>> dist(db.rows());
    for (std::size_t row = 0; row < db.rows(); ++row) {
        double acc = 0.0;
        int valid = 0;
        for (int dim = 0; dim < db.dims; ++dim) {
            if (!db.valid(row, dim) || query_mask[static_cast<std::size_t>(dim)] == 0) continue;
            const double d = db.at(row, dim) - query[static_cast<std::size_t>(dim)];
            acc += d * d;
            ++valid;
        }
        const double scaled =
            valid > 0 ? std::sqrt(acc * static_cast<double>(db.dims) / valid)
                      : std::numeric_limits<double>::max();
        dist[row] = {scaled, row};
    }
    // Ties resolve to the lower database index.
    std::stable_sort(dist.begin(), dist.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    Vec3 acc{0, 0, 0};
    double wsum = 0.0;
    for (int i = 0; i < k; ++i) {
        const double w = 1.0 / (dist[static_cast<std::size_t>(i)].first + 1e-6);
        acc += db.positions[dist[static_cast<std::size_t>(i)].second] * w;
        wsum += w;
    }
    return acc / wsum;
}

Vec3 wknn_localize(const FingerprintDB& db, const std::vector<double>& query, int k) {
    return wknn_localize(db, query, std::vector<uint8_t>(query.size(), 1), k);
}

namespace {

std::vector<uint8_t> covered_set(const std::vector<double>& rssi_table, std::size_t tx_count,
                                 std::size_t candidate_count, const std::vector<int>& selected,
                                 double threshold_dbm) {
    std::vector<uint8_t> covered(tx_count, 0);
    for (std::size_t t = 0; t < tx_count; ++t)
        for (const int c : selected)
            if (rssi_table[t * candidate_count + static_cast<std::size_t>(c)] > threshold_dbm) {
                covered[t] = 1;
                break;
            }
    return covered;
}

}  // namespace

double coverage_fraction(const std::vector<double>& rssi_table, std::size_t tx_count,
                         std::size_t candidate_count, const std::vector<int>& selected,
                         double threshold_dbm) {
    if (selected.empty()) throw std::invalid_argument("coverage_fraction: empty selection");
    if (rssi_table.size() != tx_count * candidate_count)
        throw std::invalid_argument("coverage_fraction: table shape mismatch");
    for (const int c : selected)
        if (c < 0 || static_cast<std::size_t>(c) >= candidate_count)
            throw std::invalid_argument("coverage_fraction: candidate index out of range");
    const auto covered = covered_set(rssi_table, tx_count, candidate_count, selected,
                                     threshold_dbm);
    std::size_t n = 0;
    for (const uint8_t c : covered) n += c;
    return static_cast<double>(n) / static_cast<double>(tx_count);
}

std::vector<int> greedy_plan(const std::vector<double>& rssi_table, std::size_t tx_count,
                             std::size_t candidate_count, int k, double threshold_dbm) {
    if (k < 1 || static_cast<std::size_t>(k) > candidate_count)
        throw std::invalid_argument("greedy_plan: k out of range");
    if (rssi_table.size() != tx_count * candidate_count)
        throw std::invalid_argument("greedy_plan: table shape mismatch");

    std::vector<uint8_t> covered(tx_count, 0);
    std::vector<uint8_t> chosen(candidate_count, 0);
    std::vector<int> order;
    for (int round = 0; round < k; ++round) {
        int best = -1;
        std::size_t best_gain = 0;
        for (std::size_t c = 0; c < candidate_count; ++c) {
            if (chosen[c]) continue;
            std::size_t gain = 0;
            for (std::size_t t = 0; t < tx_count; ++t)
                if (!covered[t] && rssi_table[t * candidate_count + c] > threshold_dbm) ++gain;
            if (best < 0 || gain > best_gain) {
                best = static_cast<int>(c);
                best_gain = gain;
            }
        }
        chosen[static_cast<std::size_t>(best)] = 1;
        order.push_back(best);
        for (std::size_t t = 0; t < tx_count; ++t)
            if (rssi_table[t * candidate_count + static_cast<std::size_t>(best)] > threshold_dbm)
                covered[t] = 1;
    }
    return order;
}

}  // namespace rxgs::apps
