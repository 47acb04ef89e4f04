// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <complex>
#include <set>

#include "rxgs/channelsim.hpp"
#include "testutil.hpp"

using namespace rxgs;
using namespace rxgs::sim;
using rxgs::testutil::rel_err;

namespace {

OracleScene two_scatterer_scene() {
    OracleScene scene;
    scene.wavelength = 0.125;
    scene.max_bounces = 1;
    scene.room_bounds = {{-10, -10, -10}, {10, 10, 10}};
    scene.scatterers = {{{1, 2, 0}, {0.5, 0.0}}, {{-2, 1, 1}, {0.3, 0.4}}};
    return scene;
}

}  // namespace

TEST_CASE("enumerate_paths: K=2, one bounce") {
    auto scene = two_scatterer_scene();
    const auto paths = enumerate_paths(scene, {0, 0, 0}, {5, 0, 0});
    REQUIRE(paths.size() == 3);
    CHECK(paths[0].scatterer_indices.empty());
    CHECK(paths[1].scatterer_indices == std::vector<int>{0});
    CHECK(paths[2].scatterer_indices == std::vector<int>{1});
    CHECK(paths[0].segment_lengths.size() == 1);
    CHECK(paths[1].segment_lengths.size() == 2);
}

TEST_CASE("enumerate_paths: no immediate self-repeat") {
    auto scene = two_scatterer_scene();
    scene.max_bounces = 2;
    const auto paths = enumerate_paths(scene, {0, 0, 0}, {5, 0, 0});
    REQUIRE(paths.size() == 5);
    CHECK(paths[3].scatterer_indices == std::vector<int>{0, 1});
    CHECK(paths[4].scatterer_indices == std::vector<int>{1, 0});
    for (const auto& p : paths)
        for (std::size_t i = 1; i < p.scatterer_indices.size(); ++i)
            CHECK(p.scatterer_indices[i] != p.scatterer_indices[i - 1]);
}

TEST_CASE("enumerate_paths: K=3 two-bounce count via brute force") {
    // Independent count: sequences of length 0, 1 and 2 without immediate
    // repeats over 3 symbols: 1 + 3 + 3*2 = 10.
    auto scene = testutil::random_oracle_scene(7, 3, 2);
    const auto paths = enumerate_paths(scene, {0, 0, 0}, {1, 1, 1});
    int brute = 0;
    for (int a = -1; a < 3; ++a)
        for (int b = -1; b < 3; ++b) {
            if (a == -1 && b != -1) continue;
            if (a != -1 && a == b) continue;
            ++brute;
        }
    CHECK(paths.size() == 10);
    CHECK(static_cast<int>(paths.size()) == brute);
}

TEST_CASE("enumerate_paths: segment lengths consistent with geometry") {
    auto scene = testutil::random_oracle_scene(11, 4, 2);
    const Vec3 tx{0.5, -0.25, 1.0}, rx{3.0, 2.0, -1.0};
    for (const auto& p : enumerate_paths(scene, tx, rx)) {
        Vec3 prev = tx;
        for (std::size_t i = 0; i < p.scatterer_indices.size(); ++i) {
            const Vec3 s = scene.scatterers[p.scatterer_indices[i]].position;
            CHECK(rel_err(p.segment_lengths[i], distance(prev, s)) < 1e-12);
            prev = s;
        }
        CHECK(rel_err(p.segment_lengths.back(), distance(prev, rx)) < 1e-12);
    }
}

TEST_CASE("enumerate_paths: rejects tx == rx and out-of-bounds endpoints") {
    auto scene = two_scatterer_scene();
    CHECK_THROWS_AS(enumerate_paths(scene, {1, 1, 1}, {1, 1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(enumerate_paths(scene, {100, 0, 0}, {1, 1, 1}), std::invalid_argument);
}

TEST_CASE("path_coefficient: LoS with integer-wavelength distance") {
    OracleScene scene;
    scene.wavelength = 0.125;
    PropagationPath p;
    p.segment_lengths = {10.0};
    const cplx c = path_coefficient(scene, p);
    CHECK(rel_err(c.real(), 0.125 / (4.0 * kPi * 10.0)) < 1e-12);
    CHECK(std::abs(c.imag()) < 1e-12);
}

TEST_CASE("path_coefficient: single bounce hand value") {
    OracleScene scene;
    scene.wavelength = 0.125;
    scene.scatterers = {{{0, 0, 0}, {0.5, 0.0}}};
    PropagationPath p;
    p.scatterer_indices = {0};
    p.segment_lengths = {3.0, 4.0};
    const cplx c = path_coefficient(scene, p);
    // 0.5 * (0.125/(4 pi 3)) * (0.125/(4 pi 4)), phase = 56 wavelengths = 0.
    const double mag = 0.5 * (0.125 / (4.0 * kPi * 3.0)) * (0.125 / (4.0 * kPi * 4.0));
    CHECK(rel_err(std::abs(c), mag) < 1e-12);
    CHECK(rel_err(c.real(), mag) < 1e-10);
    CHECK(std::abs(std::arg(c)) < 1e-9);
}

TEST_CASE("path_coefficient: zero reflection annihilates the path") {
    OracleScene scene;
    scene.wavelength = 0.125;
    scene.scatterers = {{{0, 0, 0}, {0.0, 0.0}}};
    PropagationPath p;
    p.scatterer_indices = {0};
    p.segment_lengths = {3.0, 4.0};
    CHECK(path_coefficient(scene, p) == cplx{0.0, 0.0});
}

TEST_CASE("path_coefficient: reciprocity of magnitude under path reversal") {
    auto scene = testutil::random_oracle_scene(3, 4, 3);
    PropagationPath p, q;
    p.scatterer_indices = {0, 2, 1};
    p.segment_lengths = {1.5, 2.25, 0.75, 3.5};
    q.scatterer_indices = {1, 2, 0};
    q.segment_lengths = {3.5, 0.75, 2.25, 1.5};
    CHECK(rel_err(std::abs(path_coefficient(scene, p)), std::abs(path_coefficient(scene, q))) <
          1e-14);
}

TEST_CASE("channel_response: K=0 equals the LoS coefficient") {
    OracleScene scene;
    scene.wavelength = 0.2;
    scene.max_bounces = 3;
    const Vec3 tx{0, 0, 0}, rx{4, 1, 2};
    PropagationPath los;
    los.segment_lengths = {distance(tx, rx)};
    CHECK(channel_response(scene, tx, rx) == path_coefficient(scene, los));
}

TEST_CASE("channel_response: destructive interference via occlusion hook") {
    // Two identical mirrored single-bounce paths; flip one with the hook.
    OracleScene scene;
    scene.wavelength = 0.125;
    scene.max_bounces = 1;
    scene.scatterers = {{{0, 3, 0}, {0.5, 0.0}}, {{0, -3, 0}, {0.5, 0.0}}};
    const Vec3 tx{-2, 0, 0}, rx{2, 0, 0};
    const auto paths = enumerate_paths(scene, tx, rx);
    // Suppress LoS entirely and negate path [1]: sum of bounce paths cancels.
    const auto hook = [](const PropagationPath& p) -> double {
        if (p.bounces() == 0) return 0.0;
        return p.scatterer_indices[0] == 1 ? -1.0 : 1.0;
    };
    REQUIRE(paths.size() == 3);
    const cplx h = channel_response(scene, tx, rx, hook);
    CHECK(std::abs(h) < 1e-18);
}

TEST_CASE("channel_response: matches independent per-path summation") {
    auto scene = testutil::random_oracle_scene(21, 5, 2);
    const Vec3 tx{0.2, 0.4, -0.5}, rx{1.5, -2.0, 0.75};
    const auto paths = enumerate_paths(scene, tx, rx);
    cplx manual{0, 0};
    for (const auto& p : paths) manual += path_coefficient(scene, p);
    CHECK(rel_err(channel_response(scene, tx, rx), manual) < 1e-14);
}

TEST_CASE("channel_response: deterministic across calls") {
    auto scene = testutil::random_oracle_scene(5, 5, 2);
    const Vec3 tx{0, 0.1, 0}, rx{2, 0, 1};
    const cplx a = channel_response(scene, tx, rx);
    const cplx b = channel_response(scene, tx, rx);
    CHECK(a.real() == b.real());
    CHECK(a.imag() == b.imag());
}

TEST_CASE("eta_eff_oracle: values at d = lambda and d = lambda/4") {
    const double lam = 0.125;
    const cplx full = eta_eff_oracle({0, 0, 0}, {lam, 0, 0}, lam, 1.0);
    CHECK(rel_err(full.real(), 1.0 / (4.0 * kPi)) < 1e-12);
    CHECK(std::abs(full.imag()) < 1e-12);

    const cplx half = eta_eff_oracle({0, 0, 0}, {lam, 0, 0}, lam, 0.5);
    CHECK(rel_err(half.real(), 0.5 / (4.0 * kPi)) < 1e-12);

    const cplx quarter = eta_eff_oracle({0, 0, 0}, {0.25 * lam, 0, 0}, lam, 1.0);
    CHECK(std::abs(quarter.real()) < 1e-12);
    CHECK(rel_err(quarter.imag(), -1.0 / kPi) < 1e-12);

    CHECK_THROWS_AS(eta_eff_oracle({1, 1, 1}, {1, 1, 1}, lam, 1.0), std::invalid_argument);
}

TEST_CASE("group_paths_by_last_scatterer: grouping rules") {
    auto scene = two_scatterer_scene();
    scene.max_bounces = 2;
    const Vec3 tx{0, 0, 0}, rx{5, 0, 0};
    const auto paths = enumerate_paths(scene, tx, rx);
    std::vector<cplx> coeffs(paths.size());
    for (std::size_t i = 0; i < paths.size(); ++i) coeffs[i] = path_coefficient(scene, paths[i]);
    const auto groups = group_paths_by_last_scatterer(paths, coeffs);

    // LoS in the reserved group; group 1 holds [1] and [0,1].
    REQUIRE(groups.count(-1) == 1);
    cplx group1{0, 0};
    for (std::size_t i = 0; i < paths.size(); ++i)
        if (paths[i].last_scatterer() == 1) group1 += coeffs[i];
    CHECK(rel_err(groups.at(1), group1) < 1e-15);

    // Regrouped sum equals the full response.
    cplx regrouped{0, 0};
    for (const auto& [k, v] : groups) regrouped += v;
    CHECK(rel_err(regrouped, channel_response(scene, tx, rx)) < 1e-14);
}

TEST_CASE("factorization: grouped aggregate = eta_eff * receiver-independent base") {
    auto scene = testutil::random_oracle_scene(33, 3, 2);
    const Vec3 tx{0, 0, 0};
    const Vec3 rx1{4, 1, 0.5};
    const Vec3 rx2{-3, 2, 1.5};

    auto grouped = [&](const Vec3& rx) {
        const auto paths = enumerate_paths(scene, tx, rx);
        std::vector<cplx> coeffs(paths.size());
        for (std::size_t i = 0; i < paths.size(); ++i)
            coeffs[i] = path_coefficient(scene, paths[i]);
        return group_paths_by_last_scatterer(paths, coeffs);
    };

    const auto g1 = grouped(rx1);
    const auto g2 = grouped(rx2);
    for (int k = 0; k < 3; ++k) {
        const Vec3 s = scene.scatterers[k].position;
        const cplx base1 = g1.at(k) / eta_eff_oracle(s, rx1, scene.wavelength, 1.0);
        const cplx base2 = g2.at(k) / eta_eff_oracle(s, rx2, scene.wavelength, 1.0);
        CHECK(rel_err(base1, base2) < 1e-12);
    }
}

TEST_CASE("receiver gradient law matches central finite differences") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        auto scene = testutil::random_oracle_scene(100 + seed, 4, 2);
        Rng rng = derive_stream(seed, "test.rxgrad");
        const Vec3 tx{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
        const Vec3 rx{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
        const auto grad = channel_response_rx_gradient(scene, tx, rx);
        const double step = 1e-7;
        for (int axis = 0; axis < 3; ++axis) {
            Vec3 hi = rx, lo = rx;
            hi[axis] += step;
            lo[axis] -= step;
            const cplx fd =
                (channel_response(scene, tx, hi) - channel_response(scene, tx, lo)) / (2 * step);
            CHECK(std::abs(fd - grad[axis]) / std::abs(grad[axis]) < 1e-6);
        }
    }
}

TEST_CASE("synth_dataset: rssi definition and shape") {
    auto scene = two_scatterer_scene();
    const std::vector<Vec3> tx{{0, 0, 0}};
    const std::vector<Vec3> rx{{5, 0, 0}};
    const auto ds = synth_dataset(scene, tx, rx, Modality::Rssi);
    REQUIRE(ds.rssi.size() == 1);
    const cplx h = channel_response(scene, tx[0], rx[0]);
    CHECK(rel_err(ds.rssi[0], 10.0 * std::log10(std::norm(h) + kRssiFloor)) < 1e-14);
}

TEST_CASE("synth_dataset: csi channels match per-wavelength responses") {
    auto scene = testutil::random_oracle_scene(3, 3, 1);
    const std::vector<Vec3> tx{{0, 0, 0}, {1, 0, 0}};
    const std::vector<Vec3> rx{{4, 2, 0}};
    SynthOptions opt;
    opt.csi_channels = 2;
    opt.csi_bandwidth_frac = 0.04;
    const auto ds = synth_dataset(scene, tx, rx, Modality::Csi, opt);
    REQUIRE(ds.csi.size() == 4);
    for (int ch = 0; ch < 2; ++ch) {
        OracleScene sub = scene;
        sub.wavelength = scene.wavelength * (1.0 + 0.04 * (ch / 1.0 - 0.5));
        CHECK(rel_err(ds.csi[ds.pair_index(1, 0) * 2 + ch],
                      channel_response(sub, tx[1], rx[0])) < 1e-14);
    }
}

TEST_CASE("synth_dataset: mirrored scene gives identical |h|") {
    auto scene = testutil::random_oracle_scene(5, 4, 2);
    OracleScene mirrored = scene;
    for (auto& s : mirrored.scatterers) s.position.x = -s.position.x;
    const Vec3 tx{1.5, 0.5, -1.0}, rx{-2.0, 3.0, 0.25};
    const Vec3 mtx{-tx.x, tx.y, tx.z}, mrx{-rx.x, rx.y, rx.z};
    const auto a = synth_dataset(scene, {tx}, {rx}, Modality::Rssi);
    const auto b = synth_dataset(mirrored, {mtx}, {mrx}, Modality::Rssi);
    CHECK(rel_err(a.rssi[0], b.rssi[0]) < 1e-12);
}

TEST_CASE("synth_dataset: spectrum map is peak-normalized and shaped") {
    auto scene = two_scatterer_scene();
    SynthOptions opt;
    opt.spectrum_grid.n_theta = 6;
    opt.spectrum_grid.n_phi = 12;
    const auto ds = synth_dataset(scene, {{0, 0, 0}}, {{5, 0, 0}}, Modality::Spectrum, opt);
    REQUIRE(ds.spectra.size() == 1);
    REQUIRE(ds.spectra[0].size() == 72);
    double peak = 0;
    for (double v : ds.spectra[0]) {
        CHECK(v >= 0.0);
        peak = std::max(peak, v);
    }
    CHECK(peak == 1.0);
}

TEST_CASE("synth_dataset: rejects empty grids") {
    auto scene = two_scatterer_scene();
    CHECK_THROWS(synth_dataset(scene, {}, {{1, 0, 0}}, Modality::Rssi));
}
