// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "rxgs/channelsim.hpp"
#include "rxgs/linalg.hpp"
#include "rxgs/rng.hpp"

namespace rxgs::testutil {

inline double rel_err(double got, double want) {
    return std::abs(got - want) / std::max({1.0, std::abs(got), std::abs(want)});
}

inline double rel_err(cplx got, cplx want) {
    return std::abs(got - want) / std::max({1.0, std::abs(got), std::abs(want)});
}

// Central finite difference of a scalar function along one coordinate of x.
inline double central_diff(const std::function<double(const std::vector<double>&)>& f,
                           std::vector<double> x, std::size_t i, double step) {
    const double orig = x[i];
    x[i] = orig + step;
    const double fp = f(x);
    x[i] = orig - step;
    const double fm = f(x);
    return (fp - fm) / (2.0 * step);
}

inline sim::OracleScene random_oracle_scene(uint64_t seed, int n_scatterers, int max_bounces,
                                            double wavelength = 0.125) {
    sim::OracleScene scene;
    scene.wavelength = wavelength;
    scene.max_bounces = max_bounces;
    scene.room_bounds = {{-10, -10, -10}, {10, 10, 10}};
    Rng rng = derive_stream(seed, "testutil.oracle_scene");
    for (int i = 0; i < n_scatterers; ++i) {
        sim::Scatterer s;
        s.position = {rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(-8, 8)};
        const double mag = rng.uniform(0.2, 0.95);
        const double ang = rng.uniform(0, kTwoPi);
        s.reflection_coeff = {mag * std::cos(ang), mag * std::sin(ang)};
        scene.scatterers.push_back(s);
    }
    return scene;
}

}  // namespace rxgs::testutil
