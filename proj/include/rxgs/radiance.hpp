// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "rxgs/linalg.hpp"

namespace rxgs::fle {

// Number of directional components for a maximum degree.
inline int component_count(int l_max) { return (l_max + 1) * (l_max + 1); }

// Component index <-> (degree l, order m), m in [-l, l].
inline int component_index(int l, int m) { return l * l + m + l; }
inline int component_degree(int comp) {
    int l = static_cast<int>(std::sqrt(static_cast<double>(comp)));
    while ((l + 1) * (l + 1) <= comp) ++l;
    while (l * l > comp) --l;
    return l;
}
inline int component_order(int comp) {
    const int l = component_degree(comp);
    return comp - l * l - l;
}

// Orthonormalization factor sqrt((2l+1)/(4 pi) * (l-|m|)!/(l+|m|)!).
double normalization(int l, int m);

// Associated Legendre values P_l^m(x) for 0 <= m <= l <= l_max, without the
// Condon-Shortley phase. Entry order: (l, m) packed as l*(l+1)/2 + m.
struct LegendreTable {
    int l_max = 0;
    std::vector<double> p;

    double at(int l, int m) const { return p[static_cast<std::size_t>(l) * (l + 1) / 2 + m]; }
};

LegendreTable legendre_table(double x, int l_max);

// P together with d/d theta at x = cos(theta); needed by the projection
// adjoint. Computed by differentiating each recurrence step, so it stays
// finite at the poles.
struct LegendreTableD {
    int l_max = 0;
    std::vector<double> p;
    std::vector<double> dp_dtheta;

    double at(int l, int m) const { return p[static_cast<std::size_t>(l) * (l + 1) / 2 + m]; }
    double dtheta_at(int l, int m) const {
        return dp_dtheta[static_cast<std::size_t>(l) * (l + 1) / 2 + m];
    }
};

LegendreTableD legendre_table_dtheta(double theta, int l_max);

// Complex directional basis B_comp = N_lm P_l^{|m|}(cos theta) e^{j m phi}
// for every component, so that the radiance is R = sum_comp c_comp B_comp
// with complex coefficients c = a + j b.
struct BasisValues {
    int l_max = 0;
    std::vector<cplx> b;

    const cplx& at(int comp) const { return b[static_cast<std::size_t>(comp)]; }
};

BasisValues eval_basis(double theta, double phi, int l_max);

// Basis plus its partials w.r.t. theta and phi.
struct BasisJet {
    int l_max = 0;
    std::vector<cplx> b, db_dtheta, db_dphi;
};

BasisJet eval_basis_jet(double theta, double phi, int l_max);

inline constexpr double kAmplitudeEps = 1e-8;

// Complex radiance R_e + j R_i from an interleaved (a, b) coefficient block
// of length 2 * component_count(l_max).
cplx eval_radiance(const double* coeffs, double theta, double phi, int l_max);

// Stabilized amplitude sqrt(R_e^2 + R_i^2 + 1e-8).
inline double amplitude(cplx r) {
    return std::sqrt(r.real() * r.real() + r.imag() * r.imag() + kAmplitudeEps);
}

}  // namespace rxgs::fle
