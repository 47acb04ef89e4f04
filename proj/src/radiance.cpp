// SPDX-License-Identifier: Apache-2.0
#include "rxgs/radiance.hpp"

#include <cmath>
#include <stdexcept>

namespace rxgs::fle {

double normalization(int l, int m) {
    const int am = std::abs(m);
    double ratio = 1.0;  // (l-|m|)! / (l+|m|)!
    for (int i = l - am + 1; i <= l + am; ++i) ratio /= static_cast<double>(i);
    return std::sqrt((2.0 * l + 1.0) / (4.0 * kPi) * ratio);
}

LegendreTable legendre_table(double x, int l_max) {
    if (std::abs(x) > 1.0 + 1e-12) throw std::invalid_argument("legendre_table: |x| > 1");
    x = std::clamp(x, -1.0, 1.0);
    if (l_max < 0) throw std::invalid_argument("legendre_table: l_max < 0");

    LegendreTable t;
    t.l_max = l_max;
    t.p.assign(static_cast<std::size_t>(l_max + 1) * (l_max + 2) / 2, 0.0);
    auto at = [&t](int l, int m) -> double& {
        return t.p[static_cast<std::size_t>(l) * (l + 1) / 2 + m];
    };

    const double s = std::sqrt(std::max(0.0, (1.0 - x) * (1.0 + x)));  // sin(theta)
    at(0, 0) = 1.0;
    for (int m = 1; m <= l_max; ++m) at(m, m) = at(m - 1, m - 1) * (2.0 * m - 1.0) * s;
    for (int m = 0; m < l_max; ++m) at(m + 1, m) = x * (2.0 * m + 1.0) * at(m, m);
    for (int m = 0; m <= l_max; ++m)
        for (int l = m + 2; l <= l_max; ++l)
            at(l, m) = (x * (2.0 * l - 1.0) * at(l - 1, m) - (l + m - 1.0) * at(l - 2, m)) /
                       static_cast<double>(l - m);
    return t;
}

LegendreTableD legendre_table_dtheta(double theta, int l_max) {
    if (l_max < 0) throw std::invalid_argument("legendre_table_dtheta: l_max < 0");
    const double x = std::cos(theta);
    const double s = std::sin(theta);

    LegendreTableD t;
    t.l_max = l_max;
    const std::size_t n = static_cast<std::size_t>(l_max + 1) * (l_max + 2) / 2;
    t.p.assign(n, 0.0);
    t.dp_dtheta.assign(n, 0.0);
    auto at = [&t](int l, int m) -> double& {
        return t.p[static_cast<std::size_t>(l) * (l + 1) / 2 + m];
    };
    auto dat = [&t](int l, int m) -> double& {
        return t.dp_dtheta[static_cast<std::size_t>(l) * (l + 1) / 2 + m];
    };

    // Differentiate each recurrence step in theta: dx = -s, ds = x.
    at(0, 0) = 1.0;
    dat(0, 0) = 0.0;
    for (int m = 1; m <= l_max; ++m) {
        const double c = 2.0 * m - 1.0;
        at(m, m) = at(m - 1, m - 1) * c * s;
        dat(m, m) = c * (dat(m - 1, m - 1) * s + at(m - 1, m - 1) * x);
    }
    for (int m = 0; m < l_max; ++m) {
        const double c = 2.0 * m + 1.0;
        at(m + 1, m) = x * c * at(m, m);
        dat(m + 1, m) = c * (-s * at(m, m) + x * dat(m, m));
    }
    for (int m = 0; m <= l_max; ++m)
        for (int l = m + 2; l <= l_max; ++l) {
            const double a = 2.0 * l - 1.0, b = l + m - 1.0, inv = 1.0 / (l - m);
            at(l, m) = (x * a * at(l - 1, m) - b * at(l - 2, m)) * inv;
            dat(l, m) =
                (a * (-s * at(l - 1, m) + x * dat(l - 1, m)) - b * dat(l - 2, m)) * inv;
        }
    return t;
}

BasisValues eval_basis(double theta, double phi, int l_max) {
    const LegendreTable leg = legendre_table(std::cos(theta), l_max);
    BasisValues out;
    out.l_max = l_max;
    out.b.resize(static_cast<std::size_t>(component_count(l_max)));
    for (int l = 0; l <= l_max; ++l)
        for (int m = -l; m <= l; ++m) {
            const int am = std::abs(m);
            const double np = normalization(l, am) * leg.at(l, am);
            const double c = std::cos(m * phi), s = std::sin(m * phi);
            out.b[static_cast<std::size_t>(component_index(l, m))] = cplx{np * c, np * s};
        }
    return out;
}

BasisJet eval_basis_jet(double theta, double phi, int l_max) {
    const LegendreTableD leg = legendre_table_dtheta(theta, l_max);
    BasisJet out;
    out.l_max = l_max;
    const std::size_t n = static_cast<std::size_t>(component_count(l_max));
    out.b.resize(n);
    out.db_dtheta.resize(n);
    out.db_dphi.resize(n);
    for (int l = 0; l <= l_max; ++l)
        for (int m = -l; m <= l; ++m) {
            const int am = std::abs(m);
            const double nrm = normalization(l, am);
            const double c = std::cos(m * phi), s = std::sin(m * phi);
            const std::size_t idx = static_cast<std::size_t>(component_index(l, m));
            const cplx e{c, s};
            out.b[idx] = nrm * leg.at(l, am) * e;
            out.db_dtheta[idx] = nrm * leg.dtheta_at(l, am) * e;
            out.db_dphi[idx] = cplx{0.0, static_cast<double>(m)} * out.b[idx];
        }
    return out;
}

cplx eval_radiance(const double* coeffs, double theta, double phi, int l_max) {
    if (theta < 0.0 || theta > kPi) throw std::invalid_argument("eval_radiance: theta out of [0, pi]");
    const BasisValues basis = eval_basis(theta, phi, l_max);
    cplx r{0.0, 0.0};
    const int n = component_count(l_max);
    for (int comp = 0; comp < n; ++comp)
        r += cplx{coeffs[2 * comp], coeffs[2 * comp + 1]} * basis.b[static_cast<std::size_t>(comp)];
    return r;
}

}  // namespace rxgs::fle
