// SPDX-License-Identifier: Apache-2.0
#include "rxgs/sphraster.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "rxgs/channelsim.hpp"
#include "rxgs/parallel.hpp"

namespace rxgs::raster {

void SphericalGrid::validate() const {
    if (n_theta < 1 || n_phi < 1) throw std::invalid_argument("grid: n_theta * n_phi must be >= 1");
    if (tile_size < 1) throw std::invalid_argument("grid: tile_size must be >= 1");
    if (!(radius > 0.0)) throw std::invalid_argument("grid: radius must be > 0");
    if (!(theta_min >= 0.0 && theta_max <= kPi && theta_min < theta_max))
        throw std::invalid_argument("grid: elevation span must satisfy 0 <= min < max <= pi");
}

ProjectedGaussian project_gaussian(const Vec3& position, const Mat3& cov3, double tau,
                                   const Vec3& tx, const SphericalGrid& grid) {
    ProjectedGaussian out;
    const Vec3 u = position - tx;
    const double d = u.norm();
    if (!(d >= grid.radius) || d == 0.0) return out;  // culled (inside the emission sphere)

    const double rho = std::sqrt(u.x * u.x + u.y * u.y);
    out.theta = std::atan2(rho, u.z);
    out.phi = wrap_two_pi(std::atan2(u.y, u.x));
    out.depth = d;
    out.weight_scale = tau;

    // Local tangent frame at the center direction.
    const double st = std::sin(out.theta), ct = std::cos(out.theta);
    const double sp = std::sin(out.phi), cp = std::cos(out.phi);
    const Vec3 e_theta{ct * cp, ct * sp, -st};
    const Vec3 e_phi{-sp, cp, 0.0};
    const double inv_d2 = 1.0 / (d * d);
    out.angular_cov.a = e_theta.dot(cov3 * e_theta) * inv_d2;
    out.angular_cov.b = e_theta.dot(cov3 * e_phi) * inv_d2;
    out.angular_cov.c = out.angular_cov.b;  // exact symmetry
    out.angular_cov.d = e_phi.dot(cov3 * e_phi) * inv_d2;
    out.angular_prec = out.angular_cov.inverse();

    // 3-sigma angular extents; azimuth width converted back to raw angle.
    const double r_theta = 3.0 * std::sqrt(std::max(out.angular_cov.a, 0.0));
    const double r_phi_scaled = 3.0 * std::sqrt(std::max(out.angular_cov.d, 0.0));
    const double theta_lo = out.theta - r_theta, theta_hi = out.theta + r_theta;
    if (theta_hi < grid.theta_min || theta_lo > grid.theta_max) return out;

    const double cell_t = grid.dtheta(), cell_p = grid.dphi();
    const int i0 = std::clamp(static_cast<int>(std::floor((theta_lo - grid.theta_min) / cell_t)),
                              0, grid.n_theta - 1);
    const int i1 = std::clamp(static_cast<int>(std::floor((theta_hi - grid.theta_min) / cell_t)),
                              0, grid.n_theta - 1);
    out.t0 = i0 / grid.tile_size;
    out.t1 = i1 / grid.tile_size;

    const int tiles_p = grid.tiles_phi();
    const double w_phi = st > 1e-12 ? r_phi_scaled / st : kPi;
    if (w_phi >= kPi) {
        out.p0 = 0;
        out.p1 = tiles_p - 1;
    } else {
        const int j0 = std::clamp(
            static_cast<int>(std::floor(wrap_two_pi(out.phi - w_phi) / cell_p)), 0,
            grid.n_phi - 1);
        const int j1 = std::clamp(
            static_cast<int>(std::floor(wrap_two_pi(out.phi + w_phi) / cell_p)), 0,
            grid.n_phi - 1);
        out.p0 = j0 / grid.tile_size;
        out.p1 = j1 / grid.tile_size;
        if (j0 > j1) out.p1 += tiles_p;  // crosses the azimuth seam
        if (out.p1 - out.p0 + 1 > tiles_p) {
            out.p0 = 0;
            out.p1 = tiles_p - 1;
        }
    }
    out.culled = false;
    return out;
}

std::vector<std::vector<int>> bin_and_sort(const std::vector<ProjectedGaussian>& projected,
                                           const SphericalGrid& grid) {
    const int tiles_t = grid.tiles_theta(), tiles_p = grid.tiles_phi();
    std::vector<std::vector<int>> lists(static_cast<std::size_t>(tiles_t) * tiles_p);
    for (int k = 0; k < static_cast<int>(projected.size()); ++k) {
        const auto& pg = projected[static_cast<std::size_t>(k)];
        if (pg.culled) continue;
        for (int tt = pg.t0; tt <= pg.t1; ++tt)
            for (int pp = pg.p0; pp <= pg.p1; ++pp)
                lists[static_cast<std::size_t>(tt) * tiles_p + (pp % tiles_p)].push_back(k);
    }
    for (auto& list : lists)
        std::stable_sort(list.begin(), list.end(), [&projected](int a, int b) {
            return projected[static_cast<std::size_t>(a)].depth <
                   projected[static_cast<std::size_t>(b)].depth;
        });
    return lists;
}

namespace {

void hash_bytes(uint64_t& h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
}

template <typename T>
void hash_value(uint64_t& h, const T& v) {
    hash_bytes(h, &v, sizeof(T));
}

}  // namespace

uint64_t TxState::hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    hash_value(h, grid.n_theta);
    hash_value(h, grid.n_phi);
    hash_value(h, grid.tile_size);
    hash_value(h, grid.radius);
    hash_value(h, k);
    hash_value(h, l_max);
    for (const auto& pg : proj) {
        hash_value(h, pg.culled);
        if (pg.culled) continue;
        hash_value(h, pg.theta);
        hash_value(h, pg.phi);
        hash_value(h, pg.depth);
        hash_value(h, pg.angular_cov);
        hash_value(h, pg.weight_scale);
        hash_value(h, pg.t0);
        hash_value(h, pg.t1);
        hash_value(h, pg.p0);
        hash_value(h, pg.p1);
    }
    for (const auto& list : tile_lists) {
        hash_value(h, list.size());
        for (const int idx : list) hash_value(h, idx);
    }
    hash_bytes(h, basis.data(), basis.size() * sizeof(cplx));
    return h;
}

TxState build_tx_state(const GaussianScene& scene, const Vec3& tx, const SphericalGrid& grid) {
    grid.validate();
    TxState state;
    state.grid = grid;
    state.k = scene.count();
    state.l_max = scene.l_max;
    state.proj.resize(static_cast<std::size_t>(state.k));
    const int n_comp = scene.n_components();
    state.basis.assign(static_cast<std::size_t>(state.k) * n_comp, cplx{0.0, 0.0});

    for (int k = 0; k < state.k; ++k) {
        const Mat3 cov3 = scene.covariance(k);
        state.proj[static_cast<std::size_t>(k)] =
            project_gaussian(scene.position(k), cov3, scene.tau(k), tx, grid);
        const auto& pg = state.proj[static_cast<std::size_t>(k)];
        if (pg.culled) continue;
        const fle::BasisValues basis = fle::eval_basis(pg.theta, pg.phi, scene.l_max);
        std::copy(basis.b.begin(), basis.b.end(),
                  state.basis.begin() + static_cast<std::size_t>(k) * n_comp);
    }
    state.tile_lists = bin_and_sort(state.proj, grid);
    return state;
}

BlendResult blend_ray(const std::vector<double>& weights, const std::vector<cplx>& signals) {
    if (weights.size() != signals.size())
        throw std::invalid_argument("blend_ray: weights/signals size mismatch");
    BlendResult out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double w = std::clamp(weights[i], 0.0, kWeightClamp);
        out.c += out.transmittance * w * signals[i];
        out.transmittance *= 1.0 - w;
        if (out.transmittance < kEarlyExitT) break;
    }
    return out;
}

namespace {

// Per-receiver, per-channel complex signals, layout (k * N + j) * C + c.
std::vector<cplx> reduce_signals(const TxState& state, const GaussianScene& scene,
                                 const std::vector<double>& coeffs, int n_rx) {
    const int n_comp = scene.n_components();
    const int channels = scene.channels;
    const std::size_t expected = static_cast<std::size_t>(n_rx) * state.k * n_comp * channels * 2;
    if (coeffs.size() != expected)
        throw std::invalid_argument("render_field: coefficient tensor has wrong size");
    for (int j = 0; j < n_rx; ++j)
        for (int k = 0; k < state.k; ++k) {
            const std::size_t base =
                ((static_cast<std::size_t>(j) * state.k + k) * n_comp) * channels * 2;
            for (std::size_t i = 0; i < static_cast<std::size_t>(n_comp) * channels * 2; ++i)
                if (!std::isfinite(coeffs[base + i]))
                    throw std::invalid_argument("render_field: non-finite coefficient at rx " +
                                                std::to_string(j) + ", gaussian " +
                                                std::to_string(k));
        }

    std::vector<cplx> signals(static_cast<std::size_t>(state.k) * n_rx * channels, cplx{0, 0});
    for (int k = 0; k < state.k; ++k) {
        if (state.proj[static_cast<std::size_t>(k)].culled) continue;
        const cplx* basis = state.basis.data() + static_cast<std::size_t>(k) * n_comp;
        for (int j = 0; j < n_rx; ++j) {
            const std::size_t cbase =
                (static_cast<std::size_t>(j) * state.k + k) * n_comp * channels * 2;
            cplx* out = signals.data() + (static_cast<std::size_t>(k) * n_rx + j) * channels;
            for (int comp = 0; comp < n_comp; ++comp)
                for (int c = 0; c < channels; ++c) {
                    const double a = coeffs[cbase + (static_cast<std::size_t>(comp) * channels + c) * 2];
                    const double b =
                        coeffs[cbase + (static_cast<std::size_t>(comp) * channels + c) * 2 + 1];
                    out[c] += cplx{a, b} * basis[comp];
                }
        }
    }
    return signals;
}

struct TileBounds {
    int row0, row1, col0, col1;  // half-open cell ranges
};

TileBounds tile_bounds(const SphericalGrid& grid, int tile_index) {
    const int tiles_p = grid.tiles_phi();
    const int tt = tile_index / tiles_p, tp = tile_index % tiles_p;
    return {tt * grid.tile_size, std::min((tt + 1) * grid.tile_size, grid.n_theta),
            tp * grid.tile_size, std::min((tp + 1) * grid.tile_size, grid.n_phi)};
}

inline double gaussian_weight(const ProjectedGaussian& pg, double theta_r, double phi_r,
                              double* m2_out = nullptr, double* dt_out = nullptr,
                              double* dpraw_out = nullptr) {
    const double dt = theta_r - pg.theta;
    const double dpraw = wrap_pm_pi(phi_r - pg.phi);
    const double dp = std::sin(pg.theta) * dpraw;
    const Mat2& p = pg.angular_prec;
    const double m2 = p.a * dt * dt + (p.b + p.c) * dt * dp + p.d * dp * dp;
    if (m2_out) *m2_out = m2;
    if (dt_out) *dt_out = dt;
    if (dpraw_out) *dpraw_out = dpraw;
    return pg.weight_scale * std::exp(-0.5 * m2);
}

}  // namespace

RenderedField render_field(const TxState& state, const GaussianScene& scene,
                           const std::vector<double>& coeffs, int n_rx, int threads) {
    if (n_rx < 1) throw std::invalid_argument("render_field: n_rx must be >= 1");
    const SphericalGrid& grid = state.grid;
    const int channels = scene.channels;

    RenderedField field;
    field.n_rx = n_rx;
    field.channels = channels;
    field.h = grid.n_theta;
    field.w = grid.n_phi;
    const std::size_t plane = field.plane();
    field.values.assign(static_cast<std::size_t>(n_rx) * channels * 2 * plane, 0.0);
    field.transmittance.assign(static_cast<std::size_t>(n_rx) * plane, 1.0);

    const std::vector<cplx> signals = reduce_signals(state, scene, coeffs, n_rx);
    const std::size_t n_tiles = state.tile_lists.size();

    parallel_chunks(n_tiles, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        std::vector<cplx> accum(static_cast<std::size_t>(n_rx) * channels);
        for (std::size_t tile = begin; tile < end; ++tile) {
            const auto& list = state.tile_lists[tile];
            const TileBounds tb = tile_bounds(grid, static_cast<int>(tile));
            for (int row = tb.row0; row < tb.row1; ++row) {
                const double theta_r = grid.theta_at(row);
                for (int col = tb.col0; col < tb.col1; ++col) {
                    const double phi_r = grid.phi_at(col);
                    const std::size_t cell = static_cast<std::size_t>(row) * grid.n_phi + col;
                    std::fill(accum.begin(), accum.end(), cplx{0, 0});
                    double transmittance = 1.0;
                    for (const int k : list) {
                        const auto& pg = state.proj[static_cast<std::size_t>(k)];
                        const double w =
                            std::min(gaussian_weight(pg, theta_r, phi_r), kWeightClamp);
                        const cplx* s =
                            signals.data() + (static_cast<std::size_t>(k) * n_rx) * channels;
                        const double tw = transmittance * w;
                        for (int j = 0; j < n_rx; ++j)
                            for (int c = 0; c < channels; ++c)
                                accum[static_cast<std::size_t>(j) * channels + c] +=
                                    tw * s[static_cast<std::size_t>(j) * channels + c];
                        transmittance *= 1.0 - w;
                        if (transmittance < kEarlyExitT) break;
                    }
                    for (int j = 0; j < n_rx; ++j) {
                        for (int c = 0; c < channels; ++c) {
                            const cplx v = accum[static_cast<std::size_t>(j) * channels + c];
                            const std::size_t base =
                                ((static_cast<std::size_t>(j) * channels + c) * 2) * plane;
                            field.values[base + cell] = v.real();
                            field.values[base + plane + cell] = v.imag();
                        }
                        field.transmittance[static_cast<std::size_t>(j) * plane + cell] =
                            transmittance;
                    }
                }
            }
        }
    });
    return field;
}

RenderedField render_field(const GaussianScene& scene, const Vec3& tx, const SphericalGrid& grid,
                           const std::vector<double>& coeffs, int n_rx, int threads) {
    const TxState state = build_tx_state(scene, tx, grid);
    return render_field(state, scene, coeffs, n_rx, threads);
}

std::vector<Measurement> aggregate_modality(const RenderedField& field, Modality modality,
                                            const SphericalGrid& grid) {
    for (const double v : field.values)
        if (!std::isfinite(v)) throw std::invalid_argument("aggregate_modality: non-finite field");
    if (modality != Modality::Csi && field.channels != 1)
        throw std::invalid_argument("aggregate_modality: scalar modalities need channels == 1");

    const std::size_t plane = field.plane();
    std::vector<Measurement> out(static_cast<std::size_t>(field.n_rx));
    for (int j = 0; j < field.n_rx; ++j) {
        Measurement& m = out[static_cast<std::size_t>(j)];
        m.modality = modality;
        switch (modality) {
            case Modality::Rssi: {
                const std::size_t base = (static_cast<std::size_t>(j) * 2) * plane;
                double power = 0.0;
                for (int row = 0; row < field.h; ++row) {
                    const double dom = grid.solid_angle(row);
                    for (int col = 0; col < field.w; ++col) {
                        const std::size_t cell = static_cast<std::size_t>(row) * field.w + col;
                        const double re = field.values[base + cell];
                        const double im = field.values[base + plane + cell];
                        power += (re * re + im * im) * dom;
                    }
                }
                m.scalar = 10.0 * std::log10(power + sim::kRssiFloor);
                break;
            }
            case Modality::Csi: {
                m.csi.assign(static_cast<std::size_t>(field.channels), cplx{0, 0});
                for (int c = 0; c < field.channels; ++c) {
                    const std::size_t base =
                        ((static_cast<std::size_t>(j) * field.channels + c) * 2) * plane;
                    for (int row = 0; row < field.h; ++row) {
                        const double dom = grid.solid_angle(row);
                        for (int col = 0; col < field.w; ++col) {
                            const std::size_t cell = static_cast<std::size_t>(row) * field.w + col;
                            m.csi[static_cast<std::size_t>(c)] +=
                                cplx{field.values[base + cell], field.values[base + plane + cell]} *
                                dom;
                        }
                    }
                }
                break;
            }
            case Modality::Spectrum: {
                const std::size_t base = (static_cast<std::size_t>(j) * 2) * plane;
                m.image.resize(plane);
                for (std::size_t cell = 0; cell < plane; ++cell) {
                    const double re = field.values[base + cell];
                    const double im = field.values[base + plane + cell];
                    m.image[cell] = std::sqrt(re * re + im * im + fle::kAmplitudeEps);
                }
                break;
            }
        }
    }
    return out;
}

std::vector<double> aggregate_modality_backward(const RenderedField& field, Modality modality,
                                                const SphericalGrid& grid,
                                                const std::vector<Measurement>& upstream) {
    if (upstream.size() != static_cast<std::size_t>(field.n_rx))
        throw std::invalid_argument("aggregate_modality_backward: upstream size mismatch");
    const std::size_t plane = field.plane();
    std::vector<double> d_values(field.values.size(), 0.0);

    for (int j = 0; j < field.n_rx; ++j) {
        const Measurement& up = upstream[static_cast<std::size_t>(j)];
        switch (modality) {
            case Modality::Rssi: {
                const std::size_t base = (static_cast<std::size_t>(j) * 2) * plane;
                double power = 0.0;
                for (int row = 0; row < field.h; ++row) {
                    const double dom = grid.solid_angle(row);
                    for (int col = 0; col < field.w; ++col) {
                        const std::size_t cell = static_cast<std::size_t>(row) * field.w + col;
                        const double re = field.values[base + cell];
                        const double im = field.values[base + plane + cell];
                        power += (re * re + im * im) * dom;
                    }
                }
                const double d_power =
                    up.scalar * 10.0 / (std::log(10.0) * (power + sim::kRssiFloor));
                for (int row = 0; row < field.h; ++row) {
                    const double dom = grid.solid_angle(row);
                    for (int col = 0; col < field.w; ++col) {
                        const std::size_t cell = static_cast<std::size_t>(row) * field.w + col;
                        d_values[base + cell] += d_power * 2.0 * field.values[base + cell] * dom;
                        d_values[base + plane + cell] +=
                            d_power * 2.0 * field.values[base + plane + cell] * dom;
                    }
                }
                break;
            }
            case Modality::Csi: {
                for (int c = 0; c < field.channels; ++c) {
                    const std::size_t base =
                        ((static_cast<std::size_t>(j) * field.channels + c) * 2) * plane;
                    const cplx g = up.csi[static_cast<std::size_t>(c)];
                    for (int row = 0; row < field.h; ++row) {
                        const double dom = grid.solid_angle(row);
                        for (int col = 0; col < field.w; ++col) {
                            const std::size_t cell = static_cast<std::size_t>(row) * field.w + col;
                            d_values[base + cell] += g.real() * dom;
                            d_values[base + plane + cell] += g.imag() * dom;
                        }
                    }
                }
                break;
            }
            case Modality::Spectrum: {
                const std::size_t base = (static_cast<std::size_t>(j) * 2) * plane;
                for (std::size_t cell = 0; cell < plane; ++cell) {
                    const double re = field.values[base + cell];
                    const double im = field.values[base + plane + cell];
                    const double amp = std::sqrt(re * re + im * im + fle::kAmplitudeEps);
                    d_values[base + cell] += up.image[cell] * re / amp;
                    d_values[base + plane + cell] += up.image[cell] * im / amp;
                }
                break;
            }
        }
    }
    return d_values;
}

void GradientBundle::resize(int k, int n_rx, std::size_t coeff_stride) {
    d_positions.assign(static_cast<std::size_t>(k) * 3, 0.0);
    d_log_scales.assign(static_cast<std::size_t>(k) * 3, 0.0);
    d_quaternions.assign(static_cast<std::size_t>(k) * 4, 0.0);
    d_tau_logits.assign(static_cast<std::size_t>(k), 0.0);
    d_coeffs.assign(static_cast<std::size_t>(n_rx) * k * coeff_stride, 0.0);
}

void GradientBundle::add(const GradientBundle& other) {
    auto axpy = [](std::vector<double>& dst, const std::vector<double>& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    };
    axpy(d_positions, other.d_positions);
    axpy(d_log_scales, other.d_log_scales);
    axpy(d_quaternions, other.d_quaternions);
    axpy(d_tau_logits, other.d_tau_logits);
    axpy(d_coeffs, other.d_coeffs);
}

namespace {

// Blend-level gradients accumulated per Gaussian before the per-Gaussian
// geometry chain runs. Everything downstream of these is linear, so raw
// sums can be merged across tile chunks and finalized once.
struct RawGrads {
    std::vector<double> d_prec;     // K x 4 (gradient w.r.t. angular precision)
    std::vector<double> d_theta;    // K
    std::vector<double> d_phi;      // K
    std::vector<double> d_tau_act;  // K (w.r.t. activated tau)
    std::vector<double> d_signals;  // (k * N + j) * C * 2

    void resize(int k, int n_rx, int channels) {
        d_prec.assign(static_cast<std::size_t>(k) * 4, 0.0);
        d_theta.assign(static_cast<std::size_t>(k), 0.0);
        d_phi.assign(static_cast<std::size_t>(k), 0.0);
        d_tau_act.assign(static_cast<std::size_t>(k), 0.0);
        d_signals.assign(static_cast<std::size_t>(k) * n_rx * channels * 2, 0.0);
    }
    void add(const RawGrads& other) {
        auto axpy = [](std::vector<double>& dst, const std::vector<double>& src) {
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        };
        axpy(d_prec, other.d_prec);
        axpy(d_theta, other.d_theta);
        axpy(d_phi, other.d_phi);
        axpy(d_tau_act, other.d_tau_act);
        axpy(d_signals, other.d_signals);
    }
};

struct BlendEntry {
    int k;
    double w, t_prev, g, dt, dpraw;
    bool clamped;
};

}  // namespace

GradientBundle backward_render(const TxState& state, const GaussianScene& scene,
                               const std::vector<double>& coeffs, int n_rx,
                               const std::vector<double>& d_values, int threads) {
    const SphericalGrid& grid = state.grid;
    const int channels = scene.channels;
    const int n_comp = scene.n_components();
    const std::size_t plane = static_cast<std::size_t>(grid.n_theta) * grid.n_phi;
    if (d_values.size() != static_cast<std::size_t>(n_rx) * channels * 2 * plane)
        throw std::invalid_argument("backward_render: d_values size mismatch");

    const std::vector<cplx> signals = reduce_signals(state, scene, coeffs, n_rx);
    const std::size_t n_tiles = state.tile_lists.size();

    const std::size_t n_chunks =
        threads <= 1 ? 1 : std::min<std::size_t>(static_cast<std::size_t>(threads), n_tiles);
    std::vector<RawGrads> chunk_grads(std::max<std::size_t>(n_chunks, 1));
    for (auto& g : chunk_grads) g.resize(state.k, n_rx, channels);

    parallel_chunks(n_tiles, threads, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
        RawGrads& raw = chunk_grads[chunk];
        std::vector<BlendEntry> walk;
        std::vector<cplx> suffix(static_cast<std::size_t>(n_rx) * channels);
        for (std::size_t tile = begin; tile < end; ++tile) {
            const auto& list = state.tile_lists[tile];
            if (list.empty()) continue;
            const TileBounds tb = tile_bounds(grid, static_cast<int>(tile));
            for (int row = tb.row0; row < tb.row1; ++row) {
                const double theta_r = grid.theta_at(row);
                for (int col = tb.col0; col < tb.col1; ++col) {
                    const double phi_r = grid.phi_at(col);
                    const std::size_t cell = static_cast<std::size_t>(row) * grid.n_phi + col;

                    // Recompute the forward walk with the identical early exit.
                    walk.clear();
                    double transmittance = 1.0;
                    for (const int k : list) {
                        const auto& pg = state.proj[static_cast<std::size_t>(k)];
                        double m2, dt, dpraw;
                        const double w_raw = gaussian_weight(pg, theta_r, phi_r, &m2, &dt, &dpraw);
                        const bool clamped = w_raw > kWeightClamp;
                        const double w = clamped ? kWeightClamp : w_raw;
                        walk.push_back({k, w, transmittance,
                                        pg.weight_scale > 0.0 ? w_raw / pg.weight_scale : 0.0, dt,
                                        dpraw, clamped});
                        transmittance *= 1.0 - w;
                        if (transmittance < kEarlyExitT) break;
                    }
                    if (walk.empty()) continue;

                    // Reverse pass with per-(receiver, channel) suffix sums.
                    std::fill(suffix.begin(), suffix.end(), cplx{0, 0});
                    for (auto it = walk.rbegin(); it != walk.rend(); ++it) {
                        const BlendEntry& e = *it;
                        const auto& pg = state.proj[static_cast<std::size_t>(e.k)];
                        const cplx* s =
                            signals.data() + (static_cast<std::size_t>(e.k) * n_rx) * channels;
                        double dw = 0.0;
                        const double inv_rest = 1.0 / (1.0 - e.w);
                        for (int j = 0; j < n_rx; ++j)
                            for (int c = 0; c < channels; ++c) {
                                const std::size_t jc = static_cast<std::size_t>(j) * channels + c;
                                const std::size_t vbase =
                                    ((static_cast<std::size_t>(j) * channels + c) * 2) * plane;
                                const double g_re = d_values[vbase + cell];
                                const double g_im = d_values[vbase + plane + cell];
                                const cplx sv = s[jc];
                                // dC/ds = T_prev * w.
                                const std::size_t sgbase =
                                    ((static_cast<std::size_t>(e.k) * n_rx + j) * channels + c) * 2;
                                raw.d_signals[sgbase] += g_re * e.t_prev * e.w;
                                raw.d_signals[sgbase + 1] += g_im * e.t_prev * e.w;
                                // dC/dw = T_prev * s - suffix / (1 - w).
                                dw += g_re * (e.t_prev * sv.real() - suffix[jc].real() * inv_rest);
                                dw += g_im * (e.t_prev * sv.imag() - suffix[jc].imag() * inv_rest);
                                suffix[jc] += e.t_prev * e.w * sv;
                            }
                        if (e.clamped) continue;
                        raw.d_tau_act[static_cast<std::size_t>(e.k)] += dw * e.g;
                        const double dg = dw * pg.weight_scale;
                        const double dm2 = dg * (-0.5) * e.g;
                        const double st = std::sin(pg.theta), ct = std::cos(pg.theta);
                        const double dp = st * e.dpraw;
                        const Mat2& p = pg.angular_prec;
                        raw.d_prec[static_cast<std::size_t>(e.k) * 4 + 0] += dm2 * e.dt * e.dt;
                        raw.d_prec[static_cast<std::size_t>(e.k) * 4 + 1] += dm2 * e.dt * dp;
                        raw.d_prec[static_cast<std::size_t>(e.k) * 4 + 2] += dm2 * e.dt * dp;
                        raw.d_prec[static_cast<std::size_t>(e.k) * 4 + 3] += dm2 * dp * dp;
                        const double d_dt = dm2 * (2.0 * p.a * e.dt + (p.b + p.c) * dp);
                        const double d_dp = dm2 * ((p.b + p.c) * e.dt + 2.0 * p.d * dp);
                        // dt = theta_r - theta_k; dp = sin(theta_k) * dpraw.
                        raw.d_theta[static_cast<std::size_t>(e.k)] +=
                            -d_dt + d_dp * ct * e.dpraw;
                        raw.d_phi[static_cast<std::size_t>(e.k)] += -d_dp * st;
                    }
                }
            }
        }
    });

    RawGrads total = std::move(chunk_grads[0]);
    for (std::size_t i = 1; i < chunk_grads.size(); ++i) total.add(chunk_grads[i]);

    // Per-Gaussian finalization: everything here is linear in the raw sums.
    GradientBundle out;
    out.resize(state.k, n_rx, scene.coeff_stride());

    for (int k = 0; k < state.k; ++k) {
        const auto& pg = state.proj[static_cast<std::size_t>(k)];
        if (pg.culled) continue;

        // Coefficient and basis gradients from the signal adjoints.
        const cplx* basis = state.basis.data() + static_cast<std::size_t>(k) * n_comp;
        const fle::BasisJet jet = fle::eval_basis_jet(pg.theta, pg.phi, scene.l_max);
        double d_theta = total.d_theta[static_cast<std::size_t>(k)];
        double d_phi = total.d_phi[static_cast<std::size_t>(k)];
        for (int j = 0; j < n_rx; ++j)
            for (int c = 0; c < channels; ++c) {
                const std::size_t sgbase =
                    ((static_cast<std::size_t>(k) * n_rx + j) * channels + c) * 2;
                const double ds_re = total.d_signals[sgbase];
                const double ds_im = total.d_signals[sgbase + 1];
                if (ds_re == 0.0 && ds_im == 0.0) continue;
                const std::size_t cbase =
                    ((static_cast<std::size_t>(j) * state.k + k) * n_comp) * channels * 2;
                for (int comp = 0; comp < n_comp; ++comp) {
                    const std::size_t ci = cbase + (static_cast<std::size_t>(comp) * channels + c) * 2;
                    const cplx b = basis[comp];
                    out.d_coeffs[ci] += ds_re * b.real() + ds_im * b.imag();
                    out.d_coeffs[ci + 1] += -ds_re * b.imag() + ds_im * b.real();
                    // Basis direction gradients feed the center angles.
                    const double a_co = coeffs[ci], b_co = coeffs[ci + 1];
                    const double db_re = ds_re * a_co + ds_im * b_co;
                    const double db_im = -ds_re * b_co + ds_im * a_co;
                    d_theta += db_re * jet.db_dtheta[static_cast<std::size_t>(comp)].real() +
                               db_im * jet.db_dtheta[static_cast<std::size_t>(comp)].imag();
                    d_phi += db_re * jet.db_dphi[static_cast<std::size_t>(comp)].real() +
                             db_im * jet.db_dphi[static_cast<std::size_t>(comp)].imag();
                }
            }

        // Precision -> covariance: dA = -P dP P.
        const Mat2& prec = pg.angular_prec;
        const Mat2 dp_mat{total.d_prec[static_cast<std::size_t>(k) * 4 + 0],
                          total.d_prec[static_cast<std::size_t>(k) * 4 + 1],
                          total.d_prec[static_cast<std::size_t>(k) * 4 + 2],
                          total.d_prec[static_cast<std::size_t>(k) * 4 + 3]};
        auto mul2 = [](const Mat2& x, const Mat2& y) {
            return Mat2{x.a * y.a + x.b * y.c, x.a * y.b + x.b * y.d, x.c * y.a + x.d * y.c,
                        x.c * y.b + x.d * y.d};
        };
        const Mat2 d_acov = mul2(mul2(prec, dp_mat), prec) * -1.0;

        // A = B^T (Sigma / d^2) B in the tangent frame.
        const double st = std::sin(pg.theta), ct = std::cos(pg.theta);
        const double sp = std::sin(pg.phi), cp = std::cos(pg.phi);
        const Vec3 e_theta{ct * cp, ct * sp, -st};
        const Vec3 e_phi{-sp, cp, 0.0};
        const Vec3 u_hat{st * cp, st * sp, ct};
        const double inv_d2 = 1.0 / (pg.depth * pg.depth);

        Mat3 d_sigma = Mat3::zero();
        const Vec3 frame[2] = {e_theta, e_phi};
        const double da[2][2] = {{d_acov.a, d_acov.b}, {d_acov.c, d_acov.d}};
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
                for (int r = 0; r < 3; ++r)
                    for (int cidx = 0; cidx < 3; ++cidx)
                        d_sigma(r, cidx) += da[a][b] * frame[a][r] * frame[b][cidx] * inv_d2;

        // Depth gradient: dA/dd = -2 A / d.
        const double acov[2][2] = {{pg.angular_cov.a, pg.angular_cov.b},
                                   {pg.angular_cov.c, pg.angular_cov.d}};
        double d_depth = 0.0;
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) d_depth += da[a][b] * acov[a][b] * (-2.0 / pg.depth);

        // Frame dependence on the center angles.
        const Mat3 cov3 = scene.covariance(k);
        const Vec3 g_vec{cp, sp, 0.0};  // sin(theta) u_hat + cos(theta) e_theta
        const Vec3 dframe_dtheta[2] = {u_hat * -1.0, Vec3{0, 0, 0}};
        const Vec3 dframe_dphi[2] = {e_phi * ct, g_vec * -1.0};
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
                const double cb_a = (cov3 * frame[b]).dot(dframe_dtheta[a]) * inv_d2;
                const double cb_b = (cov3 * dframe_dtheta[b]).dot(frame[a]) * inv_d2;
                d_theta += da[a][b] * (cb_a + cb_b);
                const double pb_a = (cov3 * frame[b]).dot(dframe_dphi[a]) * inv_d2;
                const double pb_b = (cov3 * dframe_dphi[b]).dot(frame[a]) * inv_d2;
                d_phi += da[a][b] * (pb_a + pb_b);
            }

        // Center angles and depth back to the position, reconstructing
        // u = p - t from the cached spherical coordinates.
        const double d = pg.depth;
        const double ux = st * cp * d, uy = st * sp * d, uz = ct * d;
        const double rho = std::sqrt(ux * ux + uy * uy);
        Vec3 d_pos{0, 0, 0};
        if (rho > 1e-300) {
            const Vec3 grad_theta{uz * ux / (rho * d * d), uz * uy / (rho * d * d),
                                  -rho / (d * d)};
            const Vec3 grad_phi{-uy / (rho * rho), ux / (rho * rho), 0.0};
            d_pos += grad_theta * d_theta + grad_phi * d_phi;
        }
        d_pos += u_hat * d_depth;

        out.d_positions[static_cast<std::size_t>(k) * 3 + 0] += d_pos.x;
        out.d_positions[static_cast<std::size_t>(k) * 3 + 1] += d_pos.y;
        out.d_positions[static_cast<std::size_t>(k) * 3 + 2] += d_pos.z;

        // Covariance to log-scale / quaternion.
        const CovarianceGrad cg = covariance_from_backward(
            {scene.log_scales[3 * k], scene.log_scales[3 * k + 1], scene.log_scales[3 * k + 2]},
            scene.quaternion(k), d_sigma);
        for (int a = 0; a < 3; ++a)
            out.d_log_scales[static_cast<std::size_t>(k) * 3 + a] += cg.d_log_scale[a];
        for (int a = 0; a < 4; ++a)
            out.d_quaternions[static_cast<std::size_t>(k) * 4 + a] += cg.d_quaternion[a];

        // Activated tau to its logit.
        const double tau = pg.weight_scale;
        out.d_tau_logits[static_cast<std::size_t>(k)] +=
            total.d_tau_act[static_cast<std::size_t>(k)] * tau * (1.0 - tau);
    }
    return out;
}

}  // namespace rxgs::raster
