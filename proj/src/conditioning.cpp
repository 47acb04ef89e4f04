// SPDX-License-Identifier: Apache-2.0
#include "rxgs/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rxgs/rng.hpp"

namespace rxgs::cond {

void MlpLayer::forward(const double* x, double* y) const {
    for (int o = 0; o < out; ++o) {
        double acc = b[static_cast<std::size_t>(o)];
        const double* row = w.data() + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
}

namespace {

void mlp_forward(const Mlp& mlp, const double* x, double* h1, double* h2, double* y) {
    mlp.l1.forward(x, h1);
    for (int i = 0; i < mlp.l1.out; ++i) h1[i] = std::max(0.0, h1[i]);
    mlp.l2.forward(h1, h2);
    for (int i = 0; i < mlp.l2.out; ++i) h2[i] = std::max(0.0, h2[i]);
    mlp.l3.forward(h2, y);
}

// Adjoint through the three layers. d_input may be null when the inputs are
// data rather than parameters.
void mlp_backward(const Mlp& mlp, const double* x, const double* h1, const double* h2,
                  const double* dy, MlpGrads& g, double* d_input) {
    std::vector<double> dh2(static_cast<std::size_t>(mlp.l2.out), 0.0);
    for (int o = 0; o < mlp.l3.out; ++o) {
        g.b3[static_cast<std::size_t>(o)] += dy[o];
        double* wrow = g.w3.data() + static_cast<std::size_t>(o) * mlp.l3.in;
        const double* w = mlp.l3.w.data() + static_cast<std::size_t>(o) * mlp.l3.in;
        for (int i = 0; i < mlp.l3.in; ++i) {
            wrow[i] += dy[o] * h2[i];
            dh2[static_cast<std::size_t>(i)] += w[i] * dy[o];
        }
    }
    for (int i = 0; i < mlp.l2.out; ++i)
        if (h2[i] <= 0.0) dh2[static_cast<std::size_t>(i)] = 0.0;

    std::vector<double> dh1(static_cast<std::size_t>(mlp.l1.out), 0.0);
    for (int o = 0; o < mlp.l2.out; ++o) {
        g.b2[static_cast<std::size_t>(o)] += dh2[static_cast<std::size_t>(o)];
        double* wrow = g.w2.data() + static_cast<std::size_t>(o) * mlp.l2.in;
        const double* w = mlp.l2.w.data() + static_cast<std::size_t>(o) * mlp.l2.in;
        for (int i = 0; i < mlp.l2.in; ++i) {
            wrow[i] += dh2[static_cast<std::size_t>(o)] * h1[i];
            dh1[static_cast<std::size_t>(i)] += w[i] * dh2[static_cast<std::size_t>(o)];
        }
    }
    for (int i = 0; i < mlp.l1.out; ++i)
        if (h1[i] <= 0.0) dh1[static_cast<std::size_t>(i)] = 0.0;

    for (int o = 0; o < mlp.l1.out; ++o) {
        g.b1[static_cast<std::size_t>(o)] += dh1[static_cast<std::size_t>(o)];
        double* wrow = g.w1.data() + static_cast<std::size_t>(o) * mlp.l1.in;
        const double* w = mlp.l1.w.data() + static_cast<std::size_t>(o) * mlp.l1.in;
        for (int i = 0; i < mlp.l1.in; ++i) {
            wrow[i] += dh1[static_cast<std::size_t>(o)] * x[i];
            if (d_input) d_input[i] += w[i] * dh1[static_cast<std::size_t>(o)];
        }
    }
}

}  // namespace

double OccupancyGrid::sample_trilinear(const Vec3& p) const {
    if (empty()) return 0.0;
    const int r = resolution;
    const Vec3 ext = bounds.extent();
    double u[3], f[3];
    int i0[3];
    for (int a = 0; a < 3; ++a) {
        const double cell = ext[a] / r;
        u[a] = (p[a] - bounds.lo[a]) / cell - 0.5;
        i0[a] = static_cast<int>(std::floor(u[a]));
        f[a] = u[a] - i0[a];
    }
    double acc = 0.0;
    for (int dx = 0; dx < 2; ++dx)
        for (int dy = 0; dy < 2; ++dy)
            for (int dz = 0; dz < 2; ++dz) {
                const int ix = i0[0] + dx, iy = i0[1] + dy, iz = i0[2] + dz;
                if (ix < 0 || iy < 0 || iz < 0 || ix >= r || iy >= r || iz >= r) continue;
                const double wgt = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) *
                                   (dz ? f[2] : 1 - f[2]);
                acc += wgt *
                       densities[(static_cast<std::size_t>(ix) * r + iy) * r + iz];
            }
    return acc;
}

double OccupancyGrid::sample_nearest(const Vec3& p) const {
    if (empty()) return 0.0;
    const int r = resolution;
    const Vec3 ext = bounds.extent();
    int idx[3];
    for (int a = 0; a < 3; ++a) {
        const double cell = ext[a] / r;
        const int i = static_cast<int>(std::floor((p[a] - bounds.lo[a]) / cell));
        if (i < 0 || i >= r) return 0.0;
        idx[a] = i;
    }
    return densities[(static_cast<std::size_t>(idx[0]) * r + idx[1]) * r + idx[2]];
}

OccupancyGrid build_occupancy(const GaussianScene& scene, int resolution, const Aabb& bounds) {
    if (resolution < 1) throw std::invalid_argument("build_occupancy: resolution must be >= 1");
    const Vec3 ext = bounds.extent();
    if (!(ext.x > 0 && ext.y > 0 && ext.z > 0))
        throw std::invalid_argument("build_occupancy: degenerate bounds");

    OccupancyGrid grid;
    grid.resolution = resolution;
    grid.bounds = bounds;
    grid.densities.assign(static_cast<std::size_t>(resolution) * resolution * resolution, 0.0);

    const double cell[3] = {ext.x / resolution, ext.y / resolution, ext.z / resolution};
    for (int k = 0; k < scene.count(); ++k) {
        const Vec3 p = scene.position(k);
        const Mat3 sigma = scene.covariance(k);
        const Mat3 prec = sigma.inverse();
        const double tau = scene.tau(k);
        // 2-sigma axis-aligned support.
        int lo[3], hi[3];
        for (int a = 0; a < 3; ++a) {
            const double half = 2.0 * std::sqrt(sigma(a, a));
            lo[a] = std::max(0, static_cast<int>(
                                    std::floor((p[a] - half - bounds.lo[a]) / cell[a] - 0.5)));
            hi[a] = std::min(resolution - 1,
                             static_cast<int>(
                                 std::ceil((p[a] + half - bounds.lo[a]) / cell[a] - 0.5)));
        }
        for (int ix = lo[0]; ix <= hi[0]; ++ix)
            for (int iy = lo[1]; iy <= hi[1]; ++iy)
                for (int iz = lo[2]; iz <= hi[2]; ++iz) {
                    const Vec3 center{bounds.lo.x + (ix + 0.5) * cell[0],
                                      bounds.lo.y + (iy + 0.5) * cell[1],
                                      bounds.lo.z + (iz + 0.5) * cell[2]};
                    const Vec3 d = center - p;
                    const Vec3 pd = prec * d;
                    const double m2 = d.dot(pd);
                    if (m2 > 4.0) continue;
                    const double v = tau * std::exp(-0.5 * m2);
                    double& slot =
                        grid.densities[(static_cast<std::size_t>(ix) * resolution + iy) *
                                           resolution +
                                       iz];
                    slot = std::max(slot, v);
                }
    }
    for (double& v : grid.densities) v = std::clamp(v, 0.0, 1.0);
    return grid;
}

ProbeResult probe_segment(const OccupancyGrid& grid, const Vec3& from, const Vec3& to,
                          int samples, bool nearest_lookup) {
    if (samples < 1) throw std::invalid_argument("probe_segment: samples must be >= 1");
    ProbeResult out;
    double sum = 0.0;
    for (int s = 0; s < samples; ++s) {
        const double t =
            samples == 1 ? 0.5 : 0.05 + 0.9 * static_cast<double>(s) / (samples - 1);
        const Vec3 q = from + t * (to - from);
        const double v = nearest_lookup ? grid.sample_nearest(q) : grid.sample_trilinear(q);
        out.transmittance *= 1.0 - v;
        sum += v;
    }
    out.mean_density = sum / samples;
    return out;
}

const char* conditioning_mode_name(ConditioningMode m) {
    switch (m) {
        case ConditioningMode::Full: return "full";
        case ConditioningMode::GlobalOnly: return "global_only";
        case ConditioningMode::LocalOnly: return "local_only";
        case ConditioningMode::AdditiveOnly: return "additive_only";
        case ConditioningMode::NoOcclusion: return "no_occlusion";
    }
    return "?";
}

ConditioningMode conditioning_mode_from_name(const std::string& name) {
    if (name == "full") return ConditioningMode::Full;
    if (name == "global_only") return ConditioningMode::GlobalOnly;
    if (name == "local_only") return ConditioningMode::LocalOnly;
    if (name == "additive_only") return ConditioningMode::AdditiveOnly;
    if (name == "no_occlusion") return ConditioningMode::NoOcclusion;
    throw std::invalid_argument("unknown conditioning mode '" + name + "'");
}

namespace {

MlpLayer make_layer(int in, int out, Rng& rng, bool zero) {
    MlpLayer layer;
    layer.in = in;
    layer.out = out;
    layer.w.assign(static_cast<std::size_t>(in) * out, 0.0);
    layer.b.assign(static_cast<std::size_t>(out), 0.0);
    if (!zero) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(in));
        for (auto& w : layer.w) w = rng.uniform(-scale, scale);
    }
    return layer;
}

}  // namespace

ConditioningState init_conditioning(const ConditioningConfig& config, int l_max, int channels,
                                    const Aabb& scene_bounds, uint64_t seed) {
    if (config.fourier_bands < 1 || config.hidden < 1 || config.embed_dim < 1)
        throw std::invalid_argument("init_conditioning: bad dimensions");
    ConditioningState state;
    state.config = config;
    state.l_max = l_max;
    state.channels = channels;

    const int f = config.fourier_bands;
    state.fourier_freqs.resize(static_cast<std::size_t>(f) * 3);
    const Vec3 ext = scene_bounds.extent();
    for (int band = 0; band < f; ++band)
        for (int a = 0; a < 3; ++a) {
            const double extent = ext[a] > 0.0 ? ext[a] : 1.0;
            state.fourier_freqs[static_cast<std::size_t>(band) * 3 + a] =
                std::pow(2.0, band) * kTwoPi / extent;
        }

    const int gin = 6 * f + 2 + config.embed_dim;
    Rng g1 = derive_stream(seed, "cond.global.w1");
    Rng g2 = derive_stream(seed, "cond.global.w2");
    Rng l1 = derive_stream(seed, "cond.local.w1");
    Rng l2 = derive_stream(seed, "cond.local.w2");
    state.global_mlp.l1 = make_layer(gin, config.hidden, g1, false);
    state.global_mlp.l2 = make_layer(config.hidden, config.hidden, g2, false);
    state.global_mlp.l3 = make_layer(config.hidden, 4 * channels, g1, true);
    state.local_mlp.l1 = make_layer(6, config.hidden, l1, false);
    state.local_mlp.l2 = make_layer(config.hidden, config.hidden, l2, false);
    state.local_mlp.l3 = make_layer(config.hidden, 4 * channels, l1, true);

    Rng er = derive_stream(seed, "cond.embed");
    state.component_embed.resize(static_cast<std::size_t>(fle::component_count(l_max)) *
                                 config.embed_dim);
    for (auto& e : state.component_embed) e = 0.1 * er.normal();
    return state;
}

std::vector<double> fourier_encode(const Vec3& r, const std::vector<double>& freqs) {
    const int f = static_cast<int>(freqs.size() / 3);
    std::vector<double> out(static_cast<std::size_t>(6) * f);
    for (int a = 0; a < 3; ++a)
        for (int band = 0; band < f; ++band) {
            const double arg = freqs[static_cast<std::size_t>(band) * 3 + a] * r[a];
            out[(static_cast<std::size_t>(a) * f + band) * 2] = std::sin(arg);
            out[(static_cast<std::size_t>(a) * f + band) * 2 + 1] = std::cos(arg);
        }
    return out;
}

namespace {

// out = (1 + alpha) * z + beta, written as z + (alpha * z + beta) so a
// zero-initialized branch reproduces the input bit for bit.
inline void affine_apply(double zr, double zi, double ar, double ai, double br, double bi,
                         double& or_, double& oi_) {
    or_ = zr + (ar * zr - ai * zi + br);
    oi_ = zi + (ai * zr + ar * zi + bi);
}

struct BranchSlices {
    // Per-call scratch for one MLP evaluation.
    std::vector<double> in, h1, h2, out;
};

}  // namespace

std::vector<double> condition_forward(const ConditioningState& state,
                                      const std::vector<double>& base,
                                      const GaussianScene& scene, const Vec3& rx,
                                      ConditionWorkspace* ws) {
    const int k = scene.count();
    const int n_comp = state.n_components();
    const int channels = state.channels;
    const std::size_t stride = state.coeff_stride();
    if (base.size() != static_cast<std::size_t>(k) * stride)
        throw std::invalid_argument("condition_forward: base coefficient size mismatch");
    if (scene.l_max != state.l_max || scene.channels != channels)
        throw std::invalid_argument("condition_forward: scene/state shape mismatch");

    const ConditioningMode mode = state.config.mode;
    const bool use_global = mode != ConditioningMode::LocalOnly;
    const bool use_local = mode != ConditioningMode::GlobalOnly;
    const bool additive = mode == ConditioningMode::AdditiveOnly;
    const int hidden = state.config.hidden;
    const int gin = state.global_mlp.l1.in;

    if (ws) {
        ws->rx = rx;
        ws->global_in.assign(static_cast<std::size_t>(n_comp) * gin, 0.0);
        ws->global_h1.assign(static_cast<std::size_t>(n_comp) * hidden, 0.0);
        ws->global_h2.assign(static_cast<std::size_t>(n_comp) * hidden, 0.0);
        ws->global_out.assign(static_cast<std::size_t>(n_comp) * 4 * channels, 0.0);
        ws->local_in.assign(static_cast<std::size_t>(k) * 6, 0.0);
        ws->local_h1.assign(static_cast<std::size_t>(k) * hidden, 0.0);
        ws->local_h2.assign(static_cast<std::size_t>(k) * hidden, 0.0);
        ws->local_out.assign(static_cast<std::size_t>(k) * 4 * channels, 0.0);
    }

    std::vector<double> mid;
    if (use_global) {
        const std::vector<double> gamma = fourier_encode(rx, state.fourier_freqs);
        if (ws) ws->gamma = gamma;
        mid.resize(base.size());
        BranchSlices s;
        s.in.resize(static_cast<std::size_t>(gin));
        s.h1.resize(static_cast<std::size_t>(hidden));
        s.h2.resize(static_cast<std::size_t>(hidden));
        s.out.resize(static_cast<std::size_t>(4) * channels);
        for (int comp = 0; comp < n_comp; ++comp) {
            std::copy(gamma.begin(), gamma.end(), s.in.begin());
            const double denom = state.l_max > 0 ? static_cast<double>(state.l_max) : 1.0;
            s.in[gamma.size()] = fle::component_degree(comp) / denom;
            s.in[gamma.size() + 1] = fle::component_order(comp) / denom;
            std::copy(state.component_embed.begin() +
                          static_cast<std::size_t>(comp) * state.config.embed_dim,
                      state.component_embed.begin() +
                          static_cast<std::size_t>(comp + 1) * state.config.embed_dim,
                      s.in.begin() + gamma.size() + 2);
            mlp_forward(state.global_mlp, s.in.data(), s.h1.data(), s.h2.data(), s.out.data());
            ++state.global_calls;
            if (ws) {
                std::copy(s.in.begin(), s.in.end(),
                          ws->global_in.begin() + static_cast<std::size_t>(comp) * gin);
                std::copy(s.h1.begin(), s.h1.end(),
                          ws->global_h1.begin() + static_cast<std::size_t>(comp) * hidden);
                std::copy(s.h2.begin(), s.h2.end(),
                          ws->global_h2.begin() + static_cast<std::size_t>(comp) * hidden);
                std::copy(s.out.begin(), s.out.end(),
                          ws->global_out.begin() + static_cast<std::size_t>(comp) * 4 * channels);
            }
            for (int c = 0; c < channels; ++c) {
                const double ar = additive ? 0.0 : s.out[static_cast<std::size_t>(4) * c];
                const double ai = additive ? 0.0 : s.out[static_cast<std::size_t>(4) * c + 1];
                const double br = s.out[static_cast<std::size_t>(4) * c + 2];
                const double bi = s.out[static_cast<std::size_t>(4) * c + 3];
                for (int kk = 0; kk < k; ++kk) {
                    const std::size_t idx =
                        (static_cast<std::size_t>(kk) * n_comp + comp) * channels * 2 +
                        static_cast<std::size_t>(c) * 2;
                    affine_apply(base[idx], base[idx + 1], ar, ai, br, bi, mid[idx],
                                 mid[idx + 1]);
                }
            }
        }
    } else {
        mid = base;
    }
    if (ws) ws->mid = mid;

    if (!use_local) return mid;

    std::vector<double> out(mid.size());
    BranchSlices s;
    s.in.resize(6);
    s.h1.resize(static_cast<std::size_t>(hidden));
    s.h2.resize(static_cast<std::size_t>(hidden));
    s.out.resize(static_cast<std::size_t>(4) * channels);
    const bool no_occ = mode == ConditioningMode::NoOcclusion;
    for (int kk = 0; kk < k; ++kk) {
        const Vec3 p = scene.position(kk);
        const Vec3 diff = rx - p;
        const double d = diff.norm();
        if (d == 0.0)
            throw std::invalid_argument("condition_forward: receiver coincides with gaussian " +
                                        std::to_string(kk));
        s.in[0] = diff.x / d;
        s.in[1] = diff.y / d;
        s.in[2] = diff.z / d;
        s.in[3] = d;
        if (no_occ || state.occupancy.empty()) {
            s.in[4] = 1.0;
            s.in[5] = 0.0;
        } else {
            const ProbeResult probe =
                probe_segment(state.occupancy, p, rx, state.config.probe_samples,
                              state.config.nearest_lookup);
            s.in[4] = probe.transmittance;
            s.in[5] = probe.mean_density;
        }
        mlp_forward(state.local_mlp, s.in.data(), s.h1.data(), s.h2.data(), s.out.data());
        ++state.local_calls;
        if (ws) {
            std::copy(s.in.begin(), s.in.end(),
                      ws->local_in.begin() + static_cast<std::size_t>(kk) * 6);
            std::copy(s.h1.begin(), s.h1.end(),
                      ws->local_h1.begin() + static_cast<std::size_t>(kk) * hidden);
            std::copy(s.h2.begin(), s.h2.end(),
                      ws->local_h2.begin() + static_cast<std::size_t>(kk) * hidden);
            std::copy(s.out.begin(), s.out.end(),
                      ws->local_out.begin() + static_cast<std::size_t>(kk) * 4 * channels);
        }
        for (int c = 0; c < channels; ++c) {
            const double ar = additive ? 0.0 : s.out[static_cast<std::size_t>(4) * c];
            const double ai = additive ? 0.0 : s.out[static_cast<std::size_t>(4) * c + 1];
            const double br = s.out[static_cast<std::size_t>(4) * c + 2];
            const double bi = s.out[static_cast<std::size_t>(4) * c + 3];
            for (int comp = 0; comp < n_comp; ++comp) {
                const std::size_t idx =
                    (static_cast<std::size_t>(kk) * n_comp + comp) * channels * 2 +
                    static_cast<std::size_t>(c) * 2;
                affine_apply(mid[idx], mid[idx + 1], ar, ai, br, bi, out[idx], out[idx + 1]);
            }
        }
    }
    return out;
}

std::vector<double> condition_batch(const ConditioningState& state,
                                    const std::vector<double>& base, const GaussianScene& scene,
                                    const std::vector<Vec3>& rx_list) {
    std::vector<double> out;
    out.reserve(rx_list.size() * base.size());
    for (const Vec3& rx : rx_list) {
        const auto row = condition_forward(state, base, scene, rx);
        out.insert(out.end(), row.begin(), row.end());
    }
    return out;
}

void MlpGrads::resize(const Mlp& mlp) {
    w1.assign(mlp.l1.w.size(), 0.0);
    b1.assign(mlp.l1.b.size(), 0.0);
    w2.assign(mlp.l2.w.size(), 0.0);
    b2.assign(mlp.l2.b.size(), 0.0);
    w3.assign(mlp.l3.w.size(), 0.0);
    b3.assign(mlp.l3.b.size(), 0.0);
}

void MlpGrads::add_scaled(const MlpGrads& other, double s) {
    auto axpy = [s](std::vector<double>& dst, const std::vector<double>& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
    };
    axpy(w1, other.w1);
    axpy(b1, other.b1);
    axpy(w2, other.w2);
    axpy(b2, other.b2);
    axpy(w3, other.w3);
    axpy(b3, other.b3);
}

void ConditioningGrads::resize(const ConditioningState& state) {
    d_freqs.assign(state.fourier_freqs.size(), 0.0);
    d_global.resize(state.global_mlp);
    d_embed.assign(state.component_embed.size(), 0.0);
    d_local.resize(state.local_mlp);
}

void ConditioningGrads::add(const ConditioningGrads& other) {
    for (std::size_t i = 0; i < d_freqs.size(); ++i) d_freqs[i] += other.d_freqs[i];
    for (std::size_t i = 0; i < d_embed.size(); ++i) d_embed[i] += other.d_embed[i];
    d_global.add_scaled(other.d_global, 1.0);
    d_local.add_scaled(other.d_local, 1.0);
}

void condition_backward(const ConditioningState& state, const ConditionWorkspace& ws,
                        const std::vector<double>& base, const std::vector<double>& d_out,
                        std::vector<double>& d_base, ConditioningGrads& grads) {
    const int k = static_cast<int>(base.size() / state.coeff_stride());
    const int n_comp = state.n_components();
    const int channels = state.channels;
    const int hidden = state.config.hidden;
    const int gin = state.global_mlp.l1.in;
    const ConditioningMode mode = state.config.mode;
    const bool use_global = mode != ConditioningMode::LocalOnly;
    const bool use_local = mode != ConditioningMode::GlobalOnly;
    const bool additive = mode == ConditioningMode::AdditiveOnly;
    if (d_out.size() != base.size())
        throw std::invalid_argument("condition_backward: gradient size mismatch");
    if (d_base.size() != base.size()) d_base.assign(base.size(), 0.0);

    // Local branch adjoint: d_out -> d_mid and local MLP gradients.
    std::vector<double> d_mid;
    if (use_local) {
        d_mid.assign(base.size(), 0.0);
        std::vector<double> dy(static_cast<std::size_t>(4) * channels);
        for (int kk = 0; kk < k; ++kk) {
            std::fill(dy.begin(), dy.end(), 0.0);
            const double* y = ws.local_out.data() + static_cast<std::size_t>(kk) * 4 * channels;
            for (int c = 0; c < channels; ++c) {
                const double ar = additive ? 0.0 : y[4 * c];
                const double ai = additive ? 0.0 : y[4 * c + 1];
                double dar = 0.0, dai = 0.0, dbr = 0.0, dbi = 0.0;
                for (int comp = 0; comp < n_comp; ++comp) {
                    const std::size_t idx =
                        (static_cast<std::size_t>(kk) * n_comp + comp) * channels * 2 +
                        static_cast<std::size_t>(c) * 2;
                    const double gr = d_out[idx], gi = d_out[idx + 1];
                    const double zr = ws.mid[idx], zi = ws.mid[idx + 1];
                    d_mid[idx] += gr * (1.0 + ar) + gi * ai;
                    d_mid[idx + 1] += -gr * ai + gi * (1.0 + ar);
                    dar += gr * zr + gi * zi;
                    dai += -gr * zi + gi * zr;
                    dbr += gr;
                    dbi += gi;
                }
                if (!additive) {
                    dy[static_cast<std::size_t>(4) * c] = dar;
                    dy[static_cast<std::size_t>(4) * c + 1] = dai;
                }
                dy[static_cast<std::size_t>(4) * c + 2] = dbr;
                dy[static_cast<std::size_t>(4) * c + 3] = dbi;
            }
            mlp_backward(state.local_mlp, ws.local_in.data() + static_cast<std::size_t>(kk) * 6,
                         ws.local_h1.data() + static_cast<std::size_t>(kk) * hidden,
                         ws.local_h2.data() + static_cast<std::size_t>(kk) * hidden, dy.data(),
                         grads.d_local, nullptr);
        }
    } else {
        d_mid = d_out;
    }

    // Global branch adjoint: d_mid -> d_base, MLP, embeddings, frequencies.
    if (use_global) {
        std::vector<double> d_gamma(ws.gamma.size(), 0.0);
        std::vector<double> dy(static_cast<std::size_t>(4) * channels);
        std::vector<double> d_in(static_cast<std::size_t>(gin));
        for (int comp = 0; comp < n_comp; ++comp) {
            std::fill(dy.begin(), dy.end(), 0.0);
            const double* y = ws.global_out.data() + static_cast<std::size_t>(comp) * 4 * channels;
            for (int c = 0; c < channels; ++c) {
                const double ar = additive ? 0.0 : y[4 * c];
                const double ai = additive ? 0.0 : y[4 * c + 1];
                double dar = 0.0, dai = 0.0, dbr = 0.0, dbi = 0.0;
                for (int kk = 0; kk < k; ++kk) {
                    const std::size_t idx =
                        (static_cast<std::size_t>(kk) * n_comp + comp) * channels * 2 +
                        static_cast<std::size_t>(c) * 2;
                    const double gr = d_mid[idx], gi = d_mid[idx + 1];
                    const double zr = base[idx], zi = base[idx + 1];
                    d_base[idx] += gr * (1.0 + ar) + gi * ai;
                    d_base[idx + 1] += -gr * ai + gi * (1.0 + ar);
                    dar += gr * zr + gi * zi;
                    dai += -gr * zi + gi * zr;
                    dbr += gr;
                    dbi += gi;
                }
                if (!additive) {
                    dy[static_cast<std::size_t>(4) * c] = dar;
                    dy[static_cast<std::size_t>(4) * c + 1] = dai;
                }
                dy[static_cast<std::size_t>(4) * c + 2] = dbr;
                dy[static_cast<std::size_t>(4) * c + 3] = dbi;
            }
            std::fill(d_in.begin(), d_in.end(), 0.0);
            mlp_backward(state.global_mlp,
                         ws.global_in.data() + static_cast<std::size_t>(comp) * gin,
                         ws.global_h1.data() + static_cast<std::size_t>(comp) * hidden,
                         ws.global_h2.data() + static_cast<std::size_t>(comp) * hidden, dy.data(),
                         grads.d_global, d_in.data());
            for (std::size_t i = 0; i < d_gamma.size(); ++i) d_gamma[i] += d_in[i];
            // Degree/order features are constants; embedding slice is learnable.
            for (int e = 0; e < state.config.embed_dim; ++e)
                grads.d_embed[static_cast<std::size_t>(comp) * state.config.embed_dim + e] +=
                    d_in[ws.gamma.size() + 2 + e];
        }
        // Fourier encode adjoint.
        const int f = state.config.fourier_bands;
        for (int a = 0; a < 3; ++a)
            for (int band = 0; band < f; ++band) {
                const double freq = state.fourier_freqs[static_cast<std::size_t>(band) * 3 + a];
                const double arg = freq * ws.rx[a];
                const double ds = d_gamma[(static_cast<std::size_t>(a) * f + band) * 2];
                const double dc = d_gamma[(static_cast<std::size_t>(a) * f + band) * 2 + 1];
                grads.d_freqs[static_cast<std::size_t>(band) * 3 + a] +=
                    ds * ws.rx[a] * std::cos(arg) - dc * ws.rx[a] * std::sin(arg);
            }
    } else {
        for (std::size_t i = 0; i < d_mid.size(); ++i) d_base[i] += d_mid[i];
    }
}

}  // namespace rxgs::cond
