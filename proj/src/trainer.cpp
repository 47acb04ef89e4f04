// SPDX-License-Identifier: Apache-2.0
#include "rxgs/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "rxgs/metrics.hpp"
#include "rxgs/rng.hpp"

namespace rxgs::train {

namespace {

int next_pow2(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

// In-place iterative radix-2 decimation-in-time FFT.
void fft1d(std::vector<cplx>& a) {
    const std::size_t n = a.size();
    if (n < 2) return;
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -kTwoPi / static_cast<double>(len);
        const cplx wl{std::cos(ang), std::sin(ang)};
        for (std::size_t i = 0; i < n; i += len) {
            cplx w{1.0, 0.0};
            for (std::size_t j = 0; j < len / 2; ++j) {
                const cplx u = a[i + j];
                const cplx v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

}  // namespace

Dft2 dft2_orthonormal(const std::vector<double>& image, int h, int w) {
    if (image.size() != static_cast<std::size_t>(h) * w)
        throw std::invalid_argument("dft2_orthonormal: shape mismatch");
    Dft2 out;
    out.h = next_pow2(std::max(1, h));
    out.w = next_pow2(std::max(1, w));
    out.bins.assign(static_cast<std::size_t>(out.h) * out.w, cplx{0, 0});
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            out.bins[static_cast<std::size_t>(r) * out.w + c] =
                cplx{image[static_cast<std::size_t>(r) * w + c], 0.0};

    std::vector<cplx> line;
    line.resize(static_cast<std::size_t>(out.w));
    for (int r = 0; r < out.h; ++r) {
        std::copy_n(out.bins.begin() + static_cast<std::size_t>(r) * out.w, out.w, line.begin());
        fft1d(line);
        std::copy_n(line.begin(), out.w, out.bins.begin() + static_cast<std::size_t>(r) * out.w);
    }
    line.resize(static_cast<std::size_t>(out.h));
    for (int c = 0; c < out.w; ++c) {
        for (int r = 0; r < out.h; ++r) line[static_cast<std::size_t>(r)] = out.bins[static_cast<std::size_t>(r) * out.w + c];
        fft1d(line);
        for (int r = 0; r < out.h; ++r) out.bins[static_cast<std::size_t>(r) * out.w + c] = line[static_cast<std::size_t>(r)];
    }
    const double norm = 1.0 / std::sqrt(static_cast<double>(out.h) * out.w);
    for (cplx& b : out.bins) b *= norm;
    return out;
}

LossResult composite_loss(const raster::Measurement& pred, const raster::Measurement& gt,
                          Modality modality, const LossWeights& weights, int h, int w) {
    LossResult out;
    out.d_pred.modality = modality;
    switch (modality) {
        case Modality::Rssi: {
            const double diff = pred.scalar - gt.scalar;
            out.value = std::abs(diff);
            out.d_pred.scalar = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
            break;
        }
        case Modality::Csi: {
            if (pred.csi.size() != gt.csi.size())
                throw std::invalid_argument("composite_loss: csi length mismatch");
            out.d_pred.csi.assign(pred.csi.size(), cplx{0, 0});
            for (std::size_t c = 0; c < pred.csi.size(); ++c) {
                const cplx d = pred.csi[c] - gt.csi[c];
                out.value += std::norm(d);
                out.d_pred.csi[c] = 2.0 * d;
            }
            break;
        }
        case Modality::Spectrum: {
            if (pred.image.size() != gt.image.size() ||
                pred.image.size() != static_cast<std::size_t>(h) * w)
                throw std::invalid_argument("composite_loss: spectrum shape mismatch");
            const double l_weight = 1.0 - weights.lambda_ssim - weights.lambda_fft;
            const double n = static_cast<double>(pred.image.size());
            out.d_pred.image.assign(pred.image.size(), 0.0);

            double l1 = 0.0;
            for (std::size_t i = 0; i < pred.image.size(); ++i) {
                const double d = pred.image[i] - gt.image[i];
                l1 += std::abs(d);
                out.d_pred.image[i] +=
                    l_weight * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / n;
            }
            out.value = l_weight * l1 / n;

            if (weights.lambda_ssim > 0.0) {
                std::vector<double> d_ssim;
                met::SsimOptions opts;
                opts.dynamic_range = weights.ssim_dynamic_range;
                const double s = met::ssim(pred.image, gt.image, h, w, opts, &d_ssim);
                out.value += weights.lambda_ssim * (1.0 - s);
                for (std::size_t i = 0; i < pred.image.size(); ++i)
                    out.d_pred.image[i] -= weights.lambda_ssim * d_ssim[i];
            }
            if (weights.lambda_fft > 0.0) {
                const Dft2 fp = dft2_orthonormal(pred.image, h, w);
                const Dft2 fg = dft2_orthonormal(gt.image, h, w);
                double acc = 0.0;
                for (std::size_t i = 0; i < fp.bins.size(); ++i)
                    acc += std::norm(fp.bins[i] - fg.bins[i]);
                out.value += weights.lambda_fft * acc;
                // The transform is unitary and both images share the zero
                // padding, so the adjoint collapses to 2 (pred - gt).
                for (std::size_t i = 0; i < pred.image.size(); ++i)
                    out.d_pred.image[i] +=
                        weights.lambda_fft * 2.0 * (pred.image[i] - gt.image[i]);
            }
            break;
        }
    }
    return out;
}

raster::Measurement predict(const Model& model, const Vec3& tx, const Vec3& rx, int threads) {
    const std::vector<double> coeffs =
        model.has_conditioning
            ? cond::condition_forward(model.conditioning, model.scene.fle_coeffs, model.scene, rx)
            : model.scene.fle_coeffs;
    const auto field = raster::render_field(model.scene, tx, model.grid, coeffs, 1, threads);
    return raster::aggregate_modality(field, model.scene.modality, model.grid)[0];
}

raster::Measurement dataset_measurement(const sim::SyntheticDataset& ds, std::size_t tx_idx,
                                        std::size_t rx_idx) {
    raster::Measurement m;
    m.modality = ds.modality;
    const std::size_t pair = ds.pair_index(tx_idx, rx_idx);
    switch (ds.modality) {
        case Modality::Rssi:
            m.scalar = ds.rssi[pair];
            break;
        case Modality::Csi:
            m.csi.assign(ds.csi.begin() + pair * ds.csi_channels,
                         ds.csi.begin() + (pair + 1) * ds.csi_channels);
            break;
        case Modality::Spectrum:
            m.image = ds.spectra[pair];
            break;
    }
    return m;
}

raster::Measurement averaged_target(const sim::SyntheticDataset& ds, std::size_t tx_idx,
                                    const std::vector<int>& rx_indices) {
    if (rx_indices.empty()) throw std::invalid_argument("averaged_target: no receivers");
    raster::Measurement m;
    m.modality = ds.modality;
    const double inv = 1.0 / static_cast<double>(rx_indices.size());
    for (const int rx : rx_indices) {
        const auto one = dataset_measurement(ds, tx_idx, static_cast<std::size_t>(rx));
        switch (ds.modality) {
            case Modality::Rssi:
                m.scalar += one.scalar * inv;
                break;
            case Modality::Csi:
                if (m.csi.empty()) m.csi.assign(one.csi.size(), cplx{0, 0});
                for (std::size_t c = 0; c < one.csi.size(); ++c) m.csi[c] += one.csi[c] * inv;
                break;
            case Modality::Spectrum:
                if (m.image.empty()) m.image.assign(one.image.size(), 0.0);
                for (std::size_t i = 0; i < one.image.size(); ++i) m.image[i] += one.image[i] * inv;
                break;
        }
    }
    return m;
}

namespace {

std::vector<int> index_list_or_all(const std::vector<int>& requested, std::size_t n,
                                   const char* what) {
    if (requested.empty()) {
        std::vector<int> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<int>(i);
        return all;
    }
    for (const int idx : requested)
        if (idx < 0 || static_cast<std::size_t>(idx) >= n)
            throw std::invalid_argument(std::string("train: ") + what + " index out of range");
    return requested;
}

// Per-element feature LR multipliers: low-degree components at 1, higher
// degrees at the configured ratio.
std::vector<double> feature_lr_scale(const GaussianScene& scene, double rest_ratio) {
    std::vector<double> scale(scene.fle_coeffs.size(), 1.0);
    const int n_comp = scene.n_components();
    const std::size_t per_comp = static_cast<std::size_t>(scene.channels) * 2;
    for (int k = 0; k < scene.count(); ++k)
        for (int comp = 0; comp < n_comp; ++comp) {
            if (fle::component_degree(comp) == 0) continue;
            const std::size_t base =
                (static_cast<std::size_t>(k) * n_comp + comp) * per_comp;
            for (std::size_t i = 0; i < per_comp; ++i) scale[base + i] = rest_ratio;
        }
    return scale;
}

// Zero gradients of components above the active ramp degree.
void apply_degree_mask(const GaussianScene& scene, std::int64_t iter,
                       std::int64_t ramp_interval, std::vector<double>& d_coeffs) {
    if (ramp_interval <= 0) return;
    const int active = static_cast<int>(
        std::min<std::int64_t>(scene.l_max, iter / ramp_interval));
    if (active >= scene.l_max) return;
    const int n_comp = scene.n_components();
    const std::size_t per_comp = static_cast<std::size_t>(scene.channels) * 2;
    const std::size_t k_total = d_coeffs.size() / (static_cast<std::size_t>(n_comp) * per_comp);
    for (std::size_t k = 0; k < k_total; ++k)
        for (int comp = 0; comp < n_comp; ++comp) {
            if (fle::component_degree(comp) <= active) continue;
            const std::size_t base = (k * n_comp + comp) * per_comp;
            for (std::size_t i = 0; i < per_comp; ++i) d_coeffs[base + i] = 0.0;
        }
}

void push_trace(LossTrace& trace, double value) {
    trace.raw.push_back(value);
    const std::size_t n = trace.raw.size();
    const std::size_t lo = n > 50 ? n - 50 : 0;
    double acc = 0.0;
    for (std::size_t i = lo; i < n; ++i) acc += trace.raw[i];
    trace.smoothed.push_back(acc / static_cast<double>(n - lo));
}

void step_conditioning(opt::Optimizer& optimizer, cond::ConditioningState& state,
                       cond::ConditioningGrads& grads, double lr) {
    optimizer.step("cond.freqs", state.fourier_freqs, grads.d_freqs, lr);
    optimizer.step("cond.embed", state.component_embed, grads.d_embed, lr);
    auto step_mlp = [&](const char* tag, cond::Mlp& mlp, cond::MlpGrads& g) {
        const std::string p(tag);
        optimizer.step(p + ".w1", mlp.l1.w, g.w1, lr);
        optimizer.step(p + ".b1", mlp.l1.b, g.b1, lr);
        optimizer.step(p + ".w2", mlp.l2.w, g.w2, lr);
        optimizer.step(p + ".b2", mlp.l2.b, g.b2, lr);
        optimizer.step(p + ".w3", mlp.l3.w, g.w3, lr);
        optimizer.step(p + ".b3", mlp.l3.b, g.b3, lr);
    };
    step_mlp("cond.global", state.global_mlp, grads.d_global);
    step_mlp("cond.local", state.local_mlp, grads.d_local);
}

void bootstrap_zero_coeffs(GaussianScene& scene) {
    for (const double c : scene.fle_coeffs)
        if (c != 0.0) return;
    const int n_comp = scene.n_components();
    for (int k = 0; k < scene.count(); ++k)
        for (int c = 0; c < scene.channels; ++c)
            scene.fle_coeffs[(static_cast<std::size_t>(k) * n_comp) * scene.channels * 2 +
                             static_cast<std::size_t>(c) * 2] = kCoeffBootstrap;
}

void validate_dataset(const sim::SyntheticDataset& ds, const GaussianScene& scene) {
    if (ds.modality != scene.modality)
        throw std::invalid_argument("train: dataset/scene modality mismatch");
    if (ds.modality == Modality::Csi && ds.csi_channels != scene.channels)
        throw std::invalid_argument("train: csi channel count mismatch");
    if (ds.tx_positions.empty() || ds.rx_positions.empty())
        throw std::invalid_argument("train: empty dataset");
}

}  // namespace

LossTrace train_stage1(const sim::SyntheticDataset& ds, GaussianScene& scene,
                       const raster::SphericalGrid& grid, const TrainConfig& config) {
    validate_dataset(ds, scene);
    const auto train_tx = index_list_or_all(config.train_tx, ds.tx_positions.size(), "tx");
    const auto train_rx = index_list_or_all(config.train_rx, ds.rx_positions.size(), "rx");
    if (config.reference_rx >= static_cast<int>(ds.rx_positions.size()))
        throw std::invalid_argument("train_stage1: reference_rx out of range");
    if (config.stage1_iters > 0) bootstrap_zero_coeffs(scene);

    DensifyState densify;
    densify.resize(scene.count());
    densify.scene_extent = scene.position_bounds().diagonal();
    DensifyThresholds thresholds;
    thresholds.grad_threshold = config.densify_grad_threshold;

    opt::Optimizer optimizer;
    Rng sampler = derive_stream(config.seed, "trainer.stage1.sample");
    std::vector<double> lr_scale = feature_lr_scale(scene, config.rest_lr_ratio);
    LossTrace trace;
    uint64_t densify_pass = 0;

    for (std::int64_t t = 0; t < config.stage1_iters; ++t) {
        const int tx_idx = train_tx[sampler.below(train_tx.size())];
        const raster::Measurement target =
            config.reference_rx >= 0
                ? dataset_measurement(ds, tx_idx, static_cast<std::size_t>(config.reference_rx))
                : averaged_target(ds, tx_idx, train_rx);
        const Vec3 tx = ds.tx_positions[static_cast<std::size_t>(tx_idx)];

        const raster::TxState state = raster::build_tx_state(scene, tx, grid);
        const auto field =
            raster::render_field(state, scene, scene.fle_coeffs, 1, config.threads);
        const auto pred = raster::aggregate_modality(field, scene.modality, grid)[0];
        LossResult loss =
            composite_loss(pred, target, scene.modality, config.loss, grid.n_theta, grid.n_phi);
        if (!std::isfinite(loss.value))
            throw std::runtime_error("train_stage1: non-finite loss at iteration " +
                                     std::to_string(t));

        const auto d_values =
            raster::aggregate_modality_backward(field, scene.modality, grid, {loss.d_pred});
        raster::GradientBundle bundle =
            raster::backward_render(state, scene, scene.fle_coeffs, 1, d_values, config.threads);
        apply_degree_mask(scene, t, config.fle_ramp_interval, bundle.d_coeffs);
        densify.accumulate(bundle.d_positions);

        optimizer.step("position", scene.positions, bundle.d_positions,
                       opt::lr_at(config.position_lr, t));
        optimizer.step("features", scene.fle_coeffs, bundle.d_coeffs, config.feature_lr,
                       lr_scale);
        optimizer.step("transmittance", scene.tau_logits, bundle.d_tau_logits,
                       config.transmittance_lr);
        optimizer.step("scaling", scene.log_scales, bundle.d_log_scales, config.scaling_lr);
        optimizer.step("rotation", scene.quaternions, bundle.d_quaternions, config.rotation_lr);
        renormalize_quaternions(scene);

        const std::int64_t iter = t + 1;
        if (config.tau_reset_interval > 0 && iter % config.tau_reset_interval == 0 &&
            iter < config.stage1_iters) {
            reset_transmittance(scene);
            optimizer.reset("transmittance");
        }
        if (iter >= config.densify_start && iter <= config.stage1_iters / 2 &&
            config.densify_interval > 0 &&
            (iter - config.densify_start) % config.densify_interval == 0) {
            const DensifyReport report =
                densify_and_prune(scene, densify, thresholds, config.seed, densify_pass++);
            optimizer.remap_rows("position", report.source_row, 3);
            optimizer.remap_rows("scaling", report.source_row, 3);
            optimizer.remap_rows("rotation", report.source_row, 4);
            optimizer.remap_rows("transmittance", report.source_row, 1);
            optimizer.remap_rows("features", report.source_row,
                                 static_cast<int>(scene.coeff_stride()));
            lr_scale = feature_lr_scale(scene, config.rest_lr_ratio);
        }
        push_trace(trace, loss.value);
    }
    trace.group_rates = {{"position", opt::lr_at(config.position_lr,
                                                 std::max<std::int64_t>(config.stage1_iters - 1, 0))},
                         {"feature_low", config.feature_lr},
                         {"feature_high", config.feature_lr * config.rest_lr_ratio},
                         {"transmittance", config.transmittance_lr},
                         {"scaling", config.scaling_lr},
                         {"rotation", config.rotation_lr}};
    return trace;
}

namespace {

LossTrace conditioned_training_loop(const sim::SyntheticDataset& ds, GaussianScene& scene,
                                    cond::ConditioningState& conditioning,
                                    const raster::SphericalGrid& grid, const TrainConfig& config,
                                    bool train_geometry, const char* tag) {
    validate_dataset(ds, scene);
    const auto train_tx = index_list_or_all(config.train_tx, ds.tx_positions.size(), "tx");
    const auto train_rx = index_list_or_all(config.train_rx, ds.rx_positions.size(), "rx");

    // Occupancy built once, before the loop, from the current geometry.
    const Aabb bounds = scene.position_bounds().inflated(config.occupancy_bounds_inflation);
    conditioning.occupancy =
        cond::build_occupancy(scene, config.occupancy_resolution, bounds);

    opt::Optimizer optimizer;
    Rng sampler = derive_stream(config.seed, std::string("trainer.") + tag + ".sample");
    std::vector<double> lr_scale = feature_lr_scale(scene, config.rest_lr_ratio);
    LossTrace trace;

    // Per-transmitter state is receiver-independent; with frozen geometry it
    // is also iteration-independent, so cache it per transmitter.
    std::unordered_map<int, raster::TxState> tx_cache;

    const std::int64_t iters = train_geometry ? config.stage1_iters + config.stage2_iters
                                              : config.stage2_iters;
    for (std::int64_t t = 0; t < iters; ++t) {
        const int tx_idx = train_tx[sampler.below(train_tx.size())];
        const int rx_idx = train_rx[sampler.below(train_rx.size())];
        const Vec3 tx = ds.tx_positions[static_cast<std::size_t>(tx_idx)];
        const Vec3 rx = ds.rx_positions[static_cast<std::size_t>(rx_idx)];
        const raster::Measurement target = dataset_measurement(ds, tx_idx, rx_idx);

        const raster::TxState* state = nullptr;
        raster::TxState local_state;
        if (train_geometry) {
            local_state = raster::build_tx_state(scene, tx, grid);
            state = &local_state;
        } else {
            auto it = tx_cache.find(tx_idx);
            if (it == tx_cache.end())
                it = tx_cache.emplace(tx_idx, raster::build_tx_state(scene, tx, grid)).first;
            state = &it->second;
        }

        cond::ConditionWorkspace ws;
        const std::vector<double> coeffs =
            cond::condition_forward(conditioning, scene.fle_coeffs, scene, rx, &ws);
        const auto field = raster::render_field(*state, scene, coeffs, 1, config.threads);
        const auto pred = raster::aggregate_modality(field, scene.modality, grid)[0];
        LossResult loss =
            composite_loss(pred, target, scene.modality, config.loss, grid.n_theta, grid.n_phi);
        if (!std::isfinite(loss.value))
            throw std::runtime_error(std::string("train_") + tag +
                                     ": non-finite loss at iteration " + std::to_string(t));

        const auto d_values =
            raster::aggregate_modality_backward(field, scene.modality, grid, {loss.d_pred});
        raster::GradientBundle bundle =
            raster::backward_render(*state, scene, coeffs, 1, d_values, config.threads);

        std::vector<double> d_base(scene.fle_coeffs.size(), 0.0);
        cond::ConditioningGrads grads;
        grads.resize(conditioning);
        cond::condition_backward(conditioning, ws, scene.fle_coeffs, bundle.d_coeffs, d_base,
                                 grads);

        if (train_geometry) {
            apply_degree_mask(scene, t, config.fle_ramp_interval, d_base);
            optimizer.step("position", scene.positions, bundle.d_positions,
                           opt::lr_at(config.position_lr, t));
            optimizer.step("transmittance", scene.tau_logits, bundle.d_tau_logits,
                           config.transmittance_lr);
            optimizer.step("scaling", scene.log_scales, bundle.d_log_scales, config.scaling_lr);
            optimizer.step("rotation", scene.quaternions, bundle.d_quaternions,
                           config.rotation_lr);
        }
        optimizer.step("features", scene.fle_coeffs, d_base, config.feature_lr, lr_scale);
        step_conditioning(optimizer, conditioning, grads, config.conditioning_lr);
        if (train_geometry) renormalize_quaternions(scene);

        push_trace(trace, loss.value);
    }
    trace.group_rates = {{"feature_low", config.feature_lr},
                         {"feature_high", config.feature_lr * config.rest_lr_ratio},
                         {"conditioning", config.conditioning_lr}};
    return trace;
}

}  // namespace

LossTrace train_stage2(const sim::SyntheticDataset& ds, GaussianScene& scene,
                       cond::ConditioningState& conditioning,
                       const raster::SphericalGrid& grid, const TrainConfig& config) {
    // Stage-I radiance is discarded: base coefficients restart at zero
    // (plus the symmetry-breaking bootstrap).
    std::fill(scene.fle_coeffs.begin(), scene.fle_coeffs.end(), 0.0);
    if (config.stage2_iters > 0) bootstrap_zero_coeffs(scene);
    return conditioned_training_loop(ds, scene, conditioning, grid, config,
                                     /*train_geometry=*/false, "stage2");
}

LossTrace train_joint(const sim::SyntheticDataset& ds, GaussianScene& scene,
                      cond::ConditioningState& conditioning, const raster::SphericalGrid& grid,
                      const TrainConfig& config) {
    bootstrap_zero_coeffs(scene);
    return conditioned_training_loop(ds, scene, conditioning, grid, config,
                                     /*train_geometry=*/true, "joint");
}

}  // namespace rxgs::train
