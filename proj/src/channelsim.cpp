// SPDX-License-Identifier: Apache-2.0
#include "rxgs/channelsim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rxgs::sim {

void OracleScene::validate() const {
    if (!(wavelength > 0.0)) throw std::invalid_argument("scene: wavelength must be > 0");
    if (max_bounces < 0) throw std::invalid_argument("scene: max_bounces must be >= 0");
    for (std::size_t k = 0; k < scatterers.size(); ++k) {
        const auto& s = scatterers[k];
        if (!s.position.finite())
            throw std::invalid_argument("scene: scatterer " + std::to_string(k) +
                                        " has non-finite position");
        if (std::abs(s.reflection_coeff) > 1.0 + 1e-12)
            throw std::invalid_argument("scene: scatterer " + std::to_string(k) +
                                        " has |reflection_coeff| > 1");
        if (!room_bounds.contains(s.position))
            throw std::invalid_argument("scene: scatterer " + std::to_string(k) +
                                        " outside room_bounds");
    }
}

namespace {

PropagationPath make_path(const OracleScene& scene, const Vec3& tx, const Vec3& rx,
                          std::vector<int> indices) {
    PropagationPath p;
    p.segment_lengths.reserve(indices.size() + 1);
    Vec3 prev = tx;
    for (const int idx : indices) {
        const Vec3& s = scene.scatterers[static_cast<std::size_t>(idx)].position;
        p.segment_lengths.push_back(distance(prev, s));
        prev = s;
    }
    p.segment_lengths.push_back(distance(prev, rx));
    p.scatterer_indices = std::move(indices);
    return p;
}

}  // namespace

std::vector<PropagationPath> enumerate_paths(const OracleScene& scene, const Vec3& tx,
                                             const Vec3& rx) {
    scene.validate();
    if (!scene.room_bounds.contains(tx)) throw std::invalid_argument("enumerate_paths: tx outside room_bounds");
    if (!scene.room_bounds.contains(rx)) throw std::invalid_argument("enumerate_paths: rx outside room_bounds");
    if (distance(tx, rx) == 0.0)
        throw std::invalid_argument("enumerate_paths: tx == rx gives a zero-length LoS segment");

    const int k = static_cast<int>(scene.scatterers.size());
    std::vector<PropagationPath> paths;
    paths.push_back(make_path(scene, tx, rx, {}));

    // Bounce sequences by length, lexicographic within a length, skipping
    // immediate self-repeats.
    std::vector<int> seq;
    auto recurse = [&](auto&& self, int len) -> void {
        if (static_cast<int>(seq.size()) == len) {
            paths.push_back(make_path(scene, tx, rx, seq));
            return;
        }
        for (int v = 0; v < k; ++v) {
            if (!seq.empty() && seq.back() == v) continue;
            seq.push_back(v);
            self(self, len);
            seq.pop_back();
        }
    };
    for (int len = 1; len <= scene.max_bounces && k > 0; ++len) recurse(recurse, len);
    return paths;
}

cplx path_coefficient(const OracleScene& scene, const PropagationPath& path) {
    cplx gamma{1.0, 0.0};
    for (const int idx : path.scatterer_indices)
        gamma *= scene.scatterers[static_cast<std::size_t>(idx)].reflection_coeff;

    double loss = 1.0;
    double total = 0.0;
    for (const double d : path.segment_lengths) {
        if (!(d > 0.0)) throw std::invalid_argument("path_coefficient: segment length must be > 0");
        loss *= scene.wavelength / (4.0 * kPi * d);
        total += d;
    }
    const double phase = -kTwoPi * total / scene.wavelength;
    return gamma * loss * cplx{std::cos(phase), std::sin(phase)};
}

cplx channel_response(const OracleScene& scene, const Vec3& tx, const Vec3& rx,
                      const PathOcclusionFn& occlusion) {
    const auto paths = enumerate_paths(scene, tx, rx);
    cplx sum{0.0, 0.0};
    for (const auto& p : paths) {
        cplx c = path_coefficient(scene, p);
        if (occlusion) c *= occlusion(p);
        sum += c;
    }
    return sum;
}

std::array<cplx, 3> channel_response_rx_gradient(const OracleScene& scene, const Vec3& tx,
                                                 const Vec3& rx,
                                                 const PathOcclusionFn& occlusion) {
    const auto paths = enumerate_paths(scene, tx, rx);
    std::array<cplx, 3> grad{cplx{0, 0}, cplx{0, 0}, cplx{0, 0}};
    for (const auto& p : paths) {
        cplx h = path_coefficient(scene, p);
        if (occlusion) h *= occlusion(p);
        const int last = p.last_scatterer();
        const Vec3 origin =
            last < 0 ? tx : scene.scatterers[static_cast<std::size_t>(last)].position;
        const Vec3 diff = origin - rx;
        const double d = diff.norm();
        const cplx factor = h * cplx{1.0 / d, kTwoPi / scene.wavelength};
        grad[0] += factor * (diff.x / d);
        grad[1] += factor * (diff.y / d);
        grad[2] += factor * (diff.z / d);
    }
    return grad;
}

cplx eta_eff_oracle(const Vec3& scatterer_pos, const Vec3& rx, double wavelength,
                    double occlusion_product) {
    const double d = distance(scatterer_pos, rx);
    if (!(d > 0.0)) throw std::invalid_argument("eta_eff_oracle: zero last-segment distance");
    const double phase = -kTwoPi * d / wavelength;
    return wavelength / (4.0 * kPi * d) * cplx{std::cos(phase), std::sin(phase)} *
           occlusion_product;
}

std::map<int, cplx> group_paths_by_last_scatterer(const std::vector<PropagationPath>& paths,
                                                  const std::vector<cplx>& coefficients) {
    if (paths.size() != coefficients.size())
        throw std::invalid_argument("group_paths_by_last_scatterer: size mismatch");
    std::map<int, cplx> groups;
    for (std::size_t i = 0; i < paths.size(); ++i) groups[paths[i].last_scatterer()] += coefficients[i];
    return groups;
}

const char* modality_name(Modality m) {
    switch (m) {
        case Modality::Rssi: return "rssi";
        case Modality::Csi: return "csi";
        case Modality::Spectrum: return "spectrum";
    }
    return "?";
}

Modality modality_from_name(const std::string& name) {
    if (name == "rssi") return Modality::Rssi;
    if (name == "csi") return Modality::Csi;
    if (name == "spectrum") return Modality::Spectrum;
    throw std::invalid_argument("unknown modality '" + name + "'");
}

namespace {

std::vector<double> spectrum_map(const OracleScene& scene, const Vec3& tx, const Vec3& rx,
                                 const SpectrumGridSpec& grid) {
    const int h = grid.n_theta, w = grid.n_phi;
    const double dtheta = kPi / h;
    double kappa = grid.kernel_concentration;
    if (kappa <= 0.0) {
        // Half-power at 1.5 cells from the lobe center.
        const double delta = 1.5 * dtheta;
        kappa = std::log(2.0) / (1.0 - std::cos(delta));
    }

    const auto paths = enumerate_paths(scene, tx, rx);
    std::vector<cplx> coeffs(paths.size());
    for (std::size_t i = 0; i < paths.size(); ++i) coeffs[i] = path_coefficient(scene, paths[i]);
    const auto groups = group_paths_by_last_scatterer(paths, coeffs);

    std::vector<double> map(static_cast<std::size_t>(h) * w, 0.0);
    for (const auto& [last, phi_k] : groups) {
        const Vec3 target =
            last < 0 ? rx : scene.scatterers[static_cast<std::size_t>(last)].position;
        const Vec3 dir = (target - tx).normalized();
        const double power = std::norm(phi_k);
        for (int i = 0; i < h; ++i) {
            const double th = (i + 0.5) * dtheta;
            for (int j = 0; j < w; ++j) {
                const double ph = (j + 0.5) * kTwoPi / w;
                const Vec3 cell{std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph),
                                std::cos(th)};
                const double cosd = std::clamp(cell.dot(dir), -1.0, 1.0);
                map[static_cast<std::size_t>(i) * w + j] += power * std::exp(kappa * (cosd - 1.0));
            }
        }
    }
    double peak = 0.0;
    for (const double v : map) peak = std::max(peak, v);
    if (peak > 0.0)
        for (double& v : map) v /= peak;
    return map;
}

}  // namespace

SyntheticDataset synth_dataset(const OracleScene& scene, const std::vector<Vec3>& tx_grid,
                               const std::vector<Vec3>& rx_list, Modality modality,
                               const SynthOptions& options) {
    if (tx_grid.empty() || rx_list.empty())
        throw std::invalid_argument("synth_dataset: empty tx or rx grid");

    SyntheticDataset ds;
    ds.tx_positions = tx_grid;
    ds.rx_positions = rx_list;
    ds.modality = modality;
    const std::size_t pairs = ds.pair_count();

    try {
        switch (modality) {
            case Modality::Rssi: {
                ds.rssi.resize(pairs);
                for (std::size_t i = 0; i < tx_grid.size(); ++i)
                    for (std::size_t j = 0; j < rx_list.size(); ++j) {
                        const cplx hij = channel_response(scene, tx_grid[i], rx_list[j]);
                        ds.rssi[ds.pair_index(i, j)] = 10.0 * std::log10(std::norm(hij) + kRssiFloor);
                    }
                break;
            }
            case Modality::Csi: {
                const int c = options.csi_channels;
                if (c < 1) throw std::invalid_argument("synth_dataset: csi_channels must be >= 1");
                ds.csi_channels = c;
                ds.csi.resize(pairs * static_cast<std::size_t>(c));
                for (std::size_t i = 0; i < tx_grid.size(); ++i)
                    for (std::size_t j = 0; j < rx_list.size(); ++j)
                        for (int ch = 0; ch < c; ++ch) {
                            OracleScene sub = scene;
                            const double frac =
                                c == 1 ? 0.0
                                       : options.csi_bandwidth_frac *
                                             (static_cast<double>(ch) / (c - 1) - 0.5);
                            sub.wavelength = scene.wavelength * (1.0 + frac);
                            ds.csi[ds.pair_index(i, j) * c + ch] =
                                channel_response(sub, tx_grid[i], rx_list[j]);
                        }
                break;
            }
            case Modality::Spectrum: {
                ds.spec_n_theta = options.spectrum_grid.n_theta;
                ds.spec_n_phi = options.spectrum_grid.n_phi;
                ds.spectra.resize(pairs);
                for (std::size_t i = 0; i < tx_grid.size(); ++i)
                    for (std::size_t j = 0; j < rx_list.size(); ++j)
                        ds.spectra[ds.pair_index(i, j)] =
                            spectrum_map(scene, tx_grid[i], rx_list[j], options.spectrum_grid);
                break;
            }
        }
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("synth_dataset: ") + e.what());
    }
    return ds;
}

}  // namespace rxgs::sim
