// SPDX-License-Identifier: Apache-2.0
#include "rxgs/dataset.hpp"

#include <fstream>
#include <json.hpp>

namespace rxgs::io {

namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<double> json_vec3_checked(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3)
        throw ConfigError(where + ": expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Vec3 to_vec3(const nlohmann::json& j, const std::string& where) {
    const auto v = json_vec3_checked(j, where);
    return {v[0], v[1], v[2]};
}

std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    return out;
}

std::ifstream open_in(const std::filesystem::path& path, bool binary = false) {
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    return in;
}

}  // namespace

sim::OracleScene load_oracle_scene(const std::filesystem::path& path) {
    auto in = open_in(path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("scene file " + path.string() + ": " + e.what());
    }
    sim::OracleScene scene;
    scene.wavelength = j.at("wavelength").get<double>();
    scene.max_bounces = j.at("max_bounces").get<int>();
    scene.room_bounds.lo = to_vec3(j.at("room_bounds").at("min"), "room_bounds.min");
    scene.room_bounds.hi = to_vec3(j.at("room_bounds").at("max"), "room_bounds.max");
    for (const auto& s : j.at("scatterers")) {
        sim::Scatterer sc;
        sc.position = to_vec3(s.at("position"), "scatterer.position");
        const auto& g = s.at("reflection_coeff");
        if (!g.is_array() || g.size() != 2)
            throw ConfigError("scatterer.reflection_coeff: expected [re, im]");
        sc.reflection_coeff = {g[0].get<double>(), g[1].get<double>()};
        scene.scatterers.push_back(sc);
    }
    scene.validate();
    return scene;
}

void save_oracle_scene(const std::filesystem::path& path, const sim::OracleScene& scene) {
    ordered_json j;
    j["wavelength"] = scene.wavelength;
    j["max_bounces"] = scene.max_bounces;
    j["room_bounds"] = {{"min", {scene.room_bounds.lo.x, scene.room_bounds.lo.y,
                                 scene.room_bounds.lo.z}},
                        {"max", {scene.room_bounds.hi.x, scene.room_bounds.hi.y,
                                 scene.room_bounds.hi.z}}};
    j["scatterers"] = ordered_json::array();
    for (const auto& s : scene.scatterers)
        j["scatterers"].push_back(
            {{"position", {s.position.x, s.position.y, s.position.z}},
             {"reflection_coeff", {s.reflection_coeff.real(), s.reflection_coeff.imag()}}});
    open_out(path) << j.dump(2) << "\n";
}

void save_spectrum_rxsp(const std::filesystem::path& path, const std::vector<double>& amplitudes,
                        int h, int w) {
    if (amplitudes.size() != static_cast<std::size_t>(h) * w)
        throw IoError("save_spectrum_rxsp: shape mismatch");
    auto out = open_out(path, true);
    out.write("RXSP", 4);
    const uint32_t hh = static_cast<uint32_t>(h), ww = static_cast<uint32_t>(w);
    out.write(reinterpret_cast<const char*>(&hh), 4);
    out.write(reinterpret_cast<const char*>(&ww), 4);
    for (const double a : amplitudes) {
        const float f = static_cast<float>(a);
        out.write(reinterpret_cast<const char*>(&f), 4);
    }
    if (!out) throw IoError("save_spectrum_rxsp: write failed for " + path.string());
}

std::vector<double> load_spectrum_rxsp(const std::filesystem::path& path, int* h, int* w) {
    auto in = open_in(path, true);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "RXSP")
        throw IoError("load_spectrum_rxsp: bad magic in " + path.string());
    uint32_t hh = 0, ww = 0;
    in.read(reinterpret_cast<char*>(&hh), 4);
    in.read(reinterpret_cast<char*>(&ww), 4);
    std::vector<double> out(static_cast<std::size_t>(hh) * ww);
    for (auto& v : out) {
        float f;
        in.read(reinterpret_cast<char*>(&f), 4);
        v = f;
    }
    if (!in) throw IoError("load_spectrum_rxsp: truncated file " + path.string());
    if (h) *h = static_cast<int>(hh);
    if (w) *w = static_cast<int>(ww);
    return out;
}

void save_pgm(const std::filesystem::path& path, const std::vector<double>& image, int h, int w) {
    if (image.size() != static_cast<std::size_t>(h) * w) throw IoError("save_pgm: shape mismatch");
    double peak = 0.0;
    for (const double v : image) peak = std::max(peak, v);
    auto out = open_out(path, true);
    out << "P5\n" << w << " " << h << "\n255\n";
    for (const double v : image) {
        const int q = peak > 0.0 ? static_cast<int>(255.0 * v / peak + 0.5) : 0;
        out.put(static_cast<char>(std::clamp(q, 0, 255)));
    }
    if (!out) throw IoError("save_pgm: write failed for " + path.string());
}

namespace {

std::string spectrum_sidecar_name(std::size_t i, std::size_t j) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "t%05zu_r%03zu.rxsp", i, j);
    return buf;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const sim::SyntheticDataset& ds) {
    const std::filesystem::path sidecar_dir =
        path.parent_path() / (path.stem().string() + ".spectra");
    if (ds.modality == Modality::Spectrum) std::filesystem::create_directories(sidecar_dir);

    auto out = open_out(path);
    for (std::size_t i = 0; i < ds.tx_positions.size(); ++i)
        for (std::size_t j = 0; j < ds.rx_positions.size(); ++j) {
            const std::size_t pair = ds.pair_index(i, j);
            ordered_json rec;
            const Vec3& tx = ds.tx_positions[i];
            const Vec3& rx = ds.rx_positions[j];
            rec["tx"] = {tx.x, tx.y, tx.z};
            rec["rx_id"] = j;
            rec["rx"] = {rx.x, rx.y, rx.z};
            rec["modality"] = sim::modality_name(ds.modality);
            switch (ds.modality) {
                case Modality::Rssi:
                    rec["value"] = ds.rssi[pair];
                    break;
                case Modality::Csi: {
                    auto arr = ordered_json::array();
                    for (int c = 0; c < ds.csi_channels; ++c) {
                        const cplx& v = ds.csi[pair * ds.csi_channels + c];
                        arr.push_back({v.real(), v.imag()});
                    }
                    rec["value"] = arr;
                    break;
                }
                case Modality::Spectrum: {
                    const std::string name = spectrum_sidecar_name(i, j);
                    save_spectrum_rxsp(sidecar_dir / name, ds.spectra[pair], ds.spec_n_theta,
                                       ds.spec_n_phi);
                    rec["value"] = (path.stem().string() + ".spectra") + "/" + name;
                    break;
                }
            }
            out << rec.dump() << "\n";
            if (!out)
                throw IoError("save_dataset: write failed at pair (" + std::to_string(i) + ", " +
                              std::to_string(j) + ")");
        }
}

sim::SyntheticDataset load_dataset(const std::filesystem::path& path) {
    auto in = open_in(path);
    sim::SyntheticDataset ds;
    std::string line;
    std::size_t line_no = 0;
    std::vector<Vec3> tx_order;
    bool modality_set = false;

    struct Record {
        std::size_t tx_idx, rx_idx;
        double rssi = 0.0;
        std::vector<cplx> csi;
        std::vector<double> image;
    };
    std::vector<Record> records;

    auto tx_index = [&](const Vec3& tx) -> std::size_t {
        for (std::size_t i = 0; i < tx_order.size(); ++i)
            if (tx_order[i].x == tx.x && tx_order[i].y == tx.y && tx_order[i].z == tx.z) return i;
        tx_order.push_back(tx);
        return tx_order.size() - 1;
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw IoError("load_dataset: line " + std::to_string(line_no) + ": " + e.what());
        }
        const Vec3 tx = to_vec3(rec.at("tx"), "tx");
        const Vec3 rx = to_vec3(rec.at("rx"), "rx");
        const std::size_t rx_id = rec.at("rx_id").get<std::size_t>();
        const Modality modality = sim::modality_from_name(rec.at("modality").get<std::string>());
        if (!modality_set) {
            ds.modality = modality;
            modality_set = true;
        } else if (modality != ds.modality) {
            throw IoError("load_dataset: mixed modalities at line " + std::to_string(line_no));
        }
        if (rx_id >= ds.rx_positions.size()) ds.rx_positions.resize(rx_id + 1);
        ds.rx_positions[rx_id] = rx;

        Record r;
        r.tx_idx = tx_index(tx);
        r.rx_idx = rx_id;
        switch (modality) {
            case Modality::Rssi:
                r.rssi = rec.at("value").get<double>();
                break;
            case Modality::Csi:
                for (const auto& pair : rec.at("value"))
                    r.csi.push_back({pair[0].get<double>(), pair[1].get<double>()});
                break;
            case Modality::Spectrum: {
                int h = 0, w = 0;
                r.image = load_spectrum_rxsp(
                    path.parent_path() / rec.at("value").get<std::string>(), &h, &w);
                if (ds.spec_n_theta == 0) {
                    ds.spec_n_theta = h;
                    ds.spec_n_phi = w;
                }
                break;
            }
        }
        records.push_back(std::move(r));
    }
    ds.tx_positions = tx_order;

    const std::size_t pairs = ds.pair_count();
    if (records.size() != pairs)
        throw IoError("load_dataset: records do not form a dense tx x rx grid");
    switch (ds.modality) {
        case Modality::Rssi:
            ds.rssi.assign(pairs, 0.0);
            for (const auto& r : records) ds.rssi[ds.pair_index(r.tx_idx, r.rx_idx)] = r.rssi;
            break;
        case Modality::Csi:
            ds.csi_channels = static_cast<int>(records.front().csi.size());
            ds.csi.assign(pairs * ds.csi_channels, cplx{0, 0});
            for (const auto& r : records)
                std::copy(r.csi.begin(), r.csi.end(),
                          ds.csi.begin() + ds.pair_index(r.tx_idx, r.rx_idx) * ds.csi_channels);
            break;
        case Modality::Spectrum:
            ds.spectra.assign(pairs, {});
            for (auto& r : records)
                ds.spectra[ds.pair_index(r.tx_idx, r.rx_idx)] = std::move(r.image);
            break;
    }
    return ds;
}

}  // namespace rxgs::io
