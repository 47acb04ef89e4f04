// SPDX-License-Identifier: Apache-2.0
#include "rxgs/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "rxgs/dataset.hpp"  // ConfigError / IoError

namespace rxgs::io {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

using ordered_json = nlohmann::ordered_json;

struct ArrayRef {
    std::string name;
    std::vector<std::size_t> shape;
    const std::vector<double>* data;
};

std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (const std::size_t s : shape) n *= s;
    return n;
}

std::vector<ArrayRef> manifest_for(const train::Model& model) {
    const auto& s = model.scene;
    std::vector<ArrayRef> arrays = {
        {"positions", {static_cast<std::size_t>(s.count()), 3}, &s.positions},
        {"log_scales", {static_cast<std::size_t>(s.count()), 3}, &s.log_scales},
        {"quaternions", {static_cast<std::size_t>(s.count()), 4}, &s.quaternions},
        {"tau_logits", {static_cast<std::size_t>(s.count())}, &s.tau_logits},
        {"fle_coeffs",
         {static_cast<std::size_t>(s.count()), static_cast<std::size_t>(s.n_components()),
          static_cast<std::size_t>(s.channels), 2},
         &s.fle_coeffs},
    };
    if (model.has_conditioning) {
        const auto& c = model.conditioning;
        auto push_mlp = [&arrays](const std::string& prefix, const cond::Mlp& mlp) {
            arrays.push_back({prefix + ".w1",
                              {static_cast<std::size_t>(mlp.l1.out),
                               static_cast<std::size_t>(mlp.l1.in)},
                              &mlp.l1.w});
            arrays.push_back({prefix + ".b1", {static_cast<std::size_t>(mlp.l1.out)}, &mlp.l1.b});
            arrays.push_back({prefix + ".w2",
                              {static_cast<std::size_t>(mlp.l2.out),
                               static_cast<std::size_t>(mlp.l2.in)},
                              &mlp.l2.w});
            arrays.push_back({prefix + ".b2", {static_cast<std::size_t>(mlp.l2.out)}, &mlp.l2.b});
            arrays.push_back({prefix + ".w3",
                              {static_cast<std::size_t>(mlp.l3.out),
                               static_cast<std::size_t>(mlp.l3.in)},
                              &mlp.l3.w});
            arrays.push_back({prefix + ".b3", {static_cast<std::size_t>(mlp.l3.out)}, &mlp.l3.b});
        };
        arrays.push_back({"cond.fourier_freqs",
                          {static_cast<std::size_t>(c.config.fourier_bands), 3},
                          &c.fourier_freqs});
        push_mlp("cond.global", c.global_mlp);
        arrays.push_back({"cond.component_embed",
                          {static_cast<std::size_t>(c.n_components()),
                           static_cast<std::size_t>(c.config.embed_dim)},
                          &c.component_embed});
        push_mlp("cond.local", c.local_mlp);
        arrays.push_back({"cond.occupancy",
                          {static_cast<std::size_t>(c.occupancy.resolution),
                           static_cast<std::size_t>(c.occupancy.resolution),
                           static_cast<std::size_t>(c.occupancy.resolution)},
                          &c.occupancy.densities});
    }
    return arrays;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const train::Model& model) {
    const auto arrays = manifest_for(model);

    ordered_json header;
    header["k"] = model.scene.count();
    header["l_max"] = model.scene.l_max;
    header["channels"] = model.scene.channels;
    header["modality"] = sim::modality_name(model.scene.modality);
    header["grid"] = {{"n_theta", model.grid.n_theta},   {"n_phi", model.grid.n_phi},
                      {"tile_size", model.grid.tile_size}, {"radius", model.grid.radius},
                      {"theta_min", model.grid.theta_min}, {"theta_max", model.grid.theta_max}};
    header["has_conditioning"] = model.has_conditioning;
    if (model.has_conditioning) {
        const auto& cfg = model.conditioning.config;
        const auto& b = model.conditioning.occupancy.bounds;
        header["conditioning"] = {
            {"fourier_bands", cfg.fourier_bands},
            {"hidden", cfg.hidden},
            {"embed_dim", cfg.embed_dim},
            {"probe_samples", cfg.probe_samples},
            {"occupancy_resolution", model.conditioning.occupancy.resolution},
            {"nearest_lookup", cfg.nearest_lookup},
            {"mode", cond::conditioning_mode_name(cfg.mode)},
            {"occupancy_bounds", {b.lo.x, b.lo.y, b.lo.z, b.hi.x, b.hi.y, b.hi.z}}};
    }
    auto manifest = ordered_json::array();
    std::size_t offset = 0;
    for (const auto& a : arrays) {
        if (a.data->size() != element_count(a.shape))
            throw IoError("save_checkpoint: array '" + a.name + "' shape mismatch");
        manifest.push_back(
            {{"name", a.name}, {"dtype", "f64"}, {"shape", a.shape}, {"offset", offset}});
        offset += a.data->size() * sizeof(double);
    }
    header["arrays"] = manifest;
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_checkpoint: cannot open " + path.string());
    out.write("RXGS", 4);
    const uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const uint64_t header_len = header_str.size();
    out.write(reinterpret_cast<const char*>(&header_len), 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& a : arrays)
        out.write(reinterpret_cast<const char*>(a.data->data()),
                  static_cast<std::streamsize>(a.data->size() * sizeof(double)));
    if (!out) throw IoError("save_checkpoint: write failed for " + path.string());
}

train::Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "RXGS")
        throw IoError("load_checkpoint: bad magic in " + path.string());
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != kCheckpointVersion)
        throw IoError("load_checkpoint: unsupported version " + std::to_string(version));
    uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), 8);
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw IoError("load_checkpoint: truncated header in " + path.string());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const std::exception& e) {
        throw IoError(std::string("load_checkpoint: header parse failure: ") + e.what());
    }

    train::Model model;
    model.scene.l_max = header.at("l_max").get<int>();
    model.scene.channels = header.at("channels").get<int>();
    model.scene.modality = sim::modality_from_name(header.at("modality").get<std::string>());
    const auto& g = header.at("grid");
    model.grid.n_theta = g.at("n_theta").get<int>();
    model.grid.n_phi = g.at("n_phi").get<int>();
    model.grid.tile_size = g.at("tile_size").get<int>();
    model.grid.radius = g.at("radius").get<double>();
    model.grid.theta_min = g.at("theta_min").get<double>();
    model.grid.theta_max = g.at("theta_max").get<double>();
    model.has_conditioning = header.at("has_conditioning").get<bool>();
    if (model.has_conditioning) {
        const auto& cj = header.at("conditioning");
        cond::ConditioningConfig cfg;
        cfg.fourier_bands = cj.at("fourier_bands").get<int>();
        cfg.hidden = cj.at("hidden").get<int>();
        cfg.embed_dim = cj.at("embed_dim").get<int>();
        cfg.probe_samples = cj.at("probe_samples").get<int>();
        cfg.occupancy_resolution = cj.at("occupancy_resolution").get<int>();
        cfg.nearest_lookup = cj.at("nearest_lookup").get<bool>();
        cfg.mode = cond::conditioning_mode_from_name(cj.at("mode").get<std::string>());
        const auto& b = cj.at("occupancy_bounds");
        model.conditioning =
            cond::init_conditioning(cfg, model.scene.l_max, model.scene.channels,
                                    {{b[0], b[1], b[2]}, {b[3], b[4], b[5]}}, 0);
        model.conditioning.occupancy.resolution = cfg.occupancy_resolution;
        model.conditioning.occupancy.bounds = {{b[0], b[1], b[2]}, {b[3], b[4], b[5]}};
    }

    // Read arrays at their manifest offsets.
    const std::streampos data_start = in.tellg();
    auto read_array = [&](const nlohmann::json& entry, std::vector<double>& dst) {
        std::vector<std::size_t> shape;
        for (const auto& s : entry.at("shape")) shape.push_back(s.get<std::size_t>());
        dst.resize(element_count(shape));
        in.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<std::size_t>()));
        in.read(reinterpret_cast<char*>(dst.data()),
                static_cast<std::streamsize>(dst.size() * sizeof(double)));
        if (!in) throw IoError("load_checkpoint: truncated array '" +
                               entry.at("name").get<std::string>() + "'");
    };

    for (const auto& entry : header.at("arrays")) {
        const std::string name = entry.at("name").get<std::string>();
        if (entry.at("dtype").get<std::string>() != "f64")
            throw IoError("load_checkpoint: unsupported dtype for '" + name + "'");
        auto& scene = model.scene;
        auto& c = model.conditioning;
        if (name == "positions") read_array(entry, scene.positions);
        else if (name == "log_scales") read_array(entry, scene.log_scales);
        else if (name == "quaternions") read_array(entry, scene.quaternions);
        else if (name == "tau_logits") read_array(entry, scene.tau_logits);
        else if (name == "fle_coeffs") read_array(entry, scene.fle_coeffs);
        else if (name == "cond.fourier_freqs") read_array(entry, c.fourier_freqs);
        else if (name == "cond.global.w1") read_array(entry, c.global_mlp.l1.w);
        else if (name == "cond.global.b1") read_array(entry, c.global_mlp.l1.b);
        else if (name == "cond.global.w2") read_array(entry, c.global_mlp.l2.w);
        else if (name == "cond.global.b2") read_array(entry, c.global_mlp.l2.b);
        else if (name == "cond.global.w3") read_array(entry, c.global_mlp.l3.w);
        else if (name == "cond.global.b3") read_array(entry, c.global_mlp.l3.b);
        else if (name == "cond.component_embed") read_array(entry, c.component_embed);
        else if (name == "cond.local.w1") read_array(entry, c.local_mlp.l1.w);
        else if (name == "cond.local.b1") read_array(entry, c.local_mlp.l1.b);
        else if (name == "cond.local.w2") read_array(entry, c.local_mlp.l2.w);
        else if (name == "cond.local.b2") read_array(entry, c.local_mlp.l2.b);
        else if (name == "cond.local.w3") read_array(entry, c.local_mlp.l3.w);
        else if (name == "cond.local.b3") read_array(entry, c.local_mlp.l3.b);
        else if (name == "cond.occupancy") read_array(entry, c.occupancy.densities);
        else throw IoError("load_checkpoint: unknown array '" + name + "'");
    }
    model.scene.validate();
    return model;
}

}  // namespace rxgs::io
