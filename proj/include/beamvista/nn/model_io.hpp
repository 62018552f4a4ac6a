#pragma once

// VWNN model container, little-endian:
//   "VWNN" | u16 version | u16 dtype (1 = f32) | u32 descriptor length
//   descriptor JSON: {"architecture", "normalization", "meta"}
//   u64 parameter count | f32 parameters in layer order
//   SHA-256 of everything above (32 bytes)

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "beamvista/binio.hpp"
#include "beamvista/error.hpp"
#include "beamvista/nn/network.hpp"
#include "beamvista/nn/train.hpp"

namespace beamvista::nn {

inline constexpr std::uint16_t kModelVersion = 1;
inline constexpr std::uint16_t kDtypeF32 = 1;

struct Model {
    Network<float> net;
    Normalization norm;
    nlohmann::json meta = nlohmann::json::object();
};

inline std::vector<std::uint8_t> parameter_blob(Network<float>& net) {
    binio::Writer w;
    for (float v : net.flat_params()) w.f32(v);
    return std::move(w.buffer());
}

inline std::vector<std::uint8_t> encode_model(Model& m) {
    const nlohmann::json desc{{"architecture", describe(m.net)},
                              {"normalization", {{"mean", m.norm.mean}, {"std", m.norm.stddev}}},
                              {"meta", m.meta}};
    const std::string text = desc.dump();
    binio::Writer w;
    w.text("VWNN");
    w.u16(kModelVersion);
    w.u16(kDtypeF32);
    w.u32(static_cast<std::uint32_t>(text.size()));
    w.text(text);
    const auto params = m.net.flat_params();
    w.u64(params.size());
    for (float v : params) w.f32(v);
    const auto digest = binio::sha256(w.buffer());
    w.bytes(digest);
    return std::move(w.buffer());
}

inline Model decode_model(std::span<const std::uint8_t> data) {
    if (data.size() < 4 + 2 + 2 + 4 + 8 + 32) throw CorruptionError("model file too short");
    const auto body = data.first(data.size() - 32);
    const auto digest = binio::sha256(body);
    if (!std::equal(digest.begin(), digest.end(), data.end() - 32)) throw CorruptionError("model hash mismatch");
    binio::Reader r(body);
    if (r.text(4) != "VWNN") throw FormatError("not a VWNN model file");
    if (const auto v = r.u16(); v != kModelVersion) throw FormatError("unsupported model version " + std::to_string(v));
    if (r.u16() != kDtypeF32) throw FormatError("unsupported parameter dtype");
    const std::uint32_t len = r.u32();
    Model m;
    nlohmann::json desc;
    try {
        desc = nlohmann::json::parse(r.text(len));
        m.norm.mean = desc.at("normalization").at("mean").get<std::vector<double>>();
        m.norm.stddev = desc.at("normalization").at("std").get<std::vector<double>>();
        m.meta = desc.value("meta", nlohmann::json::object());
        m.net = from_description<float>(desc.at("architecture"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad model descriptor: ") + e.what());
    }
    if (m.norm.mean.size() != m.norm.stddev.size() ||
        (!m.norm.empty() && static_cast<int>(m.norm.mean.size()) != m.net.input_shape[0]))
        throw FormatError("normalization stats do not match the input channels");
    const std::uint64_t n = r.u64();
    if (n != m.net.num_params()) throw FormatError("parameter count does not match the architecture");
    if (r.remaining() != n * 4) throw FormatError("parameter blob size mismatch");
    std::vector<float> params(n);
    for (auto& v : params) v = r.f32();
    m.net.set_flat_params(params);
    return m;
}

inline void save_model(Model& m, const std::filesystem::path& path) {
    binio::write_file_atomic(path, encode_model(m));
}

inline Model load_model(const std::filesystem::path& path) { return decode_model(binio::read_file(path)); }

}  // namespace beamvista::nn
