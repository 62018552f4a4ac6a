#pragma once

// Labelled image/beam samples: generation from scene + render + wireless,
// the VWDR container, splits, subsampling and scenario filtering.
//
// VWDR layout (little endian):
//   0   4  magic "VWDR"
//   4   2  version (1)
//   6   2  flags (bit 0: images stored as u8)
//   8   4  record count U
//   12  4  record size in bytes
//   16  4  manifest length L
//   20  L  manifest, UTF-8 JSON
//   ..     U records:
//            u16 label, u16 bs_id, u16 trajectory_id, u8 camera, u8 reserved,
//            u32 step, f64 drone x, y, z, f64 los_u, then W*H*C image bytes
//            (channel-planar, row-major)
//   end-32 32  SHA-256 of every preceding byte
// The manifest's content_hash is the SHA-256 of the record bytes alone.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "beamvista/binio.hpp"
#include "beamvista/error.hpp"
#include "beamvista/render.hpp"
#include "beamvista/rng.hpp"
#include "beamvista/scene.hpp"
#include "beamvista/wireless.hpp"

namespace beamvista::dataset {

using Vec3 = Eigen::Vector3d;

inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kRecordHeaderBytes = 44;

enum class Scenario { bs1, bs2, combined };

inline Scenario parse_scenario(const std::string& s) {
    if (s == "bs1" || s == "BS1") return Scenario::bs1;
    if (s == "bs2" || s == "BS2") return Scenario::bs2;
    if (s == "combined") return Scenario::combined;
    throw ConfigError("unknown scenario '" + s + "' (expected bs1, bs2 or combined)");
}

inline const char* to_string(Scenario s) {
    switch (s) {
        case Scenario::bs1: return "bs1";
        case Scenario::bs2: return "bs2";
        case Scenario::combined: return "combined";
    }
    return "combined";
}

struct Sample {
    std::vector<std::uint8_t> pixels;  // C x H x W, quantized
    int label = 0;
    int bs_id = 1;
    int trajectory_id = 0;
    int step = 0;
    int camera = 0;
    Vec3 drone_pos = Vec3::Zero();
    double los_u = 0.0;

    render::Image image(int width, int height, int channels) const {
        render::Image img(width, height, channels);
        for (std::size_t i = 0; i < pixels.size(); ++i) img.data[i] = pixels[i] / 255.0f;
        return img;
    }

    bool operator==(const Sample&) const = default;
};

struct Manifest {
    std::uint64_t num_samples = 0;
    int num_beams = 0;
    int width = 0;
    int height = 0;
    int channels = 3;
    std::uint64_t seed = 0;
    std::uint64_t count_bs1 = 0;
    std::uint64_t count_bs2 = 0;
    std::uint64_t discarded = 0;
    std::string content_hash;

    std::uint64_t count_combined() const { return count_bs1 + count_bs2; }
    std::size_t image_bytes() const { return std::size_t(width) * height * channels; }

    nlohmann::json to_json() const {
        return {{"format", "VWDR"},
                {"version", kFormatVersion},
                {"num_samples", num_samples},
                {"num_beams", num_beams},
                {"width", width},
                {"height", height},
                {"channels", channels},
                {"seed", seed},
                {"counts", {{"bs1", count_bs1}, {"bs2", count_bs2}, {"combined", count_combined()}}},
                {"discarded", discarded},
                {"content_hash", content_hash}};
    }

    static Manifest from_json(const nlohmann::json& j) {
        Manifest m;
        m.num_samples = j.at("num_samples").get<std::uint64_t>();
        m.num_beams = j.at("num_beams").get<int>();
        m.width = j.at("width").get<int>();
        m.height = j.at("height").get<int>();
        m.channels = j.at("channels").get<int>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.count_bs1 = j.at("counts").at("bs1").get<std::uint64_t>();
        m.count_bs2 = j.at("counts").at("bs2").get<std::uint64_t>();
        m.discarded = j.at("discarded").get<std::uint64_t>();
        m.content_hash = j.at("content_hash").get<std::string>();
        return m;
    }
};

struct Dataset {
    Manifest manifest;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
};

// Everything besides the world and trajectories needed to label and render.
struct BuildConfig {
    wireless::OfdmConfig ofdm;
    wireless::TxConfig tx;
    scene::PropagationConfig propagation;
    int num_beams = 64;
    std::vector<render::CameraConfig> cameras = render::default_cameras();
    int threads = 1;
};

namespace detail {

inline std::uint64_t path_seed(std::uint64_t seed, int trajectory_id, int step, int bs_id) {
    return derive_seed(seed, {0xbea3, std::uint64_t(trajectory_id), std::uint64_t(step), std::uint64_t(bs_id)});
}

// Largest noiseless LOS-only beam gain towards the drone.
inline double los_gain(const scene::Basestation& bs, const Vec3& drone, const BuildConfig& cfg,
                       const wireless::Codebook& cb) {
    auto prop = cfg.propagation;
    prop.reflection_coefficient = 0.0;
    const auto paths = scene::paths_between(bs, drone, prop, 0);
    std::vector<wireless::Path> los{paths.front()};
    los.front().gain = std::abs(los.front().gain);
    const auto ch = wireless::channel_from_paths(los, bs.ula, cfg.ofdm);
    return wireless::optimal_beam(ch, cb, cfg.tx).gain;
}

inline std::uint8_t quantize(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace detail

// Serving basestation: strongest achievable LOS beam gain, lowest id on ties.
inline const scene::Basestation& serving_basestation(const scene::World& world, const Vec3& drone,
                                                     const BuildConfig& cfg,
                                                     const wireless::Codebook& cb) {
    const scene::Basestation* best = nullptr;
    double best_gain = -1.0;
    for (const auto& bs : world.basestations) {
        const double g = detail::los_gain(bs, drone, cfg, cb);
        if (g > best_gain || (g == best_gain && best && bs.id < best->id)) {
            best = &bs;
            best_gain = g;
        }
    }
    return *best;
}

// Optimal-beam label for a drone position served by `bs`.
inline int label_for(const scene::Basestation& bs, const Vec3& drone, int trajectory_id, int step,
                     const BuildConfig& cfg, const wireless::Codebook& cb, std::uint64_t seed) {
    const auto paths = scene::paths_between(bs, drone, cfg.propagation,
                                            detail::path_seed(seed, trajectory_id, step, bs.id));
    const auto ch = wireless::channel_from_paths(paths, bs.ula, cfg.ofdm);
    return wireless::optimal_beam(ch, cb, cfg.tx).index;
}

inline void validate(const scene::World& world, const BuildConfig& cfg) {
    cfg.ofdm.validate();
    cfg.tx.validate();
    cfg.propagation.validate();
    if (cfg.tx.noise_variance <= 0.0) throw ConfigError("labelling needs a positive noise variance");
    if (cfg.num_beams < 1 || cfg.num_beams > 65535) throw ConfigError("beam count must be in [1, 65535]");
    if (cfg.propagation.max_delay > cfg.ofdm.cyclic_prefix)
        throw ConfigError("propagation max delay exceeds the cyclic prefix");
    if (world.basestations.empty()) throw ConfigError("world has no basestations");
    const int m = world.basestations.front().ula.num_antennas;
    for (const auto& bs : world.basestations) {
        bs.ula.validate();
        if (bs.ula.num_antennas != m) throw ConfigError("basestations disagree on antenna count");
    }
    if (cfg.cameras.empty()) throw ConfigError("no cameras configured");
    for (const auto& c : cfg.cameras) {
        c.validate();
        if (c.width != cfg.cameras.front().width || c.height != cfg.cameras.front().height)
            throw ConfigError("all cameras must share one resolution");
    }
}

inline Dataset build_dataset(const scene::World& world, const std::vector<scene::Trajectory>& trajectories,
                             const BuildConfig& cfg, std::uint64_t seed) {
    validate(world, cfg);
    const auto& ula = world.basestations.front().ula;
    const wireless::Codebook cb = wireless::build_codebook(ula, cfg.num_beams);
    const auto& cam0 = cfg.cameras.front();

    struct Chunk {
        std::vector<Sample> samples;
        std::uint64_t discarded = 0;
    };
    std::vector<Chunk> chunks(trajectories.size());

    auto run = [&](std::size_t ti) {
        const auto& traj = trajectories[ti];
        auto& out = chunks[ti];
        for (int t = 0; t < traj.num_steps; ++t) {
            const Vec3 drone = scene::drone_state(traj, t);
            const auto& bs = serving_basestation(world, drone, cfg, cb);
            int mount;
            try {
                mount = render::select_camera(drone, bs.position, cfg.cameras);
            } catch (const VisibilityError&) {
                ++out.discarded;
                continue;
            }
            const auto objects = scene::world_at(world, static_cast<long long>(traj.time_offset) + t);
            const auto img = render::render_frame(objects, drone, render::camera_by_mount(cfg.cameras, mount));
            Sample s;
            s.pixels.resize(img.data.size());
            std::transform(img.data.begin(), img.data.end(), s.pixels.begin(), detail::quantize);
            s.label = label_for(bs, drone, traj.id, t, cfg, cb, seed);
            s.bs_id = bs.id;
            s.trajectory_id = traj.id;
            s.step = t;
            s.camera = mount;
            s.drone_pos = drone;
            s.los_u = scene::direction_cosine(bs.position, drone, bs.ula.axis);
            out.samples.push_back(std::move(s));
        }
    };

    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(cfg.threads, trajectories.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < trajectories.size(); ++i) run(i);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < trajectories.size(); i += workers) run(i);
            });
        for (auto& th : pool) th.join();
    }

    Dataset ds;
    ds.manifest.num_beams = cfg.num_beams;
    ds.manifest.width = cam0.width;
    ds.manifest.height = cam0.height;
    ds.manifest.channels = cam0.channels;
    ds.manifest.seed = seed;
    for (auto& c : chunks) {
        ds.manifest.discarded += c.discarded;
        for (auto& s : c.samples) {
            (s.bs_id == 1 ? ds.manifest.count_bs1 : ds.manifest.count_bs2)++;
            ds.samples.push_back(std::move(s));
        }
    }
    ds.manifest.num_samples = ds.samples.size();
    return ds;
}

namespace detail {

inline std::size_t record_size(const Manifest& m) { return kRecordHeaderBytes + m.image_bytes(); }

inline void write_record(binio::Writer& w, const Sample& s) {
    w.u16(static_cast<std::uint16_t>(s.label));
    w.u16(static_cast<std::uint16_t>(s.bs_id));
    w.u16(static_cast<std::uint16_t>(s.trajectory_id));
    w.u8(static_cast<std::uint8_t>(s.camera));
    w.u8(0);
    w.u32(static_cast<std::uint32_t>(s.step));
    w.f64(s.drone_pos.x());
    w.f64(s.drone_pos.y());
    w.f64(s.drone_pos.z());
    w.f64(s.los_u);
    w.bytes(s.pixels);
}

inline Sample read_record(binio::Reader& r, std::size_t image_bytes) {
    Sample s;
    s.label = r.u16();
    s.bs_id = r.u16();
    s.trajectory_id = r.u16();
    s.camera = r.u8();
    r.u8();
    s.step = static_cast<int>(r.u32());
    const double x = r.f64();
    const double y = r.f64();
    const double z = r.f64();
    s.drone_pos = {x, y, z};
    s.los_u = r.f64();
    auto px = r.bytes(image_bytes);
    s.pixels.assign(px.begin(), px.end());
    return s;
}

}  // namespace detail

// Hash of the record section; the identity of a dataset's contents.
inline std::string content_hash(const Dataset& ds) {
    binio::Writer w;
    for (const auto& s : ds.samples) detail::write_record(w, s);
    return binio::to_hex(binio::sha256(w.buffer()));
}

inline std::vector<std::uint8_t> encode(Dataset& ds) {
    auto& m = ds.manifest;
    m.num_samples = ds.samples.size();
    for (const auto& s : ds.samples) {
        if (s.pixels.size() != m.image_bytes()) throw ShapeError("sample image size does not match manifest");
        if (s.label < 0 || s.label >= m.num_beams) throw LabelError("sample label outside [0, Q)");
    }
    binio::Writer records;
    for (const auto& s : ds.samples) detail::write_record(records, s);
    m.content_hash = binio::to_hex(binio::sha256(records.buffer()));

    const std::string manifest = m.to_json().dump();
    binio::Writer w;
    w.text("VWDR");
    w.u16(kFormatVersion);
    w.u16(0x1);
    w.u32(static_cast<std::uint32_t>(m.num_samples));
    w.u32(static_cast<std::uint32_t>(detail::record_size(m)));
    w.u32(static_cast<std::uint32_t>(manifest.size()));
    w.text(manifest);
    w.bytes(records.buffer());
    const auto digest = binio::sha256(w.buffer());
    w.bytes(digest);
    return std::move(w.buffer());
}

inline Dataset decode(std::span<const std::uint8_t> data) {
    if (data.size() < 20 + 32) throw CorruptionError("dataset file is truncated");
    const auto body = data.first(data.size() - 32);
    const auto stored = data.last(32);
    const auto digest = binio::sha256(body);
    if (!std::equal(digest.begin(), digest.end(), stored.begin()))
        throw CorruptionError("dataset hash mismatch");

    binio::Reader r(body);
    if (r.text(4) != "VWDR") throw FormatError("not a VWDR dataset");
    const auto version = r.u16();
    if (version != kFormatVersion)
        throw FormatError("unsupported VWDR version " + std::to_string(version));
    const auto flags = r.u16();
    if ((flags & 0x1) == 0) throw FormatError("only u8 image storage is supported");
    const auto count = r.u32();
    const auto rec_size = r.u32();
    const auto manifest_len = r.u32();

    Dataset ds;
    try {
        ds.manifest = Manifest::from_json(nlohmann::json::parse(r.text(manifest_len)));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("bad dataset manifest: ") + e.what());
    }
    const auto& m = ds.manifest;
    if (m.num_samples != count || rec_size != detail::record_size(m))
        throw CorruptionError("dataset header disagrees with manifest");
    if (r.remaining() != std::size_t(count) * rec_size) throw CorruptionError("dataset record section has wrong size");

    const auto record_bytes = body.subspan(r.position());
    const auto rec_digest = binio::sha256(record_bytes);
    if (binio::to_hex(rec_digest) != m.content_hash) throw CorruptionError("dataset content hash mismatch");

    ds.samples.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        ds.samples.push_back(detail::read_record(r, m.image_bytes()));
        if (ds.samples.back().label >= m.num_beams) throw LabelError("stored label outside [0, Q)");
    }
    return ds;
}

inline void save_dataset(Dataset& ds, const std::filesystem::path& path) {
    const auto bytes = encode(ds);
    binio::write_file_atomic(path, bytes);
}

inline Dataset load_dataset(const std::filesystem::path& path) { return decode(binio::read_file(path)); }

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    double ratio = 0.7;
};

inline std::size_t train_count(std::size_t n, double ratio) {
    return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
}

// Seeded shuffle of indices, then the first ceil(ratio * n) go to training.
inline Split split_indices(std::vector<std::size_t> indices, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw InputDomainError("split ratio must be in (0, 1)");
    Rng rng(derive_seed(seed, {0x5b1d}));
    rng.shuffle(std::span(indices));
    Split s;
    s.ratio = ratio;
    const std::size_t n_train = train_count(indices.size(), ratio);
    s.train.assign(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(indices.begin() + static_cast<std::ptrdiff_t>(n_train), indices.end());
    return s;
}

inline Split split_dataset(std::size_t num_samples, double ratio, std::uint64_t seed) {
    std::vector<std::size_t> idx(num_samples);
    for (std::size_t i = 0; i < num_samples; ++i) idx[i] = i;
    return split_indices(std::move(idx), ratio, seed);
}

// Whole trajectories go to one side; trajectories are taken in shuffled
// order until the training side holds at least ceil(ratio * n) samples.
inline Split split_by_trajectory(const Dataset& ds, const std::vector<std::size_t>& indices, double ratio,
                                 std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw InputDomainError("split ratio must be in (0, 1)");
    std::vector<int> ids;
    for (auto i : indices) ids.push_back(ds.samples[i].trajectory_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    Rng rng(derive_seed(seed, {0x7b1d}));
    rng.shuffle(std::span(ids));
    const std::size_t target = train_count(indices.size(), ratio);
    std::vector<int> train_ids;
    std::size_t have = 0;
    for (int id : ids) {
        if (have >= target) break;
        train_ids.push_back(id);
        for (auto i : indices) have += ds.samples[i].trajectory_id == id;
    }
    Split s;
    s.ratio = ratio;
    for (auto i : indices) {
        const bool tr = std::find(train_ids.begin(), train_ids.end(), ds.samples[i].trajectory_id) != train_ids.end();
        (tr ? s.train : s.val).push_back(i);
    }
    return s;
}

// floor(fraction * n) indices drawn without replacement, in drawn order.
inline std::vector<std::size_t> subsample(std::vector<std::size_t> indices, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InputDomainError("fraction must be in (0, 1]");
    if (fraction == 1.0) return indices;
    const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(indices.size()) + 1e-9));
    Rng rng(derive_seed(seed, {0x5ab5}));
    // Partial Fisher-Yates: the first n slots become the sample.
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(indices.size() - i));
        std::swap(indices[i], indices[j]);
    }
    indices.resize(n);
    return indices;
}

// Indices of the samples belonging to a scenario, in dataset order.
inline std::vector<std::size_t> filter_scenario(const Dataset& ds, Scenario scenario) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const int id = ds.samples[i].bs_id;
        if (scenario == Scenario::combined || (scenario == Scenario::bs1 && id == 1) ||
            (scenario == Scenario::bs2 && id == 2))
            out.push_back(i);
    }
    return out;
}

}  // namespace beamvista::dataset
