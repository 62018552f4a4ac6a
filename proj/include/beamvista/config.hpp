#pragma once

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <string_view>
#include <type_traits>
#include <string>
#include <vector>

#include "beamvista/dataset.hpp"
#include "beamvista/error.hpp"
#include "beamvista/eval.hpp"
#include "beamvista/nn/network.hpp"
#include "beamvista/nn/train.hpp"
#include "beamvista/pruning.hpp"
#include "beamvista/rng.hpp"
#include "beamvista/scene.hpp"

namespace beamvista::config {

struct TrajectoryConfig {
    int count = 17;
    int total_steps = 6735;
};

struct RenderConfig {
    int width = 64;
    int height = 64;
    double fov_degrees = 80.0;
    double tilt_degrees = 45.0;
    std::vector<int> mounts{1, 2, 3};
};

struct DatasetConfig {
    double split_ratio = 0.7;
    bool split_by_trajectory = false;
};

struct EvalConfig {
    std::vector<int> ks{1, 2, 3};
    std::vector<eval::Range> ranges;  // empty: four equal bins
    std::vector<double> fractions{0.1, 0.25, 0.5, 0.75, 1.0};
    int locality_window = 3;
    int bench_trials = 30;
    std::vector<int> bench_batch_sizes{1, 10};
};

// Stage identifiers for seed derivation.
enum class Stage : std::uint64_t { world = 1, trajectories, dataset, split, init, train, prune, sweep };

struct RunConfig {
    std::optional<std::uint64_t> seed;
    scene::WorldConfig world;
    TrajectoryConfig trajectories;
    wireless::UlaConfig ula;
    dataset::BuildConfig build;
    RenderConfig render;
    DatasetConfig data;
    nn::DroneNetConfig model;
    nn::TrainConfig train;
    pruning::PruneConfig prune;
    EvalConfig eval;

    int num_beams() const { return build.num_beams; }

    std::uint64_t stage_seed(Stage s) const {
        if (!seed) throw ConfigError("no seed resolved");
        return derive_seed(*seed, {static_cast<std::uint64_t>(s)});
    }

    std::vector<eval::Range> ranges() const {
        return eval.ranges.empty() ? eval::default_ranges(num_beams()) : eval.ranges;
    }

    // Camera list for the render section.
    std::vector<render::CameraConfig> cameras() const {
        std::vector<render::CameraConfig> out;
        for (const auto& c : render::default_cameras(render.width, render.height, render.fov_degrees, render.tilt_degrees))
            for (int m : render.mounts)
                if (c.mount_index == m) out.push_back(c);
        return out;
    }

    // Pushes shared values into dependent sections.
    void sync() {
        world.num_antennas = ula.num_antennas;
        build.propagation.max_delay = build.ofdm.cyclic_prefix;
        build.cameras = cameras();
        model.num_beams = build.num_beams;
        model.channels = 3;
        model.height = render.height;
        model.width = render.width;
    }

    void validate() const {
        world.validate();
        ula.validate();
        build.ofdm.validate();
        build.tx.validate();
        build.tx.snr();
        build.propagation.validate();
        if (trajectories.count < 1) throw ConfigError("trajectories.count must be positive");
        if (trajectories.total_steps < trajectories.count)
            throw ConfigError("trajectories.total_steps must be at least trajectories.count");
        if (build.num_beams < 1) throw ConfigError("wireless.beams must be positive");
        if (world.num_antennas != ula.num_antennas) throw ConfigError("world and wireless antenna counts differ");
        if (model.num_beams != build.num_beams) throw ConfigError("classifier width must equal the codebook size");
        if (render.mounts.empty()) throw ConfigError("render.mounts is empty");
        std::set<int> seen;
        for (int m : render.mounts)
            if (m < 1 || m > 3 || !seen.insert(m).second) throw ConfigError("render.mounts must be distinct values in 1..3");
        for (const auto& c : build.cameras) c.validate();
        if (!(data.split_ratio > 0 && data.split_ratio < 1)) throw ConfigError("dataset.split_ratio must lie in (0, 1)");
        try {
            train.validate();
            prune.validate();
        } catch (const InputDomainError& e) {
            throw ConfigError(e.what());
        }
        for (int k : eval.ks)
            if (k < 1 || k > build.num_beams) throw ConfigError("eval.k values must lie in [1, Q]");
        if (!eval.ranges.empty()) eval::validate_ranges(eval.ranges, build.num_beams);
        for (std::size_t i = 0; i < eval.fractions.size(); ++i)
            if (!(eval.fractions[i] > 0 && eval.fractions[i] <= 1) ||
                (i > 0 && eval.fractions[i] <= eval.fractions[i - 1]))
                throw ConfigError("eval.fractions must be increasing values in (0, 1]");
        if (eval.locality_window < 0) throw ConfigError("eval.locality_window must be non-negative");
        if (eval.bench_trials < 30) throw ConfigError("eval.bench_trials must be at least 30");
        for (int b : eval.bench_batch_sizes)
            if (b < 1) throw ConfigError("eval.bench_batch_sizes must be positive");
    }

    // CLI seed wins over the config seed; deterministic runs need one of them.
    void resolve_seed(std::optional<std::uint64_t> cli_seed, bool deterministic) {
        if (cli_seed) seed = cli_seed;
        if (!seed) {
            if (deterministic) throw ConfigError("deterministic mode requires a seed (config 'seed' or --seed)");
            seed = std::random_device{}() | (std::uint64_t(std::random_device{}()) << 32);
        }
        if (deterministic) {
            train.threads = 1;
            build.threads = 1;
        }
    }
};

namespace detail {

class Section {
public:
    Section(const toml::table* t, std::string name) : t_(t), name_(std::move(name)) {}

    template <typename V>
    void get(const char* key, V& out) {
        used_.insert(key);
        if (!t_) return;
        const toml::node* n = t_->get(key);
        if (!n) return;
        if constexpr (std::is_same_v<V, bool>) {
            auto v = n->value<bool>();
            if (!v) fail(key, "a boolean");
            out = *v;
        } else if constexpr (std::is_integral_v<V>) {
            auto v = n->value<std::int64_t>();
            if (!v || !n->is_integer()) fail(key, "an integer");
            if (std::is_unsigned_v<V> && *v < 0) fail(key, "a non-negative integer");
            out = static_cast<V>(*v);
        } else if constexpr (std::is_floating_point_v<V>) {
            auto v = n->value<double>();
            if (!v) fail(key, "a number");
            out = *v;
        } else if constexpr (std::is_same_v<V, std::string>) {
            auto v = n->value<std::string>();
            if (!v) fail(key, "a string");
            out = *v;
        } else {
            const toml::array* a = n->as_array();
            if (!a) fail(key, "an array");
            out.clear();
            for (const auto& e : *a) {
                typename V::value_type x{};
                if constexpr (std::is_integral_v<typename V::value_type>) {
                    auto v = e.value<std::int64_t>();
                    if (!v || !e.is_integer()) fail(key, "an array of integers");
                    x = static_cast<typename V::value_type>(*v);
                } else {
                    auto v = e.value<double>();
                    if (!v) fail(key, "an array of numbers");
                    x = *v;
                }
                out.push_back(x);
            }
        }
    }

    void vec3(const char* key, scene::Vec3& out) {
        std::vector<double> v{out.x(), out.y(), out.z()};
        get(key, v);
        if (v.size() != 3) fail(key, "a 3-element array");
        out = scene::Vec3(v[0], v[1], v[2]);
    }

    void ranges(const char* key, std::vector<eval::Range>& out) {
        used_.insert(key);
        if (!t_) return;
        const toml::node* n = t_->get(key);
        if (!n) return;
        const toml::array* a = n->as_array();
        if (!a) fail(key, "an array of [lo, hi] pairs");
        out.clear();
        for (const auto& e : *a) {
            const toml::array* p = e.as_array();
            if (!p || p->size() != 2 || !(*p)[0].is_integer() || !(*p)[1].is_integer())
                fail(key, "an array of [lo, hi] pairs");
            out.push_back({static_cast<int>(*(*p)[0].value<std::int64_t>()), static_cast<int>(*(*p)[1].value<std::int64_t>())});
        }
    }

    void finish() const {
        if (!t_) return;
        for (const auto& [k, v] : *t_)
            if (!used_.count(std::string(k.str())))
                throw ConfigError("unknown key '" + std::string(k.str()) + "' in [" + name_ + "]");
    }

private:
    [[noreturn]] void fail(const char* key, const char* what) const {
        throw ConfigError("[" + name_ + "] " + key + " must be " + what);
    }

    const toml::table* t_;
    std::string name_;
    std::set<std::string> used_;
};

}  // namespace detail

inline RunConfig from_toml(const toml::table& root) {
    static const std::set<std::string> sections{"world", "trajectories", "wireless", "render", "dataset",
                                                "model", "train",        "prune",    "eval"};
    for (const auto& [k, v] : root) {
        const std::string key(k.str());
        if (key == "seed") continue;
        if (!sections.count(key) || !v.is_table()) throw ConfigError("unknown top-level key '" + key + "'");
    }
    RunConfig c;
    if (const auto* s = root.get("seed")) {
        auto v = s->value<std::int64_t>();
        if (!v || !s->is_integer() || *v < 0) throw ConfigError("seed must be a non-negative integer");
        c.seed = static_cast<std::uint64_t>(*v);
    }
    auto sec = [&](const char* name) { return detail::Section(root[name].as_table(), name); };

    auto w = sec("world");
    w.get("street_x_min", c.world.street_x_min);
    w.get("street_x_max", c.world.street_x_max);
    w.get("street_half_width", c.world.street_half_width);
    w.vec3("bs1_position", c.world.bs1_position);
    w.vec3("bs2_position", c.world.bs2_position);
    w.get("marker_size", c.world.marker_size);
    w.get("vehicles", c.world.num_vehicles);
    w.get("buildings", c.world.num_buildings);
    w.finish();

    auto t = sec("trajectories");
    t.get("count", c.trajectories.count);
    t.get("total_steps", c.trajectories.total_steps);
    t.finish();

    auto wl = sec("wireless");
    wl.get("antennas", c.ula.num_antennas);
    wl.get("element_spacing", c.ula.element_spacing);
    wl.get("subcarriers", c.build.ofdm.num_subcarriers);
    wl.get("cyclic_prefix", c.build.ofdm.cyclic_prefix);
    wl.get("beams", c.build.num_beams);
    wl.get("symbol_power", c.build.tx.symbol_power);
    wl.get("noise_variance", c.build.tx.noise_variance);
    wl.get("reflection_coefficient", c.build.propagation.reflection_coefficient);
    wl.get("reference_gain", c.build.propagation.reference_gain);
    wl.get("tap_length_m", c.build.propagation.tap_length_m);
    wl.finish();

    auto r = sec("render");
    r.get("width", c.render.width);
    r.get("height", c.render.height);
    r.get("fov_degrees", c.render.fov_degrees);
    r.get("tilt_degrees", c.render.tilt_degrees);
    r.get("mounts", c.render.mounts);
    r.finish();

    auto d = sec("dataset");
    d.get("split_ratio", c.data.split_ratio);
    d.get("split_by_trajectory", c.data.split_by_trajectory);
    d.finish();

    auto m = sec("model");
    std::string head = "flatten", stem = "strided";
    m.get("head", head);
    m.get("stem", stem);
    m.finish();
    c.model.head = nn::parse_head(head);
    c.model.stem = nn::parse_stem(stem);

    auto tr = sec("train");
    tr.get("batch_size", c.train.batch_size);
    tr.get("learning_rate", c.train.learning_rate);
    tr.get("weight_decay", c.train.weight_decay);
    tr.get("lr_decay_epochs", c.train.lr_decay_epochs);
    tr.get("lr_factor", c.train.lr_factor);
    tr.get("epochs", c.train.epochs);
    tr.get("threads", c.train.threads);
    tr.finish();

    auto p = sec("prune");
    std::string policy = "coupled";
    p.get("ratio", c.prune.ratio);
    p.get("finetune_epochs", c.prune.finetune_epochs);
    p.get("finetune_lr", c.prune.finetune_lr);
    p.get("policy", policy);
    p.finish();
    c.prune.policy = pruning::parse_policy(policy);

    auto e = sec("eval");
    e.get("k", c.eval.ks);
    e.ranges("ranges", c.eval.ranges);
    e.get("fractions", c.eval.fractions);
    e.get("locality_window", c.eval.locality_window);
    e.get("bench_trials", c.eval.bench_trials);
    e.get("bench_batch_sizes", c.eval.bench_batch_sizes);
    e.finish();

    c.sync();
    c.validate();
    return c;
}

inline RunConfig parse(std::string_view text, std::string_view source = "config") {
    try {
        return from_toml(toml::parse(text, source));
    } catch (const toml::parse_error& err) {
        throw ConfigError(std::string(source) + ": " + std::string(err.description()) + " at line " +
                          std::to_string(err.source().begin.line));
    }
}

inline RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(text, path.string());
}

// Defaults as if from an empty file.
inline RunConfig defaults() { return parse(""); }

}  // namespace beamvista::config
