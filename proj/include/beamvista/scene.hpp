#pragma once

// Synthetic downtown street: basestations, drone fly-overs, traffic and
// buildings, plus LOS / ground-bounce path extraction between a basestation
// and the drone.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "beamvista/error.hpp"
#include "beamvista/rng.hpp"
#include "beamvista/wireless.hpp"

namespace beamvista::scene {

using Vec3 = Eigen::Vector3d;
using Rgb = std::array<double, 3>;

inline constexpr double kDroneHeight = 50.0;
inline constexpr double kTrajectoryYMin = -5.625;
inline constexpr double kTrajectoryYMax = 1.875;
inline constexpr Rgb kMarkerColor{1.0, 0.0, 1.0};

enum class ObjectKind { car, bus, truck, building, basestation_marker };

inline const char* to_string(ObjectKind k) {
    switch (k) {
        case ObjectKind::car: return "car";
        case ObjectKind::bus: return "bus";
        case ObjectKind::truck: return "truck";
        case ObjectKind::building: return "building";
        case ObjectKind::basestation_marker: return "basestation_marker";
    }
    return "unknown";
}

struct Box {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();

    Vec3 center() const { return 0.5 * (min + max); }
    Vec3 extent() const { return max - min; }

    std::array<Vec3, 8> corners() const {
        std::array<Vec3, 8> c;
        for (int i = 0; i < 8; ++i)
            c[i] = Vec3((i & 1) ? max.x() : min.x(), (i & 2) ? max.y() : min.y(),
                        (i & 4) ? max.z() : min.z());
        return c;
    }
};

struct SceneObject {
    ObjectKind kind = ObjectKind::car;
    Box box;
    Vec3 velocity = Vec3::Zero();  // metres per step
    Rgb color{0.5, 0.5, 0.5};
    int basestation_id = 0;  // only for markers
};

struct Basestation {
    int id = 1;
    Vec3 position = Vec3::Zero();
    wireless::UlaConfig ula;
};

struct WorldConfig {
    double street_x_min = -100.0;
    double street_x_max = 300.0;
    double street_half_width = 12.0;
    // Two basestations 100 m apart on opposite sides of the centreline y = 0.
    Vec3 bs1_position{50.0, -14.0, 6.0};
    Vec3 bs2_position{150.0, 14.0, 6.0};
    double marker_size = 3.0;
    int num_antennas = 64;
    int num_vehicles = 24;
    int num_buildings = 16;

    void validate() const {
        if (!(street_x_max > street_x_min)) throw ConfigError("street x range is empty");
        if (!(street_half_width > 0.0)) throw ConfigError("street half width must be positive");
        if (num_vehicles < 0 || num_buildings < 0) throw ConfigError("object counts must be >= 0");
        if (!(marker_size > 0.0)) throw ConfigError("marker size must be positive");
        if (num_antennas < 1) throw ConfigError("basestation needs at least one antenna");
        for (const Vec3& p : {bs1_position, bs2_position}) {
            if (p.x() < street_x_min || p.x() > street_x_max)
                throw ConfigError("basestation outside the street x range");
        }
    }
};

struct World {
    double street_x_min = -100.0;
    double street_x_max = 300.0;
    std::vector<Basestation> basestations;
    std::vector<SceneObject> objects;
    std::uint64_t seed = 0;

    double street_length() const { return street_x_max - street_x_min; }

    const Basestation& basestation(int id) const {
        for (const auto& bs : basestations)
            if (bs.id == id) return bs;
        throw ConfigError("unknown basestation id " + std::to_string(id));
    }
};

namespace detail {

inline double color_distance(const Rgb& a, const Rgb& b) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

// Random colour per object class; magenta is reserved for basestations.
inline Rgb object_color(ObjectKind kind, Rng& rng) {
    Rgb c;
    do {
        switch (kind) {
            case ObjectKind::car:
                c = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
                break;
            case ObjectKind::bus:
                c = {rng.uniform(0.8, 1.0), rng.uniform(0.55, 0.85), rng.uniform(0.0, 0.2)};
                break;
            case ObjectKind::truck: {
                const double g = rng.uniform(0.55, 0.95);
                c = {g, g, std::min(1.0, g + rng.uniform(0.0, 0.1))};
                break;
            }
            default: {
                const double g = rng.uniform(0.3, 0.6);
                c = {g + 0.05, g, g - 0.05};
                break;
            }
        }
    } while (color_distance(c, kMarkerColor) < 0.6);
    return c;
}

inline Box box_at(const Vec3& center, const Vec3& size) {
    return {center - 0.5 * size, center + 0.5 * size};
}

}  // namespace detail

inline World generate_world(const WorldConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    World w;
    w.street_x_min = cfg.street_x_min;
    w.street_x_max = cfg.street_x_max;
    w.seed = seed;

    const std::array<Vec3, 2> positions{cfg.bs1_position, cfg.bs2_position};
    for (int i = 0; i < 2; ++i) {
        Basestation bs;
        bs.id = i + 1;
        bs.position = positions[i];
        bs.ula.num_antennas = cfg.num_antennas;
        bs.ula.axis = Vec3::UnitX();
        w.basestations.push_back(bs);
    }

    Rng rng(derive_seed(seed, {0x5ce7e}));
    const double lane_width = cfg.street_half_width / 2.0;
    const double span = cfg.street_x_max - cfg.street_x_min;

    for (int i = 0; i < cfg.num_vehicles; ++i) {
        SceneObject o;
        const double pick = rng.uniform();
        Vec3 size;
        double speed;
        if (pick < 0.6) {
            o.kind = ObjectKind::car;
            size = {4.5, 1.8, 1.5};
            speed = rng.uniform(0.8, 1.5);
        } else if (pick < 0.8) {
            o.kind = ObjectKind::bus;
            size = {12.0, 2.5, 3.2};
            speed = rng.uniform(0.5, 0.9);
        } else {
            o.kind = ObjectKind::truck;
            size = {8.0, 2.5, 3.5};
            speed = rng.uniform(0.6, 1.0);
        }
        size *= rng.uniform(0.9, 1.1);
        // Four lanes; the two with y < 0 travel towards +x.
        const int lane = static_cast<int>(rng.below(4));
        const double y = (lane - 1.5) * lane_width;
        const double x = cfg.street_x_min + size.x() / 2 + rng.uniform() * (span - size.x());
        o.box = detail::box_at({x, y, size.z() / 2}, size);
        o.velocity = {y < 0 ? speed : -speed, 0.0, 0.0};
        o.color = detail::object_color(o.kind, rng);
        w.objects.push_back(o);
    }

    for (int i = 0; i < cfg.num_buildings; ++i) {
        SceneObject o;
        o.kind = ObjectKind::building;
        const Vec3 size{rng.uniform(12.0, 30.0), rng.uniform(10.0, 20.0), rng.uniform(8.0, 30.0)};
        const double side = (i % 2 == 0) ? -1.0 : 1.0;
        const double y = side * (cfg.street_half_width + 6.0 + size.y() / 2);
        const double x = cfg.street_x_min + size.x() / 2 + rng.uniform() * (span - size.x());
        o.box = detail::box_at({x, y, size.z() / 2}, size);
        o.color = detail::object_color(o.kind, rng);
        w.objects.push_back(o);
    }

    for (const auto& bs : w.basestations) {
        SceneObject m;
        m.kind = ObjectKind::basestation_marker;
        m.box = detail::box_at(bs.position, Vec3::Constant(cfg.marker_size));
        m.color = kMarkerColor;
        m.basestation_id = bs.id;
        w.objects.push_back(m);
    }
    return w;
}

struct Trajectory {
    int id = 0;
    Vec3 start = Vec3::Zero();
    Vec3 end = Vec3::Zero();
    int num_steps = 1;
    int direction = 1;  // +1 or -1 along x
    int time_offset = 0;  // world clock at step 0
};

// One trajectory per entry of steps, each a straight fly-over at 50 m.
inline std::vector<Trajectory> generate_trajectories(const std::vector<int>& steps,
                                                     std::uint64_t seed, double x_min = -100.0,
                                                     double x_max = 300.0) {
    if (steps.empty()) throw InputDomainError("need at least one trajectory");
    if (!(x_max > x_min)) throw ConfigError("trajectory x range is empty");
    std::vector<Trajectory> out;
    out.reserve(steps.size());
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (steps[i] < 1) throw InputDomainError("trajectory needs at least one step");
        Rng rng(derive_seed(seed, {0x7a1, i}));
        Trajectory t;
        t.id = static_cast<int>(i) + 1;
        t.num_steps = steps[i];
        t.direction = rng.uniform() < 0.5 ? 1 : -1;
        const double y = rng.uniform(kTrajectoryYMin, kTrajectoryYMax);
        const Vec3 a{x_min, y, kDroneHeight};
        const Vec3 b{x_max, y, kDroneHeight};
        t.start = t.direction > 0 ? a : b;
        t.end = t.direction > 0 ? b : a;
        t.time_offset = static_cast<int>(rng.below(100000));
        out.push_back(t);
    }
    return out;
}

inline std::vector<Trajectory> generate_trajectories(int n, int steps_per_trajectory,
                                                     std::uint64_t seed, double x_min = -100.0,
                                                     double x_max = 300.0) {
    if (n < 1) throw InputDomainError("need at least one trajectory");
    return generate_trajectories(std::vector<int>(n, steps_per_trajectory), seed, x_min, x_max);
}

// Spreads total_steps over n trajectories; the first (total mod n) get one extra step.
inline std::vector<int> split_steps(int n, int total_steps) {
    if (n < 1 || total_steps < n) throw InputDomainError("cannot split steps over trajectories");
    std::vector<int> steps(n, total_steps / n);
    for (int i = 0; i < total_steps % n; ++i) ++steps[i];
    return steps;
}

// Object poses at world step t: translated by t * velocity and wrapped so
// that each object re-enters the street from the opposite end.
inline std::vector<SceneObject> world_at(const World& world, long long t) {
    if (t < 0) throw InputDomainError("world time must be non-negative");
    std::vector<SceneObject> out = world.objects;
    const double len = world.street_length();
    for (auto& o : out) {
        if (o.velocity.isZero()) continue;
        const Vec3 shift = static_cast<double>(t) * o.velocity;
        const Vec3 c = o.box.center() + shift;
        const double wrapped = world.street_x_min +
                               std::fmod(std::fmod(c.x() - world.street_x_min, len) + len, len);
        const Vec3 delta{wrapped - o.box.center().x(), shift.y(), shift.z()};
        o.box.min += delta;
        o.box.max += delta;
    }
    return out;
}

inline Vec3 drone_state(const Trajectory& traj, int t) {
    if (t < 0 || t >= traj.num_steps) throw InputDomainError("trajectory step out of range");
    if (traj.num_steps == 1) return traj.start;
    const double f = static_cast<double>(t) / (traj.num_steps - 1);
    return traj.start + f * (traj.end - traj.start);
}

struct PropagationConfig {
    double reference_gain = 100.0;       // g0, LOS amplitude is g0 / distance
    double reflection_coefficient = 0.3;  // Gamma for the ground bounce
    double tap_length_m = 3.0;           // path length per delay tap (c / bandwidth)
    int max_delay = 8;                   // clamp, usually the cyclic prefix

    void validate() const {
        if (!(reference_gain > 0.0)) throw ConfigError("reference gain must be positive");
        if (!(reflection_coefficient >= 0.0 && reflection_coefficient < 1.0))
            throw ConfigError("reflection coefficient must be in [0, 1)");
        if (!(tap_length_m > 0.0)) throw ConfigError("tap length must be positive");
        if (max_delay < 0) throw ConfigError("max delay must be non-negative");
    }
};

inline double direction_cosine(const Vec3& from, const Vec3& to, const Vec3& axis) {
    const Vec3 d = to - from;
    return std::clamp(d.dot(axis) / d.norm(), -1.0, 1.0);
}

// LOS path plus one specular ground bounce (image of the BS mirrored in z = 0).
// Both path phases are uniform random draws from `seed`.
inline std::vector<wireless::Path> paths_between(const Basestation& bs, const Vec3& drone_pos,
                                                 const PropagationConfig& cfg,
                                                 std::uint64_t seed) {
    cfg.validate();
    const Vec3 d = drone_pos - bs.position;
    const double dist = d.norm();
    if (!(dist > 1e-9)) throw GeometryError("drone and basestation positions coincide");

    Rng rng(seed);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

    std::vector<wireless::Path> paths;
    paths.push_back({std::polar(cfg.reference_gain / dist, phase),
                     direction_cosine(bs.position, drone_pos, bs.ula.axis), 0});

    if (cfg.reflection_coefficient > 0.0) {
        const Vec3 image{bs.position.x(), bs.position.y(), -bs.position.z()};
        const double dist2 = (drone_pos - image).norm();
        const int delay = std::min(
            cfg.max_delay, static_cast<int>(std::lround((dist2 - dist) / cfg.tap_length_m)));
        const double bounce_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        paths.push_back({std::polar(cfg.reflection_coefficient * cfg.reference_gain / dist2,
                                    bounce_phase),
                         direction_cosine(image, drone_pos, bs.ula.axis), delay});
    }
    return paths;
}

}  // namespace beamvista::scene
