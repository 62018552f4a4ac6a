#pragma once

// Drone-mounted pinhole cameras and a flat-shaded box rasterizer.
//
// The drone frame is aligned with the world frame (the drone does not yaw),
// so camera orientations are given directly as world directions.
// Images are stored channel-planar: value(c, row, col) at
// data[(c * height + row) * width + col].

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "beamvista/error.hpp"
#include "beamvista/scene.hpp"

namespace beamvista::render {

using Vec3 = Eigen::Vector3d;

struct CameraConfig {
    int mount_index = 1;
    Vec3 forward = -Vec3::UnitZ();
    Vec3 up = Vec3::UnitX();  // image "up" hint, orthogonalised against forward
    double fov_degrees = 80.0;  // horizontal
    int width = 64;
    int height = 64;
    int channels = 3;

    void validate() const {
        if (mount_index < 1 || mount_index > 3) throw ConfigError("camera mount index must be 1..3");
        if (width < 8 || height < 8) throw ConfigError("camera image must be at least 8x8");
        if (channels != 3) throw ConfigError("camera must produce 3 channels");
        if (!(fov_degrees >= 10.0 && fov_degrees <= 170.0))
            throw ConfigError("camera field of view must be in [10, 170] degrees");
        if (std::abs(forward.norm() - 1.0) > 1e-9) throw ConfigError("camera forward must be unit length");
        if (forward.cross(up).norm() < 1e-6) throw ConfigError("camera up is parallel to forward");
    }

    double focal_px() const {
        return 0.5 * width / std::tan(0.5 * fov_degrees * std::numbers::pi / 180.0);
    }
    Vec3 right() const { return forward.cross(up).normalized(); }
    Vec3 true_up() const { return right().cross(forward); }
};

// Mount 1 looks ahead (+x) and down, mount 2 straight down, mount 3 behind
// (-x) and down. Together they cover the street from the drone's position
// out to 85 degrees off nadir in both directions.
inline std::vector<CameraConfig> default_cameras(int width = 64, int height = 64,
                                                 double fov_degrees = 80.0,
                                                 double tilt_degrees = 45.0) {
    const double t = tilt_degrees * std::numbers::pi / 180.0;
    std::vector<CameraConfig> cams(3);
    cams[0].mount_index = 1;
    cams[0].forward = Vec3(std::cos(t), 0.0, -std::sin(t));
    cams[0].up = Vec3::UnitZ();
    cams[1].mount_index = 2;
    cams[1].forward = -Vec3::UnitZ();
    cams[1].up = Vec3::UnitX();
    cams[2].mount_index = 3;
    cams[2].forward = Vec3(-std::cos(t), 0.0, -std::sin(t));
    cams[2].up = Vec3::UnitZ();
    for (auto& c : cams) {
        c.width = width;
        c.height = height;
        c.fov_degrees = fov_degrees;
    }
    return cams;
}

struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c) : width(w), height(h), channels(c), data(std::size_t(w) * h * c, 0.0f) {}

    float& at(int c, int row, int col) { return data[(std::size_t(c) * height + row) * width + col]; }
    float at(int c, int row, int col) const {
        return data[(std::size_t(c) * height + row) * width + col];
    }
};

struct Pixel {
    double col = 0.0;
    double row = 0.0;
};

namespace detail {

inline constexpr double kNearPlane = 0.05;

// Camera-frame coordinates (x right, y up, z along the optical axis).
inline Vec3 to_camera(const Vec3& point, const Vec3& drone_pos, const CameraConfig& cam) {
    const Vec3 d = point - drone_pos;
    return {d.dot(cam.right()), d.dot(cam.true_up()), d.dot(cam.forward)};
}

inline Pixel to_pixel(const Vec3& c, const CameraConfig& cam) {
    const double f = cam.focal_px();
    return {0.5 * cam.width + f * c.x() / c.z(), 0.5 * cam.height - f * c.y() / c.z()};
}

// Sky/ground colour as a function of the viewing direction only. Ground is
// darker towards nadir and hazier towards the horizon; a low sun towards +x
// tints the ground warm ahead and cool behind.
inline scene::Rgb background(const Vec3& dir) {
    const Vec3 d = dir.normalized();
    scene::Rgb c;
    if (d.z() >= 0.0) {
        const double s = d.z();
        c = {0.78 - 0.40 * s, 0.86 - 0.30 * s, 0.96 - 0.06 * s};
    } else {
        const double s = std::sqrt(-d.z());
        const double tint = 0.18 * d.x();
        c = {0.62 - 0.36 * s + tint, 0.62 - 0.30 * s + 0.4 * tint, 0.60 - 0.36 * s - tint};
    }
    for (auto& v : c) v = std::clamp(v, 0.0, 1.0);
    return c;
}

}  // namespace detail

// Pinhole projection; std::nullopt when the point is behind the camera or
// outside the image.
inline std::optional<Pixel> project(const Vec3& point, const Vec3& drone_pos,
                                    const CameraConfig& cam) {
    const Vec3 c = detail::to_camera(point, drone_pos, cam);
    if (c.z() <= detail::kNearPlane) return std::nullopt;
    const Pixel p = detail::to_pixel(c, cam);
    if (p.col < 0.0 || p.col >= cam.width || p.row < 0.0 || p.row >= cam.height) return std::nullopt;
    return p;
}

inline constexpr int kMinMarkerPixels = 2;

// Painter's algorithm over axis-aligned boxes: each box is drawn as the
// screen-space rectangle bounding its projected corners, far to near.
// Basestation markers are drawn last so that they are never hidden.
inline Image render_frame(const std::vector<scene::SceneObject>& objects, const Vec3& drone_pos,
                          const CameraConfig& cam) {
    cam.validate();
    Image img(cam.width, cam.height, cam.channels);
    const double f = cam.focal_px();
    const Vec3 right = cam.right();
    const Vec3 up = cam.true_up();
    for (int r = 0; r < cam.height; ++r) {
        for (int c = 0; c < cam.width; ++c) {
            const double xc = (c + 0.5 - 0.5 * cam.width) / f;
            const double yc = -(r + 0.5 - 0.5 * cam.height) / f;
            const auto rgb = detail::background(cam.forward + xc * right + yc * up);
            for (int ch = 0; ch < 3; ++ch) img.at(ch, r, c) = static_cast<float>(rgb[ch]);
        }
    }

    struct Item {
        double depth;
        bool marker;
        const scene::SceneObject* obj;
    };
    std::vector<Item> items;
    items.reserve(objects.size());
    for (const auto& o : objects) {
        const double depth = (o.box.center() - drone_pos).norm();
        items.push_back({depth, o.kind == scene::ObjectKind::basestation_marker, &o});
    }
    std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
        if (a.marker != b.marker) return !a.marker;
        return a.depth > b.depth;
    });

    for (const auto& it : items) {
        double cmin = 1e300, cmax = -1e300, rmin = 1e300, rmax = -1e300;
        bool behind = false;
        for (const Vec3& corner : it.obj->box.corners()) {
            const Vec3 cc = detail::to_camera(corner, drone_pos, cam);
            if (cc.z() <= detail::kNearPlane) {
                behind = true;
                break;
            }
            const Pixel p = detail::to_pixel(cc, cam);
            cmin = std::min(cmin, p.col);
            cmax = std::max(cmax, p.col);
            rmin = std::min(rmin, p.row);
            rmax = std::max(rmax, p.row);
        }
        if (behind) continue;
        if (it.marker) {
            const Pixel centre = detail::to_pixel(detail::to_camera(it.obj->box.center(), drone_pos, cam), cam);
            const double half = 0.5 * kMinMarkerPixels;
            cmin = std::min(cmin, centre.col - half);
            cmax = std::max(cmax, centre.col + half);
            rmin = std::min(rmin, centre.row - half);
            rmax = std::max(rmax, centre.row + half);
        }
        // Pixel (r, c) is covered when its centre lies inside the rectangle.
        const int c0 = std::max(0, static_cast<int>(std::ceil(cmin - 0.5)));
        const int c1 = std::min(cam.width - 1, static_cast<int>(std::ceil(cmax - 0.5)) - 1);
        const int r0 = std::max(0, static_cast<int>(std::ceil(rmin - 0.5)));
        const int r1 = std::min(cam.height - 1, static_cast<int>(std::ceil(rmax - 0.5)) - 1);
        if (c0 > c1 || r0 > r1) continue;
        for (int ch = 0; ch < 3; ++ch) {
            const auto v = static_cast<float>(it.obj->color[ch]);
            for (int r = r0; r <= r1; ++r)
                for (int c = c0; c <= c1; ++c) img.at(ch, r, c) = v;
        }
    }
    return img;
}

// Lowest mount index whose frustum contains the basestation.
inline int select_camera(const Vec3& drone_pos, const Vec3& bs_position,
                         const std::vector<CameraConfig>& cameras) {
    const CameraConfig* best = nullptr;
    for (const auto& cam : cameras) {
        if (!project(bs_position, drone_pos, cam)) continue;
        if (!best || cam.mount_index < best->mount_index) best = &cam;
    }
    if (!best) throw VisibilityError("basestation is not visible from any camera");
    return best->mount_index;
}

inline const CameraConfig& camera_by_mount(const std::vector<CameraConfig>& cameras, int mount) {
    for (const auto& c : cameras)
        if (c.mount_index == mount) return c;
    throw ConfigError("no camera with mount index " + std::to_string(mount));
}

}  // namespace beamvista::render
