#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "beamvista/render.hpp"
#include "beamvista/scene.hpp"

using namespace beamvista;
using namespace beamvista::render;
using scene::ObjectKind;
using scene::SceneObject;

namespace {

const CameraConfig& down() {
    static const auto cams = default_cameras();
    return cams[1];
}

SceneObject box(const Vec3& lo, const Vec3& hi, scene::Rgb color, ObjectKind k = ObjectKind::car) {
    SceneObject o;
    o.kind = k;
    o.box = {lo, hi};
    o.color = color;
    return o;
}

bool has_color(const Image& img, int r, int c, const scene::Rgb& rgb) {
    for (int ch = 0; ch < 3; ++ch)
        if (img.at(ch, r, c) != static_cast<float>(rgb[ch])) return false;
    return true;
}

}  // namespace

TEST_CASE("camera config validation") {
    CameraConfig c;
    CHECK_NOTHROW(c.validate());
    c.width = 7;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = CameraConfig{};
    c.fov_degrees = 171;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = CameraConfig{};
    c.up = c.forward;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = CameraConfig{};
    c.mount_index = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("point on the optical axis hits the principal point") {
    for (const auto& cam : default_cameras()) {
        const Vec3 drone(10, -2, 50);
        const auto p = project(drone + 20.0 * cam.forward, drone, cam);
        REQUIRE(p);
        CHECK(std::abs(p->col - cam.width / 2.0) <= 1.0);
        CHECK(std::abs(p->row - cam.height / 2.0) <= 1.0);
        CHECK_FALSE(project(drone - 5.0 * cam.forward, drone, cam));
    }
}

TEST_CASE("projection matches similar triangles") {
    // Straight-down camera: image up is +x, image right is -y.
    const auto& cam = down();
    const Vec3 drone(0, 0, 50);
    const double f = 32.0 / std::tan(40.0 * std::numbers::pi / 180.0);
    const auto p = project(Vec3(6, -4, 20), drone, cam);  // 30 m below
    REQUIRE(p);
    CHECK(p->col == Catch::Approx(32.0 + f * 4.0 / 30.0).margin(1.0));
    CHECK(p->row == Catch::Approx(32.0 - f * 6.0 / 30.0).margin(1.0));
    CHECK_FALSE(project(Vec3(200, 0, 0), drone, cam));  // outside the frustum
}

TEST_CASE("empty world renders pure background in [0, 1]") {
    for (const auto& cam : default_cameras()) {
        const auto img = render_frame({}, Vec3(0, 0, 50), cam);
        CHECK(img.width == 64);
        CHECK(img.height == 64);
        CHECK(img.data.size() == 64u * 64 * 3);
        for (float v : img.data) CHECK((v >= 0.0f && v <= 1.0f));
        // A box far outside the view leaves the frame unchanged.
        const auto other = render_frame({box(Vec3(5000, 0, 0), Vec3(5001, 1, 1), {1, 0, 0})}, Vec3(0, 0, 50), cam);
        CHECK(other.data == img.data);
    }
}

TEST_CASE("rendering is deterministic") {
    const auto w = scene::generate_world(scene::WorldConfig{}, 3);
    const auto objs = scene::world_at(w, 17);
    for (const auto& cam : default_cameras()) {
        const auto a = render_frame(objs, Vec3(40, -1, 50), cam);
        const auto b = render_frame(objs, Vec3(40, -1, 50), cam);
        CHECK(a.data == b.data);
    }
}

TEST_CASE("nearer box wins where two boxes overlap") {
    const Vec3 drone(0, 0, 50);
    const scene::Rgb red{0.9, 0.1, 0.1}, green{0.1, 0.8, 0.2};
    const auto near = box(Vec3(-1, -1, 39.5), Vec3(1, 1, 40.5), red);   // depth 10
    const auto far = box(Vec3(-4, -4, 29.5), Vec3(4, 4, 30.5), green);  // depth 20
    for (const auto& objs : {std::vector{near, far}, std::vector{far, near}}) {
        const auto img = render_frame(objs, drone, down());
        CHECK(has_color(img, 32, 32, red));
        // Inside the far box but outside the near one.
        const double f = down().focal_px();
        const int off = static_cast<int>(f * 3.0 / 20.0);
        CHECK(has_color(img, 32 - off, 32, green));
    }
}

TEST_CASE("translating world and drone together leaves the image unchanged") {
    const auto w = scene::generate_world(scene::WorldConfig{}, 4);
    const auto objs = scene::world_at(w, 0);
    const Vec3 drone(60, -3, 50);
    const Vec3 shift(37.25, -11.5, 0);
    auto moved = objs;
    for (auto& o : moved) {
        o.box.min += shift;
        o.box.max += shift;
    }
    for (const auto& cam : default_cameras()) {
        const auto a = render_frame(objs, drone, cam);
        const auto b = render_frame(moved, drone + shift, cam);
        CHECK(a.data == b.data);
    }
}

TEST_CASE("a distant marker still covers at least one pixel, drawn over nearer objects") {
    const Vec3 drone(0, 0, 50);
    auto marker = box(Vec3(-0.05, -0.05, -0.05), Vec3(0.05, 0.05, 0.05), scene::kMarkerColor,
                      ObjectKind::basestation_marker);
    const auto roof = box(Vec3(-3, -3, 20), Vec3(3, 3, 21), {0.4, 0.4, 0.4}, ObjectKind::building);
    const auto img = render_frame({marker, roof}, drone, down());
    int count = 0;
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) count += has_color(img, r, c, scene::kMarkerColor);
    CHECK(count >= 1);
}

TEST_CASE("camera selection") {
    const auto cams = default_cameras();
    const Vec3 drone(0, 0, 50);
    CHECK(select_camera(drone, Vec3(80, 0, 6), cams) == 1);   // ahead and below
    CHECK(select_camera(drone, Vec3(-80, 0, 6), cams) == 3);  // behind
    CHECK(select_camera(drone, Vec3(0, 0, 0), cams) == 2);    // nadir
    // 30 degrees ahead of nadir is inside both the forward and the down camera.
    const Vec3 both(50 * std::tan(30 * std::numbers::pi / 180), 0, 0);
    REQUIRE(project(both, drone, cams[0]));
    REQUIRE(project(both, drone, cams[1]));
    CHECK(select_camera(drone, both, cams) == 1);
    CHECK_THROWS_AS(select_camera(drone, Vec3(0, 0, 80), cams), VisibilityError);
}

TEST_CASE("default mounts cover both basestations from every point of every fly-over") {
    const auto w = scene::generate_world(scene::WorldConfig{}, 1);
    const auto cams = default_cameras();
    for (double y : {-5.625, -2.0, 1.875})
        for (double x = -100; x <= 300; x += 0.5)
            for (const auto& bs : w.basestations) CHECK_NOTHROW(select_camera(Vec3(x, y, 50), bs.position, cams));
}
