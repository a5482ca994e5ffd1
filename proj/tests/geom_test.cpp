#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "eigenlen/geom.hpp"
#include "test_oracles.hpp"

using namespace eigenlen;
using geom::Ball;
using geom::Circle;
using geom::PointCloud;
using geom::Vec2;
using geom::Vec3;

namespace {

PointCloud unit_cube_corners() {
    std::vector<Vec3> pts;
    for (int i = 0; i < 8; ++i)
        pts.push_back({double(i & 1), double((i >> 1) & 1), double((i >> 2) & 1)});
    return PointCloud(pts);
}

PointCloud random_cloud(std::size_t n, Rng& rng, double scale = 2.0) {
    std::vector<Vec3> pts;
    for (std::size_t i = 0; i < n; ++i)
        pts.push_back({rng.uniform(-scale, scale), rng.uniform(-scale, scale),
                       rng.uniform(-scale, scale)});
    return PointCloud(pts);
}

}  // namespace

TEST(DirectionalExtent, UnitCubeAlongX) {
    EXPECT_NEAR(geom::directional_extent(unit_cube_corners(), {1, 0, 0}), 1.0, 1e-12);
}

TEST(DirectionalExtent, UnitCubeAlongDiagonal) {
    const double s = 1.0 / std::sqrt(2.0);
    EXPECT_NEAR(geom::directional_extent(unit_cube_corners(), {s, s, 0}), std::sqrt(2.0), 1e-12);
}

TEST(DirectionalExtent, MatchesExhaustiveScan) {
    Rng rng(11);
    const PointCloud cloud = random_cloud(200, rng);
    for (int rep = 0; rep < 20; ++rep) {
        Vec3 v{rng.gaussian(), rng.gaussian(), rng.gaussian()};
        v = geom::normalized(v);
        double lo = 1e300, hi = -1e300;
        for (const auto& p : cloud.points()) {
            lo = std::min(lo, geom::dot(v, p));
            hi = std::max(hi, geom::dot(v, p));
        }
        EXPECT_DOUBLE_EQ(geom::directional_extent(cloud, v), hi - lo);
    }
}

TEST(DirectionalExtent, SignAndTranslationInvariance) {
    Rng rng(5);
    const PointCloud cloud = random_cloud(64, rng);
    for (int rep = 0; rep < 10; ++rep) {
        Vec3 v{rng.gaussian(), rng.gaussian(), rng.gaussian()};
        v = geom::normalized(v);
        const double e = geom::directional_extent(cloud, v);
        EXPECT_NEAR(geom::directional_extent(cloud, v * -1.0), e, 1e-12);
        const Vec3 shift{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
        const PointCloud moved = geom::apply_transform(cloud, {geom::Mat3::identity(), shift});
        EXPECT_NEAR(geom::directional_extent(moved, v), e, 1e-9);
    }
}

TEST(DirectionalExtent, RejectsBadInput) {
    EXPECT_THROW(geom::directional_extent(PointCloud{}, {1, 0, 0}), std::invalid_argument);
    EXPECT_THROW(geom::directional_extent(unit_cube_corners(), {1, 1, 0}),
                 std::invalid_argument);
}

TEST(MinEnclosingCircle, SinglePoint) {
    const Circle c = geom::min_enclosing_circle({{0, 0}});
    EXPECT_NEAR(c.radius, 0.0, 1e-12);
    EXPECT_NEAR(c.center.x, 0.0, 1e-12);
}

TEST(MinEnclosingCircle, TwoPointDiameter) {
    const Circle c = geom::min_enclosing_circle({{0, 0}, {2, 0}});
    EXPECT_NEAR(c.radius, 1.0, 1e-12);
    EXPECT_NEAR(c.center.x, 1.0, 1e-12);
    EXPECT_NEAR(c.center.y, 0.0, 1e-12);
}

TEST(MinEnclosingCircle, EmptyThrows) {
    EXPECT_THROW(geom::min_enclosing_circle({}), std::invalid_argument);
}

TEST(MinEnclosingCircle, MatchesEnumerationOracle) {
    Rng rng(42);
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t n = 1 + rng.below(50);
        std::vector<Vec2> pts;
        for (std::size_t i = 0; i < n; ++i)
            pts.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3)});
        const Circle c = geom::min_enclosing_circle(pts, rng);
        EXPECT_NEAR(c.radius, test_oracles::oracle_circle_radius(pts), 1e-9);
        for (const auto& p : pts) EXPECT_LE(geom::dist2d(p, c.center), c.radius + 1e-9);
    }
}

TEST(MinEnclosingSphere, SinglePoint) {
    const Ball b = geom::min_enclosing_sphere(PointCloud({{1, 2, 3}}));
    EXPECT_NEAR(b.radius, 0.0, 1e-12);
}

TEST(MinEnclosingSphere, AntipodalPoints) {
    const Ball b = geom::min_enclosing_sphere(PointCloud({{0, 0, 1}, {0, 0, -1}}));
    EXPECT_NEAR(b.radius, 1.0, 1e-12);
    EXPECT_NEAR(geom::norm(b.center), 0.0, 1e-12);
}

TEST(MinEnclosingSphere, MatchesEnumerationOracle) {
    Rng rng(7);
    for (int rep = 0; rep < 15; ++rep) {
        const std::size_t n = 1 + rng.below(24);
        const PointCloud cloud = random_cloud(n, rng);
        const Ball b = geom::min_enclosing_sphere(cloud, rng);
        EXPECT_NEAR(b.radius, test_oracles::oracle_sphere_radius(cloud.points()), 1e-9);
        for (const auto& p : cloud.points()) EXPECT_LE(geom::dist(p, b.center), b.radius + 1e-9);
    }
}

TEST(MinEnclosingSphere, RigidInvarianceAndSupportStability) {
    Rng rng(13);
    const PointCloud cloud = random_cloud(40, rng);
    const Ball b = geom::min_enclosing_sphere(cloud);

    geom::RigidTransform t = geom::random_rotation(rng);
    t.translation = {0.3, -1.2, 2.5};
    const Ball moved = geom::min_enclosing_sphere(geom::apply_transform(cloud, t));
    EXPECT_NEAR(moved.radius, b.radius, 1e-9);

    // dropping a strictly interior point leaves the ball unchanged
    std::vector<Vec3> reduced;
    bool dropped = false;
    for (const auto& p : cloud.points()) {
        if (!dropped && geom::dist(p, b.center) < b.radius - 1e-6) {
            dropped = true;
            continue;
        }
        reduced.push_back(p);
    }
    ASSERT_TRUE(dropped);
    const Ball b2 = geom::min_enclosing_sphere(PointCloud(reduced));
    EXPECT_NEAR(b2.radius, b.radius, 1e-9);
    EXPECT_NEAR(geom::dist(b2.center, b.center), 0.0, 1e-7);
}

TEST(ApplyTransform, IdentityAndTranslation) {
    const PointCloud cloud({{0, 0, 0}});
    const PointCloud same = geom::apply_transform(cloud, {geom::Mat3::identity(), {0, 0, 0}});
    EXPECT_NEAR(geom::dist(same[0], cloud[0]), 0.0, 0.0);
    const PointCloud moved = geom::apply_transform(cloud, {geom::Mat3::identity(), {1, 0, 0}});
    EXPECT_NEAR(moved[0].x, 1.0, 0.0);
}

TEST(ApplyTransform, PreservesPairwiseDistances) {
    Rng rng(3);
    const PointCloud cloud = random_cloud(24, rng);
    geom::RigidTransform t = geom::random_rotation(rng);
    t.translation = {0.5, 0.25, -0.75};
    const PointCloud moved = geom::apply_transform(cloud, t);
    for (std::size_t i = 0; i < cloud.size(); ++i)
        for (std::size_t j = i + 1; j < cloud.size(); ++j)
            EXPECT_NEAR(geom::dist(moved[i], moved[j]), geom::dist(cloud[i], cloud[j]), 1e-9);
}

TEST(RandomRotation, DeterministicAndProper) {
    Rng a(99), b(99);
    const auto ra = geom::random_rotation(a);
    const auto rb = geom::random_rotation(b);
    for (int i = 0; i < 9; ++i)
        EXPECT_DOUBLE_EQ(ra.rotation.m[static_cast<std::size_t>(i)],
                         rb.rotation.m[static_cast<std::size_t>(i)]);
    Rng rng(1234);
    for (int rep = 0; rep < 100; ++rep)
        EXPECT_TRUE(geom::is_rotation(geom::random_rotation(rng).rotation));
}

TEST(RandomRotation, UniformAngleDistribution) {
    // mean rotation angle of the uniform distribution on the rotation group
    Rng rng(2024);
    double sum = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto r = geom::random_rotation(rng).rotation;
        const double tr = r(0, 0) + r(1, 1) + r(2, 2);
        const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
        sum += std::acos(c) * 180.0 / 3.14159265358979323846;
    }
    EXPECT_NEAR(sum / n, 126.47, 2.0);
}

TEST(MinEnclosingCircle, RigidInvariance) {
    Rng rng(77);
    std::vector<Vec2> pts;
    for (int i = 0; i < 32; ++i) pts.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2)});
    const double r0 = geom::min_enclosing_circle(pts).radius;
    const double theta = rng.uniform(0, 6.28), c = std::cos(theta), s = std::sin(theta);
    std::vector<Vec2> moved;
    for (const auto& p : pts)
        moved.push_back({c * p.x - s * p.y + 1.7, s * p.x + c * p.y - 0.4});
    EXPECT_NEAR(geom::min_enclosing_circle(moved).radius, r0, 1e-9);
}
