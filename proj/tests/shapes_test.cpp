#include <gtest/gtest.h>

#include <cmath>

#include "eigenlen/shapes.hpp"

using namespace eigenlen;
using geom::Mat3;
using geom::PointCloud;
using geom::Vec3;

TEST(SampleSurface, DeterministicGivenSeed) {
    const shapes::EnvSpec spec = shapes::Tube{1.5, 2.0, 1.0};
    Rng a(17), b(17);
    const PointCloud ca = shapes::sample_surface(spec, 64, a);
    const PointCloud cb = shapes::sample_surface(spec, 64, b);
    ASSERT_EQ(ca.size(), cb.size());
    for (std::size_t i = 0; i < ca.size(); ++i) {
        EXPECT_DOUBLE_EQ(ca[i].x, cb[i].x);
        EXPECT_DOUBLE_EQ(ca[i].y, cb[i].y);
        EXPECT_DOUBLE_EQ(ca[i].z, cb[i].z);
    }
}

TEST(SampleSurface, PointsLieOnTheSurface) {
    Rng rng(5);
    const shapes::ParamRanges ranges;
    std::vector<shapes::EnvSpec> envs = {
        shapes::random_tube(rng, ranges),      shapes::random_cylinder_container(rng, ranges),
        shapes::random_sphere_container(rng, ranges),
        shapes::random_partial_box(rng, ranges, nullptr),
        shapes::random_shelf_rack(rng, ranges), shapes::random_table_top(rng, ranges),
        shapes::random_rod(rng, ranges),        shapes::random_multi_tube(rng, ranges)};
    for (const auto& env : envs) {
        const auto patches = shapes::env_patches(env);
        const PointCloud cloud = shapes::sample_surface(env, 128, rng);
        for (const auto& p : cloud.points()) {
            double best = 1e300;
            for (const auto& patch : patches)
                best = std::min(best, shapes::patch_residual(patch, p));
            EXPECT_LE(best, 1e-9);
        }
    }
    for (int rep = 0; rep < 12; ++rep) {
        const shapes::ObjSpec obj = shapes::random_object(rng, ranges);
        const auto patches = shapes::obj_patches(obj);
        const PointCloud cloud = shapes::sample_surface(obj, 128, rng);
        for (const auto& p : cloud.points()) {
            double best = 1e300;
            for (const auto& patch : patches)
                best = std::min(best, shapes::patch_residual(patch, p));
            EXPECT_LE(best, 1e-9);
        }
    }
}

TEST(SampleSurface, AreaProportionalFaceCoverage) {
    const shapes::PartialBox box{1.0, 2.0, 3.0, {true, true, true, true, true, true}};
    const shapes::EnvSpec spec = box;
    const auto patches = shapes::env_patches(spec);
    double total = 0.0;
    for (const auto& p : patches) total += shapes::patch_area(p);

    // the +z face contributes its inner and outer slab surfaces
    const double t = shapes::slab_thickness(spec);
    const double plus_z_area =
        box.width * box.length + (box.width + 2 * t) * (box.length + 2 * t);

    Rng rng(123);
    std::vector<std::size_t> ids;
    const PointCloud cloud = shapes::sample_patches(patches, 10000, rng, &ids);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud[i];
        if (p.z >= box.height / 2 - 1e-12) ++hits;
    }
    const double expected = plus_z_area / total;
    EXPECT_NEAR(static_cast<double>(hits) / 10000.0, expected, 0.02);
}

TEST(SampleSurface, DegenerateSpecRejected) {
    const shapes::PartialBox no_faces{1, 1, 1, {false, false, false, false, false, false}};
    Rng rng(1);
    EXPECT_THROW(shapes::sample_surface(shapes::EnvSpec{no_faces}, 64, rng),
                 std::invalid_argument);
    EXPECT_THROW(shapes::sample_surface(shapes::EnvSpec{shapes::Tube{1, 1, 1}}, 4, rng),
                 std::invalid_argument);
}

TEST(GtAnnotation, EnvValuesFromSpec) {
    const auto tube = shapes::env_annotation(shapes::Tube{2, 3, 5}, Mat3::identity());
    EXPECT_DOUBLE_EQ(tube.at("env.width"), 2.0);
    EXPECT_DOUBLE_EQ(tube.at("env.height"), 3.0);

    const auto sphere =
        shapes::env_annotation(shapes::SphereContainer{1.5}, Mat3::identity());
    EXPECT_DOUBLE_EQ(sphere.at("env.radius"), 1.5);
}

TEST(GtAnnotation, ObjExtentsFromSampledCloud) {
    Rng rng(77);
    const shapes::ObjSpec box = shapes::Box{1, 2, 3};
    const PointCloud cloud = shapes::sample_surface(box, 4096, rng);
    const auto gt = shapes::obj_annotation(cloud, Mat3::identity());
    EXPECT_NEAR(gt.at("obj.extent_x"), 1.0, 0.02);
    EXPECT_NEAR(gt.at("obj.extent_y"), 2.0, 0.02);
    EXPECT_NEAR(gt.at("obj.extent_z"), 3.0, 0.02);
    EXPECT_GE(gt.at("obj.ball_radius"), gt.at("obj.xy_ball_radius") - 1e-9);
}

TEST(GtAnnotation, DirectionsRotateWithEnvironment) {
    Rng rng(31);
    const auto rot = geom::random_rotation(rng).rotation;
    const auto gt = shapes::env_annotation(shapes::Tube{2, 3, 5}, rot);
    // inner dimensions invariant, directions covariant
    EXPECT_DOUBLE_EQ(gt.at("env.width"), 2.0);
    const Vec3 want = rot.col(0);
    const Vec3 got = gt.dirs.at("env.width");
    EXPECT_NEAR(geom::dist(want, got), 0.0, 1e-12);
    EXPECT_NEAR(geom::norm(got), 1.0, 1e-9);
}
