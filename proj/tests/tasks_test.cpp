#include <gtest/gtest.h>

#include <cmath>

#include "eigenlen/dataset.hpp"
#include "eigenlen/tasks.hpp"

using namespace eigenlen;
using geom::Mat3;
using geom::PointCloud;
using geom::Vec3;

namespace {

const Mat3 kId = Mat3::identity();

PointCloud cloud_with_extents(double ex, double ey, double ez) {
    return PointCloud({{0, 0, 0}, {ex, 0, 0}, {0, ey, 0}, {0, 0, ez}});
}

PointCloud scaled(const PointCloud& c, double s) {
    std::vector<Vec3> pts;
    for (const auto& p : c.points()) pts.push_back(p * s);
    return PointCloud(pts);
}

}  // namespace

TEST(AnalyticFeasible, TubeExamples) {
    const shapes::EnvSpec tube = shapes::Tube{2, 3, 1};
    EXPECT_TRUE(tasks::analytic_feasible(tube, kId, cloud_with_extents(1.5, 0.1, 2.5)));
    EXPECT_FALSE(tasks::analytic_feasible(tube, kId, cloud_with_extents(2.5, 0.1, 1.0)));
    EXPECT_FALSE(tasks::analytic_feasible(tube, kId, cloud_with_extents(1.0, 0.1, 3.5)));
    // depth never constrains a pass-through
    EXPECT_TRUE(tasks::analytic_feasible(tube, kId, cloud_with_extents(1.0, 99.0, 1.0)));
}

TEST(AnalyticFeasible, SphereByEnclosingRadius) {
    const shapes::EnvSpec sphere = shapes::SphereContainer{1.0};
    const PointCloud obj({{-1.2, 0, 0}, {1.2, 0, 0}});  // enclosing radius 1.2
    EXPECT_FALSE(tasks::analytic_feasible(sphere, kId, obj));
    EXPECT_TRUE(tasks::analytic_feasible(sphere, kId, scaled(obj, 0.5)));
}

TEST(AnalyticFeasible, PartialBoxUnconstrainedAxes) {
    shapes::PartialBox floor_only{1, 1, 1, {false, false, false, false, true, false}};
    EXPECT_TRUE(
        tasks::analytic_feasible(shapes::EnvSpec{floor_only}, kId, cloud_with_extents(9, 9, 9)));

    shapes::PartialBox slot{1, 1, 1, {true, true, false, false, false, false}};
    EXPECT_TRUE(tasks::analytic_feasible(shapes::EnvSpec{slot}, kId,
                                         cloud_with_extents(0.5, 9, 9)));
    EXPECT_FALSE(tasks::analytic_feasible(shapes::EnvSpec{slot}, kId,
                                          cloud_with_extents(1.5, 0.1, 0.1)));
}

TEST(AnalyticFeasible, TranslationInvariance) {
    Rng rng(4);
    const shapes::EnvSpec tube = shapes::Tube{1.5, 1.5, 1};
    const PointCloud obj = shapes::sample_surface(shapes::ObjSpec{shapes::Box{1, 1, 1}}, 64, rng);
    const double m = tasks::analytic_margin(tube, kId, obj);
    const PointCloud moved = geom::apply_transform(obj, {kId, {3.7, -1.2, 0.4}});
    EXPECT_NEAR(tasks::analytic_margin(tube, kId, moved), m, 1e-9);
}

TEST(AnalyticFeasible, SphereRotationInvariance) {
    Rng rng(9);
    const shapes::EnvSpec sphere = shapes::SphereContainer{1.1};
    const PointCloud obj =
        shapes::sample_surface(shapes::ObjSpec{shapes::Box{1, 1.2, 0.7}}, 64, rng);
    const double m = tasks::analytic_margin(sphere, kId, obj);
    for (int rep = 0; rep < 5; ++rep) {
        const auto rot = geom::random_rotation(rng);
        EXPECT_NEAR(tasks::analytic_margin(sphere, kId, geom::apply_transform(obj, rot)), m,
                    1e-9);
    }
}

TEST(AnalyticFeasible, ScalingMonotonicity) {
    Rng rng(21);
    const shapes::ParamRanges ranges;
    for (int rep = 0; rep < 40; ++rep) {
        const shapes::EnvSpec env = shapes::random_partial_box(rng, ranges, nullptr);
        const PointCloud obj =
            shapes::sample_surface(shapes::random_object(rng, ranges), 64, rng);
        const bool base = tasks::analytic_feasible(env, kId, obj);
        const bool bigger = tasks::analytic_feasible(env, kId, scaled(obj, 1.25));
        if (bigger) EXPECT_TRUE(base);  // scaling up never flips false -> true
    }
}

TEST(AnalyticFeasible, MugRule) {
    EXPECT_TRUE(tasks::analytic_feasible_mug(shapes::Rod{0.1, 1.0},
                                             shapes::Mug{0.4, 0.8, 0.2, 0.05}));
    EXPECT_FALSE(tasks::analytic_feasible_mug(shapes::Rod{0.3, 1.0},
                                              shapes::Mug{0.4, 0.8, 0.2, 0.05}));
}

TEST(BruteForce, ClosedBoxExamples) {
    shapes::PartialBox closed{2, 2, 2, {true, true, true, true, true, true}};
    Rng rng(2);
    const PointCloud small =
        shapes::sample_surface(shapes::ObjSpec{shapes::Box{1.5, 1.5, 1.5}}, 64, rng);
    EXPECT_TRUE(tasks::bruteforce_feasible(shapes::EnvSpec{closed}, kId, small, 0.05));

    const PointCloud tall =
        shapes::sample_surface(shapes::ObjSpec{shapes::Box{1.0, 1.0, 2.5}}, 64, rng);
    EXPECT_FALSE(tasks::bruteforce_feasible(shapes::EnvSpec{closed}, kId, tall, 0.05));
}

TEST(BruteForce, ImpliesAnalytic) {
    Rng rng(33);
    const shapes::ParamRanges ranges;
    for (int rep = 0; rep < 60; ++rep) {
        shapes::EnvSpec env;
        switch (rep % 4) {
            case 0: env = shapes::random_partial_box(rng, ranges, nullptr); break;
            case 1: env = shapes::random_tube(rng, ranges); break;
            case 2: env = shapes::random_cylinder_container(rng, ranges); break;
            default: env = shapes::random_sphere_container(rng, ranges); break;
        }
        const auto obj_spec = shapes::random_object(rng, ranges);
        const auto rot = geom::random_rotation(rng).rotation;
        const PointCloud obj = geom::apply_transform(
            shapes::sample_surface(obj_spec, 48, rng), {rot, Vec3{}});
        if (tasks::bruteforce_feasible(env, kId, obj, 0.05))
            EXPECT_TRUE(tasks::analytic_feasible(env, kId, obj));
    }
}

TEST(BruteForce, AgreesWithAnalyticUpToGridResolution) {
    Rng rng(55);
    const shapes::ParamRanges ranges;
    const double step = 0.02;
    int checked = 0, agreed = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const shapes::EnvSpec env = (rep % 2 == 0)
                                        ? shapes::EnvSpec{shapes::random_partial_box(
                                              rng, ranges, nullptr)}
                                        : shapes::EnvSpec{shapes::random_shelf_rack(rng, ranges)};
        const auto obj_spec = shapes::random_object(rng, ranges);
        const auto rot = geom::random_rotation(rng).rotation;
        const PointCloud obj = geom::apply_transform(
            shapes::sample_surface(obj_spec, 64, rng), {rot, Vec3{}});
        const bool a = tasks::analytic_feasible(env, kId, obj);
        const bool b = tasks::bruteforce_feasible(env, kId, obj, step);
        ++checked;
        if (a == b) {
            ++agreed;
        } else {
            EXPECT_LT(std::abs(tasks::analytic_margin(env, kId, obj)), 2 * step);
        }
    }
    EXPECT_GE(static_cast<double>(agreed) / checked, 0.99);
}

TEST(BruteForce, RotatedEnvironment) {
    Rng rng(66);
    shapes::PartialBox closed{2.0, 2.2, 2.4, {true, true, true, true, true, true}};
    const auto rot = geom::random_rotation(rng).rotation;
    const PointCloud small =
        shapes::sample_surface(shapes::ObjSpec{shapes::Box{1.2, 1.2, 1.2}}, 64, rng);
    EXPECT_TRUE(tasks::bruteforce_feasible(shapes::EnvSpec{closed}, rot, small, 0.05));
    EXPECT_TRUE(tasks::analytic_feasible(shapes::EnvSpec{closed}, rot, small));
}

TEST(BruteForce, RejectsBadInput) {
    Rng rng(1);
    const PointCloud obj = cloud_with_extents(1, 1, 1);
    EXPECT_THROW(
        tasks::bruteforce_feasible(shapes::EnvSpec{shapes::Rod{0.1, 1.0}}, kId, obj, 0.05),
        std::invalid_argument);
    EXPECT_THROW(
        tasks::bruteforce_feasible(shapes::EnvSpec{shapes::Tube{1, 1, 1}}, kId, obj, 0.0),
        std::invalid_argument);
}
