#include <gtest/gtest.h>

#include <cmath>

#include "eigenlen/rotation.hpp"

using namespace eigenlen;
using geom::Mat3;
using geom::Vec3;
using rotation::VectorTriad;

namespace {

Mat3 random_rot(Rng& rng) { return geom::random_rotation(rng).rotation; }

Mat3 from_columns(const Vec3& a, const Vec3& b, const Vec3& c) {
    Mat3 m;
    const Vec3 cols[3] = {a, b, c};
    for (int j = 0; j < 3; ++j) {
        m(0, j) = cols[j].x;
        m(1, j) = cols[j].y;
        m(2, j) = cols[j].z;
    }
    return m;
}

Mat3 rot_z(double deg) {
    const double r = deg * std::numbers::pi / 180.0;
    Mat3 m;
    m(0, 0) = std::cos(r);
    m(0, 1) = -std::sin(r);
    m(1, 0) = std::sin(r);
    m(1, 1) = std::cos(r);
    return m;
}

}  // namespace

TEST(Svd3, ReconstructsInput) {
    Rng rng(1);
    for (int rep = 0; rep < 50; ++rep) {
        Mat3 a;
        for (auto& v : a.m) v = rng.uniform(-2, 2);
        if (rep % 5 == 0) {  // rank-deficient every so often
            for (int j = 0; j < 3; ++j) a(2, j) = a(0, j) + a(1, j);
        }
        const auto svd = rotation::svd3(a);
        Mat3 sigma;
        sigma.m = {svd.sigma[0], 0, 0, 0, svd.sigma[1], 0, 0, 0, svd.sigma[2]};
        const Mat3 rebuilt = svd.u * sigma * svd.w.transposed();
        EXPECT_LT(rotation::frobenius(rotation::subtract(rebuilt, a)), 1e-8);
        EXPECT_TRUE(geom::is_rotation(svd.u, 1e-7) || std::abs(svd.u.det() + 1.0) < 1e-7);
        EXPECT_GE(svd.sigma[0], svd.sigma[1]);
        EXPECT_GE(svd.sigma[1], svd.sigma[2]);
    }
}

TEST(Procrustes, ExactRecovery) {
    Rng rng(2);
    for (int rep = 0; rep < 20; ++rep) {
        const Mat3 r0 = random_rot(rng);
        const auto est = rotation::procrustes(Mat3::identity(), r0);
        EXPECT_LT(est.residual, 1e-9);
        EXPECT_LT(rotation::rotation_angle_error(est.rotation, r0), 1e-5);
    }
    const auto self = rotation::procrustes(random_rot(rng), Mat3::identity());
    EXPECT_TRUE(geom::is_rotation(self.rotation, 1e-9));
}

TEST(Procrustes, IdenticalInputsGiveIdentity) {
    Rng rng(3);
    const Mat3 v = random_rot(rng);
    const auto est = rotation::procrustes(v, v);
    EXPECT_LT(est.residual, 1e-12);
    EXPECT_LT(rotation::rotation_angle_error(est.rotation, Mat3::identity()), 1e-9);
}

TEST(Procrustes, NoisyRecoveryWithinHalfDegree) {
    Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        const Mat3 va = random_rot(rng);
        const Mat3 r0 = random_rot(rng);
        Mat3 vb = r0 * va;
        for (auto& v : vb.m) v += rng.gaussian() * 1e-3;
        const auto est = rotation::procrustes(va, vb);
        EXPECT_LT(rotation::rotation_angle_error(est.rotation, r0), 0.5);
    }
}

TEST(Procrustes, ProperRotationEvenForReflections) {
    Rng rng(5);
    const Mat3 va = random_rot(rng);
    Mat3 vb = va;
    for (int i = 0; i < 3; ++i) vb(i, 0) = -vb(i, 0);  // reflect one column
    const auto est = rotation::procrustes(va, vb);
    EXPECT_NEAR(est.rotation.det(), 1.0, 1e-9);
}

TEST(Procrustes, LeftEquivariance) {
    Rng rng(6);
    for (int rep = 0; rep < 10; ++rep) {
        Mat3 va = random_rot(rng), vb = random_rot(rng);
        const Mat3 q = random_rot(rng);
        const auto base = rotation::procrustes(va, vb);
        const auto shifted = rotation::procrustes(va, q * vb);
        EXPECT_LT(rotation::frobenius(
                      rotation::subtract(shifted.rotation, q * base.rotation)),
                  1e-9);
    }
}

TEST(Procrustes, RankDeficientSourceRejected) {
    Mat3 bad;
    bad.m = {1, 2, 3, 2, 4, 6, 0, 0, 1};  // first two rows dependent
    EXPECT_THROW(rotation::procrustes(bad, Mat3::identity()), std::invalid_argument);
}

TEST(MatchAndEstimate, SignedPermutationsRecovered) {
    Rng rng(7);
    for (int rep = 0; rep < 48; ++rep) {
        const Mat3 base = random_rot(rng);
        VectorTriad va{{base.col(0), base.col(1), base.col(2)}};
        const Mat3 r0 = random_rot(rng);

        // permute and negate the rotated columns arbitrarily
        const int perm[3] = {static_cast<int>(rng.below(3)), 0, 0};
        int rest[2], k = 0;
        for (int j = 0; j < 3; ++j)
            if (j != perm[0]) rest[k++] = j;
        const bool swap = rng.coin();
        const int p1 = swap ? rest[1] : rest[0];
        const int p2 = swap ? rest[0] : rest[1];
        const double s0 = rng.coin() ? 1.0 : -1.0;
        const double s1 = rng.coin() ? 1.0 : -1.0;
        const double s2 = rng.coin() ? 1.0 : -1.0;
        const Mat3 rotated = r0 * va.completed();
        VectorTriad vb{{rotated.col(perm[0]) * s0, rotated.col(p1) * s1,
                        rotated.col(p2) * s2}};

        const auto est = rotation::match_and_estimate(va, vb);
        EXPECT_LT(est.residual, 1e-9);
        EXPECT_TRUE(geom::is_rotation(est.rotation, 1e-9));
    }
}

TEST(MatchAndEstimate, ShuffledIdenticalTriadsHaveZeroResidual) {
    Rng rng(8);
    const Mat3 base = random_rot(rng);
    VectorTriad va{{base.col(0), base.col(1), base.col(2)}};
    VectorTriad vb{{base.col(2), base.col(0), base.col(1)}};
    const auto est = rotation::match_and_estimate(va, vb);
    EXPECT_LT(est.residual, 1e-12);
}

TEST(MatchAndEstimate, PairCompletionWithCrossProduct) {
    Rng rng(9);
    for (int rep = 0; rep < 10; ++rep) {
        const Mat3 base = random_rot(rng);
        VectorTriad va{{base.col(0), base.col(1)}};  // k = 2
        const Mat3 r0 = random_rot(rng);
        VectorTriad vb{{r0 * base.col(0), r0 * base.col(1)}};
        const auto est = rotation::match_and_estimate(va, vb);
        EXPECT_LT(est.residual, 1e-9);
        EXPECT_LT(rotation::rotation_angle_error(est.rotation, r0), 1e-4);
    }
}

TEST(MatchAndEstimate, ResidualNeverWorseThanUnpermuted) {
    Rng rng(10);
    for (int rep = 0; rep < 10; ++rep) {
        Mat3 a = random_rot(rng), braw = random_rot(rng);
        VectorTriad va{{a.col(0), a.col(1), a.col(2)}};
        VectorTriad vb{{braw.col(0), braw.col(1), braw.col(2)}};
        const auto matched = rotation::match_and_estimate(va, vb);
        const auto direct = rotation::procrustes(va.completed(), vb.completed());
        EXPECT_LE(matched.residual, direct.residual + 1e-12);
    }
}

TEST(VectorTriadValidation, RejectsDegenerateInput) {
    VectorTriad parallel{{Vec3{1, 0, 0}, Vec3{1, 1e-8, 0}}};
    EXPECT_THROW(parallel.validate(), std::invalid_argument);
    VectorTriad non_unit{{Vec3{2, 0, 0}, Vec3{0, 1, 0}}};
    EXPECT_THROW(non_unit.validate(), std::invalid_argument);
}

TEST(RotationAngleError, Identities) {
    Rng rng(11);
    const Mat3 r = random_rot(rng);
    EXPECT_NEAR(rotation::rotation_angle_error(r, r), 0.0, 1e-7);
    EXPECT_NEAR(rotation::rotation_angle_error(rot_z(30.0), Mat3::identity()), 30.0, 1e-9);
}

TEST(RotationAngleError, CompositionConsistency) {
    Rng rng(12);
    for (int rep = 0; rep < 20; ++rep) {
        const Mat3 r1 = random_rot(rng), r2 = random_rot(rng), r0 = random_rot(rng);
        EXPECT_NEAR(rotation::rotation_angle_error(r1 * r0, r2 * r0),
                    rotation::rotation_angle_error(r1, r2), 1e-9);
    }
}
