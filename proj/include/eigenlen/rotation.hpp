#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "eigenlen/geom.hpp"

namespace eigenlen::rotation {

using geom::Mat3;
using geom::Vec3;

// Two or three unit vectors, columns of a 3xk matrix. A pair is completed to
// a triad with the cross product before estimation.
struct VectorTriad {
    std::vector<Vec3> vectors;

    void validate() const {
        if (vectors.size() != 2 && vectors.size() != 3)
            throw std::invalid_argument("VectorTriad: need 2 or 3 vectors");
        for (const auto& v : vectors)
            if (std::abs(geom::norm(v) - 1.0) > 1e-6)
                throw std::invalid_argument("VectorTriad: vectors must be unit length");
        if (vectors.size() == 2 && geom::norm(geom::cross(vectors[0], vectors[1])) <= 1e-6)
            throw std::invalid_argument("VectorTriad: pair is near-parallel");
    }

    Mat3 completed() const {
        validate();
        Mat3 m;
        Vec3 third =
            vectors.size() == 3 ? vectors[2] : geom::normalized(geom::cross(vectors[0], vectors[1]));
        const Vec3 cols[3] = {vectors[0], vectors[1], third};
        for (int j = 0; j < 3; ++j) {
            m(0, j) = cols[j].x;
            m(1, j) = cols[j].y;
            m(2, j) = cols[j].z;
        }
        return m;
    }
};

struct RotationEstimate {
    Mat3 rotation;
    double residual = 0.0;
    int matching_index = -1;  // signed-permutation id (match_and_estimate only)
};

// ---------------------------------------------------------------------------
// 3x3 singular decomposition via cyclic Jacobi on the symmetric product
// ---------------------------------------------------------------------------

struct Svd3 {
    Mat3 u, w;                     // A = u * diag(sigma) * w^T
    std::array<double, 3> sigma{};
};

namespace detail {

// Jacobi eigendecomposition of a symmetric 3x3: m = v * diag(eig) * v^T.
inline void jacobi_eigen(Mat3 m, Mat3& v, std::array<double, 3>& eig) {
    v = Mat3::identity();
    for (int sweep = 0; sweep < 30; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < 3; ++p)
            for (int q = p + 1; q < 3; ++q) off += m(p, q) * m(p, q);
        if (off < 1e-24) break;
        for (int p = 0; p < 3; ++p)
            for (int q = p + 1; q < 3; ++q) {
                if (std::abs(m(p, q)) < 1e-300) continue;
                const double theta = (m(q, q) - m(p, p)) / (2.0 * m(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                Mat3 rot = Mat3::identity();
                rot(p, p) = c;
                rot(q, q) = c;
                rot(p, q) = s;
                rot(q, p) = -s;
                m = rot.transposed() * m * rot;
                v = v * rot;
            }
    }
    for (int i = 0; i < 3; ++i) eig[static_cast<std::size_t>(i)] = m(i, i);
}

}  // namespace detail

inline Svd3 svd3(const Mat3& a) {
    Mat3 ata = a.transposed() * a;
    Mat3 w;
    std::array<double, 3> eig{};
    detail::jacobi_eigen(ata, w, eig);

    // sort by descending eigenvalue
    std::array<int, 3> idx{0, 1, 2};
    std::sort(idx.begin(), idx.end(), [&](int i, int j) {
        return eig[static_cast<std::size_t>(i)] > eig[static_cast<std::size_t>(j)];
    });
    Svd3 out;
    Mat3 w_sorted;
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) w_sorted(i, j) = w(i, idx[static_cast<std::size_t>(j)]);
    out.w = w_sorted;

    // sigma as |A w| directly (more accurate than sqrt of the eigenvalue);
    // rank-deficient directions are completed by cross products
    std::array<Vec3, 3> ucols;
    std::array<Vec3, 3> awcols;
    for (int j = 0; j < 3; ++j) {
        awcols[static_cast<std::size_t>(j)] = a * out.w.col(j);
        out.sigma[static_cast<std::size_t>(j)] = geom::norm(awcols[static_cast<std::size_t>(j)]);
    }
    const double cutoff = std::max(1e-300, 1e-12 * out.sigma[0]);
    int valid = 0;
    for (int j = 0; j < 3; ++j) {
        if (out.sigma[static_cast<std::size_t>(j)] > cutoff) {
            ucols[static_cast<std::size_t>(j)] =
                awcols[static_cast<std::size_t>(j)] / out.sigma[static_cast<std::size_t>(j)];
            ++valid;
        }
    }
    if (valid == 2) ucols[2] = geom::normalized(geom::cross(ucols[0], ucols[1]));
    if (valid == 1) {
        const Vec3 any = std::abs(ucols[0].x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
        ucols[1] = geom::normalized(geom::cross(ucols[0], any));
        ucols[2] = geom::normalized(geom::cross(ucols[0], ucols[1]));
    }
    if (valid == 0) {
        ucols = {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};
    }
    // modified Gram-Schmidt polish keeps u orthonormal to machine precision
    ucols[0] = geom::normalized(ucols[0]);
    ucols[1] = geom::normalized(ucols[1] - ucols[0] * geom::dot(ucols[0], ucols[1]));
    ucols[2] = ucols[2] - ucols[0] * geom::dot(ucols[0], ucols[2]);
    ucols[2] = geom::normalized(ucols[2] - ucols[1] * geom::dot(ucols[1], ucols[2]));
    for (int j = 0; j < 3; ++j) {
        out.u(0, j) = ucols[static_cast<std::size_t>(j)].x;
        out.u(1, j) = ucols[static_cast<std::size_t>(j)].y;
        out.u(2, j) = ucols[static_cast<std::size_t>(j)].z;
    }
    return out;
}

inline double frobenius(const Mat3& m) {
    double s = 0.0;
    for (double v : m.m) s += v * v;
    return std::sqrt(s);
}

inline Mat3 subtract(const Mat3& a, const Mat3& b) {
    Mat3 r;
    for (int i = 0; i < 9; ++i)
        r.m[static_cast<std::size_t>(i)] = a.m[static_cast<std::size_t>(i)] -
                                           b.m[static_cast<std::size_t>(i)];
    return r;
}

// Proper-rotation-constrained minimizer of |R Va - Vb|_F from the singular
// decomposition of Vb Va^T.
inline RotationEstimate procrustes(const Mat3& va, const Mat3& vb) {
    const Svd3 a_svd = svd3(va);
    if (a_svd.sigma[2] < 1e-12 || a_svd.sigma[0] / a_svd.sigma[2] > 1e6)
        throw std::invalid_argument("procrustes: rank-deficient source triad");
    const Mat3 cov = vb * va.transposed();
    const Svd3 s = svd3(cov);
    const Mat3 uwt = s.u * s.w.transposed();
    Mat3 d = Mat3::identity();
    d(2, 2) = uwt.det() >= 0.0 ? 1.0 : -1.0;
    RotationEstimate est;
    est.rotation = s.u * d * s.w.transposed();
    est.residual = frobenius(subtract(est.rotation * va, vb));
    return est;
}

// Enumerates all signed permutations of Vb's columns (48 candidates), runs the
// constrained fit on each, and keeps the minimal residual. Ties resolve to the
// lowest enumeration index.
inline RotationEstimate match_and_estimate(const VectorTriad& va, const VectorTriad& vb) {
    const Mat3 a = va.completed();
    const Mat3 b = vb.completed();
    static const std::array<std::array<int, 3>, 6> perms{
        {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
    RotationEstimate best;
    best.residual = std::numeric_limits<double>::infinity();
    int index = 0;
    for (const auto& perm : perms)
        for (int signs = 0; signs < 8; ++signs, ++index) {
            Mat3 candidate;
            for (int j = 0; j < 3; ++j) {
                const double sign = (signs >> j) & 1 ? -1.0 : 1.0;
                const Vec3 col = b.col(perm[static_cast<std::size_t>(j)]) * sign;
                candidate(0, j) = col.x;
                candidate(1, j) = col.y;
                candidate(2, j) = col.z;
            }
            RotationEstimate est = procrustes(a, candidate);
            // residual against the *matched* columns is the contract
            if (est.residual < best.residual - 1e-15) {
                best = est;
                best.matching_index = index;
            }
        }
    return best;
}

// Geodesic distance between rotations in degrees.
inline double rotation_angle_error(const Mat3& r1, const Mat3& r2) {
    const Mat3 rel = r1 * r2.transposed();
    const double tr = std::clamp(rel(0, 0) + rel(1, 1) + rel(2, 2), -1.0, 3.0);
    const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c) * 180.0 / std::numbers::pi;
}

}  // namespace eigenlen::rotation

#include "eigenlen/models.hpp"

namespace eigenlen::rotation {

struct PairResult {
    double gt_angle = 0.0;        // angle of the true relative rotation
    double angle_error = 0.0;     // vs the estimate
    double residual = 0.0;
    bool degenerate = false;      // predicted vectors too parallel to complete
};

struct RotationEvalReport {
    std::vector<PairResult> pairs;
    double mean_error = 0.0, median_error = 0.0;
    std::size_t degenerate_count = 0;
};

namespace detail {

inline ndiff::Matrix cloud_matrix(const geom::PointCloud& cloud) {
    ndiff::Matrix m(static_cast<int>(cloud.size()), 3);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        m(static_cast<int>(i), 0) = cloud[i].x;
        m(static_cast<int>(i), 1) = cloud[i].y;
        m(static_cast<int>(i), 2) = cloud[i].z;
    }
    return m;
}

inline VectorTriad triad_from_row(const ndiff::Matrix& v, int row, int s_count) {
    VectorTriad t;
    for (int s = 0; s < std::min(s_count, 3); ++s)
        t.vectors.push_back({v(row, 3 * s), v(row, 3 * s + 1), v(row, 3 * s + 2)});
    return t;
}

}  // namespace detail

// For each base cloud: draw two rotations, feed both rotated copies through
// the vector predictor, recover the relative rotation from the matched triads
// and compare against the applied one.
inline RotationEvalReport end_to_end_rotation_eval(models::GroundedModel& model,
                                                   const std::vector<geom::PointCloud>& clouds,
                                                   std::uint64_t seed) {
    RotationEvalReport report;
    Rng rng(seed);
    for (const auto& cloud : clouds) {
        const Mat3 ra = geom::random_rotation(rng).rotation;
        const Mat3 rb = geom::random_rotation(rng).rotation;
        const Mat3 gt_rel = rb * ra.transposed();

        const auto cloud_a = geom::apply_transform(cloud, {ra, Vec3{}});
        const auto cloud_b = geom::apply_transform(cloud, {rb, Vec3{}});
        const ndiff::Matrix va_all =
            model.predict_vectors(detail::cloud_matrix(cloud_a), ndiff::Mode::Eval);
        const ndiff::Matrix vb_all =
            model.predict_vectors(detail::cloud_matrix(cloud_b), ndiff::Mode::Eval);

        PairResult pair;
        pair.gt_angle = rotation_angle_error(gt_rel, Mat3::identity());
        try {
            const VectorTriad ta = detail::triad_from_row(va_all, 0, model.arity());
            const VectorTriad tb = detail::triad_from_row(vb_all, 0, model.arity());
            const RotationEstimate est = match_and_estimate(ta, tb);
            pair.angle_error = rotation_angle_error(est.rotation, gt_rel);
            pair.residual = est.residual;
        } catch (const std::invalid_argument&) {
            pair.degenerate = true;
            ++report.degenerate_count;
        }
        report.pairs.push_back(pair);
    }

    std::vector<double> errors;
    for (const auto& p : report.pairs)
        if (!p.degenerate) errors.push_back(p.angle_error);
    if (!errors.empty()) {
        double sum = 0.0;
        for (double e : errors) sum += e;
        report.mean_error = sum / static_cast<double>(errors.size());
        std::sort(errors.begin(), errors.end());
        report.median_error = errors[errors.size() / 2];
    }
    return report;
}

}  // namespace eigenlen::rotation
