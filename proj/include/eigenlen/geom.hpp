#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "eigenlen/rng.hpp"

namespace eigenlen::geom {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double dist(const Vec3& a, const Vec3& b) { return norm(a - b); }
inline Vec3 normalized(const Vec3& a) { return a / norm(a); }
inline bool finite(const Vec3& a) {
    return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

struct Vec2 {
    double x = 0.0, y = 0.0;
};
inline double dist2d(const Vec2& a, const Vec2& b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

// Row-major 3x3 matrix. Only what the workbench needs.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }

    double operator()(int r, int c) const { return m[static_cast<std::size_t>(3 * r + c)]; }
    double& operator()(int r, int c) { return m[static_cast<std::size_t>(3 * r + c)]; }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
                r(i, j) = s;
            }
        return r;
    }
    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }
    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }
    // column j as a vector (rotated basis axis for rotation matrices)
    Vec3 col(int j) const { return {(*this)(0, j), (*this)(1, j), (*this)(2, j)}; }
};

inline bool is_rotation(const Mat3& r, double tol = 1e-9) {
    const Mat3 rtr = r.transposed() * r;
    double off = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) off = std::max(off, std::abs(rtr(i, j) - (i == j ? 1.0 : 0.0)));
    return off <= tol && std::abs(r.det() - 1.0) <= tol;
}

// Surface sample coordinates; the sole geometry interchange type.
class PointCloud {
public:
    PointCloud() = default;
    explicit PointCloud(std::vector<Vec3> pts) : points_(std::move(pts)) {
        for (const auto& p : points_)
            if (!finite(p)) throw std::invalid_argument("PointCloud: non-finite point");
    }

    std::size_t size() const { return points_.size(); }
    bool empty() const { return points_.empty(); }
    const Vec3& operator[](std::size_t i) const { return points_[i]; }
    const std::vector<Vec3>& points() const { return points_; }

private:
    std::vector<Vec3> points_;
};

struct RigidTransform {
    Mat3 rotation;
    Vec3 translation;
};

struct Ball {
    Vec3 center;
    double radius = 0.0;
};

struct Circle {
    Vec2 center;
    double radius = 0.0;
};

struct ExtentWitness {
    double extent = 0.0;
    std::size_t argmin = 0, argmax = 0;  // ties resolve to the lowest index
};

// L(v) = max_p v.p - min_p v.p, the diameter of the cloud's projection on v.
inline ExtentWitness directional_extent_witness(const PointCloud& cloud, const Vec3& v) {
    if (cloud.empty()) throw std::invalid_argument("directional_extent: empty cloud");
    if (std::abs(norm(v) - 1.0) > 1e-9)
        throw std::invalid_argument("directional_extent: direction must be unit length");
    ExtentWitness w;
    double lo = dot(v, cloud[0]);
    double hi = lo;
    for (std::size_t i = 1; i < cloud.size(); ++i) {
        const double t = dot(v, cloud[i]);
        if (t < lo) {
            lo = t;
            w.argmin = i;
        }
        if (t > hi) {
            hi = t;
            w.argmax = i;
        }
    }
    w.extent = hi - lo;
    return w;
}

inline double directional_extent(const PointCloud& cloud, const Vec3& v) {
    return directional_extent_witness(cloud, v).extent;
}

inline PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t) {
    std::vector<Vec3> out;
    out.reserve(cloud.size());
    for (const auto& p : cloud.points()) out.push_back(t.rotation * p + t.translation);
    return PointCloud(std::move(out));
}

// Uniform rotation from a normalized 4-component Gaussian quaternion.
inline RigidTransform random_rotation(Rng& rng) {
    double q[4];
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (double& qi : q) {
            qi = rng.gaussian();
            n2 += qi * qi;
        }
    } while (n2 < 1e-12);
    const double inv = 1.0 / std::sqrt(n2);
    const double w = q[0] * inv, x = q[1] * inv, y = q[2] * inv, z = q[3] * inv;
    Mat3 r;
    r(0, 0) = 1 - 2 * (y * y + z * z);
    r(0, 1) = 2 * (x * y - w * z);
    r(0, 2) = 2 * (x * z + w * y);
    r(1, 0) = 2 * (x * y + w * z);
    r(1, 1) = 1 - 2 * (x * x + z * z);
    r(1, 2) = 2 * (y * z - w * x);
    r(2, 0) = 2 * (x * z - w * y);
    r(2, 1) = 2 * (y * z + w * x);
    r(2, 2) = 1 - 2 * (x * x + y * y);
    return {r, Vec3{}};
}

namespace detail {

constexpr double kDegenerate = 1e-12;
constexpr double kBallSlack = 1e-9;

inline bool in_circle(const Vec2& p, const Circle& c) {
    return dist2d(p, c.center) <= c.radius + kBallSlack;
}
inline bool in_ball(const Vec3& p, const Ball& b) {
    return dist(p, b.center) <= b.radius + kBallSlack;
}

inline Circle circle2(const Vec2& a, const Vec2& b) {
    const Vec2 c{0.5 * (a.x + b.x), 0.5 * (a.y + b.y)};
    return {c, 0.5 * dist2d(a, b)};
}

// Circumcircle through three points; degenerate (near-collinear) input yields
// radius < 0 so callers can skip the candidate.
inline Circle circle3(const Vec2& a, const Vec2& b, const Vec2& c) {
    const double bx = b.x - a.x, by = b.y - a.y;
    const double cx = c.x - a.x, cy = c.y - a.y;
    const double d = 2.0 * (bx * cy - by * cx);
    const double scale = std::max({std::abs(bx), std::abs(by), std::abs(cx), std::abs(cy), 1.0});
    if (std::abs(d) < kDegenerate * scale * scale) return {Vec2{}, -1.0};
    const double b2 = bx * bx + by * by, c2 = cx * cx + cy * cy;
    const Vec2 center{a.x + (cy * b2 - by * c2) / d, a.y + (bx * c2 - cx * b2) / d};
    const double r = std::max({dist2d(center, a), dist2d(center, b), dist2d(center, c)});
    return {center, r};
}

// Smallest circle with all support points on it; |support| <= 3.
inline Circle circle_of_support(const std::vector<Vec2>& s) {
    switch (s.size()) {
        case 0: return {Vec2{}, 0.0};
        case 1: return {s[0], 0.0};
        case 2: return circle2(s[0], s[1]);
        default: {
            for (int drop = 0; drop < 3; ++drop) {
                const Circle c = circle2(s[(drop + 1) % 3], s[(drop + 2) % 3]);
                if (in_circle(s[static_cast<std::size_t>(drop)], c)) return c;
            }
            return circle3(s[0], s[1], s[2]);
        }
    }
}

inline Circle welzl_circle(std::vector<Vec2>& pts, std::size_t n, std::vector<Vec2>& support) {
    if (n == 0 || support.size() == 3) return circle_of_support(support);
    const Vec2 p = pts[n - 1];
    Circle c = welzl_circle(pts, n - 1, support);
    if (c.radius >= 0.0 && in_circle(p, c)) return c;
    support.push_back(p);
    c = welzl_circle(pts, n - 1, support);
    support.pop_back();
    return c;
}

inline Ball ball2(const Vec3& a, const Vec3& b) {
    return {(a + b) * 0.5, 0.5 * dist(a, b)};
}

// Circumsphere center of three points lies in their plane.
inline Ball ball3(const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 ab = b - a, ac = c - a;
    const Vec3 n = cross(ab, ac);
    const double n2 = dot(n, n);
    const double scale = std::max({dot(ab, ab), dot(ac, ac), 1.0});
    if (n2 < kDegenerate * scale * scale) return {Vec3{}, -1.0};
    const Vec3 center =
        a + (cross(n, ab) * dot(ac, ac) + cross(ac, n) * dot(ab, ab)) / (2.0 * n2);
    const double r = std::max({dist(center, a), dist(center, b), dist(center, c)});
    return {center, r};
}

// Circumsphere of four points via the perpendicular-bisector linear system;
// coplanar candidates are rejected by the determinant magnitude.
inline Ball ball4(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    Mat3 m;
    const Vec3 rows[3] = {b - a, c - a, d - a};
    for (int i = 0; i < 3; ++i) {
        m(i, 0) = rows[i].x;
        m(i, 1) = rows[i].y;
        m(i, 2) = rows[i].z;
    }
    const double det = m.det();
    double scale = 1.0;
    for (const auto& r : rows) scale = std::max(scale, dot(r, r));
    if (std::abs(det) < kDegenerate * scale * std::sqrt(scale)) return {Vec3{}, -1.0};
    const double rhs[3] = {0.5 * dot(rows[0], rows[0]), 0.5 * dot(rows[1], rows[1]),
                           0.5 * dot(rows[2], rows[2])};
    // Cramer's rule
    Vec3 center_rel;
    for (int col = 0; col < 3; ++col) {
        Mat3 mc = m;
        for (int i = 0; i < 3; ++i) mc(i, col) = rhs[i];
        const double v = mc.det() / det;
        (col == 0 ? center_rel.x : col == 1 ? center_rel.y : center_rel.z) = v;
    }
    const Vec3 center = a + center_rel;
    const double r = std::max({dist(center, a), dist(center, b), dist(center, c), dist(center, d)});
    return {center, r};
}

inline Ball ball_of_support(const std::vector<Vec3>& s) {
    switch (s.size()) {
        case 0: return {Vec3{}, 0.0};
        case 1: return {s[0], 0.0};
        case 2: return ball2(s[0], s[1]);
        case 3: {
            for (int drop = 0; drop < 3; ++drop) {
                const Ball b = ball2(s[(drop + 1) % 3], s[(drop + 2) % 3]);
                if (in_ball(s[static_cast<std::size_t>(drop)], b)) return b;
            }
            return ball3(s[0], s[1], s[2]);
        }
        default: {
            Ball best{Vec3{}, -1.0};
            auto consider = [&](const Ball& b) {
                if (b.radius < 0.0) return;
                for (const auto& p : s)
                    if (!in_ball(p, b)) return;
                if (best.radius < 0.0 || b.radius < best.radius) best = b;
            };
            for (std::size_t i = 0; i < 4; ++i)
                for (std::size_t j = i + 1; j < 4; ++j) consider(ball2(s[i], s[j]));
            for (std::size_t i = 0; i < 4; ++i)
                for (std::size_t j = i + 1; j < 4; ++j)
                    for (std::size_t k = j + 1; k < 4; ++k) consider(ball3(s[i], s[j], s[k]));
            consider(ball4(s[0], s[1], s[2], s[3]));
            return best;
        }
    }
}

inline Ball welzl_ball(std::vector<Vec3>& pts, std::size_t n, std::vector<Vec3>& support) {
    if (n == 0 || support.size() == 4) return ball_of_support(support);
    const Vec3 p = pts[n - 1];
    Ball b = welzl_ball(pts, n - 1, support);
    if (b.radius >= 0.0 && in_ball(p, b)) return b;
    support.push_back(p);
    b = welzl_ball(pts, n - 1, support);
    support.pop_back();
    return b;
}

}  // namespace detail

// Welzl's algorithm; the caller's RNG randomizes the recursion order.
inline Circle min_enclosing_circle(const std::vector<Vec2>& points, Rng& rng) {
    if (points.empty()) throw std::invalid_argument("min_enclosing_circle: empty input");
    std::vector<Vec2> pts = points;
    rng.shuffle(pts);
    std::vector<Vec2> support;
    support.reserve(3);
    return detail::welzl_circle(pts, pts.size(), support);
}

inline Circle min_enclosing_circle(const std::vector<Vec2>& points) {
    Rng rng(0x9e1c3b5a7d2f4e68ULL);
    return min_enclosing_circle(points, rng);
}

inline Ball min_enclosing_sphere(const PointCloud& cloud, Rng& rng) {
    if (cloud.empty()) throw std::invalid_argument("min_enclosing_sphere: empty input");
    std::vector<Vec3> pts = cloud.points();
    rng.shuffle(pts);
    std::vector<Vec3> support;
    support.reserve(4);
    return detail::welzl_ball(pts, pts.size(), support);
}

inline Ball min_enclosing_sphere(const PointCloud& cloud) {
    Rng rng(0x51f0a4c68b3d7e92ULL);
    return min_enclosing_sphere(cloud, rng);
}

// Enclosing-circle radius of the cloud's projection onto the plane spanned by
// two orthonormal axes (the container's cross-section plane).
inline Circle projected_enclosing_circle(const PointCloud& cloud, const Vec3& axis_u,
                                         const Vec3& axis_v) {
    std::vector<Vec2> proj;
    proj.reserve(cloud.size());
    for (const auto& p : cloud.points()) proj.push_back({dot(p, axis_u), dot(p, axis_v)});
    return min_enclosing_circle(proj);
}

}  // namespace eigenlen::geom
