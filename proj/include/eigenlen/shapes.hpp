#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "eigenlen/geom.hpp"
#include "eigenlen/rng.hpp"

namespace eigenlen::shapes {

using geom::Mat3;
using geom::PointCloud;
using geom::Vec3;

// ---------------------------------------------------------------------------
// Shape specs. All dimensions are inner dimensions in the shape's own frame:
// x = width, y = length/depth, z = height.
// ---------------------------------------------------------------------------

struct Tube {  // cuboid without front/back (+-y) faces; objects pass along y
    double width = 1, height = 1, depth = 1;
};
struct CylinderContainer {  // open top, bottom at z = 0
    double radius = 1, height = 1;
};
struct SphereContainer {
    double radius = 1;
};
// face order: -x, +x, -y, +y, -z, +z
struct PartialBox {
    double width = 1, length = 1, height = 1;
    std::array<bool, 6> faces{true, true, true, true, true, true};
};
struct Cavity {
    double width = 1, length = 1, height = 1;
    double offset = 0;  // z of the cavity floor (interior)
};
struct ShelfRack {  // cavities stacked in z, front (-y) open
    std::vector<Cavity> cavities;
};
struct TableTop {  // slab on four legs; top surface at z = leg_height + thickness
    double width = 1, length = 1, thickness = 0.1, leg_height = 1;
};
struct Rod {  // mug holder, axis along y, centered at origin
    double diameter = 0.1, length = 1;
};
struct TubeHole {
    double width = 1, height = 1;
};
struct MultiTube {  // two tubes side by side along x, both passing along y
    std::array<TubeHole, 2> tubes;
    double depth = 1, spacing = 3.4;
};

using EnvSpec = std::variant<Tube, CylinderContainer, SphereContainer, PartialBox, ShelfRack,
                             TableTop, Rod, MultiTube>;

struct Box {
    double width = 1, length = 1, height = 1;
};
struct Cylinder {  // axis z, centered at origin
    double radius = 0.5, height = 1;
};
struct Ellipsoid {
    double a = 0.5, b = 0.5, c = 0.5;  // semi-axes
};
struct Capsule {  // cylindrical section height + hemispherical ends
    double radius = 0.3, height = 0.6;
};
struct LShape {  // box footprint with the (+x,+y) corner notched out, full height
    double width = 1, length = 1, height = 1;
    double notch_x = 0.5, notch_y = 0.5;  // notch fractions in (0,1)
};
struct Mug {
    double body_radius = 0.4, body_height = 0.8;
    double handle_gap = 0.2, handle_thickness = 0.06;
};
struct CompositePart {
    bool is_box = true;
    double a = 0.4, b = 0.4, c = 0.4;  // box dims or (radius, radius, height)
    Vec3 offset;
};
struct Composite {
    std::vector<CompositePart> parts;  // <= 3, connected by construction
};

using ObjSpec = std::variant<Box, Cylinder, Ellipsoid, Capsule, LShape, Mug, Composite>;

// ---------------------------------------------------------------------------
// Surface patches: every shape decomposes into a list of these, sampled
// uniformly by area.
// ---------------------------------------------------------------------------

struct RectPatch {  // origin + s*u + t*v, (s,t) in the unit square
    Vec3 origin, u, v;
};
struct AnnulusPatch {
    Vec3 center, u, v;  // orthonormal in-plane basis
    double r_in = 0, r_out = 1;
};
struct CylSidePatch {
    Vec3 base, axis, u, v;  // axis unit, u/v unit orthonormal
    double radius = 1, height = 1;
};
struct SpherePatch {
    Vec3 center;
    double radius = 1;
    Vec3 cap_axis;      // meaningful when hemisphere
    bool hemisphere = false;
};
struct EllipsoidPatch {
    double a = 1, b = 1, c = 1;
};

using Patch = std::variant<RectPatch, AnnulusPatch, CylSidePatch, SpherePatch, EllipsoidPatch>;

inline double patch_area(const Patch& patch) {
    constexpr double pi = std::numbers::pi;
    return std::visit(
        [&](const auto& p) -> double {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, RectPatch>) {
                return geom::norm(geom::cross(p.u, p.v));
            } else if constexpr (std::is_same_v<T, AnnulusPatch>) {
                return pi * (p.r_out * p.r_out - p.r_in * p.r_in);
            } else if constexpr (std::is_same_v<T, CylSidePatch>) {
                return 2.0 * pi * p.radius * p.height;
            } else if constexpr (std::is_same_v<T, SpherePatch>) {
                return (p.hemisphere ? 2.0 : 4.0) * pi * p.radius * p.radius;
            } else {  // Thomsen approximation, adequate for selection weights
                const double q = 1.6075;
                auto pw = [&](double x) { return std::pow(x, q); };
                const double s = (pw(p.a * p.b) + pw(p.a * p.c) + pw(p.b * p.c)) / 3.0;
                return 4.0 * pi * std::pow(s, 1.0 / q);
            }
        },
        patch);
}

inline Vec3 sample_patch(const Patch& patch, Rng& rng) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    return std::visit(
        [&](const auto& p) -> Vec3 {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, RectPatch>) {
                return p.origin + p.u * rng.uniform() + p.v * rng.uniform();
            } else if constexpr (std::is_same_v<T, AnnulusPatch>) {
                const double r =
                    std::sqrt(rng.uniform(p.r_in * p.r_in, p.r_out * p.r_out));
                const double th = rng.uniform(0.0, two_pi);
                return p.center + p.u * (r * std::cos(th)) + p.v * (r * std::sin(th));
            } else if constexpr (std::is_same_v<T, CylSidePatch>) {
                const double th = rng.uniform(0.0, two_pi);
                const double t = rng.uniform();
                return p.base + p.axis * (t * p.height) + p.u * (p.radius * std::cos(th)) +
                       p.v * (p.radius * std::sin(th));
            } else if constexpr (std::is_same_v<T, SpherePatch>) {
                Vec3 dir;
                double n = 0.0;
                do {
                    dir = {rng.gaussian(), rng.gaussian(), rng.gaussian()};
                    n = geom::norm(dir);
                } while (n < 1e-12);
                dir = dir / n;
                if (p.hemisphere && geom::dot(dir, p.cap_axis) < 0.0) dir = dir * -1.0;
                return p.center + dir * p.radius;
            } else {
                // area-uniform ellipsoid point by rejection on the sphere map
                const double wmax = std::max({p.a * p.b, p.a * p.c, p.b * p.c});
                while (true) {
                    Vec3 dir;
                    double n = 0.0;
                    do {
                        dir = {rng.gaussian(), rng.gaussian(), rng.gaussian()};
                        n = geom::norm(dir);
                    } while (n < 1e-12);
                    dir = dir / n;
                    const double w = std::sqrt(p.b * p.b * p.c * p.c * dir.x * dir.x +
                                               p.a * p.a * p.c * p.c * dir.y * dir.y +
                                               p.a * p.a * p.b * p.b * dir.z * dir.z);
                    if (rng.uniform() * wmax <= w)
                        return {p.a * dir.x, p.b * dir.y, p.c * dir.z};
                }
            }
        },
        patch);
}

// Distance from a point to a patch along its defining equation; 0 for points
// sampled on it. Used by tests and kept next to the sampler on purpose.
inline double patch_residual(const Patch& patch, const Vec3& q) {
    return std::visit(
        [&](const auto& p) -> double {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, RectPatch>) {
                const Vec3 n = geom::normalized(geom::cross(p.u, p.v));
                const Vec3 d = q - p.origin;
                const double plane = std::abs(geom::dot(n, d));
                const double s = geom::dot(d, p.u) / geom::dot(p.u, p.u);
                const double t = geom::dot(d, p.v) / geom::dot(p.v, p.v);
                const double over = std::max({0.0, -s, s - 1.0, -t, t - 1.0});
                return plane + over;
            } else if constexpr (std::is_same_v<T, AnnulusPatch>) {
                const Vec3 d = q - p.center;
                const Vec3 n = geom::cross(p.u, p.v);
                const double plane = std::abs(geom::dot(geom::normalized(n), d));
                const double rho = std::hypot(geom::dot(d, p.u), geom::dot(d, p.v));
                const double radial = std::max({0.0, p.r_in - rho, rho - p.r_out});
                return plane + radial;
            } else if constexpr (std::is_same_v<T, CylSidePatch>) {
                const Vec3 d = q - p.base;
                const double t = geom::dot(d, p.axis);
                const double rho = std::hypot(geom::dot(d, p.u), geom::dot(d, p.v));
                return std::abs(rho - p.radius) + std::max({0.0, -t, t - p.height});
            } else if constexpr (std::is_same_v<T, SpherePatch>) {
                const Vec3 d = q - p.center;
                double extra = 0.0;
                if (p.hemisphere) extra = std::max(0.0, -geom::dot(d, p.cap_axis));
                return std::abs(geom::norm(d) - p.radius) + extra;
            } else {
                const double f = (q.x / p.a) * (q.x / p.a) + (q.y / p.b) * (q.y / p.b) +
                                 (q.z / p.c) * (q.z / p.c);
                return std::abs(f - 1.0);
            }
        },
        patch);
}

// ---------------------------------------------------------------------------
// Patch decompositions
// ---------------------------------------------------------------------------

namespace detail {

inline RectPatch rect_x(double x, double y0, double y1, double z0, double z1) {
    return {{x, y0, z0}, {0, y1 - y0, 0}, {0, 0, z1 - z0}};
}
inline RectPatch rect_y(double y, double x0, double x1, double z0, double z1) {
    return {{x0, y, z0}, {x1 - x0, 0, 0}, {0, 0, z1 - z0}};
}
inline RectPatch rect_z(double z, double x0, double x1, double y0, double y1) {
    return {{x0, y0, z}, {x1 - x0, 0, 0}, {0, y1 - y0, 0}};
}

// inner + outer surface of an axis-aligned wall slab
inline void add_slab_x(std::vector<Patch>& out, double x_inner, double x_outer, double y0,
                       double y1, double z0, double z1, double t) {
    out.push_back(rect_x(x_inner, y0, y1, z0, z1));
    out.push_back(rect_x(x_outer, y0 - t, y1 + t, z0 - t, z1 + t));
}
inline void add_slab_y(std::vector<Patch>& out, double y_inner, double y_outer, double x0,
                       double x1, double z0, double z1, double t) {
    out.push_back(rect_y(y_inner, x0, x1, z0, z1));
    out.push_back(rect_y(y_outer, x0 - t, x1 + t, z0 - t, z1 + t));
}
inline void add_slab_z(std::vector<Patch>& out, double z_inner, double z_outer, double x0,
                       double x1, double y0, double y1, double t) {
    out.push_back(rect_z(z_inner, x0, x1, y0, y1));
    out.push_back(rect_z(z_outer, x0 - t, x1 + t, y0 - t, y1 + t));
}

inline void add_box_surfaces(std::vector<Patch>& out, const Vec3& lo, const Vec3& hi) {
    out.push_back(rect_x(lo.x, lo.y, hi.y, lo.z, hi.z));
    out.push_back(rect_x(hi.x, lo.y, hi.y, lo.z, hi.z));
    out.push_back(rect_y(lo.y, lo.x, hi.x, lo.z, hi.z));
    out.push_back(rect_y(hi.y, lo.x, hi.x, lo.z, hi.z));
    out.push_back(rect_z(lo.z, lo.x, hi.x, lo.y, hi.y));
    out.push_back(rect_z(hi.z, lo.x, hi.x, lo.y, hi.y));
}

inline void add_tube_walls(std::vector<Patch>& out, double cx, double w, double h, double d,
                           double t) {
    // side walls (x) and floor/ceiling (z); open along y
    out.push_back(rect_x(cx - w / 2, -d / 2, d / 2, -h / 2, h / 2));
    out.push_back(rect_x(cx - w / 2 - t, -d / 2, d / 2, -h / 2 - t, h / 2 + t));
    out.push_back(rect_x(cx + w / 2, -d / 2, d / 2, -h / 2, h / 2));
    out.push_back(rect_x(cx + w / 2 + t, -d / 2, d / 2, -h / 2 - t, h / 2 + t));
    out.push_back(rect_z(-h / 2, cx - w / 2, cx + w / 2, -d / 2, d / 2));
    out.push_back(rect_z(-h / 2 - t, cx - w / 2 - t, cx + w / 2 + t, -d / 2, d / 2));
    out.push_back(rect_z(h / 2, cx - w / 2, cx + w / 2, -d / 2, d / 2));
    out.push_back(rect_z(h / 2 + t, cx - w / 2 - t, cx + w / 2 + t, -d / 2, d / 2));
}

constexpr double kSlabFraction = 0.02;

}  // namespace detail

inline double slab_thickness(const EnvSpec& spec) {
    using detail::kSlabFraction;
    return std::visit(
        [](const auto& s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Tube>)
                return kSlabFraction * std::min({s.width, s.height, s.depth});
            else if constexpr (std::is_same_v<T, CylinderContainer>)
                return kSlabFraction * std::min(s.radius, s.height);
            else if constexpr (std::is_same_v<T, SphereContainer>)
                return kSlabFraction * s.radius;
            else if constexpr (std::is_same_v<T, PartialBox>)
                return kSlabFraction * std::min({s.width, s.length, s.height});
            else if constexpr (std::is_same_v<T, ShelfRack>) {
                double m = std::numeric_limits<double>::infinity();
                for (const auto& c : s.cavities) m = std::min({m, c.width, c.length, c.height});
                return kSlabFraction * m;
            } else if constexpr (std::is_same_v<T, TableTop>)
                return kSlabFraction * std::min(s.width, s.length);
            else if constexpr (std::is_same_v<T, Rod>)
                return kSlabFraction * s.diameter;
            else {
                double m = s.depth;
                for (const auto& t : s.tubes) m = std::min({m, t.width, t.height});
                return kSlabFraction * m;
            }
        },
        spec);
}

inline std::vector<Patch> env_patches(const EnvSpec& spec) {
    std::vector<Patch> out;
    const double t = slab_thickness(spec);
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Tube>) {
                detail::add_tube_walls(out, 0.0, s.width, s.height, s.depth, t);
            } else if constexpr (std::is_same_v<T, CylinderContainer>) {
                const Vec3 ex{1, 0, 0}, ey{0, 1, 0}, ez{0, 0, 1};
                out.push_back(CylSidePatch{{0, 0, 0}, ez, ex, ey, s.radius, s.height});
                out.push_back(CylSidePatch{{0, 0, -t}, ez, ex, ey, s.radius + t, s.height + t});
                out.push_back(AnnulusPatch{{0, 0, 0}, ex, ey, 0.0, s.radius});
                out.push_back(AnnulusPatch{{0, 0, -t}, ex, ey, 0.0, s.radius + t});
            } else if constexpr (std::is_same_v<T, SphereContainer>) {
                out.push_back(SpherePatch{{0, 0, 0}, s.radius});
                out.push_back(SpherePatch{{0, 0, 0}, s.radius + t});
            } else if constexpr (std::is_same_v<T, PartialBox>) {
                const double w = s.width / 2, l = s.length / 2, h = s.height / 2;
                if (s.faces[0]) detail::add_slab_x(out, -w, -w - t, -l, l, -h, h, t);
                if (s.faces[1]) detail::add_slab_x(out, w, w + t, -l, l, -h, h, t);
                if (s.faces[2]) detail::add_slab_y(out, -l, -l - t, -w, w, -h, h, t);
                if (s.faces[3]) detail::add_slab_y(out, l, l + t, -w, w, -h, h, t);
                if (s.faces[4]) detail::add_slab_z(out, -h, -h - t, -w, w, -l, l, t);
                if (s.faces[5]) detail::add_slab_z(out, h, h + t, -w, w, -l, l, t);
            } else if constexpr (std::is_same_v<T, ShelfRack>) {
                double w = 0, l = 0;
                for (const auto& c : s.cavities) {
                    w = std::max(w, c.width);
                    l = std::max(l, c.length);
                }
                // boards below each cavity and above the last one
                for (const auto& c : s.cavities)
                    detail::add_slab_z(out, c.offset, c.offset - t, -w / 2, w / 2, -l / 2, l / 2,
                                       t);
                const auto& top = s.cavities.back();
                detail::add_slab_z(out, top.offset + top.height, top.offset + top.height + t,
                                   -w / 2, w / 2, -l / 2, l / 2, t);
                const double z0 = s.cavities.front().offset - t;
                const double z1 = top.offset + top.height + t;
                detail::add_slab_x(out, -w / 2, -w / 2 - t, -l / 2, l / 2, z0, z1, t);
                detail::add_slab_x(out, w / 2, w / 2 + t, -l / 2, l / 2, z0, z1, t);
                detail::add_slab_y(out, l / 2, l / 2 + t, -w / 2, w / 2, z0, z1, t);  // back
            } else if constexpr (std::is_same_v<T, TableTop>) {
                const double w = s.width / 2, l = s.length / 2;
                out.push_back(detail::rect_z(s.leg_height + s.thickness, -w, w, -l, l));
                out.push_back(detail::rect_z(s.leg_height, -w, w, -l, l));
                const double side = 0.08 * std::min(s.width, s.length);
                for (int ix : {-1, 1})
                    for (int iy : {-1, 1}) {
                        const double cx = ix * (w - side), cy = iy * (l - side);
                        const Vec3 lo{cx - side / 2, cy - side / 2, 0.0};
                        const Vec3 hi{cx + side / 2, cy + side / 2, s.leg_height};
                        out.push_back(detail::rect_x(lo.x, lo.y, hi.y, lo.z, hi.z));
                        out.push_back(detail::rect_x(hi.x, lo.y, hi.y, lo.z, hi.z));
                        out.push_back(detail::rect_y(lo.y, lo.x, hi.x, lo.z, hi.z));
                        out.push_back(detail::rect_y(hi.y, lo.x, hi.x, lo.z, hi.z));
                    }
            } else if constexpr (std::is_same_v<T, Rod>) {
                const Vec3 ex{1, 0, 0}, ey{0, 1, 0}, ez{0, 0, 1};
                const double r = s.diameter / 2;
                out.push_back(
                    CylSidePatch{{0, -s.length / 2, 0}, ey, ez, ex, r, s.length});
                out.push_back(AnnulusPatch{{0, -s.length / 2, 0}, ez, ex, 0.0, r});
                out.push_back(AnnulusPatch{{0, s.length / 2, 0}, ez, ex, 0.0, r});
            } else {  // MultiTube
                detail::add_tube_walls(out, -s.spacing / 2, s.tubes[0].width, s.tubes[0].height,
                                       s.depth, t);
                detail::add_tube_walls(out, s.spacing / 2, s.tubes[1].width, s.tubes[1].height,
                                       s.depth, t);
            }
        },
        spec);
    return out;
}

inline std::vector<Patch> obj_patches(const ObjSpec& spec) {
    std::vector<Patch> out;
    const Vec3 ex{1, 0, 0}, ey{0, 1, 0}, ez{0, 0, 1};
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Box>) {
                detail::add_box_surfaces(out, {-s.width / 2, -s.length / 2, -s.height / 2},
                                         {s.width / 2, s.length / 2, s.height / 2});
            } else if constexpr (std::is_same_v<T, Cylinder>) {
                out.push_back(
                    CylSidePatch{{0, 0, -s.height / 2}, ez, ex, ey, s.radius, s.height});
                out.push_back(AnnulusPatch{{0, 0, -s.height / 2}, ex, ey, 0.0, s.radius});
                out.push_back(AnnulusPatch{{0, 0, s.height / 2}, ex, ey, 0.0, s.radius});
            } else if constexpr (std::is_same_v<T, Ellipsoid>) {
                out.push_back(EllipsoidPatch{s.a, s.b, s.c});
            } else if constexpr (std::is_same_v<T, Capsule>) {
                out.push_back(
                    CylSidePatch{{0, 0, -s.height / 2}, ez, ex, ey, s.radius, s.height});
                out.push_back(SpherePatch{{0, 0, s.height / 2}, s.radius, ez, true});
                out.push_back(SpherePatch{{0, 0, -s.height / 2}, s.radius, ez * -1.0, true});
            } else if constexpr (std::is_same_v<T, LShape>) {
                const double w = s.width, l = s.length, h = s.height;
                const double nx = w / 2 - s.notch_x * w;  // notch starts here in x
                const double ny = l / 2 - s.notch_y * l;  // and here in y
                // top/bottom L-polygons as two rectangles each
                for (double z : {-h / 2, h / 2}) {
                    out.push_back(detail::rect_z(z, -w / 2, nx, -l / 2, l / 2));
                    out.push_back(detail::rect_z(z, nx, w / 2, -l / 2, ny));
                }
                out.push_back(detail::rect_x(-w / 2, -l / 2, l / 2, -h / 2, h / 2));
                out.push_back(detail::rect_x(w / 2, -l / 2, ny, -h / 2, h / 2));
                out.push_back(detail::rect_y(-l / 2, -w / 2, w / 2, -h / 2, h / 2));
                out.push_back(detail::rect_y(l / 2, -w / 2, nx, -h / 2, h / 2));
                out.push_back(detail::rect_x(nx, ny, l / 2, -h / 2, h / 2));  // notch walls
                out.push_back(detail::rect_y(ny, nx, w / 2, -h / 2, h / 2));
            } else if constexpr (std::is_same_v<T, Mug>) {
                out.push_back(CylSidePatch{{0, 0, 0}, ez, ex, ey, s.body_radius, s.body_height});
                out.push_back(AnnulusPatch{{0, 0, 0}, ex, ey, 0.0, s.body_radius});
                const double th = s.handle_thickness;
                const double z0 = 0.2 * s.body_height;
                const double hh = 0.6 * s.body_height;
                const double x0 = s.body_radius;  // handle arm leaves the body surface here
                const double x1 = s.body_radius + s.handle_gap + th;
                detail::add_box_surfaces(out, {x1 - th, -th / 2, z0}, {x1, th / 2, z0 + hh});
                detail::add_box_surfaces(out, {x0, -th / 2, z0}, {x1 - th, th / 2, z0 + th});
                detail::add_box_surfaces(out, {x0, -th / 2, z0 + hh - th},
                                         {x1 - th, th / 2, z0 + hh});
            } else {  // Composite
                for (const auto& part : s.parts) {
                    if (part.is_box) {
                        const Vec3 half{part.a / 2, part.b / 2, part.c / 2};
                        detail::add_box_surfaces(out, part.offset - half, part.offset + half);
                    } else {
                        out.push_back(CylSidePatch{part.offset - ez * (part.c / 2), ez, ex, ey,
                                                   part.a, part.c});
                        out.push_back(AnnulusPatch{part.offset - ez * (part.c / 2), ex, ey, 0.0,
                                                   part.a});
                        out.push_back(AnnulusPatch{part.offset + ez * (part.c / 2), ex, ey, 0.0,
                                                   part.a});
                    }
                }
            }
        },
        spec);
    return out;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

inline PointCloud sample_patches(const std::vector<Patch>& patches, std::size_t n, Rng& rng,
                                 std::vector<std::size_t>* patch_ids = nullptr) {
    if (patches.empty()) throw std::invalid_argument("sample_patches: degenerate shape");
    std::vector<double> cum;
    cum.reserve(patches.size());
    double total = 0.0;
    for (const auto& p : patches) {
        total += patch_area(p);
        cum.push_back(total);
    }
    if (!(total > 0.0)) throw std::invalid_argument("sample_patches: zero surface area");
    std::vector<Vec3> pts;
    pts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform(0.0, total);
        const auto it = std::lower_bound(cum.begin(), cum.end(), u);
        const std::size_t idx =
            std::min(static_cast<std::size_t>(it - cum.begin()), patches.size() - 1);
        pts.push_back(sample_patch(patches[idx], rng));
        if (patch_ids) patch_ids->push_back(idx);
    }
    return PointCloud(std::move(pts));
}

inline PointCloud sample_surface(const EnvSpec& spec, std::size_t n, Rng& rng) {
    if (n < 8) throw std::invalid_argument("sample_surface: need at least 8 points");
    return sample_patches(env_patches(spec), n, rng);
}

inline PointCloud sample_surface(const ObjSpec& spec, std::size_t n, Rng& rng) {
    if (n < 8) throw std::invalid_argument("sample_surface: need at least 8 points");
    return sample_patches(obj_patches(spec), n, rng);
}

// ---------------------------------------------------------------------------
// Ground-truth annotation
// ---------------------------------------------------------------------------

struct GtAnnotation {
    std::map<std::string, double> values;
    std::map<std::string, Vec3> dirs;  // unit measurement directions, rotated with the env

    double at(const std::string& key) const {
        const auto it = values.find(key);
        if (it == values.end()) throw std::out_of_range("GtAnnotation: missing key " + key);
        return it->second;
    }
    bool has(const std::string& key) const { return values.count(key) != 0; }
};

// Environment-side annotation; inner dimensions come from the shape parameters,
// direction vectors rotate covariantly with the applied rotation.
inline GtAnnotation env_annotation(const EnvSpec& spec, const Mat3& rotation) {
    GtAnnotation gt;
    const Vec3 ex = rotation.col(0), ey = rotation.col(1), ez = rotation.col(2);
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Tube>) {
                gt.values["env.width"] = s.width;
                gt.values["env.height"] = s.height;
                gt.dirs["env.width"] = ex;
                gt.dirs["env.height"] = ez;
            } else if constexpr (std::is_same_v<T, CylinderContainer>) {
                gt.values["env.radius"] = s.radius;
                gt.values["env.height"] = s.height;
                gt.dirs["env.height"] = ez;
            } else if constexpr (std::is_same_v<T, SphereContainer>) {
                gt.values["env.radius"] = s.radius;
            } else if constexpr (std::is_same_v<T, PartialBox>) {
                gt.values["env.width"] = s.width;
                gt.values["env.length"] = s.length;
                gt.values["env.height"] = s.height;
                gt.dirs["env.width"] = ex;
                gt.dirs["env.length"] = ey;
                gt.dirs["env.height"] = ez;
            } else if constexpr (std::is_same_v<T, ShelfRack>) {
                double best_vol = -1.0;
                for (std::size_t i = 0; i < s.cavities.size(); ++i) {
                    const auto& c = s.cavities[i];
                    const std::string base = "env.cavity" + std::to_string(i);
                    gt.values[base + ".width"] = c.width;
                    gt.values[base + ".length"] = c.length;
                    gt.values[base + ".height"] = c.height;
                    const double vol = c.width * c.length * c.height;
                    if (vol > best_vol) {
                        best_vol = vol;
                        gt.values["env.width"] = c.width;
                        gt.values["env.length"] = c.length;
                        gt.values["env.height"] = c.height;
                    }
                }
                gt.dirs["env.width"] = ex;
                gt.dirs["env.length"] = ey;
                gt.dirs["env.height"] = ez;
            } else if constexpr (std::is_same_v<T, TableTop>) {
                gt.values["env.width"] = s.width;
                gt.values["env.length"] = s.length;
                gt.dirs["env.width"] = ex;
                gt.dirs["env.length"] = ey;
            } else if constexpr (std::is_same_v<T, Rod>) {
                gt.values["env.rod_diameter"] = s.diameter;
            } else {  // MultiTube
                for (int i = 0; i < 2; ++i) {
                    const std::string base = "env.tube" + std::to_string(i);
                    gt.values[base + ".width"] = s.tubes[static_cast<std::size_t>(i)].width;
                    gt.values[base + ".height"] = s.tubes[static_cast<std::size_t>(i)].height;
                    gt.dirs[base + ".width"] = ex;
                    gt.dirs[base + ".height"] = ez;
                }
            }
        },
        spec);
    return gt;
}

// Object-side annotation, computed from the sampled cloud along the rotated
// environment axes so labels, network inputs, and analysis targets agree.
inline GtAnnotation obj_annotation(const PointCloud& cloud, const Mat3& env_rotation) {
    GtAnnotation gt;
    const Vec3 ex = env_rotation.col(0), ey = env_rotation.col(1), ez = env_rotation.col(2);
    gt.values["obj.extent_x"] = geom::directional_extent(cloud, ex);
    gt.values["obj.extent_y"] = geom::directional_extent(cloud, ey);
    gt.values["obj.extent_z"] = geom::directional_extent(cloud, ez);
    gt.dirs["obj.extent_x"] = ex;
    gt.dirs["obj.extent_y"] = ey;
    gt.dirs["obj.extent_z"] = ez;
    gt.values["obj.xy_ball_radius"] = geom::projected_enclosing_circle(cloud, ex, ey).radius;
    gt.values["obj.ball_radius"] = geom::min_enclosing_sphere(cloud).radius;
    return gt;
}

inline GtAnnotation merged(GtAnnotation a, const GtAnnotation& b) {
    a.values.insert(b.values.begin(), b.values.end());
    a.dirs.insert(b.dirs.begin(), b.dirs.end());
    return a;
}

// ---------------------------------------------------------------------------
// Random spec draws (parameter ranges are replacements for unstated ones)
// ---------------------------------------------------------------------------

struct ParamRanges {
    double env_lo = 0.5, env_hi = 3.0;
    double obj_lo = 0.2, obj_hi = 2.5;
    double mug_gap_lo = 0.05, mug_gap_hi = 0.5;
    double rod_diameter_lo = 0.02, rod_diameter_hi = 0.6;
};

inline Tube random_tube(Rng& rng, const ParamRanges& r) {
    return {rng.uniform(r.env_lo, r.env_hi), rng.uniform(r.env_lo, r.env_hi),
            rng.uniform(r.env_lo, r.env_hi)};
}
inline CylinderContainer random_cylinder_container(Rng& rng, const ParamRanges& r) {
    return {0.5 * rng.uniform(r.env_lo, r.env_hi), rng.uniform(r.env_lo, r.env_hi)};
}
inline SphereContainer random_sphere_container(Rng& rng, const ParamRanges& r) {
    return {0.5 * rng.uniform(r.env_lo, r.env_hi)};
}
inline PartialBox random_partial_box(Rng& rng, const ParamRanges& r,
                                     const std::array<bool, 6>* fixed_faces) {
    PartialBox b{rng.uniform(r.env_lo, r.env_hi), rng.uniform(r.env_lo, r.env_hi),
                 rng.uniform(r.env_lo, r.env_hi),
                 {true, true, true, true, true, true}};
    if (fixed_faces) {
        b.faces = *fixed_faces;
    } else {
        bool any = false;
        for (auto& f : b.faces) {
            f = rng.coin();
            any = any || f;
        }
        if (!any) b.faces[4] = true;  // keep at least the floor
    }
    return b;
}
inline ShelfRack random_shelf_rack(Rng& rng, const ParamRanges& r) {
    ShelfRack rack;
    const std::size_t n = 2 + rng.below(2);  // 2 or 3 cavities
    const double w = rng.uniform(r.env_lo, r.env_hi);
    const double l = rng.uniform(r.env_lo, r.env_hi);
    const double board = detail::kSlabFraction * std::min(w, l);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double h = rng.uniform(r.env_lo, r.env_hi);
        rack.cavities.push_back({w, l, h, z});
        z += h + board;
    }
    return rack;
}
inline TableTop random_table_top(Rng& rng, const ParamRanges& r) {
    const double w = rng.uniform(r.env_lo, r.env_hi);
    const double l = rng.uniform(r.env_lo, r.env_hi);
    return {w, l, 0.05 * std::min(w, l), rng.uniform(0.5, 1.5)};
}
inline Rod random_rod(Rng& rng, const ParamRanges& r) {
    return {rng.uniform(r.rod_diameter_lo, r.rod_diameter_hi), rng.uniform(1.0, 2.0)};
}
inline MultiTube random_multi_tube(Rng& rng, const ParamRanges& r) {
    MultiTube mt;
    for (auto& tube : mt.tubes)
        tube = {rng.uniform(r.env_lo, r.env_hi), rng.uniform(r.env_lo, r.env_hi)};
    mt.depth = rng.uniform(r.env_lo, r.env_hi);
    mt.spacing = 3.4;  // fixed centers
    return mt;
}

inline Mug random_mug(Rng& rng, const ParamRanges& r) {
    Mug m;
    m.body_radius = rng.uniform(0.2, 0.6);
    m.body_height = rng.uniform(0.4, 1.0);
    m.handle_gap = rng.uniform(r.mug_gap_lo, r.mug_gap_hi);
    m.handle_thickness = rng.uniform(0.04, 0.1);
    return m;
}

// Generic object for the geometric tasks (mugs are drawn only for mug hanging).
inline ObjSpec random_object(Rng& rng, const ParamRanges& r) {
    auto dim = [&] { return rng.uniform(r.obj_lo, r.obj_hi); };
    switch (rng.below(6)) {
        case 0: return ObjSpec{Box{dim(), dim(), dim()}};
        case 1: return ObjSpec{Cylinder{0.5 * dim(), dim()}};
        case 2: return ObjSpec{Ellipsoid{0.5 * dim(), 0.5 * dim(), 0.5 * dim()}};
        case 3: {
            const double rad = 0.5 * rng.uniform(r.obj_lo, 0.5 * r.obj_hi);
            return ObjSpec{Capsule{rad, dim()}};
        }
        case 4:
            return ObjSpec{
                LShape{dim(), dim(), dim(), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)}};
        default: {
            Composite comp;
            const std::size_t parts = 1 + rng.below(3);
            comp.parts.push_back({true, dim(), dim(), dim(), Vec3{}});
            for (std::size_t i = 1; i < parts; ++i) {
                CompositePart p;
                p.is_box = rng.coin();
                if (p.is_box) {
                    p.a = dim(); p.b = dim(); p.c = dim();
                } else {
                    p.a = 0.5 * dim(); p.b = p.a; p.c = dim();
                }
                // keep parts overlapping the first one
                const auto& root = comp.parts.front();
                p.offset = {rng.uniform(-0.4, 0.4) * root.a, rng.uniform(-0.4, 0.4) * root.b,
                            rng.uniform(-0.4, 0.4) * root.c};
                comp.parts.push_back(p);
            }
            return ObjSpec{comp};
        }
    }
}

}  // namespace eigenlen::shapes
