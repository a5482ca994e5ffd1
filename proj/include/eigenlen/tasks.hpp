#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "eigenlen/geom.hpp"
#include "eigenlen/shapes.hpp"

namespace eigenlen::tasks {

using geom::Mat3;
using geom::PointCloud;
using geom::Vec3;
using shapes::EnvSpec;
using shapes::GtAnnotation;

enum class TaskKind { Tube, Cylinder, Sphere, PartialBox, ShelfRack, Top, Mug, MultiTube };

inline const char* task_name(TaskKind k) {
    switch (k) {
        case TaskKind::Tube: return "tube";
        case TaskKind::Cylinder: return "cylinder";
        case TaskKind::Sphere: return "sphere";
        case TaskKind::PartialBox: return "partial_box";
        case TaskKind::ShelfRack: return "shelf_rack";
        case TaskKind::Top: return "top";
        case TaskKind::Mug: return "mug";
        case TaskKind::MultiTube: return "multi_tube";
    }
    return "?";
}

inline TaskKind task_from_name(const std::string& name) {
    for (TaskKind k : {TaskKind::Tube, TaskKind::Cylinder, TaskKind::Sphere, TaskKind::PartialBox,
                       TaskKind::ShelfRack, TaskKind::Top, TaskKind::Mug, TaskKind::MultiTube})
        if (name == task_name(k)) return k;
    throw std::invalid_argument("unknown task: " + name);
}

// Number of ground-truth comparisons the task binds.
inline int comparison_arity(TaskKind k) {
    switch (k) {
        case TaskKind::Tube: return 2;
        case TaskKind::Cylinder: return 2;
        case TaskKind::Sphere: return 1;
        case TaskKind::PartialBox: return 3;
        case TaskKind::ShelfRack: return 3;
        case TaskKind::Top: return 2;
        case TaskKind::Mug: return 1;
        case TaskKind::MultiTube: return 4;
    }
    return 0;
}

// Ground-truth names for each task comparison, (env side, obj side) per slot.
inline std::vector<std::pair<std::string, std::string>> task_comparisons(TaskKind k) {
    switch (k) {
        case TaskKind::Tube:
            return {{"env.width", "obj.extent_x"}, {"env.height", "obj.extent_z"}};
        case TaskKind::Cylinder:
            return {{"env.radius", "obj.xy_ball_radius"}, {"env.height", "obj.extent_z"}};
        case TaskKind::Sphere: return {{"env.radius", "obj.ball_radius"}};
        case TaskKind::PartialBox:
            return {{"env.width", "obj.extent_x"},
                    {"env.length", "obj.extent_y"},
                    {"env.height", "obj.extent_z"}};
        case TaskKind::ShelfRack:
            return {{"env.width", "obj.extent_x"},
                    {"env.length", "obj.extent_y"},
                    {"env.height", "obj.extent_z"}};
        case TaskKind::Top:
            return {{"env.width", "obj.extent_x"}, {"env.length", "obj.extent_y"}};
        case TaskKind::Mug: return {{"env.rod_diameter", "obj.handle_gap"}};
        case TaskKind::MultiTube:
            return {{"env.tube0.width", "obj.extent_x"},
                    {"env.tube0.height", "obj.extent_z"},
                    {"env.tube1.width", "obj.extent_x"},
                    {"env.tube1.height", "obj.extent_z"}};
    }
    return {};
}

// One labeled fitting trial.
struct TaskInstance {
    TaskKind kind{};
    EnvSpec env_spec;
    Mat3 env_rotation;  // identity unless the environment was rotated
    PointCloud env_cloud;
    PointCloud obj_cloud;  // already transformed
    bool label = false;
    GtAnnotation gt;
};

namespace detail {

struct Extents {
    double x, y, z;
};

inline Extents extents_in_env_frame(const PointCloud& obj, const Mat3& rot) {
    return {geom::directional_extent(obj, rot.col(0)), geom::directional_extent(obj, rot.col(1)),
            geom::directional_extent(obj, rot.col(2))};
}

}  // namespace detail

// Signed feasibility margin of the analytic rule: positive means feasible with
// that much slack in the binding comparison, negative means infeasible by that
// much. Feasibility itself is margin > 0 (strict comparisons).
inline double analytic_margin(const EnvSpec& env, const Mat3& env_rot, const PointCloud& obj) {
    if (obj.empty()) throw std::invalid_argument("analytic_margin: empty object cloud");
    return std::visit(
        [&](const auto& s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, shapes::Tube>) {
                const auto e = detail::extents_in_env_frame(obj, env_rot);
                return std::min(s.width - e.x, s.height - e.z);
            } else if constexpr (std::is_same_v<T, shapes::CylinderContainer>) {
                const double r =
                    geom::projected_enclosing_circle(obj, env_rot.col(0), env_rot.col(1)).radius;
                const double ez = geom::directional_extent(obj, env_rot.col(2));
                return std::min(s.radius - r, s.height - ez);
            } else if constexpr (std::is_same_v<T, shapes::SphereContainer>) {
                return s.radius - geom::min_enclosing_sphere(obj).radius;
            } else if constexpr (std::is_same_v<T, shapes::PartialBox>) {
                const auto e = detail::extents_in_env_frame(obj, env_rot);
                double m = std::numeric_limits<double>::infinity();
                if (s.faces[0] && s.faces[1]) m = std::min(m, s.width - e.x);
                if (s.faces[2] && s.faces[3]) m = std::min(m, s.length - e.y);
                if (s.faces[4] && s.faces[5]) m = std::min(m, s.height - e.z);
                return m;  // +inf when no axis is constrained: always feasible
            } else if constexpr (std::is_same_v<T, shapes::ShelfRack>) {
                const auto e = detail::extents_in_env_frame(obj, env_rot);
                double best = -std::numeric_limits<double>::infinity();
                for (const auto& c : s.cavities)
                    best = std::max(
                        best, std::min({c.width - e.x, c.length - e.y, c.height - e.z}));
                return best;
            } else if constexpr (std::is_same_v<T, shapes::TableTop>) {
                const auto e = detail::extents_in_env_frame(obj, env_rot);
                return std::min(s.width - e.x, s.length - e.y);
            } else if constexpr (std::is_same_v<T, shapes::Rod>) {
                throw std::invalid_argument(
                    "analytic_margin: mug hanging needs the object spec, use "
                    "analytic_margin_mug");
            } else {  // MultiTube
                const auto e = detail::extents_in_env_frame(obj, env_rot);
                double best = -std::numeric_limits<double>::infinity();
                for (const auto& tube : s.tubes)
                    best = std::max(best, std::min(tube.width - e.x, tube.height - e.z));
                return best;
            }
        },
        env);
}

inline bool analytic_feasible(const EnvSpec& env, const Mat3& env_rot, const PointCloud& obj) {
    return analytic_margin(env, env_rot, obj) > 0.0;
}

// Mug hanging is exact by construction of the procedural mug: the rod must be
// thinner than the handle opening.
inline double analytic_margin_mug(const shapes::Rod& holder, const shapes::Mug& mug) {
    return mug.handle_gap - holder.diameter;
}
inline bool analytic_feasible_mug(const shapes::Rod& holder, const shapes::Mug& mug) {
    return analytic_margin_mug(holder, mug) > 0.0;
}

// ---------------------------------------------------------------------------
// Brute-force oracle: exhaustive translation search over a regular grid. The
// verdict for each candidate comes from testing every object point against
// the free region and the face slabs; axis intervals only bound the grid.
// ---------------------------------------------------------------------------

namespace detail {

struct BoxVol {
    Vec3 lo, hi;
    bool contains(const Vec3& p) const {
        return p.x > lo.x && p.x < hi.x && p.y > lo.y && p.y < hi.y && p.z > lo.z && p.z < hi.z;
    }
};
struct CylShellVol {  // axis z
    double r_in, r_out, z_lo, z_hi;
    bool contains(const Vec3& p) const {
        const double rho2 = p.x * p.x + p.y * p.y;
        return p.z > z_lo && p.z < z_hi && rho2 > r_in * r_in && rho2 < r_out * r_out;
    }
};
struct SphereShellVol {
    double r_in, r_out;
    bool contains(const Vec3& p) const {
        const double d2 = geom::dot(p, p);
        return d2 > r_in * r_in && d2 < r_out * r_out;
    }
};
struct SlabVol {
    std::variant<BoxVol, CylShellVol, SphereShellVol> vol;
    bool contains(const Vec3& p) const {
        return std::visit([&](const auto& v) { return v.contains(p); }, vol);
    }
};

inline std::vector<SlabVol> env_slab_volumes(const EnvSpec& env) {
    std::vector<SlabVol> out;
    const double t = shapes::slab_thickness(env);
    auto box = [&](Vec3 lo, Vec3 hi) { out.push_back({BoxVol{lo, hi}}); };
    auto tube_walls = [&](double cx, double w, double h, double d) {
        box({cx - w / 2 - t, -d / 2, -h / 2 - t}, {cx - w / 2, d / 2, h / 2 + t});
        box({cx + w / 2, -d / 2, -h / 2 - t}, {cx + w / 2 + t, d / 2, h / 2 + t});
        box({cx - w / 2 - t, -d / 2, -h / 2 - t}, {cx + w / 2 + t, d / 2, -h / 2});
        box({cx - w / 2 - t, -d / 2, h / 2}, {cx + w / 2 + t, d / 2, h / 2 + t});
    };
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, shapes::Tube>) {
                tube_walls(0.0, s.width, s.height, s.depth);
            } else if constexpr (std::is_same_v<T, shapes::CylinderContainer>) {
                out.push_back({CylShellVol{s.radius, s.radius + t, -t, s.height}});
                out.push_back({CylShellVol{0.0, s.radius + t, -t, 0.0}});
            } else if constexpr (std::is_same_v<T, shapes::SphereContainer>) {
                out.push_back({SphereShellVol{s.radius, s.radius + t}});
            } else if constexpr (std::is_same_v<T, shapes::PartialBox>) {
                const double w = s.width / 2, l = s.length / 2, h = s.height / 2;
                if (s.faces[0]) box({-w - t, -l - t, -h - t}, {-w, l + t, h + t});
                if (s.faces[1]) box({w, -l - t, -h - t}, {w + t, l + t, h + t});
                if (s.faces[2]) box({-w - t, -l - t, -h - t}, {w + t, -l, h + t});
                if (s.faces[3]) box({-w - t, l, -h - t}, {w + t, l + t, h + t});
                if (s.faces[4]) box({-w - t, -l - t, -h - t}, {w + t, l + t, -h});
                if (s.faces[5]) box({-w - t, -l - t, h}, {w + t, l + t, h + t});
            } else if constexpr (std::is_same_v<T, shapes::ShelfRack>) {
                double w = 0, l = 0;
                for (const auto& c : s.cavities) {
                    w = std::max(w, c.width);
                    l = std::max(l, c.length);
                }
                for (const auto& c : s.cavities)
                    box({-w / 2, -l / 2, c.offset - t}, {w / 2, l / 2, c.offset});
                const auto& top = s.cavities.back();
                box({-w / 2, -l / 2, top.offset + top.height},
                    {w / 2, l / 2, top.offset + top.height + t});
                const double z0 = s.cavities.front().offset - t;
                const double z1 = top.offset + top.height + t;
                box({-w / 2 - t, -l / 2, z0}, {-w / 2, l / 2, z1});
                box({w / 2, -l / 2, z0}, {w / 2 + t, l / 2, z1});
                box({-w / 2 - t, l / 2, z0}, {w / 2 + t, l / 2 + t, z1});
            } else if constexpr (std::is_same_v<T, shapes::TableTop>) {
                const double w = s.width / 2, l = s.length / 2;
                box({-w, -l, s.leg_height}, {w, l, s.leg_height + s.thickness});
                const double side = 0.08 * std::min(s.width, s.length);
                for (int ix : {-1, 1})
                    for (int iy : {-1, 1}) {
                        const double cx = ix * (w - side), cy = iy * (l - side);
                        box({cx - side / 2, cy - side / 2, 0.0},
                            {cx + side / 2, cy + side / 2, s.leg_height});
                    }
            } else if constexpr (std::is_same_v<T, shapes::MultiTube>) {
                tube_walls(-s.spacing / 2, s.tubes[0].width, s.tubes[0].height, s.depth);
                tube_walls(s.spacing / 2, s.tubes[1].width, s.tubes[1].height, s.depth);
            } else {
                throw std::invalid_argument("env_slab_volumes: unsupported kind");
            }
        },
        env);
    return out;
}

struct AxisInterval {
    double lo = 0.0, hi = 0.0;  // admissible coordinate interval, open
    bool bounded = true;        // unbounded axes contribute a single candidate
};

// A free region: per-axis bounding intervals plus the exact point predicate.
struct FreeRegion {
    AxisInterval ix, iy, iz;
    // 0 box-like (intervals are exact), 1 cylinder, 2 sphere, 3 above-plane
    int kind = 0;
    double radius = 0.0;      // cylinder/sphere
    double plane_z = 0.0;     // tabletop surface
    Vec3 box_lo, box_hi;      // cached for the box predicate

    bool contains(const Vec3& p) const {
        switch (kind) {
            case 1: {
                if (p.z <= iz.lo || p.z >= iz.hi) return false;
                return p.x * p.x + p.y * p.y < radius * radius;
            }
            case 2: return geom::dot(p, p) < radius * radius;
            case 3:
                return p.z > plane_z && p.x > ix.lo && p.x < ix.hi && p.y > iy.lo && p.y < iy.hi;
            default: {
                const bool okx = !ix.bounded || (p.x > ix.lo && p.x < ix.hi);
                const bool oky = !iy.bounded || (p.y > iy.lo && p.y < iy.hi);
                const bool okz = !iz.bounded || (p.z > iz.lo && p.z < iz.hi);
                return okx && oky && okz;
            }
        }
    }
};

inline std::vector<FreeRegion> env_free_regions(const EnvSpec& env) {
    std::vector<FreeRegion> out;
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, shapes::Tube>) {
                FreeRegion r;
                r.ix = {-s.width / 2, s.width / 2, true};
                r.iy = {0, 0, false};
                r.iz = {-s.height / 2, s.height / 2, true};
                out.push_back(r);
            } else if constexpr (std::is_same_v<T, shapes::CylinderContainer>) {
                FreeRegion r;
                r.kind = 1;
                r.radius = s.radius;
                r.ix = {-s.radius, s.radius, true};
                r.iy = {-s.radius, s.radius, true};
                r.iz = {0.0, s.height, true};
                out.push_back(r);
            } else if constexpr (std::is_same_v<T, shapes::SphereContainer>) {
                FreeRegion r;
                r.kind = 2;
                r.radius = s.radius;
                r.ix = r.iy = r.iz = {-s.radius, s.radius, true};
                out.push_back(r);
            } else if constexpr (std::is_same_v<T, shapes::PartialBox>) {
                FreeRegion r;
                auto axis = [&](bool lo_face, bool hi_face, double half) -> AxisInterval {
                    if (lo_face && hi_face) return {-half, half, true};
                    // a single face keeps the object on its open side
                    if (lo_face) return {-half, std::numeric_limits<double>::infinity(), true};
                    if (hi_face) return {-std::numeric_limits<double>::infinity(), half, true};
                    return {0, 0, false};
                };
                r.ix = axis(s.faces[0], s.faces[1], s.width / 2);
                r.iy = axis(s.faces[2], s.faces[3], s.length / 2);
                r.iz = axis(s.faces[4], s.faces[5], s.height / 2);
                out.push_back(r);
            } else if constexpr (std::is_same_v<T, shapes::ShelfRack>) {
                double l = 0;
                for (const auto& c : s.cavities) l = std::max(l, c.length);
                for (const auto& c : s.cavities) {
                    FreeRegion r;
                    r.ix = {-c.width / 2, c.width / 2, true};
                    r.iy = {l / 2 - c.length, l / 2, true};  // back wall at +y, front open
                    r.iz = {c.offset, c.offset + c.height, true};
                    out.push_back(r);
                }
            } else if constexpr (std::is_same_v<T, shapes::TableTop>) {
                FreeRegion r;
                r.kind = 3;
                r.plane_z = s.leg_height + s.thickness;
                r.ix = {-s.width / 2, s.width / 2, true};
                r.iy = {-s.length / 2, s.length / 2, true};
                r.iz = {r.plane_z, r.plane_z, true};  // searched upward from the surface
                out.push_back(r);
            } else if constexpr (std::is_same_v<T, shapes::MultiTube>) {
                for (int i = 0; i < 2; ++i) {
                    const auto& tube = s.tubes[static_cast<std::size_t>(i)];
                    FreeRegion r;
                    const double cx = (i == 0 ? -1.0 : 1.0) * s.spacing / 2;
                    r.ix = {cx - tube.width / 2, cx + tube.width / 2, true};
                    r.iy = {0, 0, false};
                    r.iz = {-tube.height / 2, tube.height / 2, true};
                    out.push_back(r);
                }
            } else {
                throw std::invalid_argument("bruteforce_feasible: unsupported kind");
            }
        },
        env);
    return out;
}

// Candidate offsets along one axis, ordered center-out so feasible instances
// exit early. The interval is padded by one step; points decide, not bounds.
// Half-open axes (a single face) keep the object hovering just off the face.
inline std::vector<double> axis_candidates(const AxisInterval& iv, double pt_lo, double pt_hi,
                                           double step) {
    if (!iv.bounded) return {0.0};
    if (std::isinf(iv.hi)) {
        const double base = iv.lo - pt_lo;
        return {base + 0.5 * step, base + 1.5 * step};
    }
    if (std::isinf(iv.lo)) {
        const double base = iv.hi - pt_hi;
        return {base - 0.5 * step, base - 1.5 * step};
    }
    const double lo = iv.lo - pt_lo - step;
    const double hi = iv.hi - pt_hi + step;
    std::vector<double> out;
    if (hi < lo) return out;
    const double mid = 0.5 * (lo + hi);
    out.push_back(mid);
    for (double off = step; ; off += step) {
        bool any = false;
        if (mid + off <= hi) { out.push_back(mid + off); any = true; }
        if (mid - off >= lo) { out.push_back(mid - off); any = true; }
        if (!any) break;
    }
    return out;
}

}  // namespace detail

// True iff some grid translation places every object point inside the free
// region and outside every face slab. Conservative: may miss placements whose
// clearance is below the grid resolution.
inline bool bruteforce_feasible(const EnvSpec& env, const Mat3& env_rot, const PointCloud& obj,
                                double grid_step) {
    if (!(grid_step > 0.0)) throw std::invalid_argument("bruteforce_feasible: grid_step <= 0");
    if (obj.empty()) throw std::invalid_argument("bruteforce_feasible: empty object cloud");

    // work in the environment frame
    const Mat3 to_env = env_rot.transposed();
    std::vector<Vec3> pts;
    pts.reserve(obj.size());
    Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
    for (const auto& p : obj.points()) {
        const Vec3 q = to_env * p;
        lo = {std::min(lo.x, q.x), std::min(lo.y, q.y), std::min(lo.z, q.z)};
        hi = {std::max(hi.x, q.x), std::max(hi.y, q.y), std::max(hi.z, q.z)};
        pts.push_back(q);
    }

    const auto slabs = detail::env_slab_volumes(env);
    for (const auto& region : detail::env_free_regions(env)) {
        const auto xs = detail::axis_candidates(region.ix, lo.x, hi.x, grid_step);
        const auto ys = detail::axis_candidates(region.iy, lo.y, hi.y, grid_step);
        std::vector<double> zs;
        if (region.kind == 3) {
            // above the tabletop: hover one step over the surface
            zs = {region.plane_z - lo.z + 0.5 * grid_step,
                  region.plane_z - lo.z + 1.5 * grid_step};
        } else {
            zs = detail::axis_candidates(region.iz, lo.z, hi.z, grid_step);
        }
        for (const double tx : xs)
            for (const double ty : ys)
                for (const double tz : zs) {
                    bool ok = true;
                    for (const auto& q : pts) {
                        const Vec3 moved{q.x + tx, q.y + ty, q.z + tz};
                        if (!region.contains(moved)) {
                            ok = false;
                            break;
                        }
                        for (const auto& slab : slabs)
                            if (slab.contains(moved)) {
                                ok = false;
                                break;
                            }
                        if (!ok) break;
                    }
                    if (ok) return true;
                }
    }
    return false;
}

// Default grid: 1/64 of the environment bounding span per axis (>= 64^3 grid
// candidates are never exceeded for bounded regions).
inline double default_grid_step(const EnvSpec& env) {
    double span = 0.0;
    for (const auto& region : detail::env_free_regions(env)) {
        for (const auto& iv : {region.ix, region.iy, region.iz})
            if (iv.bounded && std::isfinite(iv.lo) && std::isfinite(iv.hi))
                span = std::max(span, iv.hi - iv.lo);
    }
    return std::max(span, 1e-6) / 64.0;
}

}  // namespace eigenlen::tasks
