#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "eigenlen/geom.hpp"
#include "eigenlen/rng.hpp"
#include "eigenlen/shapes.hpp"
#include "eigenlen/tasks.hpp"

namespace eigenlen::dataset {

using geom::Mat3;
using geom::PointCloud;
using geom::Vec3;
using nlohmann::json;
using tasks::TaskInstance;
using tasks::TaskKind;

constexpr int kFormatVersion = 1;

struct DatasetConfig {
    TaskKind task = TaskKind::Sphere;
    std::size_t n_samples = 1000;
    std::size_t env_points = 256;  // desk preset; paper scale uses 1024
    std::size_t obj_points = 256;
    std::uint64_t seed = 0;
    bool rotate_env = false;
    double positive_lo = 0.35, positive_hi = 0.65;
    double margin = 0.0;  // discard samples whose binding comparison is within this
    shapes::ParamRanges ranges;
    std::optional<std::array<bool, 6>> faces;  // fixed PartialBox face set

    void validate() const {
        if (n_samples == 0) throw std::invalid_argument("DatasetConfig: n_samples == 0");
        if (env_points < 8 || obj_points < 8)
            throw std::invalid_argument("DatasetConfig: point counts must be >= 8");
        if (!(0.0 < positive_lo && positive_lo < positive_hi && positive_hi < 1.0))
            throw std::invalid_argument("DatasetConfig: bad positive_rate_band");
    }
};

struct Dataset {
    DatasetConfig config;
    std::vector<TaskInstance> records;

    std::size_t size() const { return records.size(); }
    double positive_rate() const {
        if (records.empty()) return 0.0;
        std::size_t pos = 0;
        for (const auto& r : records) pos += r.label ? 1 : 0;
        return static_cast<double>(pos) / static_cast<double>(records.size());
    }
};

struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace detail {

inline shapes::EnvSpec draw_env(TaskKind task, Rng& rng, const DatasetConfig& cfg) {
    const auto& r = cfg.ranges;
    switch (task) {
        case TaskKind::Tube: return shapes::random_tube(rng, r);
        case TaskKind::Cylinder: return shapes::random_cylinder_container(rng, r);
        case TaskKind::Sphere: return shapes::random_sphere_container(rng, r);
        case TaskKind::PartialBox:
            return shapes::random_partial_box(rng, r, cfg.faces ? &*cfg.faces : nullptr);
        case TaskKind::ShelfRack: return shapes::random_shelf_rack(rng, r);
        case TaskKind::Top: return shapes::random_table_top(rng, r);
        case TaskKind::Mug: return shapes::random_rod(rng, r);
        case TaskKind::MultiTube: return shapes::random_multi_tube(rng, r);
    }
    throw std::invalid_argument("draw_env: bad task");
}

struct Draw {
    TaskInstance inst;
    double margin = 0.0;
};

inline Draw draw_instance(const DatasetConfig& cfg, Rng& rng) {
    Draw d{};
    d.inst.kind = cfg.task;
    d.inst.env_spec = draw_env(cfg.task, rng, cfg);
    d.inst.env_rotation = cfg.rotate_env ? geom::random_rotation(rng).rotation : Mat3::identity();

    shapes::ObjSpec obj_spec = cfg.task == TaskKind::Mug
                                   ? shapes::ObjSpec{shapes::random_mug(rng, cfg.ranges)}
                                   : shapes::random_object(rng, cfg.ranges);
    const Mat3 obj_rot = geom::random_rotation(rng).rotation;

    PointCloud env_canonical = shapes::sample_surface(d.inst.env_spec, cfg.env_points, rng);
    d.inst.env_cloud = geom::apply_transform(env_canonical, {d.inst.env_rotation, Vec3{}});
    PointCloud obj_canonical = shapes::sample_surface(obj_spec, cfg.obj_points, rng);
    d.inst.obj_cloud = geom::apply_transform(obj_canonical, {obj_rot, Vec3{}});

    d.inst.gt = shapes::merged(shapes::env_annotation(d.inst.env_spec, d.inst.env_rotation),
                               shapes::obj_annotation(d.inst.obj_cloud, d.inst.env_rotation));
    if (cfg.task == TaskKind::Mug) {
        const auto& rod = std::get<shapes::Rod>(d.inst.env_spec);
        const auto& mug = std::get<shapes::Mug>(obj_spec);
        d.inst.gt.values["obj.handle_gap"] = mug.handle_gap;
        d.margin = tasks::analytic_margin_mug(rod, mug);
    } else {
        d.margin = tasks::analytic_margin(d.inst.env_spec, d.inst.env_rotation, d.inst.obj_cloud);
    }
    d.inst.label = d.margin > 0.0;
    return d;
}

}  // namespace detail

// Balanced labels come from rejection resampling of shape parameters against
// an alternating per-record target, which pins the rate near 0.5 while keeping
// the geometric distribution conditioned on parameters intact.
inline Dataset generate(const DatasetConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.config = cfg;
    ds.records.reserve(cfg.n_samples);
    const std::size_t attempt_budget = 100 * cfg.n_samples;
    std::size_t attempts = 0;
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        Rng rng = record_rng(cfg.seed, i);
        const bool target = (i % 2 == 0);
        while (true) {
            if (++attempts > attempt_budget) {
                std::ostringstream msg;
                msg << "generate: positive-rate band [" << cfg.positive_lo << ", "
                    << cfg.positive_hi << "] unreachable after " << attempt_budget
                    << " attempts (task " << tasks::task_name(cfg.task) << ")";
                throw GenerationError(msg.str());
            }
            auto draw = detail::draw_instance(cfg, rng);
            if (std::abs(draw.margin) <= cfg.margin) continue;  // too close to the boundary
            if (draw.inst.label != target) continue;
            ds.records.push_back(std::move(draw.inst));
            break;
        }
    }
    const double rate = ds.positive_rate();
    if (rate < cfg.positive_lo || rate > cfg.positive_hi) {
        std::ostringstream msg;
        msg << "generate: positive rate " << rate << " outside band [" << cfg.positive_lo << ", "
            << cfg.positive_hi << "]";
        throw GenerationError(msg.str());
    }
    return ds;
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

namespace detail {

inline json mat_to_json(const Mat3& m) {
    json a = json::array();
    for (double v : m.m) a.push_back(v);
    return a;
}
inline Mat3 mat_from_json(const json& a) {
    if (!a.is_array() || a.size() != 9) throw std::runtime_error("rotation must have 9 entries");
    Mat3 m;
    for (int i = 0; i < 9; ++i) m.m[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i)];
    return m;
}

inline json env_spec_to_json(const shapes::EnvSpec& spec) {
    json j;
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, shapes::Tube>) {
                j["kind"] = "tube";
                j["width"] = s.width;
                j["height"] = s.height;
                j["depth"] = s.depth;
            } else if constexpr (std::is_same_v<T, shapes::CylinderContainer>) {
                j["kind"] = "cylinder";
                j["radius"] = s.radius;
                j["height"] = s.height;
            } else if constexpr (std::is_same_v<T, shapes::SphereContainer>) {
                j["kind"] = "sphere";
                j["radius"] = s.radius;
            } else if constexpr (std::is_same_v<T, shapes::PartialBox>) {
                j["kind"] = "partial_box";
                j["width"] = s.width;
                j["length"] = s.length;
                j["height"] = s.height;
                j["faces"] = s.faces;
            } else if constexpr (std::is_same_v<T, shapes::ShelfRack>) {
                j["kind"] = "shelf_rack";
                json cav = json::array();
                for (const auto& c : s.cavities)
                    cav.push_back({{"width", c.width},
                                   {"length", c.length},
                                   {"height", c.height},
                                   {"offset", c.offset}});
                j["cavities"] = cav;
            } else if constexpr (std::is_same_v<T, shapes::TableTop>) {
                j["kind"] = "table_top";
                j["width"] = s.width;
                j["length"] = s.length;
                j["thickness"] = s.thickness;
                j["leg_height"] = s.leg_height;
            } else if constexpr (std::is_same_v<T, shapes::Rod>) {
                j["kind"] = "rod";
                j["diameter"] = s.diameter;
                j["length"] = s.length;
            } else {
                j["kind"] = "multi_tube";
                j["tubes"] = json::array({{{"width", s.tubes[0].width},
                                           {"height", s.tubes[0].height}},
                                          {{"width", s.tubes[1].width},
                                           {"height", s.tubes[1].height}}});
                j["depth"] = s.depth;
                j["spacing"] = s.spacing;
            }
        },
        spec);
    return j;
}

inline shapes::EnvSpec env_spec_from_json(const json& j) {
    const std::string kind = j.at("kind");
    if (kind == "tube") return shapes::Tube{j.at("width"), j.at("height"), j.at("depth")};
    if (kind == "cylinder") return shapes::CylinderContainer{j.at("radius"), j.at("height")};
    if (kind == "sphere") return shapes::SphereContainer{j.at("radius")};
    if (kind == "partial_box") {
        shapes::PartialBox b{j.at("width"), j.at("length"), j.at("height"), {}};
        const auto& f = j.at("faces");
        for (std::size_t i = 0; i < 6; ++i) b.faces[i] = f.at(i).get<bool>();
        return b;
    }
    if (kind == "shelf_rack") {
        shapes::ShelfRack r;
        for (const auto& c : j.at("cavities"))
            r.cavities.push_back(
                {c.at("width"), c.at("length"), c.at("height"), c.at("offset")});
        return r;
    }
    if (kind == "table_top")
        return shapes::TableTop{j.at("width"), j.at("length"), j.at("thickness"),
                                j.at("leg_height")};
    if (kind == "rod") return shapes::Rod{j.at("diameter"), j.at("length")};
    if (kind == "multi_tube") {
        shapes::MultiTube mt;
        const auto& tubes = j.at("tubes");
        for (std::size_t i = 0; i < 2; ++i)
            mt.tubes[i] = {tubes.at(i).at("width"), tubes.at(i).at("height")};
        mt.depth = j.at("depth");
        mt.spacing = j.at("spacing");
        return mt;
    }
    throw std::runtime_error("unknown env_spec kind: " + kind);
}

inline json cloud_to_json(const PointCloud& cloud) {
    json a = json::array();
    for (const auto& p : cloud.points()) {
        a.push_back(p.x);
        a.push_back(p.y);
        a.push_back(p.z);
    }
    return a;
}

inline PointCloud cloud_from_json(const json& a, std::size_t expected_points) {
    if (!a.is_array() || a.size() != 3 * expected_points)
        throw std::runtime_error("cloud length mismatch");
    std::vector<Vec3> pts(expected_points);
    for (std::size_t i = 0; i < expected_points; ++i)
        pts[i] = {a[3 * i].get<double>(), a[3 * i + 1].get<double>(),
                  a[3 * i + 2].get<double>()};
    return PointCloud(std::move(pts));
}

}  // namespace detail

inline json config_to_json(const DatasetConfig& cfg) {
    json j;
    j["task"] = tasks::task_name(cfg.task);
    j["n_samples"] = cfg.n_samples;
    j["env_points"] = cfg.env_points;
    j["obj_points"] = cfg.obj_points;
    j["seed"] = cfg.seed;
    j["rotate_env"] = cfg.rotate_env;
    j["positive_rate_band"] = {cfg.positive_lo, cfg.positive_hi};
    j["margin"] = cfg.margin;
    j["ranges"] = {{"env", {cfg.ranges.env_lo, cfg.ranges.env_hi}},
                   {"obj", {cfg.ranges.obj_lo, cfg.ranges.obj_hi}},
                   {"mug_gap", {cfg.ranges.mug_gap_lo, cfg.ranges.mug_gap_hi}},
                   {"rod_diameter", {cfg.ranges.rod_diameter_lo, cfg.ranges.rod_diameter_hi}}};
    if (cfg.faces) j["faces"] = *cfg.faces;
    return j;
}

inline DatasetConfig config_from_json(const json& j) {
    DatasetConfig cfg;
    cfg.task = tasks::task_from_name(j.at("task"));
    cfg.n_samples = j.at("n_samples");
    cfg.env_points = j.at("env_points");
    cfg.obj_points = j.at("obj_points");
    cfg.seed = j.at("seed");
    cfg.rotate_env = j.at("rotate_env");
    cfg.positive_lo = j.at("positive_rate_band").at(0);
    cfg.positive_hi = j.at("positive_rate_band").at(1);
    cfg.margin = j.at("margin");
    const auto& r = j.at("ranges");
    cfg.ranges.env_lo = r.at("env").at(0);
    cfg.ranges.env_hi = r.at("env").at(1);
    cfg.ranges.obj_lo = r.at("obj").at(0);
    cfg.ranges.obj_hi = r.at("obj").at(1);
    cfg.ranges.mug_gap_lo = r.at("mug_gap").at(0);
    cfg.ranges.mug_gap_hi = r.at("mug_gap").at(1);
    cfg.ranges.rod_diameter_lo = r.at("rod_diameter").at(0);
    cfg.ranges.rod_diameter_hi = r.at("rod_diameter").at(1);
    if (j.contains("faces")) {
        std::array<bool, 6> f{};
        for (std::size_t i = 0; i < 6; ++i) f[i] = j.at("faces").at(i).get<bool>();
        cfg.faces = f;
    }
    return cfg;
}

// One header object, then one record per line. UTF-8, LF line endings.
inline void save(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save: cannot open " + path);
    json header;
    header["format_version"] = kFormatVersion;
    header["task"] = tasks::task_name(ds.config.task);
    header["n_records"] = ds.records.size();
    header["env_points"] = ds.config.env_points;
    header["obj_points"] = ds.config.obj_points;
    header["config"] = config_to_json(ds.config);
    out << header.dump() << "\n";
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const auto& r = ds.records[i];
        json rec;
        rec["index"] = i;
        json env = detail::env_spec_to_json(r.env_spec);
        env["rotation"] = detail::mat_to_json(r.env_rotation);
        rec["env_spec"] = env;
        rec["env_cloud"] = detail::cloud_to_json(r.env_cloud);
        rec["obj_cloud"] = detail::cloud_to_json(r.obj_cloud);
        rec["label"] = r.label ? 1 : 0;
        json gt = json::object(), dirs = json::object();
        for (const auto& [k, v] : r.gt.values) gt[k] = v;
        for (const auto& [k, v] : r.gt.dirs) dirs[k] = {v.x, v.y, v.z};
        rec["gt"] = gt;
        rec["gt_dirs"] = dirs;
        out << rec.dump() << "\n";
        if (!out) throw std::runtime_error("save: write failed for " + path);
    }
}

// Loads and validates: header counts, cloud lengths, and that every stored
// label is re-derivable from the stored geometry.
inline Dataset load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load: cannot open " + path);
    std::string line;
    std::size_t line_no = 0;

    auto parse_line = [&](const std::string& text) {
        try {
            return json::parse(text);
        } catch (const json::exception& e) {
            throw std::runtime_error("load: " + path + ":" + std::to_string(line_no) +
                                     ": malformed JSON: " + e.what());
        }
    };

    if (!std::getline(in, line)) throw std::runtime_error("load: " + path + ": empty file");
    ++line_no;
    const json header = parse_line(line);
    const int version = header.at("format_version");
    if (version != kFormatVersion)
        throw std::runtime_error("load: " + path + ": format_version " +
                                 std::to_string(version) + " != expected " +
                                 std::to_string(kFormatVersion));
    Dataset ds;
    ds.config = config_from_json(header.at("config"));
    const std::size_t n_records = header.at("n_records");
    const std::size_t env_points = header.at("env_points");
    const std::size_t obj_points = header.at("obj_points");

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const json rec = parse_line(line);
        TaskInstance inst;
        inst.kind = ds.config.task;
        try {
            const json& env = rec.at("env_spec");
            inst.env_spec = detail::env_spec_from_json(env);
            inst.env_rotation = detail::mat_from_json(env.at("rotation"));
            inst.env_cloud = detail::cloud_from_json(rec.at("env_cloud"), env_points);
            inst.obj_cloud = detail::cloud_from_json(rec.at("obj_cloud"), obj_points);
            inst.label = rec.at("label").get<int>() != 0;
            for (const auto& [k, v] : rec.at("gt").items())
                inst.gt.values[k] = v.get<double>();
            for (const auto& [k, v] : rec.at("gt_dirs").items())
                inst.gt.dirs[k] = {v.at(0), v.at(1), v.at(2)};
        } catch (const json::exception& e) {
            throw std::runtime_error("load: " + path + ":" + std::to_string(line_no) +
                                     ": bad record: " + e.what());
        }
        const bool rederived =
            inst.kind == TaskKind::Mug
                ? inst.gt.at("obj.handle_gap") > inst.gt.at("env.rod_diameter")
                : tasks::analytic_feasible(inst.env_spec, inst.env_rotation, inst.obj_cloud);
        if (rederived != inst.label)
            throw std::runtime_error("load: " + path + ":" + std::to_string(line_no) +
                                     ": stored label does not re-derive from the stored clouds");
        ds.records.push_back(std::move(inst));
    }
    if (ds.records.size() != n_records)
        throw std::runtime_error("load: " + path + ": header claims " +
                                 std::to_string(n_records) + " records, found " +
                                 std::to_string(ds.records.size()));
    return ds;
}

// Seeded permutation partition; fractions must sum to 1.
inline std::vector<Dataset> split(const Dataset& ds, const std::vector<double>& fractions,
                                  std::uint64_t seed) {
    double total = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw std::invalid_argument("split: negative fraction");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("split: fractions must sum to 1");

    std::vector<std::size_t> perm(ds.records.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    Rng rng(seed);
    rng.shuffle(perm);

    std::vector<Dataset> parts;
    const std::size_t n = ds.records.size();
    double cum = 0.0;
    std::size_t begin = 0;
    for (std::size_t k = 0; k < fractions.size(); ++k) {
        cum += fractions[k];
        const std::size_t end =
            (k + 1 == fractions.size())
                ? n
                : std::min(n, static_cast<std::size_t>(std::llround(cum * static_cast<double>(n))));
        Dataset part;
        part.config = ds.config;
        part.config.n_samples = end - begin;
        for (std::size_t i = begin; i < end; ++i) part.records.push_back(ds.records[perm[i]]);
        parts.push_back(std::move(part));
        begin = end;
    }
    return parts;
}

}  // namespace eigenlen::dataset
