// eigenlen: desk-scale workbench for learning geometric eigen-lengths of 3D
// point clouds from binary fitting-task labels.
//
// Subcommands: gen, train, eval, analyze, sweep, rotest, multitask, adapt.
// Every run writes its outputs plus a manifest.json under --out.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "eigenlen/analysis.hpp"
#include "eigenlen/dataset.hpp"
#include "eigenlen/models.hpp"
#include "eigenlen/rotation.hpp"
#include "eigenlen/toml.hpp"
#include "eigenlen/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace eigenlen;

namespace {

constexpr const char* kVersion = "0.1.0";

// flag/config mistakes exit 1; runtime failures exit 2
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Config file handling
// ---------------------------------------------------------------------------

const std::vector<std::string> kKnownKeys = {
    "profile", "seed", "out",
    "dataset.task", "dataset.n_samples", "dataset.env_points", "dataset.obj_points",
    "dataset.seed", "dataset.rotate_env", "dataset.margin", "dataset.positive_rate_band",
    "dataset.env_range", "dataset.obj_range", "dataset.mug_gap_range",
    "dataset.rod_diameter_range", "dataset.faces",
    "train.family", "train.arity", "train.composition", "train.dnf_groups", "train.epochs",
    "train.batch_size", "train.lr", "train.lr_halving_period", "train.test_fraction",
    "train.split_seed"};

struct FileConfig {
    toml::Table table;
    std::string raw_text;

    bool has(const std::string& key) const { return table.count(key) != 0; }
    const toml::Value& at(const std::string& key) const { return table.at(key); }
};

FileConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open config file " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    FileConfig cfg;
    cfg.raw_text = buffer.str();
    try {
        cfg.table = toml::parse(cfg.raw_text);
    } catch (const std::exception& e) {
        throw UsageError(path + ": " + e.what());
    }
    for (const auto& [key, value] : cfg.table) {
        if (std::find(kKnownKeys.begin(), kKnownKeys.end(), key) == kKnownKeys.end())
            throw UsageError(path + ": unknown config key '" + key + "'");
    }
    return cfg;
}

json table_to_json(const toml::Table& table) {
    json j = json::object();
    for (const auto& [key, value] : table) {
        std::function<json(const toml::Value&)> conv = [&](const toml::Value& v) -> json {
            switch (v.kind) {
                case toml::Value::Kind::Bool: return v.b;
                case toml::Value::Kind::Int: return v.i;
                case toml::Value::Kind::Float: return v.f;
                case toml::Value::Kind::String: return v.s;
                case toml::Value::Kind::Array: {
                    json a = json::array();
                    for (const auto& item : v.array) a.push_back(conv(item));
                    return a;
                }
            }
            return nullptr;
        };
        j[key] = conv(value);
    }
    return j;
}

// ---------------------------------------------------------------------------
// Profiles and option resolution. Precedence: flag > config file > profile.
// ---------------------------------------------------------------------------

struct Profile {
    models::ModelConfig model;
    std::size_t env_points = 256, obj_points = 256;
    int epochs = 30;
};

Profile profile_by_name(const std::string& name) {
    if (name == "desk") return {models::desk_model_config(), 256, 256, 30};
    if (name == "paper") return {models::paper_model_config(), 1024, 1024, 100};
    throw UsageError("unknown profile '" + name + "' (expected desk or paper)");
}

struct CommonOpts {
    std::string config_path;
    std::string profile = "desk";
    std::string out = "out";
    std::uint64_t seed = 0;
    bool seed_set = false;
    FileConfig file;

    void load() {
        if (!config_path.empty()) file = load_config(config_path);
        if (file.has("profile") && profile == "desk") profile = file.at("profile").s;
        if (file.has("out") && out == "out") out = file.at("out").s;
        if (!seed_set && file.has("seed")) seed = static_cast<std::uint64_t>(file.at("seed").i);
    }
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "TOML config file");
    cmd->add_option("--profile", opts.profile, "preset bundle: desk or paper");
    cmd->add_option("--out", opts.out, "output directory");
    cmd->add_option("--seed", opts.seed, "master seed")->each([&](const std::string&) {
        opts.seed_set = true;
    });
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct RunContext {
    std::string command;
    fs::path out_dir;
    json config = json::object();
    json seeds = json::object();
    std::vector<std::string> outputs;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    explicit RunContext(const std::string& cmd, const CommonOpts& opts) : command(cmd) {
        out_dir = opts.out;
        fs::create_directories(out_dir);
        config["profile"] = opts.profile;
        if (!opts.config_path.empty()) {
            config["config_file"] = opts.config_path;
            config["config_file_echo"] = table_to_json(opts.file.table);
        }
    }

    fs::path path(const std::string& name) {
        outputs.push_back((out_dir / name).string());
        return out_dir / name;
    }

    void finish() {
        json manifest;
        manifest["command"] = command;
        manifest["version"] = kVersion;
        manifest["config"] = config;
        manifest["seeds"] = seeds;
        manifest["outputs"] = outputs;
        manifest["wall_time_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::ofstream out(out_dir / "manifest.json", std::ios::binary);
        if (!out) throw std::runtime_error("cannot write manifest under " + out_dir.string());
        out << manifest.dump(2) << "\n";
    }
};

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

std::vector<std::vector<int>> parse_dnf_groups(const std::string& text) {
    std::vector<std::vector<int>> groups;
    std::stringstream outer(text);
    std::string group;
    while (std::getline(outer, group, ';')) {
        std::vector<int> slots;
        std::stringstream inner(group);
        std::string item;
        while (std::getline(inner, item, ','))
            if (!item.empty()) slots.push_back(std::stoi(item));
        if (!slots.empty()) groups.push_back(slots);
    }
    if (groups.empty()) throw std::runtime_error("dnf groups '" + text + "' parse to nothing");
    return groups;
}

models::CompositionSpec composition_from(const std::string& kind, int arity,
                                         const std::string& dnf_groups) {
    if (kind == "and") return models::CompositionSpec::both_and(arity);
    if (kind == "masked_and") return models::CompositionSpec::masked_and(arity);
    if (kind == "dnf") return models::CompositionSpec::dnf(arity, parse_dnf_groups(dnf_groups));
    throw UsageError("unknown composition '" + kind + "'");
}

json composition_to_json(const models::CompositionSpec& spec) {
    json j;
    switch (spec.kind) {
        case models::CompositionSpec::Kind::And: j["kind"] = "and"; break;
        case models::CompositionSpec::Kind::MaskedAnd: j["kind"] = "masked_and"; break;
        case models::CompositionSpec::Kind::Dnf: j["kind"] = "dnf"; break;
    }
    j["arity"] = spec.arity;
    j["groups"] = spec.groups;
    return j;
}

models::CompositionSpec composition_from_json(const json& j) {
    const std::string kind = j.at("kind");
    const int arity = j.at("arity");
    if (kind == "and") return models::CompositionSpec::both_and(arity);
    if (kind == "masked_and") return models::CompositionSpec::masked_and(arity);
    std::vector<std::vector<int>> groups;
    for (const auto& g : j.at("groups")) groups.push_back(g.get<std::vector<int>>());
    return models::CompositionSpec::dnf(arity, groups);
}

models::ModelConfig model_config_from_arch(const json& arch) {
    models::ModelConfig cfg;
    cfg.encoder.per_point = arch.at("per_point").get<std::vector<int>>();
    cfg.encoder.head_hidden = arch.at("head_hidden").get<std::vector<int>>();
    if (arch.contains("wn_seg_hidden"))
        cfg.wn_seg_hidden = arch.at("wn_seg_hidden").get<std::vector<int>>();
    if (arch.contains("wn_head_hidden"))
        cfg.wn_head_hidden = arch.at("wn_head_hidden").get<std::vector<int>>();
    if (arch.contains("direct_latent")) cfg.direct_latent = arch.at("direct_latent");
    if (arch.contains("direct_head_hidden"))
        cfg.direct_head_hidden = arch.at("direct_head_hidden").get<std::vector<int>>();
    return cfg;
}

std::unique_ptr<models::EigenLengthModel> eigen_model_from_arch(const json& arch,
                                                                std::uint64_t seed) {
    const std::string family = arch.at("family");
    const models::ModelConfig cfg = model_config_from_arch(arch);
    const int arity = arch.at("arity");
    const int env_points = arch.at("env_points");
    const int obj_points = arch.at("obj_points");
    if (family == "implicit")
        return std::make_unique<models::ImplicitModel>(cfg, arity, env_points, obj_points, seed);
    if (family == "grounded")
        return std::make_unique<models::GroundedModel>(cfg, arity, env_points, obj_points, seed);
    throw std::runtime_error("checkpoint family '" + family + "' is not an eigen-length model");
}

json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + std::string(e.what()));
    }
    return j;
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

void write_history_csv(const fs::path& path, const train::TrainHistory& history,
                       const train::TrainConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "epoch,train_loss,train_acc,test_acc,tau,lr\n";
    out.precision(12);
    for (std::size_t e = 0; e < history.epochs.size(); ++e) {
        const auto& s = history.epochs[e];
        out << e << "," << s.train_loss << "," << s.train_acc << "," << s.test_acc << ","
            << s.tau << "," << train::lr_at_epoch(cfg, static_cast<int>(e)) << "\n";
    }
}

struct SplitPair {
    dataset::Dataset train, test;
};

SplitPair split_or_load(const dataset::Dataset& data, const std::string& test_path,
                        double test_fraction, std::uint64_t split_seed) {
    SplitPair pair;
    if (!test_path.empty()) {
        pair.train = data;
        pair.test = dataset::load(test_path);
        return pair;
    }
    auto parts = dataset::split(data, {1.0 - test_fraction, test_fraction}, split_seed);
    pair.train = std::move(parts[0]);
    pair.test = std::move(parts[1]);
    return pair;
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenOpts {
    CommonOpts common;
    std::string task;
    std::size_t n = 0;
    std::size_t env_points = 0, obj_points = 0;
    bool rotate_env = false;
    double margin = -1.0;
    std::string faces;  // e.g. "110011"
};

int run_gen(GenOpts& opts) {
    opts.common.load();
    const Profile profile = profile_by_name(opts.common.profile);
    const auto& file = opts.common.file;

    dataset::DatasetConfig cfg;
    std::string task_name = opts.task;
    if (task_name.empty() && file.has("dataset.task")) task_name = file.at("dataset.task").s;
    if (task_name.empty()) throw UsageError("gen: --task is required");
    cfg.task = tasks::task_from_name(task_name);
    cfg.n_samples = opts.n ? opts.n
                           : (file.has("dataset.n_samples")
                                  ? static_cast<std::size_t>(file.at("dataset.n_samples").i)
                                  : 1000);
    cfg.env_points = opts.env_points
                         ? opts.env_points
                         : (file.has("dataset.env_points")
                                ? static_cast<std::size_t>(file.at("dataset.env_points").i)
                                : profile.env_points);
    cfg.obj_points = opts.obj_points
                         ? opts.obj_points
                         : (file.has("dataset.obj_points")
                                ? static_cast<std::size_t>(file.at("dataset.obj_points").i)
                                : profile.obj_points);
    cfg.seed = opts.common.seed_set
                   ? opts.common.seed
                   : (file.has("dataset.seed")
                          ? static_cast<std::uint64_t>(file.at("dataset.seed").i)
                          : opts.common.seed);
    cfg.rotate_env =
        opts.rotate_env || (file.has("dataset.rotate_env") && file.at("dataset.rotate_env").b);
    if (opts.margin >= 0.0)
        cfg.margin = opts.margin;
    else if (file.has("dataset.margin"))
        cfg.margin = file.at("dataset.margin").as_number();
    if (file.has("dataset.positive_rate_band")) {
        const auto& band = file.at("dataset.positive_rate_band").array;
        cfg.positive_lo = band.at(0).as_number();
        cfg.positive_hi = band.at(1).as_number();
    }
    auto range_from = [&](const char* key, double& lo, double& hi) {
        if (file.has(key)) {
            lo = file.at(key).array.at(0).as_number();
            hi = file.at(key).array.at(1).as_number();
        }
    };
    range_from("dataset.env_range", cfg.ranges.env_lo, cfg.ranges.env_hi);
    range_from("dataset.obj_range", cfg.ranges.obj_lo, cfg.ranges.obj_hi);
    range_from("dataset.mug_gap_range", cfg.ranges.mug_gap_lo, cfg.ranges.mug_gap_hi);
    range_from("dataset.rod_diameter_range", cfg.ranges.rod_diameter_lo,
               cfg.ranges.rod_diameter_hi);
    std::string faces = opts.faces;
    if (faces.empty() && file.has("dataset.faces")) {
        for (const auto& v : file.at("dataset.faces").array) faces += v.b ? '1' : '0';
    }
    if (!faces.empty()) {
        if (faces.size() != 6) throw UsageError("gen: --faces needs 6 binary digits");
        std::array<bool, 6> mask{};
        for (std::size_t i = 0; i < 6; ++i) mask[i] = faces[i] == '1';
        cfg.faces = mask;
    }

    RunContext ctx("gen", opts.common);
    ctx.config["dataset"] = dataset::config_to_json(cfg);
    ctx.seeds["dataset"] = cfg.seed;

    const dataset::Dataset ds = dataset::generate(cfg);
    dataset::save(ds, ctx.path("dataset.jsonl").string());
    std::cout << "gen: wrote " << ds.size() << " records (positive rate " << ds.positive_rate()
              << ") to " << (ctx.out_dir / "dataset.jsonl").string() << "\n";
    ctx.finish();
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
    CommonOpts common;
    std::string data_path, test_path;
    std::string family;
    int arity = 0;
    std::string composition;
    std::string dnf_groups;
    int epochs = 0;
    double lr = 0.0;
    double test_fraction = 0.0;
    std::uint64_t split_seed = 0;
    bool split_seed_set = false;
};

train::TrainConfig resolve_train_config(const TrainOpts& opts, const Profile& profile) {
    const auto& file = opts.common.file;
    train::TrainConfig cfg;
    cfg.epochs = opts.epochs
                     ? opts.epochs
                     : (file.has("train.epochs") ? static_cast<int>(file.at("train.epochs").i)
                                                 : profile.epochs);
    if (file.has("train.batch_size"))
        cfg.batch_size = static_cast<int>(file.at("train.batch_size").i);
    cfg.lr = opts.lr > 0.0 ? opts.lr
                           : (file.has("train.lr") ? file.at("train.lr").as_number() : cfg.lr);
    if (file.has("train.lr_halving_period"))
        cfg.lr_halving_period = static_cast<int>(file.at("train.lr_halving_period").i);
    cfg.seed = opts.common.seed;
    return cfg;
}

int run_train(TrainOpts& opts) {
    opts.common.load();
    const Profile profile = profile_by_name(opts.common.profile);
    const auto& file = opts.common.file;

    const dataset::Dataset full = dataset::load(opts.data_path);
    const double test_fraction =
        opts.test_fraction > 0.0
            ? opts.test_fraction
            : (file.has("train.test_fraction") ? file.at("train.test_fraction").as_number()
                                               : 0.2);
    const std::uint64_t split_seed =
        opts.split_seed_set ? opts.split_seed
                            : (file.has("train.split_seed")
                                   ? static_cast<std::uint64_t>(file.at("train.split_seed").i)
                                   : opts.common.seed);
    const SplitPair pair = split_or_load(full, opts.test_path, test_fraction, split_seed);

    std::string family = opts.family;
    if (family.empty())
        family = file.has("train.family") ? file.at("train.family").s : "implicit";
    int arity = opts.arity;
    if (arity == 0 && file.has("train.arity")) arity = static_cast<int>(file.at("train.arity").i);
    if (arity == 0) arity = tasks::comparison_arity(full.config.task);
    std::string composition = opts.composition;
    if (composition.empty())
        composition = file.has("train.composition") ? file.at("train.composition").s : "and";
    std::string dnf_groups = opts.dnf_groups;
    if (dnf_groups.empty() && file.has("train.dnf_groups"))
        dnf_groups = file.at("train.dnf_groups").s;

    const train::TrainConfig cfg = resolve_train_config(opts, profile);
    const std::uint64_t model_seed = opts.common.seed * 2 + 1;

    RunContext ctx("train", opts.common);
    ctx.config["data"] = opts.data_path;
    ctx.config["family"] = family;
    ctx.config["arity"] = arity;
    ctx.config["composition"] = composition;
    ctx.config["epochs"] = cfg.epochs;
    ctx.config["batch_size"] = cfg.batch_size;
    ctx.config["lr"] = cfg.lr;
    ctx.config["lr_halving_period"] = cfg.lr_halving_period;
    ctx.config["test_fraction"] = test_fraction;
    ctx.seeds["shuffle"] = cfg.seed;
    ctx.seeds["model_init"] = model_seed;
    ctx.seeds["split"] = split_seed;

    const int env_points = static_cast<int>(full.config.env_points);
    const int obj_points = static_cast<int>(full.config.obj_points);

    if (family == "direct") {
        models::DirectModel model(profile.model, env_points, obj_points, model_seed);
        const auto history = train::train_direct(model, pair.train, pair.test, cfg);
        write_json_file(ctx.path("checkpoint.json"), models::checkpoint_to_json(model));
        write_history_csv(ctx.path("history.csv"), history, cfg);
        std::cout << "train: final test accuracy " << history.epochs.back().test_acc << "\n";
    } else {
        std::unique_ptr<models::EigenLengthModel> model;
        if (family == "implicit")
            model = std::make_unique<models::ImplicitModel>(profile.model, arity, env_points,
                                                            obj_points, model_seed);
        else if (family == "grounded")
            model = std::make_unique<models::GroundedModel>(profile.model, arity, env_points,
                                                            obj_points, model_seed);
        else
            throw UsageError("train: unknown family '" + family + "'");
        const auto spec = composition_from(composition, arity, dnf_groups);
        const auto history = train::train_eigen(*model, pair.train, pair.test, spec, cfg);
        json ckpt;
        if (family == "implicit")
            ckpt = models::checkpoint_to_json(static_cast<models::ImplicitModel&>(*model));
        else
            ckpt = models::checkpoint_to_json(static_cast<models::GroundedModel&>(*model));
        ckpt["composition"] = composition_to_json(spec);
        ckpt["task"] = tasks::task_name(full.config.task);
        write_json_file(ctx.path("checkpoint.json"), ckpt);
        write_history_csv(ctx.path("history.csv"), history, cfg);
        std::cout << "train: final test accuracy " << history.epochs.back().test_acc << " (tau "
                  << model->tau() << ")\n";
    }
    ctx.finish();
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOpts {
    CommonOpts common;
    std::string checkpoint_path, data_path;
    int task_index = -1;  // multitask checkpoints: which mask to use
};

int run_eval(EvalOpts& opts) {
    opts.common.load();
    const json ckpt = read_json_file(opts.checkpoint_path);
    const dataset::Dataset data = dataset::load(opts.data_path);

    RunContext ctx("eval", opts.common);
    ctx.config["checkpoint"] = opts.checkpoint_path;
    ctx.config["data"] = opts.data_path;

    const std::string family = ckpt.at("architecture").at("family");
    json report;
    double accuracy = 0.0;
    if (family == "direct") {
        models::DirectModel model(model_config_from_arch(ckpt.at("architecture")),
                                  ckpt.at("architecture").at("env_points"),
                                  ckpt.at("architecture").at("obj_points"), 0);
        models::checkpoint_load_state(model, ckpt);
        const auto conf = train::evaluate_direct(model, data.records);
        accuracy = conf.accuracy();
        report = {{"accuracy", accuracy},
                  {"tp", conf.tp},
                  {"tn", conf.tn},
                  {"fp", conf.fp},
                  {"fn", conf.fn}};
    } else {
        auto model = eigen_model_from_arch(ckpt.at("architecture"), 0);
        models::checkpoint_load_state(*model, ckpt);
        models::CompositionSpec spec = ckpt.contains("composition")
                                           ? composition_from_json(ckpt.at("composition"))
                                           : models::CompositionSpec::both_and(model->arity());
        ndiff::Param mask(1, model->arity());
        const ndiff::Param* mask_ptr = nullptr;
        if (spec.kind == models::CompositionSpec::Kind::MaskedAnd) {
            if (!ckpt.contains("masks") || opts.task_index < 0)
                throw std::runtime_error(
                    "eval: masked checkpoint needs --task-index to pick a mask");
            const auto logits = ckpt.at("masks")
                                    .at(static_cast<std::size_t>(opts.task_index))
                                    .get<std::vector<double>>();
            for (std::size_t s = 0; s < logits.size(); ++s) mask.value.d[s] = logits[s];
            mask_ptr = &mask;
        }
        const auto conf = train::evaluate(*model, data.records, spec, mask_ptr);
        accuracy = conf.accuracy();
        report = {{"accuracy", accuracy},
                  {"tp", conf.tp},
                  {"tn", conf.tn},
                  {"fp", conf.fp},
                  {"fn", conf.fn}};
    }
    write_json_file(ctx.path("eval.json"), report);
    std::cout << "accuracy " << accuracy << "\n";
    ctx.finish();
    return 0;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeOpts {
    CommonOpts common;
    std::string checkpoint_path, data_path;
    std::string side = "obj";
    std::size_t samples = 512;
    bool oracle = false;  // inject ground-truth eigen-lengths as predictions
};

int run_analyze(AnalyzeOpts& opts) {
    opts.common.load();
    const dataset::Dataset data = dataset::load(opts.data_path);
    const auto comparisons = tasks::task_comparisons(data.config.task);
    std::vector<std::string> gt_names;
    for (const auto& [env_name, obj_name] : comparisons)
        gt_names.push_back(opts.side == "env" ? env_name : obj_name);
    // duplicated names (multi-tube object side) collapse to the unique set
    std::vector<std::string> unique_names;
    for (const auto& name : gt_names)
        if (std::find(unique_names.begin(), unique_names.end(), name) == unique_names.end())
            unique_names.push_back(name);

    const std::size_t n = std::min(opts.samples, data.records.size());
    std::vector<tasks::TaskInstance> recs(data.records.begin(),
                                          data.records.begin() + static_cast<std::ptrdiff_t>(n));

    RunContext ctx("analyze", opts.common);
    ctx.config["checkpoint"] = opts.checkpoint_path;
    ctx.config["data"] = opts.data_path;
    ctx.config["side"] = opts.side;
    ctx.config["samples"] = n;
    ctx.config["oracle"] = opts.oracle;

    const ndiff::Matrix gt = analysis::gt_matrix(recs, unique_names);

    analysis::EigenPredictions preds;
    std::unique_ptr<models::EigenLengthModel> model;
    if (opts.oracle) {
        // debug path: the predictions are the ground-truth values themselves
        preds.l_env = gt;
        preds.l_obj = gt;
    } else {
        if (opts.checkpoint_path.empty())
            throw std::runtime_error("analyze: --checkpoint required unless --oracle");
        const json ckpt = read_json_file(opts.checkpoint_path);
        model = eigen_model_from_arch(ckpt.at("architecture"), 0);
        models::checkpoint_load_state(*model, ckpt);
        preds = analysis::collect_predictions(*model, recs);
    }

    const ndiff::Matrix& pred_matrix = opts.side == "env" ? preds.l_env : preds.l_obj;
    const auto rep = analysis::match_eigenlengths(pred_matrix, gt, unique_names);

    json report;
    report["gt_names"] = rep.gt_names;
    json r2 = json::array();
    for (int s = 0; s < rep.r2.rows; ++s) {
        json row = json::array();
        for (int g = 0; g < rep.r2.cols; ++g) row.push_back(rep.r2(s, g));
        r2.push_back(row);
    }
    report["r2"] = r2;
    report["matching"] = rep.matching;
    report["best_gt"] = rep.best_gt;
    report["total_matched_r2"] = rep.total_matched_r2;
    json fits = json::array();
    for (const auto& f : rep.fits)
        fits.push_back({{"slope", f.slope}, {"intercept", f.intercept}, {"r2", f.r2}});
    report["fits"] = fits;

    if (!opts.oracle) {
        report["contribution_rates"] = analysis::contribution_rates(preds.l_env, preds.l_obj);
        if (model && model->has_grounding()) {
            report["mean_vector_angle_deg"] = analysis::vector_angle_error(preds, rep, recs);
            analysis::export_groundings(*model, recs,
                                        models::CompositionSpec::both_and(model->arity()),
                                        ctx.path("groundings.json").string());
        }
    }
    analysis::export_scatter(pred_matrix, gt, rep, ctx.path("scatter.csv").string());
    write_json_file(ctx.path("correlation.json"), report);

    std::cout << "analyze: total matched R^2 " << rep.total_matched_r2 << " over "
              << rep.gt_names.size() << " ground truths\n";
    ctx.finish();
    return 0;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepOpts {
    CommonOpts common;
    std::string data_path, test_path;
    std::string sizes = "500,1000,2000,4000";
    int epochs = 0;
    int jobs = 1;
};

int run_sweep(SweepOpts& opts) {
    opts.common.load();
    const Profile profile = profile_by_name(opts.common.profile);
    const dataset::Dataset pool = dataset::load(opts.data_path);
    const dataset::Dataset test = dataset::load(opts.test_path);

    std::vector<std::size_t> sizes;
    {
        std::stringstream ss(opts.sizes);
        std::string item;
        while (std::getline(ss, item, ',')) sizes.push_back(std::stoul(item));
    }

    train::TrainConfig cfg;
    cfg.epochs = opts.epochs ? opts.epochs : profile.epochs;
    cfg.seed = opts.common.seed;

    RunContext ctx("sweep", opts.common);
    ctx.config["data"] = opts.data_path;
    ctx.config["test"] = opts.test_path;
    ctx.config["sizes"] = sizes;
    ctx.config["epochs"] = cfg.epochs;
    ctx.config["jobs"] = opts.jobs;
    ctx.seeds["train"] = cfg.seed;

    const auto rows =
        train::data_efficiency_sweep(pool, test, sizes, profile.model, cfg, 512, opts.jobs);

    const fs::path csv_path = ctx.path("sweep.csv");
    std::ofstream out(csv_path, std::ios::binary);
    out << "train_size,family,test_accuracy,mean_vector_angle_deg\n";
    out.precision(12);
    for (const auto& row : rows) {
        out << row.train_size << "," << row.family << "," << row.test_accuracy << ",";
        if (std::isfinite(row.mean_vector_angle_deg)) out << row.mean_vector_angle_deg;
        out << "\n";
        std::cout << "sweep: size " << row.train_size << " " << row.family << " acc "
                  << row.test_accuracy << "\n";
    }
    ctx.finish();
    return 0;
}

// ---------------------------------------------------------------------------
// rotest
// ---------------------------------------------------------------------------

struct RotestOpts {
    CommonOpts common;
    std::string checkpoint_path, data_path;
    std::size_t pairs = 100;
};

int run_rotest(RotestOpts& opts) {
    opts.common.load();
    const json ckpt = read_json_file(opts.checkpoint_path);
    if (ckpt.at("architecture").at("family") != "grounded")
        throw std::runtime_error("rotest: needs a grounded checkpoint");
    models::GroundedModel model(model_config_from_arch(ckpt.at("architecture")),
                                ckpt.at("architecture").at("arity"),
                                ckpt.at("architecture").at("env_points"),
                                ckpt.at("architecture").at("obj_points"), 0);
    models::checkpoint_load_state(model, ckpt);

    const dataset::Dataset data = dataset::load(opts.data_path);
    std::vector<geom::PointCloud> clouds;
    for (std::size_t i = 0; i < std::min(opts.pairs, data.records.size()); ++i)
        clouds.push_back(data.records[i].env_cloud);

    RunContext ctx("rotest", opts.common);
    ctx.config["checkpoint"] = opts.checkpoint_path;
    ctx.config["data"] = opts.data_path;
    ctx.config["pairs"] = clouds.size();
    ctx.seeds["rotations"] = opts.common.seed;

    const auto report = rotation::end_to_end_rotation_eval(model, clouds, opts.common.seed);

    const fs::path csv_path = ctx.path("rotation.csv");
    std::ofstream out(csv_path, std::ios::binary);
    out << "pair_id,gt_angle,pred_angle_error,residual\n";
    out.precision(12);
    for (std::size_t i = 0; i < report.pairs.size(); ++i) {
        const auto& p = report.pairs[i];
        out << i << "," << p.gt_angle << ",";
        if (!p.degenerate) out << p.angle_error;
        out << ",";
        if (!p.degenerate) out << p.residual;
        out << "\n";
    }
    std::cout << "rotest: mean error " << report.mean_error << " deg, median "
              << report.median_error << " deg over " << report.pairs.size() << " pairs ("
              << report.degenerate_count << " degenerate)\n";
    write_json_file(ctx.path("rotation.json"), {{"mean_error_deg", report.mean_error},
                                                {"median_error_deg", report.median_error},
                                                {"pairs", report.pairs.size()},
                                                {"degenerate", report.degenerate_count}});
    ctx.finish();
    return 0;
}

// ---------------------------------------------------------------------------
// multitask
// ---------------------------------------------------------------------------

struct MultitaskOpts {
    CommonOpts common;
    std::vector<std::string> data_paths;
    std::vector<std::string> test_paths;
    std::string family = "implicit";
    int arity = 3;
    int epochs = 0;
};

int run_multitask(MultitaskOpts& opts) {
    opts.common.load();
    const Profile profile = profile_by_name(opts.common.profile);
    if (opts.data_paths.empty()) throw UsageError("multitask: need --data files");

    std::vector<dataset::Dataset> task_train, task_test;
    for (const auto& path : opts.data_paths) task_train.push_back(dataset::load(path));
    for (const auto& path : opts.test_paths) task_test.push_back(dataset::load(path));
    if (task_test.empty()) task_test = task_train;

    const int env_points = static_cast<int>(task_train.front().config.env_points);
    const int obj_points = static_cast<int>(task_train.front().config.obj_points);
    const std::uint64_t model_seed = opts.common.seed * 2 + 1;

    train::TrainConfig cfg;
    cfg.epochs = opts.epochs ? opts.epochs : profile.epochs;
    cfg.seed = opts.common.seed;

    RunContext ctx("multitask", opts.common);
    ctx.config["data"] = opts.data_paths;
    ctx.config["family"] = opts.family;
    ctx.config["arity"] = opts.arity;
    ctx.config["epochs"] = cfg.epochs;
    ctx.seeds["shuffle"] = cfg.seed;
    ctx.seeds["model_init"] = model_seed;

    std::unique_ptr<models::EigenLengthModel> model;
    if (opts.family == "implicit")
        model = std::make_unique<models::ImplicitModel>(profile.model, opts.arity, env_points,
                                                        obj_points, model_seed);
    else if (opts.family == "grounded")
        model = std::make_unique<models::GroundedModel>(profile.model, opts.arity, env_points,
                                                        obj_points, model_seed);
    else
        throw UsageError("multitask: unknown family '" + opts.family + "'");

    const auto result = train::train_multitask(*model, task_train, task_test, cfg);

    json ckpt;
    if (opts.family == "implicit")
        ckpt = models::checkpoint_to_json(static_cast<models::ImplicitModel&>(*model));
    else
        ckpt = models::checkpoint_to_json(static_cast<models::GroundedModel&>(*model));
    ckpt["composition"] = composition_to_json(models::CompositionSpec::masked_and(opts.arity));
    json masks = json::array();
    for (const auto& mask : result.masks)
        masks.push_back(std::vector<double>(mask.value.d.begin(), mask.value.d.end()));
    ckpt["masks"] = masks;
    write_json_file(ctx.path("checkpoint.json"), ckpt);
    write_history_csv(ctx.path("history.csv"), result.history, cfg);
    std::cout << "multitask: mean task accuracy " << result.history.epochs.back().test_acc
              << "\n";
    ctx.finish();
    return 0;
}

// ---------------------------------------------------------------------------
// adapt
// ---------------------------------------------------------------------------

struct AdaptOpts {
    CommonOpts common;
    std::string checkpoint_path, data_path, eval_path;
    int epochs = 1;
};

int run_adapt(AdaptOpts& opts) {
    opts.common.load();
    const json ckpt = read_json_file(opts.checkpoint_path);
    auto model = eigen_model_from_arch(ckpt.at("architecture"), 0);
    models::checkpoint_load_state(*model, ckpt);

    const dataset::Dataset adapt_data = dataset::load(opts.data_path);

    train::TrainConfig cfg;
    cfg.epochs = opts.epochs;
    cfg.seed = opts.common.seed;

    RunContext ctx("adapt", opts.common);
    ctx.config["checkpoint"] = opts.checkpoint_path;
    ctx.config["data"] = opts.data_path;
    ctx.config["epochs"] = cfg.epochs;
    ctx.seeds["adapt"] = cfg.seed;

    const ndiff::Param mask = train::few_shot_adapt(*model, adapt_data, cfg);

    json mask_json;
    mask_json["mask_logits"] = std::vector<double>(mask.value.d.begin(), mask.value.d.end());
    json thresholded = json::array();
    for (double logit : mask.value.d) thresholded.push_back(ndiff::stable_sigmoid(logit) > 0.5);
    mask_json["mask_selected"] = thresholded;
    write_json_file(ctx.path("adapted_mask.json"), mask_json);

    if (!opts.eval_path.empty()) {
        const dataset::Dataset eval_data = dataset::load(opts.eval_path);
        const auto spec = models::CompositionSpec::masked_and(model->arity());
        const auto conf = train::evaluate(*model, eval_data.records, spec, &mask);
        write_json_file(ctx.path("eval.json"), {{"accuracy", conf.accuracy()},
                                                {"tp", conf.tp},
                                                {"tn", conf.tn},
                                                {"fp", conf.fp},
                                                {"fn", conf.fn}});
        std::cout << "accuracy " << conf.accuracy() << "\n";
    } else {
        std::cout << "adapt: wrote mask\n";
    }
    ctx.finish();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"eigenlen: geometric eigen-length learning workbench"};
    app.require_subcommand(1);

    GenOpts gen_opts;
    auto* gen = app.add_subcommand("gen", "generate a labeled fitting dataset");
    add_common(gen, gen_opts.common);
    gen->add_option("--task", gen_opts.task,
                    "tube|cylinder|sphere|partial_box|shelf_rack|top|mug|multi_tube");
    gen->add_option("--n", gen_opts.n, "number of records");
    gen->add_option("--env-points", gen_opts.env_points, "points per environment cloud");
    gen->add_option("--obj-points", gen_opts.obj_points, "points per object cloud");
    gen->add_flag("--rotate-env", gen_opts.rotate_env, "randomly rotate environments");
    gen->add_option("--margin", gen_opts.margin, "reject samples within this label margin");
    gen->add_option("--faces", gen_opts.faces, "partial-box faces, e.g. 110011 (-x+x-y+y-z+z)");

    TrainOpts train_opts;
    auto* train_cmd = app.add_subcommand("train", "train a model on a dataset");
    add_common(train_cmd, train_opts.common);
    train_cmd->add_option("--data", train_opts.data_path, "dataset file")->required();
    train_cmd->add_option("--test", train_opts.test_path, "held-out dataset file");
    train_cmd->add_option("--family", train_opts.family, "implicit|grounded|direct");
    train_cmd->add_option("--arity", train_opts.arity, "number of eigen-length slots");
    train_cmd->add_option("--composition", train_opts.composition, "and|dnf");
    train_cmd->add_option("--dnf-groups", train_opts.dnf_groups, "e.g. \"0,1;2,3\"");
    train_cmd->add_option("--epochs", train_opts.epochs, "training epochs");
    train_cmd->add_option("--lr", train_opts.lr, "initial learning rate");
    train_cmd->add_option("--test-fraction", train_opts.test_fraction,
                          "held-out fraction when --test is absent");
    train_cmd->add_option("--split-seed", train_opts.split_seed, "seed for the split")
        ->each([&](const std::string&) { train_opts.split_seed_set = true; });

    EvalOpts eval_opts;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(eval_cmd, eval_opts.common);
    eval_cmd->add_option("--checkpoint", eval_opts.checkpoint_path, "checkpoint file")
        ->required();
    eval_cmd->add_option("--data", eval_opts.data_path, "dataset file")->required();
    eval_cmd->add_option("--task-index", eval_opts.task_index,
                         "mask index for multitask checkpoints");

    AnalyzeOpts analyze_opts;
    auto* analyze_cmd =
        app.add_subcommand("analyze", "correlation analysis of learned eigen-lengths");
    add_common(analyze_cmd, analyze_opts.common);
    analyze_cmd->add_option("--checkpoint", analyze_opts.checkpoint_path, "checkpoint file");
    analyze_cmd->add_option("--data", analyze_opts.data_path, "dataset file")->required();
    analyze_cmd->add_option("--side", analyze_opts.side, "obj|env predictions to analyze");
    analyze_cmd->add_option("--samples", analyze_opts.samples, "analysis sample count");
    analyze_cmd->add_flag("--oracle", analyze_opts.oracle,
                          "inject ground-truth eigen-lengths as predictions");

    SweepOpts sweep_opts;
    auto* sweep_cmd = app.add_subcommand("sweep", "data-efficiency sweep (direct vs grounded)");
    add_common(sweep_cmd, sweep_opts.common);
    sweep_cmd->add_option("--data", sweep_opts.data_path, "training pool")->required();
    sweep_cmd->add_option("--test", sweep_opts.test_path, "held-out dataset")->required();
    sweep_cmd->add_option("--sizes", sweep_opts.sizes, "comma-separated training sizes");
    sweep_cmd->add_option("--epochs", sweep_opts.epochs, "epochs per cell");
    sweep_cmd->add_option("--jobs", sweep_opts.jobs, "parallel cells");

    RotestOpts rotest_opts;
    auto* rotest_cmd =
        app.add_subcommand("rotest", "relative rotation estimation from grounding vectors");
    add_common(rotest_cmd, rotest_opts.common);
    rotest_cmd->add_option("--checkpoint", rotest_opts.checkpoint_path, "grounded checkpoint")
        ->required();
    rotest_cmd->add_option("--data", rotest_opts.data_path, "dataset with held-out env clouds")
        ->required();
    rotest_cmd->add_option("--pairs", rotest_opts.pairs, "number of rotation pairs");

    MultitaskOpts multitask_opts;
    auto* multitask_cmd =
        app.add_subcommand("multitask", "train shared eigen-lengths with per-task masks");
    add_common(multitask_cmd, multitask_opts.common);
    multitask_cmd->add_option("--data", multitask_opts.data_paths, "per-task dataset files")
        ->required();
    multitask_cmd->add_option("--test", multitask_opts.test_paths, "per-task test files");
    multitask_cmd->add_option("--family", multitask_opts.family, "implicit|grounded");
    multitask_cmd->add_option("--arity", multitask_opts.arity, "shared slot count");
    multitask_cmd->add_option("--epochs", multitask_opts.epochs, "training epochs");

    AdaptOpts adapt_opts;
    auto* adapt_cmd = app.add_subcommand("adapt", "few-shot mask-only adaptation to a new task");
    add_common(adapt_cmd, adapt_opts.common);
    adapt_cmd->add_option("--checkpoint", adapt_opts.checkpoint_path, "frozen checkpoint")
        ->required();
    adapt_cmd->add_option("--data", adapt_opts.data_path, "adaptation samples (>= 320)")
        ->required();
    adapt_cmd->add_option("--eval", adapt_opts.eval_path, "dataset to evaluate the mask on");
    adapt_cmd->add_option("--epochs", adapt_opts.epochs, "adaptation epochs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return run_gen(gen_opts);
        if (train_cmd->parsed()) return run_train(train_opts);
        if (eval_cmd->parsed()) return run_eval(eval_opts);
        if (analyze_cmd->parsed()) return run_analyze(analyze_opts);
        if (sweep_cmd->parsed()) return run_sweep(sweep_opts);
        if (rotest_cmd->parsed()) return run_rotest(rotest_opts);
        if (multitask_cmd->parsed()) return run_multitask(multitask_opts);
        if (adapt_cmd->parsed()) return run_adapt(adapt_opts);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
