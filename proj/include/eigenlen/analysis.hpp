#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "eigenlen/batch.hpp"
#include "eigenlen/models.hpp"
#include "eigenlen/tasks.hpp"

namespace eigenlen::analysis {

using geom::Vec3;
using ndiff::Matrix;
using nlohmann::json;
using tasks::TaskInstance;
using tasks::TaskKind;

// ---------------------------------------------------------------------------
// Coefficient of determination
// ---------------------------------------------------------------------------

struct LineFit {
    double slope = 0.0, intercept = 0.0;
    double r2_raw = 0.0;  // before clamping
    double r2 = 0.0;      // clamped to [0, 1] for reporting
};

// Least-squares fit of y on x; R^2 = 1 - SS_res / SS_tot.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 3)
        throw std::invalid_argument("fit_line: need matching vectors with >= 3 entries");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0) throw std::invalid_argument("fit_line: degenerate regressor (var(x) = 0)");
    if (syy <= 0.0) throw std::invalid_argument("fit_line: degenerate target (var(y) = 0)");
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - (f.slope * x[i] + f.intercept);
        ss_res += e * e;
    }
    f.r2_raw = 1.0 - ss_res / syy;
    f.r2 = std::clamp(f.r2_raw, 0.0, 1.0);
    return f;
}

inline double r_squared(const std::vector<double>& x, const std::vector<double>& y) {
    return fit_line(x, y).r2;
}

// ---------------------------------------------------------------------------
// Matching predictions to ground truths by total R^2
// ---------------------------------------------------------------------------

struct CorrelationReport {
    std::vector<std::string> gt_names;   // S' ground-truth columns
    Matrix r2;                           // S x S'
    std::vector<int> matching;           // per prediction slot: gt column or -1
    std::vector<LineFit> fits;           // per matched slot (identity fit elsewhere)
    std::vector<int> best_gt;            // per slot, most-correlated gt column
    double total_matched_r2 = 0.0;
};

namespace detail {

inline void enumerate_assignments(int s_count, int g_count, std::vector<int>& current,
                                  std::vector<bool>& used, int slot, const Matrix& r2,
                                  double acc, double& best, std::vector<int>& best_assign) {
    if (slot == s_count) {
        if (acc > best) {
            best = acc;
            best_assign = current;
        }
        return;
    }
    const int remaining_slots = s_count - slot;
    int free_gts = 0;
    for (bool u : used)
        if (!u) ++free_gts;
    // a slot may stay unmatched only when there are more slots than gts left
    if (remaining_slots > free_gts) {
        current[static_cast<std::size_t>(slot)] = -1;
        enumerate_assignments(s_count, g_count, current, used, slot + 1, r2, acc, best,
                              best_assign);
    }
    for (int g = 0; g < g_count; ++g) {
        if (used[static_cast<std::size_t>(g)]) continue;
        used[static_cast<std::size_t>(g)] = true;
        current[static_cast<std::size_t>(slot)] = g;
        enumerate_assignments(s_count, g_count, current, used, slot + 1, r2, acc + r2(slot, g),
                              best, best_assign);
        used[static_cast<std::size_t>(g)] = false;
    }
    current[static_cast<std::size_t>(slot)] = -1;
}

}  // namespace detail

// Brute force over injective assignments maximizing the summed R^2. Unmatched
// predictions report their most correlated ground truth separately.
inline CorrelationReport match_eigenlengths(const Matrix& pred, const Matrix& gt,
                                            std::vector<std::string> gt_names) {
    if (pred.rows != gt.rows) throw std::invalid_argument("match: row count mismatch");
    if (pred.rows < 32) throw std::invalid_argument("match: need at least 32 samples");
    if (static_cast<std::size_t>(gt.cols) != gt_names.size())
        throw std::invalid_argument("match: gt names / columns mismatch");
    const int s_count = pred.cols, g_count = gt.cols;

    CorrelationReport rep;
    rep.gt_names = std::move(gt_names);
    rep.r2 = Matrix(s_count, g_count);
    std::vector<std::vector<LineFit>> all_fits(static_cast<std::size_t>(s_count),
                                               std::vector<LineFit>(static_cast<std::size_t>(g_count)));
    for (int s = 0; s < s_count; ++s) {
        std::vector<double> ys(static_cast<std::size_t>(pred.rows));
        for (int i = 0; i < pred.rows; ++i) ys[static_cast<std::size_t>(i)] = pred(i, s);
        for (int g = 0; g < g_count; ++g) {
            std::vector<double> xs(static_cast<std::size_t>(gt.rows));
            for (int i = 0; i < gt.rows; ++i) xs[static_cast<std::size_t>(i)] = gt(i, g);
            const LineFit f = fit_line(xs, ys);  // regress prediction on ground truth
            all_fits[static_cast<std::size_t>(s)][static_cast<std::size_t>(g)] = f;
            rep.r2(s, g) = f.r2;
        }
    }

    std::vector<int> current(static_cast<std::size_t>(s_count), -1);
    std::vector<bool> used(static_cast<std::size_t>(g_count), false);
    double best = -1.0;
    detail::enumerate_assignments(s_count, g_count, current, used, 0, rep.r2, 0.0, best,
                                  rep.matching);
    rep.total_matched_r2 = best;

    rep.best_gt.resize(static_cast<std::size_t>(s_count));
    rep.fits.resize(static_cast<std::size_t>(s_count));
    for (int s = 0; s < s_count; ++s) {
        int arg = 0;
        for (int g = 1; g < g_count; ++g)
            if (rep.r2(s, g) > rep.r2(s, arg)) arg = g;
        rep.best_gt[static_cast<std::size_t>(s)] = arg;
        const int m = rep.matching[static_cast<std::size_t>(s)];
        rep.fits[static_cast<std::size_t>(s)] =
            all_fits[static_cast<std::size_t>(s)][static_cast<std::size_t>(m >= 0 ? m : arg)];
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Prediction collection and the degenerate-slot probe
// ---------------------------------------------------------------------------

struct EigenPredictions {
    Matrix l_env, l_obj;  // N x S
    Matrix v;             // N x 3S when grounded, empty otherwise
    Matrix p, q;          // anchors when grounded
};

inline EigenPredictions collect_predictions(models::EigenLengthModel& model,
                                            const std::vector<TaskInstance>& recs,
                                            int batch_size = 32) {
    const int s_count = model.arity();
    EigenPredictions out;
    out.l_env = Matrix(static_cast<int>(recs.size()), s_count);
    out.l_obj = Matrix(static_cast<int>(recs.size()), s_count);
    if (model.has_grounding()) {
        out.v = Matrix(static_cast<int>(recs.size()), 3 * s_count);
        out.p = Matrix(static_cast<int>(recs.size()), 3 * s_count);
        out.q = Matrix(static_cast<int>(recs.size()), 3 * s_count);
    }
    const auto order = batch::identity_order(recs.size());
    for (std::size_t begin = 0; begin < recs.size();
         begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end =
            std::min(recs.size(), begin + static_cast<std::size_t>(batch_size));
        const auto data = batch::stack(recs, order, begin, end);
        const auto res = model.forward(data.env_x, data.obj_x, ndiff::Mode::Eval);
        for (std::size_t b = 0; b < end - begin; ++b) {
            for (int s = 0; s < s_count; ++s) {
                out.l_env(static_cast<int>(begin + b), s) = res.l_env(static_cast<int>(b), s);
                out.l_obj(static_cast<int>(begin + b), s) = res.l_obj(static_cast<int>(b), s);
            }
            if (model.has_grounding()) {
                const auto& g = model.last_grounding();
                for (int j = 0; j < 3 * s_count; ++j) {
                    out.v(static_cast<int>(begin + b), j) = g.v(static_cast<int>(b), j);
                    out.p(static_cast<int>(begin + b), j) = g.p(static_cast<int>(b), j);
                    out.q(static_cast<int>(begin + b), j) = g.q(static_cast<int>(b), j);
                }
            }
        }
    }
    return out;
}

inline Matrix gt_matrix(const std::vector<TaskInstance>& recs,
                        const std::vector<std::string>& names) {
    Matrix out(static_cast<int>(recs.size()), static_cast<int>(names.size()));
    for (std::size_t i = 0; i < recs.size(); ++i)
        for (std::size_t j = 0; j < names.size(); ++j)
            out(static_cast<int>(i), static_cast<int>(j)) = recs[i].gt.at(names[j]);
    return out;
}

// Fraction of samples on which comparison `s` alone decides the hard AND:
// its comparison is false while every other one is true.
inline std::vector<double> contribution_rates(const Matrix& l_env, const Matrix& l_obj) {
    const int s_count = l_env.cols;
    std::vector<double> rates(static_cast<std::size_t>(s_count), 0.0);
    if (l_env.rows == 0) return rates;
    for (int i = 0; i < l_env.rows; ++i) {
        int false_count = 0, false_slot = -1;
        for (int s = 0; s < s_count; ++s)
            if (!(l_env(i, s) > l_obj(i, s))) {
                ++false_count;
                false_slot = s;
            }
        if (false_count == 1) rates[static_cast<std::size_t>(false_slot)] += 1.0;
    }
    for (auto& r : rates) r /= static_cast<double>(l_env.rows);
    return rates;
}

// ---------------------------------------------------------------------------
// Grounding quality metrics
// ---------------------------------------------------------------------------

inline double angle_between_deg(const Vec3& a, const Vec3& b) {
    const double c = std::clamp(std::abs(geom::dot(a, b)), 0.0, 1.0);
    return std::acos(c) * 180.0 / std::numbers::pi;
}

// Mean over samples and matched slots of the (sign-invariant) angle between
// the predicted vector and the matched ground truth's measurement direction.
inline double vector_angle_error(const EigenPredictions& preds, const CorrelationReport& rep,
                                 const std::vector<TaskInstance>& recs) {
    if (preds.v.size() == 0) throw std::invalid_argument("vector_angle_error: no vectors");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < rep.matching.size(); ++s) {
        const int g = rep.matching[s];
        if (g < 0) continue;
        const std::string& name = rep.gt_names[static_cast<std::size_t>(g)];
        for (std::size_t i = 0; i < recs.size(); ++i) {
            const auto it = recs[i].gt.dirs.find(name);
            if (it == recs[i].gt.dirs.end()) continue;
            const Vec3 v{preds.v(static_cast<int>(i), static_cast<int>(3 * s)),
                         preds.v(static_cast<int>(i), static_cast<int>(3 * s + 1)),
                         preds.v(static_cast<int>(i), static_cast<int>(3 * s + 2))};
            sum += angle_between_deg(geom::normalized(v), it->second);
            ++count;
        }
    }
    if (count == 0) throw std::invalid_argument("vector_angle_error: no matched directions");
    return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

inline void export_scatter(const Matrix& pred, const Matrix& gt, const CorrelationReport& rep,
                           const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("export_scatter: cannot open " + path);
    out << "sample_id,slot,pred,gt_name,gt_value\n";
    out.precision(17);
    for (int i = 0; i < pred.rows; ++i)
        for (std::size_t s = 0; s < rep.matching.size(); ++s) {
            const int g = rep.matching[s];
            if (g < 0) continue;
            out << i << "," << s << "," << pred(i, static_cast<int>(s)) << ","
                << rep.gt_names[static_cast<std::size_t>(g)] << "," << gt(i, g) << "\n";
        }
    if (!out) throw std::runtime_error("export_scatter: write failed for " + path);
}

// Per sample, per slot: v, p, q, L_env, L_obj, sigma.
inline void export_groundings(models::EigenLengthModel& model,
                              const std::vector<TaskInstance>& recs,
                              const models::CompositionSpec& spec, const std::string& path) {
    const auto preds = collect_predictions(model, recs);
    if (preds.v.size() == 0)
        throw std::invalid_argument("export_groundings: model has no grounding");
    const double tau = model.tau();
    json samples = json::array();
    for (int i = 0; i < preds.l_env.rows; ++i) {
        const auto res = models::compose_soft(preds.l_env.row(i), preds.l_obj.row(i), tau, spec);
        json slots = json::array();
        for (int s = 0; s < model.arity(); ++s) {
            json slot;
            slot["v"] = {preds.v(i, 3 * s), preds.v(i, 3 * s + 1), preds.v(i, 3 * s + 2)};
            slot["p"] = {preds.p(i, 3 * s), preds.p(i, 3 * s + 1), preds.p(i, 3 * s + 2)};
            slot["q"] = {preds.q(i, 3 * s), preds.q(i, 3 * s + 1), preds.q(i, 3 * s + 2)};
            slot["l_env"] = preds.l_env(i, s);
            slot["l_obj"] = preds.l_obj(i, s);
            slot["sigma"] = res.sigma[static_cast<std::size_t>(s)];
            slots.push_back(slot);
        }
        samples.push_back({{"sample_id", i}, {"slots", slots}});
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("export_groundings: cannot open " + path);
    out << json({{"samples", samples}}).dump(2) << "\n";
    if (!out) throw std::runtime_error("export_groundings: write failed for " + path);
}

}  // namespace eigenlen::analysis
