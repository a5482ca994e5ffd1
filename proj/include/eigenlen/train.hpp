#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "eigenlen/batch.hpp"
#include "eigenlen/dataset.hpp"
#include "eigenlen/models.hpp"
#include "eigenlen/ndiff.hpp"

namespace eigenlen::train {

using dataset::Dataset;
using models::CompositionSpec;
using models::EigenLengthModel;
using ndiff::Matrix;
using ndiff::Mode;
using ndiff::Param;

struct TrainConfig {
    int epochs = 30;         // desk preset; paper scale runs ~100
    int batch_size = 32;
    double lr = 1e-3;
    int lr_halving_period = 10;  // epochs per halving
    std::uint64_t seed = 0;
};

inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    return cfg.lr * std::pow(0.5, epoch / cfg.lr_halving_period);
}

struct EpochStats {
    double train_loss = 0.0, train_acc = 0.0, test_acc = 0.0, tau = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    double wall_seconds = 0.0;
};

struct Confusion {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::size_t total() const { return tp + tn + fp + fn; }
    double accuracy() const {
        return total() == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(total());
    }
};

// ---------------------------------------------------------------------------
// Batch losses. Returns mean BCE plus the hard-composition hit count from the
// same forward pass; with `backprop` the gradients land in the model
// parameters, log_tau, and (when masked) the mask logits.
// ---------------------------------------------------------------------------

struct BatchResult {
    double loss = 0.0;
    int correct = 0;
};

inline BatchResult eigen_batch(EigenLengthModel& model, const batch::Stacked& data,
                               const CompositionSpec& spec, Param* mask_logits, Mode mode,
                               bool backprop) {
    const int b_count = static_cast<int>(data.labels.size());
    const auto out = model.forward(data.env_x, data.obj_x, mode);
    const double tau = model.tau();

    std::vector<double> mask_values;
    if (spec.kind == CompositionSpec::Kind::MaskedAnd) {
        if (!mask_logits) throw std::invalid_argument("eigen_batch_loss: missing mask logits");
        mask_values.resize(static_cast<std::size_t>(spec.arity));
        for (int s = 0; s < spec.arity; ++s)
            mask_values[static_cast<std::size_t>(s)] =
                ndiff::stable_sigmoid(mask_logits->value.d[static_cast<std::size_t>(s)]);
    }

    BatchResult result;
    Matrix d_l_env(b_count, spec.arity), d_l_obj(b_count, spec.arity);
    for (int b = 0; b < b_count; ++b) {
        const auto res = models::compose_soft(out.l_env.row(b), out.l_obj.row(b), tau, spec,
                                              mask_values.empty() ? nullptr : mask_values.data());
        const bool label = data.labels[static_cast<std::size_t>(b)] != 0;
        result.loss += models::bce_loss(res.soft, label);
        if (models::compose_hard(out.l_env.row(b), out.l_obj.row(b), spec,
                                 mask_values.empty() ? nullptr : mask_values.data()) == label)
            ++result.correct;
        if (backprop) {
            const double d_soft = models::bce_grad(res.soft, label) / b_count;
            const auto grads = models::compose_backward(
                res, d_soft, out.l_env.row(b), out.l_obj.row(b), tau, spec,
                mask_values.empty() ? nullptr : mask_values.data(),
                mask_logits ? mask_logits->value.d.data() : nullptr);
            for (int s = 0; s < spec.arity; ++s) {
                d_l_env(b, s) = grads.d_l_env[static_cast<std::size_t>(s)];
                d_l_obj(b, s) = grads.d_l_obj[static_cast<std::size_t>(s)];
            }
            model.log_tau().grad.d[0] += grads.d_log_tau;
            if (mask_logits)
                for (int s = 0; s < spec.arity; ++s)
                    mask_logits->grad.d[static_cast<std::size_t>(s)] +=
                        grads.d_mask_logits[static_cast<std::size_t>(s)];
        }
    }
    if (backprop) model.backward(d_l_env, d_l_obj);
    result.loss /= b_count;
    return result;
}

// Convenience wrapper for callers that only need the scalar objective.
inline double eigen_batch_loss(EigenLengthModel& model, const batch::Stacked& data,
                               const CompositionSpec& spec, Param* mask_logits, Mode mode,
                               bool backprop) {
    return eigen_batch(model, data, spec, mask_logits, mode, backprop).loss;
}

inline BatchResult direct_batch(models::DirectModel& model, const batch::Stacked& data,
                                Mode mode, bool backprop) {
    const int b_count = static_cast<int>(data.labels.size());
    Matrix logits = model.forward(data.env_x, data.obj_x, mode);
    BatchResult result;
    Matrix d_logits(b_count, 1);
    for (int b = 0; b < b_count; ++b) {
        const double p = ndiff::stable_sigmoid(logits(b, 0));
        const bool label = data.labels[static_cast<std::size_t>(b)] != 0;
        result.loss += models::bce_loss(p, label);
        if ((logits(b, 0) > 0.0) == label) ++result.correct;
        d_logits(b, 0) = (p - (label ? 1.0 : 0.0)) / b_count;
    }
    if (backprop) model.backward(d_logits);
    result.loss /= b_count;
    return result;
}

inline double direct_batch_loss(models::DirectModel& model, const batch::Stacked& data,
                                Mode mode, bool backprop) {
    return direct_batch(model, data, mode, backprop).loss;
}

// ---------------------------------------------------------------------------
// Evaluation (hard composition)
// ---------------------------------------------------------------------------

inline Confusion evaluate(EigenLengthModel& model, const std::vector<tasks::TaskInstance>& recs,
                          const CompositionSpec& spec, const Param* mask_logits = nullptr,
                          int batch_size = 32) {
    std::vector<double> mask_values;
    if (spec.kind == CompositionSpec::Kind::MaskedAnd) {
        if (!mask_logits) throw std::invalid_argument("evaluate: missing mask logits");
        for (int s = 0; s < spec.arity; ++s)
            mask_values.push_back(
                ndiff::stable_sigmoid(mask_logits->value.d[static_cast<std::size_t>(s)]));
    }
    Confusion conf;
    const auto order = batch::identity_order(recs.size());
    for (std::size_t begin = 0; begin < recs.size(); begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(recs.size(), begin + static_cast<std::size_t>(batch_size));
        const auto data = batch::stack(recs, order, begin, end);
        const auto out = model.forward(data.env_x, data.obj_x, Mode::Eval);
        for (std::size_t b = 0; b < data.labels.size(); ++b) {
            const bool pred =
                models::compose_hard(out.l_env.row(static_cast<int>(b)),
                                     out.l_obj.row(static_cast<int>(b)), spec,
                                     mask_values.empty() ? nullptr : mask_values.data());
            const bool label = data.labels[b] != 0;
            if (pred && label) ++conf.tp;
            if (pred && !label) ++conf.fp;
            if (!pred && label) ++conf.fn;
            if (!pred && !label) ++conf.tn;
        }
    }
    return conf;
}

inline Confusion evaluate_direct(models::DirectModel& model,
                                 const std::vector<tasks::TaskInstance>& recs,
                                 int batch_size = 32) {
    Confusion conf;
    const auto order = batch::identity_order(recs.size());
    for (std::size_t begin = 0; begin < recs.size(); begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(recs.size(), begin + static_cast<std::size_t>(batch_size));
        const auto data = batch::stack(recs, order, begin, end);
        Matrix logits = model.forward(data.env_x, data.obj_x, Mode::Eval);
        for (std::size_t b = 0; b < data.labels.size(); ++b) {
            const bool pred = logits(static_cast<int>(b), 0) > 0.0;
            const bool label = data.labels[b] != 0;
            if (pred && label) ++conf.tp;
            if (pred && !label) ++conf.fp;
            if (!pred && label) ++conf.fn;
            if (!pred && !label) ++conf.tn;
        }
    }
    return conf;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

namespace detail {

inline void check_loss_finite(double loss, int epoch, std::size_t batch_index) {
    if (!std::isfinite(loss))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batch_index));
}

}  // namespace detail

// Single-task training with the given composition. Deterministic given the
// config seed: shuffles come from a dedicated stream, weights from the model
// seed. The trailing partial batch (if any) is dropped during training.
inline TrainHistory train_eigen(EigenLengthModel& model, const Dataset& train_set,
                                const Dataset& test_set, const CompositionSpec& spec,
                                const TrainConfig& cfg, Param* mask_logits = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainHistory history;
    Rng shuffle_rng(cfg.seed);
    std::vector<Param*> params = model.params();
    if (mask_logits) params.push_back(mask_logits);

    auto order = batch::identity_order(train_set.records.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0, correct = 0, seen = 0;
        for (std::size_t begin = 0;
             begin + static_cast<std::size_t>(cfg.batch_size) <= order.size();
             begin += static_cast<std::size_t>(cfg.batch_size)) {
            const auto data =
                batch::stack(train_set.records, order, begin,
                             begin + static_cast<std::size_t>(cfg.batch_size));
            const auto res = eigen_batch(model, data, spec, mask_logits, Mode::Train, true);
            detail::check_loss_finite(res.loss, epoch, batches);
            ndiff::adam_step(params, lr);
            loss_sum += res.loss;
            correct += static_cast<std::size_t>(res.correct);
            seen += data.labels.size();
            ++batches;
        }
        EpochStats stats;
        stats.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        stats.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
        stats.test_acc =
            test_set.records.empty()
                ? 0.0
                : evaluate(model, test_set.records, spec, mask_logits, cfg.batch_size).accuracy();
        stats.tau = model.tau();
        history.epochs.push_back(stats);
    }
    history.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return history;
}

inline TrainHistory train_direct(models::DirectModel& model, const Dataset& train_set,
                                 const Dataset& test_set, const TrainConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainHistory history;
    Rng shuffle_rng(cfg.seed);
    std::vector<Param*> params = model.params();

    auto order = batch::identity_order(train_set.records.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0, correct = 0, seen = 0;
        for (std::size_t begin = 0;
             begin + static_cast<std::size_t>(cfg.batch_size) <= order.size();
             begin += static_cast<std::size_t>(cfg.batch_size)) {
            const auto data =
                batch::stack(train_set.records, order, begin,
                             begin + static_cast<std::size_t>(cfg.batch_size));
            const auto res = direct_batch(model, data, Mode::Train, true);
            detail::check_loss_finite(res.loss, epoch, batches);
            ndiff::adam_step(params, lr);
            loss_sum += res.loss;
            correct += static_cast<std::size_t>(res.correct);
            seen += data.labels.size();
            ++batches;
        }
        EpochStats stats;
        stats.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        stats.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
        stats.test_acc = test_set.records.empty()
                             ? 0.0
                             : evaluate_direct(model, test_set.records, cfg.batch_size).accuracy();
        stats.tau = 0.0;
        history.epochs.push_back(stats);
    }
    history.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return history;
}

// ---------------------------------------------------------------------------
// Multi-task training with per-task masks
// ---------------------------------------------------------------------------

struct MultitaskResult {
    std::vector<Param> masks;  // one 1xS logit row per task, logits start at 0
    TrainHistory history;      // stats averaged across tasks
};

// Round-robin: one batch per task per step, losses unweighted. Each step
// updates the shared networks plus that task's mask logits.
inline MultitaskResult train_multitask(EigenLengthModel& model,
                                       const std::vector<Dataset>& task_train,
                                       const std::vector<Dataset>& task_test,
                                       const TrainConfig& cfg) {
    if (task_train.empty()) throw std::invalid_argument("train_multitask: no tasks");
    const int s_count = model.arity();
    const CompositionSpec spec = CompositionSpec::masked_and(s_count);

    MultitaskResult result;
    result.masks.reserve(task_train.size());
    for (std::size_t k = 0; k < task_train.size(); ++k) result.masks.emplace_back(1, s_count);

    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng(cfg.seed);
    std::vector<std::vector<std::size_t>> orders;
    std::vector<std::size_t> cursors(task_train.size(), 0);
    for (const auto& ds : task_train) orders.push_back(batch::identity_order(ds.records.size()));

    std::size_t steps_per_epoch = 0;
    for (const auto& ds : task_train)
        steps_per_epoch = std::max(
            steps_per_epoch, ds.records.size() / static_cast<std::size_t>(cfg.batch_size));

    const std::vector<Param*> net_params = model.params();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        for (auto& order : orders) shuffle_rng.shuffle(order);
        std::fill(cursors.begin(), cursors.end(), 0);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            for (std::size_t k = 0; k < task_train.size(); ++k) {
                auto& order = orders[k];
                auto& cursor = cursors[k];
                if (cursor + static_cast<std::size_t>(cfg.batch_size) > order.size()) {
                    shuffle_rng.shuffle(order);
                    cursor = 0;
                }
                const auto data = batch::stack(task_train[k].records, order, cursor,
                                               cursor + static_cast<std::size_t>(cfg.batch_size));
                cursor += static_cast<std::size_t>(cfg.batch_size);
                const double loss = eigen_batch_loss(model, data, spec, &result.masks[k],
                                                     Mode::Train, true);
                detail::check_loss_finite(loss, epoch, step);
                std::vector<Param*> params = net_params;
                params.push_back(&result.masks[k]);
                ndiff::adam_step(params, lr);
                loss_sum += loss;
                ++batches;
            }
        }
        EpochStats stats;
        stats.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        double acc = 0.0;
        for (std::size_t k = 0; k < task_train.size(); ++k)
            acc += evaluate(model, (k < task_test.size() ? task_test[k] : task_train[k]).records,
                            spec, &result.masks[k], cfg.batch_size)
                       .accuracy();
        stats.test_acc = acc / static_cast<double>(task_train.size());
        stats.train_acc = stats.test_acc;
        stats.tau = model.tau();
        result.history.epochs.push_back(stats);
    }
    result.history.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

// ---------------------------------------------------------------------------
// Few-shot mask-only adaptation: networks frozen (eval mode, no BatchNorm
// updates), exactly 10 batches of 32, one epoch by default.
// ---------------------------------------------------------------------------

struct SweepRow {
    std::size_t train_size = 0;
    std::string family;          // "direct" or "grounded"
    double test_accuracy = 0.0;
    double mean_vector_angle_deg = std::numeric_limits<double>::quiet_NaN();  // grounded only
};

inline Param few_shot_adapt(EigenLengthModel& model, const Dataset& adapt_data,
                            const TrainConfig& cfg) {
    constexpr std::size_t kBatches = 10;
    const std::size_t need = kBatches * 32;
    if (adapt_data.records.size() < need)
        throw std::invalid_argument("few_shot_adapt: need at least " + std::to_string(need) +
                                    " samples, got " + std::to_string(adapt_data.records.size()));
    const int s_count = model.arity();
    const CompositionSpec spec = CompositionSpec::masked_and(s_count);
    Param mask(1, s_count);  // logits 0 -> mask 0.5

    Rng shuffle_rng(cfg.seed);
    auto order = batch::identity_order(adapt_data.records.size());
    shuffle_rng.shuffle(order);
    order.resize(need);  // exactly 10 batches of 32

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        for (std::size_t b = 0; b < kBatches; ++b) {
            const auto data = batch::stack(adapt_data.records, order, b * 32, (b + 1) * 32);
            const double loss = eigen_batch_loss(model, data, spec, &mask, Mode::Eval, true);
            detail::check_loss_finite(loss, epoch, b);
            // zero any gradient that leaked into the frozen parameters and
            // step only the mask
            for (Param* p : model.params())
                for (auto& g : p->grad.d) g = 0.0;
            ndiff::adam_step({&mask}, lr);
        }
    }
    return mask;
}

}  // namespace eigenlen::train

#include "eigenlen/analysis.hpp"

namespace eigenlen::train {

// One full train/eval per (size, family); the grounded rows also report the
// mean angle between learned vectors and the matched measurement directions.
// Cells are independent, so `jobs` may run them on separate threads.
inline std::vector<SweepRow> data_efficiency_sweep(const Dataset& train_pool,
                                                   const Dataset& test_set,
                                                   const std::vector<std::size_t>& sizes,
                                                   const models::ModelConfig& model_cfg,
                                                   const TrainConfig& cfg,
                                                   std::size_t analysis_samples = 512,
                                                   int jobs = 1) {
    for (std::size_t i = 1; i < sizes.size(); ++i)
        if (sizes[i] < sizes[i - 1])
            throw std::invalid_argument("data_efficiency_sweep: sizes must ascend");
    if (sizes.empty() || sizes.back() > train_pool.records.size())
        throw std::invalid_argument("data_efficiency_sweep: sizes exceed the training pool");

    const int s_count = tasks::comparison_arity(train_pool.config.task);
    const auto comparisons = tasks::task_comparisons(train_pool.config.task);
    std::vector<std::string> obj_gt_names;
    for (const auto& [env_name, obj_name] : comparisons) obj_gt_names.push_back(obj_name);

    std::vector<tasks::TaskInstance> analysis_recs(
        test_set.records.begin(),
        test_set.records.begin() +
            static_cast<std::ptrdiff_t>(std::min(analysis_samples, test_set.records.size())));

    std::vector<SweepRow> rows(sizes.size() * 2);
    auto run_cell = [&](std::size_t cell) {
        const std::size_t size = sizes[cell / 2];
        const bool direct_family = (cell % 2 == 0);
        Dataset subset;
        subset.config = train_pool.config;
        subset.config.n_samples = size;
        subset.records.assign(train_pool.records.begin(),
                              train_pool.records.begin() + static_cast<std::ptrdiff_t>(size));
        SweepRow row;
        row.train_size = size;
        if (direct_family) {
            models::DirectModel direct(model_cfg, static_cast<int>(subset.config.env_points),
                                       static_cast<int>(subset.config.obj_points),
                                       cfg.seed + size);
            train_direct(direct, subset, test_set, cfg);
            row.family = "direct";
            row.test_accuracy = evaluate_direct(direct, test_set.records).accuracy();
        } else {
            models::GroundedModel grounded(model_cfg, s_count,
                                           static_cast<int>(subset.config.env_points),
                                           static_cast<int>(subset.config.obj_points),
                                           cfg.seed + size + 1);
            const auto spec = CompositionSpec::both_and(s_count);
            train_eigen(grounded, subset, test_set, spec, cfg);
            row.family = "grounded";
            row.test_accuracy = evaluate(grounded, test_set.records, spec).accuracy();
            const auto preds = analysis::collect_predictions(grounded, analysis_recs);
            const auto rep = analysis::match_eigenlengths(
                preds.l_obj, analysis::gt_matrix(analysis_recs, obj_gt_names), obj_gt_names);
            try {
                row.mean_vector_angle_deg =
                    analysis::vector_angle_error(preds, rep, analysis_recs);
            } catch (const std::invalid_argument&) {
                // tasks without directional ground truths leave the column empty
            }
        }
        rows[cell] = row;
    };

    if (jobs <= 1) {
        for (std::size_t cell = 0; cell < rows.size(); ++cell) run_cell(cell);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        const int n_workers = std::min<int>(jobs, static_cast<int>(rows.size()));
        for (int w = 0; w < n_workers; ++w)
            workers.emplace_back([&] {
                for (std::size_t cell = next.fetch_add(1); cell < rows.size();
                     cell = next.fetch_add(1))
                    run_cell(cell);
            });
        for (auto& worker : workers) worker.join();
    }
    return rows;
}

}  // namespace eigenlen::train
