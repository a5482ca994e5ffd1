#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "eigenlen/geom.hpp"
#include "eigenlen/ndiff.hpp"
#include "eigenlen/rng.hpp"

namespace eigenlen::models {

using ndiff::Matrix;
using ndiff::Mode;
using ndiff::Param;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Logic composition over eigen-length comparisons
// ---------------------------------------------------------------------------

struct CompositionSpec {
    enum class Kind { And, MaskedAnd, Dnf };
    Kind kind = Kind::And;
    int arity = 1;
    std::vector<std::vector<int>> groups;  // Dnf: disjoint 0-based slot groups

    static CompositionSpec both_and(int s) { return {Kind::And, s, {}}; }
    static CompositionSpec masked_and(int s) { return {Kind::MaskedAnd, s, {}}; }
    static CompositionSpec dnf(int s, std::vector<std::vector<int>> groups) {
        CompositionSpec spec{Kind::Dnf, s, std::move(groups)};
        std::vector<bool> seen(static_cast<std::size_t>(s), false);
        for (const auto& g : spec.groups)
            for (int idx : g) {
                if (idx < 0 || idx >= s) throw std::invalid_argument("dnf: slot out of range");
                if (seen[static_cast<std::size_t>(idx)])
                    throw std::invalid_argument("dnf: groups must be disjoint");
                seen[static_cast<std::size_t>(idx)] = true;
            }
        return spec;
    }
};

struct ComposeResult {
    std::vector<double> sigma;  // per-slot comparison probabilities
    double soft = 0.0;
};

// soft AND = prod sigma; masked terms contribute the AND identity when masked
// out; DNF = 1 - prod_a (1 - prod_{s in U_a} sigma_s).
inline ComposeResult compose_soft(const double* l_env, const double* l_obj, double tau,
                                  const CompositionSpec& spec,
                                  const double* mask_values = nullptr) {
    const int s_count = spec.arity;
    ComposeResult out;
    out.sigma.resize(static_cast<std::size_t>(s_count));
    for (int s = 0; s < s_count; ++s)
        out.sigma[static_cast<std::size_t>(s)] =
            ndiff::stable_sigmoid((l_env[s] - l_obj[s]) / tau);
    switch (spec.kind) {
        case CompositionSpec::Kind::And: {
            double p = 1.0;
            for (double sg : out.sigma) p *= sg;
            out.soft = p;
            break;
        }
        case CompositionSpec::Kind::MaskedAnd: {
            if (!mask_values) throw std::invalid_argument("compose_soft: missing mask values");
            double p = 1.0;
            for (int s = 0; s < s_count; ++s)
                p *= 1.0 - mask_values[s] * (1.0 - out.sigma[static_cast<std::size_t>(s)]);
            out.soft = p;
            break;
        }
        case CompositionSpec::Kind::Dnf: {
            double fail = 1.0;
            for (const auto& group : spec.groups) {
                double g = 1.0;
                for (int idx : group) g *= out.sigma[static_cast<std::size_t>(idx)];
                fail *= 1.0 - g;
            }
            out.soft = 1.0 - fail;
            break;
        }
    }
    return out;
}

inline bool compose_hard(const double* l_env, const double* l_obj, const CompositionSpec& spec,
                         const double* mask_values = nullptr) {
    switch (spec.kind) {
        case CompositionSpec::Kind::And: {
            for (int s = 0; s < spec.arity; ++s)
                if (!(l_env[s] > l_obj[s])) return false;
            return true;
        }
        case CompositionSpec::Kind::MaskedAnd: {
            if (!mask_values) throw std::invalid_argument("compose_hard: missing mask values");
            for (int s = 0; s < spec.arity; ++s)
                if (mask_values[s] > 0.5 && !(l_env[s] > l_obj[s])) return false;
            return true;
        }
        case CompositionSpec::Kind::Dnf: {
            for (const auto& group : spec.groups) {
                bool all = true;
                for (int idx : group)
                    if (!(l_env[idx] > l_obj[idx])) {
                        all = false;
                        break;
                    }
                if (all) return true;
            }
            return false;
        }
    }
    return false;
}

// Gradients of `soft` w.r.t. margins, log(tau), and mask logits. Leave-one-out
// products are formed explicitly; arity is small everywhere in scope.
struct ComposeGrads {
    std::vector<double> d_l_env, d_l_obj;  // per slot
    double d_log_tau = 0.0;
    std::vector<double> d_mask_logits;  // per slot (MaskedAnd only)
};

inline ComposeGrads compose_backward(const ComposeResult& res, double d_soft,
                                     const double* l_env, const double* l_obj, double tau,
                                     const CompositionSpec& spec,
                                     const double* mask_values = nullptr,
                                     const double* mask_logits = nullptr) {
    const int s_count = spec.arity;
    const std::size_t sz = static_cast<std::size_t>(s_count);
    std::vector<double> d_sigma(sz, 0.0);
    ComposeGrads g;
    g.d_l_env.assign(sz, 0.0);
    g.d_l_obj.assign(sz, 0.0);

    switch (spec.kind) {
        case CompositionSpec::Kind::And: {
            for (int s = 0; s < s_count; ++s) {
                double rest = 1.0;
                for (int t = 0; t < s_count; ++t)
                    if (t != s) rest *= res.sigma[static_cast<std::size_t>(t)];
                d_sigma[static_cast<std::size_t>(s)] = d_soft * rest;
            }
            break;
        }
        case CompositionSpec::Kind::MaskedAnd: {
            if (!mask_values || !mask_logits)
                throw std::invalid_argument("compose_backward: missing mask");
            g.d_mask_logits.assign(sz, 0.0);
            std::vector<double> terms(sz);
            for (int s = 0; s < s_count; ++s)
                terms[static_cast<std::size_t>(s)] =
                    1.0 - mask_values[s] * (1.0 - res.sigma[static_cast<std::size_t>(s)]);
            for (int s = 0; s < s_count; ++s) {
                double rest = 1.0;
                for (int t = 0; t < s_count; ++t)
                    if (t != s) rest *= terms[static_cast<std::size_t>(t)];
                const std::size_t ss = static_cast<std::size_t>(s);
                d_sigma[ss] = d_soft * rest * mask_values[s];
                const double d_mask = d_soft * rest * (res.sigma[ss] - 1.0);
                g.d_mask_logits[ss] = d_mask * mask_values[s] * (1.0 - mask_values[s]);
            }
            break;
        }
        case CompositionSpec::Kind::Dnf: {
            std::vector<double> group_prod(spec.groups.size(), 1.0);
            for (std::size_t a = 0; a < spec.groups.size(); ++a)
                for (int idx : spec.groups[a])
                    group_prod[a] *= res.sigma[static_cast<std::size_t>(idx)];
            for (std::size_t a = 0; a < spec.groups.size(); ++a) {
                double rest = 1.0;
                for (std::size_t b = 0; b < spec.groups.size(); ++b)
                    if (b != a) rest *= 1.0 - group_prod[b];
                const double d_group = d_soft * rest;  // d soft / d g_a
                for (int idx : spec.groups[a]) {
                    double within = 1.0;
                    for (int other : spec.groups[a])
                        if (other != idx) within *= res.sigma[static_cast<std::size_t>(other)];
                    d_sigma[static_cast<std::size_t>(idx)] += d_group * within;
                }
            }
            break;
        }
    }

    for (int s = 0; s < s_count; ++s) {
        const std::size_t ss = static_cast<std::size_t>(s);
        const double sg = res.sigma[ss];
        const double d_margin = d_sigma[ss] * sg * (1.0 - sg);
        const double margin = (l_env[s] - l_obj[s]) / tau;
        g.d_l_env[ss] = d_margin / tau;
        g.d_l_obj[ss] = -d_margin / tau;
        g.d_log_tau += d_margin * -margin;
    }
    return g;
}

// Binary cross-entropy on the soft output, clamped away from exact 0/1.
inline double bce_loss(double p, bool label) {
    const double q = std::clamp(p, 1e-12, 1.0 - 1e-12);
    return label ? -std::log(q) : -std::log(1.0 - q);
}
inline double bce_grad(double p, bool label) {  // dL/dp
    const double q = std::clamp(p, 1e-12, 1.0 - 1e-12);
    return label ? -1.0 / q : 1.0 / (1.0 - q);
}

// ---------------------------------------------------------------------------
// Encoder building blocks
// ---------------------------------------------------------------------------

struct EncoderConfig {
    std::vector<int> per_point{3, 32, 64, 128};
    std::vector<int> head_hidden{64};
};

// Per-point shared MLP: BatchNorm + LeakyReLU after every linear layer.
struct PerPointStack {
    std::vector<ndiff::Linear> linears;
    std::vector<ndiff::BatchNorm> norms;
    std::vector<ndiff::LeakyRelu> relus;

    PerPointStack(const std::vector<int>& widths, Rng& rng) {
        for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
            linears.emplace_back(widths[i], widths[i + 1], rng);
            norms.emplace_back(widths[i + 1]);
            relus.emplace_back();
        }
    }

    Matrix forward(Matrix x, Mode mode) {
        Matrix h = std::move(x);
        for (std::size_t i = 0; i < linears.size(); ++i) {
            h = linears[i].forward(std::move(h), mode);
            h = norms[i].forward(std::move(h), mode, &relus[i]);
        }
        return h;
    }
    Matrix backward(Matrix dy) {
        Matrix g = std::move(dy);
        for (std::size_t i = linears.size(); i-- > 0;) {
            g = norms[i].backward(g, &relus[i]);
            g = linears[i].backward(g);
        }
        return g;
    }

    void named(std::vector<std::pair<std::string, Param*>>& params,
               std::vector<std::pair<std::string, Matrix*>>& buffers,
               const std::string& prefix) {
        for (std::size_t i = 0; i < linears.size(); ++i) {
            const std::string li = prefix + ".l" + std::to_string(i);
            params.emplace_back(li + ".w", &linears[i].w);
            params.emplace_back(li + ".b", &linears[i].b);
            params.emplace_back(li + ".bn.gamma", &norms[i].gamma);
            params.emplace_back(li + ".bn.beta", &norms[i].beta);
            buffers.emplace_back(li + ".bn.running_mean", &norms[i].running_mean);
            buffers.emplace_back(li + ".bn.running_var", &norms[i].running_var);
        }
    }
};

inline void named_mlp(ndiff::Mlp& mlp, std::vector<std::pair<std::string, Param*>>& params,
                      std::vector<std::pair<std::string, Matrix*>>& buffers,
                      const std::string& prefix) {
    for (std::size_t i = 0; i < mlp.linears.size(); ++i) {
        const std::string li = prefix + ".l" + std::to_string(i);
        params.emplace_back(li + ".w", &mlp.linears[i].w);
        params.emplace_back(li + ".b", &mlp.linears[i].b);
        if (i < mlp.norms.size()) {
            params.emplace_back(li + ".bn.gamma", &mlp.norms[i].gamma);
            params.emplace_back(li + ".bn.beta", &mlp.norms[i].beta);
            buffers.emplace_back(li + ".bn.running_mean", &mlp.norms[i].running_mean);
            buffers.emplace_back(li + ".bn.running_var", &mlp.norms[i].running_var);
        }
    }
}

// Shared-MLP encoder: per-point stack, max pool over points, head MLP.
struct PointNetEncoder {
    PerPointStack per_point;
    ndiff::MaxPoolOverPoints pool;
    ndiff::Mlp head;
    int out_dim;

    PointNetEncoder(const EncoderConfig& cfg, int out, int points_per_cloud, Rng& rng)
        : per_point(cfg.per_point, rng), pool(points_per_cloud), out_dim(out) {
        std::vector<int> head_widths{cfg.per_point.back()};
        head_widths.insert(head_widths.end(), cfg.head_hidden.begin(), cfg.head_hidden.end());
        head_widths.push_back(out);
        head = ndiff::Mlp(head_widths, rng);
    }

    Matrix forward(Matrix x, Mode mode) {
        Matrix h = per_point.forward(std::move(x), mode);
        h = pool.forward(h, mode);
        return head.forward(std::move(h), mode);
    }
    Matrix backward(const Matrix& dy) {
        Matrix g = head.backward(dy);
        g = pool.backward(g);
        return per_point.backward(std::move(g));
    }
    void named(std::vector<std::pair<std::string, Param*>>& params,
               std::vector<std::pair<std::string, Matrix*>>& buffers,
               const std::string& prefix) {
        per_point.named(params, buffers, prefix + ".pp");
        named_mlp(head, params, buffers, prefix + ".head");
    }
};

// ---------------------------------------------------------------------------
// Model families
// ---------------------------------------------------------------------------

struct ModelConfig {
    EncoderConfig encoder;
    std::vector<int> wn_seg_hidden{64, 32};  // after the per-point/global concat
    std::vector<int> wn_head_hidden{32};     // weight-head hidden widths
    int direct_latent = 32;
    std::vector<int> direct_head_hidden{64};
};

inline ModelConfig desk_model_config() { return {}; }

inline ModelConfig paper_model_config() {
    ModelConfig cfg;
    cfg.encoder.per_point = {3, 64, 128, 1024};
    cfg.encoder.head_hidden = {256};
    cfg.wn_seg_hidden = {512, 256, 128};
    cfg.wn_head_hidden = {256};
    cfg.direct_latent = 256;
    cfg.direct_head_hidden = {512};
    return cfg;
}

struct EigenOutputs {
    Matrix l_env, l_obj;  // B x S each
};

// Exported geometric anchors of a grounded forward pass.
struct GroundingBatch {
    Matrix v, p, q;  // B x 3S
};

class EigenLengthModel {
public:
    virtual ~EigenLengthModel() = default;
    virtual EigenOutputs forward(const Matrix& env_x, const Matrix& obj_x, Mode mode) = 0;
    virtual void backward(const Matrix& d_l_env, const Matrix& d_l_obj) = 0;
    virtual std::vector<Param*> params() = 0;
    virtual void named(std::vector<std::pair<std::string, Param*>>& params,
                       std::vector<std::pair<std::string, Matrix*>>& buffers) = 0;
    virtual json architecture() const = 0;
    virtual int arity() const = 0;
    virtual bool has_grounding() const { return false; }
    virtual const GroundingBatch& last_grounding() const {
        throw std::logic_error("model has no geometric grounding");
    }

    Param& log_tau() { return log_tau_; }
    double tau() const { return std::exp(log_tau_.value.d[0]); }

protected:
    Param log_tau_{1, 1};  // tau = exp(log_tau), initialized at tau = 1
};

class ImplicitModel final : public EigenLengthModel {
public:
    ImplicitModel(const ModelConfig& cfg, int s, int env_points, int obj_points,
                  std::uint64_t seed)
        : rng_(seed),
          envnet_(cfg.encoder, s, env_points, rng_),
          objnet_(cfg.encoder, s, obj_points, rng_),
          cfg_(cfg), s_(s), env_points_(env_points), obj_points_(obj_points) {}

    EigenOutputs forward(const Matrix& env_x, const Matrix& obj_x, Mode mode) override {
        return {envnet_.forward(env_x, mode), objnet_.forward(obj_x, mode)};
    }
    void backward(const Matrix& d_l_env, const Matrix& d_l_obj) override {
        envnet_.backward(d_l_env);
        objnet_.backward(d_l_obj);
    }
    std::vector<Param*> params() override {
        std::vector<std::pair<std::string, Param*>> named_params;
        std::vector<std::pair<std::string, Matrix*>> buffers;
        named(named_params, buffers);
        std::vector<Param*> out;
        for (auto& [name, p] : named_params) out.push_back(p);
        return out;
    }
    void named(std::vector<std::pair<std::string, Param*>>& params,
               std::vector<std::pair<std::string, Matrix*>>& buffers) override {
        envnet_.named(params, buffers, "envnet");
        objnet_.named(params, buffers, "objnet");
        params.emplace_back("log_tau", &log_tau_);
    }
    json architecture() const override {
        return {{"family", "implicit"},
                {"arity", s_},
                {"env_points", env_points_},
                {"obj_points", obj_points_},
                {"per_point", cfg_.encoder.per_point},
                {"head_hidden", cfg_.encoder.head_hidden}};
    }
    int arity() const override { return s_; }

private:
    Rng rng_;
    PointNetEncoder envnet_, objnet_;
    ModelConfig cfg_;
    int s_, env_points_, obj_points_;
};

// Geometry-grounded model: VectorNet predicts S unit vectors from the
// environment cloud, WeightNet predicts 2S point distributions whose weighted
// averages anchor a plane pair; the object side is a directional extent.
class GroundedModel final : public EigenLengthModel {
public:
    GroundedModel(const ModelConfig& cfg, int s, int env_points, int obj_points,
                  std::uint64_t seed)
        : rng_(seed),
          vectornet_(cfg.encoder, 3 * s, env_points, rng_),
          wn_stage1_({cfg.encoder.per_point[0], cfg.encoder.per_point[1]}, rng_),
          wn_stage2_(tail_widths(cfg.encoder.per_point), rng_),
          wn_pool_(env_points),
          wn_seg_(seg_widths(cfg), rng_),
          cfg_(cfg), s_(s), env_points_(env_points), obj_points_(obj_points) {
        const int seg_out = seg_widths(cfg).back();
        for (int h = 0; h < 2 * s; ++h) {
            std::vector<int> widths{seg_out};
            widths.insert(widths.end(), cfg.wn_head_hidden.begin(), cfg.wn_head_hidden.end());
            widths.push_back(1);
            wn_heads_.emplace_back(widths, rng_);
            wn_softmax_.emplace_back(env_points);
        }
    }

    EigenOutputs forward(const Matrix& env_x, const Matrix& obj_x, Mode mode) override {
        const int batch = env_x.rows / env_points_;
        cache_env_x_ = env_x;
        cache_obj_x_ = obj_x;
        cache_batch_ = batch;

        cache_vraw_ = vectornet_.forward(env_x, mode);
        grounding_.v = Matrix(batch, 3 * s_);
        cache_vraw_norm_ = Matrix(batch, s_);
        for (int b = 0; b < batch; ++b)
            for (int s = 0; s < s_; ++s) {
                const double x = cache_vraw_(b, 3 * s), y = cache_vraw_(b, 3 * s + 1),
                             z = cache_vraw_(b, 3 * s + 2);
                const double n = std::sqrt(x * x + y * y + z * z);
                if (n < 1e-8)
                    throw std::runtime_error(
                        "GroundedModel: predicted vector norm below 1e-8 (numerical "
                        "degeneracy)");
                cache_vraw_norm_(b, s) = n;
                grounding_.v(b, 3 * s) = x / n;
                grounding_.v(b, 3 * s + 1) = y / n;
                grounding_.v(b, 3 * s + 2) = z / n;
            }

        cache_p1_ = wn_stage1_.forward(env_x, mode);
        Matrix p3 = wn_stage2_.forward(cache_p1_, mode);  // copy: p1 is reused for the concat
        Matrix global = wn_pool_.forward(p3, mode);
        const int f1 = cache_p1_.cols, fg = global.cols;
        Matrix concat(env_x.rows, f1 + fg);
        for (int i = 0; i < env_x.rows; ++i) {
            const int b = i / env_points_;
            double* row = concat.row(i);
            const double* p1i = cache_p1_.row(i);
            const double* gb = global.row(b);
            for (int j = 0; j < f1; ++j) row[j] = p1i[j];
            for (int j = 0; j < fg; ++j) row[f1 + j] = gb[j];
        }
        cache_seg_ = wn_seg_.forward(std::move(concat), mode);

        cache_weights_.clear();
        for (std::size_t h = 0; h < wn_heads_.size(); ++h) {
            Matrix logits = wn_heads_[h].forward(cache_seg_, mode);
            cache_weights_.push_back(wn_softmax_[h].forward(logits, mode));
        }

        grounding_.p = Matrix(batch, 3 * s_);
        grounding_.q = Matrix(batch, 3 * s_);
        EigenOutputs out{Matrix(batch, s_), Matrix(batch, s_)};
        cache_argmax_.assign(static_cast<std::size_t>(batch) * s_, 0);
        cache_argmin_.assign(static_cast<std::size_t>(batch) * s_, 0);
        for (int b = 0; b < batch; ++b) {
            for (int s = 0; s < s_; ++s) {
                geom::Vec3 p{}, q{};
                const Matrix& wp = cache_weights_[static_cast<std::size_t>(2 * s)];
                const Matrix& wq = cache_weights_[static_cast<std::size_t>(2 * s + 1)];
                for (int i = 0; i < env_points_; ++i) {
                    const int r = b * env_points_ + i;
                    const geom::Vec3 e{env_x(r, 0), env_x(r, 1), env_x(r, 2)};
                    p += e * wp(r, 0);
                    q += e * wq(r, 0);
                }
                grounding_.p(b, 3 * s) = p.x;
                grounding_.p(b, 3 * s + 1) = p.y;
                grounding_.p(b, 3 * s + 2) = p.z;
                grounding_.q(b, 3 * s) = q.x;
                grounding_.q(b, 3 * s + 1) = q.y;
                grounding_.q(b, 3 * s + 2) = q.z;
                const geom::Vec3 v{grounding_.v(b, 3 * s), grounding_.v(b, 3 * s + 1),
                                   grounding_.v(b, 3 * s + 2)};
                out.l_env(b, s) = geom::dot(v, q - p);

                // object measurement: projection extent along v with witnesses
                std::vector<geom::Vec3> obj_pts;
                obj_pts.reserve(static_cast<std::size_t>(obj_points_));
                for (int i = 0; i < obj_points_; ++i) {
                    const int r = b * obj_points_ + i;
                    obj_pts.push_back({obj_x(r, 0), obj_x(r, 1), obj_x(r, 2)});
                }
                const auto witness =
                    geom::directional_extent_witness(geom::PointCloud(std::move(obj_pts)), v);
                out.l_obj(b, s) = witness.extent;
                cache_argmax_[static_cast<std::size_t>(b) * s_ + s] =
                    static_cast<int>(witness.argmax);
                cache_argmin_[static_cast<std::size_t>(b) * s_ + s] =
                    static_cast<int>(witness.argmin);
            }
        }
        cache_l_env_ = out.l_env;
        return out;
    }

    void backward(const Matrix& d_l_env, const Matrix& d_l_obj) override {
        const int batch = cache_batch_;
        Matrix d_vraw(batch, 3 * s_);
        std::vector<Matrix> d_weights;
        for (std::size_t h = 0; h < wn_heads_.size(); ++h)
            d_weights.emplace_back(cache_env_x_.rows, 1);

        for (int b = 0; b < batch; ++b)
            for (int s = 0; s < s_; ++s) {
                const geom::Vec3 v{grounding_.v(b, 3 * s), grounding_.v(b, 3 * s + 1),
                                   grounding_.v(b, 3 * s + 2)};
                const geom::Vec3 p{grounding_.p(b, 3 * s), grounding_.p(b, 3 * s + 1),
                                   grounding_.p(b, 3 * s + 2)};
                const geom::Vec3 q{grounding_.q(b, 3 * s), grounding_.q(b, 3 * s + 1),
                                   grounding_.q(b, 3 * s + 2)};

                // dv accumulates from both measurements
                geom::Vec3 dv = (q - p) * d_l_env(b, s);
                const int imax = cache_argmax_[static_cast<std::size_t>(b) * s_ + s];
                const int imin = cache_argmin_[static_cast<std::size_t>(b) * s_ + s];
                const int rmax = b * obj_points_ + imax;
                const int rmin = b * obj_points_ + imin;
                const geom::Vec3 omax{cache_obj_x_(rmax, 0), cache_obj_x_(rmax, 1),
                                      cache_obj_x_(rmax, 2)};
                const geom::Vec3 omin{cache_obj_x_(rmin, 0), cache_obj_x_(rmin, 1),
                                      cache_obj_x_(rmin, 2)};
                dv += (omax - omin) * d_l_obj(b, s);

                // through the normalization: d_raw = (dv - v (v . dv)) / |raw|
                const double inv_n = 1.0 / cache_vraw_norm_(b, s);
                const geom::Vec3 draw = (dv - v * geom::dot(v, dv)) * inv_n;
                d_vraw(b, 3 * s) = draw.x;
                d_vraw(b, 3 * s + 1) = draw.y;
                d_vraw(b, 3 * s + 2) = draw.z;

                // anchors: dL_env/dp = -v, dL_env/dq = +v
                const geom::Vec3 dp = v * -d_l_env(b, s);
                const geom::Vec3 dq = v * d_l_env(b, s);
                Matrix& dwp = d_weights[static_cast<std::size_t>(2 * s)];
                Matrix& dwq = d_weights[static_cast<std::size_t>(2 * s + 1)];
                for (int i = 0; i < env_points_; ++i) {
                    const int r = b * env_points_ + i;
                    const geom::Vec3 e{cache_env_x_(r, 0), cache_env_x_(r, 1),
                                      cache_env_x_(r, 2)};
                    dwp(r, 0) = geom::dot(dp, e);
                    dwq(r, 0) = geom::dot(dq, e);
                }
            }

        vectornet_.backward(d_vraw);

        Matrix d_seg(cache_seg_.rows, cache_seg_.cols);
        for (std::size_t h = 0; h < wn_heads_.size(); ++h) {
            Matrix d_logits = wn_softmax_[h].backward(d_weights[h]);
            Matrix d_seg_h = wn_heads_[h].backward(std::move(d_logits));
            for (std::size_t i = 0; i < d_seg.size(); ++i) d_seg.d[i] += d_seg_h.d[i];
        }
        Matrix d_concat = wn_seg_.backward(std::move(d_seg));

        const int f1 = cache_p1_.cols;
        const int fg = d_concat.cols - f1;
        Matrix d_p1(cache_p1_.rows, f1);
        Matrix d_global(batch, fg);
        for (int i = 0; i < d_concat.rows; ++i) {
            const int b = i / env_points_;
            const double* row = d_concat.row(i);
            double* dp1 = d_p1.row(i);
            double* dg = d_global.row(b);
            for (int j = 0; j < f1; ++j) dp1[j] = row[j];
            for (int j = 0; j < fg; ++j) dg[j] += row[f1 + j];
        }
        Matrix d_p3 = wn_pool_.backward(d_global);
        Matrix d_p1_pool = wn_stage2_.backward(std::move(d_p3));
        for (std::size_t i = 0; i < d_p1.size(); ++i) d_p1.d[i] += d_p1_pool.d[i];
        wn_stage1_.backward(std::move(d_p1));
    }

    std::vector<Param*> params() override {
        std::vector<std::pair<std::string, Param*>> named_params;
        std::vector<std::pair<std::string, Matrix*>> buffers;
        named(named_params, buffers);
        std::vector<Param*> out;
        for (auto& [name, p] : named_params) out.push_back(p);
        return out;
    }
    void named(std::vector<std::pair<std::string, Param*>>& params,
               std::vector<std::pair<std::string, Matrix*>>& buffers) override {
        vectornet_.named(params, buffers, "vectornet");
        wn_stage1_.named(params, buffers, "weightnet.stage1");
        wn_stage2_.named(params, buffers, "weightnet.stage2");
        wn_seg_.named(params, buffers, "weightnet.seg");
        for (std::size_t h = 0; h < wn_heads_.size(); ++h)
            named_mlp(wn_heads_[h], params, buffers, "weightnet.head" + std::to_string(h));
        params.emplace_back("log_tau", &log_tau_);
    }
    json architecture() const override {
        return {{"family", "grounded"},
                {"arity", s_},
                {"env_points", env_points_},
                {"obj_points", obj_points_},
                {"per_point", cfg_.encoder.per_point},
                {"head_hidden", cfg_.encoder.head_hidden},
                {"wn_seg_hidden", cfg_.wn_seg_hidden},
                {"wn_head_hidden", cfg_.wn_head_hidden}};
    }
    int arity() const override { return s_; }
    bool has_grounding() const override { return true; }
    const GroundingBatch& last_grounding() const override { return grounding_; }

    // VectorNet alone: normalized grounding vectors for a batch of environment
    // clouds, without anchors or object measurements.
    Matrix predict_vectors(const Matrix& env_x, Mode mode) {
        const int batch = env_x.rows / env_points_;
        Matrix raw = vectornet_.forward(env_x, mode);
        Matrix v(batch, 3 * s_);
        for (int b = 0; b < batch; ++b)
            for (int s = 0; s < s_; ++s) {
                const double x = raw(b, 3 * s), y = raw(b, 3 * s + 1), z = raw(b, 3 * s + 2);
                const double n = std::sqrt(x * x + y * y + z * z);
                if (n < 1e-8)
                    throw std::runtime_error(
                        "GroundedModel: predicted vector norm below 1e-8 (numerical "
                        "degeneracy)");
                v(b, 3 * s) = x / n;
                v(b, 3 * s + 1) = y / n;
                v(b, 3 * s + 2) = z / n;
            }
        return v;
    }

private:
    static std::vector<int> tail_widths(const std::vector<int>& per_point) {
        return {per_point.begin() + 1, per_point.end()};
    }
    static std::vector<int> seg_widths(const ModelConfig& cfg) {
        std::vector<int> widths{cfg.encoder.per_point[1] + cfg.encoder.per_point.back()};
        widths.insert(widths.end(), cfg.wn_seg_hidden.begin(), cfg.wn_seg_hidden.end());
        return widths;
    }

    Rng rng_;
    PointNetEncoder vectornet_;
    PerPointStack wn_stage1_, wn_stage2_;
    ndiff::MaxPoolOverPoints wn_pool_;
    PerPointStack wn_seg_;
    std::vector<ndiff::Mlp> wn_heads_;
    std::vector<ndiff::SoftmaxOverPoints> wn_softmax_;
    ModelConfig cfg_;
    int s_, env_points_, obj_points_;

    Matrix cache_env_x_, cache_obj_x_, cache_vraw_, cache_vraw_norm_, cache_p1_, cache_seg_;
    Matrix cache_l_env_;
    std::vector<Matrix> cache_weights_;
    std::vector<int> cache_argmax_, cache_argmin_;
    GroundingBatch grounding_;
    int cache_batch_ = 0;
};

// Baseline with no eigen-length bottleneck: latent codes feed an MLP that
// predicts the label logit directly.
class DirectModel {
public:
    DirectModel(const ModelConfig& cfg, int env_points, int obj_points, std::uint64_t seed)
        : rng_(seed),
          envnet_(cfg.encoder, cfg.direct_latent, env_points, rng_),
          objnet_(cfg.encoder, cfg.direct_latent, obj_points, rng_),
          cfg_(cfg), env_points_(env_points), obj_points_(obj_points) {
        std::vector<int> widths{2 * cfg.direct_latent};
        widths.insert(widths.end(), cfg.direct_head_hidden.begin(),
                      cfg.direct_head_hidden.end());
        widths.push_back(1);
        head_ = ndiff::Mlp(widths, rng_);
    }

    // returns logits (B x 1)
    Matrix forward(const Matrix& env_x, const Matrix& obj_x, Mode mode) {
        Matrix le = envnet_.forward(env_x, mode);
        Matrix lo = objnet_.forward(obj_x, mode);
        latent_cols_ = le.cols;
        Matrix cat(le.rows, le.cols + lo.cols);
        for (int i = 0; i < le.rows; ++i) {
            double* row = cat.row(i);
            for (int j = 0; j < le.cols; ++j) row[j] = le(i, j);
            for (int j = 0; j < lo.cols; ++j) row[le.cols + j] = lo(i, j);
        }
        return head_.forward(std::move(cat), mode);
    }

    void backward(const Matrix& d_logits) {
        Matrix d_cat = head_.backward(d_logits);
        Matrix d_env(d_cat.rows, latent_cols_), d_obj(d_cat.rows, d_cat.cols - latent_cols_);
        for (int i = 0; i < d_cat.rows; ++i) {
            const double* row = d_cat.row(i);
            for (int j = 0; j < latent_cols_; ++j) d_env(i, j) = row[j];
            for (int j = 0; j < d_obj.cols; ++j) d_obj(i, j) = row[latent_cols_ + j];
        }
        envnet_.backward(d_env);
        objnet_.backward(d_obj);
    }

    std::vector<Param*> params() {
        std::vector<std::pair<std::string, Param*>> named_params;
        std::vector<std::pair<std::string, Matrix*>> buffers;
        named(named_params, buffers);
        std::vector<Param*> out;
        for (auto& [name, p] : named_params) out.push_back(p);
        return out;
    }
    void named(std::vector<std::pair<std::string, Param*>>& params,
               std::vector<std::pair<std::string, Matrix*>>& buffers) {
        envnet_.named(params, buffers, "envnet");
        objnet_.named(params, buffers, "objnet");
        named_mlp(head_, params, buffers, "head");
    }
    json architecture() const {
        return {{"family", "direct"},
                {"env_points", env_points_},
                {"obj_points", obj_points_},
                {"per_point", cfg_.encoder.per_point},
                {"head_hidden", cfg_.encoder.head_hidden},
                {"direct_latent", cfg_.direct_latent},
                {"direct_head_hidden", cfg_.direct_head_hidden}};
    }

private:
    Rng rng_;
    PointNetEncoder envnet_, objnet_;
    ndiff::Mlp head_;
    ModelConfig cfg_;
    int env_points_, obj_points_;
    int latent_cols_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

constexpr int kCheckpointVersion = 1;

inline json matrix_to_json(const Matrix& m) {
    json j;
    j["shape"] = {m.rows, m.cols};
    j["data"] = std::vector<double>(m.d.begin(), m.d.end());
    return j;
}
inline Matrix matrix_from_json(const json& j) {
    Matrix m(j.at("shape").at(0), j.at("shape").at(1));
    const auto& data = j.at("data");
    if (data.size() != m.size()) throw std::runtime_error("checkpoint: tensor size mismatch");
    for (std::size_t i = 0; i < m.size(); ++i) m.d[i] = data[i];
    return m;
}

template <typename ModelT>
json checkpoint_to_json(ModelT& model) {
    std::vector<std::pair<std::string, Param*>> params;
    std::vector<std::pair<std::string, Matrix*>> buffers;
    model.named(params, buffers);
    json j;
    j["format_version"] = kCheckpointVersion;
    j["architecture"] = model.architecture();
    json jp = json::object(), jb = json::object();
    for (auto& [name, p] : params) jp[name] = matrix_to_json(p->value);
    for (auto& [name, b] : buffers) jb[name] = matrix_to_json(*b);
    j["params"] = jp;
    j["buffers"] = jb;
    return j;
}

template <typename ModelT>
void checkpoint_load_state(ModelT& model, const json& j) {
    if (j.at("format_version") != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported format_version");
    std::vector<std::pair<std::string, Param*>> params;
    std::vector<std::pair<std::string, Matrix*>> buffers;
    model.named(params, buffers);
    const json& jp = j.at("params");
    const json& jb = j.at("buffers");
    for (auto& [name, p] : params) {
        if (!jp.contains(name)) throw std::runtime_error("checkpoint: missing param " + name);
        Matrix m = matrix_from_json(jp.at(name));
        if (m.rows != p->value.rows || m.cols != p->value.cols)
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        p->value = std::move(m);
    }
    for (auto& [name, b] : buffers) {
        if (!jb.contains(name)) throw std::runtime_error("checkpoint: missing buffer " + name);
        Matrix m = matrix_from_json(jb.at(name));
        if (m.rows != b->rows || m.cols != b->cols)
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        *b = std::move(m);
    }
}

}  // namespace eigenlen::models
