#include <gtest/gtest.h>

#include <cmath>

#include "eigenlen/batch.hpp"
#include "eigenlen/models.hpp"
#include "eigenlen/train.hpp"

using namespace eigenlen;
using models::CompositionSpec;
using ndiff::Matrix;
using ndiff::Mode;

namespace {

models::ModelConfig tiny_config() {
    models::ModelConfig cfg;
    cfg.encoder.per_point = {3, 8, 16};
    cfg.encoder.head_hidden = {8};
    cfg.wn_seg_hidden = {12, 8};
    cfg.wn_head_hidden = {8};
    cfg.direct_latent = 8;
    cfg.direct_head_hidden = {8};
    return cfg;
}

Matrix random_cloud_batch(int batch, int points, Rng& rng) {
    Matrix m(batch * points, 3);
    for (auto& v : m.d) v = rng.uniform(-1.5, 1.5);
    return m;
}

// reference DNF evaluation over boolean comparison outcomes
bool reference_dnf(const std::vector<bool>& comp, const std::vector<std::vector<int>>& groups) {
    for (const auto& g : groups) {
        bool all = true;
        for (int idx : g) all = all && comp[static_cast<std::size_t>(idx)];
        if (all) return true;
    }
    return false;
}

}  // namespace

TEST(ComposeSoft, AndIdentities) {
    const double l_env[2] = {1.0, 2.0};
    const double l_obj[2] = {1.0, 2.0};  // zero margins
    const auto res = models::compose_soft(l_env, l_obj, 1.0, CompositionSpec::both_and(2));
    EXPECT_NEAR(res.soft, 0.25, 1e-12);

    const double big_env[2] = {20.0, 30.0};
    const double small_obj[2] = {0.0, 0.0};  // +10 tau margins and beyond
    const auto sat = models::compose_soft(big_env, small_obj, 1.0, CompositionSpec::both_and(2));
    EXPECT_GT(sat.soft, 0.999);
}

TEST(ComposeSoft, DnfExample) {
    // sigma = (0.9, 0.5) -> 1 - 0.1 * 0.5 = 0.95
    const double l_env[2] = {std::log(9.0), 0.0};
    const double l_obj[2] = {0.0, 0.0};
    const auto res = models::compose_soft(l_env, l_obj, 1.0,
                                          CompositionSpec::dnf(2, {{0}, {1}}));
    EXPECT_NEAR(res.sigma[0], 0.9, 1e-12);
    EXPECT_NEAR(res.sigma[1], 0.5, 1e-12);
    EXPECT_NEAR(res.soft, 0.95, 1e-12);
}

TEST(ComposeSoft, MaskedZeroContributesIdentity) {
    const double l_env[2] = {-5.0, 5.0};
    const double l_obj[2] = {0.0, 0.0};
    const double mask[2] = {0.0, 1.0};
    const auto res =
        models::compose_soft(l_env, l_obj, 1.0, CompositionSpec::masked_and(2), mask);
    const double sigma1 = ndiff::stable_sigmoid(5.0);
    EXPECT_NEAR(res.soft, sigma1, 1e-12);  // masked slot contributes exactly 1
}

TEST(ComposeSoft, ProductBounds) {
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        double l_env[4], l_obj[4];
        for (int s = 0; s < 4; ++s) {
            l_env[s] = rng.uniform(-2, 2);
            l_obj[s] = rng.uniform(-2, 2);
        }
        const auto and_res = models::compose_soft(l_env, l_obj, 0.7, CompositionSpec::both_and(4));
        double min_sigma = 1.0;
        for (double s : and_res.sigma) min_sigma = std::min(min_sigma, s);
        EXPECT_LE(and_res.soft, min_sigma + 1e-12);

        const auto spec = CompositionSpec::dnf(4, {{0, 1}, {2, 3}});
        const auto dnf_res = models::compose_soft(l_env, l_obj, 0.7, spec);
        const double g0 = dnf_res.sigma[0] * dnf_res.sigma[1];
        const double g1 = dnf_res.sigma[2] * dnf_res.sigma[3];
        EXPECT_GE(dnf_res.soft, std::max(g0, g1) - 1e-12);
    }
}

TEST(ComposeHard, StrictInequalities) {
    const double l_env[3] = {1.0, 2.0, 3.0};
    const double l_obj_ok[3] = {0.5, 1.5, 2.5};
    EXPECT_TRUE(models::compose_hard(l_env, l_obj_ok, CompositionSpec::both_and(3)));
    const double l_obj_tie[3] = {0.5, 2.0, 2.5};  // one exact tie fails
    EXPECT_FALSE(models::compose_hard(l_env, l_obj_tie, CompositionSpec::both_and(3)));
}

TEST(ComposeHard, DnfMatchesTruthTable) {
    Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        const int s_count = 1 + static_cast<int>(rng.below(6));
        // random disjoint groups over a subset of slots
        std::vector<std::vector<int>> groups;
        std::vector<int> slots;
        for (int s = 0; s < s_count; ++s) slots.push_back(s);
        rng.shuffle(slots);
        std::size_t used = 0;
        while (used < slots.size()) {
            const std::size_t take =
                std::min(slots.size() - used, 1 + rng.below(3));
            groups.emplace_back(slots.begin() + static_cast<std::ptrdiff_t>(used),
                                slots.begin() + static_cast<std::ptrdiff_t>(used + take));
            used += take;
        }
        const auto spec = CompositionSpec::dnf(s_count, groups);
        for (int bits = 0; bits < (1 << s_count); ++bits) {
            std::vector<double> l_env(static_cast<std::size_t>(s_count));
            std::vector<double> l_obj(static_cast<std::size_t>(s_count), 0.0);
            std::vector<bool> comp(static_cast<std::size_t>(s_count));
            for (int s = 0; s < s_count; ++s) {
                const bool on = (bits >> s) & 1;
                comp[static_cast<std::size_t>(s)] = on;
                l_env[static_cast<std::size_t>(s)] = on ? 1.0 : -1.0;
            }
            EXPECT_EQ(models::compose_hard(l_env.data(), l_obj.data(), spec),
                      reference_dnf(comp, groups));
        }
    }
}

TEST(ComposeSoft, ApproachesHardAsTauShrinks) {
    Rng rng(5);
    const auto spec = CompositionSpec::dnf(4, {{0, 1}, {2, 3}});
    int disagree_1 = 0, disagree_001 = 0;
    const int trials = 1000;
    for (int rep = 0; rep < trials; ++rep) {
        double l_env[4], l_obj[4];
        for (int s = 0; s < 4; ++s) {
            l_obj[s] = rng.uniform(-1, 1);
            double margin = rng.uniform(-1.0, 1.0);
            if (std::abs(margin) < 0.05) margin = margin < 0 ? -0.05 : 0.05;  // non-tied
            l_env[s] = l_obj[s] + margin;
        }
        const bool hard = models::compose_hard(l_env, l_obj, spec);
        if ((models::compose_soft(l_env, l_obj, 1.0, spec).soft > 0.5) != hard) ++disagree_1;
        if ((models::compose_soft(l_env, l_obj, 0.01, spec).soft > 0.5) != hard) ++disagree_001;
    }
    EXPECT_LE(disagree_001, disagree_1);
    EXPECT_EQ(disagree_001, 0);
}

TEST(ComposeBackward, MatchesFiniteDifferences) {
    Rng rng(6);
    const double h = 1e-6;
    for (const auto& spec :
         {CompositionSpec::both_and(3), CompositionSpec::masked_and(3),
          CompositionSpec::dnf(3, {{0, 1}, {2}})}) {
        for (int rep = 0; rep < 10; ++rep) {
            std::vector<double> l_env(3), l_obj(3), logits(3), mask(3);
            for (int s = 0; s < 3; ++s) {
                l_env[static_cast<std::size_t>(s)] = rng.uniform(-1, 1);
                l_obj[static_cast<std::size_t>(s)] = rng.uniform(-1, 1);
                logits[static_cast<std::size_t>(s)] = rng.uniform(-1, 1);
                mask[static_cast<std::size_t>(s)] =
                    ndiff::stable_sigmoid(logits[static_cast<std::size_t>(s)]);
            }
            const double log_tau = rng.uniform(-0.5, 0.5);
            const double tau = std::exp(log_tau);
            const bool masked = spec.kind == CompositionSpec::Kind::MaskedAnd;
            const double* mask_ptr = masked ? mask.data() : nullptr;

            const auto res = models::compose_soft(l_env.data(), l_obj.data(), tau, spec, mask_ptr);
            const auto grads = models::compose_backward(res, 1.0, l_env.data(), l_obj.data(),
                                                        tau, spec, mask_ptr, logits.data());
            auto soft_at = [&](double lt, const std::vector<double>& le,
                               const std::vector<double>& lo, const std::vector<double>& lg) {
                std::vector<double> m(3);
                for (int s = 0; s < 3; ++s)
                    m[static_cast<std::size_t>(s)] =
                        ndiff::stable_sigmoid(lg[static_cast<std::size_t>(s)]);
                return models::compose_soft(le.data(), lo.data(), std::exp(lt), spec,
                                            masked ? m.data() : nullptr)
                    .soft;
            };
            for (int s = 0; s < 3; ++s) {
                auto le = l_env;
                le[static_cast<std::size_t>(s)] += h;
                auto le_m = l_env;
                le_m[static_cast<std::size_t>(s)] -= h;
                const double num =
                    (soft_at(log_tau, le, l_obj, logits) - soft_at(log_tau, le_m, l_obj, logits)) /
                    (2 * h);
                EXPECT_NEAR(grads.d_l_env[static_cast<std::size_t>(s)], num, 1e-6);
            }
            const double num_tau = (soft_at(log_tau + h, l_env, l_obj, logits) -
                                    soft_at(log_tau - h, l_env, l_obj, logits)) /
                                   (2 * h);
            EXPECT_NEAR(grads.d_log_tau, num_tau, 1e-6);
            if (masked) {
                for (int s = 0; s < 3; ++s) {
                    auto lg = logits;
                    lg[static_cast<std::size_t>(s)] += h;
                    auto lg_m = logits;
                    lg_m[static_cast<std::size_t>(s)] -= h;
                    const double num = (soft_at(log_tau, l_env, l_obj, lg) -
                                        soft_at(log_tau, l_env, l_obj, lg_m)) /
                                       (2 * h);
                    EXPECT_NEAR(grads.d_mask_logits[static_cast<std::size_t>(s)], num, 1e-6);
                }
            }
        }
    }
}

TEST(ImplicitModel, SoftRecomputesFromExposedValues) {
    Rng rng(7);
    models::ImplicitModel model(tiny_config(), 2, 6, 5, 99);
    const Matrix env = random_cloud_batch(3, 6, rng);
    const Matrix obj = random_cloud_batch(3, 5, rng);
    const auto out = model.forward(env, obj, Mode::Eval);
    const auto spec = CompositionSpec::both_and(2);
    for (int b = 0; b < 3; ++b) {
        const auto res = models::compose_soft(out.l_env.row(b), out.l_obj.row(b), model.tau(), spec);
        double prod = 1.0;
        for (int s = 0; s < 2; ++s)
            prod *= ndiff::stable_sigmoid((out.l_env(b, s) - out.l_obj(b, s)) / model.tau());
        EXPECT_NEAR(res.soft, prod, 1e-12);
        EXPECT_GT(res.soft, 0.0);
        EXPECT_LT(res.soft, 1.0);
    }
}

TEST(Models, PointPermutationInvarianceInEval) {
    Rng rng(8);
    const int points = 8;
    models::ImplicitModel model(tiny_config(), 2, points, points, 123);
    Matrix env = random_cloud_batch(2, points, rng);
    Matrix obj = random_cloud_batch(2, points, rng);
    const auto base = model.forward(env, obj, Mode::Eval);

    // permute rows within each cloud
    Matrix env_perm = env, obj_perm = obj;
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < points; ++i)
            for (int c = 0; c < 3; ++c) {
                env_perm(b * points + i, c) = env(b * points + (points - 1 - i), c);
                obj_perm(b * points + i, c) = obj(b * points + ((i + 3) % points), c);
            }
    const auto permuted = model.forward(env_perm, obj_perm, Mode::Eval);
    for (std::size_t i = 0; i < base.l_env.size(); ++i) {
        EXPECT_NEAR(base.l_env.d[i], permuted.l_env.d[i], 1e-9);
        EXPECT_NEAR(base.l_obj.d[i], permuted.l_obj.d[i], 1e-9);
    }
}

TEST(GroundedModel, AnchorsInsideHullAndSharedMeasurement) {
    Rng rng(9);
    const int env_points = 8, obj_points = 7, s_count = 2;
    models::GroundedModel model(tiny_config(), s_count, env_points, obj_points, 321);
    const Matrix env = random_cloud_batch(3, env_points, rng);
    const Matrix obj = random_cloud_batch(3, obj_points, rng);
    const auto out = model.forward(env, obj, Mode::Eval);
    const auto& g = model.last_grounding();

    for (int b = 0; b < 3; ++b) {
        // env AABB per cloud
        geom::Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
        for (int i = 0; i < env_points; ++i) {
            const int r = b * env_points + i;
            lo = {std::min(lo.x, env(r, 0)), std::min(lo.y, env(r, 1)),
                  std::min(lo.z, env(r, 2))};
            hi = {std::max(hi.x, env(r, 0)), std::max(hi.y, env(r, 1)),
                  std::max(hi.z, env(r, 2))};
        }
        for (int s = 0; s < s_count; ++s) {
            const geom::Vec3 v{g.v(b, 3 * s), g.v(b, 3 * s + 1), g.v(b, 3 * s + 2)};
            EXPECT_NEAR(geom::norm(v), 1.0, 1e-9);
            for (const auto& anchor :
                 {geom::Vec3{g.p(b, 3 * s), g.p(b, 3 * s + 1), g.p(b, 3 * s + 2)},
                  geom::Vec3{g.q(b, 3 * s), g.q(b, 3 * s + 1), g.q(b, 3 * s + 2)}}) {
                EXPECT_GE(anchor.x, lo.x - 1e-9);
                EXPECT_LE(anchor.x, hi.x + 1e-9);
                EXPECT_GE(anchor.y, lo.y - 1e-9);
                EXPECT_LE(anchor.y, hi.y + 1e-9);
                EXPECT_GE(anchor.z, lo.z - 1e-9);
                EXPECT_LE(anchor.z, hi.z + 1e-9);
            }
            // object measurement equals the geometric extent along v
            std::vector<geom::Vec3> pts;
            for (int i = 0; i < obj_points; ++i) {
                const int r = b * obj_points + i;
                pts.push_back({obj(r, 0), obj(r, 1), obj(r, 2)});
            }
            EXPECT_NEAR(out.l_obj(b, s),
                        geom::directional_extent(geom::PointCloud(pts), v), 1e-9);
            // and L_env is exactly v . (q - p)
            const geom::Vec3 p{g.p(b, 3 * s), g.p(b, 3 * s + 1), g.p(b, 3 * s + 2)};
            const geom::Vec3 q{g.q(b, 3 * s), g.q(b, 3 * s + 1), g.q(b, 3 * s + 2)};
            EXPECT_NEAR(out.l_env(b, s), geom::dot(v, q - p), 1e-12);
        }
    }
}

TEST(FullModels, GradientCheckAgainstFiniteDifferences) {
    Rng rng(10);
    const int batch = 4, env_points = 5, obj_points = 4;
    std::vector<int> labels = {1, 0, 1, 0};
    const Matrix env = random_cloud_batch(batch, env_points, rng);
    const Matrix obj = random_cloud_batch(batch, obj_points, rng);
    batch::Stacked data{env, obj, labels};

    {
        models::ImplicitModel model(tiny_config(), 2, env_points, obj_points, 42);
        const auto spec = CompositionSpec::both_and(2);
        auto loss = [&] {
            return train::eigen_batch_loss(model, data, spec, nullptr, Mode::Train, false);
        };
        auto grad = [&] {
            train::eigen_batch_loss(model, data, spec, nullptr, Mode::Train, true);
        };
        EXPECT_LT(ndiff::grad_check(loss, grad, model.params()), 1e-4);
    }
    {
        models::GroundedModel model(tiny_config(), 2, env_points, obj_points, 43);
        const auto spec = CompositionSpec::both_and(2);
        auto loss = [&] {
            return train::eigen_batch_loss(model, data, spec, nullptr, Mode::Train, false);
        };
        auto grad = [&] {
            train::eigen_batch_loss(model, data, spec, nullptr, Mode::Train, true);
        };
        EXPECT_LT(ndiff::grad_check(loss, grad, model.params()), 1e-4);
    }
    {
        models::DirectModel model(tiny_config(), env_points, obj_points, 44);
        auto loss = [&] { return train::direct_batch_loss(model, data, Mode::Train, false); };
        auto grad = [&] { train::direct_batch_loss(model, data, Mode::Train, true); };
        EXPECT_LT(ndiff::grad_check(loss, grad, model.params()), 1e-4);
    }
    {
        // masked composition: mask logits get gradients too
        models::ImplicitModel model(tiny_config(), 3, env_points, obj_points, 45);
        const auto spec = CompositionSpec::masked_and(3);
        ndiff::Param mask(1, 3);
        mask.value.d = {0.3, -0.2, 0.1};
        auto loss = [&] {
            return train::eigen_batch_loss(model, data, spec, &mask, Mode::Train, false);
        };
        auto grad = [&] {
            train::eigen_batch_loss(model, data, spec, &mask, Mode::Train, true);
        };
        std::vector<ndiff::Param*> params = model.params();
        params.push_back(&mask);
        EXPECT_LT(ndiff::grad_check(loss, grad, params), 1e-4);
    }
}

TEST(Checkpoint, RoundTripsModelState) {
    Rng rng(11);
    const int env_points = 6, obj_points = 5;
    models::GroundedModel model(tiny_config(), 2, env_points, obj_points, 77);
    const Matrix env = random_cloud_batch(2, env_points, rng);
    const Matrix obj = random_cloud_batch(2, obj_points, rng);
    // a few train steps so running stats and params move off init
    std::vector<int> labels = {1, 0};
    batch::Stacked data{env, obj, labels};
    const auto spec = CompositionSpec::both_and(2);
    for (int step = 0; step < 3; ++step) {
        train::eigen_batch_loss(model, data, spec, nullptr, Mode::Train, true);
        ndiff::adam_step(model.params(), 1e-3);
    }
    const auto before = model.forward(env, obj, Mode::Eval);
    const nlohmann::json ckpt = models::checkpoint_to_json(model);

    models::GroundedModel fresh(tiny_config(), 2, env_points, obj_points, 12345);
    models::checkpoint_load_state(fresh, ckpt);
    const auto after = fresh.forward(env, obj, Mode::Eval);
    for (std::size_t i = 0; i < before.l_env.size(); ++i) {
        EXPECT_DOUBLE_EQ(before.l_env.d[i], after.l_env.d[i]);
        EXPECT_DOUBLE_EQ(before.l_obj.d[i], after.l_obj.d[i]);
    }
}

TEST(ComposeConsistency, SoftAboveHalfImpliesHardTrue) {
    Rng rng(20);
    const auto spec = CompositionSpec::both_and(3);
    for (int rep = 0; rep < 500; ++rep) {
        double l_env[3], l_obj[3];
        for (int s = 0; s < 3; ++s) {
            l_env[s] = rng.uniform(-1, 1);
            l_obj[s] = rng.uniform(-1, 1);
        }
        const double tau = std::exp(rng.uniform(-1, 1));
        if (models::compose_soft(l_env, l_obj, tau, spec).soft > 0.5)
            EXPECT_TRUE(models::compose_hard(l_env, l_obj, spec));
    }
}

TEST(ComposeHard, InvariantUnderMonotoneSlotMaps) {
    Rng rng(21);
    const auto spec = CompositionSpec::both_and(3);
    for (int rep = 0; rep < 200; ++rep) {
        double l_env[3], l_obj[3], m_env[3], m_obj[3];
        for (int s = 0; s < 3; ++s) {
            l_env[s] = rng.uniform(-2, 2);
            l_obj[s] = rng.uniform(-2, 2);
            // strictly increasing map applied jointly to one slot's pair
            const double scale = rng.uniform(0.1, 3.0);
            const double shift = rng.uniform(-1, 1);
            m_env[s] = (rep % 2 == 0) ? scale * l_env[s] + shift : std::exp(l_env[s]);
            m_obj[s] = (rep % 2 == 0) ? scale * l_obj[s] + shift : std::exp(l_obj[s]);
        }
        EXPECT_EQ(models::compose_hard(l_env, l_obj, spec),
                  models::compose_hard(m_env, m_obj, spec));
    }
}

TEST(Models, EvalOutputIsBatchOrderInvariantPerSample) {
    Rng rng(12);
    const int points = 6;
    models::ImplicitModel model(tiny_config(), 2, points, points, 55);
    const Matrix env3 = random_cloud_batch(3, points, rng);
    const Matrix obj3 = random_cloud_batch(3, points, rng);
    const auto batched = model.forward(env3, obj3, Mode::Eval);

    // run the middle sample alone; eval mode must reproduce it exactly
    Matrix env1(points, 3), obj1(points, 3);
    for (int i = 0; i < points; ++i)
        for (int c = 0; c < 3; ++c) {
            env1(i, c) = env3(points + i, c);
            obj1(i, c) = obj3(points + i, c);
        }
    const auto solo = model.forward(env1, obj1, Mode::Eval);
    for (int s = 0; s < 2; ++s) {
        EXPECT_DOUBLE_EQ(solo.l_env(0, s), batched.l_env(1, s));
        EXPECT_DOUBLE_EQ(solo.l_obj(0, s), batched.l_obj(1, s));
    }
}
