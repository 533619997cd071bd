#include <gtest/gtest.h>

#include <cmath>

#include "riskstrat/model_io.hpp"
#include "test_util.hpp"

using namespace riskstrat;
using riskstrat::testing::dense;
using riskstrat::testing::planted;

namespace {

GbdtParams one_stump(double alpha, double lambda, double gamma) {
    GbdtParams p;
    p.n_estimators = 1;
    p.learning_rate = 1.0;
    p.max_depth = 1;
    p.alpha = alpha;
    p.lambda = lambda;
    p.gamma = gamma;
    return p;
}

double oracle_weight(double G, double H, double alpha, double lambda) {
    if (std::abs(G) <= alpha) return 0.0;
    return -(G - std::copysign(alpha, G)) / (H + lambda);
}

}  // namespace

TEST(Gbdt, StumpMatchesExhaustiveSearch) {
    // Two features, no missing values. Oracle: every midpoint of every
    // feature, gain from the regularized second-order objective.
    const std::size_t n = 24;
    Rng rng(1);
    std::vector<double> v(n * 2);
    std::vector<int> y(n);
    for (std::size_t r = 0; r < n; ++r) {
        v[r * 2] = std::round(rng.uniform(0.0, 10.0));
        v[r * 2 + 1] = rng.normal();
        y[r] = (v[r * 2] > 5.0) != (rng.uniform() < 0.2) ? 1 : 0;
    }
    const auto X = dense(n, 2, v);
    const double alpha = 0.3, lambda = 1.0, gamma = 0.0;
    const auto m = fit_gbdt(X, y, one_stump(alpha, lambda, gamma));

    double ybar = 0.0;
    for (int t : y) ybar += t;
    ybar /= n;
    const double g1 = ybar - 1.0, g0 = ybar, h = ybar * (1.0 - ybar);
    auto score = [&](double G, double H) { return G * G / (H + lambda); };
    double best_gain = 0.0, best_thr = 0.0;
    std::size_t best_f = 0;
    for (std::size_t f = 0; f < 2; ++f) {
        std::vector<double> vals;
        for (std::size_t r = 0; r < n; ++r) vals.push_back(v[r * 2 + f]);
        std::sort(vals.begin(), vals.end());
        vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
        for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
            const double thr = 0.5 * (vals[k] + vals[k + 1]);
            double GL = 0, HL = 0, GR = 0, HR = 0;
            for (std::size_t r = 0; r < n; ++r) {
                const double g = y[r] ? g1 : g0;
                if (v[r * 2 + f] <= thr) GL += g, HL += h;
                else GR += g, HR += h;
            }
            const double gain = 0.5 * (score(GL, HL) + score(GR, HR) - score(GL + GR, HL + HR)) - gamma;
            if (gain > best_gain + 1e-12) best_gain = gain, best_thr = thr, best_f = f;
        }
    }
    ASSERT_EQ(m.trees.size(), 1u);
    const auto& root = m.trees[0].nodes[0];
    ASSERT_FALSE(root.leaf);
    EXPECT_EQ(root.feature, best_f);
    EXPECT_DOUBLE_EQ(root.threshold, best_thr);
    EXPECT_NEAR(root.gain, best_gain, 1e-12);
    double GL = 0, HL = 0, GR = 0, HR = 0;
    for (std::size_t r = 0; r < n; ++r) {
        const double g = y[r] ? g1 : g0;
        if (v[r * 2 + best_f] <= best_thr) GL += g, HL += h;
        else GR += g, HR += h;
    }
    EXPECT_NEAR(m.trees[0].nodes[root.left].weight, oracle_weight(GL, HL, alpha, lambda), 1e-12);
    EXPECT_NEAR(m.trees[0].nodes[root.right].weight, oracle_weight(GR, HR, alpha, lambda), 1e-12);
}

TEST(Gbdt, ZeroTreesPredictsPrevalence) {
    auto d = planted(50, {1.0}, 2);
    GbdtParams p;
    p.n_estimators = 0;
    const auto m = fit_gbdt(d.X, d.y, p);
    const double ybar = static_cast<double>(std::count(d.y.begin(), d.y.end(), 1)) / 50.0;
    for (double s : predict_gbdt(m, d.X)) EXPECT_NEAR(s, ybar, 1e-15);
}

TEST(Gbdt, HugeGammaLeavesSingleLeafTrees) {
    auto d = planted(200, {2.0, -1.0}, 3);
    GbdtParams p;
    p.gamma = 1e9;
    const auto m = fit_gbdt(d.X, d.y, p);
    for (const auto& t : m.trees) EXPECT_EQ(t.nodes.size(), 1u);
}

TEST(Gbdt, TrainingLossNeverIncreasesAndDepthIsBounded) {
    auto d = planted(500, {1.0, -0.8, 0.5, 0.0}, 4);
    GbdtParams p;
    p.n_estimators = 40;
    p.max_depth = 3;
    p.alpha = 0.0;
    p.gamma = 0.0;
    const auto m = fit_gbdt(d.X, d.y, p);
    ASSERT_EQ(m.train_loss.size(), 41u);
    for (std::size_t t = 1; t < m.train_loss.size(); ++t) EXPECT_LE(m.train_loss[t], m.train_loss[t - 1] + 1e-15);
    for (const auto& t : m.trees) EXPECT_LE(t.depth(), 3u);
}

TEST(Gbdt, MissingValuesFollowLearnedDefault) {
    // Observed: x < 0 -> negative, x > 0 -> positive. Missing rows are all
    // positive, so the default direction must be right.
    const std::size_t n = 60;
    FeatureMatrix X(n, riskstrat::testing::numeric_columns(1));
    std::vector<int> y(n);
    for (std::size_t r = 0; r < n; ++r) {
        if (r % 3 == 2) {
            y[r] = 1;
        } else {
            const double x = (r % 3 == 0 ? -1.0 : 1.0) * (1.0 + static_cast<double>(r));
            X.set(r, 0, x);
            y[r] = x > 0 ? 1 : 0;
        }
    }
    const auto m = fit_gbdt(X, y, one_stump(0.0, 1.0, 0.0));
    const auto& root = m.trees[0].nodes[0];
    ASSERT_FALSE(root.leaf);
    EXPECT_FALSE(root.default_left);
    const auto p = predict_gbdt(m, X);
    EXPECT_EQ(p[2], p[1]);
    EXPECT_LT(p[0], p[1]);
}

TEST(Gbdt, InvariantUnderMonotoneFeatureTransform) {
    auto d = planted(300, {1.0, -0.7}, 5);
    auto X2 = d.X;
    for (std::size_t r = 0; r < 300; ++r) X2.set(r, 0, std::exp(d.X.value(r, 0)));
    GbdtParams p;
    p.n_estimators = 15;
    p.max_depth = 3;
    const auto a = predict_gbdt(fit_gbdt(d.X, d.y, p), d.X);
    const auto b = predict_gbdt(fit_gbdt(X2, d.y, p), X2);
    EXPECT_EQ(a, b);
}

TEST(Gbdt, PerturbationInsideAGapKeepsPrediction) {
    auto d = planted(200, {1.5}, 6);
    const auto m = fit_gbdt(d.X, d.y, {});
    std::vector<double> thr;
    for (const auto& t : m.trees) {
        for (const auto& n : t.nodes) {
            if (!n.leaf) thr.push_back(n.threshold);
        }
    }
    std::sort(thr.begin(), thr.end());
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const double x = rng.uniform(-3.0, 3.0);
        const auto it = std::upper_bound(thr.begin(), thr.end(), x);
        const double lo = it == thr.begin() ? x - 1.0 : *(it - 1);
        const double hi = it == thr.end() ? x + 1.0 : *it;
        // Every split sees x and the midpoint of its gap on the same side.
        const double x2 = lo + 0.5 * (hi - lo);
        const auto one = dense(1, 1, {x});
        const auto two = dense(1, 1, {x2});
        EXPECT_EQ(predict_gbdt(m, one)[0], predict_gbdt(m, two)[0]) << x << " vs " << x2;
    }
}

TEST(Gbdt, SubsampleIsSeeded) {
    auto d = planted(200, {1.0, 1.0}, 8);
    GbdtParams p;
    p.subsample = 0.6;
    p.rng_seed = 11;
    const auto a = predict_gbdt(fit_gbdt(d.X, d.y, p), d.X);
    EXPECT_EQ(a, predict_gbdt(fit_gbdt(d.X, d.y, p), d.X));
    p.rng_seed = 12;
    EXPECT_NE(a, predict_gbdt(fit_gbdt(d.X, d.y, p), d.X));
}

TEST(Gbdt, JsonRoundTripIsExact) {
    auto d = planted(150, {1.0, -1.0, 0.5}, 9);
    auto X = d.X;
    for (std::size_t r = 0; r < 150; r += 7) X.set_missing(r, 1, 0.0);
    GbdtParams p;
    p.alpha = 0.1;
    p.gamma = 0.1;
    const Model m = fit_gbdt(X, d.y, p);
    const auto j = model_to_json(m);
    const auto back = model_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(predict_model(m, X), predict_model(back, X));
    EXPECT_EQ(model_to_json(back).dump(), j.dump());
}

TEST(Gbdt, LogisticJsonRoundTripIsExact) {
    auto d = planted(150, {1.0, -1.0}, 10);
    const Model m = fit_logistic_l1(d.X, d.y, {.C = 0.7});
    const auto back = model_from_json(nlohmann::json::parse(model_to_json(m).dump()));
    EXPECT_EQ(predict_model(m, d.X), predict_model(back, d.X));
}

TEST(Gbdt, SchemaErrors) {
    auto d = planted(40, {1.0}, 11);
    auto j = model_to_json(Model(fit_gbdt(d.X, d.y, {})));
    j["version"] = 2;
    EXPECT_THROW(model_from_json(j), ConfigError);
    j["version"] = 1;
    j["trees"][0][0]["left"] = 99;
    ASSERT_FALSE(j["trees"][0][0]["leaf"].get<bool>());
    EXPECT_THROW(model_from_json(j), DataError);
    EXPECT_THROW(model_from_json(nlohmann::json{{"format", "other"}}), DataError);
}

TEST(Gbdt, ParameterValidation) {
    auto d = planted(40, {1.0}, 12);
    GbdtParams p;
    p.subsample = 0.0;
    EXPECT_THROW(fit_gbdt(d.X, d.y, p), ConfigError);
    p = {};
    p.learning_rate = -1.0;
    EXPECT_THROW(fit_gbdt(d.X, d.y, p), ConfigError);
}
