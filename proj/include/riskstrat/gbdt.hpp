#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "riskstrat/common.hpp"
#include "riskstrat/ecg.hpp"
#include "riskstrat/ingest.hpp"
#include "riskstrat/logistic.hpp"

namespace riskstrat {

struct GbdtParams {
    std::size_t n_estimators = 12;
    double learning_rate = 0.11;
    std::size_t max_depth = 2;
    double subsample = 1.0;
    double alpha = 2.75;   // L1 on leaf weights
    double gamma = 2.75;   // minimum split gain
    double lambda = 1.0;   // L2 on leaf weights
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (!(subsample > 0.0 && subsample <= 1.0)) throw ConfigError("subsample must lie in (0, 1]");
        if (alpha < 0.0 || gamma < 0.0) throw ConfigError("alpha and gamma must be non-negative");
        if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    }
};

struct TreeNode {
    bool leaf = true;
    std::size_t feature = 0;
    double threshold = 0.0;
    bool default_left = true;
    int left = -1;
    int right = -1;
    double weight = 0.0;   // leaf only; the model adds learning_rate * weight
    double gain = 0.0;     // internal only, for reports
    double cover = 0.0;    // hessian sum of the training rows that reached the node
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    std::size_t depth() const { return depth_of(0); }

    // Index of the leaf reached by a row given as (value, missing) accessors.
    template <typename Missing, typename Value>
    std::size_t route(Missing&& is_missing, Value&& value_of) const {
        std::size_t i = 0;
        while (!nodes[i].leaf) {
            const auto& n = nodes[i];
            bool go_left;
            if (is_missing(n.feature)) go_left = n.default_left;
            else go_left = value_of(n.feature) <= n.threshold;
            i = static_cast<std::size_t>(go_left ? n.left : n.right);
        }
        return i;
    }

private:
    std::size_t depth_of(std::size_t i) const {
        if (nodes[i].leaf) return 0;
        return 1 + std::max(depth_of(static_cast<std::size_t>(nodes[i].left)),
                            depth_of(static_cast<std::size_t>(nodes[i].right)));
    }
};

struct GbdtModel {
    std::vector<ColumnMeta> columns;
    GbdtParams params;
    double base_score = 0.0;
    std::vector<Tree> trees;
    // Mean training log-loss before boosting and after each round.
    std::vector<double> train_loss;

    // Log-odds for one row. Summation order is base, then trees in order.
    template <typename Missing, typename Value>
    double margin(Missing&& is_missing, Value&& value_of) const {
        double s = base_score;
        for (const auto& t : trees) s += params.learning_rate * t.nodes[t.route(is_missing, value_of)].weight;
        return s;
    }
};

namespace detail {

inline double leaf_weight(double G, double H, double alpha, double lambda) {
    const double a = std::abs(G);
    if (a <= alpha) return 0.0;
    const double w = (a - alpha) / (H + lambda);
    return G > 0.0 ? -w : w;
}

inline double split_gain(double GL, double HL, double GR, double HR, double lambda, double gamma) {
    const double G = GL + GR, H = HL + HR;
    return 0.5 * (GL * GL / (HL + lambda) + GR * GR / (HR + lambda) - G * G / (H + lambda)) - gamma;
}

inline double midpoint(double a, double b) {
    const double m = a + 0.5 * (b - a);
    return m < b ? m : a;
}

class TreeBuilder {
public:
    TreeBuilder(const FeatureMatrix& X, const std::vector<std::vector<std::size_t>>& sorted, const GbdtParams& p)
        : X_(X), sorted_(sorted), p_(p), in_node_(X.rows(), 0) {}

    Tree build(std::span<const double> g, std::span<const double> h, std::span<const std::size_t> rows) {
        g_ = g;
        h_ = h;
        Tree t;
        grow(t, std::vector<std::size_t>(rows.begin(), rows.end()), 0);
        return t;
    }

private:
    struct Split {
        double gain = 0.0;
        std::size_t feature = 0;
        double threshold = 0.0;
        bool default_left = true;
        bool found = false;
    };

    int grow(Tree& t, std::vector<std::size_t> rows, std::size_t depth) {
        double G = 0.0, H = 0.0;
        for (auto r : rows) {
            G += g_[r];
            H += h_[r];
        }
        const int id = static_cast<int>(t.nodes.size());
        t.nodes.push_back({});
        t.nodes[id].cover = H;
        Split best;
        if (depth < p_.max_depth && rows.size() >= 2) best = find_split(rows, G, H);
        if (!best.found) {
            t.nodes[id].leaf = true;
            t.nodes[id].weight = leaf_weight(G, H, p_.alpha, p_.lambda);
            return id;
        }
        std::vector<std::size_t> left, right;
        for (auto r : rows) {
            bool go_left;
            if (X_.missing(r, best.feature)) go_left = best.default_left;
            else go_left = X_.value(r, best.feature) <= best.threshold;
            (go_left ? left : right).push_back(r);
        }
        rows.clear();
        rows.shrink_to_fit();
        auto& n = t.nodes[id];
        n.leaf = false;
        n.feature = best.feature;
        n.threshold = best.threshold;
        n.default_left = best.default_left;
        n.gain = best.gain;
        const int l = grow(t, std::move(left), depth + 1);
        const int r = grow(t, std::move(right), depth + 1);
        t.nodes[id].left = l;
        t.nodes[id].right = r;
        return id;
    }

    // Exact greedy search over midpoints of consecutive distinct values.
    // Missing rows are tried on both sides; the strictly better side becomes
    // the default, ties go left. Among candidates the first strictly largest
    // gain wins (feature order, then ascending threshold).
    Split find_split(const std::vector<std::size_t>& rows, double G, double H) {
        for (auto r : rows) in_node_[r] = 1;
        Split best;
        for (std::size_t f = 0; f < X_.cols(); ++f) {
            double Gp = 0.0, Hp = 0.0;
            for (auto r : rows) {
                if (!X_.missing(r, f)) {
                    Gp += g_[r];
                    Hp += h_[r];
                }
            }
            const double Gm = G - Gp, Hm = H - Hp;
            double GL = 0.0, HL = 0.0;
            bool have_prev = false;
            double prev = 0.0;
            for (auto r : sorted_[f]) {
                if (!in_node_[r]) continue;
                const double v = X_.value(r, f);
                if (have_prev && v > prev) {
                    const double gl = split_gain(GL + Gm, HL + Hm, Gp - GL, Hp - HL, p_.lambda, p_.gamma);
                    const double gr = split_gain(GL, HL, Gp - GL + Gm, Hp - HL + Hm, p_.lambda, p_.gamma);
                    const bool dl = gl >= gr;
                    const double gain = dl ? gl : gr;
                    if (gain > 0.0 && (!best.found || gain > best.gain)) {
                        best = {gain, f, midpoint(prev, v), dl, true};
                    }
                }
                GL += g_[r];
                HL += h_[r];
                prev = v;
                have_prev = true;
            }
        }
        for (auto r : rows) in_node_[r] = 0;
        return best;
    }

    const FeatureMatrix& X_;
    const std::vector<std::vector<std::size_t>>& sorted_;
    const GbdtParams& p_;
    std::vector<unsigned char> in_node_;
    std::span<const double> g_, h_;
};

inline double mean_log_loss(std::span<const double> margin, std::span<const int> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += softplus(margin[i]) - (y[i] ? margin[i] : 0.0);
    return s / static_cast<double>(y.size());
}

}  // namespace detail

/// Second-order gradient boosting on the logistic loss. Missing cells stay
/// missing and are routed by each node's learned default direction.
inline GbdtModel fit_gbdt(const FeatureMatrix& X, std::span<const int> y, const GbdtParams& params = {}) {
    params.validate();
    require_binary_labels(y, X.rows());
    for (std::size_t r = 0; r < X.rows(); ++r) {
        for (std::size_t c = 0; c < X.cols(); ++c) {
            if (!X.missing(r, c) && !std::isfinite(X.value(r, c))) {
                throw DataError("non-finite cell at row " + std::to_string(r + 1) + ", column '" + X.column(c).name + "'");
            }
        }
    }
    const std::size_t n = X.rows();
    GbdtModel m;
    m.columns = X.columns();
    m.params = params;
    double ybar = 0.0;
    for (int v : y) ybar += v;
    ybar /= static_cast<double>(n);
    m.base_score = logit(ybar);

    std::vector<std::vector<std::size_t>> sorted(X.cols());
    for (std::size_t c = 0; c < X.cols(); ++c) {
        for (std::size_t r = 0; r < n; ++r) {
            if (!X.missing(r, c)) sorted[c].push_back(r);
        }
        std::stable_sort(sorted[c].begin(), sorted[c].end(),
                         [&](std::size_t a, std::size_t b) { return X.value(a, c) < X.value(b, c); });
    }

    std::vector<double> margin(n, m.base_score), g(n), h(n);
    m.train_loss.push_back(detail::mean_log_loss(margin, y));
    detail::TreeBuilder builder(X, sorted, m.params);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(params.subsample * static_cast<double>(n))));

    for (std::size_t t = 0; t < params.n_estimators; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            const double p = sigmoid(margin[i]);
            g[i] = p - y[i];
            h[i] = p * (1.0 - p);
        }
        std::vector<std::size_t> rows;
        if (k >= n) {
            rows = all;
        } else {
            // Partial Fisher-Yates: first k positions form the sample.
            Rng rng(derive_seed(params.rng_seed, t));
            std::vector<std::size_t> perm = all;
            for (std::size_t i = 0; i < k; ++i) std::swap(perm[i], perm[i + rng.index(n - i)]);
            rows.assign(perm.begin(), perm.begin() + static_cast<long>(k));
            std::sort(rows.begin(), rows.end());
        }
        Tree tree = builder.build(g, h, rows);
        for (std::size_t i = 0; i < n; ++i) {
            const auto leaf = tree.route([&](std::size_t f) { return X.missing(i, f); },
                                         [&](std::size_t f) { return X.value(i, f); });
            margin[i] += params.learning_rate * tree.nodes[leaf].weight;
        }
        m.trees.push_back(std::move(tree));
        m.train_loss.push_back(detail::mean_log_loss(margin, y));
    }
    return m;
}

inline std::vector<double> predict_gbdt_margin(const GbdtModel& m, const FeatureMatrix& X) {
    const auto idx = detail::map_columns(m.columns, X);
    std::vector<double> out(X.rows());
    for (std::size_t r = 0; r < X.rows(); ++r) {
        out[r] = m.margin([&](std::size_t f) { return X.missing(r, idx[f]); },
                          [&](std::size_t f) { return X.value(r, idx[f]); });
    }
    return out;
}

inline std::vector<double> predict_gbdt(const GbdtModel& m, const FeatureMatrix& X) {
    auto s = predict_gbdt_margin(m, X);
    for (auto& v : s) v = sigmoid(v);
    return s;
}

inline double predict_gbdt(const GbdtModel& m, const PatientRecord& rec) {
    const bool ecg = std::any_of(m.columns.begin(), m.columns.end(),
                                 [](const ColumnMeta& c) { return c.kind == ColumnKind::ecg_embedding; });
    const bool embed = ecg && rec.ecg;
    FeatureMatrix X = encode_records(std::span<const PatientRecord>(&rec, 1), embed, embed ? EmbeddingFn(embed_segment) : EmbeddingFn{});
    if (ecg && !embed) {
        // No trace: embedding columns are missing and follow default directions.
        FeatureMatrix full(1, feature_columns(true));
        for (std::size_t c = 0; c < X.cols(); ++c) {
            if (!X.missing(0, c)) full.set(0, c, X.value(0, c));
        }
        X = std::move(full);
    }
    return predict_gbdt(m, X).front();
}

}  // namespace riskstrat
