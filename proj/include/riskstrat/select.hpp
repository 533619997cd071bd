#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include "riskstrat/common.hpp"
#include "riskstrat/gbdt.hpp"
#include "riskstrat/ingest.hpp"
#include "riskstrat/logistic.hpp"
#include "riskstrat/metrics.hpp"

namespace riskstrat {

struct SeparationError : NumericError {
    using NumericError::NumericError;
};

struct SelectionResult {
    std::string method;  // "univariate_f_bh", "multivariate_wald" or "forward_sfs"
    std::vector<std::string> columns;
    std::vector<double> statistic;  // F, T, or CV AUC after adding the column (SFS)
    std::vector<double> p_value;    // empty for SFS
    std::vector<bool> flagged;      // F: zero within-group variance; empty otherwise
    std::vector<std::size_t> selected;  // column indices; selection order for SFS
    double threshold = 0.0;         // q for BH, alpha for Wald, delta for SFS
    bool ridge_binding = false;
    std::vector<std::string> notes;

    std::vector<std::string> selected_names() const {
        std::vector<std::string> out;
        for (auto i : selected) out.push_back(columns[i]);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Univariate F-test
// ---------------------------------------------------------------------------

struct FTestResult {
    double F = 0.0;
    double p = 1.0;
    bool zero_within = false;  // groups internally constant but different
};

inline std::vector<FTestResult> univariate_f(const FeatureMatrix& X, std::span<const int> y) {
    if (y.size() != X.rows()) throw DataError("label count does not match row count");
    std::size_t n1 = 0;
    for (int v : y) {
        if (v != 0 && v != 1) throw DataError("labels must be 0 or 1");
        n1 += static_cast<std::size_t>(v);
    }
    const std::size_t n = y.size(), n0 = n - n1;
    if (n0 < 2 || n1 < 2) throw DataError("each group needs at least 2 rows for the F-test");
    detail::require_finite(X);
    const boost::math::fisher_f_distribution<double> dist(1.0, static_cast<double>(n - 2));
    std::vector<FTestResult> out(X.cols());
    for (std::size_t c = 0; c < X.cols(); ++c) {
        double s[2] = {0.0, 0.0};
        for (std::size_t r = 0; r < n; ++r) s[y[r]] += X.value(r, c);
        const double m0 = s[0] / static_cast<double>(n0), m1 = s[1] / static_cast<double>(n1);
        const double m = (s[0] + s[1]) / static_cast<double>(n);
        double ssw = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double d = X.value(r, c) - (y[r] ? m1 : m0);
            ssw += d * d;
        }
        const double ssb = static_cast<double>(n0) * (m0 - m) * (m0 - m) + static_cast<double>(n1) * (m1 - m) * (m1 - m);
        const double sst = ssb + ssw;
        auto& res = out[c];
        if (!(sst > 1e-300) || ssb <= 1e-14 * sst) {
            res.F = 0.0;
            res.p = 1.0;
        } else if (ssw <= 1e-14 * sst) {
            res.F = std::numeric_limits<double>::infinity();
            res.p = 0.0;
            res.zero_within = true;
        } else {
            res.F = ssb / (ssw / static_cast<double>(n - 2));
            res.p = boost::math::cdf(boost::math::complement(dist, res.F));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Benjamini-Hochberg
// ---------------------------------------------------------------------------

/// Step-up rule: with p sorted ascending, k = max{i : p(i) <= i q / m};
/// every index with p <= p(k) is selected. Returned indices are ascending.
inline std::vector<std::size_t> bh_select(std::span<const double> p, double q) {
    if (!(q > 0.0 && q < 1.0)) throw ConfigError("q must lie in (0, 1)");
    for (double v : p) {
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("p-value " + format_double(v) + " outside [0, 1]");
    }
    const std::size_t m = p.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    std::size_t k = 0;
    for (std::size_t i = 1; i <= m; ++i) {
        if (p[order[i - 1]] <= static_cast<double>(i) * q / static_cast<double>(m)) k = i;
    }
    std::vector<std::size_t> sel;
    if (k == 0) return sel;
    const double cut = p[order[k - 1]];
    for (std::size_t j = 0; j < m; ++j) {
        if (p[j] <= cut) sel.push_back(j);
    }
    return sel;
}

inline SelectionResult univariate_select(const FeatureMatrix& X, std::span<const int> y, double q = 0.05) {
    const auto f = univariate_f(X, y);
    SelectionResult res;
    res.method = "univariate_f_bh";
    res.threshold = q;
    for (std::size_t c = 0; c < X.cols(); ++c) {
        res.columns.push_back(X.column(c).name);
        res.statistic.push_back(f[c].F);
        res.p_value.push_back(f[c].p);
        res.flagged.push_back(f[c].zero_within);
    }
    res.selected = bh_select(res.p_value, q);
    return res;
}

// ---------------------------------------------------------------------------
// Multivariate Wald test
// ---------------------------------------------------------------------------

struct WaldResult {
    std::vector<double> coefficients;  // input scale
    double intercept = 0.0;
    std::vector<double> T;
    std::vector<double> p;
    bool ridge_binding = false;
    std::size_t iterations = 0;
};

/// Ridge-stabilized logistic MLE by Newton's method on standardized columns.
/// T_j = w_j / SE_j with SE from the inverse observed information; p-values
/// are two-sided normal. Fails with SeparationError when the coefficients
/// run away.
inline WaldResult multivariate_wald(const FeatureMatrix& X, std::span<const int> y, double ridge = 1e-6) {
    if (!(ridge >= 0.0)) throw ConfigError("ridge must be non-negative");
    require_binary_labels(y, X.rows());
    detail::require_finite(X);
    const std::size_t n = X.rows(), p = X.cols();
    const auto stdz = Standardization::fit(X);
    const auto zraw = stdz.apply(X);
    Eigen::MatrixXd Z(n, p + 1);
    for (std::size_t r = 0; r < n; ++r) {
        Z(static_cast<Eigen::Index>(r), 0) = 1.0;
        for (std::size_t c = 0; c < p; ++c) Z(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c + 1)) = zraw[r * p + c];
    }
    Eigen::VectorXd yv(n);
    for (std::size_t r = 0; r < n; ++r) yv(static_cast<Eigen::Index>(r)) = y[r];
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p + 1));
    double ybar = yv.mean();
    beta(0) = logit(ybar);
    Eigen::VectorXd ridge_diag = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(p + 1), ridge);
    ridge_diag(0) = 0.0;

    auto penalized_nll = [&](const Eigen::VectorXd& b) {
        const Eigen::VectorXd eta = Z * b;
        double s = 0.0;
        for (Eigen::Index i = 0; i < eta.size(); ++i) s += softplus(eta(i)) - yv(i) * eta(i);
        return s + 0.5 * (ridge_diag.array() * b.array().square()).sum();
    };

    constexpr double kRunaway = 50.0;  // per-SD log-odds; beyond this the data separate
    Eigen::MatrixXd H;
    Eigen::MatrixXd info_unpenalized;
    WaldResult res;
    bool converged = false;
    double f = penalized_nll(beta);
    for (std::size_t it = 0; it < 200; ++it) {
        const Eigen::VectorXd eta = Z * beta;
        Eigen::VectorXd mu(n), w(n);
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
            mu(i) = sigmoid(eta(i));
            w(i) = mu(i) * (1.0 - mu(i));
        }
        const Eigen::VectorXd grad = Z.transpose() * (mu - yv) + (ridge_diag.array() * beta.array()).matrix();
        info_unpenalized = Z.transpose() * w.asDiagonal() * Z;
        H = info_unpenalized;
        H.diagonal() += ridge_diag;
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
        Eigen::VectorXd step = ldlt.solve(grad);
        if (!step.allFinite() || ldlt.info() != Eigen::Success) {
            throw SeparationError("Wald fit: information matrix is singular; increase the ridge");
        }
        // Halve the Newton step until the penalized objective decreases.
        double t = 1.0;
        Eigen::VectorXd next = beta - step;
        double f_next = penalized_nll(next);
        while (f_next > f && t > 1e-10) {
            t *= 0.5;
            next = beta - t * step;
            f_next = penalized_nll(next);
        }
        const double change = (next - beta).cwiseAbs().maxCoeff();
        beta = next;
        f = std::min(f, f_next);
        res.iterations = it + 1;
        if (beta.tail(static_cast<Eigen::Index>(p)).cwiseAbs().maxCoeff() > kRunaway) {
            throw SeparationError("Wald fit: coefficients diverge (separation detected); increase the ridge");
        }
        // Collinear one-hot pairs leave a direction held only by the ridge,
        // where the coefficients jitter at rounding level; the Newton
        // decrement still drops to zero there.
        if (change < 1e-10 || grad.dot(step) < 1e-12) {
            converged = true;
            break;
        }
    }
    if (!converged) throw SeparationError("Wald fit did not converge (possible separation); increase the ridge");
    {
        // Complete separation: no finite MLE exists and the Wald statistics
        // collapse towards zero however predictive the column is.
        const Eigen::VectorXd eta = Z * beta;
        double max_neg = -std::numeric_limits<double>::infinity(), min_pos = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            const double e = eta(static_cast<Eigen::Index>(i));
            if (y[i]) min_pos = std::min(min_pos, e);
            else max_neg = std::max(max_neg, e);
        }
        if (p > 0 && min_pos > max_neg) {
            throw SeparationError("Wald fit: the columns separate the classes perfectly, so Wald statistics are undefined; "
                                  "drop the separating columns or use the univariate test");
        }
    }

    // Refresh the information at the solution.
    {
        const Eigen::VectorXd eta = Z * beta;
        Eigen::VectorXd w(n);
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
            const double m = sigmoid(eta(i));
            w(i) = m * (1.0 - m);
        }
        info_unpenalized = Z.transpose() * w.asDiagonal() * Z;
        H = info_unpenalized;
        H.diagonal() += ridge_diag;
    }
    const Eigen::MatrixXd cov = H.ldlt().solve(Eigen::MatrixXd::Identity(H.rows(), H.cols()));
    if (ridge > 0.0 && p > 0) {
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info_unpenalized);
        res.ridge_binding = es.eigenvalues().minCoeff() < 100.0 * ridge;
    }
    const boost::math::normal_distribution<double> norm;
    res.intercept = beta(0);
    for (std::size_t j = 0; j < p; ++j) {
        const auto J = static_cast<Eigen::Index>(j + 1);
        const double se = std::sqrt(std::max(cov(J, J), 0.0));
        const double T = se > 0.0 ? beta(J) / se : 0.0;
        res.T.push_back(T);
        res.p.push_back(std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(norm, std::abs(T)))));
        res.coefficients.push_back(beta(J) / stdz.scale[j]);
        res.intercept -= res.coefficients.back() * stdz.center[j];
    }
    return res;
}

inline SelectionResult multivariate_select(const FeatureMatrix& X, std::span<const int> y, double alpha = 0.05,
                                           double ridge = 1e-6) {
    const auto w = multivariate_wald(X, y, ridge);
    SelectionResult res;
    res.method = "multivariate_wald";
    res.threshold = alpha;
    res.ridge_binding = w.ridge_binding;
    if (w.ridge_binding) res.notes.push_back("ridge " + format_general(ridge, 3) + " was binding");
    for (std::size_t c = 0; c < X.cols(); ++c) {
        res.columns.push_back(X.column(c).name);
        res.statistic.push_back(w.T[c]);
        res.p_value.push_back(w.p[c]);
        if (w.p[c] < alpha) res.selected.push_back(c);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Forward sequential selection
// ---------------------------------------------------------------------------

/// Trains on (train, y_train) and returns scores for the rows of `test`.
using FitScore = std::function<std::vector<double>(const FeatureMatrix& train, std::span<const int> y_train,
                                                   const FeatureMatrix& test)>;

inline FitScore logistic_fit_score(LogisticOptions opt = {}) {
    return [opt](const FeatureMatrix& train, std::span<const int> y, const FeatureMatrix& test) {
        return predict_logistic(fit_logistic_l1(train, y, opt), test);
    };
}

inline FitScore gbdt_fit_score(GbdtParams params = {}) {
    return [params](const FeatureMatrix& train, std::span<const int> y, const FeatureMatrix& test) {
        return predict_gbdt(fit_gbdt(train, y, params), test);
    };
}

namespace detail {

template <typename F>
auto with_context(const std::string& context, F&& f) {
    try {
        return f();
    } catch (const SeparationError& e) {
        throw SeparationError(context + ": " + e.what());
    } catch (const NumericError& e) {
        throw NumericError(context + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(context + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(context + ": " + e.what());
    }
}

inline std::vector<int> subset_labels(std::span<const int> y, std::span<const std::size_t> rows) {
    std::vector<int> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(y[r]);
    return out;
}

}  // namespace detail

struct SfsOptions {
    std::size_t cv_folds = 5;
    double delta = 0.03;
    std::uint64_t seed = 0;
    std::size_t max_features = std::numeric_limits<std::size_t>::max();
};

/// Greedy forward selection on cross-validated AUC, starting from the
/// chance level 0.5. Stops when the best candidate improves the AUC by less
/// than `delta`. Ties go to the lowest column index.
inline SelectionResult forward_sfs(const FeatureMatrix& X, std::span<const int> y, const FitScore& fit,
                                   const SfsOptions& opt = {}) {
    if (!(opt.delta > 0.0)) throw ConfigError("delta must be positive");
    if (y.size() != X.rows()) throw DataError("label count does not match row count");
    const auto folds = stratified_folds(y, opt.cv_folds, opt.seed);
    std::vector<std::vector<std::size_t>> train_rows(opt.cv_folds), test_rows(opt.cv_folds);
    for (std::size_t r = 0; r < X.rows(); ++r) {
        for (std::size_t f = 0; f < opt.cv_folds; ++f) {
            (static_cast<std::size_t>(folds[r]) == f ? test_rows[f] : train_rows[f]).push_back(r);
        }
    }
    SelectionResult res;
    res.method = "forward_sfs";
    res.threshold = opt.delta;
    for (std::size_t c = 0; c < X.cols(); ++c) res.columns.push_back(X.column(c).name);
    res.statistic.assign(X.cols(), std::numeric_limits<double>::quiet_NaN());

    std::vector<bool> used(X.cols(), false);
    double current = 0.5;
    while (res.selected.size() < std::min(opt.max_features, X.cols())) {
        double best_auc = -1.0;
        std::size_t best_col = 0;
        for (std::size_t c = 0; c < X.cols(); ++c) {
            if (used[c]) continue;
            std::vector<std::size_t> cols = res.selected;
            cols.push_back(c);
            const auto Xc = X.subset_columns(cols);
            const double a = detail::with_context("forward_sfs candidate '" + X.column(c).name + "'", [&] {
                double s = 0.0;
                for (std::size_t f = 0; f < opt.cv_folds; ++f) {
                    const auto ytr = detail::subset_labels(y, train_rows[f]);
                    const auto yte = detail::subset_labels(y, test_rows[f]);
                    const auto scores = fit(Xc.subset_rows(train_rows[f]), ytr, Xc.subset_rows(test_rows[f]));
                    s += auc(scores, yte);
                }
                return s / static_cast<double>(opt.cv_folds);
            });
            if (a > best_auc) {
                best_auc = a;
                best_col = c;
            }
        }
        if (best_auc - current < opt.delta) break;
        used[best_col] = true;
        res.selected.push_back(best_col);
        res.statistic[best_col] = best_auc;
        current = best_auc;
    }
    return res;
}

// Row-subset overloads: selection sees only the listed rows.
inline SelectionResult univariate_select(const FeatureMatrix& X, std::span<const int> y,
                                         std::span<const std::size_t> rows, double q = 0.05) {
    return univariate_select(X.subset_rows(rows), detail::subset_labels(y, rows), q);
}

inline SelectionResult multivariate_select(const FeatureMatrix& X, std::span<const int> y,
                                           std::span<const std::size_t> rows, double alpha = 0.05,
                                           double ridge = 1e-6) {
    return multivariate_select(X.subset_rows(rows), detail::subset_labels(y, rows), alpha, ridge);
}

inline SelectionResult forward_sfs(const FeatureMatrix& X, std::span<const int> y, std::span<const std::size_t> rows,
                                   const FitScore& fit, const SfsOptions& opt = {}) {
    return forward_sfs(X.subset_rows(rows), detail::subset_labels(y, rows), fit, opt);
}

inline nlohmann::json selection_to_json(const SelectionResult& r) {
    nlohmann::json j;
    j["method"] = r.method;
    j["threshold"] = r.threshold;
    j["ridge_binding"] = r.ridge_binding;
    j["selected"] = r.selected_names();
    auto cols = nlohmann::json::array();
    for (std::size_t c = 0; c < r.columns.size(); ++c) {
        nlohmann::json e = {{"column", r.columns[c]}};
        const double s = r.statistic[c];
        e["statistic"] = std::isfinite(s) ? nlohmann::json(s) : nlohmann::json(format_double(s));
        if (!r.p_value.empty()) e["p_value"] = r.p_value[c];
        if (!r.flagged.empty() && r.flagged[c]) e["zero_within_group_variance"] = true;
        e["selected"] = std::find(r.selected.begin(), r.selected.end(), c) != r.selected.end();
        cols.push_back(std::move(e));
    }
    j["columns"] = std::move(cols);
    if (!r.notes.empty()) j["notes"] = r.notes;
    return j;
}

/// CSV with one row per column: method, column, statistic, p, selected.
/// Several results (e.g. with and without ECG) can be concatenated under a
/// panel label.
inline std::string selection_report_csv(const std::vector<std::pair<std::string, SelectionResult>>& panels) {
    std::ostringstream out;
    out << "panel,method,column,statistic,p_value,selected\n";
    for (const auto& [panel, r] : panels) {
        for (std::size_t c = 0; c < r.columns.size(); ++c) {
            const bool sel = std::find(r.selected.begin(), r.selected.end(), c) != r.selected.end();
            out << panel << ',' << r.method << ',' << r.columns[c] << ',' << format_double(r.statistic[c]) << ','
                << (r.p_value.empty() ? std::string() : format_double(r.p_value[c])) << ',' << (sel ? 1 : 0) << '\n';
        }
    }
    return out.str();
}

}  // namespace riskstrat
