#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "riskstrat/common.hpp"
#include "riskstrat/ecg.hpp"
#include "riskstrat/ingest.hpp"

namespace riskstrat {

inline void require_binary_labels(std::span<const int> y, std::size_t rows) {
    if (y.size() != rows) {
        throw DataError("label count " + std::to_string(y.size()) + " does not match row count " + std::to_string(rows));
    }
    std::size_t pos = 0;
    for (int v : y) {
        if (v != 0 && v != 1) throw DataError("labels must be 0 or 1");
        pos += static_cast<std::size_t>(v);
    }
    if (pos == 0 || pos == y.size()) throw DataError("labels contain a single class");
}

/// Column centring and scaling (population SD). Constant columns keep
/// scale 1 so their standardized values are all zero.
struct Standardization {
    std::vector<double> center;
    std::vector<double> scale;

    static Standardization fit(const FeatureMatrix& X) {
        Standardization s;
        const std::size_t n = X.rows();
        for (std::size_t c = 0; c < X.cols(); ++c) {
            double m = 0.0;
            for (std::size_t r = 0; r < n; ++r) m += X.value(r, c);
            m /= static_cast<double>(n);
            double ss = 0.0;
            for (std::size_t r = 0; r < n; ++r) ss += (X.value(r, c) - m) * (X.value(r, c) - m);
            const double sd = std::sqrt(ss / static_cast<double>(n));
            s.center.push_back(m);
            s.scale.push_back(sd > 1e-12 * std::max(1.0, std::abs(m)) ? sd : 1.0);
        }
        return s;
    }

    // Row-major standardized copy.
    std::vector<double> apply(const FeatureMatrix& X) const {
        std::vector<double> z(X.rows() * X.cols());
        for (std::size_t r = 0; r < X.rows(); ++r) {
            for (std::size_t c = 0; c < X.cols(); ++c) z[r * X.cols() + c] = (X.value(r, c) - center[c]) / scale[c];
        }
        return z;
    }
};

/// Sum of logistic losses over rows of a row-major design `z` (n x p) and its
/// gradient with respect to (intercept, w). Returns the loss.
inline double logistic_loss_and_gradient(std::span<const double> z, std::size_t p, std::span<const int> y, double b0,
                                         std::span<const double> w, double* grad_b0, std::span<double> grad_w) {
    const std::size_t n = y.size();
    double loss = 0.0;
    if (grad_b0) *grad_b0 = 0.0;
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* zi = z.data() + i * p;
        double eta = b0;
        for (std::size_t j = 0; j < p; ++j) eta += zi[j] * w[j];
        // log(1 + e^eta) - y * eta
        loss += softplus(eta) - (y[i] ? eta : 0.0);
        const double r = sigmoid(eta) - y[i];
        if (grad_b0) *grad_b0 += r;
        if (!grad_w.empty()) {
            for (std::size_t j = 0; j < p; ++j) grad_w[j] += r * zi[j];
        }
    }
    return loss;
}

struct LogisticOptions {
    double C = 1.0;
    double tol = 1e-8;
    std::size_t max_iter = 200000;
};

struct LogisticModel {
    std::vector<ColumnMeta> columns;
    std::vector<double> coefficients;  // on the transformed (unstandardized) scale
    double intercept = 0.0;
    Imputer imputer;                   // fill values for missing cells at scoring time
    double C = 1.0;
    double tol = 1e-8;
    std::size_t iterations = 0;
    bool converged = false;

    double linear_predictor(std::span<const double> x) const {
        double z = intercept;
        for (std::size_t j = 0; j < coefficients.size(); ++j) z += coefficients[j] * x[j];
        return z;
    }
};

namespace detail {

inline double soft_threshold(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

struct LogisticSolution {
    double b0 = 0.0;
    std::vector<double> w;
    std::size_t iterations = 0;
    bool converged = false;
};

// Accelerated proximal gradient with backtracking and function-value
// restart. Every accepted iterate satisfies the sufficient-decrease
// condition, and a momentum step that raises the objective is discarded, so
// the objective never increases.
inline LogisticSolution solve_l1_logistic(std::span<const double> z, std::size_t p, std::span<const int> y,
                                          const LogisticOptions& opt) {
    const std::size_t n = y.size();
    const double pen = 1.0 / opt.C;
    LogisticSolution sol;
    double ybar = 0.0;
    for (int v : y) ybar += v;
    ybar /= static_cast<double>(n);
    sol.b0 = logit(ybar);
    sol.w.assign(p, 0.0);

    auto objective = [&](std::span<const double> w, double smooth) {
        double l1 = 0.0;
        for (double v : w) l1 += std::abs(v);
        return smooth + pen * l1;
    };

    std::vector<double> gw(p), w_new(p), yw(p), w_prev(p), gw_new(p);
    double gb = 0.0, gb_new = 0.0;
    double step = 1.0 / (0.25 * static_cast<double>(n) * static_cast<double>(p + 1));
    double theta = 1.0;
    double yb = sol.b0;
    yw = sol.w;
    double f_cur = objective(sol.w, logistic_loss_and_gradient(z, p, y, sol.b0, sol.w, nullptr, {}));

    for (std::size_t it = 0; it < opt.max_iter; ++it) {
        const double fy = logistic_loss_and_gradient(z, p, y, yb, yw, &gb, gw);
        double b_new = 0.0, f_smooth_new = 0.0;
        while (true) {
            b_new = yb - step * gb;
            for (std::size_t j = 0; j < p; ++j) w_new[j] = soft_threshold(yw[j] - step * gw[j], step * pen);
            f_smooth_new = logistic_loss_and_gradient(z, p, y, b_new, w_new, &gb_new, gw_new);
            double lin = gb * (b_new - yb), quad = (b_new - yb) * (b_new - yb);
            double curv = (gb_new - gb) * (b_new - yb);
            for (std::size_t j = 0; j < p; ++j) {
                const double d = w_new[j] - yw[j];
                lin += gw[j] * d;
                quad += d * d;
                curv += (gw_new[j] - gw[j]) * d;
            }
            if (quad == 0.0) break;
            // Near the optimum the value test drowns in rounding of the loss;
            // there the step is judged by the gradient change instead.
            const double gap = f_smooth_new - fy - lin;
            if (std::abs(gap) > 1e-10 * std::abs(fy) ? gap <= quad / (2.0 * step) : curv <= quad / step) break;
            step *= 0.5;
            if (step < 1e-300) throw NumericError("logistic solver line search failed");
        }
        const double f_new = objective(w_new, f_smooth_new);
        if (f_new > f_cur && theta > 1.0) {
            // Momentum overshoot: restart from the current iterate.
            theta = 1.0;
            yb = sol.b0;
            yw = sol.w;
            continue;
        }
        double change = std::abs(b_new - sol.b0);
        for (std::size_t j = 0; j < p; ++j) change = std::max(change, std::abs(w_new[j] - sol.w[j]));
        w_prev = sol.w;
        const double b_prev = sol.b0;
        sol.b0 = b_new;
        sol.w = w_new;
        f_cur = std::min(f_cur, f_new);
        sol.iterations = it + 1;
        if (change < opt.tol) {
            sol.converged = true;
            break;
        }
        const double theta_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
        const double mom = (theta - 1.0) / theta_next;
        theta = theta_next;
        yb = sol.b0 + mom * (sol.b0 - b_prev);
        for (std::size_t j = 0; j < p; ++j) yw[j] = sol.w[j] + mom * (sol.w[j] - w_prev[j]);
        step *= 1.25;
    }
    return sol;
}

inline void require_finite(const FeatureMatrix& X) {
    for (std::size_t r = 0; r < X.rows(); ++r) {
        for (std::size_t c = 0; c < X.cols(); ++c) {
            if (X.missing(r, c)) {
                throw DataError("missing cell at row " + std::to_string(r + 1) + ", column '" + X.column(c).name +
                                "'; impute before fitting");
            }
            if (!std::isfinite(X.value(r, c))) {
                throw DataError("non-finite cell at row " + std::to_string(r + 1) + ", column '" + X.column(c).name + "'");
            }
        }
    }
}

}  // namespace detail

/// L1-penalized logistic regression on a fully observed matrix. The
/// objective (1/C) * sum|w| + sum log-loss is minimized over standardized
/// columns and the coefficients are mapped back to the input scale. The
/// imputer replays fill values when scoring records with missing fields;
/// without one, the column medians of X are stored.
inline LogisticModel fit_logistic_l1(const FeatureMatrix& X, std::span<const int> y, const LogisticOptions& opt = {},
                                     std::optional<Imputer> imputer = std::nullopt) {
    if (!(opt.C > 0.0)) throw ConfigError("C must be positive");
    if (!(opt.tol > 0.0)) throw ConfigError("tol must be positive");
    require_binary_labels(y, X.rows());
    detail::require_finite(X);
    const auto stdz = Standardization::fit(X);
    const auto z = stdz.apply(X);
    const auto sol = detail::solve_l1_logistic(z, X.cols(), y, opt);

    LogisticModel m;
    m.columns = X.columns();
    m.C = opt.C;
    m.tol = opt.tol;
    m.iterations = sol.iterations;
    m.converged = sol.converged;
    m.imputer = imputer ? *imputer : Imputer::fit(X, ImputeKind::median);
    m.coefficients.resize(X.cols());
    m.intercept = sol.b0;
    for (std::size_t j = 0; j < X.cols(); ++j) {
        m.coefficients[j] = sol.w[j] / stdz.scale[j];
        m.intercept -= m.coefficients[j] * stdz.center[j];
    }
    return m;
}

/// Fits the imputer on X (which may contain missing cells) and then the
/// model on the imputed matrix.
inline LogisticModel fit_logistic_imputed(const FeatureMatrix& X, std::span<const int> y, const LogisticOptions& opt = {}) {
    auto imp = Imputer::fit(X, ImputeKind::median);
    return fit_logistic_l1(imp.apply(X), y, opt, imp);
}

namespace detail {

// Positions of the model's columns inside `X`, by name.
inline std::vector<std::size_t> map_columns(const std::vector<ColumnMeta>& wanted, const FeatureMatrix& X) {
    std::vector<std::size_t> idx;
    idx.reserve(wanted.size());
    for (const auto& c : wanted) {
        auto i = X.column_index(c.name);
        if (!i) throw DataError("input lacks model column '" + c.name + "'");
        idx.push_back(*i);
    }
    return idx;
}

}  // namespace detail

inline std::vector<double> predict_logistic(const LogisticModel& m, const FeatureMatrix& X) {
    const auto idx = detail::map_columns(m.columns, X);
    std::vector<double> fills(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        auto f = m.imputer.fill_for(m.columns[j].name);
        fills[j] = f ? *f : std::numeric_limits<double>::quiet_NaN();
    }
    std::vector<double> out(X.rows());
    std::vector<double> x(idx.size());
    for (std::size_t r = 0; r < X.rows(); ++r) {
        for (std::size_t j = 0; j < idx.size(); ++j) {
            if (X.missing(r, idx[j])) {
                if (std::isnan(fills[j])) throw DataError("no fill value for column '" + m.columns[j].name + "'");
                x[j] = fills[j];
            } else {
                x[j] = X.value(r, idx[j]);
            }
        }
        out[r] = sigmoid(m.linear_predictor(x));
    }
    return out;
}

inline double predict_logistic(const LogisticModel& m, const PatientRecord& rec) {
    const bool ecg = std::any_of(m.columns.begin(), m.columns.end(),
                                 [](const ColumnMeta& c) { return c.kind == ColumnKind::ecg_embedding; });
    if (ecg && !rec.ecg) {
        // Embedding columns fall back to their fill values.
        FeatureMatrix X = encode_records(std::span<const PatientRecord>(&rec, 1), false);
        FeatureMatrix full(1, feature_columns(true));
        for (std::size_t c = 0; c < X.cols(); ++c) {
            if (!X.missing(0, c)) full.set(0, c, X.value(0, c));
        }
        return predict_logistic(m, full).front();
    }
    const FeatureMatrix X = encode_records(std::span<const PatientRecord>(&rec, 1), ecg, ecg ? EmbeddingFn(embed_segment) : EmbeddingFn{});
    return predict_logistic(m, X).front();
}

}  // namespace riskstrat
