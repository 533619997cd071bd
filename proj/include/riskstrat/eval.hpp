#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "riskstrat/common.hpp"
#include "riskstrat/gbdt.hpp"
#include "riskstrat/ingest.hpp"
#include "riskstrat/logistic.hpp"
#include "riskstrat/metrics.hpp"
#include "riskstrat/model_io.hpp"
#include "riskstrat/select.hpp"

namespace riskstrat {

// ---------------------------------------------------------------------------
// AUC summaries
// ---------------------------------------------------------------------------

inline constexpr double kFoldCiMultiplier = 1.98;

struct AucEstimate {
    std::vector<double> fold_aucs;
    double mean = 0.0;
    double sd = 0.0;  // sample SD of the fold AUCs
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::string convention = "mean +- 1.98 x SD of fold AUCs";

    static AucEstimate from_folds(std::vector<double> aucs) {
        AucEstimate e;
        e.fold_aucs = std::move(aucs);
        e.mean = riskstrat::mean(e.fold_aucs);
        e.sd = sample_sd(e.fold_aucs);
        e.ci_low = e.mean - kFoldCiMultiplier * e.sd;
        e.ci_high = e.mean + kFoldCiMultiplier * e.sd;
        return e;
    }

    bool contains(double v) const { return ci_low <= v && v <= ci_high; }
};

// ---------------------------------------------------------------------------
// Hyperparameter grids
// ---------------------------------------------------------------------------

enum class ModelFamily { logistic, gbdt };

inline std::string family_name(ModelFamily f) { return f == ModelFamily::logistic ? "logistic" : "gbdt"; }

inline ModelFamily parse_family(const std::string& s) {
    if (s == "logistic" || s == "lr") return ModelFamily::logistic;
    if (s == "gbdt") return ModelFamily::gbdt;
    throw ConfigError("unknown model family '" + s + "' (expected logistic or gbdt)");
}

struct HyperParams {
    ModelFamily family = ModelFamily::logistic;
    LogisticOptions lr;
    GbdtParams gbdt;

    std::string describe() const {
        if (family == ModelFamily::logistic) return "C=" + format_double(lr.C);
        return "learning_rate=" + format_double(gbdt.learning_rate) + ",subsample=" + format_double(gbdt.subsample) +
               ",n_estimators=" + std::to_string(gbdt.n_estimators);
    }

    nlohmann::json to_json() const {
        if (family == ModelFamily::logistic) return {{"family", "logistic"}, {"C", lr.C}};
        return {{"family", "gbdt"},
                {"learning_rate", gbdt.learning_rate},
                {"subsample", gbdt.subsample},
                {"n_estimators", gbdt.n_estimators},
                {"max_depth", gbdt.max_depth},
                {"alpha", gbdt.alpha},
                {"gamma", gbdt.gamma},
                {"lambda", gbdt.lambda}};
    }
};

struct GridSpec {
    std::vector<double> learning_rate{0.02, 0.11, 0.2};
    std::vector<double> subsample{0.5, 0.75, 1.0};
    std::vector<std::size_t> n_estimators{6, 12, 24};
    GbdtParams gbdt_fixed{};  // max_depth 2, alpha 2.75, gamma 2.75, lambda 1
    std::vector<double> C{0.1, 0.5, 1.0};
    double lr_tol = 1e-8;

    void validate() const {
        if (learning_rate.empty() || subsample.empty() || n_estimators.empty()) {
            throw ConfigError("GBDT grid axes must be non-empty");
        }
        if (C.empty()) throw ConfigError("LR grid axis C must be non-empty");
    }

    // Declaration order: learning_rate outermost, then subsample, then
    // n_estimators.
    std::vector<HyperParams> points(ModelFamily family) const {
        validate();
        std::vector<HyperParams> out;
        if (family == ModelFamily::logistic) {
            for (double c : C) {
                HyperParams h;
                h.family = family;
                h.lr.C = c;
                h.lr.tol = lr_tol;
                out.push_back(h);
            }
            return out;
        }
        for (double lr : learning_rate) {
            for (double ss : subsample) {
                for (auto ne : n_estimators) {
                    HyperParams h;
                    h.family = family;
                    h.gbdt = gbdt_fixed;
                    h.gbdt.learning_rate = lr;
                    h.gbdt.subsample = ss;
                    h.gbdt.n_estimators = ne;
                    out.push_back(h);
                }
            }
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Leakage audit
// ---------------------------------------------------------------------------

struct LeakageError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Records every cohort row id handed to a fitting step. Touching a
/// forbidden (outer-test) row throws immediately.
class RowAudit {
public:
    RowAudit() = default;
    explicit RowAudit(std::span<const std::size_t> forbidden) : forbidden_(forbidden.begin(), forbidden.end()) {}

    void touch(std::span<const std::size_t> row_ids) {
        for (auto r : row_ids) {
            if (forbidden_.count(r)) {
                throw LeakageError("held-out row " + std::to_string(r) + " was read while fitting");
            }
            touched_.insert(r);
        }
    }

    const std::set<std::size_t>& touched() const { return touched_; }

    bool disjoint_from(std::span<const std::size_t> rows) const {
        return std::none_of(rows.begin(), rows.end(), [&](std::size_t r) { return touched_.count(r) > 0; });
    }

    std::uint64_t hash() const {
        Fnv1a h;
        for (auto r : touched_) h.update_value(static_cast<std::uint64_t>(r));
        return h.digest();
    }

private:
    std::set<std::size_t> forbidden_;
    std::set<std::size_t> touched_;
};

// ---------------------------------------------------------------------------
// Pipelines
// ---------------------------------------------------------------------------

enum class SelectionKind { none, univariate, multivariate, sfs };

inline std::string selection_name(SelectionKind k) {
    switch (k) {
        case SelectionKind::none: return "none";
        case SelectionKind::univariate: return "univariate";
        case SelectionKind::multivariate: return "multivariate";
        case SelectionKind::sfs: return "sfs";
    }
    return "none";
}

inline SelectionKind parse_selection(const std::string& s) {
    if (s == "none") return SelectionKind::none;
    if (s == "univariate") return SelectionKind::univariate;
    if (s == "multivariate") return SelectionKind::multivariate;
    if (s == "sfs") return SelectionKind::sfs;
    throw ConfigError("unknown selection '" + s + "' (expected none, univariate, multivariate or sfs)");
}

struct PipelineSpec {
    ModelFamily family = ModelFamily::logistic;
    // Logistic models always median-impute; GBDT defaults to native missing
    // routing.
    MissingPolicy missing = MissingPolicy::leave_missing;
    SelectionKind selection = SelectionKind::none;
    double selection_q = 0.05;
    double sfs_delta = 0.03;
    GridSpec grid;
    std::size_t k_inner = 5;
    std::optional<double> target_tpr;  // per-fold threshold selection when set

    MissingPolicy effective_missing() const {
        return family == ModelFamily::logistic ? MissingPolicy::median_impute : missing;
    }
};

struct FittedPipeline {
    Model model;
    std::vector<std::string> selected_columns;  // empty when no selection ran
    std::optional<SelectionResult> selection;
};

/// Fits imputation, selection and the model on `train` only. Every fit
/// reports its rows to `audit` first.
inline FittedPipeline fit_pipeline(const FeatureMatrix& train, std::span<const int> y, const PipelineSpec& spec,
                                   const HyperParams& hp, std::uint64_t seed, RowAudit* audit) {
    if (audit) audit->touch(train.row_ids());
    FittedPipeline out{LogisticModel{}, {}, std::nullopt};
    const FeatureMatrix* X = &train;
    FeatureMatrix reduced;
    if (spec.selection != SelectionKind::none) {
        const auto mean_imp = Imputer::fit(train, ImputeKind::mean).apply(train);
        SelectionResult sel;
        switch (spec.selection) {
            case SelectionKind::univariate: sel = univariate_select(mean_imp, y, spec.selection_q); break;
            case SelectionKind::multivariate: sel = multivariate_select(mean_imp, y, 0.05); break;
            case SelectionKind::sfs: {
                SfsOptions opt;
                opt.delta = spec.sfs_delta;
                opt.seed = derive_seed(seed, 0x736673ULL);
                opt.cv_folds = spec.k_inner;
                sel = forward_sfs(mean_imp, y, logistic_fit_score(LogisticOptions{1.0, 1e-6, 200000}), opt);
                break;
            }
            case SelectionKind::none: break;
        }
        if (sel.selected.empty()) {
            // Nothing passed: keep the single strongest column so a model exists.
            std::size_t best = 0;
            for (std::size_t c = 1; c < sel.columns.size(); ++c) {
                const bool by_p = !sel.p_value.empty();
                const double a = by_p ? sel.p_value[c] : -sel.statistic[c];
                const double b = by_p ? sel.p_value[best] : -sel.statistic[best];
                if (a < b) best = c;
            }
            sel.selected.push_back(best);
            sel.notes.push_back("no column passed; kept the strongest");
        }
        out.selected_columns = sel.selected_names();
        reduced = train.subset_columns(sel.selected);
        X = &reduced;
        out.selection = std::move(sel);
    }
    if (spec.family == ModelFamily::logistic) {
        out.model = fit_logistic_imputed(*X, y, hp.lr);
    } else {
        GbdtParams p = hp.gbdt;
        p.rng_seed = seed;
        if (spec.effective_missing() == MissingPolicy::median_impute) {
            out.model = fit_gbdt(Imputer::fit(*X, ImputeKind::median).apply(*X), y, p);
        } else {
            out.model = fit_gbdt(*X, y, p);
        }
    }
    return out;
}

inline std::vector<double> score_pipeline(const FittedPipeline& fp, const FeatureMatrix& X) {
    return predict_model(fp.model, X);
}

namespace detail {

struct CvSplit {
    std::vector<std::size_t> train, test;  // positions within the matrix
};

inline std::vector<CvSplit> make_splits(std::span<const int> y, std::size_t k, std::uint64_t seed) {
    const auto folds = stratified_folds(y, k, seed);
    std::vector<CvSplit> s(k);
    for (std::size_t r = 0; r < y.size(); ++r) {
        for (std::size_t f = 0; f < k; ++f) {
            (static_cast<std::size_t>(folds[r]) == f ? s[f].test : s[f].train).push_back(r);
        }
    }
    return s;
}

// Out-of-fold scores from k-fold CV with fixed hyperparameters.
inline std::vector<double> cv_scores(const FeatureMatrix& X, std::span<const int> y, const PipelineSpec& spec,
                                     const HyperParams& hp, std::size_t k, std::uint64_t seed, RowAudit* audit,
                                     std::size_t* fit_counter, std::vector<double>* fold_aucs = nullptr) {
    const auto splits = make_splits(y, k, seed);
    std::vector<double> oof(X.rows());
    for (std::size_t f = 0; f < k; ++f) {
        const auto ytr = subset_labels(y, splits[f].train);
        const auto yte = subset_labels(y, splits[f].test);
        const auto fp = fit_pipeline(X.subset_rows(splits[f].train), ytr, spec, hp, derive_seed(seed, f), audit);
        if (fit_counter) ++*fit_counter;
        const auto s = score_pipeline(fp, X.subset_rows(splits[f].test));
        for (std::size_t i = 0; i < s.size(); ++i) oof[splits[f].test[i]] = s[i];
        if (fold_aucs) fold_aucs->push_back(auc(s, yte));
    }
    return oof;
}

}  // namespace detail

struct GridSearchResult {
    std::vector<HyperParams> points;
    std::vector<double> mean_auc;  // empty when the grid had a single point
    std::size_t best = 0;
    std::size_t fits = 0;

    const HyperParams& best_params() const { return points[best]; }
};

/// Exhaustive grid search on the given training rows only. Each point is
/// scored by mean inner-CV AUC; the first point (declaration order) with the
/// highest mean wins.
inline GridSearchResult grid_search_cv(const FeatureMatrix& train, std::span<const int> y, const PipelineSpec& spec,
                                       std::size_t k_inner, std::uint64_t seed, RowAudit* audit = nullptr) {
    GridSearchResult res;
    res.points = spec.grid.points(spec.family);
    if (res.points.size() == 1) return res;
    for (std::size_t g = 0; g < res.points.size(); ++g) {
        const auto& hp = res.points[g];
        const double a = detail::with_context("grid point " + hp.describe(), [&] {
            std::vector<double> aucs;
            detail::cv_scores(train, y, spec, hp, k_inner, derive_seed(seed, 0x677269ULL, g), audit, &res.fits, &aucs);
            return riskstrat::mean(aucs);
        });
        res.mean_auc.push_back(a);
        if (a > res.mean_auc[res.best]) res.best = g;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Thresholds and calibration
// ---------------------------------------------------------------------------

/// P(rev | score >= r) = TPR p / (TPR p + FPR (1 - p)).
inline double calibrate_probability(double tpr, double fpr, double prevalence) {
    for (double v : {tpr, fpr, prevalence}) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("calibrate_probability arguments must lie in [0, 1]");
    }
    const double num = tpr * prevalence;
    const double den = num + fpr * (1.0 - prevalence);
    if (!(den > 0.0)) throw NumericError("calibrated probability undefined: TPR * p + FPR * (1 - p) = 0");
    if (tpr == fpr) return prevalence;
    return num / den;
}

struct RatePair {
    double tpr = 0.0;
    double fpr = 0.0;
};

inline RatePair rates_at(std::span<const double> scores, std::span<const int> labels, double threshold) {
    std::size_t tp = 0, fp = 0, P = 0, N = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool call = scores[i] >= threshold;
        if (labels[i]) {
            ++P;
            tp += call;
        } else {
            ++N;
            fp += call;
        }
    }
    return {P ? static_cast<double>(tp) / static_cast<double>(P) : 0.0,
            N ? static_cast<double>(fp) / static_cast<double>(N) : 0.0};
}

/// Largest cut on `scores` whose TPR reaches `target_tpr`, placed midway to
/// the next lower distinct score so it separates the same rows on new data.
inline double threshold_for_tpr(std::span<const double> scores, std::span<const int> labels, double target_tpr) {
    if (!(target_tpr > 0.0 && target_tpr <= 1.0)) throw ConfigError("target_tpr must lie in (0, 1]");
    const auto roc = roc_curve(scores, labels);
    for (std::size_t i = 1; i < roc.points.size(); ++i) {
        const double tp = std::round(roc.points[i].tpr * static_cast<double>(roc.positives));
        if (tp >= std::ceil(target_tpr * static_cast<double>(roc.positives) - 1e-9)) {
            const double t = roc.points[i].threshold;
            if (i + 1 < roc.points.size()) return t + 0.5 * (roc.points[i + 1].threshold - t);
            return t - std::max(1e-12, std::abs(t) * 1e-9);
        }
    }
    throw DataError("target TPR " + format_double(target_tpr) + " unreachable; max achievable TPR is " +
                    format_double(roc.points.back().tpr));
}

struct ThresholdResult {
    double threshold = 0.0;
    double target_tpr = 0.0;
    RatePair train;  // pooled inner-CV on training rows
    RatePair test;   // final model on held-out rows, computed once
    double calibrated_probability = 0.0;  // from the test rates and training prevalence
    std::uint64_t audit_hash = 0;
};

/// Chooses r on pooled inner-CV scores of the training rows, then refits on
/// all training rows and reports (TPR, FPR) at r on the test rows.
inline ThresholdResult pick_threshold(const FeatureMatrix& train, std::span<const int> y_train,
                                      const FeatureMatrix& test, std::span<const int> y_test, const PipelineSpec& spec,
                                      const HyperParams& hp, double target_tpr, std::uint64_t seed,
                                      RowAudit* audit = nullptr) {
    RowAudit local;
    RowAudit* a = audit ? audit : &local;
    ThresholdResult res;
    res.target_tpr = target_tpr;
    const auto oof = detail::cv_scores(train, y_train, spec, hp, spec.k_inner, derive_seed(seed, 0x746872ULL), a, nullptr);
    res.threshold = threshold_for_tpr(oof, y_train, target_tpr);
    res.train = rates_at(oof, y_train, res.threshold);
    const auto fp = fit_pipeline(train, y_train, spec, hp, derive_seed(seed, 0x66696eULL), a);
    const auto s = score_pipeline(fp, test);
    res.test = rates_at(s, y_test, res.threshold);
    double prev = 0.0;
    for (int v : y_train) prev += v;
    prev /= static_cast<double>(y_train.size());
    if (res.test.tpr + res.test.fpr > 0.0) res.calibrated_probability = calibrate_probability(res.test.tpr, res.test.fpr, prev);
    res.audit_hash = a->hash();
    return res;
}

// ---------------------------------------------------------------------------
// Nested cross-validation
// ---------------------------------------------------------------------------

struct OuterFold {
    std::vector<std::size_t> test_rows;  // cohort row ids
    HyperParams chosen;
    std::vector<double> grid_auc;
    double test_auc = 0.0;
    std::size_t fits = 0;
    std::uint64_t audit_hash = 0;
    bool audit_clean = false;
    std::vector<std::string> selected_columns;
    std::optional<ThresholdResult> threshold;
};

struct NestedCvResult {
    AucEstimate estimate;
    std::vector<OuterFold> folds;
    std::vector<double> oof_scores;  // out-of-fold score of every row
    std::vector<int> labels;
    std::size_t total_fits = 0;
};

inline NestedCvResult nested_cv_auc(const FeatureMatrix& X, std::span<const int> y, const PipelineSpec& spec,
                                    std::size_t k_outer, std::size_t k_inner, std::uint64_t seed) {
    require_binary_labels(y, X.rows());
    const auto splits = detail::make_splits(y, k_outer, derive_seed(seed, 0x6f75746572ULL));
    NestedCvResult res;
    res.oof_scores.assign(X.rows(), 0.0);
    res.labels.assign(y.begin(), y.end());
    std::vector<double> aucs;
    for (std::size_t f = 0; f < k_outer; ++f) {
        const auto Xtr = X.subset_rows(splits[f].train);
        const auto Xte = X.subset_rows(splits[f].test);
        const auto ytr = detail::subset_labels(y, splits[f].train);
        const auto yte = detail::subset_labels(y, splits[f].test);
        OuterFold fold;
        fold.test_rows = Xte.row_ids();
        RowAudit audit(fold.test_rows);
        const std::uint64_t fold_seed = derive_seed(seed, f);
        const auto gs = grid_search_cv(Xtr, ytr, spec, k_inner, fold_seed, &audit);
        fold.chosen = gs.best_params();
        fold.grid_auc = gs.mean_auc;
        fold.fits = gs.fits;
        const auto fp = fit_pipeline(Xtr, ytr, spec, fold.chosen, derive_seed(fold_seed, 0x66696eULL), &audit);
        fold.fits += 1;
        fold.selected_columns = fp.selected_columns;
        const auto s = score_pipeline(fp, Xte);
        for (std::size_t i = 0; i < s.size(); ++i) res.oof_scores[splits[f].test[i]] = s[i];
        fold.test_auc = auc(s, yte);
        if (spec.target_tpr) {
            fold.threshold = pick_threshold(Xtr, ytr, Xte, yte, spec, fold.chosen, *spec.target_tpr,
                                            derive_seed(fold_seed, 0x746872ULL), &audit);
            fold.fits += spec.k_inner + 1;
        }
        fold.audit_hash = audit.hash();
        fold.audit_clean = audit.disjoint_from(fold.test_rows);
        aucs.push_back(fold.test_auc);
        res.total_fits += fold.fits;
        res.folds.push_back(std::move(fold));
    }
    res.estimate = AucEstimate::from_folds(std::move(aucs));
    return res;
}

// ---------------------------------------------------------------------------
// Baseline score
// ---------------------------------------------------------------------------

struct ScoreBand {
    double lo = -std::numeric_limits<double>::infinity();  // inclusive
    double hi = std::numeric_limits<double>::infinity();   // exclusive
    double points = 0.0;
};

enum class Monotone { none, increasing, decreasing };

struct BaselineVariable {
    std::string name;
    std::string field;  // cohort field the bands apply to, in raw units
    std::vector<ScoreBand> bands;
    double missing_points = 0.0;
    Monotone monotone = Monotone::none;
};

struct BaselineScoreSpec {
    std::string name = "grace_like";
    std::vector<BaselineVariable> variables;
    std::vector<std::string> notes;
    // Optional worked example: raw field values and the hand-summed total.
    std::vector<std::pair<std::string, double>> example_values;
    std::optional<double> example_total;

    void validate() const {
        if (variables.empty()) throw ConfigError("baseline spec has no variables");
        for (const auto& v : variables) {
            if (!field_index(v.field)) throw ConfigError("baseline variable '" + v.name + "' uses unknown field '" + v.field + "'");
            if (v.bands.empty()) throw ConfigError("baseline variable '" + v.name + "' has no bands");
            if (v.missing_points < 0.0) throw ConfigError("baseline variable '" + v.name + "' has negative missing points");
            for (std::size_t i = 0; i < v.bands.size(); ++i) {
                const auto& b = v.bands[i];
                if (!(b.lo < b.hi)) throw ConfigError("baseline variable '" + v.name + "' has an empty band");
                if (b.points < 0.0) throw ConfigError("baseline variable '" + v.name + "' has negative points");
                if (i > 0 && v.bands[i - 1].hi != b.lo) {
                    throw ConfigError("baseline variable '" + v.name + "' bands do not tile: gap or overlap at " +
                                      format_double(b.lo));
                }
                if (i > 0 && v.monotone == Monotone::increasing && b.points < v.bands[i - 1].points) {
                    throw ConfigError("baseline variable '" + v.name + "' is declared increasing but its points fall");
                }
                if (i > 0 && v.monotone == Monotone::decreasing && b.points > v.bands[i - 1].points) {
                    throw ConfigError("baseline variable '" + v.name + "' is declared decreasing but its points rise");
                }
            }
        }
    }

    double min_total() const {
        double s = 0.0;
        for (const auto& v : variables) {
            double m = v.bands.front().points;
            for (const auto& b : v.bands) m = std::min(m, b.points);
            s += m;
        }
        return s;
    }
};

inline double band_points(const BaselineVariable& v, double x) {
    for (const auto& b : v.bands) {
        if (x >= b.lo && x < b.hi) return b.points;
    }
    throw DataError("value " + format_double(x) + " of '" + v.field + "' lies outside every band of '" + v.name + "'");
}

inline double grace_like_score(const PatientRecord& rec, const BaselineScoreSpec& spec) {
    double s = 0.0;
    for (const auto& v : spec.variables) {
        const auto& x = rec.values[require_field(v.field)];
        s += x ? band_points(v, *x) : v.missing_points;
    }
    return s;
}

inline std::vector<double> grace_like_scores(std::span<const PatientRecord> recs, const BaselineScoreSpec& spec) {
    std::vector<double> out;
    out.reserve(recs.size());
    for (const auto& r : recs) out.push_back(grace_like_score(r, spec));
    return out;
}

inline BaselineScoreSpec baseline_spec_from_json(const nlohmann::json& j) {
    try {
        BaselineScoreSpec spec;
        spec.name = j.value("name", std::string("grace_like"));
        if (j.contains("notes")) spec.notes = j.at("notes").get<std::vector<std::string>>();
        for (const auto& vj : j.at("variables")) {
            BaselineVariable v;
            v.name = vj.at("name").get<std::string>();
            v.field = vj.value("field", v.name);
            v.missing_points = vj.value("missing_points", 0.0);
            const auto mono = vj.value("monotone", std::string("none"));
            if (mono == "increasing") v.monotone = Monotone::increasing;
            else if (mono == "decreasing") v.monotone = Monotone::decreasing;
            else if (mono != "none") throw ConfigError("unknown monotone tag '" + mono + "'");
            for (const auto& bj : vj.at("bands")) {
                ScoreBand b;
                if (bj.contains("lo") && !bj.at("lo").is_null()) b.lo = bj.at("lo").get<double>();
                if (bj.contains("hi") && !bj.at("hi").is_null()) b.hi = bj.at("hi").get<double>();
                b.points = bj.at("points").get<double>();
                v.bands.push_back(b);
            }
            spec.variables.push_back(std::move(v));
        }
        if (j.contains("worked_example")) {
            const auto& ex = j.at("worked_example");
            for (const auto& [k, val] : ex.at("values").items()) spec.example_values.emplace_back(k, val.get<double>());
            spec.example_total = ex.at("expected_total").get<double>();
        }
        spec.validate();
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed baseline spec: ") + e.what());
    }
}

inline BaselineScoreSpec load_baseline_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open baseline spec " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return baseline_spec_from_json(j);
}

// ---------------------------------------------------------------------------
// Bootstrap and Welch test
// ---------------------------------------------------------------------------

struct BootstrapCi {
    double low = 0.0;
    double high = 0.0;
    double point = 0.0;
    std::size_t n_boot = 0;
    std::size_t redraws = 0;
};

/// Percentile 2.5/97.5 interval of resampled AUCs. Resampling is stratified
/// by class, so every draw keeps both classes.
inline BootstrapCi bootstrap_auc_ci(std::span<const double> scores, std::span<const int> labels, std::size_t n_boot,
                                    std::uint64_t seed) {
    if (n_boot < 1000) throw ConfigError("n_boot must be at least 1000");
    BootstrapCi ci;
    ci.point = auc(scores, labels);
    ci.n_boot = n_boot;
    std::vector<std::size_t> cls[2];
    for (std::size_t i = 0; i < labels.size(); ++i) cls[labels[i]].push_back(i);
    Rng rng(derive_seed(seed, 0x626f6f74ULL));
    std::vector<double> aucs;
    aucs.reserve(n_boot);
    std::vector<double> s(scores.size());
    std::vector<int> l(scores.size());
    for (std::size_t b = 0; b < n_boot; ++b) {
        std::size_t k = 0;
        for (int c = 0; c < 2; ++c) {
            for (std::size_t i = 0; i < cls[c].size(); ++i) {
                const auto idx = cls[c][rng.index(cls[c].size())];
                s[k] = scores[idx];
                l[k] = c;
                ++k;
            }
        }
        aucs.push_back(auc_mann_whitney(s, l));
    }
    std::sort(aucs.begin(), aucs.end());
    ci.low = quantile_sorted(aucs, 0.025);
    ci.high = quantile_sorted(aucs, 0.975);
    return ci;
}

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p = 0.5;
    bool degenerate = false;  // both samples had zero variance
};

/// One-sided Welch test of mean(a) > mean(b) with Satterthwaite df.
inline WelchResult welch_one_sided_t(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw DataError("Welch test needs at least 2 values per sample");
    const double ma = mean(a), mb = mean(b);
    const double va = sample_sd(a) * sample_sd(a), vb = sample_sd(b) * sample_sd(b);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double sa = va / na, sb = vb / nb;
    WelchResult r;
    if (sa + sb == 0.0) {
        r.degenerate = true;
        r.t = ma == mb ? 0.0 : (ma > mb ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity());
        r.p = ma == mb ? 0.5 : (ma > mb ? 0.0 : 1.0);
        return r;
    }
    r.t = (ma - mb) / std::sqrt(sa + sb);
    r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    const boost::math::students_t_distribution<double> dist(r.df);
    r.p = boost::math::cdf(boost::math::complement(dist, r.t));
    return r;
}

inline nlohmann::json auc_estimate_to_json(const AucEstimate& e) {
    return {{"fold_aucs", e.fold_aucs}, {"mean", e.mean},          {"sd", e.sd},
            {"ci_low", e.ci_low},       {"ci_high", e.ci_high},    {"ci_convention", e.convention}};
}

inline nlohmann::json roc_to_json(const RocCurve& roc) {
    auto pts = nlohmann::json::array();
    for (const auto& p : roc.points) {
        pts.push_back({{"threshold", std::isfinite(p.threshold) ? nlohmann::json(p.threshold) : nlohmann::json("inf")},
                       {"tpr", p.tpr},
                       {"fpr", p.fpr}});
    }
    return pts;
}

inline std::string roc_csv(const RocCurve& roc) {
    std::string s = "threshold,tpr,fpr\n";
    for (const auto& p : roc.points) {
        s += format_double(p.threshold) + ',' + format_double(p.tpr) + ',' + format_double(p.fpr) + '\n';
    }
    return s;
}

// FPR at the first ROC point whose TPR reaches the target.
inline double fpr_at_tpr(const RocCurve& roc, double target_tpr) {
    for (const auto& p : roc.points) {
        if (p.tpr >= target_tpr - 1e-12) return p.fpr;
    }
    return 1.0;
}

}  // namespace riskstrat
