#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "riskstrat/cohort.hpp"
#include "riskstrat/ecg.hpp"
#include "riskstrat/eval.hpp"
#include "riskstrat/explain.hpp"
#include "riskstrat/ingest.hpp"
#include "riskstrat/model_io.hpp"
#include "riskstrat/select.hpp"

namespace riskstrat {

enum class EcgVariant { without, with };

inline std::string variant_name(EcgVariant v) { return v == EcgVariant::with ? "with_ecg" : "without_ecg"; }

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::optional<CohortSpec> cohort_spec;   // generate ...
    std::optional<std::string> cohort_csv;   // ... or load
    std::vector<EcgVariant> variants{EcgVariant::without};
    std::vector<ModelFamily> models{ModelFamily::logistic, ModelFamily::gbdt};
    GridSpec grid;
    SelectionKind selection = SelectionKind::none;
    std::size_t k_outer = 5;
    std::size_t k_inner = 5;
    double target_tpr = 0.9;
    std::string baseline_path;
    std::size_t n_boot = 1000;
    std::size_t table_bins = 5;
    std::string output_dir = "riskstrat_out";
    nlohmann::json source;  // the config document as given

    void validate() const {
        if (!cohort_spec && !cohort_csv) throw ConfigError("cohort: give either \"spec\" or \"csv\"");
        if (models.empty()) throw ConfigError("models: at least one model family is required");
        if (variants.empty()) throw ConfigError("ecg: no variant selected");
        if (k_outer < 2 || k_inner < 2) throw ConfigError("k_outer and k_inner must be at least 2");
        if (!(target_tpr > 0.0 && target_tpr <= 1.0)) throw ConfigError("target_tpr must lie in (0, 1]");
        if (baseline_path.empty()) throw ConfigError("baseline: a baseline score spec path is required");
        grid.validate();
    }
};

namespace detail {

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path q(p);
    return q.is_absolute() ? q.string() : (base / q).lexically_normal().string();
}

inline std::vector<double> json_doubles(const nlohmann::json& j, const std::string& key) {
    if (!j.is_array() || j.empty()) throw ConfigError("grid." + key + " must be a non-empty array");
    return j.get<std::vector<double>>();
}

}  // namespace detail

/// Parses an experiment config. Relative paths resolve against `base_dir`
/// (the config file's directory).
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    static const std::set<std::string> known = {"seed",   "cohort",   "ecg",        "models",    "grid",
                                                "selection", "k_outer", "k_inner",  "target_tpr", "baseline",
                                                "n_boot", "table_bins", "output_dir", "description"};
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key())) throw ConfigError("unknown config field '" + it.key() + "'");
    }
    ExperimentConfig c;
    c.source = j;
    try {
        if (!j.contains("seed")) throw ConfigError("seed: field is mandatory");
        c.seed = j.at("seed").get<std::uint64_t>();
        const auto& co = j.at("cohort");
        if (co.contains("spec")) {
            const auto& s = co.at("spec");
            c.cohort_spec = s.is_string() ? load_cohort_spec(detail::resolve(base_dir, s.get<std::string>()))
                                          : cohort_spec_from_json(s);
        } else if (co.contains("csv")) {
            c.cohort_csv = detail::resolve(base_dir, co.at("csv").get<std::string>());
            if (!std::filesystem::exists(*c.cohort_csv)) throw ConfigError("cohort.csv: file not found: " + *c.cohort_csv);
        }
        if (j.contains("ecg")) {
            const auto e = j.at("ecg").get<std::string>();
            if (e == "without") c.variants = {EcgVariant::without};
            else if (e == "with") c.variants = {EcgVariant::with};
            else if (e == "both") c.variants = {EcgVariant::without, EcgVariant::with};
            else throw ConfigError("ecg: expected \"without\", \"with\" or \"both\", got '" + e + "'");
        }
        if (j.contains("models")) {
            c.models.clear();
            const auto& m = j.at("models");
            for (std::size_t i = 0; i < m.size(); ++i) {
                const auto name = m[i].get<std::string>();
                try {
                    c.models.push_back(parse_family(name));
                } catch (const ConfigError& e) {
                    throw ConfigError("models[" + std::to_string(i) + "]: " + e.what());
                }
            }
        }
        if (j.contains("grid")) {
            const auto& g = j.at("grid");
            for (auto it = g.begin(); it != g.end(); ++it) {
                const auto& k = it.key();
                if (k == "learning_rate") c.grid.learning_rate = detail::json_doubles(it.value(), k);
                else if (k == "subsample") c.grid.subsample = detail::json_doubles(it.value(), k);
                else if (k == "n_estimators") {
                    c.grid.n_estimators.clear();
                    for (double v : detail::json_doubles(it.value(), k)) c.grid.n_estimators.push_back(static_cast<std::size_t>(v));
                } else if (k == "C") c.grid.C = detail::json_doubles(it.value(), k);
                else if (k == "max_depth") c.grid.gbdt_fixed.max_depth = it.value().get<std::size_t>();
                else if (k == "alpha") c.grid.gbdt_fixed.alpha = it.value().get<double>();
                else if (k == "gamma") c.grid.gbdt_fixed.gamma = it.value().get<double>();
                else if (k == "lambda") c.grid.gbdt_fixed.lambda = it.value().get<double>();
                else throw ConfigError("grid: unknown field '" + k + "'");
            }
        }
        if (j.contains("selection")) c.selection = parse_selection(j.at("selection").get<std::string>());
        c.k_outer = j.value("k_outer", c.k_outer);
        c.k_inner = j.value("k_inner", c.k_inner);
        c.target_tpr = j.value("target_tpr", c.target_tpr);
        if (j.contains("baseline")) c.baseline_path = detail::resolve(base_dir, j.at("baseline").get<std::string>());
        c.n_boot = j.value("n_boot", c.n_boot);
        c.table_bins = j.value("table_bins", c.table_bins);
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return experiment_config_from_json(j, std::filesystem::path(path).parent_path());
}

inline Cohort load_experiment_cohort(const ExperimentConfig& c) {
    if (c.cohort_spec) return generate_cohort(*c.cohort_spec);
    return load_cohort(*c.cohort_csv);
}

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

inline std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw NumericError("SHA-256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Decisions stored next to a model
// ---------------------------------------------------------------------------

struct Decision {
    double threshold = 0.0;
    double target_tpr = 0.9;
    double tpr = 0.0;
    double fpr = 0.0;
    double prevalence = 0.0;
    std::optional<double> calibrated;

    nlohmann::json to_json() const {
        nlohmann::json j = {{"threshold", threshold}, {"target_tpr", target_tpr}, {"tpr", tpr},
                            {"fpr", fpr},             {"prevalence", prevalence}};
        j["calibrated"] = calibrated ? nlohmann::json(*calibrated) : nlohmann::json(nullptr);
        return j;
    }

    static Decision from_json(const nlohmann::json& j) {
        Decision d;
        d.threshold = j.at("threshold").get<double>();
        d.target_tpr = j.value("target_tpr", 0.9);
        d.tpr = j.at("tpr").get<double>();
        d.fpr = j.at("fpr").get<double>();
        d.prevalence = j.at("prevalence").get<double>();
        if (j.contains("calibrated") && !j.at("calibrated").is_null()) d.calibrated = j.at("calibrated").get<double>();
        return d;
    }
};

/// Threshold for a model trained on every row: pooled inner-CV scores of the
/// same rows and hyperparameters, as in the per-fold procedure.
inline Decision decide_threshold(const FeatureMatrix& X, std::span<const int> y, const PipelineSpec& spec,
                                 const HyperParams& hp, double target_tpr, std::uint64_t seed) {
    const auto oof = detail::cv_scores(X, y, spec, hp, spec.k_inner, derive_seed(seed, 0x746872ULL), nullptr, nullptr);
    Decision d;
    d.target_tpr = target_tpr;
    d.threshold = threshold_for_tpr(oof, y, target_tpr);
    const auto r = rates_at(oof, y, d.threshold);
    d.tpr = r.tpr;
    d.fpr = r.fpr;
    for (int v : y) d.prevalence += v;
    d.prevalence /= static_cast<double>(y.size());
    if (d.tpr + d.fpr > 0.0) d.calibrated = calibrate_probability(d.tpr, d.fpr, d.prevalence);
    return d;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct ModelRun {
    ModelFamily family = ModelFamily::logistic;
    EcgVariant variant = EcgVariant::without;
    NestedCvResult cv;
    RocCurve pooled_roc;
    WelchResult vs_baseline;
    HyperParams final_params;
    std::vector<std::string> final_columns;
    Decision decision;
};

struct BaselineRun {
    std::vector<double> scores;
    AucEstimate estimate;  // same outer splits as the learned models
    BootstrapCi bootstrap;
    RocCurve roc;
};

/// Output documents keyed by relative path. Their contents are a pure
/// function of config and seed; the manifest adds hashes and a timestamp.
struct ReportBundle {
    std::map<std::string, std::string> files;
    std::vector<ModelRun> runs;
    BaselineRun baseline;

    const ModelRun* find(ModelFamily f, EcgVariant v) const {
        for (const auto& r : runs) {
            if (r.family == f && r.variant == v) return &r;
        }
        return nullptr;
    }
};

inline PipelineSpec pipeline_for(const ExperimentConfig& c, ModelFamily f) {
    PipelineSpec p;
    p.family = f;
    p.missing = f == ModelFamily::logistic ? MissingPolicy::median_impute : MissingPolicy::leave_missing;
    p.selection = c.selection;
    p.grid = c.grid;
    p.k_inner = c.k_inner;
    p.target_tpr = c.target_tpr;
    return p;
}

struct FinalModel {
    FittedPipeline pipeline;
    HyperParams params;
    Decision decision;

    nlohmann::json to_json() const {
        auto j = model_to_json(pipeline.model);
        j["decision"] = decision.to_json();
        j["hyperparameters"] = params.to_json();
        return j;
    }
};

/// Grid search, fit and threshold on every row of X.
inline FinalModel train_final_model(const ExperimentConfig& c, const FeatureMatrix& X, std::span<const int> y,
                                    ModelFamily f) {
    const auto spec = pipeline_for(c, f);
    const std::uint64_t seed = derive_seed(c.seed, 0x66696e616cULL);
    const auto gs = grid_search_cv(X, y, spec, c.k_inner, seed);
    FinalModel m{fit_pipeline(X, y, spec, gs.best_params(), derive_seed(seed, 0x66696eULL), nullptr), gs.best_params(), {}};
    m.decision = decide_threshold(X, y, spec, m.params, c.target_tpr, seed);
    return m;
}

namespace detail {

inline std::string roc_svg(const std::vector<std::pair<std::string, const RocCurve*>>& curves) {
    static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    const double size = 360.0, pad = 40.0;
    auto num = [](double v) { return format_fixed(v, 2); };
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(size + 2 * pad) << "\" height=\""
      << num(size + 2 * pad) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s << "<rect x=\"" << num(pad) << "\" y=\"" << num(pad) << "\" width=\"" << num(size) << "\" height=\"" << num(size)
      << "\" fill=\"none\" stroke=\"#000\"/>\n";
    s << "<line x1=\"" << num(pad) << "\" y1=\"" << num(pad + size) << "\" x2=\"" << num(pad + size) << "\" y2=\""
      << num(pad) << "\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n";
    s << "<text x=\"" << num(pad + size / 2) << "\" y=\"" << num(pad + size + 28) << "\" text-anchor=\"middle\">FPR</text>\n";
    s << "<text x=\"12\" y=\"" << num(pad + size / 2) << "\" transform=\"rotate(-90 12 " << num(pad + size / 2)
      << ")\" text-anchor=\"middle\">TPR</text>\n";
    for (std::size_t k = 0; k < curves.size(); ++k) {
        s << "<polyline fill=\"none\" stroke=\"" << colours[k % 6] << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& p : curves[k].second->points) {
            s << num(pad + p.fpr * size) << ',' << num(pad + size - p.tpr * size) << ' ';
        }
        s << "\"/>\n";
        s << "<text x=\"" << num(pad + size - 170) << "\" y=\"" << num(pad + size - 12 - 14.0 * static_cast<double>(k))
          << "\" fill=\"" << colours[k % 6] << "\">" << curves[k].first << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

inline std::string pm(const AucEstimate& e) {
    return format_fixed(e.mean, 3) + " +- " + format_fixed(kFoldCiMultiplier * e.sd, 3);
}

inline std::string pad_right(std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
}

inline std::string run_key(ModelFamily f, EcgVariant v) { return family_name(f) + "_" + variant_name(v); }

}  // namespace detail

/// Table-2-shaped text summary plus the threshold report.
inline std::string summary_text(const ReportBundle& b, const ExperimentConfig& c) {
    std::ostringstream s;
    s << "AUC by model, mean +- 1.98 x SD of " << c.k_outer << " outer-fold AUCs (seed " << c.seed << ")\n\n";
    const std::size_t w0 = 12, w = 24;
    s << detail::pad_right("model", w0);
    for (auto v : c.variants) s << " | " << detail::pad_right(v == EcgVariant::with ? "with ECG" : "without ECG", w);
    s << '\n' << std::string(w0, '-');
    for (std::size_t i = 0; i < c.variants.size(); ++i) s << "-+-" << std::string(w, '-');
    s << '\n';
    for (auto f : c.models) {
        s << detail::pad_right(f == ModelFamily::logistic ? "LR" : "GBDT", w0);
        for (auto v : c.variants) {
            const auto* r = b.find(f, v);
            std::string cell = r ? detail::pm(r->cv.estimate) : "-";
            if (r && r->vs_baseline.p < 0.05) cell += " *";
            s << " | " << detail::pad_right(cell, w);
        }
        s << '\n';
    }
    s << detail::pad_right("baseline", w0);
    for (std::size_t i = 0; i < c.variants.size(); ++i) {
        s << " | " << detail::pad_right(detail::pm(b.baseline.estimate), w);
    }
    s << "\n\n";
    s << "* greater than the baseline, one-sided Welch t-test over fold AUCs, p < 0.05.\n";
    s << "  Fold AUCs share training rows, so the test treats dependent samples as independent.\n";
    s << "Baseline pooled AUC " << format_fixed(b.baseline.bootstrap.point, 3) << ", bootstrap 95% CI ["
      << format_fixed(b.baseline.bootstrap.low, 3) << ", " << format_fixed(b.baseline.bootstrap.high, 3) << "] ("
      << b.baseline.bootstrap.n_boot << " stratified resamples).\n\n";

    s << "Welch one-sided p versus baseline\n";
    for (const auto& r : b.runs) {
        s << "  " << detail::pad_right(detail::run_key(r.family, r.variant), 22) << " t = "
          << format_fixed(r.vs_baseline.t, 3) << ", df = " << format_fixed(r.vs_baseline.df, 2)
          << ", p = " << format_general(r.vs_baseline.p, 4) << (r.vs_baseline.degenerate ? " (zero variance)" : "")
          << '\n';
    }
    s << "\nThresholds at target TPR " << format_fixed(c.target_tpr, 2)
      << " (chosen on training folds, assessed on the held-out fold)\n";
    for (const auto& r : b.runs) {
        double tpr = 0.0, fpr = 0.0;
        std::size_t n = 0;
        for (const auto& f : r.cv.folds) {
            if (!f.threshold) continue;
            tpr += f.threshold->test.tpr;
            fpr += f.threshold->test.fpr;
            ++n;
        }
        if (n == 0) continue;
        s << "  " << detail::pad_right(detail::run_key(r.family, r.variant), 22) << " mean test TPR "
          << format_fixed(tpr / static_cast<double>(n), 3) << ", mean test FPR " << format_fixed(fpr / static_cast<double>(n), 3)
          << "; pooled ROC FPR at TPR " << format_fixed(c.target_tpr, 2) << " = "
          << format_fixed(fpr_at_tpr(r.pooled_roc, c.target_tpr), 3) << '\n';
    }
    s << "  " << detail::pad_right("baseline", 22) << " pooled ROC FPR at TPR " << format_fixed(c.target_tpr, 2) << " = "
      << format_fixed(fpr_at_tpr(b.baseline.roc, c.target_tpr), 3) << '\n';
    return s.str();
}

namespace detail {

inline nlohmann::json threshold_json(const ThresholdResult& t) {
    nlohmann::json j = {{"threshold", t.threshold},
                        {"target_tpr", t.target_tpr},
                        {"train_tpr", t.train.tpr},
                        {"train_fpr", t.train.fpr},
                        {"test_tpr", t.test.tpr},
                        {"test_fpr", t.test.fpr},
                        {"audit_hash", to_hex(t.audit_hash)}};
    j["calibrated_probability"] = t.test.tpr + t.test.fpr > 0.0 ? nlohmann::json(t.calibrated_probability) : nlohmann::json(nullptr);
    return j;
}

inline nlohmann::json run_json(const ModelRun& r) {
    nlohmann::json j;
    j["family"] = family_name(r.family);
    j["ecg"] = r.variant == EcgVariant::with;
    j["auc"] = auc_estimate_to_json(r.cv.estimate);
    j["pooled_oof_auc"] = auc_from_roc(r.pooled_roc);
    j["total_fits"] = r.cv.total_fits;
    j["welch_vs_baseline"] = {{"t", r.vs_baseline.t}, {"df", r.vs_baseline.df}, {"p", r.vs_baseline.p},
                              {"degenerate", r.vs_baseline.degenerate}};
    auto folds = nlohmann::json::array();
    for (std::size_t f = 0; f < r.cv.folds.size(); ++f) {
        const auto& o = r.cv.folds[f];
        nlohmann::json fj = {{"fold", f},
                             {"test_rows", o.test_rows.size()},
                             {"chosen", o.chosen.to_json()},
                             {"grid_auc", o.grid_auc},
                             {"test_auc", o.test_auc},
                             {"fits", o.fits},
                             {"audit_hash", to_hex(o.audit_hash)},
                             {"audit_clean", o.audit_clean}};
        if (!o.selected_columns.empty()) fj["selected_columns"] = o.selected_columns;
        if (o.threshold) fj["threshold"] = threshold_json(*o.threshold);
        folds.push_back(std::move(fj));
    }
    j["folds"] = std::move(folds);
    j["final_model"] = {{"hyperparameters", r.final_params.to_json()}, {"decision", r.decision.to_json()}};
    if (!r.final_columns.empty()) j["final_model"]["selected_columns"] = r.final_columns;
    return j;
}

inline std::string scores_csv(const Cohort& cohort, std::span<const int> y, std::span<const double> oof,
                              std::span<const double> final_scores) {
    std::ostringstream s;
    s << "row,label,oof_score,final_score\n";
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        s << i << ',' << y[i] << ',' << format_double(oof[i]) << ',' << format_double(final_scores[i]) << '\n';
    }
    return s.str();
}

}  // namespace detail

/// Runs every configured model and ECG variant through nested CV, fits the
/// final models, and renders the report bundle. Nothing is written to disk.
inline ReportBundle run_experiment(const ExperimentConfig& c, const Cohort& cohort) {
    cohort.require_both_classes();
    const auto y = cohort.labels();
    const auto baseline_spec = load_baseline_spec(c.baseline_path);
    ReportBundle b;

    // Baseline on the same outer splits nested_cv_auc uses.
    b.baseline.scores = grace_like_scores(cohort.records, baseline_spec);
    {
        const auto splits = detail::make_splits(y, c.k_outer, derive_seed(c.seed, 0x6f75746572ULL));
        std::vector<double> aucs;
        for (const auto& sp : splits) {
            std::vector<double> s;
            for (auto r : sp.test) s.push_back(b.baseline.scores[r]);
            aucs.push_back(auc(s, detail::subset_labels(y, sp.test)));
        }
        b.baseline.estimate = AucEstimate::from_folds(std::move(aucs));
    }
    b.baseline.bootstrap = bootstrap_auc_ci(b.baseline.scores, y, c.n_boot, derive_seed(c.seed, 0x67726163ULL));
    b.baseline.roc = roc_curve(b.baseline.scores, y);

    nlohmann::json eval;
    eval["seed"] = c.seed;
    eval["n_patients"] = cohort.size();
    eval["prevalence"] = static_cast<double>(std::count(y.begin(), y.end(), 1)) / static_cast<double>(y.size());
    eval["k_outer"] = c.k_outer;
    eval["k_inner"] = c.k_inner;
    eval["selection"] = selection_name(c.selection);
    eval["ci_convention"] = AucEstimate{}.convention;
    eval["baseline"] = {{"name", baseline_spec.name},
                        {"auc", auc_estimate_to_json(b.baseline.estimate)},
                        {"bootstrap", {{"point", b.baseline.bootstrap.point},
                                       {"low", b.baseline.bootstrap.low},
                                       {"high", b.baseline.bootstrap.high},
                                       {"n_boot", b.baseline.bootstrap.n_boot}}},
                        {"fpr_at_target_tpr", fpr_at_tpr(b.baseline.roc, c.target_tpr)}};
    b.files["roc_baseline.csv"] = roc_csv(b.baseline.roc);

    std::vector<std::pair<std::string, SelectionResult>> panels;
    eval["runs"] = nlohmann::json::array();

    for (auto v : c.variants) {
        const bool with_ecg = v == EcgVariant::with;
        if (with_ecg && !cohort.has_ecg()) throw DataError("ecg: the cohort carries no ECG traces");
        const FeatureMatrix X = encode_cohort(cohort, with_ecg, with_ecg ? EmbeddingFn(embed_segment) : EmbeddingFn{});

        // Descriptive selection panels on the whole cohort (clinical columns
        // only for the multivariate test; ECG embeddings make it singular).
        {
            const auto Xm = Imputer::fit(X, ImputeKind::mean).apply(X);
            const std::string panel = variant_name(v);
            panels.emplace_back(panel, univariate_select(Xm, y));
            FeatureMatrix clinical = with_ecg ? Xm.select_columns(feature_columns(false)) : Xm;
            try {
                panels.emplace_back(panel, multivariate_select(clinical, y));
            } catch (const NumericError& e) {
                eval["selection_failures"].push_back(panel + ": " + e.what());
            }
            SfsOptions opt;
            opt.seed = derive_seed(c.seed, 0x736673ULL);
            opt.cv_folds = c.k_inner;
            panels.emplace_back(panel, forward_sfs(clinical, y, logistic_fit_score(LogisticOptions{1.0, 1e-6, 200000}), opt));
        }

        for (auto f : c.models) {
            const auto spec = pipeline_for(c, f);
            const std::string key = detail::run_key(f, v);
            ModelRun run;
            run.family = f;
            run.variant = v;
            run.cv = nested_cv_auc(X, y, spec, c.k_outer, c.k_inner, c.seed);
            run.pooled_roc = roc_curve(run.cv.oof_scores, y);
            run.vs_baseline = welch_one_sided_t(run.cv.estimate.fold_aucs, b.baseline.estimate.fold_aucs);

            const auto fm = train_final_model(c, X, y, f);
            const auto& fp = fm.pipeline;
            run.final_params = fm.params;
            run.final_columns = fp.selected_columns;
            run.decision = fm.decision;
            const auto final_scores = score_pipeline(fp, X);

            const auto mj = fm.to_json();
            b.files["model_" + key + ".json"] = mj.dump(2) + "\n";
            b.files["roc_" + key + ".csv"] = roc_csv(run.pooled_roc);
            b.files["scores_" + key + ".csv"] = detail::scores_csv(cohort, y, run.cv.oof_scores, final_scores);

            if (!with_ecg) {
                LookupTable t = f == ModelFamily::gbdt ? gbdt_to_table(std::get<GbdtModel>(fp.model))
                                                       : lr_to_table(std::get<LogisticModel>(fp.model), X, c.table_bins);
                attach_calibration(t, X, y);
                b.files["table_" + family_name(f) + ".txt"] = render_table(t, TableFormat::text);
                b.files["table_" + family_name(f) + ".md"] = render_table(t, TableFormat::markdown);
                b.files["table_" + family_name(f) + ".csv"] = render_table(t, TableFormat::csv);
            }
            eval["runs"].push_back(detail::run_json(run));
            b.runs.push_back(std::move(run));
        }
    }

    std::vector<std::pair<std::string, const RocCurve*>> curves;
    for (const auto& r : b.runs) {
        curves.emplace_back(detail::run_key(r.family, r.variant) + " " + format_fixed(r.cv.estimate.mean, 3), &r.pooled_roc);
    }
    curves.emplace_back("baseline " + format_fixed(b.baseline.estimate.mean, 3), &b.baseline.roc);
    b.files["roc.svg"] = detail::roc_svg(curves);
    b.files["selection_report.csv"] = selection_report_csv(panels);
    auto sel = nlohmann::json::array();
    for (const auto& [panel, r] : panels) {
        auto sj = selection_to_json(r);
        sj["panel"] = panel;
        sel.push_back(std::move(sj));
    }
    eval["selection_panels"] = std::move(sel);
    b.files["evaluation.json"] = eval.dump(2) + "\n";
    b.files["summary.txt"] = summary_text(b, c);
    b.files["config.json"] = c.source.dump(2) + "\n";
    return b;
}

inline ReportBundle run_experiment(const ExperimentConfig& c) { return run_experiment(c, load_experiment_cohort(c)); }

/// Writes the bundle plus manifest.json. Returns the manifest.
inline nlohmann::json write_bundle(const ReportBundle& b, const ExperimentConfig& c, const std::filesystem::path& dir,
                                   const std::string& timestamp) {
    std::filesystem::create_directories(dir);
    nlohmann::json files = nlohmann::json::object();
    std::string joined;
    for (const auto& [name, content] : b.files) {
        const auto path = dir / name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write " + path.string());
        out << content;
        const auto h = sha256_hex(content);
        files[name] = h;
        joined += name + ":" + h + "\n";
    }
    nlohmann::json m;
    m["seed"] = c.seed;
    m["config_hash"] = sha256_hex(c.source.dump());
    m["bundle_hash"] = sha256_hex(joined);
    m["files"] = std::move(files);
    m["timestamp"] = timestamp;
    std::ofstream out(dir / "manifest.json");
    out << m.dump(2) << '\n';
    return m;
}

// ---------------------------------------------------------------------------
// Single-record scoring
// ---------------------------------------------------------------------------

struct RiskReport {
    std::string family;
    double score = 0.0;  // model probability
    std::optional<Decision> decision;
    bool high_risk = false;
    std::optional<double> baseline_score;
    std::vector<std::string> notes;

    std::string text() const {
        std::ostringstream s;
        s << "model:            " << family << '\n';
        s << "risk score:       " << format_fixed(score, 4) << '\n';
        if (decision) {
            s << "threshold:        " << format_fixed(decision->threshold, 4) << " (target TPR "
              << format_fixed(decision->target_tpr, 2) << ")\n";
            s << "decision:         " << (high_risk ? "high risk (score >= threshold)" : "low risk (score < threshold)")
              << '\n';
            s << "training TPR:     " << format_fixed(decision->tpr, 4) << '\n';
            s << "training FPR:     " << format_fixed(decision->fpr, 4) << '\n';
            s << "prevalence:       " << format_fixed(decision->prevalence, 4) << '\n';
            s << "P(rev | above):   "
              << (decision->calibrated ? format_fixed(*decision->calibrated, 5) : std::string("undefined")) << '\n';
        } else {
            s << "decision:         none stored with this model\n";
        }
        if (baseline_score) s << "baseline score:   " << format_fixed(*baseline_score, 1) << '\n';
        for (const auto& n : notes) s << "note: " << n << '\n';
        return s.str();
    }
};

inline RiskReport score_record(const nlohmann::json& model_doc, const PatientRecord& rec,
                               const BaselineScoreSpec* baseline = nullptr) {
    const Model m = model_from_json(model_doc);
    RiskReport r;
    r.family = model_family(m);
    r.score = predict_model(m, rec);
    if (model_doc.contains("decision")) {
        try {
            r.decision = Decision::from_json(model_doc.at("decision"));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("model decision block: ") + e.what());
        }
        r.high_risk = r.score >= r.decision->threshold;
    }
    for (const auto& col : model_columns(m)) {
        if (col.kind == ColumnKind::ecg_embedding) continue;
        if (rec.get(col.source_field)) continue;
        if (const auto* lr = std::get_if<LogisticModel>(&m)) {
            const auto fill = lr->imputer.fill_for(col.name);
            r.notes.push_back("'" + col.source_field + "' missing; training median " +
                              (fill ? format_general(col.transform == Transform::log ? std::exp(*fill) : *fill, 6) : "?") +
                              " applied to '" + col.name + "'");
        } else {
            r.notes.push_back("'" + col.source_field + "' missing; trees follow their default direction");
        }
    }
    if (model_uses_ecg(m) && !rec.ecg) r.notes.push_back("no ECG trace; embedding columns treated as missing");
    if (baseline) {
        try {
            r.baseline_score = grace_like_score(rec, *baseline);
        } catch (const DataError& e) {
            r.notes.push_back(std::string("baseline score unavailable: ") + e.what());
        }
    }
    return r;
}

}  // namespace riskstrat
