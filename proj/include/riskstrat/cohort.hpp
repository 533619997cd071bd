#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskstrat/common.hpp"
#include "riskstrat/ecg_trace.hpp"

namespace riskstrat {

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

enum class FieldKind { numeric, binary };

struct FieldInfo {
    std::string_view name;
    FieldKind kind;
    std::string_view unit;
    bool log_transform;
    // Binary fields store 1.0 for `positive_label` and 0.0 for `negative_label`.
    std::string_view positive_label;
    std::string_view negative_label;
};

inline constexpr std::size_t kNumFields = 20;

inline constexpr std::array<FieldInfo, kNumFields> kFields = {{
    {"age", FieldKind::numeric, "years", false, "", ""},
    {"bmi", FieldKind::numeric, "kg/m2", false, "", ""},
    {"gender", FieldKind::binary, "", false, "male", "female"},
    {"heart_rate", FieldKind::numeric, "beats/min", false, "", ""},
    {"sbp", FieldKind::numeric, "mmHg", false, "", ""},
    {"dbp", FieldKind::numeric, "mmHg", false, "", ""},
    {"smoking", FieldKind::binary, "", false, "positive", "negative"},
    {"diabetes", FieldKind::binary, "", false, "positive", "negative"},
    {"hypertension", FieldKind::binary, "", false, "positive", "negative"},
    {"st_deviation", FieldKind::binary, "", false, "positive", "negative"},
    {"glycerin_tricaproate", FieldKind::numeric, "mmol/L", true, "", ""},
    {"ldl", FieldKind::numeric, "mmol/L", true, "", ""},
    {"hdl", FieldKind::numeric, "mmol/L", true, "", ""},
    {"ckmb", FieldKind::numeric, "ng/ml", true, "", ""},
    {"bnp", FieldKind::numeric, "pg/ml", true, "", ""},
    {"d_dimer", FieldKind::numeric, "mg/L", true, "", ""},
    {"myoglobin", FieldKind::numeric, "ng/ml", true, "", ""},
    {"crp", FieldKind::numeric, "mg/L", true, "", ""},
    {"tni", FieldKind::numeric, "ng/ml", true, "", ""},
    {"scr", FieldKind::numeric, "umol/L", true, "", ""},
}};

inline constexpr std::string_view kLabelColumn = "revascularized";
inline constexpr std::string_view kEcgColumn = "ecg_trace";

inline std::optional<std::size_t> field_index(std::string_view name) {
    for (std::size_t i = 0; i < kNumFields; ++i) {
        if (kFields[i].name == name) return i;
    }
    return std::nullopt;
}

inline std::size_t require_field(std::string_view name) {
    auto idx = field_index(name);
    if (!idx) throw DataError("unknown field '" + std::string(name) + "'");
    return *idx;
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

struct PatientRecord {
    std::array<std::optional<double>, kNumFields> values{};
    std::optional<int> revascularized;
    std::shared_ptr<const EcgTrace> ecg;

    const std::optional<double>& get(std::string_view name) const { return values[require_field(name)]; }
    void set(std::string_view name, std::optional<double> v) { values[require_field(name)] = v; }

    friend bool operator==(const PatientRecord& a, const PatientRecord& b) {
        if (a.values != b.values || a.revascularized != b.revascularized) return false;
        if (static_cast<bool>(a.ecg) != static_cast<bool>(b.ecg)) return false;
        return !a.ecg || *a.ecg == *b.ecg;
    }
};

struct InjectedError {
    std::size_t row;
    std::size_t field;
    double original;
    double corrupted;
    std::string kind;  // "decimal_shift" or "digit_drop"
};

struct Cohort {
    std::vector<PatientRecord> records;
    std::string provenance;
    // Ground truth for synthetic cohorts; empty for loaded data.
    std::vector<InjectedError> injected_errors;

    std::size_t size() const { return records.size(); }

    bool labeled() const {
        return !records.empty() && std::all_of(records.begin(), records.end(),
                                               [](const auto& r) { return r.revascularized.has_value(); });
    }

    std::vector<int> labels() const {
        std::vector<int> y;
        y.reserve(records.size());
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (!records[i].revascularized) {
                throw DataError("record " + std::to_string(i + 1) + " has no revascularized label");
            }
            y.push_back(*records[i].revascularized);
        }
        return y;
    }

    bool has_ecg() const {
        return std::any_of(records.begin(), records.end(), [](const auto& r) { return r.ecg != nullptr; });
    }

    // Both classes must be present before a cohort is used for training.
    void require_both_classes() const {
        const auto y = labels();
        const auto pos = std::count(y.begin(), y.end(), 1);
        if (pos == 0 || pos == static_cast<long>(y.size())) {
            throw DataError("cohort labels contain a single class");
        }
    }
};

// ---------------------------------------------------------------------------
// Generative specification
// ---------------------------------------------------------------------------

enum class Distribution { normal, lognormal, categorical };

struct Marginal {
    Distribution distribution = Distribution::normal;
    double mean = 0.0;
    double sd = 1.0;
    double p = 0.5;  // categorical: probability of the positive label
    std::optional<double> min;
    std::optional<double> max;

    // Parameters of the underlying normal for lognormal marginals, matched to
    // the requested arithmetic mean and SD.
    double log_sigma() const { return std::sqrt(std::log1p((sd * sd) / (mean * mean))); }
    double log_mu() const {
        const double s = log_sigma();
        return std::log(mean) - 0.5 * s * s;
    }
};

struct ErrorInjection {
    double decimal_shift_rate = 0.0;
    double digit_drop_rate = 0.0;
};

// Optional latent ECG component: a per-patient ST-segment shift that enters
// the generative log-odds with `coefficient`.
struct EcgGeneration {
    bool enabled = false;
    double coefficient = 0.0;
    double st_shift_mv = 0.1;
};

struct CohortSpec {
    std::size_t n_patients = 640;
    double prevalence = 0.5;
    std::array<Marginal, kNumFields> marginals{};
    std::array<double, kNumFields> true_coefficients{};
    std::array<double, kNumFields> missingness_rate{};
    ErrorInjection error_injection;
    EcgGeneration ecg;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (n_patients == 0) throw ConfigError("n_patients must be positive");
        if (!(prevalence > 0.0 && prevalence < 1.0)) throw ConfigError("prevalence must lie in (0, 1)");
        for (std::size_t f = 0; f < kNumFields; ++f) {
            const std::string name(kFields[f].name);
            const auto& m = marginals[f];
            if (!(missingness_rate[f] >= 0.0 && missingness_rate[f] < 1.0)) {
                throw ConfigError("missingness_rate." + name + " must lie in [0, 1)");
            }
            if (!std::isfinite(true_coefficients[f])) {
                throw ConfigError("true_coefficients." + name + " must be finite");
            }
            if (kFields[f].kind == FieldKind::binary) {
                if (m.distribution != Distribution::categorical) {
                    throw ConfigError("marginals." + name + " must be categorical");
                }
                if (!(m.p > 0.0 && m.p < 1.0)) throw ConfigError("marginals." + name + ".p must lie in (0, 1)");
            } else {
                if (m.distribution == Distribution::categorical) {
                    throw ConfigError("marginals." + name + " must be normal or lognormal");
                }
                if (!(m.sd > 0.0)) throw ConfigError("marginals." + name + ".sd must be positive");
                if (m.distribution == Distribution::lognormal && !(m.mean > 0.0)) {
                    throw ConfigError("marginals." + name + ".mean must be positive for lognormal");
                }
                if (kFields[f].log_transform && m.distribution == Distribution::normal &&
                    !(m.min && *m.min > 0.0)) {
                    throw ConfigError("marginals." + name + " feeds a log transform and needs min > 0");
                }
            }
        }
        for (double r : {error_injection.decimal_shift_rate, error_injection.digit_drop_rate}) {
            if (!(r >= 0.0 && r < 1.0)) throw ConfigError("error_injection rates must lie in [0, 1)");
        }
    }

    /// Marginals shaped like the reference cohort: means, SDs and missing
    /// rates for every numeric field; lognormal biomarkers; zero signal.
    static CohortSpec reference_defaults() {
        CohortSpec s;
        auto normal = [](double m, double sd) { return Marginal{Distribution::normal, m, sd, 0.5, {}, {}}; };
        auto lognormal = [](double m, double sd) { return Marginal{Distribution::lognormal, m, sd, 0.5, {}, {}}; };
        auto cat = [](double p) { return Marginal{Distribution::categorical, 0.0, 1.0, p, {}, {}}; };
        struct Row { const char* name; Marginal m; double missing; };
        const Row rows[] = {
            {"age", Marginal{Distribution::normal, 65.4, 9.3, 0.5, 18.0, 110.0}, 0.0},
            {"bmi", normal(24.6, 3.5), 0.078},
            {"gender", cat(0.65), 0.0},
            {"heart_rate", normal(81.2, 12.6), 0.036},
            {"sbp", normal(137.2, 20.3), 0.0},
            {"dbp", normal(79.3, 11.7), 0.0},
            {"smoking", cat(0.35), 0.0},
            {"diabetes", cat(0.30), 0.0},
            {"hypertension", cat(0.65), 0.0},
            {"st_deviation", cat(150.0 / 640.0), 0.0},
            {"glycerin_tricaproate", lognormal(1.6, 1.1), 0.080},
            {"ldl", lognormal(2.9, 1.6), 0.069},
            {"hdl", lognormal(1.1, 0.3), 0.114},
            {"ckmb", lognormal(2.8, 9.8), 0.026},
            {"bnp", lognormal(91.5, 268.5), 0.075},
            {"d_dimer", lognormal(0.47, 0.72), 0.188},
            {"myoglobin", lognormal(39.9, 172.1), 0.019},
            {"crp", lognormal(3.3, 8.8), 0.201},
            {"tni", lognormal(0.1, 1.3), 0.055},
            {"scr", lognormal(77.0, 81.4), 0.075},
        };
        for (const auto& r : rows) {
            const auto f = require_field(r.name);
            s.marginals[f] = r.m;
            s.missingness_rate[f] = r.missing;
        }
        s.prevalence = 284.0 / 640.0;
        return s;
    }
};

// ---------------------------------------------------------------------------
// JSON (fields verbatim)
// ---------------------------------------------------------------------------

inline std::string_view distribution_name(Distribution d) {
    switch (d) {
        case Distribution::normal: return "normal";
        case Distribution::lognormal: return "lognormal";
        case Distribution::categorical: return "categorical";
    }
    return "normal";
}

inline nlohmann::json cohort_spec_to_json(const CohortSpec& s) {
    nlohmann::json j;
    j["n_patients"] = s.n_patients;
    j["prevalence"] = s.prevalence;
    j["rng_seed"] = s.rng_seed;
    for (std::size_t f = 0; f < kNumFields; ++f) {
        const std::string name(kFields[f].name);
        const auto& m = s.marginals[f];
        nlohmann::json mj;
        mj["distribution"] = distribution_name(m.distribution);
        if (m.distribution == Distribution::categorical) {
            mj["p"] = m.p;
        } else {
            mj["mean"] = m.mean;
            mj["sd"] = m.sd;
            if (m.min) mj["min"] = *m.min;
            if (m.max) mj["max"] = *m.max;
        }
        j["marginals"][name] = mj;
        j["true_coefficients"][name] = s.true_coefficients[f];
        j["missingness_rate"][name] = s.missingness_rate[f];
    }
    j["error_injection"] = {{"decimal_shift_rate", s.error_injection.decimal_shift_rate},
                            {"digit_drop_rate", s.error_injection.digit_drop_rate}};
    j["ecg"] = {{"enabled", s.ecg.enabled}, {"coefficient", s.ecg.coefficient}, {"st_shift_mv", s.ecg.st_shift_mv}};
    return j;
}

/// Parses a cohort spec. Fields omitted from `marginals` keep the reference
/// defaults; omitted coefficients and missingness rates are zero.
/// `"missingness_rate": "reference"` selects the reference missingness profile.
inline CohortSpec cohort_spec_from_json(const nlohmann::json& j) {
    auto check_keys = [](const nlohmann::json& obj, const std::string& section) {
        if (!obj.is_object()) throw ConfigError(section + " must be an object");
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            if (!field_index(it.key())) throw ConfigError(section + ": unknown field '" + it.key() + "'");
        }
    };
    try {
        CohortSpec s = CohortSpec::reference_defaults();
        if (j.value("base", std::string("reference")) != "reference") {
            throw ConfigError("base: only \"reference\" is supported");
        }
        const bool reference_missingness =
            j.contains("missingness_rate") && j["missingness_rate"].is_string();
        if (reference_missingness && j["missingness_rate"].get<std::string>() != "reference") {
            throw ConfigError("missingness_rate: only the string \"reference\" is accepted in place of an object");
        }
        if (!reference_missingness) s.missingness_rate.fill(0.0);
        s.n_patients = j.at("n_patients").get<std::size_t>();
        s.prevalence = j.at("prevalence").get<double>();
        s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
        if (j.contains("marginals")) {
            check_keys(j["marginals"], "marginals");
            for (auto it = j["marginals"].begin(); it != j["marginals"].end(); ++it) {
                const auto f = *field_index(it.key());
                const auto& mj = it.value();
                Marginal m = s.marginals[f];
                const auto dist = mj.value("distribution", std::string(distribution_name(m.distribution)));
                if (dist == "normal") m.distribution = Distribution::normal;
                else if (dist == "lognormal") m.distribution = Distribution::lognormal;
                else if (dist == "categorical") m.distribution = Distribution::categorical;
                else throw ConfigError("marginals." + it.key() + ".distribution: unknown '" + dist + "'");
                m.mean = mj.value("mean", m.mean);
                m.sd = mj.value("sd", m.sd);
                m.p = mj.value("p", m.p);
                if (mj.contains("min")) m.min = mj["min"].get<double>();
                if (mj.contains("max")) m.max = mj["max"].get<double>();
                s.marginals[f] = m;
            }
        }
        if (j.contains("true_coefficients")) {
            check_keys(j["true_coefficients"], "true_coefficients");
            for (auto it = j["true_coefficients"].begin(); it != j["true_coefficients"].end(); ++it) {
                s.true_coefficients[*field_index(it.key())] = it.value().get<double>();
            }
        }
        if (j.contains("missingness_rate") && !reference_missingness) {
            check_keys(j["missingness_rate"], "missingness_rate");
            for (auto it = j["missingness_rate"].begin(); it != j["missingness_rate"].end(); ++it) {
                s.missingness_rate[*field_index(it.key())] = it.value().get<double>();
            }
        }
        if (j.contains("error_injection")) {
            const auto& e = j["error_injection"];
            s.error_injection.decimal_shift_rate = e.value("decimal_shift_rate", 0.0);
            s.error_injection.digit_drop_rate = e.value("digit_drop_rate", 0.0);
        }
        if (j.contains("ecg")) {
            const auto& e = j["ecg"];
            s.ecg.enabled = e.value("enabled", false);
            s.ecg.coefficient = e.value("coefficient", 0.0);
            s.ecg.st_shift_mv = e.value("st_shift_mv", 0.1);
        }
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("cohort spec: ") + e.what());
    }
}

inline CohortSpec load_cohort_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open cohort spec " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return cohort_spec_from_json(j);
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace detail {

struct LatentDraw {
    std::array<double, kNumFields> raw{};
    std::array<double, kNumFields> standardized{};
    double ecg_latent = 0.0;
};

inline LatentDraw draw_patient(const CohortSpec& spec, Rng& rng) {
    LatentDraw d;
    for (std::size_t f = 0; f < kNumFields; ++f) {
        const auto& m = spec.marginals[f];
        switch (m.distribution) {
            case Distribution::normal: {
                double x = m.mean + m.sd * rng.normal();
                if (m.min) x = std::max(x, *m.min);
                if (m.max) x = std::min(x, *m.max);
                d.raw[f] = x;
                d.standardized[f] = (x - m.mean) / m.sd;
                break;
            }
            case Distribution::lognormal: {
                const double z = rng.normal();
                double x = std::exp(m.log_mu() + m.log_sigma() * z);
                if (m.min) x = std::max(x, *m.min);
                if (m.max) x = std::min(x, *m.max);
                d.raw[f] = x;
                d.standardized[f] = (std::log(x) - m.log_mu()) / m.log_sigma();
                break;
            }
            case Distribution::categorical: {
                const bool pos = rng.bernoulli(m.p);
                d.raw[f] = pos ? 1.0 : 0.0;
                d.standardized[f] = ((pos ? 1.0 : 0.0) - m.p) / std::sqrt(m.p * (1.0 - m.p));
                break;
            }
        }
    }
    if (spec.ecg.enabled) d.ecg_latent = rng.normal();
    return d;
}

inline double linear_signal(const CohortSpec& spec, const LatentDraw& d) {
    double s = 0.0;
    for (std::size_t f = 0; f < kNumFields; ++f) s += spec.true_coefficients[f] * d.standardized[f];
    if (spec.ecg.enabled) s += spec.ecg.coefficient * d.ecg_latent;
    return s;
}

// Intercept b such that mean(sigmoid(b + s_i)) equals the target.
inline double solve_intercept(std::span<const double> signal, double target) {
    double lo = -60.0, hi = 60.0;
    auto mean_prob = [&](double b) {
        double acc = 0.0;
        for (double s : signal) acc += sigmoid(b + s);
        return acc / static_cast<double>(signal.size());
    };
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
        const double mid = 0.5 * (lo + hi);
        (mean_prob(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// Removes one digit from the two-decimal text of `value`.
inline std::optional<double> drop_digit(double value, Rng& rng) {
    const std::string text = format_fixed(value, 2);
    std::vector<std::size_t> digit_pos;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (std::isdigit(static_cast<unsigned char>(text[i]))) digit_pos.push_back(i);
    }
    if (digit_pos.size() < 2) return std::nullopt;
    const std::size_t start = rng.index(digit_pos.size());
    for (std::size_t k = 0; k < digit_pos.size(); ++k) {
        std::string t = text;
        t.erase(digit_pos[(start + k) % digit_pos.size()], 1);
        double v = 0.0;
        if (parse_double(t, v) && v > 0.0 && v != value && std::abs(v - value) > 1e-9 * value) return v;
    }
    return std::nullopt;
}

// Twelve-lead 2.5 s segment at 57 Hz: Gaussian P/QRS/T complexes at the
// patient's heart rate, per-lead gains and an ST-segment shift driven by the
// latent ECG variable.
inline EcgTrace synthesize_segment(double heart_rate, double st_shift, Rng& rng) {
    constexpr double kRate = 57.0;
    constexpr std::size_t kSamples = 142;
    static constexpr std::array<double, 12> kGain = {0.8, 1.0, 0.4, -0.9, 0.3, 0.7,
                                                     -0.6, 0.2, 0.9, 1.2, 1.0, 0.8};
    static constexpr std::array<double, 12> kStWeight = {0.2, 0.4, 0.2, -0.2, 0.1, 0.3,
                                                         0.8, 1.0, 1.0, 0.8, 0.6, 0.4};
    const double rr = 60.0 / std::clamp(heart_rate, 35.0, 180.0);
    const double phase = rng.uniform(0.0, rr);
    EcgTrace t;
    t.sample_rate = kRate;
    for (std::size_t c = 0; c < 12; ++c) {
        t.lead_names.emplace_back(kLeadNames[c]);
        const double gain = kGain[c] * (1.0 + 0.1 * rng.normal());
        std::vector<double> ch(kSamples);
        for (std::size_t i = 0; i < kSamples; ++i) {
            const double time = static_cast<double>(i) / kRate + phase;
            const double u = std::fmod(time, rr);
            auto bump = [&](double centre, double width, double amp) {
                const double d = (u - centre) / width;
                return amp * std::exp(-0.5 * d * d);
            };
            double v = bump(0.10, 0.025, 0.15) + bump(0.20, 0.012, 1.0) - bump(0.23, 0.01, 0.25) +
                       bump(0.40, 0.045, 0.3);
            v *= gain;
            if (u > 0.24 && u < 0.34) v += kStWeight[c] * st_shift;
            ch[i] = v + 0.02 * rng.normal();
        }
        t.channels.push_back(std::move(ch));
    }
    return t;
}

}  // namespace detail

/// Draws a synthetic cohort whose labels follow a logistic-linear model in the
/// standardized features. Independent random streams drive features, labels,
/// missingness, corruption and ECG synthesis, so enabling one stage never
/// perturbs the draws of another.
inline Cohort generate_cohort(const CohortSpec& spec) {
    spec.validate();
    const std::size_t n = spec.n_patients;
    Rng feature_rng(derive_seed(spec.rng_seed, 1));
    Rng label_rng(derive_seed(spec.rng_seed, 2));
    Rng missing_rng(derive_seed(spec.rng_seed, 3));
    Rng error_rng(derive_seed(spec.rng_seed, 4));
    Rng ecg_rng(derive_seed(spec.rng_seed, 5));

    std::vector<detail::LatentDraw> draws;
    draws.reserve(n);
    std::vector<double> signal(n);
    for (std::size_t i = 0; i < n; ++i) {
        draws.push_back(detail::draw_patient(spec, feature_rng));
        signal[i] = detail::linear_signal(spec, draws.back());
    }
    const double intercept = detail::solve_intercept(signal, spec.prevalence);

    Cohort cohort;
    cohort.provenance = "synthetic(seed=" + std::to_string(spec.rng_seed) + ")";
    cohort.records.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& rec = cohort.records[i];
        rec.revascularized = label_rng.bernoulli(sigmoid(intercept + signal[i])) ? 1 : 0;
        for (std::size_t f = 0; f < kNumFields; ++f) {
            const bool missing = missing_rng.bernoulli(spec.missingness_rate[f]);
            if (!missing) rec.values[f] = draws[i].raw[f];
        }
    }

    const auto& inj = spec.error_injection;
    if (inj.decimal_shift_rate > 0.0 || inj.digit_drop_rate > 0.0) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t f = 0; f < kNumFields; ++f) {
                auto& v = cohort.records[i].values[f];
                if (kFields[f].kind != FieldKind::numeric || !v) continue;
                const double u = error_rng.uniform();
                if (u < inj.decimal_shift_rate) {
                    const double corrupted = *v * (error_rng.bernoulli(0.5) ? 10.0 : 0.1);
                    cohort.injected_errors.push_back({i, f, *v, corrupted, "decimal_shift"});
                    v = corrupted;
                } else if (u < inj.decimal_shift_rate + inj.digit_drop_rate) {
                    if (auto c = detail::drop_digit(*v, error_rng)) {
                        cohort.injected_errors.push_back({i, f, *v, *c, "digit_drop"});
                        v = *c;
                    }
                }
            }
        }
    }

    if (spec.ecg.enabled) {
        const auto hr = require_field("heart_rate");
        for (std::size_t i = 0; i < n; ++i) {
            const double rate = draws[i].raw[hr];
            cohort.records[i].ecg = std::make_shared<const EcgTrace>(
                detail::synthesize_segment(rate, spec.ecg.st_shift_mv * draws[i].ecg_latent, ecg_rng));
        }
    }
    return cohort;
}

/// Monte-Carlo AUC of the true generative log-odds.
///
/// Labels are integrated out analytically: each draw contributes to the
/// positive and negative class with weights p and 1 - p, which removes the
/// label-sampling noise from the estimate. Pairs of a draw with itself are
/// excluded.
inline double oracle_bayes_auc(const CohortSpec& spec, std::size_t n_mc = 200000) {
    spec.validate();
    if (n_mc < 100000) throw ConfigError("oracle_bayes_auc needs n_mc >= 100000");
    Rng rng(derive_seed(spec.rng_seed, 0x0dac1e));
    std::vector<double> signal(n_mc);
    for (auto& s : signal) s = detail::linear_signal(spec, detail::draw_patient(spec, rng));
    const double intercept = detail::solve_intercept(signal, spec.prevalence);

    std::sort(signal.begin(), signal.end());
    long double neg_below = 0.0L, num = 0.0L, pos_total = 0.0L, neg_total = 0.0L, self = 0.0L;
    std::size_t i = 0;
    while (i < n_mc) {
        std::size_t j = i;
        long double gp = 0.0L, gn = 0.0L, gself = 0.0L;
        while (j < n_mc && signal[j] == signal[i]) {
            const long double p = sigmoid(intercept + signal[j]);
            gp += p;
            gn += 1.0L - p;
            gself += p * (1.0L - p);
            ++j;
        }
        // Within a tie group every ordered pair i != j counts one half.
        num += gp * neg_below + 0.5L * (gp * gn - gself);
        neg_below += gn;
        pos_total += gp;
        neg_total += gn;
        self += gself;
        i = j;
    }
    return static_cast<double>(num / (pos_total * neg_total - self));
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string format_field(std::size_t f, double v) {
    if (kFields[f].kind == FieldKind::binary) {
        return std::string(v != 0.0 ? kFields[f].positive_label : kFields[f].negative_label);
    }
    return format_double(v);
}

/// Writes the cohort. When records carry ECG traces and `ecg_dir` is given,
/// each trace is written as `<ecg_dir>/<row>.csv` and referenced from an
/// `ecg_trace` column (paths relative to the cohort file).
inline void write_cohort_csv(const Cohort& cohort, std::ostream& out,
                             const std::vector<std::string>& ecg_refs = {}) {
    for (std::size_t f = 0; f < kNumFields; ++f) out << kFields[f].name << ',';
    out << kLabelColumn;
    const bool with_ecg = !ecg_refs.empty();
    if (with_ecg) out << ',' << kEcgColumn;
    out << '\n';
    for (std::size_t i = 0; i < cohort.records.size(); ++i) {
        const auto& r = cohort.records[i];
        for (std::size_t f = 0; f < kNumFields; ++f) {
            if (r.values[f]) out << format_field(f, *r.values[f]);
            out << ',';
        }
        if (r.revascularized) out << *r.revascularized;
        if (with_ecg) out << ',' << ecg_refs[i];
        out << '\n';
    }
}

inline void save_cohort(const Cohort& cohort, const std::string& path, bool write_ecg = true) {
    namespace fs = std::filesystem;
    std::vector<std::string> refs;
    if (write_ecg && cohort.has_ecg()) {
        const fs::path p(path);
        const fs::path dir_name = p.stem().string() + "_ecg";
        fs::create_directories(p.parent_path() / dir_name);
        for (std::size_t i = 0; i < cohort.records.size(); ++i) {
            if (!cohort.records[i].ecg) {
                refs.emplace_back();
                continue;
            }
            const auto rel = (dir_name / (std::to_string(i + 1) + ".csv")).string();
            save_trace_csv(*cohort.records[i].ecg, (p.parent_path() / rel).string());
            refs.push_back(rel);
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write cohort file " + path);
    write_cohort_csv(cohort, out, refs);
}

/// Parses a cohort CSV. `base_dir` resolves relative `ecg_trace` paths.
inline Cohort read_cohort_csv(std::istream& in, const std::string& origin = "<stream>",
                              const std::filesystem::path& base_dir = {}) {
    std::string line;
    if (!std::getline(in, line)) throw DataError(origin + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split(line, ',');

    std::vector<std::optional<std::size_t>> col_field(header.size());
    std::optional<std::size_t> label_col, ecg_col;
    std::vector<std::string> unknown;
    std::array<bool, kNumFields> seen{};
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == kLabelColumn) {
            label_col = c;
        } else if (header[c] == kEcgColumn) {
            ecg_col = c;
        } else if (auto f = field_index(header[c])) {
            if (seen[*f]) throw DataError(origin + ": duplicate column '" + header[c] + "'");
            seen[*f] = true;
            col_field[c] = f;
        } else {
            unknown.push_back(header[c]);
        }
    }
    if (!unknown.empty()) {
        std::string msg = origin + ": unknown column(s):";
        for (const auto& u : unknown) msg += " '" + u + "'";
        throw DataError(msg);
    }
    for (std::size_t f = 0; f < kNumFields; ++f) {
        if (!seen[f]) throw DataError(origin + ": missing column '" + std::string(kFields[f].name) + "'");
    }

    Cohort cohort;
    cohort.provenance = "loaded(" + origin + ")";
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        const auto cells = split(line, ',');
        if (cells.size() != header.size()) {
            throw DataError(origin + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                            " cells, expected " + std::to_string(header.size()));
        }
        PatientRecord rec;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const auto& cell = cells[c];
            auto cell_error = [&](const std::string& what) {
                return DataError(origin + ": " + what + " at (row " + std::to_string(row) + ", \"" + header[c] +
                                 "\"): '" + cell + "'");
            };
            if (col_field[c]) {
                if (cell.empty()) continue;
                const auto f = *col_field[c];
                if (kFields[f].kind == FieldKind::binary) {
                    if (cell == kFields[f].positive_label) rec.values[f] = 1.0;
                    else if (cell == kFields[f].negative_label) rec.values[f] = 0.0;
                    else throw cell_error("invalid category");
                } else {
                    double v = 0.0;
                    if (!parse_double(cell, v) || !std::isfinite(v)) throw cell_error("non-numeric value");
                    if (kFields[f].log_transform && v <= 0.0) throw cell_error("non-positive biomarker");
                    rec.values[f] = v;
                }
            } else if (label_col && c == *label_col) {
                if (cell.empty()) continue;
                if (cell == "1") rec.revascularized = 1;
                else if (cell == "0") rec.revascularized = 0;
                else throw cell_error("label must be 0 or 1");
            } else if (ecg_col && c == *ecg_col) {
                if (cell.empty()) continue;
                rec.ecg = std::make_shared<const EcgTrace>(load_trace_csv((base_dir / cell).string()));
            }
        }
        cohort.records.push_back(std::move(rec));
    }
    if (cohort.records.empty()) throw DataError(origin + ": cohort is empty");
    return cohort;
}

inline Cohort load_cohort(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open cohort file " + path);
    return read_cohort_csv(in, path, std::filesystem::path(path).parent_path());
}

}  // namespace riskstrat
