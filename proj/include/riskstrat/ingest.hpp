#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskstrat/cohort.hpp"
#include "riskstrat/common.hpp"

namespace riskstrat {

inline constexpr std::size_t kEmbeddingDim = 128;

enum class ColumnKind { numeric, onehot, ecg_embedding };
enum class Transform { identity, log };

inline std::string_view column_kind_name(ColumnKind k) {
    switch (k) {
        case ColumnKind::numeric: return "numeric";
        case ColumnKind::onehot: return "onehot";
        case ColumnKind::ecg_embedding: return "ecg_embedding";
    }
    return "numeric";
}

inline std::string_view transform_name(Transform t) { return t == Transform::log ? "log" : "identity"; }

struct ColumnMeta {
    std::string name;
    ColumnKind kind = ColumnKind::numeric;
    Transform transform = Transform::identity;
    std::string source_field;
    std::string category;    // onehot only
    std::size_t index = 0;   // ecg_embedding only

    friend bool operator==(const ColumnMeta&, const ColumnMeta&) = default;
};

inline nlohmann::json column_to_json(const ColumnMeta& c) {
    nlohmann::json j = {{"name", c.name},
                        {"kind", column_kind_name(c.kind)},
                        {"transform", transform_name(c.transform)},
                        {"source_field", c.source_field}};
    if (c.kind == ColumnKind::onehot) j["category"] = c.category;
    if (c.kind == ColumnKind::ecg_embedding) j["index"] = c.index;
    return j;
}

inline ColumnMeta column_from_json(const nlohmann::json& j) {
    ColumnMeta c;
    c.name = j.at("name").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "numeric") c.kind = ColumnKind::numeric;
    else if (kind == "onehot") c.kind = ColumnKind::onehot;
    else if (kind == "ecg_embedding") c.kind = ColumnKind::ecg_embedding;
    else throw DataError("unknown column kind '" + kind + "'");
    const auto tr = j.at("transform").get<std::string>();
    if (tr == "log") c.transform = Transform::log;
    else if (tr == "identity") c.transform = Transform::identity;
    else throw DataError("unknown transform '" + tr + "'");
    c.source_field = j.at("source_field").get<std::string>();
    c.category = j.value("category", std::string());
    c.index = j.value("index", std::size_t{0});
    return c;
}

/// Dense row-major matrix with a per-cell missingness mask.
///
/// Values behind a set mask bit are placeholders (NaN, or -1 under the
/// sentinel policy) and no operation may depend on them. `row_ids` carry the
/// originating cohort row of every matrix row through subsetting.
class FeatureMatrix {
public:
    FeatureMatrix() = default;
    FeatureMatrix(std::size_t rows, std::vector<ColumnMeta> columns)
        : rows_(rows), columns_(std::move(columns)),
          values_(rows_ * columns_.size(), std::numeric_limits<double>::quiet_NaN()),
          mask_(rows_ * columns_.size(), 1), row_ids_(rows) {
        for (std::size_t i = 0; i < rows_; ++i) row_ids_[i] = i;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return columns_.size(); }
    const std::vector<ColumnMeta>& columns() const { return columns_; }
    const ColumnMeta& column(std::size_t c) const { return columns_[c]; }
    const std::vector<std::size_t>& row_ids() const { return row_ids_; }
    std::vector<std::size_t>& row_ids() { return row_ids_; }

    bool missing(std::size_t r, std::size_t c) const { return mask_[r * cols() + c] != 0; }
    double value(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
    std::optional<double> get(std::size_t r, std::size_t c) const {
        if (missing(r, c)) return std::nullopt;
        return value(r, c);
    }
    void set(std::size_t r, std::size_t c, double v) {
        values_[r * cols() + c] = v;
        mask_[r * cols() + c] = 0;
    }
    void set_missing(std::size_t r, std::size_t c, double placeholder) {
        values_[r * cols() + c] = placeholder;
        mask_[r * cols() + c] = 1;
    }
    // Overwrites placeholders behind masked cells; used to check opacity.
    void set_placeholder(std::size_t r, std::size_t c, double placeholder) {
        if (missing(r, c)) values_[r * cols() + c] = placeholder;
    }

    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }

    std::size_t missing_count() const { return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), 1)); }
    bool fully_observed() const { return missing_count() == 0; }

    std::optional<std::size_t> column_index(std::string_view name) const {
        for (std::size_t c = 0; c < columns_.size(); ++c) {
            if (columns_[c].name == name) return c;
        }
        return std::nullopt;
    }

    std::vector<std::optional<double>> column_values(std::size_t c) const {
        std::vector<std::optional<double>> out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = get(r, c);
        return out;
    }

    std::vector<double> observed(std::size_t c) const {
        std::vector<double> out;
        for (std::size_t r = 0; r < rows_; ++r) {
            if (!missing(r, c)) out.push_back(value(r, c));
        }
        return out;
    }

    /// Copies the given rows. Only the listed rows are read.
    FeatureMatrix subset_rows(std::span<const std::size_t> rows) const {
        FeatureMatrix out(rows.size(), columns_);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const std::size_t r = rows[i];
            if (r >= rows_) throw DataError("row index out of range");
            std::copy_n(values_.begin() + r * cols(), cols(), out.values_.begin() + i * cols());
            std::copy_n(mask_.begin() + r * cols(), cols(), out.mask_.begin() + i * cols());
            out.row_ids_[i] = row_ids_[r];
        }
        return out;
    }

    FeatureMatrix subset_columns(std::span<const std::size_t> cols_idx) const {
        std::vector<ColumnMeta> metas;
        for (auto c : cols_idx) metas.push_back(columns_.at(c));
        FeatureMatrix out(rows_, std::move(metas));
        out.row_ids_ = row_ids_;
        for (std::size_t r = 0; r < rows_; ++r) {
            for (std::size_t j = 0; j < cols_idx.size(); ++j) {
                const std::size_t src = r * cols() + cols_idx[j];
                out.values_[r * out.cols() + j] = values_[src];
                out.mask_[r * out.cols() + j] = mask_[src];
            }
        }
        return out;
    }

    // Columns located by name; throws naming the first absent column.
    FeatureMatrix select_columns(const std::vector<ColumnMeta>& wanted) const {
        std::vector<std::size_t> idx;
        idx.reserve(wanted.size());
        for (const auto& w : wanted) {
            auto c = column_index(w.name);
            if (!c) throw DataError("input lacks required column '" + w.name + "'");
            idx.push_back(*c);
        }
        return subset_columns(idx);
    }

private:
    std::size_t rows_ = 0;
    std::vector<ColumnMeta> columns_;
    std::vector<double> values_;
    std::vector<unsigned char> mask_;
    std::vector<std::size_t> row_ids_;
};

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

using EmbeddingFn = std::function<std::vector<double>(const EcgTrace&)>;

/// Columns produced for the twenty clinical fields, optionally followed by the
/// 128 ECG embedding columns.
inline std::vector<ColumnMeta> feature_columns(bool include_ecg) {
    std::vector<ColumnMeta> cols;
    for (const auto& f : kFields) {
        const std::string name(f.name);
        if (f.kind == FieldKind::binary) {
            cols.push_back({name + "=" + std::string(f.positive_label), ColumnKind::onehot, Transform::identity, name,
                            std::string(f.positive_label), 0});
            cols.push_back({name + "=" + std::string(f.negative_label), ColumnKind::onehot, Transform::identity, name,
                            std::string(f.negative_label), 0});
        } else {
            cols.push_back({name, ColumnKind::numeric, f.log_transform ? Transform::log : Transform::identity, name, "",
                            0});
        }
    }
    if (include_ecg) {
        for (std::size_t k = 0; k < kEmbeddingDim; ++k) {
            cols.push_back({"ecg_" + std::to_string(k), ColumnKind::ecg_embedding, Transform::identity, "ecg", "", k});
        }
    }
    return cols;
}

namespace detail {

inline double apply_transform(Transform t, double raw, std::size_t row, std::string_view field) {
    if (t == Transform::identity) return raw;
    if (!(raw > 0.0)) {
        throw DataError("non-positive value " + format_double(raw) + " in log-transformed column '" +
                        std::string(field) + "' at row " + std::to_string(row + 1));
    }
    return std::log(raw);
}

}  // namespace detail

/// Encodes records into transformed, one-hot columns with masked missing
/// cells. Stateless: nothing is estimated from the data, so encoding a whole
/// cohort up front cannot leak information between splits.
inline FeatureMatrix encode_records(std::span<const PatientRecord> records, bool include_ecg,
                                    const EmbeddingFn& embed = {}, double placeholder = std::numeric_limits<double>::quiet_NaN()) {
    if (include_ecg && !embed) throw ConfigError("ECG columns requested without an embedding function");
    FeatureMatrix m(records.size(), feature_columns(include_ecg));
    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& rec = records[r];
        std::size_t c = 0;
        for (std::size_t f = 0; f < kNumFields; ++f) {
            const auto& v = rec.values[f];
            if (kFields[f].kind == FieldKind::binary) {
                if (v) {
                    m.set(r, c, *v != 0.0 ? 1.0 : 0.0);
                    m.set(r, c + 1, *v != 0.0 ? 0.0 : 1.0);
                } else {
                    m.set_missing(r, c, placeholder);
                    m.set_missing(r, c + 1, placeholder);
                }
                c += 2;
            } else {
                if (v) m.set(r, c, detail::apply_transform(m.column(c).transform, *v, r, kFields[f].name));
                else m.set_missing(r, c, placeholder);
                c += 1;
            }
        }
        if (include_ecg) {
            if (rec.ecg) {
                const auto e = embed(*rec.ecg);
                if (e.size() != kEmbeddingDim) throw DataError("embedding returned wrong length");
                for (std::size_t k = 0; k < kEmbeddingDim; ++k) m.set(r, c + k, e[k]);
            } else {
                for (std::size_t k = 0; k < kEmbeddingDim; ++k) m.set_missing(r, c + k, placeholder);
            }
        }
    }
    return m;
}

inline FeatureMatrix encode_cohort(const Cohort& cohort, bool include_ecg, const EmbeddingFn& embed = {}) {
    if (cohort.records.empty()) throw DataError("cohort is empty");
    return encode_records(cohort.records, include_ecg, embed);
}

// ---------------------------------------------------------------------------
// Imputation
// ---------------------------------------------------------------------------

enum class ImputeKind { median, mean };

/// Per-column fill values estimated on one data split and replayed on others.
struct Imputer {
    ImputeKind kind = ImputeKind::median;
    std::vector<std::string> columns;
    std::vector<double> fill;

    static Imputer fit(const FeatureMatrix& m, ImputeKind kind) {
        Imputer imp;
        imp.kind = kind;
        for (std::size_t c = 0; c < m.cols(); ++c) {
            auto obs = m.observed(c);
            if (obs.empty()) {
                throw DataError("column '" + m.column(c).name + "' has no observed values to impute from");
            }
            imp.columns.push_back(m.column(c).name);
            imp.fill.push_back(kind == ImputeKind::median ? median(std::move(obs)) : mean(obs));
        }
        return imp;
    }

    std::optional<double> fill_for(std::string_view column) const {
        for (std::size_t i = 0; i < columns.size(); ++i) {
            if (columns[i] == column) return fill[i];
        }
        return std::nullopt;
    }

    FeatureMatrix apply(FeatureMatrix m) const {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            std::optional<double> f;
            for (std::size_t r = 0; r < m.rows(); ++r) {
                if (!m.missing(r, c)) continue;
                if (!f) {
                    f = fill_for(m.column(c).name);
                    if (!f) throw DataError("no imputation value for column '" + m.column(c).name + "'");
                }
                m.set(r, c, *f);
            }
        }
        return m;
    }
};

enum class MissingPolicy { median_impute, sentinel_missing, leave_missing };

struct PreparedMatrix {
    FeatureMatrix matrix;
    std::optional<Imputer> imputer;
};

/// Builds a model-ready matrix from a cohort under one missing-value policy.
/// Under `median_impute` the medians come from this cohort only and are
/// returned so they can be replayed on other splits.
inline PreparedMatrix build_feature_matrix(const Cohort& cohort, MissingPolicy policy, bool include_ecg = false,
                                           const EmbeddingFn& embed = {}) {
    if (cohort.records.empty()) throw DataError("cohort is empty");
    const double placeholder =
        policy == MissingPolicy::sentinel_missing ? -1.0 : std::numeric_limits<double>::quiet_NaN();
    PreparedMatrix out{encode_records(cohort.records, include_ecg, embed, placeholder), std::nullopt};
    if (policy == MissingPolicy::median_impute) {
        out.imputer = Imputer::fit(out.matrix, ImputeKind::median);
        out.matrix = out.imputer->apply(std::move(out.matrix));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Outlier detection
// ---------------------------------------------------------------------------

/// Mean Euclidean distance from each row to its k nearest other rows.
/// `points` is row-major with `dim` values per row; callers standardize.
inline std::vector<double> knn_scores(std::span<const double> points, std::size_t dim, std::size_t k) {
    if (dim == 0) throw DataError("knn scoring needs at least one column");
    const std::size_t n = points.size() / dim;
    if (k == 0) throw ConfigError("k must be positive");
    if (k >= n) {
        throw DataError("k = " + std::to_string(k) + " must be smaller than the number of rows (" +
                        std::to_string(n) + ")");
    }
    std::vector<double> scores(n);
    std::vector<double> dist(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t t = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double d2 = 0.0;
            for (std::size_t c = 0; c < dim; ++c) {
                const double d = points[i * dim + c] - points[j * dim + c];
                d2 += d * d;
            }
            dist[t++] = std::sqrt(d2);
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(k), dist.end());
        double s = 0.0;
        for (std::size_t q = 0; q < k; ++q) s += dist[q];
        scores[i] = s / static_cast<double>(k);
    }
    return scores;
}

/// KNN outlier scores over the selected columns of a fully observed matrix.
/// Columns are standardized to zero mean and unit variance first; constant
/// columns contribute nothing.
inline std::vector<double> knn_outlier_scores(const FeatureMatrix& m, std::size_t k,
                                              std::span<const std::size_t> columns = {}) {
    std::vector<std::size_t> cols(columns.begin(), columns.end());
    if (cols.empty()) {
        for (std::size_t c = 0; c < m.cols(); ++c) cols.push_back(c);
    }
    const std::size_t n = m.rows();
    std::vector<double> pts(n * cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j) {
        double s = 0.0, ss = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            if (m.missing(r, cols[j])) {
                throw DataError("knn scoring requires observed cells; column '" + m.column(cols[j]).name +
                                "' row " + std::to_string(r + 1) + " is missing");
            }
            s += m.value(r, cols[j]);
        }
        const double mu = s / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) ss += (m.value(r, cols[j]) - mu) * (m.value(r, cols[j]) - mu);
        const double sd = std::sqrt(ss / static_cast<double>(n));
        for (std::size_t r = 0; r < n; ++r) {
            pts[r * cols.size() + j] = sd > 0.0 ? (m.value(r, cols[j]) - mu) / sd : 0.0;
        }
    }
    return knn_scores(pts, cols.size(), k);
}

struct SpikeResult {
    std::vector<std::size_t> bins;  // flagged bin indices
    std::vector<double> edges;      // n_bins + 1 edges
    std::vector<std::size_t> counts;
    std::vector<std::string> warnings;

    std::size_t bin_of(double v) const {
        const std::size_t nb = counts.size();
        const double w = (edges.back() - edges.front()) / static_cast<double>(nb);
        auto b = static_cast<std::size_t>((v - edges.front()) / w);
        return std::min(b, nb - 1);
    }
};

/// Flags histogram bins whose count exceeds `spike_factor` times the median
/// count of up to two neighbouring bins on each side. The median is floored
/// at one so isolated sparse-tail bins are not flagged.
inline SpikeResult detect_histogram_spikes(std::span<const double> values, std::size_t n_bins,
                                           double spike_factor = 5.0) {
    if (values.size() < 10) throw DataError("histogram spike detection needs at least 10 observed values");
    if (n_bins < 3) throw ConfigError("histogram spike detection needs at least 3 bins");
    SpikeResult res;
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) {
        res.warnings.push_back("constant column: no histogram range");
        return res;
    }
    res.edges.resize(n_bins + 1);
    for (std::size_t b = 0; b <= n_bins; ++b) {
        res.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(n_bins);
    }
    res.counts.assign(n_bins, 0);
    for (double v : values) ++res.counts[res.bin_of(v)];
    for (std::size_t b = 0; b < n_bins; ++b) {
        std::vector<double> neigh;
        for (std::size_t d = 1; d <= 2; ++d) {
            if (b >= d) neigh.push_back(static_cast<double>(res.counts[b - d]));
            if (b + d < n_bins) neigh.push_back(static_cast<double>(res.counts[b + d]));
        }
        const double base = std::max(1.0, median(neigh));
        if (static_cast<double>(res.counts[b]) > spike_factor * base) res.bins.push_back(b);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Cleaning report
// ---------------------------------------------------------------------------

struct CleaningOptions {
    std::size_t k = 5;
    double spike_factor = 5.0;
    std::size_t n_bins = 20;
    // A cell is flagged when its single-column KNN score exceeds
    // median + knn_mad_factor * MAD of that column's scores.
    double knn_mad_factor = 8.0;
};

struct FlaggedCell {
    std::size_t row;
    std::string column;
    std::string reason;  // "knn_outlier" or "histogram_spike"
    double value;
    double score;
};

struct CleaningReport {
    // Per numeric column: single-column KNN score per row (NaN when missing).
    std::map<std::string, std::vector<double>> cell_scores;
    std::vector<FlaggedCell> flagged;
    std::vector<std::string> actions;
    std::vector<std::string> warnings;
};

/// Runs both detectors on every numeric clinical field. Scores are computed
/// on the transformed scale (log for biomarkers) over observed cells; flagged
/// values are reported in raw units. The cohort itself is never modified.
inline CleaningReport clean_cohort(const Cohort& cohort, const CleaningOptions& opt = {}) {
    const FeatureMatrix m = encode_cohort(cohort, false);
    CleaningReport rep;
    for (std::size_t c = 0; c < m.cols(); ++c) {
        const auto& meta = m.column(c);
        if (meta.kind != ColumnKind::numeric) continue;
        std::vector<std::size_t> rows;
        std::vector<double> vals;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            if (!m.missing(r, c)) {
                rows.push_back(r);
                vals.push_back(m.value(r, c));
            }
        }
        auto raw_value = [&](double v) { return meta.transform == Transform::log ? std::exp(v) : v; };
        auto& scores = rep.cell_scores[meta.name];
        scores.assign(m.rows(), std::numeric_limits<double>::quiet_NaN());
        if (vals.size() > opt.k) {
            const FeatureMatrix sub = m.subset_rows(rows).subset_columns(std::vector<std::size_t>{c});
            const auto s = knn_outlier_scores(sub, opt.k);
            for (std::size_t i = 0; i < rows.size(); ++i) scores[rows[i]] = s[i];
            const double med = median(s);
            std::vector<double> dev(s.size());
            for (std::size_t i = 0; i < s.size(); ++i) dev[i] = std::abs(s[i] - med);
            const double mad = median(dev);
            const double cut = med + opt.knn_mad_factor * std::max(mad, 1e-12);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (s[i] > cut) {
                    rep.flagged.push_back({rows[i], meta.name, "knn_outlier", raw_value(vals[i]), s[i]});
                }
            }
        } else {
            rep.warnings.push_back(meta.name + ": too few observed values for knn scoring");
        }
        if (vals.size() >= 10) {
            const auto spikes = detect_histogram_spikes(vals, opt.n_bins, opt.spike_factor);
            for (const auto& w : spikes.warnings) rep.warnings.push_back(meta.name + ": " + w);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (spikes.counts.empty()) break;
                const auto b = spikes.bin_of(vals[i]);
                if (std::find(spikes.bins.begin(), spikes.bins.end(), b) != spikes.bins.end()) {
                    rep.flagged.push_back({rows[i], meta.name, "histogram_spike", raw_value(vals[i]),
                                           static_cast<double>(spikes.counts[b])});
                }
            }
        }
    }
    rep.actions.push_back("flag-only: no values were modified");
    return rep;
}

inline nlohmann::json cleaning_report_to_json(const CleaningReport& rep) {
    nlohmann::json j;
    j["flagged"] = nlohmann::json::array();
    for (const auto& f : rep.flagged) {
        j["flagged"].push_back(
            {{"row", f.row + 1}, {"column", f.column}, {"reason", f.reason}, {"value", f.value}, {"score", f.score}});
    }
    j["actions"] = rep.actions;
    j["warnings"] = rep.warnings;
    nlohmann::json scores = nlohmann::json::object();
    for (const auto& [name, s] : rep.cell_scores) {
        nlohmann::json arr = nlohmann::json::array();
        for (double v : s) {
            if (std::isnan(v)) arr.push_back(nullptr);
            else arr.push_back(v);
        }
        scores[name] = arr;
    }
    j["cell_scores"] = scores;
    return j;
}

inline std::string cleaning_report_text(const CleaningReport& rep) {
    std::ostringstream os;
    os << "row    column                 reason            value          score\n";
    for (const auto& f : rep.flagged) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-6zu %-22s %-17s %-14s %s\n", f.row + 1, f.column.c_str(), f.reason.c_str(),
                      format_general(f.value, 6).c_str(), format_general(f.score, 4).c_str());
        os << buf;
    }
    os << rep.flagged.size() << " flagged cell(s)\n";
    for (const auto& w : rep.warnings) os << "warning: " << w << '\n';
    for (const auto& a : rep.actions) os << "action: " << a << '\n';
    return os.str();
}

}  // namespace riskstrat
