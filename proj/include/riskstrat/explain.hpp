#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "riskstrat/common.hpp"
#include "riskstrat/eval.hpp"
#include "riskstrat/gbdt.hpp"
#include "riskstrat/ingest.hpp"
#include "riskstrat/logistic.hpp"

namespace riskstrat {

enum class TableKind { gbdt, logistic };

struct TableNode {
    bool leaf = true;
    std::string column;
    double threshold = 0.0;
    bool default_left = true;
    int left = -1, right = -1;
    double value = 0.0;  // leaf contribution, already multiplied by the learning rate
};

struct TableBin {
    double upper = std::numeric_limits<double>::infinity();  // bin holds x <= upper (transformed scale)
    double representative = 0.0;                             // training median in the bin
    double score = 0.0;
};

struct TableFeature {
    std::string column;
    ColumnMeta meta;
    bool binary = false;
    double coefficient = 0.0;
    std::vector<TableBin> bins;  // continuous: ordered; binary: {no, yes}
    double missing_score = 0.0;
    double train_min = 0.0, train_max = 0.0;
};

struct CalibrationRow {
    double threshold = 0.0;  // total score >= threshold
    double tpr = 0.0, fpr = 0.0, prevalence = 0.0;
    double probability = 0.0;
};

struct LookupTable {
    TableKind kind = TableKind::gbdt;
    double base = 0.0;
    std::vector<std::vector<TableNode>> trees;  // gbdt
    std::vector<TableFeature> features;         // logistic
    std::optional<double> quantization_bound;   // logistic
    std::vector<CalibrationRow> calibration;
    std::vector<std::string> notes;
};

namespace detail {

inline void refuse_ecg(const std::vector<ColumnMeta>& cols) {
    for (const auto& c : cols) {
        if (c.kind == ColumnKind::ecg_embedding) {
            throw ConfigError("look-up tables exclude ECG embedding features; train the model without ECG");
        }
    }
}

inline std::optional<double> lookup(const FeatureMatrix& X, std::size_t r, const std::string& col) {
    const auto c = X.column_index(col);
    if (!c) throw DataError("record lacks table column '" + col + "'");
    return X.get(r, *c);
}

}  // namespace detail

/// Transcribes every tree node. Leaf rows carry learning_rate * weight so
/// that summing them in tree order reproduces the model's log-odds exactly.
inline LookupTable gbdt_to_table(const GbdtModel& m) {
    detail::refuse_ecg(m.columns);
    LookupTable t;
    t.kind = TableKind::gbdt;
    t.base = m.base_score;
    for (const auto& tree : m.trees) {
        std::vector<TableNode> block;
        for (const auto& n : tree.nodes) {
            TableNode tn;
            tn.leaf = n.leaf;
            if (n.leaf) {
                tn.value = m.params.learning_rate * n.weight;
            } else {
                tn.column = m.columns[n.feature].name;
                tn.threshold = n.threshold;
                tn.default_left = n.default_left;
                tn.left = n.left;
                tn.right = n.right;
            }
            block.push_back(tn);
        }
        t.trees.push_back(std::move(block));
    }
    return t;
}

struct TableEval {
    double score = 0.0;  // log-odds
    bool clamped = false;
    std::vector<std::string> flags;
};

inline TableEval eval_table(const LookupTable& t, const FeatureMatrix& X, std::size_t r) {
    TableEval e;
    e.score = t.base;
    if (t.kind == TableKind::gbdt) {
        for (const auto& block : t.trees) {
            std::size_t i = 0;
            while (!block[i].leaf) {
                const auto& n = block[i];
                const auto v = detail::lookup(X, r, n.column);
                const bool left = v ? *v <= n.threshold : n.default_left;
                i = static_cast<std::size_t>(left ? n.left : n.right);
            }
            e.score += block[i].value;
        }
        return e;
    }
    for (const auto& f : t.features) {
        const auto v = detail::lookup(X, r, f.column);
        if (!v) {
            e.score += f.missing_score;
            continue;
        }
        if (f.binary) {
            e.score += *v != 0.0 ? f.bins[1].score : f.bins[0].score;
            continue;
        }
        if (*v < f.train_min || *v > f.train_max) {
            e.clamped = true;
            e.flags.push_back("'" + f.column + "' outside the training range; edge bin used");
        }
        std::size_t b = 0;
        while (b + 1 < f.bins.size() && *v > f.bins[b].upper) ++b;
        e.score += f.bins[b].score;
    }
    return e;
}

inline TableEval eval_table(const LookupTable& t, const PatientRecord& rec) {
    const auto X = encode_records(std::span<const PatientRecord>(&rec, 1), false);
    return eval_table(t, X, 0);
}

/// Quantile-binned additive table for a logistic model. Continuous columns
/// are cut at the j/n_bins quantiles of the (imputed, transformed) training
/// values; each bin scores coefficient x bin median. The footer bound is the
/// largest |table - model| linear-predictor gap over the training rows.
inline LookupTable lr_to_table(const LogisticModel& m, const FeatureMatrix& train, std::size_t n_bins = 5) {
    if (n_bins < 2) throw ConfigError("n_bins must be at least 2");
    detail::refuse_ecg(m.columns);
    const auto idx = detail::map_columns(m.columns, train);
    const FeatureMatrix Xi = m.imputer.apply(train.subset_columns(idx));
    LookupTable t;
    t.kind = TableKind::logistic;
    t.base = m.intercept;
    for (std::size_t j = 0; j < m.columns.size(); ++j) {
        const double w = m.coefficients[j];
        if (w == 0.0) continue;
        TableFeature f;
        f.column = m.columns[j].name;
        f.meta = m.columns[j];
        f.coefficient = w;
        const auto fill = m.imputer.fill_for(f.column);
        std::vector<double> vals(Xi.rows());
        for (std::size_t r = 0; r < Xi.rows(); ++r) vals[r] = Xi.value(r, j);
        std::sort(vals.begin(), vals.end());
        f.train_min = vals.front();
        f.train_max = vals.back();
        const bool is_binary = std::all_of(vals.begin(), vals.end(), [](double v) { return v == 0.0 || v == 1.0; });
        if (is_binary && m.columns[j].kind == ColumnKind::onehot) {
            f.binary = true;
            f.bins = {TableBin{0.0, 0.0, 0.0}, TableBin{1.0, 1.0, w}};
            f.missing_score = fill ? w * *fill : 0.0;
            t.features.push_back(std::move(f));
            continue;
        }
        std::vector<double> distinct = vals;
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        std::vector<double> cuts;
        if (distinct.size() < n_bins) {
            for (std::size_t i = 0; i + 1 < distinct.size(); ++i) cuts.push_back(distinct[i] + 0.5 * (distinct[i + 1] - distinct[i]));
            t.notes.push_back("'" + f.column + "' has " + std::to_string(distinct.size()) + " distinct values; one bin per value");
        } else {
            for (std::size_t q = 1; q < n_bins; ++q) {
                const double c = quantile_sorted(vals, static_cast<double>(q) / static_cast<double>(n_bins));
                if (c >= f.train_max) continue;  // would leave an empty top bin
                if (cuts.empty() || c > cuts.back()) cuts.push_back(c);
            }
        }
        // Bins: x <= cuts[0], cuts[0] < x <= cuts[1], ..., x > cuts.back().
        std::size_t start = 0;
        for (std::size_t b = 0; b <= cuts.size(); ++b) {
            const double upper = b < cuts.size() ? cuts[b] : std::numeric_limits<double>::infinity();
            std::size_t end = start;
            while (end < vals.size() && vals[end] <= upper) ++end;
            if (end == start) continue;  // empty bin: merged into the next
            std::vector<double> in_bin(vals.begin() + static_cast<long>(start), vals.begin() + static_cast<long>(end));
            const double rep = median(std::move(in_bin));
            f.bins.push_back({upper, rep, w * rep});
            start = end;
        }
        f.bins.back().upper = std::numeric_limits<double>::infinity();
        if (fill) {
            std::size_t b = 0;
            while (b + 1 < f.bins.size() && *fill > f.bins[b].upper) ++b;
            f.missing_score = f.bins[b].score;
        }
        t.features.push_back(std::move(f));
    }
    // Exhaustive fidelity check over the training rows.
    double bound = 0.0;
    std::vector<double> x(m.columns.size());
    for (std::size_t r = 0; r < Xi.rows(); ++r) {
        for (std::size_t j = 0; j < m.columns.size(); ++j) x[j] = Xi.value(r, j);
        const double lp = m.linear_predictor(x);
        bound = std::max(bound, std::abs(eval_table(t, train, r).score - lp));
    }
    t.quantization_bound = bound;
    return t;
}

/// Appends total-score thresholds reaching each target TPR on the given rows,
/// with calibrated probabilities at the training prevalence.
inline void attach_calibration(LookupTable& t, const FeatureMatrix& X, std::span<const int> y,
                               const std::vector<double>& target_tprs = {0.5, 0.7, 0.8, 0.9, 0.95}) {
    std::vector<double> s(X.rows());
    for (std::size_t r = 0; r < X.rows(); ++r) s[r] = eval_table(t, X, r).score;
    double prev = 0.0;
    for (int v : y) prev += v;
    prev /= static_cast<double>(y.size());
    t.calibration.clear();
    for (double target : target_tprs) {
        CalibrationRow row;
        row.threshold = threshold_for_tpr(s, y, target);
        const auto rates = rates_at(s, y, row.threshold);
        row.tpr = rates.tpr;
        row.fpr = rates.fpr;
        row.prevalence = prev;
        row.probability = calibrate_probability(row.tpr, row.fpr, prev);
        t.calibration.push_back(row);
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

enum class TableFormat { text, markdown, csv };

namespace detail {

struct Row {
    std::string block, question, answer;
    std::optional<double> score;
};

inline std::string unit_of(const ColumnMeta& c) {
    if (auto f = field_index(c.source_field)) return std::string(kFields[*f].unit);
    return "";
}

// Bin label in raw units, e.g. "2.310 < ldl <= 3.100 mmol/L".
inline std::string bin_label(const TableFeature& f, std::size_t b, bool exact) {
    const bool logged = f.meta.transform == Transform::log;
    auto raw = [&](double v) { return logged ? std::exp(v) : v; };
    auto num = [&](double v) { return exact ? format_double(v) : format_fixed(v, 3); };
    const std::string name = f.meta.source_field.empty() ? f.column : f.meta.source_field;
    std::string label;
    const bool first = b == 0, last = b + 1 == f.bins.size();
    if (first && last) label = "any " + name;
    else if (first) label = name + " <= " + num(raw(f.bins[b].upper));
    else if (last) label = name + " > " + num(raw(f.bins[b - 1].upper));
    else label = num(raw(f.bins[b - 1].upper)) + " < " + name + " <= " + num(raw(f.bins[b].upper));
    const auto unit = unit_of(f.meta);
    if (!unit.empty()) label += " " + unit;
    if (exact && logged && !(first && last)) {
        // Exact edges on the log scale, used when the CSV is parsed back.
        label += " [log: ";
        if (!first) label += format_double(f.bins[b - 1].upper) + " < ";
        label += "x";
        if (!last) label += " <= " + format_double(f.bins[b].upper);
        label += "]";
    }
    return label;
}

inline std::string node_question(const TableNode& n, const std::vector<ColumnMeta>* metas, bool exact) {
    std::string col = n.column;
    double thr = n.threshold;
    if (metas) {
        for (const auto& m : *metas) {
            if (m.name == n.column && m.transform == Transform::log) {
                if (exact) col = "log(" + n.column + ")";
                else thr = std::exp(thr);
            }
        }
    }
    return col + " <= " + (exact ? format_double(thr) : format_fixed(thr, 3));
}

inline std::vector<Row> table_rows(const LookupTable& t, bool exact) {
    std::vector<Row> rows;
    rows.push_back({"base", "base score", "", t.base});
    // Column metadata is reconstructed from the schema so log columns can
    // show raw units.
    const auto all_cols = feature_columns(false);
    if (t.kind == TableKind::gbdt) {
        for (std::size_t k = 0; k < t.trees.size(); ++k) {
            const std::string block = "tree " + std::to_string(k + 1);
            for (std::size_t i = 0; i < t.trees[k].size(); ++i) {
                const auto& n = t.trees[k][i];
                const std::string id = "n" + std::to_string(i);
                if (n.leaf) {
                    rows.push_back({block, id + ": leaf", "score", n.value});
                    continue;
                }
                const auto q = id + ": " + node_question(n, &all_cols, exact);
                rows.push_back({block, q, "yes -> n" + std::to_string(n.left), std::nullopt});
                rows.push_back({block, q, "no -> n" + std::to_string(n.right), std::nullopt});
                rows.push_back({block, q, "missing -> n" + std::to_string(n.default_left ? n.left : n.right), std::nullopt});
            }
        }
    } else {
        for (const auto& f : t.features) {
            if (f.binary) {
                rows.push_back({f.column, f.column, "no", f.bins[0].score});
                rows.push_back({f.column, f.column, "yes", f.bins[1].score});
            } else {
                for (std::size_t b = 0; b < f.bins.size(); ++b) rows.push_back({f.column, f.column, bin_label(f, b, exact), f.bins[b].score});
                if (exact) {
                    rows.push_back({f.column, f.column,
                                    "training range [" + format_double(f.train_min) + ", " + format_double(f.train_max) + "]",
                                    std::nullopt});
                }
            }
            rows.push_back({f.column, f.column, "missing", f.missing_score});
        }
    }
    for (const auto& c : t.calibration) {
        const auto thr = exact ? format_double(c.threshold) : format_fixed(c.threshold, 3);
        const auto fmt = [&](double v) { return exact ? format_double(v) : format_fixed(v, 3); };
        rows.push_back({"calibration", "total >= " + thr,
                        "TPR " + fmt(c.tpr) + " FPR " + fmt(c.fpr) + " prevalence " + fmt(c.prevalence), c.probability});
    }
    if (t.quantization_bound) {
        // Printed bound is rounded up so it never understates the error.
        const double b = exact ? *t.quantization_bound : std::ceil(*t.quantization_bound * 1000.0) / 1000.0;
        rows.push_back({"footer", "quantization bound", "max |table - model| over training rows", b});
    }
    return rows;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace detail

inline std::string render_table(const LookupTable& t, TableFormat fmt) {
    std::ostringstream out;
    const bool exact = fmt == TableFormat::csv;
    const auto rows = detail::table_rows(t, exact);
    const std::string title = t.kind == TableKind::gbdt ? "Risk score look-up table (GBDT)" : "Risk score look-up table (logistic)";
    auto score_text = [&](const std::optional<double>& s) {
        if (!s) return std::string();
        return exact ? format_double(*s) : format_fixed(*s, 3);
    };
    if (fmt == TableFormat::csv) {
        out << "block,question,answer,score\n";
        for (const auto& r : rows) {
            out << detail::csv_escape(r.block) << ',' << detail::csv_escape(r.question) << ','
                << detail::csv_escape(r.answer) << ',' << score_text(r.score) << '\n';
        }
        return out.str();
    }
    if (fmt == TableFormat::markdown) {
        out << "## " << title << "\n\n";
        out << "Total score = sum of the rows that apply. Probability = 1 / (1 + exp(-total)).\n\n";
        out << "| block | question | answer | score |\n|---|---|---|---|\n";
        for (const auto& r : rows) {
            out << "| " << r.block << " | " << r.question << " | " << r.answer << " | " << score_text(r.score) << " |\n";
        }
    } else {
        out << title << "\n";
        out << "Total score = sum of the rows that apply. Probability = 1 / (1 + exp(-total)).\n\n";
        std::string last_block;
        for (const auto& r : rows) {
            if (r.block != last_block) {
                out << "[" << r.block << "]\n";
                last_block = r.block;
            }
            out << "  " << r.question;
            if (!r.answer.empty()) out << " | " << r.answer;
            if (r.score) out << " | " << score_text(r.score);
            out << '\n';
        }
    }
    for (const auto& n : t.notes) out << "\nnote: " << n;
    if (!t.notes.empty()) out << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// CSV parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> parse_csv_line(const std::string& line) {
    std::vector<std::string> f;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            f.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    f.push_back(cur);
    return f;
}

inline double need_double(const std::string& s, const std::string& what) {
    double v;
    if (!parse_double(s, v)) throw DataError("table CSV: cannot parse " + what + " '" + s + "'");
    return v;
}

inline int node_ref(const std::string& s) {
    const auto p = s.find("-> n");
    if (p == std::string::npos) throw DataError("table CSV: bad routing '" + s + "'");
    return std::stoi(s.substr(p + 4));
}

}  // namespace detail

/// Rebuilds a table from its CSV rendering (full-precision scores).
inline LookupTable parse_table_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    if (detail::parse_csv_line(line) != std::vector<std::string>{"block", "question", "answer", "score"}) {
        throw DataError("table CSV: unexpected header");
    }
    LookupTable t;
    bool saw_tree = false, saw_feature = false;
    const auto metas = feature_columns(false);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = detail::parse_csv_line(line);
        if (f.size() != 4) throw DataError("table CSV: expected 4 fields in '" + line + "'");
        const auto& block = f[0];
        const auto& q = f[1];
        const auto& a = f[2];
        if (block == "base") {
            t.base = detail::need_double(f[3], "base score");
        } else if (block == "footer") {
            t.quantization_bound = detail::need_double(f[3], "bound");
        } else if (block == "calibration") {
            CalibrationRow c;
            c.threshold = detail::need_double(q.substr(q.find(">=") + 2), "threshold");
            std::istringstream as(a);
            std::string k1, v1, k2, v2, k3, v3;
            as >> k1 >> v1 >> k2 >> v2 >> k3 >> v3;
            c.tpr = detail::need_double(v1, "TPR");
            c.fpr = detail::need_double(v2, "FPR");
            c.prevalence = detail::need_double(v3, "prevalence");
            c.probability = detail::need_double(f[3], "probability");
            t.calibration.push_back(c);
        } else if (block.rfind("tree ", 0) == 0) {
            saw_tree = true;
            const auto k = static_cast<std::size_t>(std::stoul(block.substr(5)));
            if (t.trees.size() < k) t.trees.resize(k);
            auto& nodes = t.trees[k - 1];
            const auto colon = q.find(':');
            const auto id = static_cast<std::size_t>(std::stoul(q.substr(1, colon - 1)));
            if (nodes.size() <= id) nodes.resize(id + 1);
            auto& n = nodes[id];
            const auto body = q.substr(colon + 2);
            if (body == "leaf") {
                n.leaf = true;
                n.value = detail::need_double(f[3], "leaf score");
                continue;
            }
            n.leaf = false;
            const auto le = body.find(" <= ");
            std::string col = body.substr(0, le);
            if (col.rfind("log(", 0) == 0) col = col.substr(4, col.size() - 5);
            n.column = col;
            n.threshold = detail::need_double(body.substr(le + 4), "threshold");
            if (a.rfind("yes", 0) == 0) n.left = detail::node_ref(a);
            else if (a.rfind("no", 0) == 0) n.right = detail::node_ref(a);
            else if (a.rfind("missing", 0) == 0) n.default_left = detail::node_ref(a) == n.left;
        } else {
            saw_feature = true;
            if (t.features.empty() || t.features.back().column != block) {
                TableFeature tf;
                tf.column = block;
                for (const auto& m : metas) {
                    if (m.name == block) tf.meta = m;
                }
                tf.train_min = -std::numeric_limits<double>::infinity();
                tf.train_max = std::numeric_limits<double>::infinity();
                t.features.push_back(tf);
            }
            auto& tf = t.features.back();
            if (a == "no" || a == "yes") {
                tf.binary = true;
                tf.bins.resize(2);
                tf.bins[a == "yes" ? 1 : 0].score = detail::need_double(f[3], "score");
            } else if (a == "missing") {
                tf.missing_score = detail::need_double(f[3], "score");
            } else if (a.rfind("training range [", 0) == 0) {
                const auto inner = a.substr(16, a.size() - 17);
                const auto comma = inner.find(", ");
                tf.train_min = detail::need_double(inner.substr(0, comma), "range");
                tf.train_max = detail::need_double(inner.substr(comma + 2), "range");
            } else {
                // Continuous bin; the upper edge is the number after "<=".
                std::string edges = a;
                const auto lb = a.find("[log: ");
                if (lb != std::string::npos) edges = a.substr(lb + 6, a.size() - lb - 7);
                TableBin b;
                const auto le = edges.find(" <= ");
                if (le != std::string::npos) {
                    std::istringstream es(edges.substr(le + 4));
                    std::string num;
                    es >> num;
                    b.upper = detail::need_double(num, "bin edge");
                }
                b.score = detail::need_double(f[3], "score");
                tf.bins.push_back(b);
            }
        }
    }
    if (saw_tree && saw_feature) throw DataError("table CSV mixes tree and feature blocks");
    t.kind = saw_feature ? TableKind::logistic : TableKind::gbdt;
    return t;
}

}  // namespace riskstrat
