#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "riskstrat/riskstrat.hpp"
#include "test_util.hpp"

using namespace riskstrat;
using namespace riskstrat::testing;

namespace {

Cohort demo_cohort(std::size_t n, std::uint64_t seed) {
    auto spec = load_cohort_spec(std::string(RISKSTRAT_SOURCE_DIR) + "/configs/demo_cohort.json");
    spec.n_patients = n;
    spec.rng_seed = seed;
    spec.ecg.enabled = false;
    return generate_cohort(spec);
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

GbdtModel trained_gbdt(std::size_t n_estimators) {
    const auto c = demo_cohort(640, 5);
    GbdtParams p;
    p.n_estimators = n_estimators;
    p.gamma = 0.5;
    p.alpha = 0.5;
    p.subsample = 0.8;
    p.rng_seed = 3;
    return fit_gbdt(encode_cohort(c, false), c.labels(), p);
}

struct LrFixture {
    Cohort cohort;
    FeatureMatrix X;
    LogisticModel model;
};

LrFixture trained_lr() {
    auto c = demo_cohort(640, 7);
    auto X = encode_cohort(c, false);
    LogisticOptions opt;
    opt.C = 0.5;
    auto m = fit_logistic_imputed(X, c.labels(), opt);
    return {std::move(c), std::move(X), std::move(m)};
}

// Hand-built model over gender one-hot columns and one numeric column.
LogisticModel toy_lr(double w_male, double w_x) {
    LogisticModel m;
    const auto all = feature_columns(false);
    for (const auto& c : all) {
        if (c.name == "gender=male" || c.name == "age") m.columns.push_back(c);
    }
    m.coefficients.assign(m.columns.size(), 0.0);
    for (std::size_t j = 0; j < m.columns.size(); ++j) m.coefficients[j] = m.columns[j].name == "age" ? w_x : w_male;
    m.intercept = -0.25;
    m.imputer.columns = {m.columns[0].name, m.columns[1].name};
    m.imputer.fill = {m.columns[0].name == "age" ? 60.0 : 1.0, m.columns[1].name == "age" ? 60.0 : 1.0};
    return m;
}

FeatureMatrix toy_rows(const LogisticModel& m, const std::vector<std::pair<double, double>>& male_age) {
    FeatureMatrix X(male_age.size(), m.columns);
    for (std::size_t r = 0; r < male_age.size(); ++r) {
        for (std::size_t j = 0; j < m.columns.size(); ++j) {
            X.set(r, j, m.columns[j].name == "age" ? male_age[r].second : male_age[r].first);
        }
    }
    return X;
}

}  // namespace

// --- GBDT tables --------------------------------------------------------------

TEST(GbdtTable, SingleStumpTranscription) {
    GbdtModel m;
    m.columns = numeric_columns(1);
    m.params.learning_rate = 1.0;
    Tree t;
    t.nodes.resize(3);
    t.nodes[0] = {false, 0, 0.5, true, 1, 2, 0.0, 1.0, 1.0};
    t.nodes[1].weight = -0.2;
    t.nodes[2].weight = 0.3;
    m.trees.push_back(t);
    const auto table = gbdt_to_table(m);
    ASSERT_EQ(table.trees.size(), 1u);
    const auto csv = render_table(table, TableFormat::csv);
    // One question (three routing rows) and two leaf scores.
    std::size_t questions = 0, leaves = 0;
    std::istringstream in(csv);
    for (std::string line; std::getline(in, line);) {
        if (line.find("x0 <= 0.5") != std::string::npos) ++questions;
        if (line.find(": leaf") != std::string::npos) ++leaves;
    }
    EXPECT_EQ(questions, 3u);
    EXPECT_EQ(leaves, 2u);
    const auto X = dense(2, 1, {0.2, 0.9});
    EXPECT_DOUBLE_EQ(eval_table(table, X, 0).score, -0.2);
    EXPECT_DOUBLE_EQ(eval_table(table, X, 1).score, 0.3);
}

TEST(GbdtTable, BitwiseEqualToModelOnThousandRecords) {
    const auto m = trained_gbdt(24);
    const auto table = gbdt_to_table(m);
    const auto test = demo_cohort(1000, 99);
    const auto X = encode_cohort(test, false);
    std::size_t with_missing = 0;
    for (std::size_t r = 0; r < X.rows(); ++r) {
        for (std::size_t c = 0; c < X.cols(); ++c) {
            if (X.missing(r, c)) {
                ++with_missing;
                break;
            }
        }
    }
    ASSERT_GT(with_missing, 100u);
    const auto model = predict_gbdt_margin(m, X);
    for (std::size_t r = 0; r < X.rows(); ++r) {
        ASSERT_TRUE(same_bits(eval_table(table, X, r).score, model[r])) << "row " << r;
    }
}

TEST(GbdtTable, RecordOverloadAgreesWithModel) {
    const auto m = trained_gbdt(6);
    const auto table = gbdt_to_table(m);
    const auto test = demo_cohort(50, 4);
    for (const auto& rec : test.records) {
        EXPECT_TRUE(same_bits(sigmoid(eval_table(table, rec).score), predict_gbdt(m, rec)));
    }
}

TEST(GbdtTable, BlockCountEqualsTreeCount) {
    const auto m = trained_gbdt(24);
    ASSERT_EQ(m.trees.size(), 24u);
    const auto table = gbdt_to_table(m);
    EXPECT_EQ(table.trees.size(), 24u);
    const auto text = render_table(table, TableFormat::text);
    EXPECT_NE(text.find("[tree 24]"), std::string::npos);
    EXPECT_EQ(text.find("[tree 25]"), std::string::npos);
}

TEST(GbdtTable, ZeroTreesGivesBaseOnly) {
    const auto m = trained_gbdt(0);
    const auto table = gbdt_to_table(m);
    EXPECT_TRUE(table.trees.empty());
    const auto csv = render_table(table, TableFormat::csv);
    EXPECT_EQ(csv, "block,question,answer,score\nbase,base score,," + format_double(m.base_score) + "\n");
}

TEST(GbdtTable, CsvReparseIsBitwiseEquivalent) {
    const auto m = trained_gbdt(12);
    const auto table = gbdt_to_table(m);
    const auto back = parse_table_csv(render_table(table, TableFormat::csv));
    EXPECT_EQ(back.kind, TableKind::gbdt);
    const auto X = encode_cohort(demo_cohort(300, 12), false);
    for (std::size_t r = 0; r < X.rows(); ++r) {
        ASSERT_TRUE(same_bits(eval_table(back, X, r).score, eval_table(table, X, r).score)) << "row " << r;
    }
}

TEST(GbdtTable, LogColumnsShowRawUnits) {
    const auto m = trained_gbdt(24);
    const auto text = render_table(gbdt_to_table(m), TableFormat::text);
    const auto csv = render_table(gbdt_to_table(m), TableFormat::csv);
    bool any_log = false;
    for (const auto& tree : m.trees) {
        for (const auto& n : tree.nodes) {
            if (!n.leaf && m.columns[n.feature].transform == Transform::log) {
                any_log = true;
                const auto& name = m.columns[n.feature].name;
                EXPECT_NE(text.find(name + " <= " + format_fixed(std::exp(n.threshold), 3)), std::string::npos) << name;
                EXPECT_NE(csv.find("log(" + name + ") <= "), std::string::npos) << name;
            }
        }
    }
    EXPECT_TRUE(any_log);
}

TEST(GbdtTable, EcgColumnsRefused) {
    GbdtModel m;
    m.columns = feature_columns(true);
    EXPECT_THROW(gbdt_to_table(m), ConfigError);
    LogisticModel lr;
    lr.columns = feature_columns(true);
    lr.coefficients.assign(lr.columns.size(), 0.1);
    EXPECT_THROW(lr_to_table(lr, FeatureMatrix(1, lr.columns)), ConfigError);
}

// --- LR tables ----------------------------------------------------------------

TEST(LrTable, ErrorWithinPrintedBoundOnEveryTrainingRow) {
    const auto f = trained_lr();
    const auto table = lr_to_table(f.model, f.X);
    ASSERT_TRUE(table.quantization_bound);
    // Printed bound, parsed back from the 3-decimal text footer.
    const auto text = render_table(table, TableFormat::text);
    const std::string key = "quantization bound | max |table - model| over training rows | ";
    const auto at = text.find(key);
    ASSERT_NE(at, std::string::npos);
    const double printed = std::stod(text.substr(at + key.size()));
    EXPECT_GE(printed, *table.quantization_bound);
    const auto probs = predict_logistic(f.model, f.X);
    double worst = 0.0;
    for (std::size_t r = 0; r < f.X.rows(); ++r) {
        const double lp = std::log(probs[r] / (1.0 - probs[r]));
        const double err = std::abs(eval_table(table, f.X, r).score - lp);
        worst = std::max(worst, err);
        EXPECT_LE(err, printed + 1e-9) << "row " << r;
    }
    EXPECT_NEAR(worst, *table.quantization_bound, 1e-9);
    EXPECT_GT(worst, 0.0);
}

TEST(LrTable, BinaryFeatureExact) {
    const auto m = toy_lr(0.7, 0.0);
    const auto X = toy_rows(m, {{0, 50}, {1, 60}, {1, 70}, {0, 80}});
    const auto t = lr_to_table(m, X);
    ASSERT_EQ(t.features.size(), 1u);
    const auto& f = t.features[0];
    EXPECT_TRUE(f.binary);
    ASSERT_EQ(f.bins.size(), 2u);
    EXPECT_EQ(f.bins[0].score, 0.0);
    EXPECT_EQ(f.bins[1].score, 0.7);
    const auto csv = render_table(t, TableFormat::csv);
    EXPECT_NE(csv.find("gender=male,gender=male,no,0\n"), std::string::npos) << csv;
    EXPECT_NE(csv.find("gender=male,gender=male,yes,0.7\n"), std::string::npos) << csv;
    EXPECT_EQ(*t.quantization_bound, 0.0);
}

TEST(LrTable, ZeroCoefficientOmitted) {
    const auto m = toy_lr(0.0, 0.05);
    const auto X = toy_rows(m, {{0, 50}, {1, 60}, {1, 70}, {0, 80}, {1, 55}, {0, 65}});
    const auto t = lr_to_table(m, X);
    ASSERT_EQ(t.features.size(), 1u);
    EXPECT_EQ(t.features[0].column, "age");
    EXPECT_EQ(render_table(t, TableFormat::csv).find("gender"), std::string::npos);
}

TEST(LrTable, FewDistinctValuesGetOneBinEach) {
    const auto m = toy_lr(0.0, 0.1);
    const auto X = toy_rows(m, {{0, 50}, {1, 50}, {1, 70}, {0, 70}, {1, 70}, {0, 90}});
    const auto t = lr_to_table(m, X);
    ASSERT_EQ(t.features[0].bins.size(), 3u);
    EXPECT_EQ(t.features[0].bins[0].score, 0.1 * 50.0);
    EXPECT_EQ(t.features[0].bins[2].score, 0.1 * 90.0);
    ASSERT_EQ(t.notes.size(), 1u);
    EXPECT_NE(t.notes[0].find("3 distinct values"), std::string::npos);
    // Every training row is exact when each value has its own bin.
    EXPECT_NEAR(*t.quantization_bound, 0.0, 1e-12);
}

TEST(LrTable, OutOfRangeClampsAndFlags) {
    const auto m = toy_lr(0.0, 0.1);
    const auto X = toy_rows(m, {{0, 50}, {1, 55}, {1, 60}, {0, 65}, {1, 70}, {0, 75}, {1, 80}});
    const auto t = lr_to_table(m, X);
    const auto probe = toy_rows(m, {{0, 20}, {0, 120}, {0, 62}});
    const auto lo = eval_table(t, probe, 0);
    const auto hi = eval_table(t, probe, 1);
    const auto mid = eval_table(t, probe, 2);
    EXPECT_TRUE(lo.clamped);
    EXPECT_TRUE(hi.clamped);
    EXPECT_FALSE(mid.clamped);
    ASSERT_EQ(lo.flags.size(), 1u);
    EXPECT_NE(lo.flags[0].find("'age'"), std::string::npos);
    EXPECT_EQ(lo.score, t.base + t.features[0].bins.front().score);
    EXPECT_EQ(hi.score, t.base + t.features[0].bins.back().score);
}

TEST(LrTable, MissingUsesFillBin) {
    const auto m = toy_lr(0.7, 0.1);
    const auto X = toy_rows(m, {{0, 50}, {1, 55}, {1, 60}, {0, 65}, {1, 70}, {0, 75}, {1, 80}});
    const auto t = lr_to_table(m, X);
    FeatureMatrix probe(1, m.columns);
    const auto e = eval_table(t, probe, 0);
    double expect = t.base;
    for (const auto& f : t.features) expect += f.missing_score;
    EXPECT_EQ(e.score, expect);
    // Fill 60 for age lands in the bin holding 60; gender fill 1 scores 0.7.
    const auto with_fill = toy_rows(m, {{1, 60}});
    EXPECT_EQ(e.score, eval_table(t, with_fill, 0).score);
}

TEST(LrTable, PositiveCoefficientBinsNonDecreasing) {
    const auto f = trained_lr();
    const auto t = lr_to_table(f.model, f.X);
    std::size_t checked = 0;
    for (const auto& feat : t.features) {
        if (feat.binary) continue;
        for (std::size_t b = 1; b < feat.bins.size(); ++b) {
            if (feat.coefficient > 0.0) EXPECT_LE(feat.bins[b - 1].score, feat.bins[b].score) << feat.column;
            else EXPECT_GE(feat.bins[b - 1].score, feat.bins[b].score) << feat.column;
            EXPECT_LT(feat.bins[b - 1].upper, feat.bins[b].upper) << feat.column;
        }
        ++checked;
    }
    EXPECT_GT(checked, 0u);
}

TEST(LrTable, BinsPartitionTheTrainingValues) {
    const auto f = trained_lr();
    const auto t = lr_to_table(f.model, f.X, 4);
    const auto Xi = f.model.imputer.apply(f.X);
    for (const auto& feat : t.features) {
        if (feat.binary) continue;
        EXPECT_LE(feat.bins.size(), 4u);
        EXPECT_TRUE(std::isinf(feat.bins.back().upper));
        const auto c = *Xi.column_index(feat.column);
        std::vector<std::size_t> counts(feat.bins.size(), 0);
        for (std::size_t r = 0; r < Xi.rows(); ++r) {
            const double v = Xi.value(r, c);
            std::size_t hits = 0;
            for (std::size_t b = 0; b < feat.bins.size(); ++b) {
                const double lo = b == 0 ? -std::numeric_limits<double>::infinity() : feat.bins[b - 1].upper;
                if (v > lo && v <= feat.bins[b].upper) {
                    ++hits;
                    ++counts[b];
                }
            }
            EXPECT_EQ(hits, 1u);
        }
        for (auto n : counts) EXPECT_GT(n, 0u) << feat.column;
    }
}

TEST(LrTable, CsvReparseEvaluatesEquivalently) {
    const auto f = trained_lr();
    auto t = lr_to_table(f.model, f.X);
    attach_calibration(t, f.X, f.cohort.labels());
    const auto back = parse_table_csv(render_table(t, TableFormat::csv));
    EXPECT_EQ(back.kind, TableKind::logistic);
    ASSERT_EQ(back.features.size(), t.features.size());
    EXPECT_EQ(*back.quantization_bound, *t.quantization_bound);
    ASSERT_EQ(back.calibration.size(), t.calibration.size());
    for (std::size_t i = 0; i < t.calibration.size(); ++i) {
        EXPECT_EQ(back.calibration[i].threshold, t.calibration[i].threshold);
        EXPECT_EQ(back.calibration[i].probability, t.calibration[i].probability);
    }
    const auto probe = encode_cohort(demo_cohort(300, 31), false);
    for (std::size_t r = 0; r < probe.rows(); ++r) {
        const auto a = eval_table(t, probe, r);
        const auto b = eval_table(back, probe, r);
        ASSERT_TRUE(same_bits(a.score, b.score)) << "row " << r;
        EXPECT_EQ(a.clamped, b.clamped);
    }
}

TEST(LrTable, InvalidBinCount) {
    const auto f = trained_lr();
    EXPECT_THROW(lr_to_table(f.model, f.X, 1), ConfigError);
}

// --- calibration appendix and rendering ---------------------------------------

TEST(TableCalibration, RowsMatchRecomputedRates) {
    const auto f = trained_lr();
    auto t = lr_to_table(f.model, f.X);
    const auto y = f.cohort.labels();
    attach_calibration(t, f.X, y, {0.5, 0.9});
    ASSERT_EQ(t.calibration.size(), 2u);
    for (const auto& row : t.calibration) {
        std::size_t tp = 0, fp = 0, pos = 0, neg = 0;
        for (std::size_t r = 0; r < f.X.rows(); ++r) {
            const bool flagged = eval_table(t, f.X, r).score >= row.threshold;
            (y[r] ? pos : neg) += 1;
            if (flagged) (y[r] ? tp : fp) += 1;
        }
        EXPECT_DOUBLE_EQ(row.tpr, static_cast<double>(tp) / static_cast<double>(pos));
        EXPECT_DOUBLE_EQ(row.fpr, static_cast<double>(fp) / static_cast<double>(neg));
        const double p = row.prevalence;
        EXPECT_NEAR(row.probability, row.tpr * p / (row.tpr * p + row.fpr * (1.0 - p)), 1e-12);
    }
    EXPECT_GE(t.calibration[1].tpr, 0.9);
    EXPECT_LE(t.calibration[1].threshold, t.calibration[0].threshold);
}

TEST(TableRender, DeterministicAndThreeDecimals) {
    const auto f = trained_lr();
    auto t = lr_to_table(f.model, f.X);
    attach_calibration(t, f.X, f.cohort.labels());
    for (auto fmt : {TableFormat::text, TableFormat::markdown, TableFormat::csv}) {
        EXPECT_EQ(render_table(t, fmt), render_table(t, fmt));
    }
    const auto md = render_table(t, TableFormat::markdown);
    EXPECT_NE(md.find("| base | base score |  | " + format_fixed(t.base, 3) + " |"), std::string::npos);
    EXPECT_NE(md.find("| calibration | total >= "), std::string::npos);
    EXPECT_NE(md.find("| footer | quantization bound |"), std::string::npos);
    // Log-scale biomarkers are labelled in raw units.
    EXPECT_NE(md.find("mmol/L"), std::string::npos);
    const auto g = render_table(gbdt_to_table(trained_gbdt(3)), TableFormat::text);
    EXPECT_EQ(g, render_table(gbdt_to_table(trained_gbdt(3)), TableFormat::text));
    EXPECT_EQ(g.find("quantization bound"), std::string::npos);
}

TEST(TableCsv, MalformedInputRejected) {
    EXPECT_THROW(parse_table_csv("a,b,c\n"), DataError);
    EXPECT_THROW(parse_table_csv("block,question,answer,score\nbase,base score,,abc\n"), DataError);
    EXPECT_THROW(parse_table_csv("block,question,answer,score\nbase,base score\n"), DataError);
}
