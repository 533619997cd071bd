#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "riskstrat/cohort.hpp"

using namespace riskstrat;
namespace fs = std::filesystem;

namespace {

CohortSpec zero_missing(std::size_t n, double prevalence, std::uint64_t seed) {
    auto s = CohortSpec::reference_defaults();
    s.missingness_rate.fill(0.0);
    s.n_patients = n;
    s.prevalence = prevalence;
    s.rng_seed = seed;
    return s;
}

CohortSpec planted_a(std::size_t n, std::uint64_t seed) {
    auto s = zero_missing(n, 0.5, seed);
    s.true_coefficients[require_field("heart_rate")] = 1.0;
    return s;
}

double label_mean(const Cohort& c) {
    const auto y = c.labels();
    return static_cast<double>(std::count(y.begin(), y.end(), 1)) / static_cast<double>(y.size());
}

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("riskstrat_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(Cohort, NoSignalPrevalenceHalf) {
    const auto c = generate_cohort(zero_missing(10000, 0.5, 1));
    const double m = label_mean(c);
    EXPECT_GE(m, 0.48);
    EXPECT_LE(m, 0.52);
}

TEST(Cohort, PrevalenceWithinThreeStandardErrors) {
    for (std::uint64_t seed : {2u, 3u, 4u}) {
        auto s = planted_a(4000, seed);
        s.prevalence = 284.0 / 640.0;
        const auto c = generate_cohort(s);
        const double p = s.prevalence;
        EXPECT_LE(std::abs(label_mean(c) - p), 3.0 * std::sqrt(p * (1 - p) / 4000.0)) << "seed " << seed;
    }
}

TEST(Cohort, SameSeedGivesIdenticalCohort) {
    auto s = CohortSpec::reference_defaults();
    s.n_patients = 300;
    s.rng_seed = 77;
    s.ecg.enabled = true;
    s.error_injection.decimal_shift_rate = 0.01;
    const auto a = generate_cohort(s), b = generate_cohort(s);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_TRUE(a.records[i] == b.records[i]) << i;
    std::ostringstream oa, ob;
    write_cohort_csv(a, oa);
    write_cohort_csv(b, ob);
    EXPECT_EQ(oa.str(), ob.str());
    s.rng_seed = 78;
    std::ostringstream oc;
    write_cohort_csv(generate_cohort(s), oc);
    EXPECT_NE(oa.str(), oc.str());
}

TEST(Cohort, ReferenceMarginalMeansWithinTwoStandardErrors) {
    const auto c = generate_cohort(zero_missing(20000, 0.44375, 5));
    struct Ref { const char* name; double mean, sd; };
    // Reference cohort means and SDs for the normally distributed fields.
    for (const Ref& r : {Ref{"age", 65.4, 9.3}, Ref{"bmi", 24.6, 3.5}, Ref{"heart_rate", 81.2, 12.6},
                         Ref{"sbp", 137.2, 20.3}, Ref{"dbp", 79.3, 11.7}}) {
        double s = 0.0;
        for (const auto& rec : c.records) s += *rec.get(r.name);
        const double m = s / static_cast<double>(c.size());
        EXPECT_LE(std::abs(m - r.mean), 2.0 * r.sd / std::sqrt(static_cast<double>(c.size()))) << r.name;
    }
    double male = 0.0;
    for (const auto& rec : c.records) male += *rec.get("gender");
    EXPECT_NEAR(male / static_cast<double>(c.size()), 0.65, 2.0 * std::sqrt(0.65 * 0.35 / 20000.0));
}

TEST(Cohort, BiomarkersPositiveAndAgeInRange) {
    const auto c = generate_cohort([] { auto s = CohortSpec::reference_defaults(); s.n_patients = 3000; return s; }());
    for (const auto& rec : c.records) {
        for (std::size_t f = 0; f < kNumFields; ++f) {
            if (kFields[f].log_transform && rec.values[f]) {
                ASSERT_GT(*rec.values[f], 0.0);
            }
        }
        if (rec.get("age")) {
            EXPECT_GE(*rec.get("age"), 18.0);
            EXPECT_LE(*rec.get("age"), 110.0);
        }
    }
}

TEST(Cohort, MissingnessRealizedWithinThreeStandardErrors) {
    auto s = CohortSpec::reference_defaults();
    s.n_patients = 5000;
    s.rng_seed = 9;
    const auto c = generate_cohort(s);
    const double n = static_cast<double>(c.size());
    for (std::size_t f = 0; f < kNumFields; ++f) {
        double miss = 0.0;
        for (const auto& rec : c.records) miss += rec.values[f] ? 0.0 : 1.0;
        const double r = s.missingness_rate[f];
        EXPECT_LE(std::abs(miss / n - r), 3.0 * std::sqrt(r * (1 - r) / n) + 1e-12) << kFields[f].name;
    }
}

TEST(Cohort, ValidationNamesTheField) {
    auto s = CohortSpec::reference_defaults();
    s.prevalence = 1.5;
    try {
        generate_cohort(s);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("prevalence"), std::string::npos);
    }
    s = CohortSpec::reference_defaults();
    s.missingness_rate[require_field("crp")] = 1.0;
    try {
        generate_cohort(s);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("crp"), std::string::npos);
    }
    const auto j = nlohmann::json::parse(R"({"n_patients": 10, "prevalence": 0.5, "rng_seed": 1,
                                             "true_coefficients": {"cholesterol": 1.0}})");
    try {
        cohort_spec_from_json(j);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("cholesterol"), std::string::npos);
    }
}

TEST(Cohort, SpecJsonRoundTrip) {
    auto s = planted_a(123, 4);
    s.missingness_rate[require_field("ldl")] = 0.25;
    s.ecg.enabled = true;
    s.ecg.coefficient = 0.3;
    const auto back = cohort_spec_from_json(cohort_spec_to_json(s));
    EXPECT_EQ(back.n_patients, 123u);
    EXPECT_EQ(back.rng_seed, 4u);
    EXPECT_EQ(back.true_coefficients, s.true_coefficients);
    EXPECT_EQ(back.missingness_rate, s.missingness_rate);
    EXPECT_TRUE(back.ecg.enabled);
    std::ostringstream a, b;
    write_cohort_csv(generate_cohort(s), a);
    write_cohort_csv(generate_cohort(back), b);
    EXPECT_EQ(a.str(), b.str());
}

TEST(Cohort, ReferenceMissingnessKeyword) {
    const auto j = nlohmann::json::parse(R"({"n_patients": 10, "prevalence": 0.5, "rng_seed": 1,
                                             "missingness_rate": "reference"})");
    const auto s = cohort_spec_from_json(j);
    EXPECT_DOUBLE_EQ(s.missingness_rate[require_field("crp")], 0.201);
    const auto z = cohort_spec_from_json(nlohmann::json::parse(R"({"n_patients": 10, "prevalence": 0.5, "rng_seed": 1})"));
    EXPECT_DOUBLE_EQ(z.missingness_rate[require_field("crp")], 0.0);
}

// --- oracle ----------------------------------------------------------------

TEST(CohortOracle, NoSignalIsHalf) {
    EXPECT_NEAR(oracle_bayes_auc(zero_missing(10, 0.5, 1), 100000), 0.5, 0.01);
}

TEST(CohortOracle, HugeWeightApproachesOne) {
    auto s = zero_missing(10, 0.5, 1);
    s.true_coefficients[require_field("heart_rate")] = 50.0;
    EXPECT_GT(oracle_bayes_auc(s, 100000), 0.99);
}

TEST(CohortOracle, PlantedAMatchesQuadrature) {
    // Independent oracle: z ~ N(0,1), P(y=1|z) = sigmoid(z) (intercept 0 by
    // symmetry at prevalence 0.5). AUC = E[s(z1)(1-s(z2)) 1{z1>z2}] / (p(1-p)).
    const boost::math::normal_distribution<double> nd;
    const int m = 40001;
    const double lo = -9.0, h = 18.0 / (m - 1);
    double inner = 0.0, num = 0.0, prev_g = 0.0;
    for (int i = 0; i < m; ++i) {
        const double z = lo + h * i;
        const double phi = boost::math::pdf(nd, z);
        const double s = 1.0 / (1.0 + std::exp(-z));
        const double g = (1.0 - s) * phi;  // negative-class density
        if (i > 0) inner += 0.5 * h * (g + prev_g);
        prev_g = g;
        const double w = (i == 0 || i == m - 1) ? 0.5 : 1.0;
        num += w * h * s * phi * inner;
    }
    const double expected = num / 0.25;
    const double oracle = oracle_bayes_auc(planted_a(10, 1), 400000);
    EXPECT_NEAR(oracle, expected, 0.004);
    // Frozen value of the quadrature (4 decimals).
    EXPECT_NEAR(expected, 0.7395, 1e-4);
}

TEST(CohortOracle, RejectsSmallMonteCarlo) {
    EXPECT_THROW(oracle_bayes_auc(planted_a(10, 1), 1000), ConfigError);
}

// --- CSV -------------------------------------------------------------------

TEST(CohortCsv, RoundTripWithEcgAndMissing) {
    auto s = CohortSpec::reference_defaults();
    s.n_patients = 60;
    s.rng_seed = 12;
    s.ecg.enabled = true;
    const auto c = generate_cohort(s);
    const auto dir = temp_dir("cohort_rt");
    save_cohort(c, (dir / "c.csv").string());
    const auto back = load_cohort((dir / "c.csv").string());
    ASSERT_EQ(back.size(), c.size());
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_TRUE(back.records[i] == c.records[i]) << i;
    EXPECT_NE(back.provenance.find("loaded"), std::string::npos);
}

TEST(CohortCsv, HeaderOnlyIsEmptyCohortError) {
    std::ostringstream h;
    write_cohort_csv(Cohort{}, h);
    std::istringstream in(h.str());
    EXPECT_THROW(read_cohort_csv(in), DataError);
}

TEST(CohortCsv, BadCellCitesRowAndColumn) {
    auto s = zero_missing(10, 0.5, 3);
    std::ostringstream out;
    write_cohort_csv(generate_cohort(s), out);
    std::vector<std::string> lines;
    std::istringstream in(out.str());
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    auto cells = split(lines[7], ',');
    cells[require_field("ckmb")] = "abc";
    std::string joined;
    for (std::size_t i = 0; i < cells.size(); ++i) joined += (i ? "," : "") + cells[i];
    lines[7] = joined;
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    std::istringstream bad(text);
    try {
        read_cohort_csv(bad);
        FAIL();
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("row 7"), std::string::npos) << msg;
        EXPECT_NE(msg.find("ckmb"), std::string::npos) << msg;
    }
}

TEST(CohortCsv, UnknownColumnListed) {
    std::ostringstream out;
    write_cohort_csv(generate_cohort(zero_missing(5, 0.5, 1)), out);
    auto text = out.str();
    text.replace(text.find("revascularized"), 14, "cholesterol");
    std::istringstream in(text);
    try {
        read_cohort_csv(in);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("cholesterol"), std::string::npos);
    }
}

TEST(CohortCsv, MissingLabelColumnIsScoringMode) {
    std::string header;
    for (std::size_t f = 0; f < kNumFields; ++f) header += (f ? "," : "") + std::string(kFields[f].name);
    std::istringstream in(header + "\n70,25,male,80,130,80,negative,negative,positive,negative,1.5,2.5,1.1,2,50,0.4,30,2,0.02,80\n");
    const auto c = read_cohort_csv(in);
    EXPECT_EQ(c.size(), 1u);
    EXPECT_FALSE(c.labeled());
    EXPECT_THROW(c.labels(), DataError);
}

TEST(Cohort, ErrorInjectionIsRecorded) {
    auto s = zero_missing(500, 0.5, 21);
    s.error_injection.decimal_shift_rate = 0.02;
    s.error_injection.digit_drop_rate = 0.02;
    const auto c = generate_cohort(s);
    ASSERT_FALSE(c.injected_errors.empty());
    bool shift = false, drop = false;
    for (const auto& e : c.injected_errors) {
        EXPECT_EQ(*c.records[e.row].values[e.field], e.corrupted);
        if (e.kind == "decimal_shift") {
            shift = true;
            const double r = e.corrupted / e.original;
            EXPECT_TRUE(std::abs(r - 10.0) < 1e-9 || std::abs(r - 0.1) < 1e-12);
        } else {
            drop = true;
            EXPECT_NE(e.corrupted, e.original);
        }
    }
    EXPECT_TRUE(shift && drop);
}

TEST(Cohort, EcgSegmentsAreTwelveLeadsAt57Hz) {
    auto s = zero_missing(5, 0.5, 2);
    s.ecg.enabled = true;
    const auto c = generate_cohort(s);
    for (const auto& r : c.records) {
        ASSERT_TRUE(r.ecg);
        EXPECT_EQ(r.ecg->n_channels(), 12u);
        EXPECT_EQ(r.ecg->n_samples(), 142u);
        EXPECT_DOUBLE_EQ(r.ecg->sample_rate, 57.0);
    }
}
