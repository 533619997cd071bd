// riskstrat command line: cohort generation, cleaning, ECG extraction,
// training, evaluation, look-up tables and single-record scoring.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "riskstrat/riskstrat.hpp"

namespace fs = std::filesystem;
using namespace riskstrat;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool with_ecg = false;
    bool no_ecg = false;
};

// --out wins; otherwise a relative default lands under $RISKSTRAT_OUT.
fs::path output_dir(const Common& o, const std::string& fallback) {
    if (!o.out.empty()) return o.out;
    const fs::path p(fallback);
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("RISKSTRAT_OUT"); root && *root) return fs::path(root) / p;
    return p;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text(const fs::path& p, const std::string& s) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    out << s;
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

ExperimentConfig experiment_config(const Common& o) {
    if (o.config.empty()) throw ConfigError("--config is required");
    auto c = load_experiment_config(o.config);
    if (o.seed) c.seed = *o.seed;
    if (o.with_ecg) c.variants = {EcgVariant::without, EcgVariant::with};
    if (o.no_ecg) c.variants = {EcgVariant::without};
    return c;
}

int cmd_generate(const Common& o) {
    if (o.config.empty()) throw ConfigError("--config is required");
    auto spec = load_cohort_spec(o.config);
    if (o.seed) spec.rng_seed = *o.seed;
    if (o.with_ecg) spec.ecg.enabled = true;
    if (o.no_ecg) spec.ecg.enabled = false;
    const auto cohort = generate_cohort(spec);
    const auto dir = output_dir(o, "cohort");
    fs::create_directories(dir);
    save_cohort(cohort, (dir / "cohort.csv").string());
    write_text(dir / "cohort_spec.json", cohort_spec_to_json(spec).dump(2) + "\n");
    nlohmann::json truth = nlohmann::json::array();
    for (const auto& e : cohort.injected_errors) {
        truth.push_back({{"row", e.row}, {"field", std::string(kFields[e.field].name)}, {"original", e.original},
                         {"corrupted", e.corrupted}, {"kind", e.kind}});
    }
    write_text(dir / "injected_errors.json", truth.dump(2) + "\n");
    const auto y = cohort.labels();
    std::cout << "wrote " << cohort.size() << " patients (" << std::count(y.begin(), y.end(), 1)
              << " revascularized) to " << (dir / "cohort.csv").string() << '\n';
    return 0;
}

int cmd_clean(const Common& o, const std::string& cohort_path) {
    const auto cohort = load_cohort(cohort_path);
    const auto rep = clean_cohort(cohort);
    const auto dir = output_dir(o, "clean");
    write_text(dir / "cleaning_report.json", cleaning_report_to_json(rep).dump(2) + "\n");
    const auto text = cleaning_report_text(rep);
    write_text(dir / "cleaning_report.txt", text);
    std::cout << text;
    return 0;
}

int cmd_extract(const Common& o, const std::string& image, bool resample) {
    const auto img = load_pgm(image);
    TraceExtractionConfig cfg;
    if (o.seed) cfg.rng_seed = *o.seed;
    EcgTrace trace;
    if (img.leads.empty()) {
        trace = extract_trace(img, cfg);
    } else {
        std::size_t n = std::numeric_limits<std::size_t>::max();
        for (const auto& box : img.leads) {
            auto t = extract_trace(img, cfg, box);
            trace.lead_names.push_back(box.lead);
            trace.channels.push_back(std::move(t.channels.front()));
            trace.sample_rate = t.sample_rate;
            n = std::min(n, trace.channels.back().size());
        }
        for (auto& ch : trace.channels) {
            if (ch.size() > n) {
                ch.resize(n);
                trace.notes.push_back("leads truncated to the shortest box (" + std::to_string(n) + " samples)");
            }
        }
    }
    if (resample) trace = resample_and_rescale(trace, 100.0, kEmbedSamples);
    const fs::path out = o.out.empty() ? output_dir(o, "trace.csv") : fs::path(o.out);
    save_trace_csv(trace, out.string());
    std::cout << "extracted " << trace.n_channels() << " lead(s), " << trace.n_samples() << " samples at "
              << format_general(trace.sample_rate, 6) << " Hz to " << out.string() << '\n';
    for (const auto& n : trace.notes) std::cout << "note: " << n << '\n';
    return 0;
}

int cmd_train(const Common& o) {
    const auto c = experiment_config(o);
    const auto cohort = load_experiment_cohort(c);
    cohort.require_both_classes();
    const auto y = cohort.labels();
    const auto dir = output_dir(o, c.output_dir);
    for (auto v : c.variants) {
        const bool with_ecg = v == EcgVariant::with;
        if (with_ecg && !cohort.has_ecg()) throw DataError("ecg: the cohort carries no ECG traces");
        const auto X = encode_cohort(cohort, with_ecg, with_ecg ? EmbeddingFn(embed_segment) : EmbeddingFn{});
        for (auto f : c.models) {
            const auto m = train_final_model(c, X, y, f);
            const auto path = dir / ("model_" + family_name(f) + "_" + variant_name(v) + ".json");
            write_text(path, m.to_json().dump(2) + "\n");
            std::cout << path.string() << ": " << m.params.describe() << ", threshold "
                      << format_fixed(m.decision.threshold, 4) << '\n';
        }
    }
    return 0;
}

int cmd_evaluate(const Common& o) {
    const auto c = experiment_config(o);
    const auto bundle = run_experiment(c);
    const auto dir = output_dir(o, c.output_dir);
    const auto manifest = write_bundle(bundle, c, dir, utc_timestamp());
    std::cout << bundle.files.at("summary.txt");
    std::cout << "\nbundle " << manifest.at("bundle_hash").get<std::string>() << " written to " << dir.string() << '\n';
    return 0;
}

int cmd_explain(const Common& o, const std::string& model_path, const std::string& cohort_path, std::size_t bins) {
    const auto model = load_model(model_path);
    const auto cohort = load_cohort(cohort_path);
    const auto X = encode_cohort(cohort, false);
    LookupTable t = std::holds_alternative<GbdtModel>(model) ? gbdt_to_table(std::get<GbdtModel>(model))
                                                             : lr_to_table(std::get<LogisticModel>(model), X, bins);
    if (cohort.labeled()) attach_calibration(t, X, cohort.labels());
    const auto dir = output_dir(o, "tables");
    const auto stem = fs::path(model_path).stem().string();
    write_text(dir / (stem + "_table.txt"), render_table(t, TableFormat::text));
    write_text(dir / (stem + "_table.md"), render_table(t, TableFormat::markdown));
    write_text(dir / (stem + "_table.csv"), render_table(t, TableFormat::csv));
    std::cout << render_table(t, TableFormat::text);
    return 0;
}

int cmd_score(const std::string& model_path, const std::string& record_path, std::size_t row,
              const std::string& baseline_path) {
    const auto doc = read_json(model_path);
    const auto cohort = load_cohort(record_path);
    if (row >= cohort.size()) {
        throw ConfigError("--row " + std::to_string(row) + " out of range (file has " + std::to_string(cohort.size()) +
                          " records)");
    }
    std::optional<BaselineScoreSpec> baseline;
    if (!baseline_path.empty()) baseline = load_baseline_spec(baseline_path);
    const auto rep = score_record(doc, cohort.records[row], baseline ? &*baseline : nullptr);
    std::cout << rep.text();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Risk stratification toolkit: cohorts, models, evaluation and score tables"};
    app.require_subcommand(1);
    Common o;
    auto add_common = [&](CLI::App* sub, bool config, bool ecg) {
        if (config) sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "override the config seed");
        sub->add_option("--out", o.out, "output directory (default under $RISKSTRAT_OUT)");
        if (ecg) {
            auto* w = sub->add_flag("--with-ecg", o.with_ecg, "include ECG");
            auto* n = sub->add_flag("--no-ecg", o.no_ecg, "exclude ECG");
            w->excludes(n);
        }
    };

    auto* gen = app.add_subcommand("generate", "generate a synthetic cohort from a cohort spec");
    add_common(gen, true, true);

    std::string cohort_path;
    auto* clean = app.add_subcommand("clean", "report suspicious values in a cohort CSV");
    clean->add_option("--cohort", cohort_path, "cohort CSV")->required()->check(CLI::ExistingFile);
    add_common(clean, false, false);

    std::string image;
    bool resample = false;
    auto* ext = app.add_subcommand("extract-ecg", "extract a trace from a PGM raster");
    ext->add_option("--image", image, "PGM image")->required()->check(CLI::ExistingFile);
    ext->add_flag("--resample", resample, "resample to 100 Hz x 1000 samples");
    add_common(ext, false, false);

    auto* train = app.add_subcommand("train", "fit final models on the whole cohort");
    add_common(train, true, true);

    auto* evaluate = app.add_subcommand("evaluate", "run the full nested-CV experiment and write the report bundle");
    add_common(evaluate, true, true);

    std::string model_path;
    std::size_t bins = 5;
    auto* explain = app.add_subcommand("explain", "render look-up tables for a model");
    explain->add_option("--model", model_path, "model JSON")->required()->check(CLI::ExistingFile);
    explain->add_option("--cohort", cohort_path, "training cohort CSV")->required()->check(CLI::ExistingFile);
    explain->add_option("--bins", bins, "quantile bins for logistic tables")->check(CLI::Range(2, 100));
    add_common(explain, false, false);

    std::string record_path, baseline_path;
    std::size_t row = 0;
    auto* score = app.add_subcommand("score", "score one record");
    score->add_option("--model", model_path, "model JSON")->required()->check(CLI::ExistingFile);
    score->add_option("--record", record_path, "CSV with the cohort header")->required()->check(CLI::ExistingFile);
    score->add_option("--row", row, "0-based record index in the CSV");
    score->add_option("--baseline", baseline_path, "baseline score spec")->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*gen) return cmd_generate(o);
        if (*clean) return cmd_clean(o, cohort_path);
        if (*ext) return cmd_extract(o, image, resample);
        if (*train) return cmd_train(o);
        if (*evaluate) return cmd_evaluate(o);
        if (*explain) return cmd_explain(o, model_path, cohort_path, bins);
        if (*score) return cmd_score(model_path, record_path, row, baseline_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 4;
    }
    return 0;
}
