#pragma once

#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskstrat/gbdt.hpp"
#include "riskstrat/logistic.hpp"

namespace riskstrat {

inline constexpr int kModelSchemaVersion = 1;

using Model = std::variant<LogisticModel, GbdtModel>;

inline std::string model_family(const Model& m) {
    return std::holds_alternative<LogisticModel>(m) ? "logistic" : "gbdt";
}

inline const std::vector<ColumnMeta>& model_columns(const Model& m) {
    return std::visit([](const auto& x) -> const std::vector<ColumnMeta>& { return x.columns; }, m);
}

inline bool model_uses_ecg(const Model& m) {
    const auto& cols = model_columns(m);
    return std::any_of(cols.begin(), cols.end(), [](const ColumnMeta& c) { return c.kind == ColumnKind::ecg_embedding; });
}

inline std::vector<double> predict_model(const Model& m, const FeatureMatrix& X) {
    if (const auto* lr = std::get_if<LogisticModel>(&m)) return predict_logistic(*lr, X);
    return predict_gbdt(std::get<GbdtModel>(m), X);
}

inline double predict_model(const Model& m, const PatientRecord& rec) {
    if (const auto* lr = std::get_if<LogisticModel>(&m)) return predict_logistic(*lr, rec);
    return predict_gbdt(std::get<GbdtModel>(m), rec);
}

namespace detail {

inline nlohmann::json columns_to_json(const std::vector<ColumnMeta>& cols) {
    auto a = nlohmann::json::array();
    for (const auto& c : cols) a.push_back(column_to_json(c));
    return a;
}

inline std::vector<ColumnMeta> columns_from_json(const nlohmann::json& j) {
    std::vector<ColumnMeta> cols;
    for (const auto& c : j) cols.push_back(column_from_json(c));
    return cols;
}

}  // namespace detail

inline nlohmann::json model_to_json(const Model& model) {
    nlohmann::json j;
    j["format"] = "riskstrat-model";
    j["version"] = kModelSchemaVersion;
    j["family"] = model_family(model);
    j["columns"] = detail::columns_to_json(model_columns(model));
    if (const auto* lr = std::get_if<LogisticModel>(&model)) {
        j["intercept"] = lr->intercept;
        j["coefficients"] = lr->coefficients;
        j["C"] = lr->C;
        j["tol"] = lr->tol;
        j["iterations"] = lr->iterations;
        j["converged"] = lr->converged;
        j["imputer"] = {{"kind", lr->imputer.kind == ImputeKind::median ? "median" : "mean"},
                        {"columns", lr->imputer.columns},
                        {"fill", lr->imputer.fill}};
    } else {
        const auto& g = std::get<GbdtModel>(model);
        j["base_score"] = g.base_score;
        j["params"] = {{"n_estimators", g.params.n_estimators}, {"learning_rate", g.params.learning_rate},
                       {"max_depth", g.params.max_depth},       {"subsample", g.params.subsample},
                       {"alpha", g.params.alpha},               {"gamma", g.params.gamma},
                       {"lambda", g.params.lambda},             {"rng_seed", g.params.rng_seed}};
        auto trees = nlohmann::json::array();
        for (const auto& t : g.trees) {
            auto nodes = nlohmann::json::array();
            for (const auto& n : t.nodes) {
                if (n.leaf) {
                    nodes.push_back({{"leaf", true}, {"weight", n.weight}, {"cover", n.cover}});
                } else {
                    nodes.push_back({{"leaf", false},
                                     {"feature", n.feature},
                                     {"threshold", n.threshold},
                                     {"default", n.default_left ? "left" : "right"},
                                     {"left", n.left},
                                     {"right", n.right},
                                     {"gain", n.gain},
                                     {"cover", n.cover}});
                }
            }
            trees.push_back(std::move(nodes));
        }
        j["trees"] = std::move(trees);
        j["train_loss"] = g.train_loss;
    }
    return j;
}

inline Model model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "riskstrat-model") throw DataError("not a riskstrat model file");
        const int version = j.at("version").get<int>();
        if (version != kModelSchemaVersion) {
            throw ConfigError("model schema version " + std::to_string(version) + " is not supported (this build reads version " +
                              std::to_string(kModelSchemaVersion) + ")");
        }
        const auto family = j.at("family").get<std::string>();
        auto cols = detail::columns_from_json(j.at("columns"));
        if (family == "logistic") {
            LogisticModel m;
            m.columns = std::move(cols);
            m.intercept = j.at("intercept").get<double>();
            m.coefficients = j.at("coefficients").get<std::vector<double>>();
            m.C = j.at("C").get<double>();
            m.tol = j.at("tol").get<double>();
            m.iterations = j.at("iterations").get<std::size_t>();
            m.converged = j.at("converged").get<bool>();
            const auto& imp = j.at("imputer");
            m.imputer.kind = imp.at("kind") == "mean" ? ImputeKind::mean : ImputeKind::median;
            m.imputer.columns = imp.at("columns").get<std::vector<std::string>>();
            m.imputer.fill = imp.at("fill").get<std::vector<double>>();
            if (m.coefficients.size() != m.columns.size()) throw DataError("coefficient count does not match columns");
            return m;
        }
        if (family == "gbdt") {
            GbdtModel m;
            m.columns = std::move(cols);
            m.base_score = j.at("base_score").get<double>();
            const auto& p = j.at("params");
            m.params.n_estimators = p.at("n_estimators").get<std::size_t>();
            m.params.learning_rate = p.at("learning_rate").get<double>();
            m.params.max_depth = p.at("max_depth").get<std::size_t>();
            m.params.subsample = p.at("subsample").get<double>();
            m.params.alpha = p.at("alpha").get<double>();
            m.params.gamma = p.at("gamma").get<double>();
            m.params.lambda = p.at("lambda").get<double>();
            m.params.rng_seed = p.at("rng_seed").get<std::uint64_t>();
            for (const auto& tj : j.at("trees")) {
                Tree t;
                for (const auto& nj : tj) {
                    TreeNode n;
                    n.leaf = nj.at("leaf").get<bool>();
                    n.cover = nj.value("cover", 0.0);
                    if (n.leaf) {
                        n.weight = nj.at("weight").get<double>();
                    } else {
                        n.feature = nj.at("feature").get<std::size_t>();
                        n.threshold = nj.at("threshold").get<double>();
                        n.default_left = nj.at("default") == "left";
                        n.left = nj.at("left").get<int>();
                        n.right = nj.at("right").get<int>();
                        n.gain = nj.value("gain", 0.0);
                        if (n.feature >= m.columns.size()) throw DataError("tree node references unknown feature");
                    }
                    t.nodes.push_back(n);
                }
                for (const auto& n : t.nodes) {
                    if (!n.leaf && (n.left < 0 || n.right < 0 || static_cast<std::size_t>(n.left) >= t.nodes.size() ||
                                    static_cast<std::size_t>(n.right) >= t.nodes.size())) {
                        throw DataError("tree node child index out of range");
                    }
                }
                if (t.nodes.empty()) throw DataError("empty tree in model file");
                m.trees.push_back(std::move(t));
            }
            m.train_loss = j.value("train_loss", std::vector<double>{});
            return m;
        }
        throw DataError("unknown model family '" + family + "'");
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed model file: ") + e.what());
    }
}

inline void save_model(const Model& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write model " + path);
    out << model_to_json(m).dump(2) << '\n';
}

inline Model load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
    return model_from_json(j);
}

}  // namespace riskstrat
