#pragma once

#include <string>
#include <vector>

#include "riskstrat/common.hpp"
#include "riskstrat/ingest.hpp"

namespace riskstrat::testing {

inline std::vector<ColumnMeta> numeric_columns(std::size_t p) {
    std::vector<ColumnMeta> cols;
    for (std::size_t j = 0; j < p; ++j) cols.push_back({"x" + std::to_string(j), ColumnKind::numeric, Transform::identity, "x" + std::to_string(j), "", 0});
    return cols;
}

// Row-major values into a fully observed numeric matrix.
inline FeatureMatrix dense(std::size_t n, std::size_t p, const std::vector<double>& v) {
    FeatureMatrix m(n, numeric_columns(p));
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < p; ++c) m.set(r, c, v[r * p + c]);
    }
    return m;
}

struct Dataset {
    FeatureMatrix X;
    std::vector<int> y;
    std::vector<double> eta;  // true linear predictor
};

// Gaussian columns; labels drawn from sigmoid(b0 + sum beta_j x_j).
inline Dataset planted(std::size_t n, const std::vector<double>& beta, std::uint64_t seed, double b0 = 0.0) {
    Rng rng(seed);
    const std::size_t p = beta.size();
    std::vector<double> v(n * p);
    for (auto& x : v) x = rng.normal();
    Dataset d{dense(n, p, v), std::vector<int>(n), std::vector<double>(n)};
    for (std::size_t r = 0; r < n; ++r) {
        double e = b0;
        for (std::size_t j = 0; j < p; ++j) e += beta[j] * v[r * p + j];
        d.eta[r] = e;
        d.y[r] = rng.uniform() < sigmoid(e) ? 1 : 0;
    }
    return d;
}

}  // namespace riskstrat::testing
