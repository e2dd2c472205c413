#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "txnkb/common.hpp"
#include "txnkb/essence.hpp"
#include "txnkb/woe.hpp"

namespace txnkb {

struct ScorecardConfig {
    double l2 = 1.0;             // ridge strength on feature weights
    int max_iterations = 100;
    double tolerance = 1e-8;
    int min_rows_for_fit = 50;   // below this the naive additive path is used
};

struct ScorecardMeta {
    long n_rows = 0;
    double positive_prior = 0.0;
    std::string config_hash;
    bool naive_fallback = false;  // set when IRLS was skipped or abandoned
    bool converged = true;
};

// Additive scoring model over woe-transformed essences. In the naive regime
// the intercept is the log prior odds and every weight is 1, i.e. a plain
// weight-of-evidence sum.
struct Scorecard {
    std::vector<FeatureWoE> features;
    double intercept = 0.0;
    std::map<std::string, double> weights;
    ScorecardMeta meta;

    const FeatureWoE* find_feature(std::string_view name) const {
        for (const auto& f : features)
            if (f.feature == name) return &f;
        return nullptr;
    }

    /// Woe of the bin the value falls into; a missing value with no missing
    /// bin in the fit contributes neutral evidence (0).
    double woe_transform(std::string_view feature, const std::optional<double>& value) const {
        const auto* f = find_feature(feature);
        if (!f) throw DataError("scorecard has no feature: " + std::string(feature));
        const auto idx = bin_index(f->bins, value);
        if (idx == f->bins.size()) return 0.0;
        return f->bins[idx].woe;
    }

    double linear_score(const EssenceVector& row) const {
        double z = intercept;
        for (const auto& f : features) z += weights.at(f.feature) * woe_transform(f.feature, row.get(f.feature));
        return z;
    }

    double score(const EssenceVector& row) const {
        return 1.0 / (1.0 + std::exp(-linear_score(row)));
    }
};

namespace detail {

/// Gaussian elimination with partial pivoting for the small symmetric systems
/// IRLS produces; dimensions never exceed the essence catalog size plus one.
inline std::vector<double> solve_linear(std::vector<std::vector<double>> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
        if (std::fabs(a[pivot][col]) < 1e-12) throw DataError("singular system in scorecard fit");
        std::swap(a[col], a[pivot]);
        std::swap(b[col], b[pivot]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t j = i + 1; j < n; ++j) s -= a[i][j] * x[j];
        x[i] = s / a[i][i];
    }
    return x;
}

}  // namespace detail

/// Fits per-feature woe bins and a ridge-regularized logistic layer on top of
/// the transformed matrix via iteratively reweighted least squares.
///
/// Small samples (below min_rows_for_fit) and runs that fail to converge fall
/// back to the naive additive scorecard, flagged in the meta block.
inline Scorecard fit_scorecard(const EssenceMatrix& matrix, const std::vector<int>& labels,
                               const std::vector<std::string>& selected_features,
                               const BinningConfig& bin_cfg = {}, const ScorecardConfig& cfg = {}) {
    if (matrix.rows.size() != labels.size()) throw DataError("matrix and labels length mismatch");
    if (selected_features.empty()) throw ConfigError("no features selected for scorecard");

    Scorecard sc;
    long positives = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw DataError("labels must be 0 or 1");
        positives += y;
    }
    const auto n = static_cast<long>(labels.size());
    if (positives == 0 || positives == n) throw DataError("degenerate target: single class");
    sc.meta.n_rows = n;
    sc.meta.positive_prior = static_cast<double>(positives) / static_cast<double>(n);

    for (const auto& name : selected_features) {
        const auto col = matrix.column(name);
        sc.features.push_back(fit_feature_woe(name, col, labels, bin_cfg));
    }

    const std::size_t p = sc.features.size();
    std::vector<std::vector<double>> x(labels.size(), std::vector<double>(p, 0.0));
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (std::size_t j = 0; j < p; ++j)
            x[i][j] = sc.woe_transform(sc.features[j].feature,
                                       matrix.rows[i].get(sc.features[j].feature));

    const double prior_log_odds =
        std::log(sc.meta.positive_prior / (1.0 - sc.meta.positive_prior));
    auto use_naive = [&](bool converged) {
        sc.intercept = prior_log_odds;
        for (const auto& f : sc.features) sc.weights[f.feature] = 1.0;
        sc.meta.naive_fallback = true;
        sc.meta.converged = converged;
    };

    if (n < cfg.min_rows_for_fit) {
        use_naive(true);
        return sc;
    }

    // IRLS on [intercept, w]; the ridge penalty applies to the weights only.
    std::vector<double> beta(p + 1, 0.0);
    beta[0] = prior_log_odds;
    bool converged = false;
    for (int iter = 0; iter < cfg.max_iterations; ++iter) {
        std::vector<std::vector<double>> xtwx(p + 1, std::vector<double>(p + 1, 0.0));
        std::vector<double> xtwz(p + 1, 0.0);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            double z = beta[0];
            for (std::size_t j = 0; j < p; ++j) z += beta[j + 1] * x[i][j];
            const double mu = 1.0 / (1.0 + std::exp(-z));
            const double w = std::max(mu * (1.0 - mu), 1e-10);
            const double adjusted = z + (static_cast<double>(labels[i]) - mu) / w;
            // Row vector is [1, x_i]; accumulate the weighted normal equations.
            for (std::size_t a = 0; a <= p; ++a) {
                const double xa = a == 0 ? 1.0 : x[i][a - 1];
                xtwz[a] += w * xa * adjusted;
                for (std::size_t b = a; b <= p; ++b) {
                    const double xb = b == 0 ? 1.0 : x[i][b - 1];
                    xtwx[a][b] += w * xa * xb;
                }
            }
        }
        for (std::size_t a = 0; a <= p; ++a)
            for (std::size_t b = 0; b < a; ++b) xtwx[a][b] = xtwx[b][a];
        for (std::size_t j = 1; j <= p; ++j) xtwx[j][j] += cfg.l2;

        std::vector<double> next;
        try {
            next = detail::solve_linear(std::move(xtwx), std::move(xtwz));
        } catch (const DataError&) {
            break;  // ill-conditioned step; fall back below
        }
        double delta = 0.0;
        for (std::size_t j = 0; j <= p; ++j) delta = std::max(delta, std::fabs(next[j] - beta[j]));
        beta = std::move(next);
        if (delta < cfg.tolerance) {
            converged = true;
            break;
        }
    }

    if (!converged) {
        use_naive(false);
        return sc;
    }
    sc.intercept = beta[0];
    for (std::size_t j = 0; j < p; ++j) sc.weights[sc.features[j].feature] = beta[j + 1];
    return sc;
}

/// Features ordered by information value, strongest first; ties break by name.
inline std::vector<std::pair<std::string, double>> iv_ranking(const Scorecard& sc) {
    std::vector<std::pair<std::string, double>> out;
    for (const auto& f : sc.features) out.emplace_back(f.feature, f.iv);
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return out;
}

}  // namespace txnkb
