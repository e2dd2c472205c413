#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "txnkb/common.hpp"
#include "txnkb/ingest.hpp"

namespace txnkb {

// Plan for a synthetic corpus with one planted ground-truth rule:
// label = positive iff the activity span (last ts minus first ts, in days)
// is at most threshold_days.
//
// Label noise is one-sided: a noise fraction of users whose span violates the
// rule are flipped to the positive label. Spans are uniform on
// [0, 2 * threshold], so the flip probability on rule-negative users is
// 2 * noise and the overall disagreement between labels and the planted rule
// is noise in expectation. One-sided flips keep the planted rule the
// Bayes-optimal single-threshold classifier while leaving its positive side
// clean, which is what a rule-recovery exercise needs.
struct PlantSpec {
    std::string target_name = "churn";
    double threshold_days = 70.0;
    double noise = 0.1;
    std::string positive_label = "1";
    std::string negative_label = "0";
    double balance_min = 0.3;  // admissible range for the realized positive rate
    double balance_max = 0.8;
    // Transactions arrive at a user-specific daily rate drawn independently of
    // the span. Rate-shaped essences (mean gap, gap spread) therefore carry no
    // label information, while count-shaped essences inherit the span signal
    // with the same sign as the planted rule.
    double txn_rate_per_day = 0.30;
    double rate_jitter = 0.08;  // multiplicative, uniform on [1 - j, 1 + j]
    double test_fraction = 0.3;
};

/// Parses the compact plant grammar, e.g. "churn:activity<=70:noise0.1".
inline PlantSpec parse_plant_spec(const std::string& text) {
    PlantSpec plan;
    const auto c1 = text.find(':');
    const auto c2 = text.find(':', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
        throw ConfigError("plant spec must look like '<target>:activity<=<days>:noise<rate>'");
    plan.target_name = text.substr(0, c1);
    if (plan.target_name.empty()) throw ConfigError("plant spec: target name is empty");
    const std::string rule = text.substr(c1 + 1, c2 - c1 - 1);
    const std::string prefix = "activity<=";
    if (rule.rfind(prefix, 0) != 0)
        throw ConfigError("plant spec: rule must be 'activity<=<days>', got '" + rule + "'");
    try {
        plan.threshold_days = std::stod(rule.substr(prefix.size()));
    } catch (const std::exception&) {
        throw ConfigError("plant spec: bad threshold in '" + rule + "'");
    }
    const std::string noise_part = text.substr(c2 + 1);
    const std::string noise_prefix = "noise";
    if (noise_part.rfind(noise_prefix, 0) != 0)
        throw ConfigError("plant spec: expected 'noise<rate>', got '" + noise_part + "'");
    try {
        plan.noise = std::stod(noise_part.substr(noise_prefix.size()));
    } catch (const std::exception&) {
        throw ConfigError("plant spec: bad noise rate in '" + noise_part + "'");
    }
    if (plan.threshold_days <= 0.0) throw ConfigError("plant spec: threshold must be positive");
    return plan;
}

namespace detail {

inline const std::vector<int>& synthetic_mcc_pool() {
    // Wide enough that merchant-diversity essences keep growing with the
    // transaction count over the whole span range instead of saturating.
    static const std::vector<int> pool{
        5411, 5812, 5912, 4111, 5541, 6011, 5999, 4814, 5261, 7832, 5331, 4121,
        5814, 5941, 5732, 4899, 5200, 5651, 5945, 5977, 7011, 7230, 7512, 7995,
        8011, 8021, 8043, 8062, 8099, 8220, 8398, 8661, 8699, 8931, 9222, 9402};
    return pool;
}

}  // namespace detail

/// Deterministic synthetic corpus for a plant plan. Identical (n_users, seed,
/// plan) produce byte-identical canonical serializations.
inline std::vector<UserHistory> generate_synthetic(int n_users, std::uint64_t seed, const PlantSpec& plan) {
    if (n_users <= 0) throw ConfigError("n_users must be positive");
    if (plan.noise < 0.0 || plan.noise >= 0.5)
        throw ConfigError("label-noise rate must lie in [0, 0.5): at 0.5 and beyond the planted rule "
                          "is unrecoverable");
    if (plan.txn_rate_per_day <= 0.0) throw ConfigError("txn rate must be positive");
    if (plan.rate_jitter < 0.0 || plan.rate_jitter >= 1.0)
        throw ConfigError("rate jitter must lie in [0, 1)");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> log_amount(3.5, 1.0);
    const auto& mcc_pool = detail::synthetic_mcc_pool();

    std::vector<UserHistory> out;
    out.reserve(static_cast<std::size_t>(n_users));
    std::size_t positives = 0;

    for (int i = 0; i < n_users; ++i) {
        UserHistory h;
        {
            char buf[24];
            std::snprintf(buf, sizeof(buf), "u%06d", i);
            h.user_id = buf;
        }

        const double span_days = unit(rng) * 2.0 * plan.threshold_days;
        const double rate = plan.txn_rate_per_day * (1.0 + plan.rate_jitter * (2.0 * unit(rng) - 1.0));
        const int n_txns = std::max(2, static_cast<int>(std::llround(span_days * rate)));
        const auto span_seconds = static_cast<std::int64_t>(std::llround(span_days * 86400.0));

        std::vector<std::int64_t> ts(static_cast<std::size_t>(n_txns));
        ts.front() = 0;
        ts.back() = span_seconds;
        for (int k = 1; k + 1 < n_txns; ++k)
            ts[static_cast<std::size_t>(k)] =
                static_cast<std::int64_t>(std::llround(unit(rng) * static_cast<double>(span_seconds)));
        std::sort(ts.begin(), ts.end());

        for (int k = 0; k < n_txns; ++k) {
            Transaction t;
            t.user_id = h.user_id;
            t.ts = ts[static_cast<std::size_t>(k)];
            // Skewed merchant mix: one preferred code per user plus a tail.
            const std::size_t preferred = static_cast<std::size_t>(fnv1a(h.user_id)) % mcc_pool.size();
            t.mcc_code = (unit(rng) < 0.5) ? mcc_pool[preferred]
                                           : mcc_pool[rng() % mcc_pool.size()];
            const double magnitude = std::round(std::exp(log_amount(rng)) * 100.0) / 100.0;
            const bool inflow = unit(rng) < 0.2;
            t.amount = inflow ? magnitude : -magnitude;
            t.txn_type = inflow ? "TRANSFER" : "POS";
            h.transactions.push_back(std::move(t));
        }

        // The predicate is evaluated on the realized span so that labels and
        // the recovered essence agree exactly when noise is 0.
        const double realized_span_days = static_cast<double>(span_seconds) / 86400.0;
        const bool rule_positive = realized_span_days <= plan.threshold_days;
        bool positive = rule_positive;
        if (!rule_positive && unit(rng) < 2.0 * plan.noise) positive = true;

        h.label = positive ? plan.positive_label : plan.negative_label;
        if (positive) ++positives;
        h.split = (i % 10) < static_cast<int>(std::lround((1.0 - plan.test_fraction) * 10.0))
                      ? Split::Train
                      : Split::Test;
        out.push_back(std::move(h));
    }

    if (n_users >= 100) {
        const double rate = static_cast<double>(positives) / static_cast<double>(n_users);
        if (rate < plan.balance_min || rate > plan.balance_max)
            throw DataError("realized class balance " + format_double(rate) +
                            " outside declared range [" + format_double(plan.balance_min) + ", " +
                            format_double(plan.balance_max) + "]");
    }
    return out;
}

}  // namespace txnkb
