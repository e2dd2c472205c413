#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "txnkb/common.hpp"

namespace txnkb {

// Half-open-from-below interval (lower, upper], or the dedicated missing bin.
// lower may be -inf and upper +inf.
struct Bin {
    double lower = -std::numeric_limits<double>::infinity();
    double upper = std::numeric_limits<double>::infinity();
    bool is_missing_bin = false;
    long event_count = 0;
    long nonevent_count = 0;
    double woe = 0.0;

    // The missing bin's bounds are NaN on purpose (no numeric range), so a
    // defaulted comparison would make any container holding one unequal to
    // itself. Bounds only count when the bin spans actual values.
    bool operator==(const Bin& o) const {
        if (is_missing_bin != o.is_missing_bin || event_count != o.event_count ||
            nonevent_count != o.nonevent_count || woe != o.woe)
            return false;
        return is_missing_bin || (lower == o.lower && upper == o.upper);
    }
};

struct FeatureWoE {
    std::string feature;
    std::vector<Bin> bins;
    double iv = 0.0;

    bool operator==(const FeatureWoE&) const = default;
};

struct BinningConfig {
    int max_bins = 10;
    int min_samples = 20;
    double merge_woe_delta = 0.05;   // adjacent bins closer than this collapse
    double min_support_frac = 0.05;  // bins thinner than this share of n collapse
    bool monotonic = false;          // opt-in pool-adjacent-violators pass
};

inline bool bin_contains(const Bin& b, const std::optional<double>& value) {
    if (!value) return b.is_missing_bin;
    if (b.is_missing_bin) return false;
    return b.lower < *value && *value <= b.upper;
}

/// Smoothed weight of evidence. Positive woe means the bin leans toward the
/// event (positive) class. n_bins is the feature's total bin count and feeds
/// the additive smoothing so that woe stays finite for pure bins.
inline double woe_of_bin(const Bin& bin, long total_events, long total_nonevents,
                         std::size_t n_bins) {
    const double b = static_cast<double>(n_bins);
    const double pe = (static_cast<double>(bin.event_count) + 0.5) /
                      (static_cast<double>(total_events) + 0.5 * b);
    const double pn = (static_cast<double>(bin.nonevent_count) + 0.5) /
                      (static_cast<double>(total_nonevents) + 0.5 * b);
    return std::log(pe / pn);
}

/// Information value: sum over bins of (p_event - p_nonevent) * woe, with the
/// same smoothed proportions the woe uses. Non-negative by construction.
inline double information_value(const FeatureWoE& fw) {
    long total_events = 0, total_nonevents = 0;
    for (const auto& b : fw.bins) {
        total_events += b.event_count;
        total_nonevents += b.nonevent_count;
    }
    const double nb = static_cast<double>(fw.bins.size());
    double iv = 0.0;
    for (const auto& b : fw.bins) {
        const double pe = (static_cast<double>(b.event_count) + 0.5) /
                          (static_cast<double>(total_events) + 0.5 * nb);
        const double pn = (static_cast<double>(b.nonevent_count) + 0.5) /
                          (static_cast<double>(total_nonevents) + 0.5 * nb);
        iv += (pe - pn) * std::log(pe / pn);
    }
    return iv;
}

namespace detail {

inline void recompute_woes(std::vector<Bin>& bins, long total_events, long total_nonevents) {
    for (auto& b : bins) b.woe = woe_of_bin(b, total_events, total_nonevents, bins.size());
}

inline void merge_into_left(std::vector<Bin>& bins, std::size_t left) {
    Bin& a = bins[left];
    const Bin& b = bins[left + 1];
    a.upper = b.upper;
    a.event_count += b.event_count;
    a.nonevent_count += b.nonevent_count;
    bins.erase(bins.begin() + static_cast<std::ptrdiff_t>(left) + 1);
}

}  // namespace detail

/// Supervised discretization of one feature against a binary target.
///
/// Candidate cuts are the distinct values at up to max_bins equal-frequency
/// quantiles; adjacent bins then merge greedily while a pair is closer than
/// merge_woe_delta in woe or a bin holds less than min_support_frac of the
/// rows. Missing values get a dedicated bin. Fewer than two distinct finite
/// values collapse to a single catch-all bin.
inline std::vector<Bin> fit_bins(std::span<const std::optional<double>> values,
                                 std::span<const int> labels, const BinningConfig& cfg = {}) {
    if (values.size() != labels.size()) throw DataError("values and labels length mismatch");
    if (static_cast<int>(values.size()) < cfg.min_samples)
        throw DataError("need at least " + std::to_string(cfg.min_samples) + " samples, got " +
                        std::to_string(values.size()));
    if (cfg.max_bins < 2) throw ConfigError("max_bins must be at least 2");

    long total_events = 0, total_nonevents = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw DataError("labels must be 0 or 1");
        if (labels[i] == 1)
            ++total_events;
        else
            ++total_nonevents;
    }
    if (total_events == 0 || total_nonevents == 0) throw DataError("degenerate target: single class");

    std::vector<std::pair<double, int>> finite;  // (value, label)
    long missing_events = 0, missing_nonevents = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i]) {
            if (!std::isfinite(*values[i])) throw DataError("non-finite feature value");
            finite.emplace_back(*values[i], labels[i]);
        } else if (labels[i] == 1) {
            ++missing_events;
        } else {
            ++missing_nonevents;
        }
    }
    const bool has_missing = missing_events + missing_nonevents > 0;

    std::vector<Bin> bins;

    if (!finite.empty()) {
        std::sort(finite.begin(), finite.end());
        const double vmin = finite.front().first;
        const double vmax = finite.back().first;

        if (vmin == vmax) {
            Bin all;
            for (const auto& [v, y] : finite) {
                (void)v;
                if (y == 1)
                    ++all.event_count;
                else
                    ++all.nonevent_count;
            }
            bins.push_back(all);
        } else {
            std::vector<double> sorted_values;
            sorted_values.reserve(finite.size());
            for (const auto& [v, _] : finite) sorted_values.push_back(v);

            std::vector<double> cuts;
            for (int k = 1; k < cfg.max_bins; ++k) {
                const double c =
                    quantile_sorted(sorted_values, static_cast<double>(k) / cfg.max_bins);
                if (c >= vmax) continue;  // keep the last bin non-empty
                if (cuts.empty() || c > cuts.back()) cuts.push_back(c);
            }

            const double inf = std::numeric_limits<double>::infinity();
            double lo = -inf;
            for (double c : cuts) {
                bins.push_back({lo, c});
                lo = c;
            }
            bins.push_back({lo, inf});

            for (const auto& [v, y] : finite) {
                const auto it = std::lower_bound(cuts.begin(), cuts.end(), v);
                auto& bin = bins[static_cast<std::size_t>(it - cuts.begin())];
                if (y == 1)
                    ++bin.event_count;
                else
                    ++bin.nonevent_count;
            }
        }
    }

    const auto n_finite_bins = [&bins] {
        std::size_t k = 0;
        for (const auto& b : bins)
            if (!b.is_missing_bin) ++k;
        return k;
    };

    if (has_missing) {
        Bin mb;
        mb.is_missing_bin = true;
        mb.lower = mb.upper = std::numeric_limits<double>::quiet_NaN();
        mb.event_count = missing_events;
        mb.nonevent_count = missing_nonevents;
        bins.push_back(mb);
    }
    if (bins.empty()) throw DataError("no rows to bin");

    detail::recompute_woes(bins, total_events, total_nonevents);

    // Greedy merging over finite bins only; the missing bin never merges.
    const double min_support =
        cfg.min_support_frac * static_cast<double>(values.size());
    while (n_finite_bins() > 1) {
        std::size_t finite_end = 0;
        while (finite_end < bins.size() && !bins[finite_end].is_missing_bin) ++finite_end;

        // Closest adjacent pair in woe first. Two bins pure on the same side
        // are compositionally identical; their smoothed woe gap only encodes
        // support size, so the effective distance is zero.
        auto pair_delta = [&](std::size_t i) {
            const Bin& a = bins[i];
            const Bin& b = bins[i + 1];
            const bool same_pure = (a.nonevent_count == 0 && b.nonevent_count == 0) ||
                                   (a.event_count == 0 && b.event_count == 0);
            return same_pure ? 0.0 : std::fabs(a.woe - b.woe);
        };
        std::size_t best_pair = bins.size();
        double best_delta = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i + 1 < finite_end; ++i) {
            const double d = pair_delta(i);
            if (d < best_delta) {
                best_delta = d;
                best_pair = i;
            }
        }
        if (best_pair < bins.size() && best_delta < cfg.merge_woe_delta) {
            detail::merge_into_left(bins, best_pair);
            detail::recompute_woes(bins, total_events, total_nonevents);
            continue;
        }

        // Then any under-supported bin, merged toward the closer-woe neighbor.
        std::size_t thin = bins.size();
        for (std::size_t i = 0; i < finite_end; ++i) {
            const double support =
                static_cast<double>(bins[i].event_count + bins[i].nonevent_count);
            if (support < min_support) {
                thin = i;
                break;
            }
        }
        if (thin == bins.size()) break;
        std::size_t left;
        if (thin == 0)
            left = 0;
        else if (thin + 1 >= finite_end)
            left = thin - 1;
        else {
            const double dl = std::fabs(bins[thin].woe - bins[thin - 1].woe);
            const double dr = std::fabs(bins[thin].woe - bins[thin + 1].woe);
            left = dl <= dr ? thin - 1 : thin;
        }
        detail::merge_into_left(bins, left);
        detail::recompute_woes(bins, total_events, total_nonevents);
    }

    // Optional monotonicity repair: merge adjacent violators until the woe
    // sequence over finite bins is monotone in the direction suggested by the
    // endpoints.
    if (cfg.monotonic) {
        for (;;) {
            std::size_t finite_end = 0;
            while (finite_end < bins.size() && !bins[finite_end].is_missing_bin) ++finite_end;
            if (finite_end < 3) break;
            const bool increasing = bins[finite_end - 1].woe >= bins[0].woe;
            std::size_t violation = bins.size();
            for (std::size_t i = 0; i + 1 < finite_end; ++i) {
                const bool ok = increasing ? bins[i].woe <= bins[i + 1].woe
                                           : bins[i].woe >= bins[i + 1].woe;
                if (!ok) {
                    violation = i;
                    break;
                }
            }
            if (violation == bins.size()) break;
            detail::merge_into_left(bins, violation);
            detail::recompute_woes(bins, total_events, total_nonevents);
        }
    }

    return bins;
}

inline FeatureWoE fit_feature_woe(const std::string& feature,
                                  std::span<const std::optional<double>> values,
                                  std::span<const int> labels, const BinningConfig& cfg = {}) {
    FeatureWoE fw;
    fw.feature = feature;
    fw.bins = fit_bins(values, labels, cfg);
    fw.iv = information_value(fw);
    return fw;
}

/// Index of the bin containing the value; missing values hit the missing bin.
/// Returns size() when nothing matches (a missing value with no missing bin).
inline std::size_t bin_index(const std::vector<Bin>& bins, const std::optional<double>& value) {
    for (std::size_t i = 0; i < bins.size(); ++i)
        if (bin_contains(bins[i], value)) return i;
    return bins.size();
}

}  // namespace txnkb
