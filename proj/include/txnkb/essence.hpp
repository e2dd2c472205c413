#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "txnkb/common.hpp"
#include "txnkb/ingest.hpp"

namespace txnkb {

enum class EssenceCategory { TemporalDynamics, MonetaryBehavior, MerchantDistribution };

inline const char* to_string(EssenceCategory c) {
    switch (c) {
        case EssenceCategory::TemporalDynamics: return "temporal_dynamics";
        case EssenceCategory::MonetaryBehavior: return "monetary_behavior";
        default: return "merchant_distribution";
    }
}

inline EssenceCategory essence_category_from_string(std::string_view s) {
    if (s == "temporal_dynamics") return EssenceCategory::TemporalDynamics;
    if (s == "monetary_behavior") return EssenceCategory::MonetaryBehavior;
    if (s == "merchant_distribution") return EssenceCategory::MerchantDistribution;
    throw ConfigError("unknown essence category: " + std::string(s));
}

inline std::vector<EssenceCategory> all_essence_categories() {
    return {EssenceCategory::TemporalDynamics, EssenceCategory::MonetaryBehavior,
            EssenceCategory::MerchantDistribution};
}

struct EssenceSpec {
    std::string name;
    EssenceCategory category = EssenceCategory::TemporalDynamics;
    std::string description;
    std::string extractor_id;  // binds the catalog entry to a built-in extractor

    bool operator==(const EssenceSpec&) const = default;
};

/// One user's essence values in catalog order. A disengaged optional is an
/// explicit missing marker, not zero.
class EssenceVector {
public:
    EssenceVector() = default;
    EssenceVector(std::string user_id, std::vector<std::string> names,
                  std::vector<std::optional<double>> values)
        : user_id_(std::move(user_id)), names_(std::move(names)), values_(std::move(values)) {
        if (names_.size() != values_.size()) throw DataError("essence vector shape mismatch");
    }

    const std::string& user_id() const { return user_id_; }
    const std::vector<std::string>& names() const { return names_; }
    std::size_t size() const { return names_.size(); }

    bool has(std::string_view name) const {
        return std::find(names_.begin(), names_.end(), name) != names_.end();
    }

    const std::optional<double>& get(std::string_view name) const {
        const auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end())
            throw DataError("essence key not present: " + std::string(name));
        return values_[static_cast<std::size_t>(it - names_.begin())];
    }

    const std::optional<double>& at(std::size_t i) const { return values_.at(i); }

    bool operator==(const EssenceVector&) const = default;

private:
    std::string user_id_;
    std::vector<std::string> names_;
    std::vector<std::optional<double>> values_;
};

namespace detail {

/// Per-history intermediate quantities shared by the extractors. Timestamps
/// are rebased to the first event so every downstream value is invariant to
/// shifting the raw clock.
struct HistoryStats {
    std::vector<double> t;        // seconds since first event, ascending
    std::vector<double> gaps;     // successive differences, seconds
    std::vector<double> amounts;  // signed, inflow positive
    double total_inflow = 0.0;
    double total_outflow = 0.0;  // magnitude of negative amounts
    double max_abs_amount = 0.0;
    std::map<int, std::size_t> mcc_counts;
    std::size_t n = 0;
};

inline HistoryStats make_stats(const UserHistory& h) {
    HistoryStats s;
    s.n = h.transactions.size();
    if (s.n == 0) return s;
    const auto t0 = std::min_element(h.transactions.begin(), h.transactions.end(),
                                     [](const Transaction& a, const Transaction& b) {
                                         return a.ts < b.ts;
                                     })
                        ->ts;
    // Events ordered by rebased time; amounts travel with their timestamps so
    // windowed statistics are independent of the input ordering.
    std::vector<std::pair<double, double>> events;
    events.reserve(s.n);
    for (const auto& txn : h.transactions) {
        events.emplace_back(static_cast<double>(txn.ts - t0), txn.amount);
        if (txn.amount > 0)
            s.total_inflow += txn.amount;
        else
            s.total_outflow += -txn.amount;
        s.max_abs_amount = std::max(s.max_abs_amount, std::fabs(txn.amount));
        if (txn.mcc_code) ++s.mcc_counts[*txn.mcc_code];
    }
    std::stable_sort(events.begin(), events.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    s.t.reserve(s.n);
    s.amounts.reserve(s.n);
    for (const auto& [t, amount] : events) {
        s.t.push_back(t);
        s.amounts.push_back(amount);
    }
    for (std::size_t i = 1; i < s.t.size(); ++i) s.gaps.push_back(s.t[i] - s.t[i - 1]);
    return s;
}

using Extractor = std::function<std::optional<double>(const HistoryStats&)>;

inline const std::map<std::string, Extractor>& extractor_registry() {
    static const std::map<std::string, Extractor> registry = [] {
        std::map<std::string, Extractor> r;
        constexpr double kDay = 86400.0;
        constexpr double kHour = 3600.0;
        r["activity_period_days"] = [&](const HistoryStats& s) -> std::optional<double> {
            if (s.n == 0) return std::nullopt;
            return (s.t.back() - s.t.front()) / kDay;
        };
        r["txn_count"] = [](const HistoryStats& s) -> std::optional<double> {
            return static_cast<double>(s.n);
        };
        r["mean_inter_txn_hours"] = [&](const HistoryStats& s) -> std::optional<double> {
            if (s.gaps.empty()) return std::nullopt;
            return sample_mean(s.gaps) / kHour;
        };
        r["std_inter_txn_hours"] = [&](const HistoryStats& s) -> std::optional<double> {
            const auto sd = sample_std(s.gaps);
            if (!sd) return std::nullopt;
            return *sd / kHour;
        };
        // Recency proxy: the stretch of silence closing the history, i.e. the
        // gap between the two most recent events. The canonical clock is
        // per-user relative, so there is no global observation horizon to
        // measure against.
        r["days_since_last_txn"] = [&](const HistoryStats& s) -> std::optional<double> {
            if (s.gaps.empty()) return std::nullopt;
            return s.gaps.back() / kDay;
        };
        // Day 0 anchors a synthetic week: day indices 5 and 6 of each 7-day
        // block count as the weekend.
        r["weekend_txn_fraction"] = [&](const HistoryStats& s) -> std::optional<double> {
            if (s.n == 0) return std::nullopt;
            std::size_t weekend = 0;
            for (double t : s.t) {
                const auto day = static_cast<long long>(std::floor(t / kDay));
                const long long dow = day % 7;
                if (dow == 5 || dow == 6) ++weekend;
            }
            return static_cast<double>(weekend) / static_cast<double>(s.n);
        };
        r["night_txn_fraction"] = [&](const HistoryStats& s) -> std::optional<double> {
            if (s.n == 0) return std::nullopt;
            std::size_t night = 0;
            for (double t : s.t) {
                const double second_of_day = t - std::floor(t / kDay) * kDay;
                if (second_of_day < 6.0 * kHour) ++night;
            }
            return static_cast<double>(night) / static_cast<double>(s.n);
        };
        r["total_outflow"] = [](const HistoryStats& s) -> std::optional<double> {
            if (s.n == 0) return std::nullopt;
            return s.total_outflow;
        };
        r["total_inflow"] = [](const HistoryStats& s) -> std::optional<double> {
            if (s.n == 0) return std::nullopt;
            return s.total_inflow;
        };
        r["mean_txn_amount"] = [](const HistoryStats& s) -> std::optional<double> {
            if (s.amounts.empty()) return std::nullopt;
            return sample_mean(s.amounts);
        };
        r["std_txn_amount"] = [](const HistoryStats& s) -> std::optional<double> {
            return sample_std(s.amounts);
        };
        r["max_txn_amount"] = [](const HistoryStats& s) -> std::optional<double> {
            if (s.n == 0) return std::nullopt;
            return s.max_abs_amount;
        };
        r["inflow_outflow_ratio"] = [](const HistoryStats& s) -> std::optional<double> {
            if (s.n == 0 || s.total_outflow == 0.0) return std::nullopt;
            return s.total_inflow / s.total_outflow;
        };
        // Coefficient of variation of inflow sums over non-overlapping 30-day
        // windows anchored at the first event. Empty windows inside the span
        // contribute zero sums; fewer than two windows or a zero mean leave
        // the value missing.
        r["monthly_inflow_cv"] = [&](const HistoryStats& s) -> std::optional<double> {
            if (s.n == 0) return std::nullopt;
            constexpr double kWindow = 30.0 * 86400.0;
            const auto n_windows =
                static_cast<std::size_t>(std::floor(s.t.back() / kWindow)) + 1;
            if (n_windows < 2) return std::nullopt;
            std::vector<double> sums(n_windows, 0.0);
            for (std::size_t i = 0; i < s.t.size(); ++i) {
                const auto w = static_cast<std::size_t>(std::floor(s.t[i] / kWindow));
                if (s.amounts[i] > 0) sums[std::min(w, n_windows - 1)] += s.amounts[i];
            }
            const double m = sample_mean(sums);
            if (m == 0.0) return std::nullopt;
            return *sample_std(sums) / m;
        };
        r["n_unique_mcc"] = [](const HistoryStats& s) -> std::optional<double> {
            if (s.n == 0) return std::nullopt;
            return static_cast<double>(s.mcc_counts.size());
        };
        r["mcc_entropy"] = [](const HistoryStats& s) -> std::optional<double> {
            if (s.mcc_counts.empty()) return std::nullopt;
            double total = 0.0;
            for (const auto& [_, c] : s.mcc_counts) total += static_cast<double>(c);
            double ent = 0.0;
            for (const auto& [_, c] : s.mcc_counts) {
                const double p = static_cast<double>(c) / total;
                ent -= p * std::log(p);
            }
            return ent;
        };
        r["top_mcc_share"] = [](const HistoryStats& s) -> std::optional<double> {
            if (s.mcc_counts.empty() || s.n == 0) return std::nullopt;
            std::size_t top = 0;
            for (const auto& [_, c] : s.mcc_counts) top = std::max(top, c);
            return static_cast<double>(top) / static_cast<double>(s.n);
        };
        return r;
    }();
    return registry;
}

}  // namespace detail

inline std::vector<EssenceSpec> default_essence_specs() {
    auto spec = [](const char* name, EssenceCategory cat, const char* desc) {
        return EssenceSpec{name, cat, desc, name};
    };
    using EC = EssenceCategory;
    return {
        spec("activity_period_days", EC::TemporalDynamics,
             "days between the first and the last observed transaction"),
        spec("txn_count", EC::TemporalDynamics, "number of observed transactions"),
        spec("mean_inter_txn_hours", EC::TemporalDynamics,
             "average hours between successive transactions"),
        spec("std_inter_txn_hours", EC::TemporalDynamics,
             "dispersion of hours between successive transactions"),
        spec("days_since_last_txn", EC::TemporalDynamics,
             "days of silence preceding the most recent transaction"),
        spec("weekend_txn_fraction", EC::TemporalDynamics,
             "share of transactions falling on weekend days of the activity week"),
        spec("night_txn_fraction", EC::TemporalDynamics,
             "share of transactions in the night hours before 06:00"),
        spec("total_outflow", EC::MonetaryBehavior, "total spent amount over the history"),
        spec("total_inflow", EC::MonetaryBehavior, "total received amount over the history"),
        spec("mean_txn_amount", EC::MonetaryBehavior, "average signed transaction amount"),
        spec("std_txn_amount", EC::MonetaryBehavior, "dispersion of signed transaction amounts"),
        spec("max_txn_amount", EC::MonetaryBehavior, "largest transaction magnitude"),
        spec("inflow_outflow_ratio", EC::MonetaryBehavior,
             "received to spent amount ratio over the history"),
        spec("monthly_inflow_cv", EC::MonetaryBehavior,
             "variability of received amounts across 30-day windows"),
        spec("n_unique_mcc", EC::MerchantDistribution, "number of distinct merchant categories"),
        spec("mcc_entropy", EC::MerchantDistribution,
             "entropy of the merchant category distribution"),
        spec("top_mcc_share", EC::MerchantDistribution,
             "share of transactions at the single most frequent merchant category"),
    };
}

inline void validate_essence_specs(const std::vector<EssenceSpec>& specs) {
    if (specs.empty()) throw ConfigError("essence catalog is empty");
    std::set<std::string> names;
    for (const auto& s : specs) {
        if (s.name.empty()) throw ConfigError("essence with empty name");
        if (!names.insert(s.name).second) throw ConfigError("duplicate essence name: " + s.name);
        if (!detail::extractor_registry().count(s.extractor_id))
            throw ConfigError("essence '" + s.name + "': unknown extractor '" + s.extractor_id + "'");
    }
}

/// Catalog override: a JSON array of {name, category, description, extractor}
/// entries. Extractors must reference built-ins; names may differ.
inline std::vector<EssenceSpec> load_essence_specs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open essence catalog: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("essence catalog " + path + ": " + e.what());
    }
    if (!j.is_array()) throw ConfigError("essence catalog must be a JSON array");
    std::vector<EssenceSpec> specs;
    for (const auto& e : j) {
        EssenceSpec s;
        try {
            s.name = e.at("name").get<std::string>();
            s.category = essence_category_from_string(e.at("category").get<std::string>());
            s.description = e.value("description", "");
            s.extractor_id = e.value("extractor", s.name);
        } catch (const nlohmann::json::exception& ex) {
            throw ConfigError(std::string("essence catalog entry: ") + ex.what());
        }
        specs.push_back(std::move(s));
    }
    validate_essence_specs(specs);
    return specs;
}

inline EssenceVector compute_essences(const UserHistory& h, const std::vector<EssenceSpec>& specs) {
    const auto stats = detail::make_stats(h);
    std::vector<std::string> names;
    std::vector<std::optional<double>> values;
    names.reserve(specs.size());
    values.reserve(specs.size());
    const auto& registry = detail::extractor_registry();
    for (const auto& spec : specs) {
        const auto it = registry.find(spec.extractor_id);
        if (it == registry.end())
            throw ConfigError("essence '" + spec.name + "': unknown extractor '" + spec.extractor_id + "'");
        names.push_back(spec.name);
        values.push_back(it->second(stats));
    }
    return EssenceVector(h.user_id, std::move(names), std::move(values));
}

struct EssenceMatrix {
    std::vector<std::string> names;
    std::vector<EssenceVector> rows;

    std::vector<std::optional<double>> column(std::string_view name) const {
        std::vector<std::optional<double>> col;
        col.reserve(rows.size());
        for (const auto& r : rows) col.push_back(r.get(name));
        return col;
    }
};

inline EssenceMatrix compute_essence_matrix(const std::vector<UserHistory>& hs,
                                            const std::vector<EssenceSpec>& specs) {
    validate_essence_specs(specs);
    EssenceMatrix m;
    for (const auto& s : specs) m.names.push_back(s.name);
    m.rows.reserve(hs.size());
    for (const auto& h : hs) m.rows.push_back(compute_essences(h, specs));
    return m;
}

/// Delimited export, one row per user; missing values are empty fields.
inline void write_essence_matrix(std::ostream& out, const EssenceMatrix& m, char delimiter = ',') {
    out << "user_id";
    for (const auto& n : m.names) out << delimiter << n;
    out << '\n';
    for (const auto& row : m.rows) {
        out << row.user_id();
        for (std::size_t i = 0; i < m.names.size(); ++i) {
            out << delimiter;
            if (row.at(i)) out << format_double(*row.at(i));
        }
        out << '\n';
    }
}

}  // namespace txnkb
