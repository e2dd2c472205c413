#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "txnkb/common.hpp"

namespace txnkb {

// Canonical event model. Timestamps are integer seconds relative to the
// user's first event, so histories from different timestamp conventions
// compare on equal footing. Amounts are signed: inflow positive.
struct Transaction {
    std::string user_id;
    std::int64_t ts = 0;
    std::optional<int> mcc_code;
    double amount = 0.0;
    std::optional<std::string> txn_type;
    std::optional<std::string> currency;

    bool operator==(const Transaction&) const = default;
};

enum class Split { Train, Test, Unlabeled };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Test: return "test";
        default: return "unlabeled";
    }
}

inline Split split_from_string(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    if (s == "unlabeled") return Split::Unlabeled;
    throw DataError("unknown split: " + std::string(s));
}

struct UserHistory {
    std::string user_id;
    std::vector<Transaction> transactions;
    std::optional<std::string> label;
    Split split = Split::Unlabeled;

    bool operator==(const UserHistory&) const = default;
};

/// Label present exactly when the user sits in a labeled split, and labeled
/// users carry at least one event.
inline void validate_history(const UserHistory& h) {
    const bool labeled_split = h.split == Split::Train || h.split == Split::Test;
    if (labeled_split && !h.label)
        throw DataError("user " + h.user_id + ": split '" + to_string(h.split) + "' requires a label");
    if (!labeled_split && h.label)
        throw DataError("user " + h.user_id + ": unlabeled split must not carry a label");
    if (h.label && h.transactions.empty())
        throw DataError("user " + h.user_id + ": labeled user has no transactions");
    for (const auto& t : h.transactions) {
        if (t.ts < 0) throw DataError("user " + h.user_id + ": negative timestamp");
        if (!std::isfinite(t.amount)) throw DataError("user " + h.user_id + ": non-finite amount");
        if (t.mcc_code && (*t.mcc_code < 0 || *t.mcc_code > 9999))
            throw DataError("user " + h.user_id + ": mcc out of range");
    }
    if (!std::is_sorted(h.transactions.begin(), h.transactions.end(),
                        [](const Transaction& a, const Transaction& b) { return a.ts < b.ts; }))
        throw DataError("user " + h.user_id + ": transactions not sorted by ts");
    if (!h.transactions.empty() && h.transactions.front().ts != 0)
        throw DataError("user " + h.user_id + ": first event ts must be 0");
}

enum class InputFormat { Delimited, LineJson };
enum class TimestampConvention { AbsoluteEpoch, RelativeDays, RelativeIndex };
enum class AmountSign { InflowPositive, OutflowPositive };

// Declarative mapping from a raw export to the canonical model. Canonical
// fields bind to at most one source column each; user, timestamp and amount
// are mandatory.
struct DatasetAdapter {
    std::string name;
    InputFormat format = InputFormat::Delimited;
    char delimiter = ',';
    std::string user_col;
    std::string ts_col;
    std::string amount_col;
    std::optional<std::string> mcc_col;
    std::optional<std::string> type_col;
    std::optional<std::string> currency_col;
    std::optional<std::string> label_col;
    TimestampConvention ts_convention = TimestampConvention::AbsoluteEpoch;
    AmountSign amount_sign = AmountSign::InflowPositive;
    std::string positive_label;  // value of label_col treated as the positive class
    double test_fraction = 0.3;  // labeled users are split train/test by id hash
};

inline void validate_adapter(const DatasetAdapter& a) {
    if (a.user_col.empty() || a.ts_col.empty() || a.amount_col.empty())
        throw ConfigError("adapter '" + a.name + "': user, timestamp and amount columns are required");
    std::vector<std::string> cols{a.user_col, a.ts_col, a.amount_col};
    for (const auto& opt : {a.mcc_col, a.type_col, a.currency_col, a.label_col})
        if (opt) cols.push_back(*opt);
    std::set<std::string> uniq(cols.begin(), cols.end());
    if (uniq.size() != cols.size())
        throw ConfigError("adapter '" + a.name + "': a source column is mapped twice");
    if (a.test_fraction < 0.0 || a.test_fraction > 1.0)
        throw ConfigError("adapter '" + a.name + "': test_fraction outside [0,1]");
}

inline TimestampConvention ts_convention_from_string(std::string_view s) {
    if (s == "absolute_epoch") return TimestampConvention::AbsoluteEpoch;
    if (s == "relative_days") return TimestampConvention::RelativeDays;
    if (s == "relative_index") return TimestampConvention::RelativeIndex;
    throw ConfigError("unknown timestamp convention: " + std::string(s));
}

inline const char* to_string(TimestampConvention c) {
    switch (c) {
        case TimestampConvention::AbsoluteEpoch: return "absolute_epoch";
        case TimestampConvention::RelativeDays: return "relative_days";
        default: return "relative_index";
    }
}

// Built-in adapters for the three public corpus shapes used in testing.
inline DatasetAdapter rosbank_adapter() {
    DatasetAdapter a;
    a.name = "rosbank";
    a.user_col = "cl_id";
    a.ts_col = "event_time";
    a.amount_col = "amount";
    a.mcc_col = "MCC";
    a.type_col = "trx_category";
    a.currency_col = "currency";
    a.label_col = "target_flag";
    a.ts_convention = TimestampConvention::RelativeDays;
    a.amount_sign = AmountSign::OutflowPositive;
    a.positive_label = "1";
    return a;
}

inline DatasetAdapter gender_adapter() {
    DatasetAdapter a;
    a.name = "gender";
    a.user_col = "customer_id";
    a.ts_col = "tr_datetime";
    a.amount_col = "amount";
    a.mcc_col = "mcc_code";
    a.type_col = "tr_type";
    a.label_col = "gender";
    a.ts_convention = TimestampConvention::RelativeDays;
    a.amount_sign = AmountSign::InflowPositive;
    a.positive_label = "1";
    return a;
}

inline DatasetAdapter datafusion_adapter() {
    DatasetAdapter a;
    a.name = "datafusion";
    a.user_col = "user_id";
    a.ts_col = "transaction_dttm";
    a.amount_col = "transaction_amt";
    a.mcc_col = "mcc_code";
    a.currency_col = "currency_rk";
    a.label_col = "churn";
    a.ts_convention = TimestampConvention::AbsoluteEpoch;
    a.amount_sign = AmountSign::InflowPositive;
    a.positive_label = "1";
    return a;
}

inline DatasetAdapter builtin_adapter(std::string_view name) {
    if (name == "rosbank") return rosbank_adapter();
    if (name == "gender") return gender_adapter();
    if (name == "datafusion") return datafusion_adapter();
    throw ConfigError("unknown built-in adapter: " + std::string(name));
}

inline DatasetAdapter adapter_from_json(const nlohmann::json& j) {
    DatasetAdapter a;
    try {
        a.name = j.at("name").get<std::string>();
        const std::string fmt = j.value("format", "delimited");
        if (fmt == "delimited")
            a.format = InputFormat::Delimited;
        else if (fmt == "line_json")
            a.format = InputFormat::LineJson;
        else
            throw ConfigError("adapter format must be 'delimited' or 'line_json'");
        if (j.contains("delimiter")) {
            const auto d = j.at("delimiter").get<std::string>();
            if (d.size() != 1) throw ConfigError("delimiter must be a single character");
            a.delimiter = d[0];
        }
        const auto& cols = j.at("columns");
        a.user_col = cols.at("user_id").get<std::string>();
        a.ts_col = cols.at("timestamp").get<std::string>();
        a.amount_col = cols.at("amount").get<std::string>();
        auto opt_col = [&cols](const char* key) -> std::optional<std::string> {
            if (cols.contains(key) && !cols.at(key).is_null()) return cols.at(key).get<std::string>();
            return std::nullopt;
        };
        a.mcc_col = opt_col("mcc");
        a.type_col = opt_col("txn_type");
        a.currency_col = opt_col("currency");
        a.label_col = opt_col("label");
        a.ts_convention = ts_convention_from_string(j.value("timestamp_convention", "absolute_epoch"));
        const std::string sign = j.value("amount_sign", "inflow_positive");
        if (sign == "inflow_positive")
            a.amount_sign = AmountSign::InflowPositive;
        else if (sign == "outflow_positive")
            a.amount_sign = AmountSign::OutflowPositive;
        else
            throw ConfigError("amount_sign must be 'inflow_positive' or 'outflow_positive'");
        a.positive_label = j.value("positive_label", "");
        a.test_fraction = j.value("test_fraction", 0.3);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("adapter config: ") + e.what());
    }
    validate_adapter(a);
    return a;
}

inline DatasetAdapter load_adapter(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open adapter config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("adapter config " + path + ": " + e.what());
    }
    return adapter_from_json(j);
}

struct RowError {
    std::size_t row;  // 1-based physical line number in the input
    std::string message;
};

struct ParseResult {
    std::vector<UserHistory> histories;
    std::vector<RowError> row_errors;
    std::size_t rows_total = 0;
};

namespace detail {

// Minimal delimited-text splitter. Fields may be wrapped in double quotes;
// a doubled quote inside a quoted field is an escaped quote.
inline std::vector<std::string> split_delimited(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"' && cur.empty()) {
            quoted = true;
        } else if (c == delim) {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(std::move(cur));
    return out;
}

inline double parse_number(const std::string& s, const char* what) {
    if (s.empty()) throw DataError(std::string(what) + " is empty");
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw DataError(std::string(what) + " is not numeric: '" + s + "'");
    }
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size()) throw DataError(std::string(what) + " is not numeric: '" + s + "'");
    if (!std::isfinite(v)) throw DataError(std::string(what) + " is not finite");
    return v;
}

/// Raw timestamp -> seconds, before per-user normalization. relative_days
/// accepts either a plain number of days or "D HH:MM:SS".
inline double ts_to_seconds(const std::string& raw, TimestampConvention conv) {
    switch (conv) {
        case TimestampConvention::AbsoluteEpoch:
            return parse_number(raw, "timestamp");
        case TimestampConvention::RelativeDays: {
            const auto space = raw.find(' ');
            if (space != std::string::npos) {
                const double days = parse_number(raw.substr(0, space), "timestamp day part");
                int hh = 0, mm = 0, ss = 0;
                char c1 = 0, c2 = 0;
                std::istringstream time_part(raw.substr(space + 1));
                time_part >> hh >> c1 >> mm >> c2 >> ss;
                if (time_part.fail() || c1 != ':' || c2 != ':')
                    throw DataError("timestamp time part is not HH:MM:SS: '" + raw + "'");
                return days * 86400.0 + hh * 3600.0 + mm * 60.0 + ss;
            }
            return parse_number(raw, "timestamp") * 86400.0;
        }
        case TimestampConvention::RelativeIndex:
            return parse_number(raw, "timestamp");
    }
    throw DataError("unreachable timestamp convention");
}

struct RawRow {
    std::string user_id;
    double ts_seconds = 0.0;
    std::optional<int> mcc;
    double amount = 0.0;
    std::optional<std::string> txn_type;
    std::optional<std::string> currency;
    std::optional<std::string> label;
    std::size_t order = 0;  // input order, stabilizes timestamp ties
};

inline void finish_row(RawRow& row, const DatasetAdapter& adapter) {
    if (row.user_id.empty()) throw DataError("user id is empty");
    if (adapter.amount_sign == AmountSign::OutflowPositive) row.amount = -row.amount;
    if (!std::isfinite(row.ts_seconds)) throw DataError("timestamp is not finite");
    if (row.mcc && (*row.mcc < 0 || *row.mcc > 9999))
        throw DataError("mcc out of range [0, 9999]: " + std::to_string(*row.mcc));
}

}  // namespace detail

/// Deterministic train/test assignment for labeled users, stable under input
/// order: hash of the user id against the adapter's test fraction.
inline Split assign_split(const std::string& user_id, double test_fraction) {
    const double u = static_cast<double>(fnv1a(user_id) >> 11) / 9007199254740992.0;  // 2^53
    return u < test_fraction ? Split::Test : Split::Train;
}

/// Parse a raw export into canonical per-user histories.
///
/// Malformed rows are collected with their line numbers rather than aborting
/// the run; if more than half of the data rows are malformed the input is
/// rejected outright. A mapped column missing from the header (or from a JSON
/// record) is a schema error naming that column.
inline ParseResult parse_transactions(std::istream& in, const DatasetAdapter& adapter) {
    validate_adapter(adapter);
    std::vector<detail::RawRow> rows;
    std::vector<RowError> errors;
    std::size_t data_rows = 0;

    std::string line;
    std::size_t line_no = 0;

    if (adapter.format == InputFormat::Delimited) {
        if (!std::getline(in, line)) throw SchemaError("input is empty, header row required");
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto header = detail::split_delimited(line, adapter.delimiter);
        std::map<std::string, std::size_t> col_index;
        for (std::size_t i = 0; i < header.size(); ++i) col_index.emplace(header[i], i);
        auto require = [&](const std::string& col) {
            auto it = col_index.find(col);
            if (it == col_index.end())
                throw SchemaError("mapped column '" + col + "' not found in header");
            return it->second;
        };
        const std::size_t iu = require(adapter.user_col);
        const std::size_t it = require(adapter.ts_col);
        const std::size_t ia = require(adapter.amount_col);
        std::optional<std::size_t> im, ity, ic, il;
        if (adapter.mcc_col) im = require(*adapter.mcc_col);
        if (adapter.type_col) ity = require(*adapter.type_col);
        if (adapter.currency_col) ic = require(*adapter.currency_col);
        if (adapter.label_col) il = require(*adapter.label_col);

        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            ++data_rows;
            try {
                const auto fields = detail::split_delimited(line, adapter.delimiter);
                auto field = [&](std::size_t idx) -> const std::string& {
                    if (idx >= fields.size()) throw DataError("row has too few fields");
                    return fields[idx];
                };
                detail::RawRow row;
                row.user_id = field(iu);
                row.ts_seconds = detail::ts_to_seconds(field(it), adapter.ts_convention);
                row.amount = detail::parse_number(field(ia), "amount");
                if (im && !field(*im).empty())
                    row.mcc = static_cast<int>(detail::parse_number(field(*im), "mcc"));
                if (ity && !field(*ity).empty()) row.txn_type = field(*ity);
                if (ic && !field(*ic).empty()) row.currency = field(*ic);
                if (il && !field(*il).empty()) row.label = field(*il);
                detail::finish_row(row, adapter);
                row.order = rows.size();
                rows.push_back(std::move(row));
            } catch (const std::exception& e) {
                errors.push_back({line_no, e.what()});
            }
        }
    } else {
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            ++data_rows;
            try {
                nlohmann::json j;
                try {
                    j = nlohmann::json::parse(line);
                } catch (const nlohmann::json::parse_error& e) {
                    throw DataError(std::string("invalid JSON: ") + e.what());
                }
                auto require = [&](const std::string& col) -> const nlohmann::json& {
                    if (!j.contains(col))
                        throw SchemaError("mapped column '" + col + "' not found in record");
                    return j.at(col);
                };
                auto as_string = [](const nlohmann::json& v) -> std::string {
                    if (v.is_string()) return v.get<std::string>();
                    return v.dump();
                };
                detail::RawRow row;
                row.user_id = as_string(require(adapter.user_col));
                row.ts_seconds = detail::ts_to_seconds(as_string(require(adapter.ts_col)), adapter.ts_convention);
                row.amount = detail::parse_number(as_string(require(adapter.amount_col)), "amount");
                auto optional_col = [&](const std::optional<std::string>& col) -> std::optional<std::string> {
                    if (!col) return std::nullopt;
                    const auto& v = require(*col);
                    if (v.is_null()) return std::nullopt;
                    return as_string(v);
                };
                if (auto m = optional_col(adapter.mcc_col); m && !m->empty())
                    row.mcc = static_cast<int>(detail::parse_number(*m, "mcc"));
                if (auto t = optional_col(adapter.type_col); t && !t->empty()) row.txn_type = *t;
                if (auto c = optional_col(adapter.currency_col); c && !c->empty()) row.currency = *c;
                if (auto l = optional_col(adapter.label_col); l && !l->empty()) row.label = *l;
                detail::finish_row(row, adapter);
                row.order = rows.size();
                rows.push_back(std::move(row));
            } catch (const SchemaError&) {
                throw;  // structural problem, not a row-level one
            } catch (const std::exception& e) {
                errors.push_back({line_no, e.what()});
            }
        }
    }

    if (data_rows > 0 && errors.size() * 2 > data_rows)
        throw DataError("more than half of the rows are malformed (" + std::to_string(errors.size()) +
                        " of " + std::to_string(data_rows) + ")");

    // Group rows per user, order by raw timestamp (ties keep input order),
    // then rebase so each user's first event is at ts 0.
    std::map<std::string, std::vector<detail::RawRow>> by_user;
    for (auto& r : rows) by_user[r.user_id].push_back(std::move(r));

    ParseResult result;
    result.rows_total = data_rows;
    result.row_errors = std::move(errors);
    for (auto& [user_id, user_rows] : by_user) {
        std::stable_sort(user_rows.begin(), user_rows.end(),
                         [](const detail::RawRow& a, const detail::RawRow& b) {
                             if (a.ts_seconds != b.ts_seconds) return a.ts_seconds < b.ts_seconds;
                             return a.order < b.order;
                         });
        UserHistory h;
        h.user_id = user_id;
        const double t0 = user_rows.front().ts_seconds;
        std::optional<std::string> label;
        for (auto& r : user_rows) {
            if (r.label) label = r.label;  // last labeled row wins; labels are per-user constants
            Transaction t;
            t.user_id = user_id;
            t.ts = static_cast<std::int64_t>(std::llround(r.ts_seconds - t0));
            t.mcc_code = r.mcc;
            t.amount = r.amount;
            t.txn_type = std::move(r.txn_type);
            t.currency = std::move(r.currency);
            h.transactions.push_back(std::move(t));
        }
        if (label) {
            h.label = label;
            h.split = assign_split(user_id, adapter.test_fraction);
        } else {
            h.split = Split::Unlabeled;
        }
        validate_history(h);
        result.histories.push_back(std::move(h));
    }
    return result;
}

inline ParseResult parse_transactions_file(const std::string& path, const DatasetAdapter& adapter) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open input file: " + path);
    return parse_transactions(in, adapter);
}

// --- canonical persistence: one UserHistory JSON object per line ---

inline nlohmann::json to_json(const Transaction& t) {
    nlohmann::json j{{"ts", t.ts}, {"amount", t.amount}};
    j["mcc"] = t.mcc_code ? nlohmann::json(*t.mcc_code) : nlohmann::json(nullptr);
    if (t.txn_type) j["type"] = *t.txn_type;
    if (t.currency) j["currency"] = *t.currency;
    return j;
}

inline nlohmann::json to_json(const UserHistory& h) {
    nlohmann::json txns = nlohmann::json::array();
    for (const auto& t : h.transactions) txns.push_back(to_json(t));
    nlohmann::json j{{"user_id", h.user_id}, {"split", to_string(h.split)}, {"transactions", std::move(txns)}};
    j["label"] = h.label ? nlohmann::json(*h.label) : nlohmann::json(nullptr);
    return j;
}

inline UserHistory history_from_json(const nlohmann::json& j) {
    UserHistory h;
    try {
        h.user_id = j.at("user_id").get<std::string>();
        h.split = split_from_string(j.at("split").get<std::string>());
        if (j.contains("label") && !j.at("label").is_null()) h.label = j.at("label").get<std::string>();
        for (const auto& tj : j.at("transactions")) {
            Transaction t;
            t.user_id = h.user_id;
            t.ts = tj.at("ts").get<std::int64_t>();
            t.amount = tj.at("amount").get<double>();
            if (tj.contains("mcc") && !tj.at("mcc").is_null()) t.mcc_code = tj.at("mcc").get<int>();
            if (tj.contains("type") && !tj.at("type").is_null()) t.txn_type = tj.at("type").get<std::string>();
            if (tj.contains("currency") && !tj.at("currency").is_null())
                t.currency = tj.at("currency").get<std::string>();
            h.transactions.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("history record: ") + e.what());
    }
    validate_history(h);
    return h;
}

inline void save_histories(std::ostream& out, const std::vector<UserHistory>& hs) {
    for (const auto& h : hs) out << to_json(h).dump() << '\n';
}

inline void save_histories_file(const std::string& path, const std::vector<UserHistory>& hs) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot open output file: " + tmp);
        save_histories(out, hs);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw DataError("cannot move " + tmp + " into place");
}

inline std::vector<UserHistory> load_histories(std::istream& in) {
    std::vector<UserHistory> hs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
        hs.push_back(history_from_json(j));
    }
    return hs;
}

inline std::vector<UserHistory> load_histories_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open input file: " + path);
    return load_histories(in);
}

/// Stratified-by-label subsample of labeled users (unlabeled users are kept
/// out). Deterministic for a given seed; preserves class proportions via
/// largest-remainder allocation.
inline std::vector<UserHistory> subsample_stratified(const std::vector<UserHistory>& hs,
                                                     std::size_t n_keep, std::uint64_t seed) {
    std::map<std::string, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < hs.size(); ++i)
        if (hs[i].label) by_label[*hs[i].label].push_back(i);
    std::size_t labeled_total = 0;
    for (const auto& [_, idx] : by_label) labeled_total += idx.size();
    if (n_keep >= labeled_total) {
        std::vector<UserHistory> all;
        for (const auto& h : hs)
            if (h.label) all.push_back(h);
        return all;
    }

    // Quotas: floor of the proportional share, then distribute the remainder
    // by largest fractional part (ties by label order).
    std::vector<std::pair<std::string, double>> fractional;
    std::map<std::string, std::size_t> quota;
    std::size_t assigned = 0;
    for (const auto& [label, idx] : by_label) {
        const double exact = static_cast<double>(n_keep) * static_cast<double>(idx.size()) /
                             static_cast<double>(labeled_total);
        quota[label] = static_cast<std::size_t>(std::floor(exact));
        assigned += quota[label];
        fractional.emplace_back(label, exact - std::floor(exact));
    }
    std::stable_sort(fractional.begin(), fractional.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (std::size_t i = 0; assigned < n_keep && i < fractional.size(); ++i, ++assigned)
        ++quota[fractional[i].first];

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> chosen;
    for (auto& [label, idx] : by_label) {
        std::size_t take = std::min(quota[label], idx.size());
        // Partial Fisher-Yates: the first `take` slots end up as the sample.
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
            std::swap(idx[i], idx[j]);
            chosen.push_back(idx[i]);
        }
    }
    std::sort(chosen.begin(), chosen.end());
    std::vector<UserHistory> out;
    out.reserve(chosen.size());
    for (std::size_t i : chosen) out.push_back(hs[i]);
    return out;
}

}  // namespace txnkb
