#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "txnkb/common.hpp"
#include "txnkb/context.hpp"
#include "txnkb/essence.hpp"
#include "txnkb/gateway.hpp"
#include "txnkb/ingest.hpp"
#include "txnkb/kb.hpp"

namespace txnkb {

struct ConfusionCounts {
    long tp = 0, fp = 0, fn = 0, tn = 0;

    long total() const { return tp + fp + fn + tn; }
    bool operator==(const ConfusionCounts&) const = default;
};

/// Matthews correlation; any zero factor in the denominator yields 0 by
/// convention (all-one-class prediction regimes are real, not errors).
inline double mcc(const ConfusionCounts& c) {
    const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
    const double fn = static_cast<double>(c.fn), tn = static_cast<double>(c.tn);
    const double f1d = tp + fp, f2d = tp + fn, f3d = tn + fp, f4d = tn + fn;
    if (f1d == 0.0 || f2d == 0.0 || f3d == 0.0 || f4d == 0.0) return 0.0;
    return (tp * tn - fp * fn) / std::sqrt(f1d * f2d * f3d * f4d);
}

inline double f1(const ConfusionCounts& c) {
    const double denom = 2.0 * static_cast<double>(c.tp) + static_cast<double>(c.fp) +
                         static_cast<double>(c.fn);
    if (denom == 0.0) return 0.0;
    return 2.0 * static_cast<double>(c.tp) / denom;
}

struct EvalRecord {
    std::string user_id;
    std::string gold;
    std::string prediction;  // class label or ABSTAIN
    std::vector<std::string> evidence_chain;
    std::vector<std::string> flags;
};

struct MetricSummary {
    double f1 = 0.0;
    double mcc = 0.0;
    std::map<std::string, ConfusionCounts> per_class;
};

/// Per-class one-vs-rest confusion tables. ABSTAIN is a miss for the gold
/// class and a false positive for no class. Binary targets report the
/// positive-class table's metrics; multiclass reports unweighted macro means.
inline MetricSummary summarize_records(const std::vector<EvalRecord>& records,
                                       const TargetSpec& target) {
    MetricSummary s;
    for (const auto& c : target.class_labels) s.per_class[c] = {};
    for (const auto& r : records) {
        for (const auto& c : target.class_labels) {
            auto& cc = s.per_class[c];
            const bool gold_c = r.gold == c;
            const bool pred_c = r.prediction == c;
            if (gold_c && pred_c) ++cc.tp;
            else if (gold_c && !pred_c) ++cc.fn;
            else if (!gold_c && pred_c) ++cc.fp;
            else ++cc.tn;
        }
    }
    if (target.class_labels.size() == 2) {
        const auto& cc = s.per_class.at(target.positive_class);
        s.f1 = f1(cc);
        s.mcc = mcc(cc);
    } else {
        double fsum = 0.0, msum = 0.0;
        for (const auto& [c, cc] : s.per_class) {
            fsum += f1(cc);
            msum += mcc(cc);
        }
        s.f1 = fsum / static_cast<double>(s.per_class.size());
        s.mcc = msum / static_cast<double>(s.per_class.size());
    }
    return s;
}

struct ShotBudget {
    std::size_t count = 0;
    std::string label = "0";  // "0", "4", "16", or "full"
};

inline ShotBudget parse_shot_budget(const std::string& s) {
    if (s == "full") return {kMaxShots, "full"};
    std::size_t pos = 0;
    long n = -1;
    try {
        n = std::stol(s, &pos);
    } catch (...) {
        throw ConfigError("bad shot budget: " + s);
    }
    if (pos != s.size() || n < 0) throw ConfigError("bad shot budget: " + s);
    if (static_cast<std::size_t>(n) > kMaxShots)
        throw ConfigError("shot budget " + s + " exceeds the cap of " + std::to_string(kMaxShots));
    return {static_cast<std::size_t>(n), s};
}

struct RunReport {
    std::string dataset_id;
    std::string strategy;
    std::string shots;
    std::uint64_t seed = 0;
    std::string target_id;
    double f1 = 0.0;
    double mcc = 0.0;
    std::map<std::string, ConfusionCounts> per_class;
    std::vector<EvalRecord> records;
    std::string config_hash;
    std::size_t reflection_memory_size = 0;
};

inline nlohmann::json to_json(const RunReport& r) {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& rec : r.records)
        recs.push_back({{"user_id", rec.user_id},
                        {"gold", rec.gold},
                        {"prediction", rec.prediction},
                        {"evidence_chain", rec.evidence_chain},
                        {"flags", rec.flags}});
    nlohmann::json classes = nlohmann::json::object();
    for (const auto& [c, cc] : r.per_class)
        classes[c] = {{"tp", cc.tp}, {"fp", cc.fp}, {"fn", cc.fn}, {"tn", cc.tn}};
    return nlohmann::json{{"dataset_id", r.dataset_id},
                          {"strategy", r.strategy},
                          {"shots", r.shots},
                          {"seed", r.seed},
                          {"target_id", r.target_id},
                          {"metrics", {{"f1", r.f1}, {"mcc", r.mcc}}},
                          {"per_class", std::move(classes)},
                          {"records", std::move(recs)},
                          {"config_hash", r.config_hash},
                          {"reflection_memory_size", r.reflection_memory_size}};
}

namespace detail {

inline void check_no_leakage(const std::vector<UserHistory>& histories,
                             const KnowledgeBase& kb) {
    std::set<std::string> seen;
    for (const auto& h : histories)
        if (!seen.insert(h.user_id).second)
            throw DataError("leakage: user id " + h.user_id + " appears more than once");
    std::set<std::string> fit(kb.meta.fit_user_ids.begin(), kb.meta.fit_user_ids.end());
    for (const auto& h : histories) {
        if (h.split != Split::Test) continue;
        if (fit.count(h.user_id))
            throw DataError("leakage: test user " + h.user_id +
                            " was part of the knowledge base fit");
    }
}

}  // namespace detail

/// Evaluates one (strategy, shot budget) arm over the test split.
///
/// Shot users come from the labeled train split via a seed fixed by
/// (dataset, budget, seed), so strategy arms share identical shots. With a
/// nonzero budget each test user goes through the two-pass reflect/revise
/// protocol against a memory built from the shot users' own first-pass
/// outcomes; with zero shots prediction is single-pass. Split overlap fails
/// the run before the first gateway call.
inline RunReport run_eval(const KnowledgeBase& kb, const std::vector<UserHistory>& histories,
                          const std::vector<EssenceSpec>& specs, const TargetSpec& target,
                          ContextStrategy strategy, const ShotBudget& budget, Gateway& gateway,
                          std::uint64_t seed, const std::string& dataset_id,
                          const ContextConfig& cfg = {}) {
    detail::check_no_leakage(histories, kb);

    std::vector<const UserHistory*> test_users, shot_pool;
    for (const auto& h : histories) {
        if (h.split == Split::Test && h.label) test_users.push_back(&h);
        if (h.split == Split::Train && h.label) shot_pool.push_back(&h);
    }
    if (test_users.empty()) throw DataError("no labeled test users to evaluate");

    RunReport report;
    report.dataset_id = dataset_id;
    report.strategy = to_string(strategy);
    report.shots = budget.label;
    report.seed = seed;
    report.target_id = target.id;
    report.config_hash = fnv1a_hex(dataset_id + "|" + report.strategy + "|" + budget.label + "|" +
                                   std::to_string(seed) + "|" + target.id + "|" +
                                   kb.meta.config_hash);

    const std::uint64_t shot_seed = fnv1a(dataset_id + "|" + budget.label) ^ seed;
    const auto shot_users = sample_shot_users(shot_pool, budget.count, shot_seed);

    std::vector<ShotExemplar> shots;
    shots.reserve(shot_users.size());
    for (const auto* h : shot_users)
        shots.push_back(render_shot(kb, target, *h, specs, strategy, cfg));

    auto make_inputs = [&](const UserHistory& h, EssenceVector& row_storage) {
        ContextInputs in;
        in.history = &h;
        row_storage = compute_essences(h, specs);
        in.essences = &row_storage;
        if (strategy == ContextStrategy::KBviaWB) in.facts = instantiate_facts(kb, row_storage);
        return in;
    };

    // Reflection memory: first-pass outcomes on the shot users themselves
    // (never on test users, so ground truth never leaks forward).
    std::vector<ReflectionEntry> memory;
    if (budget.count > 0) {
        for (const auto* h : shot_users) {
            EssenceVector row;
            const auto in = make_inputs(*h, row);
            const auto ctx = assemble_context(kb, target, in, strategy, {}, {}, cfg);
            const auto pass1 = predict_once(gateway, ctx);
            memory.push_back(
                make_reflection(ctx, pass1.label, pass1.label == *h->label, pass1.rationale));
        }
    }
    report.reflection_memory_size = memory.size();

    for (const auto* h : test_users) {
        EssenceVector row;
        const auto in = make_inputs(*h, row);
        const auto ctx = assemble_context(kb, target, in, strategy, shots, {}, cfg);
        const auto result =
            budget.count > 0 ? reflect_revise(gateway, ctx, memory) : predict_once(gateway, ctx);
        EvalRecord rec;
        rec.user_id = h->user_id;
        rec.gold = *h->label;
        rec.prediction = result.label;
        rec.evidence_chain = result.evidence_chain;
        rec.flags = result.flags;
        report.records.push_back(std::move(rec));
    }

    const auto summary = summarize_records(report.records, target);
    report.f1 = summary.f1;
    report.mcc = summary.mcc;
    report.per_class = summary.per_class;
    return report;
}

/// Plain-text table over runs: dataset x strategy x shots -> F1 / MCC.
inline std::string summary_table(const std::vector<RunReport>& reports) {
    std::string out = "dataset            strategy  shots  f1       mcc\n";
    auto pad = [](std::string s, std::size_t w) {
        if (s.size() < w) s.append(w - s.size(), ' ');
        return s + " ";
    };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%+.4f", v);
        return std::string(buf);
    };
    for (const auto& r : reports) {
        out += pad(r.dataset_id, 18) + pad(r.strategy, 9) + pad(r.shots, 6) + pad(num(r.f1), 8) +
               num(r.mcc) + "\n";
    }
    return out;
}

}  // namespace txnkb
