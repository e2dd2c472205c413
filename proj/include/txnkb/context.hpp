#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "txnkb/common.hpp"
#include "txnkb/essence.hpp"
#include "txnkb/gateway.hpp"
#include "txnkb/ingest.hpp"
#include "txnkb/kb.hpp"

namespace txnkb {

// Hard caps on prompt material. These are contract constants, not knobs.
inline constexpr std::size_t kMaxFacts = 20;
inline constexpr std::size_t kMaxShots = 16;

enum class ContextStrategy { ZS, Q, FI, QFI, KBviaWB };

inline const char* to_string(ContextStrategy s) {
    switch (s) {
        case ContextStrategy::ZS: return "ZS";
        case ContextStrategy::Q: return "Q";
        case ContextStrategy::FI: return "FI";
        case ContextStrategy::QFI: return "QFI";
        default: return "KBviaWB";
    }
}

inline ContextStrategy context_strategy_from_string(std::string_view s) {
    std::string lc;
    for (char c : s) lc.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (lc == "zs") return ContextStrategy::ZS;
    if (lc == "q" || lc == "zs+q") return ContextStrategy::Q;
    if (lc == "fi" || lc == "zs+fi") return ContextStrategy::FI;
    if (lc == "qfi" || lc == "zs+qfi") return ContextStrategy::QFI;
    if (lc == "kbviawb" || lc == "kb" || lc == "kb_wb") return ContextStrategy::KBviaWB;
    throw ConfigError("unknown context strategy: " + std::string(s));
}

struct ContextConfig {
    int top_k_patterns = 3;
    Grade min_fact_grade = Grade::Moderate;  // weak facts are catch-all noise by construction
    std::size_t max_raw_rows = 128;          // most recent rows kept in raw serializations
    std::size_t max_reflections = 4;
    std::string template_version = "ctx-v1";
};

// Strict total order on facts: strongest evidence first, then effect size,
// then subject id so equal evidence still sorts one way.
inline bool fact_before(const Fact& a, const Fact& b) {
    if (a.grade != b.grade) return a.grade > b.grade;
    if (a.woe_abs != b.woe_abs) return a.woe_abs > b.woe_abs;
    return a.subject_id < b.subject_id;
}

struct ShotExemplar {
    std::string user_id;
    std::string label;
    std::string rendered;

    bool operator==(const ShotExemplar&) const = default;
};

struct ReflectionEntry {
    std::string context_digest;
    std::string prediction;
    std::string outcome;  // "correct" or "incorrect"
    std::string rationale;  // capped at 400 chars on creation
};

/// Relevance of each document to a query; bigger is more relevant. The
/// default is lexical TF-IDF; an embedding backend can stand in behind the
/// same batch contract.
class RelevanceScorer {
public:
    virtual ~RelevanceScorer() = default;
    virtual std::vector<double> score(const std::string& query,
                                      const std::vector<std::string>& docs) const = 0;
};

class TfIdfScorer : public RelevanceScorer {
public:
    std::vector<double> score(const std::string& query,
                              const std::vector<std::string>& docs) const override {
        const std::size_t n = docs.size();
        std::vector<std::map<std::string, double>> tf(n);
        std::map<std::string, std::size_t> df;
        for (std::size_t i = 0; i < n; ++i) {
            for (const auto& tok : tokenize_words(docs[i])) tf[i][tok] += 1.0;
            for (const auto& [tok, cnt] : tf[i]) df[tok] += 1;
        }
        auto idf = [&](const std::string& tok) {
            const auto it = df.find(tok);
            const double d = it == df.end() ? 0.0 : static_cast<double>(it->second);
            return std::log((1.0 + static_cast<double>(n)) / (1.0 + d)) + 1.0;
        };

        std::map<std::string, double> q;
        for (const auto& tok : tokenize_words(query)) q[tok] += 1.0;
        double qnorm = 0.0;
        for (auto& [tok, w] : q) {
            w *= idf(tok);
            qnorm += w * w;
        }
        qnorm = std::sqrt(qnorm);

        std::vector<double> out(n, 0.0);
        if (qnorm == 0.0) return out;
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0, dnorm = 0.0;
            for (auto& [tok, w] : tf[i]) {
                const double wi = w * idf(tok);
                dnorm += wi * wi;
                const auto qi = q.find(tok);
                if (qi != q.end()) dot += wi * qi->second;
            }
            if (dnorm > 0.0) out[i] = dot / (std::sqrt(dnorm) * qnorm);
        }
        return out;
    }
};

/// Ranks patterns by relevance of their name+description to the target text.
/// Zero-similarity patterns rank last but are never dropped while k wants
/// them; ties break on pattern id.
inline std::vector<const BehavioralPattern*> relevant_patterns(
    const KnowledgeBase& kb, const std::string& target_desc, int k,
    const RelevanceScorer* scorer = nullptr) {
    if (kb.pattern_layer.empty()) throw ConfigError("knowledge base has no patterns to rank");
    if (k < 1) throw ConfigError("pattern retrieval needs k >= 1");
    static const TfIdfScorer default_scorer;
    const RelevanceScorer& sc = scorer ? *scorer : default_scorer;

    std::vector<std::string> docs;
    docs.reserve(kb.pattern_layer.size());
    for (const auto& p : kb.pattern_layer) docs.push_back(p.name + " " + p.description);
    const auto scores = sc.score(target_desc, docs);
    if (scores.size() != docs.size())
        throw DataError("relevance scorer returned a wrong-sized result");

    std::vector<std::size_t> order(docs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return kb.pattern_layer[a].id < kb.pattern_layer[b].id;
    });
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
    std::vector<const BehavioralPattern*> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(&kb.pattern_layer[order[i]]);
    return out;
}

namespace detail {

/// KBviaWB fact admission: the retrieved patterns' own rules and level facts,
/// plus this target's rules over features belonging to a retrieved pattern.
/// Retrieval gates the target layer; with no patterns to retrieve the gate
/// falls open, otherwise a sparse clustering would silence the target layer.
inline std::vector<Fact> admit_kb_facts(const KnowledgeBase& kb, const TargetSpec& target,
                                        const std::vector<Fact>& facts, Grade min_grade,
                                        int top_k) {
    std::vector<const BehavioralPattern*> picked;
    if (!kb.pattern_layer.empty()) picked = relevant_patterns(kb, target.description, top_k);
    std::set<std::string> picked_ids;
    std::set<std::string> member_features;
    for (const auto* p : picked) {
        picked_ids.insert(p->id);
        member_features.insert(p->member_essences.begin(), p->member_essences.end());
    }
    const bool gate_open = picked.empty();

    std::vector<Fact> kept;
    for (const auto& f : facts) {
        if (f.grade < min_grade) continue;
        bool admit = false;
        if (f.kind == FactKind::PatternLevel) {
            admit = picked_ids.count(f.subject_id) > 0;
        } else if (const Rule* r = kb.find_rule(f.subject_id)) {
            if (r->scope == RuleScope::Target)
                admit = r->scope_id == target.id &&
                        (gate_open || member_features.count(r->feature) > 0);
            else
                admit = picked_ids.count(r->scope_id) > 0;
        }
        if (admit) kept.push_back(f);
    }
    std::sort(kept.begin(), kept.end(), fact_before);
    if (kept.size() > kMaxFacts) kept.resize(kMaxFacts);
    return kept;
}

}  // namespace detail

// --- rendering helpers ---

namespace detail {

inline std::string render_raw_rows(const UserHistory& h, std::size_t max_rows) {
    // LATTE-style row serialization, most recent rows kept when capped.
    std::string out = "Recent transactions for user " + h.user_id + ":\n";
    const std::size_t n = h.transactions.size();
    const std::size_t start = n > max_rows ? n - max_rows : 0;
    if (start > 0)
        out += "(" + std::to_string(start) + " earlier transactions omitted)\n";
    for (std::size_t i = start; i < n; ++i) {
        const auto& t = h.transactions[i];
        const double day = static_cast<double>(t.ts) / 86400.0;
        out += "- day " + format_double(std::round(day * 100.0) / 100.0) +
               ": amount=" + format_double(t.amount);
        out += " mcc=" + (t.mcc_code ? std::to_string(*t.mcc_code) : std::string("none"));
        out += " type=" + (t.txn_type ? *t.txn_type : std::string("none"));
        out += "\n";
    }
    return out;
}

inline std::string render_quantile_summary(const KnowledgeBase& kb, const EssenceVector* row) {
    std::string out = "Population quantiles (fit split) and this user's value:\n";
    for (const auto& [name, q] : kb.essence_stats) {
        out += "- " + name + ": p10=" + format_double(q.p10) + " p50=" + format_double(q.p50) +
               " p90=" + format_double(q.p90);
        if (row && row->has(name)) {
            const auto& v = row->get(name);
            out += " user=" + (v ? format_double(*v) : std::string("missing"));
        }
        out += "\n";
    }
    return out;
}

inline std::string render_feature_importance(const KnowledgeBase& kb, const TargetSpec& target) {
    const auto it = kb.target_iv.find(target.id);
    std::string out = "Feature importance for " + target.name + " (information value, descending):\n";
    if (it == kb.target_iv.end()) return out + "- unavailable\n";
    std::vector<std::pair<std::string, double>> ranked(it->second.begin(), it->second.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    int rank = 1;
    for (const auto& [f, iv] : ranked)
        out += "- rank " + std::to_string(rank++) + ": " + f + " iv=" + format_double(iv) + "\n";
    return out;
}

inline std::string indent_block(const std::string& text, const std::string& prefix) {
    std::string out;
    bool at_line_start = true;
    for (char c : text) {
        if (at_line_start && c != '\n') out += prefix;
        at_line_start = (c == '\n');
        out += c;
    }
    return out;
}

}  // namespace detail

struct PromptContext {
    TargetSpec target;
    ContextStrategy strategy = ContextStrategy::KBviaWB;
    std::string user_id;
    std::vector<Fact> facts;                  // ordered, ≤ kMaxFacts
    std::vector<ShotExemplar> shots;          // ≤ kMaxShots
    std::vector<ReflectionEntry> reflections;
    std::vector<std::string> extra_sections;  // raw rows / quantiles / importance blocks
    std::vector<std::string> rule_ids;        // every rule id present in facts
    std::string template_version;
    std::string rendered;
};

/// Stable digest of the evidence actually shown: facts plus shots.
inline std::string context_digest(const PromptContext& ctx) {
    std::string blob;
    for (const auto& f : ctx.facts) blob += f.rendered_text + "\n";
    for (const auto& s : ctx.shots) blob += s.label + "|" + s.rendered + "\n";
    return fnv1a_hex(blob);
}

/// Renders the fixed prompt template from the context fields alone, so a
/// stored context can always be re-rendered byte-identically.
inline std::string render_prompt(const PromptContext& ctx) {
    std::string out = "[" + ctx.template_version + "]\n";
    out += "You analyze transaction behavior and decide one question about one user.\n";
    out += "Target: " + ctx.target.name + "\n";
    out += "Description: " + ctx.target.description + "\n";
    out += "Labels: " + detail::join(ctx.target.class_labels, ", ") +
           " (positive: " + ctx.target.positive_class + ")\n";

    for (const auto& section : ctx.extra_sections) {
        out += "\n" + section;
        if (!section.empty() && section.back() != '\n') out += "\n";
    }

    if (!ctx.facts.empty()) {
        out += "\nBehavioral evidence for user " + ctx.user_id + ":\n";
        for (const auto& f : ctx.facts) out += "- (" + f.subject_id + ") " + f.rendered_text + "\n";
    }

    if (!ctx.shots.empty()) {
        // Shot bodies are indented so example evidence can never be mistaken
        // for the user's own evidence lines.
        out += "\nExamples:\n";
        int i = 1;
        for (const auto& s : ctx.shots) {
            out += "--- example " + std::to_string(i++) + "\n";
            out += detail::indent_block(s.rendered, "  ");
            if (!s.rendered.empty() && s.rendered.back() != '\n') out += "\n";
            out += "  ANSWER: " + s.label + "\n";
        }
        out += "--- end examples\n";
    }

    if (!ctx.reflections.empty()) {
        out += "\nPast reflections:\n";
        for (const auto& r : ctx.reflections)
            out += "- [" + r.outcome + "] predicted " + r.prediction + ": " + r.rationale + "\n";
    }

    out += "\nReply with your reasoning, then exactly one final line `ANSWER: <label>`, "
           "where <label> is one of: " +
           detail::join(ctx.target.class_labels, ", ") + ".\n";
    return out;
}

struct ContextInputs {
    const UserHistory* history = nullptr;     // raw rows, ZS family
    const EssenceVector* essences = nullptr;  // user values for quantile lines
    std::vector<Fact> facts;                  // instantiate_facts output, KBviaWB
};

/// Builds one prompt context under the given ablation strategy.
///
/// ZS: raw transaction rows only. Q adds population quantile summaries, FI
/// adds the IV ranking, QFI adds both; none of the four carries knowledge
/// base facts. KBviaWB carries facts from the retrieved patterns' subgraph
/// (their rules, their levels, the target rules over their member features),
/// graded-order capped at 20, and never raw rows. Shots and reflections ride
/// along for every strategy.
inline PromptContext assemble_context(const KnowledgeBase& kb, const TargetSpec& target,
                                      const ContextInputs& in, ContextStrategy strategy,
                                      std::vector<ShotExemplar> shots,
                                      std::vector<ReflectionEntry> reflections,
                                      const ContextConfig& cfg = {}) {
    PromptContext ctx;
    ctx.target = target;
    ctx.strategy = strategy;
    ctx.template_version = cfg.template_version;
    if (in.history) ctx.user_id = in.history->user_id;
    else if (in.essences) ctx.user_id = in.essences->user_id();
    else if (!in.facts.empty()) ctx.user_id = in.facts.front().user_id;

    if (shots.size() > kMaxShots) shots.resize(kMaxShots);
    ctx.shots = std::move(shots);
    if (reflections.size() > cfg.max_reflections) reflections.resize(cfg.max_reflections);
    ctx.reflections = std::move(reflections);

    const bool raw_family = strategy != ContextStrategy::KBviaWB;
    if (raw_family) {
        if (!in.history) throw ConfigError("raw-serialization strategies need the user's history");
        ctx.extra_sections.push_back(detail::render_raw_rows(*in.history, cfg.max_raw_rows));
        if (strategy == ContextStrategy::Q || strategy == ContextStrategy::QFI)
            ctx.extra_sections.push_back(detail::render_quantile_summary(kb, in.essences));
        if (strategy == ContextStrategy::FI || strategy == ContextStrategy::QFI)
            ctx.extra_sections.push_back(detail::render_feature_importance(kb, target));
    } else {
        ctx.facts =
            detail::admit_kb_facts(kb, target, in.facts, cfg.min_fact_grade, cfg.top_k_patterns);
        for (const auto& f : ctx.facts)
            if (f.kind == FactKind::RuleFired) ctx.rule_ids.push_back(f.subject_id);
    }

    ctx.rendered = render_prompt(ctx);
    return ctx;
}

// --- few-shot sampling ---

/// Class-stratified deterministic sample of up to `budget` labeled users.
/// Quotas follow largest-remainder apportionment of the pool's class mix;
/// within a class, users are ordered by a seed-keyed hash of their id so the
/// draw is stable across runs and across strategy arms sharing the seed.
inline std::vector<const UserHistory*> sample_shot_users(
    const std::vector<const UserHistory*>& pool, std::size_t budget, std::uint64_t seed) {
    budget = std::min(budget, kMaxShots);
    if (budget == 0 || pool.empty()) return {};

    std::map<std::string, std::vector<const UserHistory*>> by_class;
    for (const auto* h : pool) {
        if (!h->label) throw DataError("shot pool user " + h->user_id + " has no label");
        by_class[*h->label].push_back(h);
    }
    const auto key = [&](const UserHistory* h) {
        return fnv1a(h->user_id, fnv1a("shots") ^ seed);
    };
    for (auto& [label, users] : by_class)
        std::sort(users.begin(), users.end(), [&](const UserHistory* a, const UserHistory* b) {
            const auto ka = key(a), kb2 = key(b);
            if (ka != kb2) return ka < kb2;
            return a->user_id < b->user_id;
        });

    budget = std::min(budget, pool.size());
    struct Quota {
        std::string label;
        std::size_t base;
        double remainder;
    };
    std::vector<Quota> quotas;
    std::size_t assigned = 0;
    for (const auto& [label, users] : by_class) {
        const double exact = static_cast<double>(budget) * static_cast<double>(users.size()) /
                             static_cast<double>(pool.size());
        const auto base = static_cast<std::size_t>(exact);
        quotas.push_back({label, std::min(base, users.size()), exact - std::floor(exact)});
        assigned += quotas.back().base;
    }
    std::stable_sort(quotas.begin(), quotas.end(), [](const Quota& a, const Quota& b) {
        if (a.remainder != b.remainder) return a.remainder > b.remainder;
        return a.label < b.label;
    });
    for (auto& q : quotas) {
        if (assigned >= budget) break;
        if (q.base < by_class[q.label].size()) {
            ++q.base;
            ++assigned;
        }
    }
    // Spill leftover capacity (tiny classes) to whoever still has users.
    for (auto& q : quotas) {
        while (assigned < budget && q.base < by_class[q.label].size()) {
            ++q.base;
            ++assigned;
        }
    }

    std::sort(quotas.begin(), quotas.end(),
              [](const Quota& a, const Quota& b) { return a.label < b.label; });
    std::vector<const UserHistory*> out;
    for (const auto& q : quotas)
        for (std::size_t i = 0; i < q.base; ++i) out.push_back(by_class[q.label][i]);
    return out;
}

/// Renders one labeled exemplar the same way the test user will be shown:
/// raw rows for the ZS family, fact lines for KBviaWB.
inline ShotExemplar render_shot(const KnowledgeBase& kb, const TargetSpec& target,
                                const UserHistory& h, const std::vector<EssenceSpec>& specs,
                                ContextStrategy strategy, const ContextConfig& cfg = {}) {
    if (!h.label) throw DataError("shot user " + h.user_id + " has no label");
    ShotExemplar shot;
    shot.user_id = h.user_id;
    shot.label = *h.label;
    if (strategy != ContextStrategy::KBviaWB) {
        shot.rendered = detail::render_raw_rows(h, cfg.max_raw_rows);
        return shot;
    }
    const auto row = compute_essences(h, specs);
    auto kept =
        detail::admit_kb_facts(kb, target, instantiate_facts(kb, row), cfg.min_fact_grade,
                               cfg.top_k_patterns);
    // Shots show only fired rules; level summaries belong to the test user's
    // own evidence block.
    std::erase_if(kept, [](const Fact& f) { return f.kind != FactKind::RuleFired; });
    std::string body = "Evidence for user " + h.user_id + ":\n";
    for (const auto& f : kept) body += "- (" + f.subject_id + ") " + f.rendered_text + "\n";
    if (kept.empty()) body += "- no graded evidence fired\n";
    shot.rendered = body;
    return shot;
}

// --- prediction protocols ---

inline ReflectionEntry make_reflection(const PromptContext& ctx, const std::string& prediction,
                                       bool correct, const std::string& rationale) {
    ReflectionEntry e;
    e.context_digest = context_digest(ctx);
    e.prediction = prediction;
    e.outcome = correct ? "correct" : "incorrect";
    e.rationale = truncate_utf8(rationale, 400);
    return e;
}

/// Single-pass prediction: send the rendered context, parse the reply.
inline PredictionResult predict_once(Gateway& gateway, const PromptContext& ctx) {
    const std::string response = gateway.complete(ctx.rendered);
    auto result = parse_prediction(response, ctx.target.class_labels, ctx.rule_ids);
    result.transcripts.push_back({ctx.rendered, response});
    return result;
}

/// Picks up to 4 memory entries: the 2 most recent correct and 2 most recent
/// incorrect ones, presented oldest-first.
inline std::vector<ReflectionEntry> select_reflections(const std::vector<ReflectionEntry>& memory,
                                                       std::size_t per_outcome = 2) {
    std::vector<ReflectionEntry> correct, incorrect;
    for (auto it = memory.rbegin(); it != memory.rend(); ++it) {
        if (it->outcome == "correct" && correct.size() < per_outcome) correct.push_back(*it);
        if (it->outcome == "incorrect" && incorrect.size() < per_outcome) incorrect.push_back(*it);
    }
    std::vector<ReflectionEntry> out;
    for (auto it = correct.rbegin(); it != correct.rend(); ++it) out.push_back(*it);
    for (auto it = incorrect.rbegin(); it != incorrect.rend(); ++it) out.push_back(*it);
    return out;
}

/// Two-pass predict-then-revise protocol.
///
/// Pass 1 answers from the context alone. Pass 2 sees the same context, the
/// pass-1 output, and up to 4 remembered outcomes, and must confirm or
/// revise; its answer is final. A pass-2 transport failure downgrades to the
/// pass-1 result flagged "unrevised". Empty memory still runs pass 2 as a
/// self-consistency check, flagged "no-memory".
inline PredictionResult reflect_revise(Gateway& gateway, const PromptContext& ctx,
                                       const std::vector<ReflectionEntry>& memory) {
    const std::string response1 = gateway.complete(ctx.rendered);
    auto pass1 = parse_prediction(response1, ctx.target.class_labels, ctx.rule_ids);
    pass1.transcripts.push_back({ctx.rendered, response1});

    const auto picked = select_reflections(memory);

    std::string prompt2 = ctx.rendered;
    prompt2 += "\nYour first-pass answer was: " + pass1.label + "\n";
    prompt2 += "First-pass reasoning (indented):\n" + detail::indent_block(response1, "  ");
    if (prompt2.back() != '\n') prompt2 += '\n';
    if (!picked.empty()) {
        prompt2 += "\nPast reflections:\n";
        for (const auto& r : picked)
            prompt2 += "- [" + r.outcome + "] predicted " + r.prediction + ": " + r.rationale + "\n";
    }
    prompt2 += "\nCompare your reasoning against the reflections and confirm or revise. "
               "Reply with exactly one final line `ANSWER: <label>`, where <label> is one of: " +
               detail::join(ctx.target.class_labels, ", ") + ".\n";

    std::string response2;
    try {
        response2 = gateway.complete(prompt2);
    } catch (const TransportError&) {
        pass1.flags.push_back("unrevised");
        if (memory.empty()) pass1.flags.push_back("no-memory");
        return pass1;
    }
    auto final_result = parse_prediction(response2, ctx.target.class_labels, ctx.rule_ids);
    final_result.transcripts = pass1.transcripts;
    final_result.transcripts.push_back({prompt2, response2});
    if (memory.empty()) final_result.flags.push_back("no-memory");
    return final_result;
}

}  // namespace txnkb
