#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "txnkb/common.hpp"
#include "txnkb/essence.hpp"
#include "txnkb/gateway.hpp"
#include "txnkb/rules.hpp"
#include "txnkb/woe.hpp"

namespace txnkb {

enum class Level { Low = 0, Medium = 1, High = 2 };

inline const char* to_string(Level l) {
    switch (l) {
        case Level::Low: return "low";
        case Level::Medium: return "medium";
        default: return "high";
    }
}

inline Level level_from_string(std::string_view s) {
    if (s == "low") return Level::Low;
    if (s == "medium") return Level::Medium;
    if (s == "high") return Level::High;
    throw DataError("unknown level: " + std::string(s));
}

// Coarse-grains member essences into {low, medium, high}: each member votes
// by its own empirical tercile, the pattern level is the majority vote.
// Missing members abstain; ties and all-missing rows resolve to medium.
struct TercileLevelFn {
    struct MemberCut {
        std::string essence;
        double t1 = 0.0;  // 33rd percentile
        double t2 = 0.0;  // 67th percentile

        bool operator==(const MemberCut&) const = default;
    };
    std::vector<MemberCut> cuts;

    Level level(const EssenceVector& row) const {
        int votes[3] = {0, 0, 0};
        for (const auto& c : cuts) {
            const auto& v = row.get(c.essence);
            if (!v) continue;
            if (*v <= c.t1)
                ++votes[0];
            else if (*v <= c.t2)
                ++votes[1];
            else
                ++votes[2];
        }
        const int top = std::max({votes[0], votes[1], votes[2]});
        int winners = 0, which = 1;
        for (int i = 0; i < 3; ++i)
            if (votes[i] == top) {
                ++winners;
                which = i;
            }
        if (top == 0 || winners > 1) return Level::Medium;  // abstentions and ties
        return static_cast<Level>(which);
    }

    bool operator==(const TercileLevelFn&) const = default;
};

// A named, category-pure bundle of essences with graded rule edges attached
// by the linking step.
struct BehavioralPattern {
    std::string id;
    std::string name;
    EssenceCategory category = EssenceCategory::TemporalDynamics;
    std::vector<std::string> member_essences;
    std::string description;
    TercileLevelFn level_fn;
    std::vector<Rule> rules;  // essence -> pattern edges

    bool operator==(const BehavioralPattern&) const = default;
};

inline void validate_pattern(const BehavioralPattern& p, const std::vector<EssenceSpec>& specs) {
    if (p.member_essences.empty())
        throw DataError("pattern '" + p.name + "' has no member essences");
    for (const auto& m : p.member_essences) {
        const auto it = std::find_if(specs.begin(), specs.end(),
                                     [&](const EssenceSpec& s) { return s.name == m; });
        if (it == specs.end())
            throw DataError("pattern '" + p.name + "' references unknown essence '" + m + "'");
        if (it->category != p.category)
            throw DataError("pattern '" + p.name + "' mixes categories: essence '" + m +
                            "' is not " + to_string(p.category));
    }
}

enum class StrategyKind { Random, LLMGuided, WithoutWhiteBox };

inline const char* to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::Random: return "random";
        case StrategyKind::LLMGuided: return "llm_guided";
        default: return "without_whitebox";
    }
}

inline StrategyKind strategy_kind_from_string(std::string_view s) {
    if (s == "random") return StrategyKind::Random;
    if (s == "llm_guided" || s == "llm") return StrategyKind::LLMGuided;
    if (s == "without_whitebox" || s == "nowb") return StrategyKind::WithoutWhiteBox;
    throw ConfigError("unknown selection strategy: " + std::string(s));
}

struct SelectionStrategy {
    StrategyKind kind = StrategyKind::Random;
    std::uint64_t seed = 0;
    Gateway* gateway = nullptr;       // required for LLMGuided
    std::string prompt_template;      // optional override; {{catalog}} expands to the essence list
};

struct ProposalResult {
    std::vector<BehavioralPattern> patterns;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::string category_token(EssenceCategory c) {
    switch (c) {
        case EssenceCategory::TemporalDynamics: return "temporal";
        case EssenceCategory::MonetaryBehavior: return "monetary";
        default: return "merchant";
    }
}

inline std::string join(const std::vector<std::string>& xs, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += sep;
        out += xs[i];
    }
    return out;
}

/// Uniform subset of the requested size via partial Fisher-Yates; the pool
/// argument is taken by value on purpose.
inline std::vector<std::string> sample_subset(std::vector<std::string> pool, std::size_t size,
                                              std::mt19937_64& rng) {
    for (std::size_t i = 0; i < size && i < pool.size(); ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(std::min(size, pool.size()));
    return pool;
}

inline ProposalResult propose_random(const std::vector<EssenceSpec>& specs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ProposalResult result;
    int pattern_counter = 1;
    for (const auto category : all_essence_categories()) {
        std::vector<std::string> pool;
        for (const auto& s : specs)
            if (s.category == category) pool.push_back(s.name);
        if (pool.size() < 2) continue;

        const int n_patterns = 1 + static_cast<int>(rng() % 2);
        for (int k = 0; k < n_patterns; ++k) {
            std::size_t size = 2 + static_cast<std::size_t>(rng() % 2);
            size = std::min(size, pool.size());
            BehavioralPattern p;
            p.category = category;
            p.member_essences = sample_subset(pool, size, rng);
            std::sort(p.member_essences.begin(), p.member_essences.end());
            p.name = "pattern_" + category_token(category) + "_" + std::to_string(k + 1);
            {
                char buf[16];
                std::snprintf(buf, sizeof(buf), "pat_%03d", pattern_counter++);
                p.id = buf;
            }
            p.description = "combination of " + join(p.member_essences, ", ") + " (" +
                            to_string(category) + ")";
            result.patterns.push_back(std::move(p));
        }
    }
    return result;
}

inline std::string default_proposal_prompt(const std::vector<EssenceSpec>& specs) {
    std::string catalog;
    for (const auto& s : specs)
        catalog += "- " + s.name + " [" + to_string(s.category) + "]: " + s.description + "\n";
    return "You design interpretable behavioral patterns over client transaction features.\n"
           "Group the features below into named patterns. Each pattern must use 2 or 3 features\n"
           "from a single category, with at most 2 patterns per category. Give each pattern a\n"
           "short lowercase name and a one-sentence description of the behavior it captures.\n"
           "\nFeatures:\n" +
           catalog +
           "\nReply with JSON only, shaped as\n"
           "{\"patterns\": [{\"name\": ..., \"category\": ..., \"members\": [...], "
           "\"description\": ...}]}\n";
}

inline ProposalResult propose_llm_guided(const std::vector<EssenceSpec>& specs,
                                         const SelectionStrategy& strategy) {
    if (!strategy.gateway)
        throw ConfigError("llm_guided proposal needs a reachable gateway");

    std::string prompt = strategy.prompt_template.empty()
                             ? default_proposal_prompt(specs)
                             : strategy.prompt_template;
    {
        const std::string placeholder = "{{catalog}}";
        const auto pos = prompt.find(placeholder);
        if (pos != std::string::npos) {
            std::string catalog;
            for (const auto& s : specs)
                catalog += "- " + s.name + " [" + to_string(s.category) + "]: " + s.description + "\n";
            prompt.replace(pos, placeholder.size(), catalog);
        }
    }

    ProposalResult result;
    for (int attempt = 0; attempt < 2; ++attempt) {
        std::string reply;
        try {
            reply = strategy.gateway->complete(
                attempt == 0 ? prompt
                             : prompt + "\nThe previous reply was not valid JSON with usable "
                               "patterns. Reply with the JSON object only.\n");
        } catch (const std::exception& e) {
            result.warnings.push_back(std::string("proposal call failed: ") + e.what());
            break;
        }

        nlohmann::json j;
        try {
            const auto start = reply.find('{');
            const auto end = reply.rfind('}');
            if (start == std::string::npos || end == std::string::npos || end < start)
                throw DataError("no JSON object in reply");
            j = nlohmann::json::parse(reply.substr(start, end - start + 1));
        } catch (const std::exception& e) {
            result.warnings.push_back(std::string("proposal reply unparseable: ") + e.what());
            continue;
        }

        std::vector<BehavioralPattern> accepted;
        std::map<EssenceCategory, int> per_category;
        int pattern_counter = 1;
        for (const auto& pj : j.value("patterns", nlohmann::json::array())) {
            BehavioralPattern p;
            p.name = pj.value("name", "");
            p.description = pj.value("description", "");
            if (p.name.empty()) {
                result.warnings.push_back("proposed pattern without a name dropped");
                continue;
            }
            // Members that do not exist in the catalog are dropped; the
            // pattern's category is the category of its surviving members.
            std::vector<std::string> members;
            std::optional<EssenceCategory> category;
            bool mixed = false;
            for (const auto& mj : pj.value("members", nlohmann::json::array())) {
                const std::string name = mj.get<std::string>();
                const auto it = std::find_if(specs.begin(), specs.end(),
                                             [&](const EssenceSpec& s) { return s.name == name; });
                if (it == specs.end()) {
                    result.warnings.push_back("pattern '" + p.name + "': unknown essence '" +
                                              name + "' dropped");
                    continue;
                }
                if (!category)
                    category = it->category;
                else if (*category != it->category) {
                    mixed = true;
                    break;
                }
                members.push_back(name);
            }
            if (mixed) {
                result.warnings.push_back("pattern '" + p.name + "' mixes categories, rejected");
                continue;
            }
            if (members.empty()) {
                result.warnings.push_back("pattern '" + p.name + "' has no valid members, rejected");
                continue;
            }
            std::sort(members.begin(), members.end());
            members.erase(std::unique(members.begin(), members.end()), members.end());
            p.member_essences = std::move(members);
            p.category = *category;
            if (per_category[p.category] >= 2) {
                result.warnings.push_back("pattern '" + p.name + "' exceeds the per-category cap, rejected");
                continue;
            }
            ++per_category[p.category];
            {
                char buf[16];
                std::snprintf(buf, sizeof(buf), "pat_%03d", pattern_counter++);
                p.id = buf;
            }
            if (p.description.empty())
                p.description = "combination of " + join(p.member_essences, ", ") + " (" +
                                to_string(p.category) + ")";
            accepted.push_back(std::move(p));
        }
        if (!accepted.empty()) {
            result.patterns = std::move(accepted);
            return result;
        }
        result.warnings.push_back("proposal attempt " + std::to_string(attempt + 1) +
                                  " yielded no usable patterns");
    }

    auto fallback = propose_random(specs, strategy.seed);
    result.patterns = std::move(fallback.patterns);
    result.warnings.push_back("llm_guided proposal failed twice; fell back to random selection");
    return result;
}

}  // namespace detail

/// Proposes category-pure patterns under the chosen strategy. Random and
/// WithoutWhiteBox draw the same seeded selection (the latter differs only in
/// the later linking step); LLMGuided validates the model's grouping and
/// falls back to Random after two unusable replies.
inline ProposalResult propose_patterns(const std::vector<EssenceSpec>& specs,
                                       const SelectionStrategy& strategy) {
    validate_essence_specs(specs);
    ProposalResult result;
    switch (strategy.kind) {
        case StrategyKind::Random:
        case StrategyKind::WithoutWhiteBox:
            result = detail::propose_random(specs, strategy.seed);
            break;
        case StrategyKind::LLMGuided:
            result = detail::propose_llm_guided(specs, strategy);
            break;
    }
    for (const auto& p : result.patterns) validate_pattern(p, specs);
    return result;
}

/// Attaches level functions and rule edges to proposed patterns.
///
/// Every pattern gets tercile-based level cuts from the data. With labels,
/// each member essence is binned against the target and the resulting graded
/// rules become essence -> pattern edges (the signal carries the pattern
/// name). Without labels, a moderate top-tercile proxy rule per member is
/// attached instead. WithoutWhiteBox suppresses rule edges entirely.
inline void link_patterns(std::vector<BehavioralPattern>& patterns, const EssenceMatrix& matrix,
                          const std::vector<int>* labels, StrategyKind kind, RuleIdGen& ids,
                          const BinningConfig& bin_cfg = {}) {
    if (labels && labels->size() != matrix.rows.size())
        throw DataError("labels and matrix length mismatch");

    for (auto& p : patterns) {
        p.level_fn.cuts.clear();
        p.rules.clear();
        for (const auto& member : p.member_essences) {
            std::vector<double> finite;
            for (const auto& row : matrix.rows) {
                const auto& v = row.get(member);
                if (v) finite.push_back(*v);
            }
            TercileLevelFn::MemberCut cut;
            cut.essence = member;
            if (!finite.empty()) {
                std::sort(finite.begin(), finite.end());
                cut.t1 = quantile_sorted(finite, 1.0 / 3.0);
                cut.t2 = quantile_sorted(finite, 2.0 / 3.0);
            }
            p.level_fn.cuts.push_back(cut);

            if (kind == StrategyKind::WithoutWhiteBox) continue;

            if (labels) {
                const auto col = matrix.column(member);
                const auto bins = fit_bins(col, *labels, bin_cfg);
                for (const auto& bin : bins)
                    p.rules.push_back(
                        make_rule(ids.next(), member, bin, p.name, RuleScope::Pattern, p.id));
            } else if (!finite.empty() && cut.t1 < cut.t2) {
                // Unsupervised proxy: membership in the top tercile reads as
                // moderate evidence that the pattern runs high.
                Bin top;
                top.lower = cut.t2;
                top.upper = std::numeric_limits<double>::infinity();
                Rule r;
                r.id = ids.next();
                r.feature = member;
                r.bin = top;
                r.polarity = 1;
                r.grade = Grade::Moderate;
                r.woe_value = 0.0;
                r.signal_name = p.name;
                r.scope = RuleScope::Pattern;
                r.scope_id = p.id;
                r.rendered_text = "IF " + member + " in top tercile -> high " + p.name;
                p.rules.push_back(std::move(r));
            }
        }
    }
}

}  // namespace txnkb
