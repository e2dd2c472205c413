#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "txnkb/common.hpp"
#include "txnkb/essence.hpp"
#include "txnkb/ingest.hpp"
#include "txnkb/pattern.hpp"
#include "txnkb/rules.hpp"
#include "txnkb/scorecard.hpp"
#include "txnkb/woe.hpp"

namespace txnkb {

struct TargetSpec {
    std::string id;
    std::string name;
    std::string description;
    std::vector<std::string> class_labels;
    std::string positive_class;

    bool operator==(const TargetSpec&) const = default;
};

inline void validate_target(const TargetSpec& t) {
    if (t.id.empty() || t.name.empty()) throw ConfigError("target needs an id and a name");
    if (t.description.empty())
        throw ConfigError("target '" + t.name + "' needs a natural-language description");
    if (t.class_labels.size() < 2)
        throw ConfigError("target '" + t.name + "' needs at least two class labels");
    std::set<std::string> uniq(t.class_labels.begin(), t.class_labels.end());
    if (uniq.size() != t.class_labels.size())
        throw ConfigError("target '" + t.name + "' has duplicate class labels");
    if (!uniq.count(t.positive_class))
        throw ConfigError("target '" + t.name + "': positive class is not among the labels");
}

enum class AssociationMode { Max, Mean };

struct PatternAssociation {
    std::string pattern_id;
    std::string target_id;
    Grade strength = Grade::Weak;

    bool operator==(const PatternAssociation&) const = default;
};

struct EssenceQuantiles {
    double p10 = 0.0, p50 = 0.0, p90 = 0.0;

    bool operator==(const EssenceQuantiles&) const = default;
};

struct KbConfig {
    BinningConfig binning;
    ScorecardConfig scorecard;
    AssociationMode association_mode = AssociationMode::Max;
};

struct BuildMeta {
    std::string config_hash;
    std::string data_fingerprint;
    std::string strategy;
    std::vector<std::string> fit_user_ids;
    std::vector<std::string> warnings;

    bool operator==(const BuildMeta&) const = default;
};

inline constexpr int kKnowledgeBaseVersion = 1;

// Three layers plus graded edges. Pattern rules live inside their patterns;
// essence -> target rules and pattern -> target associations live here.
struct KnowledgeBase {
    int version = kKnowledgeBaseVersion;
    std::vector<EssenceSpec> essence_layer;
    std::vector<BehavioralPattern> pattern_layer;
    std::vector<TargetSpec> target_layer;
    std::vector<Rule> target_rules;
    std::vector<PatternAssociation> associations;
    std::map<std::string, EssenceQuantiles> essence_stats;              // population p10/p50/p90
    std::map<std::string, std::map<std::string, double>> target_iv;     // target id -> feature -> iv
    BuildMeta meta;
    nlohmann::json extra = nlohmann::json::object();  // unknown document fields, kept verbatim

    const TargetSpec* find_target(std::string_view id_or_name) const {
        for (const auto& t : target_layer)
            if (t.id == id_or_name || t.name == id_or_name) return &t;
        return nullptr;
    }

    const BehavioralPattern* find_pattern(std::string_view id) const {
        for (const auto& p : pattern_layer)
            if (p.id == id) return &p;
        return nullptr;
    }

    std::vector<const Rule*> all_rules() const {
        std::vector<const Rule*> out;
        for (const auto& p : pattern_layer)
            for (const auto& r : p.rules) out.push_back(&r);
        for (const auto& r : target_rules) out.push_back(&r);
        return out;
    }

    const Rule* find_rule(std::string_view id) const {
        for (const auto* r : all_rules())
            if (r->id == id) return r;
        return nullptr;
    }

    bool operator==(const KnowledgeBase&) const = default;
};

enum class FactKind { RuleFired, PatternLevel };

inline const char* to_string(FactKind k) {
    return k == FactKind::RuleFired ? "rule_fired" : "pattern_level";
}

// One observed piece of evidence about one user: either a rule whose bin the
// user's essence value hit, or a pattern coarse-grained to its level.
struct Fact {
    std::string user_id;
    FactKind kind = FactKind::RuleFired;
    std::string subject_id;  // rule id or pattern id
    std::optional<double> observed;
    std::optional<Level> level;
    Grade grade = Grade::Weak;
    double woe_abs = 0.0;
    std::string rendered_text;

    bool operator==(const Fact&) const = default;
};

namespace detail {

inline Grade pattern_edge_grade(const BehavioralPattern& p) {
    Grade g = Grade::Weak;
    for (const auto& r : p.rules) g = std::max(g, r.grade);
    return g;
}

inline std::string render_fact_observation(const Rule& rule, const std::optional<double>& value) {
    return rule.rendered_text + " [observed: " + (value ? format_double(*value) : "missing") + "]";
}

}  // namespace detail

/// All facts the knowledge base can assert about one user's essences, in a
/// deterministic order (pattern rule edges, then target rule edges, then
/// pattern levels). Throws when the vector lacks a key an edge needs.
inline std::vector<Fact> instantiate_facts(const KnowledgeBase& kb, const EssenceVector& row) {
    std::vector<Fact> facts;
    auto try_rule = [&](const Rule& rule) {
        const auto& value = row.get(rule.feature);  // throws on a missing key, naming it
        if (!bin_contains(rule.bin, value)) return;
        Fact f;
        f.user_id = row.user_id();
        f.kind = FactKind::RuleFired;
        f.subject_id = rule.id;
        f.observed = value;
        f.grade = rule.grade;
        f.woe_abs = std::fabs(rule.woe_value);
        f.rendered_text = detail::render_fact_observation(rule, value);
        facts.push_back(std::move(f));
    };
    for (const auto& p : kb.pattern_layer)
        for (const auto& r : p.rules) try_rule(r);
    for (const auto& r : kb.target_rules) try_rule(r);
    for (const auto& p : kb.pattern_layer) {
        Fact f;
        f.user_id = row.user_id();
        f.kind = FactKind::PatternLevel;
        f.subject_id = p.id;
        f.level = p.level_fn.level(row);
        f.grade = detail::pattern_edge_grade(p);
        f.woe_abs = 0.0;
        f.rendered_text = p.name + " level is " + to_string(*f.level) + " [members: " +
                          detail::join(p.member_essences, ", ") + "]";
        facts.push_back(std::move(f));
    }
    return facts;
}

/// Builds the knowledge base from canonical histories.
///
/// Only train-split users feed the fit. Patterns are proposed under the
/// given strategy and linked against the first labeled target (tercile level
/// cuts always; rule edges unless the strategy is WithoutWhiteBox). Each
/// labeled target then gets a scorecard fit over the full catalog, one rule
/// per bin, and graded pattern associations.
inline KnowledgeBase build_kb(const std::vector<UserHistory>& histories,
                              const std::vector<EssenceSpec>& specs,
                              const SelectionStrategy& strategy,
                              const std::vector<TargetSpec>& targets, const KbConfig& cfg = {}) {
    validate_essence_specs(specs);
    for (const auto& t : targets) validate_target(t);
    {
        std::set<std::string> ids;
        for (const auto& t : targets)
            if (!ids.insert(t.id).second) throw ConfigError("duplicate target id: " + t.id);
    }

    KnowledgeBase kb;
    kb.essence_layer = specs;
    kb.target_layer = targets;

    std::vector<const UserHistory*> fit_users;
    for (const auto& h : histories)
        if (h.split == Split::Train) fit_users.push_back(&h);
    if (fit_users.empty()) throw DataError("no train-split users to build from");

    std::vector<UserHistory> fit_copy;
    fit_copy.reserve(fit_users.size());
    for (const auto* h : fit_users) fit_copy.push_back(*h);
    const EssenceMatrix matrix = compute_essence_matrix(fit_copy, specs);

    for (const auto* h : fit_users) kb.meta.fit_user_ids.push_back(h->user_id);
    {
        std::string blob;
        for (const auto* h : fit_users) blob += to_json(*h).dump() + "\n";
        kb.meta.data_fingerprint = fnv1a_hex(blob);
    }
    kb.meta.strategy = to_string(strategy.kind);
    {
        nlohmann::json cj{{"max_bins", cfg.binning.max_bins},
                          {"min_samples", cfg.binning.min_samples},
                          {"merge_woe_delta", cfg.binning.merge_woe_delta},
                          {"min_support_frac", cfg.binning.min_support_frac},
                          {"monotonic", cfg.binning.monotonic},
                          {"l2", cfg.scorecard.l2},
                          {"association_mode",
                           cfg.association_mode == AssociationMode::Max ? "max" : "mean"},
                          {"strategy", to_string(strategy.kind)},
                          {"seed", strategy.seed}};
        kb.meta.config_hash = fnv1a_hex(cj.dump());
    }

    // Population quantiles over the fit split, for quantile-summary contexts.
    for (const auto& name : matrix.names) {
        std::vector<double> finite;
        for (const auto& row : matrix.rows) {
            const auto& v = row.get(name);
            if (v) finite.push_back(*v);
        }
        if (finite.empty()) continue;
        std::sort(finite.begin(), finite.end());
        kb.essence_stats[name] = {quantile_sorted(finite, 0.10), quantile_sorted(finite, 0.50),
                                  quantile_sorted(finite, 0.90)};
    }

    auto proposal = propose_patterns(specs, strategy);
    kb.pattern_layer = std::move(proposal.patterns);
    kb.meta.warnings = std::move(proposal.warnings);

    RuleIdGen ids;

    // Binary label view for one target class; users lacking a label for the
    // target are excluded from that fit.
    auto binary_labels = [&](const TargetSpec& t, const std::string& positive,
                             std::vector<std::size_t>& kept) {
        std::vector<int> y;
        kept.clear();
        for (std::size_t i = 0; i < fit_users.size(); ++i) {
            const auto& label = fit_users[i]->label;
            if (!label) continue;
            if (std::find(t.class_labels.begin(), t.class_labels.end(), *label) ==
                t.class_labels.end())
                throw DataError("user " + fit_users[i]->user_id + ": label '" + *label +
                                "' not among target '" + t.name + "' classes");
            kept.push_back(i);
            y.push_back(*label == positive ? 1 : 0);
        }
        return y;
    };

    auto submatrix = [&](const std::vector<std::size_t>& kept) {
        EssenceMatrix m;
        m.names = matrix.names;
        for (const auto i : kept) m.rows.push_back(matrix.rows[i]);
        return m;
    };

    // Pattern linking runs against the first labeled target when one exists.
    {
        const TargetSpec* link_target = targets.empty() ? nullptr : &targets.front();
        std::vector<std::size_t> kept;
        std::vector<int> y;
        if (link_target) y = binary_labels(*link_target, link_target->positive_class, kept);
        if (link_target && !y.empty()) {
            const auto sub = submatrix(kept);
            link_patterns(kb.pattern_layer, sub, &y, strategy.kind, ids, cfg.binning);
        } else {
            link_patterns(kb.pattern_layer, matrix, nullptr, strategy.kind, ids, cfg.binning);
        }
    }

    for (const auto& target : targets) {
        // One-vs-rest decomposition for multiclass targets; the binary case
        // renders its signal under the target's own name.
        std::vector<std::pair<std::string, std::string>> fits;  // (positive class, signal name)
        if (target.class_labels.size() == 2) {
            fits.emplace_back(target.positive_class, target.name);
        } else {
            for (const auto& c : target.class_labels) fits.emplace_back(c, c);
        }

        std::map<std::string, double> iv_by_feature;
        std::map<std::string, Grade> best_grade_by_feature;
        for (const auto& [positive, signal] : fits) {
            std::vector<std::size_t> kept;
            const auto y = binary_labels(target, positive, kept);
            if (y.empty()) continue;
            const auto sub = submatrix(kept);
            const auto sc = fit_scorecard(sub, y, matrix.names, cfg.binning, cfg.scorecard);
            if (sc.meta.naive_fallback && !sc.meta.converged)
                kb.meta.warnings.push_back("scorecard for '" + signal +
                                           "' did not converge; naive additive weights in use");
            for (const auto& fw : sc.features) {
                auto [it, inserted] = iv_by_feature.try_emplace(fw.feature, fw.iv);
                if (!inserted) it->second = std::max(it->second, fw.iv);
                if (strategy.kind == StrategyKind::WithoutWhiteBox) continue;
                for (const auto& bin : fw.bins) {
                    auto rule =
                        make_rule(ids.next(), fw.feature, bin, signal, RuleScope::Target, target.id);
                    auto [git, ginserted] = best_grade_by_feature.try_emplace(fw.feature, rule.grade);
                    if (!ginserted) git->second = std::max(git->second, rule.grade);
                    kb.target_rules.push_back(std::move(rule));
                }
            }
        }
        kb.target_iv[target.id] = std::move(iv_by_feature);

        if (strategy.kind == StrategyKind::WithoutWhiteBox) continue;
        for (const auto& p : kb.pattern_layer) {
            // Association strength summarizes the target rules sitting on the
            // pattern's member essences.
            std::vector<Grade> grades;
            for (const auto& r : kb.target_rules)
                if (r.scope_id == target.id &&
                    std::find(p.member_essences.begin(), p.member_essences.end(), r.feature) !=
                        p.member_essences.end())
                    grades.push_back(r.grade);
            if (grades.empty()) continue;
            Grade strength;
            if (cfg.association_mode == AssociationMode::Max) {
                strength = *std::max_element(grades.begin(), grades.end());
            } else {
                double mean = 0.0;
                for (const auto g : grades) mean += static_cast<double>(g);
                mean /= static_cast<double>(grades.size());
                strength = static_cast<Grade>(std::lround(mean));
            }
            kb.associations.push_back({p.id, target.id, strength});
        }
    }

    return kb;
}

// --- serialization ---

namespace detail {

inline nlohmann::json bound_to_json(double v) {
    if (v == std::numeric_limits<double>::infinity()) return "inf";
    if (v == -std::numeric_limits<double>::infinity()) return "-inf";
    return v;
}

inline double bound_from_json(const nlohmann::json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        throw DataError("bad interval bound: " + s);
    }
    return j.get<double>();
}

}  // namespace detail

inline nlohmann::json to_json(const Bin& b) {
    nlohmann::json j{{"events", b.event_count}, {"nonevents", b.nonevent_count}, {"woe", b.woe}};
    if (b.is_missing_bin) {
        j["missing"] = true;
    } else {
        j["lower"] = detail::bound_to_json(b.lower);
        j["upper"] = detail::bound_to_json(b.upper);
    }
    return j;
}

inline Bin bin_from_json(const nlohmann::json& j) {
    Bin b;
    b.event_count = j.at("events").get<long>();
    b.nonevent_count = j.at("nonevents").get<long>();
    b.woe = j.at("woe").get<double>();
    if (j.value("missing", false)) {
        b.is_missing_bin = true;
        b.lower = b.upper = std::numeric_limits<double>::quiet_NaN();
    } else {
        b.lower = detail::bound_from_json(j.at("lower"));
        b.upper = detail::bound_from_json(j.at("upper"));
    }
    return b;
}

inline nlohmann::json to_json(const Rule& r) {
    return nlohmann::json{{"id", r.id},
                          {"feature", r.feature},
                          {"bin", to_json(r.bin)},
                          {"polarity", r.polarity},
                          {"grade", to_string(r.grade)},
                          {"woe", r.woe_value},
                          {"signal", r.signal_name},
                          {"scope", to_string(r.scope)},
                          {"scope_id", r.scope_id},
                          {"text", r.rendered_text}};
}

inline Rule rule_from_json(const nlohmann::json& j) {
    Rule r;
    r.id = j.at("id").get<std::string>();
    r.feature = j.at("feature").get<std::string>();
    r.bin = bin_from_json(j.at("bin"));
    r.polarity = j.at("polarity").get<int>();
    r.grade = grade_from_string(j.at("grade").get<std::string>());
    r.woe_value = j.at("woe").get<double>();
    r.signal_name = j.at("signal").get<std::string>();
    r.scope = rule_scope_from_string(j.at("scope").get<std::string>());
    r.scope_id = j.at("scope_id").get<std::string>();
    r.rendered_text = j.at("text").get<std::string>();
    return r;
}

inline nlohmann::json to_json(const EssenceSpec& s) {
    return nlohmann::json{{"name", s.name},
                          {"category", to_string(s.category)},
                          {"description", s.description},
                          {"extractor", s.extractor_id}};
}

inline nlohmann::json to_json(const BehavioralPattern& p) {
    nlohmann::json cuts = nlohmann::json::array();
    for (const auto& c : p.level_fn.cuts)
        cuts.push_back({{"essence", c.essence}, {"t1", c.t1}, {"t2", c.t2}});
    nlohmann::json rules = nlohmann::json::array();
    for (const auto& r : p.rules) rules.push_back(to_json(r));
    return nlohmann::json{{"id", p.id},
                          {"name", p.name},
                          {"category", to_string(p.category)},
                          {"members", p.member_essences},
                          {"description", p.description},
                          {"level_cuts", std::move(cuts)},
                          {"rules", std::move(rules)}};
}

inline nlohmann::json to_json(const TargetSpec& t) {
    return nlohmann::json{{"id", t.id},
                          {"name", t.name},
                          {"description", t.description},
                          {"classes", t.class_labels},
                          {"positive", t.positive_class}};
}

inline nlohmann::json to_json(const KnowledgeBase& kb) {
    nlohmann::json essences = nlohmann::json::array();
    for (const auto& s : kb.essence_layer) essences.push_back(to_json(s));
    nlohmann::json patterns = nlohmann::json::array();
    for (const auto& p : kb.pattern_layer) patterns.push_back(to_json(p));
    nlohmann::json targets = nlohmann::json::array();
    for (const auto& t : kb.target_layer) targets.push_back(to_json(t));
    nlohmann::json target_rules = nlohmann::json::array();
    for (const auto& r : kb.target_rules) target_rules.push_back(to_json(r));
    nlohmann::json associations = nlohmann::json::array();
    for (const auto& a : kb.associations)
        associations.push_back({{"pattern_id", a.pattern_id},
                                {"target_id", a.target_id},
                                {"strength", to_string(a.strength)}});

    nlohmann::json stats = nlohmann::json::object();
    for (const auto& [name, q] : kb.essence_stats)
        stats[name] = {{"p10", q.p10}, {"p50", q.p50}, {"p90", q.p90}};
    nlohmann::json iv = nlohmann::json::object();
    for (const auto& [tid, m] : kb.target_iv) {
        nlohmann::json fm = nlohmann::json::object();
        for (const auto& [f, v] : m) fm[f] = v;
        iv[tid] = std::move(fm);
    }

    nlohmann::json j{{"version", kb.version},
                     {"essences", std::move(essences)},
                     {"patterns", std::move(patterns)},
                     {"targets", std::move(targets)},
                     {"edges",
                      {{"target_rules", std::move(target_rules)},
                       {"associations", std::move(associations)}}},
                     {"meta",
                      {{"config_hash", kb.meta.config_hash},
                       {"data_fingerprint", kb.meta.data_fingerprint},
                       {"strategy", kb.meta.strategy},
                       {"fit_user_ids", kb.meta.fit_user_ids},
                       {"warnings", kb.meta.warnings},
                       {"essence_stats", std::move(stats)},
                       {"target_iv", std::move(iv)}}}};
    for (const auto& [key, value] : kb.extra.items()) j[key] = value;
    return j;
}

/// Validates that every edge endpoint resolves inside the document.
inline void check_kb_integrity(const KnowledgeBase& kb) {
    std::set<std::string> essence_names;
    for (const auto& s : kb.essence_layer) essence_names.insert(s.name);
    std::set<std::string> pattern_ids, target_ids, rule_ids;
    for (const auto& p : kb.pattern_layer)
        if (!pattern_ids.insert(p.id).second) throw DataError("duplicate pattern id: " + p.id);
    for (const auto& t : kb.target_layer)
        if (!target_ids.insert(t.id).second) throw DataError("duplicate target id: " + t.id);

    auto check_rule = [&](const Rule& r, const std::string& where) {
        if (!rule_ids.insert(r.id).second) throw DataError("duplicate rule id: " + r.id);
        if (!essence_names.count(r.feature))
            throw DataError(where + " rule " + r.id + " references unknown essence '" + r.feature + "'");
        if (r.scope == RuleScope::Pattern && !pattern_ids.count(r.scope_id))
            throw DataError("rule " + r.id + " references unknown pattern '" + r.scope_id + "'");
        if (r.scope == RuleScope::Target && !target_ids.count(r.scope_id))
            throw DataError("rule " + r.id + " references unknown target '" + r.scope_id + "'");
    };
    for (const auto& p : kb.pattern_layer) {
        for (const auto& m : p.member_essences)
            if (!essence_names.count(m))
                throw DataError("pattern " + p.id + " references unknown essence '" + m + "'");
        for (const auto& r : p.rules) check_rule(r, "pattern");
    }
    for (const auto& r : kb.target_rules) check_rule(r, "target");
    for (const auto& a : kb.associations) {
        if (!pattern_ids.count(a.pattern_id))
            throw DataError("association references unknown pattern '" + a.pattern_id + "'");
        if (!target_ids.count(a.target_id))
            throw DataError("association references unknown target '" + a.target_id + "'");
    }
}

inline KnowledgeBase kb_from_json(const nlohmann::json& j) {
    KnowledgeBase kb;
    if (!j.contains("version")) throw DataError("knowledge base document lacks a version");
    const int version = j.at("version").get<int>();
    if (version != kKnowledgeBaseVersion)
        throw VersionError("knowledge base version " + std::to_string(version) +
                           " needs migration; this reader supports version " +
                           std::to_string(kKnowledgeBaseVersion));
    try {
        kb.version = version;
        for (const auto& e : j.at("essences")) {
            EssenceSpec s;
            s.name = e.at("name").get<std::string>();
            s.category = essence_category_from_string(e.at("category").get<std::string>());
            s.description = e.value("description", "");
            s.extractor_id = e.value("extractor", s.name);
            kb.essence_layer.push_back(std::move(s));
        }
        for (const auto& pj : j.at("patterns")) {
            BehavioralPattern p;
            p.id = pj.at("id").get<std::string>();
            p.name = pj.at("name").get<std::string>();
            p.category = essence_category_from_string(pj.at("category").get<std::string>());
            p.member_essences = pj.at("members").get<std::vector<std::string>>();
            p.description = pj.value("description", "");
            for (const auto& cj : pj.at("level_cuts"))
                p.level_fn.cuts.push_back({cj.at("essence").get<std::string>(),
                                           cj.at("t1").get<double>(), cj.at("t2").get<double>()});
            for (const auto& rj : pj.at("rules")) p.rules.push_back(rule_from_json(rj));
            kb.pattern_layer.push_back(std::move(p));
        }
        for (const auto& tj : j.at("targets")) {
            TargetSpec t;
            t.id = tj.at("id").get<std::string>();
            t.name = tj.at("name").get<std::string>();
            t.description = tj.at("description").get<std::string>();
            t.class_labels = tj.at("classes").get<std::vector<std::string>>();
            t.positive_class = tj.at("positive").get<std::string>();
            kb.target_layer.push_back(std::move(t));
        }
        const auto& edges = j.at("edges");
        for (const auto& rj : edges.at("target_rules")) kb.target_rules.push_back(rule_from_json(rj));
        for (const auto& aj : edges.at("associations"))
            kb.associations.push_back({aj.at("pattern_id").get<std::string>(),
                                       aj.at("target_id").get<std::string>(),
                                       grade_from_string(aj.at("strength").get<std::string>())});
        const auto& meta = j.at("meta");
        kb.meta.config_hash = meta.value("config_hash", "");
        kb.meta.data_fingerprint = meta.value("data_fingerprint", "");
        kb.meta.strategy = meta.value("strategy", "");
        if (meta.contains("fit_user_ids"))
            kb.meta.fit_user_ids = meta.at("fit_user_ids").get<std::vector<std::string>>();
        if (meta.contains("warnings"))
            kb.meta.warnings = meta.at("warnings").get<std::vector<std::string>>();
        if (meta.contains("essence_stats"))
            for (const auto& [name, qj] : meta.at("essence_stats").items())
                kb.essence_stats[name] = {qj.at("p10").get<double>(), qj.at("p50").get<double>(),
                                          qj.at("p90").get<double>()};
        if (meta.contains("target_iv"))
            for (const auto& [tid, fm] : meta.at("target_iv").items())
                for (const auto& [f, v] : fm.items()) kb.target_iv[tid][f] = v.get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("knowledge base document: ") + e.what());
    }

    static const std::set<std::string> known{"version", "essences", "patterns",
                                             "targets", "edges",    "meta"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) kb.extra[key] = value;

    check_kb_integrity(kb);
    return kb;
}

inline void save_kb_file(const std::string& path, const KnowledgeBase& kb) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot open output file: " + tmp);
        out << to_json(kb).dump(2) << '\n';
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw DataError("cannot move " + tmp + " into place");
}

inline KnowledgeBase load_kb_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open knowledge base: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("knowledge base " + path + " is not valid JSON: " + e.what());
    }
    return kb_from_json(j);
}

inline nlohmann::json to_json(const Fact& f) {
    nlohmann::json j{{"user_id", f.user_id},
                     {"kind", to_string(f.kind)},
                     {"subject", f.subject_id},
                     {"grade", to_string(f.grade)},
                     {"text", f.rendered_text}};
    if (f.kind == FactKind::RuleFired) {
        j["observed"] = f.observed ? nlohmann::json(*f.observed) : nlohmann::json(nullptr);
        j["woe_abs"] = f.woe_abs;
    } else {
        j["level"] = to_string(*f.level);
    }
    return j;
}

}  // namespace txnkb
