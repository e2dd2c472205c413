#pragma once

#include <fstream>
#include <regex>
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

struct InstructionTriplet {
    std::string instruction;
    std::string context;
    std::string response;
    std::string user_id;
    std::string target_id;
    std::vector<std::string> rule_ids;  // rule ids available in the context

    bool operator==(const InstructionTriplet&) const = default;
};

enum class TripletMode { Template, Llm };

struct GenerationReport {
    std::size_t generated = 0;
    std::size_t regenerated = 0;
    std::size_t dropped = 0;
    std::size_t skipped_unlabeled = 0;
};

namespace detail {

/// Every rule-id-shaped token in the text. Citation soundness is checked
/// against this set, so an explanation can only reference its own context.
inline std::vector<std::string> cited_rule_ids(const std::string& text) {
    static const std::regex id_re(R"(rule_\d{4})");
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), id_re);
         it != std::sregex_iterator(); ++it)
        if (seen.insert(it->str()).second) out.push_back(it->str());
    return out;
}

inline bool response_is_grounded(const std::string& response, const std::string& gold,
                                 const std::vector<std::string>& classes,
                                 const std::vector<std::string>& context_rule_ids) {
    const auto parsed = parse_prediction(response, classes, context_rule_ids);
    if (parsed.label != gold || parsed.has_flag("parse-fallback")) return false;
    const std::set<std::string> allowed(context_rule_ids.begin(), context_rule_ids.end());
    for (const auto& id : cited_rule_ids(response))
        if (!allowed.count(id)) return false;
    return true;
}

}  // namespace detail

/// Deterministic explanation: cites the fired rules whose polarity agrees
/// with the gold label, then states the answer.
inline std::string template_response(const KnowledgeBase& kb, const TargetSpec& target,
                                     const std::string& gold,
                                     const std::vector<Fact>& context_facts) {
    const bool gold_positive = gold == target.positive_class;
    std::vector<const Fact*> agreeing;
    for (const auto& f : context_facts) {
        if (f.kind != FactKind::RuleFired) continue;
        const Rule* r = kb.find_rule(f.subject_id);
        if (!r || r->scope != RuleScope::Target || r->scope_id != target.id) continue;
        const bool points_positive = r->polarity >= 0;
        if (points_positive == gold_positive) agreeing.push_back(&f);
    }
    std::string out;
    if (agreeing.empty()) {
        out = "No single decisive rule fired; the overall evidence balance supports the label.";
    } else {
        out = "The decision follows from the fired evidence: ";
        for (std::size_t i = 0; i < agreeing.size(); ++i) {
            if (i) out += i + 1 == agreeing.size() ? " and " : ", ";
            out += "(" + agreeing[i]->subject_id + ") " + agreeing[i]->rendered_text;
        }
        out += ".";
    }
    out += "\nANSWER: " + gold;
    return out;
}

inline std::string instruct_instruction(const TargetSpec& target) {
    return "Decide the user's " + target.name + " status. " + target.description +
           " Explain briefly from the supplied evidence only, citing rule ids in parentheses, "
           "and finish with exactly one final line `ANSWER: <label>`, where <label> is one of: " +
           detail::join(target.class_labels, ", ") + ".";
}

/// Builds one {instruction, context, response} triplet per labeled user.
///
/// Template mode needs no gateway and always satisfies both invariants by
/// construction. LLM mode asks the gateway to write the explanation and
/// enforces label fidelity plus citation soundness, regenerating a failed
/// user once and dropping it on the second failure. Zero survivors is an
/// error, not an empty dataset.
inline std::vector<InstructionTriplet> generate_triplets(
    const KnowledgeBase& kb, const std::vector<UserHistory>& labeled,
    const std::vector<EssenceSpec>& specs, const TargetSpec& target, TripletMode mode,
    Gateway* gateway, GenerationReport& report, const ContextConfig& cfg = {}) {
    if (mode == TripletMode::Llm && !gateway)
        throw ConfigError("LLM triplet generation needs a gateway");

    std::vector<InstructionTriplet> out;
    const std::string instruction = instruct_instruction(target);

    for (const auto& h : labeled) {
        if (!h.label) {
            ++report.skipped_unlabeled;
            continue;
        }
        const std::string& gold = *h.label;
        if (std::find(target.class_labels.begin(), target.class_labels.end(), gold) ==
            target.class_labels.end())
            throw DataError("user " + h.user_id + ": label '" + gold + "' not among target '" +
                            target.name + "' classes");

        const auto row = compute_essences(h, specs);
        ContextInputs in;
        in.facts = instantiate_facts(kb, row);
        const auto ctx =
            assemble_context(kb, target, in, ContextStrategy::KBviaWB, {}, {}, cfg);

        InstructionTriplet t;
        t.instruction = instruction;
        t.user_id = h.user_id;
        t.target_id = target.id;
        t.rule_ids = ctx.rule_ids;
        {
            std::string body = "Behavioral evidence for user " + h.user_id + ":\n";
            if (ctx.facts.empty()) body += "- no graded evidence fired\n";
            for (const auto& f : ctx.facts)
                body += "- (" + f.subject_id + ") " + f.rendered_text + "\n";
            t.context = body;
        }

        if (mode == TripletMode::Template) {
            t.response = template_response(kb, target, gold, ctx.facts);
            out.push_back(std::move(t));
            ++report.generated;
            continue;
        }

        const std::string gen_prompt = instruction + "\n\n" + t.context +
                                       "\nGold label for this training example: " + gold + "\n";
        bool kept = false;
        for (int attempt = 0; attempt < 2 && !kept; ++attempt) {
            const std::string response = gateway->complete(gen_prompt);
            if (detail::response_is_grounded(response, gold, target.class_labels, t.rule_ids)) {
                t.response = response;
                out.push_back(t);
                ++report.generated;
                if (attempt == 1) ++report.regenerated;
                kept = true;
            }
        }
        if (!kept) ++report.dropped;
    }

    if (out.empty())
        throw DataError("triplet generation produced zero surviving triplets");
    return out;
}

inline nlohmann::json to_json(const InstructionTriplet& t) {
    return nlohmann::json{{"instruction", t.instruction},
                          {"context", t.context},
                          {"response", t.response},
                          {"meta",
                           {{"user_id", t.user_id},
                            {"target_id", t.target_id},
                            {"rule_ids", t.rule_ids}}}};
}

inline InstructionTriplet triplet_from_json(const nlohmann::json& j) {
    InstructionTriplet t;
    t.instruction = j.at("instruction").get<std::string>();
    t.context = j.at("context").get<std::string>();
    t.response = j.at("response").get<std::string>();
    const auto& m = j.at("meta");
    t.user_id = m.at("user_id").get<std::string>();
    t.target_id = m.at("target_id").get<std::string>();
    t.rule_ids = m.at("rule_ids").get<std::vector<std::string>>();
    return t;
}

/// Line-delimited JSON export; one triplet per line, stable field order.
inline void export_dataset(const std::vector<InstructionTriplet>& triplets,
                           const std::string& path) {
    if (triplets.empty()) throw DataError("refusing to export an empty triplet dataset");
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot open output file: " + tmp);
        for (const auto& t : triplets) out << to_json(t).dump() << '\n';
        if (!out) throw DataError("write failed: " + path);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw DataError("cannot move " + tmp + " into place");
}

inline std::vector<InstructionTriplet> load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset: " + path);
    std::vector<InstructionTriplet> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(triplet_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace txnkb
