#pragma once

#include <algorithm>
#include <cctype>
#include <future>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <regex>
#include <semaphore>
#include <string>
#include <vector>

#include "txnkb/common.hpp"

namespace txnkb {

struct GatewayConfig {
    std::string base_url = "http://localhost:8080/v1";
    std::string model = "local-model";
    std::string api_key_env = "TXNKB_API_KEY";  // key is read from this variable, never from config
    double timeout_s = 60.0;
    int max_retries = 2;
    int max_concurrent = 4;
    double temperature = 0.0;
    double backoff_base_s = 1.0;  // doubles per retry
};

struct TranscriptEntry {
    std::string request;
    std::string response;
};

class Gateway {
public:
    virtual ~Gateway() = default;
    virtual std::string complete(const std::string& prompt) = 0;

    /// Completes a batch concurrently, bounded by max_parallel; results come
    /// back in submission order.
    std::vector<std::string> complete_many(const std::vector<std::string>& prompts,
                                           int max_parallel = 4) {
        if (max_parallel < 1) max_parallel = 1;
        std::counting_semaphore<256> slots(std::min(max_parallel, 256));
        std::vector<std::future<std::string>> futures;
        futures.reserve(prompts.size());
        for (const auto& p : prompts) {
            futures.push_back(std::async(std::launch::async, [this, &slots, &p] {
                slots.acquire();
                struct Release {
                    std::counting_semaphore<256>& s;
                    ~Release() { s.release(); }
                } release{slots};
                return complete(p);
            }));
        }
        std::vector<std::string> out;
        out.reserve(prompts.size());
        for (auto& f : futures) out.push_back(f.get());
        return out;
    }
};

/// Replays a fixed list of responses in order; running past the end is an
/// error so tests notice unexpected extra calls.
class ScriptedGateway : public Gateway {
public:
    explicit ScriptedGateway(std::vector<std::string> replies) : replies_(std::move(replies)) {}

    std::string complete(const std::string& prompt) override {
        std::lock_guard<std::mutex> lock(mu_);
        transcripts_.push_back({prompt, ""});
        if (next_ >= replies_.size())
            throw TransportError("scripted gateway exhausted after " +
                                 std::to_string(replies_.size()) + " replies");
        transcripts_.back().response = replies_[next_];
        return replies_[next_++];
    }

    std::size_t calls() const { return next_; }
    const std::vector<TranscriptEntry>& transcripts() const { return transcripts_; }

private:
    std::vector<std::string> replies_;
    std::size_t next_ = 0;
    std::vector<TranscriptEntry> transcripts_;
    std::mutex mu_;
};

namespace detail {

inline std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::string cur;
    for (char c : text) {
        if (c == '\n') {
            lines.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    lines.push_back(cur);
    return lines;
}

inline bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

}  // namespace detail

/// Deterministic stand-in for a live model: reads the structured evidence out
/// of the prompt and answers by the sign of the summed grades (strong 3,
/// moderate 2, weak 1; counter-signals negative). Ties and evidence-free
/// prompts fall back to a class fixed by the prompt's hash, so aggregate
/// behaviour without evidence is chance-like yet reproducible.
class PolicyGateway : public Gateway {
public:
    std::string complete(const std::string& prompt) override {
        static const std::regex evidence_re(
            R"(^- \((\w+)\) IF .* -> (strong|moderate|weak) (counter-)?(.+) signal(?: \[observed: .*\])?$)");
        static const std::regex target_re(R"(^Target: (.+)$)");
        static const std::regex labels_re(R"(^Labels: (.+) \(positive: (.+)\)$)");

        std::string target_name, positive;
        std::vector<std::string> labels;
        struct Evidence {
            std::string rule_id;
            std::string klass;
            int weight = 0;
        };
        std::vector<Evidence> evidence;

        for (const auto& raw : detail::split_lines(prompt)) {
            std::smatch m;
            if (std::regex_match(raw, m, target_re)) {
                target_name = detail::trim(m[1].str());
            } else if (std::regex_match(raw, m, labels_re)) {
                positive = detail::trim(m[2].str());
                labels.clear();
                std::string list = m[1].str();
                std::size_t pos = 0;
                while (pos != std::string::npos) {
                    const auto comma = list.find(", ", pos);
                    labels.push_back(detail::trim(comma == std::string::npos
                                                      ? list.substr(pos)
                                                      : list.substr(pos, comma - pos)));
                    pos = comma == std::string::npos ? std::string::npos : comma + 2;
                }
            } else if (std::regex_match(raw, m, evidence_re)) {
                const std::string grade = m[2].str();
                const bool counter = m[3].matched;
                const std::string signal = detail::trim(m[4].str());
                int w = grade == "strong" ? 3 : grade == "moderate" ? 2 : 1;
                if (counter) w = -w;
                std::string klass;
                if (!target_name.empty() && signal == target_name)
                    klass = positive;
                else if (std::find(labels.begin(), labels.end(), signal) != labels.end())
                    klass = signal;
                else
                    continue;  // pattern-scoped signal, not a class vote
                evidence.push_back({m[1].str(), klass, w});
            }
        }

        std::lock_guard<std::mutex> lock(mu_);
        ++calls_;
        if (labels.empty())
            return "No label contract found in the prompt.\nANSWER: ABSTAIN";

        std::map<std::string, int> score;
        for (const auto& ev : evidence) score[ev.klass] += ev.weight;

        const std::string coin = labels[fnv1a(prompt) % labels.size()];
        std::string label;
        if (evidence.empty()) {
            label = coin;
        } else if (labels.size() == 2 && !positive.empty()) {
            const int s = score.count(positive) ? score[positive] : 0;
            const std::string other = labels[0] == positive ? labels[1] : labels[0];
            label = s > 0 ? positive : s < 0 ? other : coin;
        } else {
            int best = std::numeric_limits<int>::min();
            for (const auto& l : labels) {
                const int s = score.count(l) ? score[l] : 0;
                if (s > best) {
                    best = s;
                    label = l;
                }
            }
            if (best <= 0) label = coin;
        }

        std::vector<Evidence> ranked = evidence;
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const Evidence& a, const Evidence& b) {
                             return std::abs(a.weight) > std::abs(b.weight);
                         });
        std::string rationale = "Signed evidence total decides the call.";
        if (!ranked.empty()) {
            rationale += " Decisive evidence: (" + ranked[0].rule_id + ")";
            if (ranked.size() > 1) rationale += ", (" + ranked[1].rule_id + ")";
            rationale += ".";
        } else {
            rationale = "No graded evidence present; answering the prompt-fixed default.";
        }
        return rationale + "\nANSWER: " + label;
    }

    std::size_t calls() const {
        std::lock_guard<std::mutex> lock(mu_);
        return calls_;
    }

private:
    mutable std::mutex mu_;
    std::size_t calls_ = 0;
};

struct PredictionResult {
    std::string label;  // a class label or "ABSTAIN"
    std::string rationale;
    std::vector<std::string> evidence_chain;  // rule ids cited, always a subset of the context's
    std::vector<TranscriptEntry> transcripts;
    std::vector<std::string> flags;  // "parse-fallback", "unrevised", "no-memory"

    bool has_flag(std::string_view f) const {
        return std::find(flags.begin(), flags.end(), f) != flags.end();
    }
};

inline const std::string kAbstainLabel = "ABSTAIN";

/// Extracts the model's decision from free text.
///
/// The contract is a final `ANSWER: <label>` line (case-insensitive). If no
/// such line carries a known class, the last standalone occurrence of any
/// class name is used and flagged "parse-fallback"; with nothing to go on the
/// result is ABSTAIN. Cited evidence is whatever context rule ids appear
/// verbatim in the text, so the chain can never reference foreign rules.
inline PredictionResult parse_prediction(const std::string& response,
                                         const std::vector<std::string>& classes,
                                         const std::vector<std::string>& context_rule_ids) {
    PredictionResult result;
    result.rationale = response;

    auto match_class = [&](const std::string& candidate) -> const std::string* {
        const std::string lc = detail::to_lower(detail::trim(candidate));
        for (const auto& c : classes)
            if (detail::to_lower(c) == lc) return &c;
        return nullptr;
    };

    static const std::regex answer_re(R"(^\s*answer\s*:\s*(.*?)\s*$)", std::regex::icase);
    const auto lines = detail::split_lines(response);
    for (auto it = lines.rbegin(); it != lines.rend() && result.label.empty(); ++it) {
        std::smatch m;
        if (std::regex_match(*it, m, answer_re)) {
            if (const auto* c = match_class(m[1].str())) result.label = *c;
            break;  // only the last ANSWER line counts
        }
    }

    if (result.label.empty()) {
        const std::string haystack = detail::to_lower(response);
        std::size_t best_pos = std::string::npos;
        const std::string* best = nullptr;
        for (const auto& c : classes) {
            const std::string needle = detail::to_lower(c);
            std::size_t from = 0;
            while (true) {
                const auto pos = haystack.find(needle, from);
                if (pos == std::string::npos) break;
                const bool left_ok = pos == 0 || !detail::is_word_char(haystack[pos - 1]);
                const auto end = pos + needle.size();
                const bool right_ok = end >= haystack.size() || !detail::is_word_char(haystack[end]);
                if (left_ok && right_ok && (best_pos == std::string::npos || pos >= best_pos)) {
                    best_pos = pos;
                    best = &c;
                }
                from = pos + 1;
            }
        }
        if (best) {
            result.label = *best;
            result.flags.push_back("parse-fallback");
        }
    }

    if (result.label.empty()) result.label = kAbstainLabel;

    for (const auto& id : context_rule_ids)
        if (response.find(id) != std::string::npos) result.evidence_chain.push_back(id);
    return result;
}

}  // namespace txnkb
