#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "txnkb/common.hpp"
#include "txnkb/woe.hpp"

namespace txnkb {

enum class RuleScope { Target, Pattern };

inline const char* to_string(RuleScope s) {
    return s == RuleScope::Target ? "target" : "pattern";
}

inline RuleScope rule_scope_from_string(std::string_view s) {
    if (s == "target") return RuleScope::Target;
    if (s == "pattern") return RuleScope::Pattern;
    throw DataError("unknown rule scope: " + std::string(s));
}

// A graded one-feature condition supporting a target or a behavioral pattern.
// polarity +1 means the condition is evidence for the signal, -1 against it;
// the rendered text carries the counter- prefix for the latter.
struct Rule {
    std::string id;
    std::string feature;
    Bin bin;
    int polarity = 1;
    Grade grade = Grade::Weak;
    double woe_value = 0.0;
    std::string signal_name;  // what the rendered signal is called
    RuleScope scope = RuleScope::Target;
    std::string scope_id;  // target id or pattern id the rule belongs to
    std::string rendered_text;

    bool operator==(const Rule&) const = default;
};

/// Canonical human-readable form:
///   IF <feature> <= <v> -> <grade> <signal> signal          (left-unbounded)
///   IF <feature> > <v> -> ...                               (right-unbounded)
///   IF <lo> < <feature> <= <hi> -> ...                      (interior)
///   IF <feature> is missing -> ...                          (missing bin)
/// Negative polarity prefixes the signal name with "counter-".
inline std::string render_rule_text(const std::string& feature, const Bin& bin, Grade grade,
                                    int polarity, const std::string& signal_name) {
    const double inf = std::numeric_limits<double>::infinity();
    std::string condition;
    if (bin.is_missing_bin) {
        condition = feature + " is missing";
    } else if (bin.lower == -inf && bin.upper == inf) {
        condition = feature + " is any value";
    } else if (bin.lower == -inf) {
        condition = feature + " <= " + format_double(bin.upper);
    } else if (bin.upper == inf) {
        condition = feature + " > " + format_double(bin.lower);
    } else {
        condition = format_double(bin.lower) + " < " + feature + " <= " + format_double(bin.upper);
    }
    const std::string signal = polarity >= 0 ? signal_name : "counter-" + signal_name;
    return "IF " + condition + " -> " + std::string(to_string(grade)) + " " + signal + " signal";
}

/// Builds a rule from a fitted bin; polarity and grade derive from the woe.
inline Rule make_rule(std::string id, const std::string& feature, const Bin& bin,
                      const std::string& signal_name, RuleScope scope, std::string scope_id) {
    Rule r;
    r.id = std::move(id);
    r.feature = feature;
    r.bin = bin;
    r.woe_value = bin.woe;
    r.polarity = bin.woe >= 0.0 ? 1 : -1;
    r.grade = grade_of(bin.woe);
    r.signal_name = signal_name;
    r.scope = scope;
    r.scope_id = std::move(scope_id);
    r.rendered_text = render_rule_text(feature, bin, r.grade, r.polarity, signal_name);
    return r;
}

/// Sequential zero-padded rule ids; fixed width keeps ids free of
/// prefix collisions so substring matching on ids is exact.
class RuleIdGen {
public:
    std::string next() {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "rule_%04d", counter_++);
        if (counter_ > 9999) throw DataError("rule id space exhausted");
        return buf;
    }

private:
    int counter_ = 1;
};

}  // namespace txnkb
