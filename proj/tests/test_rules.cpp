#include <catch2/catch_amalgamated.hpp>

#include <limits>

#include "txnkb/rules.hpp"

using namespace txnkb;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

Bin interval(double lo, double hi, double woe = 0.0) {
    Bin b;
    b.lower = lo;
    b.upper = hi;
    b.woe = woe;
    return b;
}
}  // namespace

TEST_CASE("rule text covers every bin shape") {
    CHECK(render_rule_text("activity_period_days", interval(-kInf, 70.0), Grade::Strong, 1,
                           "churn") == "IF activity_period_days <= 70 -> strong churn signal");
    CHECK(render_rule_text("txn_count", interval(17.0, kInf), Grade::Moderate, 1, "churn") ==
          "IF txn_count > 17 -> moderate churn signal");
    CHECK(render_rule_text("amount_mean", interval(10.5, 99.25), Grade::Weak, 1, "fraud") ==
          "IF 10.5 < amount_mean <= 99.25 -> weak fraud signal");
    Bin missing;
    missing.is_missing_bin = true;
    CHECK(render_rule_text("gap_std_days", missing, Grade::Weak, 1, "churn") ==
          "IF gap_std_days is missing -> weak churn signal");
    CHECK(render_rule_text("balance", interval(-kInf, kInf), Grade::Weak, 1, "churn") ==
          "IF balance is any value -> weak churn signal");
}

TEST_CASE("negative polarity renders a counter signal") {
    CHECK(render_rule_text("txn_count", interval(-kInf, 5.0), Grade::Strong, -1, "churn") ==
          "IF txn_count <= 5 -> strong counter-churn signal");
}

TEST_CASE("bounds render with minimal decimals") {
    CHECK(render_rule_text("f", interval(-kInf, 69.57203703703703), Grade::Strong, 1, "churn") ==
          "IF f <= 69.57203703703703 -> strong churn signal");
    CHECK(render_rule_text("f", interval(-kInf, 3.0), Grade::Weak, 1, "x") ==
          "IF f <= 3 -> weak x signal");
}

TEST_CASE("make_rule derives polarity, grade and text from the bin") {
    Bin b = interval(-kInf, 70.0, 0.82);
    const Rule r = make_rule("rule_0001", "activity_period_days", b, "churn", RuleScope::Target,
                             "tgt_churn");
    CHECK(r.id == "rule_0001");
    CHECK(r.polarity == 1);
    CHECK(r.grade == Grade::Strong);
    CHECK(r.woe_value == 0.82);
    CHECK(r.scope == RuleScope::Target);
    CHECK(r.scope_id == "tgt_churn");
    CHECK(r.rendered_text == "IF activity_period_days <= 70 -> strong churn signal");

    const Rule neg = make_rule("rule_0002", "txn_count", interval(30.0, kInf, -0.3), "churn",
                               RuleScope::Pattern, "pat_001");
    CHECK(neg.polarity == -1);
    CHECK(neg.grade == Grade::Moderate);
    CHECK(neg.rendered_text == "IF txn_count > 30 -> moderate counter-churn signal");

    // Zero woe counts as supporting evidence, not counter-evidence.
    CHECK(make_rule("rule_0003", "f", interval(0.0, 1.0, 0.0), "x", RuleScope::Target, "t")
              .polarity == 1);
}

TEST_CASE("grade boundaries in rule construction match grade_of") {
    CHECK(make_rule("r", "f", interval(0, 1, 0.5), "x", RuleScope::Target, "t").grade ==
          Grade::Strong);
    CHECK(make_rule("r", "f", interval(0, 1, -0.5), "x", RuleScope::Target, "t").grade ==
          Grade::Strong);
    CHECK(make_rule("r", "f", interval(0, 1, 0.2), "x", RuleScope::Target, "t").grade ==
          Grade::Moderate);
    CHECK(make_rule("r", "f", interval(0, 1, 0.19), "x", RuleScope::Target, "t").grade ==
          Grade::Weak);
}

TEST_CASE("rule ids are sequential and fixed width") {
    RuleIdGen gen;
    CHECK(gen.next() == "rule_0001");
    CHECK(gen.next() == "rule_0002");
    for (int i = 3; i <= 100; ++i) gen.next();
    CHECK(gen.next() == "rule_0101");
}

TEST_CASE("rule scope round trips through strings") {
    CHECK(rule_scope_from_string(to_string(RuleScope::Target)) == RuleScope::Target);
    CHECK(rule_scope_from_string(to_string(RuleScope::Pattern)) == RuleScope::Pattern);
    CHECK_THROWS_AS(rule_scope_from_string("global"), DataError);
}
