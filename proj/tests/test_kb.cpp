#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "txnkb/kb.hpp"
#include "txnkb/synthetic.hpp"

using namespace txnkb;

namespace {

TargetSpec churn_target() {
    TargetSpec t;
    t.id = "tgt_churn";
    t.name = "churn";
    t.description = "client stops transacting within the outcome window";
    t.class_labels = {"0", "1"};
    t.positive_class = "1";
    return t;
}

KnowledgeBase small_kb(StrategyKind kind = StrategyKind::Random, std::uint64_t seed = 3,
                       int n_users = 300) {
    const auto histories = generate_synthetic(n_users, seed, {});
    SelectionStrategy s;
    s.kind = kind;
    s.seed = seed;
    return build_kb(histories, default_essence_specs(), s, {churn_target()});
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) {
        path = (std::filesystem::temp_directory_path() / name).string();
    }
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("target validation catches malformed specs") {
    auto t = churn_target();
    CHECK_NOTHROW(validate_target(t));
    t.positive_class = "yes";
    CHECK_THROWS_AS(validate_target(t), ConfigError);
    t = churn_target();
    t.class_labels = {"1", "1"};
    CHECK_THROWS_AS(validate_target(t), ConfigError);
    t = churn_target();
    t.class_labels = {"1"};
    CHECK_THROWS_AS(validate_target(t), ConfigError);
    t = churn_target();
    t.description.clear();
    CHECK_THROWS_AS(validate_target(t), ConfigError);
    t = churn_target();
    t.id.clear();
    CHECK_THROWS_AS(validate_target(t), ConfigError);
}

TEST_CASE("a built knowledge base is structurally sound") {
    const auto kb = small_kb();
    CHECK(kb.version == kKnowledgeBaseVersion);
    CHECK(kb.essence_layer.size() == default_essence_specs().size());
    CHECK_FALSE(kb.pattern_layer.empty());
    CHECK_FALSE(kb.target_rules.empty());
    CHECK_FALSE(kb.meta.fit_user_ids.empty());
    CHECK_FALSE(kb.meta.config_hash.empty());
    CHECK_FALSE(kb.meta.data_fingerprint.empty());
    CHECK(kb.meta.strategy == "random");
    CHECK_NOTHROW(check_kb_integrity(kb));

    // Quantile stats cover every essence that had finite values.
    CHECK(kb.essence_stats.count("activity_period_days") == 1);
    const auto& q = kb.essence_stats.at("activity_period_days");
    CHECK(q.p10 <= q.p50);
    CHECK(q.p50 <= q.p90);

    // Every target rule hangs off the churn target and cites a real essence.
    for (const auto& r : kb.target_rules) {
        CHECK(r.scope == RuleScope::Target);
        CHECK(r.scope_id == "tgt_churn");
    }
    CHECK(kb.target_iv.count("tgt_churn") == 1);
    CHECK_FALSE(kb.target_iv.at("tgt_churn").empty());

    // Lookups resolve by id and by name.
    CHECK(kb.find_target("tgt_churn") != nullptr);
    CHECK(kb.find_target("churn") != nullptr);
    CHECK(kb.find_target("nope") == nullptr);
    CHECK(kb.find_pattern(kb.pattern_layer.front().id) != nullptr);
    const auto rules = kb.all_rules();
    CHECK_FALSE(rules.empty());
    CHECK(kb.find_rule(rules.front()->id) == rules.front());
}

TEST_CASE("only train-split users feed the build") {
    auto histories = generate_synthetic(200, 5, {});
    std::size_t train = 0;
    for (const auto& h : histories)
        if (h.split == Split::Train) ++train;
    REQUIRE(train < histories.size());
    SelectionStrategy s;
    const auto kb = build_kb(histories, default_essence_specs(), s, {churn_target()});
    CHECK(kb.meta.fit_user_ids.size() == train);
    for (auto& h : histories) h.split = Split::Test;
    CHECK_THROWS_AS(build_kb(histories, default_essence_specs(), s, {churn_target()}), DataError);
}

TEST_CASE("duplicate target ids are rejected") {
    const auto histories = generate_synthetic(100, 6, {});
    SelectionStrategy s;
    CHECK_THROWS_AS(
        build_kb(histories, default_essence_specs(), s, {churn_target(), churn_target()}),
        ConfigError);
}

TEST_CASE("without_whitebox builds carry no rule edges or associations") {
    const auto kb = small_kb(StrategyKind::WithoutWhiteBox);
    CHECK(kb.target_rules.empty());
    CHECK(kb.associations.empty());
    for (const auto& p : kb.pattern_layer) {
        CHECK(p.rules.empty());
        CHECK_FALSE(p.level_fn.cuts.empty());  // levels survive
    }
    CHECK(kb.meta.strategy == "without_whitebox");
    // The whitebox summary stats are still recorded for diagnostics.
    CHECK_FALSE(kb.target_iv.at("tgt_churn").empty());
}

TEST_CASE("identical inputs build identical knowledge bases") {
    const auto a = small_kb(StrategyKind::Random, 9, 200);
    const auto b = small_kb(StrategyKind::Random, 9, 200);
    CHECK(a == b);
    CHECK(to_json(a).dump() == to_json(b).dump());
    const auto c = small_kb(StrategyKind::Random, 10, 200);
    CHECK_FALSE(a == c);
}

TEST_CASE("save then load reproduces the knowledge base exactly") {
    const auto kb = small_kb();
    TempFile f("txnkb_test_kb_roundtrip.json");
    save_kb_file(f.path, kb);
    const auto loaded = load_kb_file(f.path);
    CHECK(loaded == kb);
    // Re-serialized bytes match too.
    CHECK(to_json(loaded).dump(2) == to_json(kb).dump(2));
}

TEST_CASE("version mismatches fail loudly") {
    const auto kb = small_kb(StrategyKind::Random, 3, 100);
    auto j = to_json(kb);
    j["version"] = 2;
    CHECK_THROWS_AS(kb_from_json(j), VersionError);
    j.erase("version");
    CHECK_THROWS_AS(kb_from_json(j), DataError);
}

TEST_CASE("unknown document fields survive a round trip") {
    const auto kb = small_kb(StrategyKind::Random, 3, 100);
    auto j = to_json(kb);
    j["annotations"] = {{"reviewed_by", "ops"}, {"ticket", 1234}};
    const auto loaded = kb_from_json(j);
    CHECK(loaded.extra.contains("annotations"));
    CHECK(to_json(loaded)["annotations"] == j["annotations"]);
}

TEST_CASE("integrity checking rejects dangling edges") {
    auto kb = small_kb(StrategyKind::Random, 3, 100);
    auto broken = kb;
    REQUIRE_FALSE(broken.target_rules.empty());
    broken.target_rules[0].scope_id = "tgt_ghost";
    CHECK_THROWS_AS(check_kb_integrity(broken), DataError);

    broken = kb;
    broken.target_rules[0].feature = "no_such_essence";
    CHECK_THROWS_AS(check_kb_integrity(broken), DataError);

    broken = kb;
    broken.associations.push_back({"pat_999", "tgt_churn", Grade::Weak});
    CHECK_THROWS_AS(check_kb_integrity(broken), DataError);

    broken = kb;
    REQUIRE(broken.target_rules.size() >= 2);
    broken.target_rules[1].id = broken.target_rules[0].id;
    CHECK_THROWS_AS(check_kb_integrity(broken), DataError);
}

TEST_CASE("corrupt knowledge base files raise data errors") {
    TempFile f("txnkb_test_kb_corrupt.json");
    {
        std::ofstream out(f.path);
        out << "{ not json";
    }
    CHECK_THROWS_AS(load_kb_file(f.path), DataError);
    CHECK_THROWS_AS(load_kb_file("/nonexistent/path/kb.json"), DataError);
}

TEST_CASE("interval bounds serialize infinities as tokens") {
    Bin b;
    b.lower = -std::numeric_limits<double>::infinity();
    b.upper = 70.5;
    b.event_count = 3;
    b.nonevent_count = 4;
    b.woe = 1.25;
    const auto j = to_json(b);
    CHECK(j.at("lower") == "-inf");
    CHECK(j.at("upper") == 70.5);
    const auto back = bin_from_json(j);
    CHECK(back.lower == b.lower);
    CHECK(back.upper == b.upper);
    CHECK(back.event_count == 3);

    Bin m;
    m.is_missing_bin = true;
    m.lower = m.upper = std::numeric_limits<double>::quiet_NaN();
    const auto jm = to_json(m);
    CHECK(jm.value("missing", false));
    CHECK(bin_from_json(jm).is_missing_bin);

    auto bad = j;
    bad["upper"] = "sideways";
    CHECK_THROWS_AS(bin_from_json(bad), DataError);
}

TEST_CASE("instantiated facts are deterministic and well-formed") {
    const auto kb = small_kb(StrategyKind::Random, 4, 300);
    const auto histories = generate_synthetic(300, 4, {});
    const auto row = compute_essences(histories.front(), kb.essence_layer);
    const auto facts = instantiate_facts(kb, row);
    REQUIRE_FALSE(facts.empty());

    // Pattern rule edges come first, then target edges, then levels.
    std::size_t first_level = facts.size();
    for (std::size_t i = 0; i < facts.size(); ++i)
        if (facts[i].kind == FactKind::PatternLevel) {
            first_level = i;
            break;
        }
    for (std::size_t i = first_level; i < facts.size(); ++i)
        CHECK(facts[i].kind == FactKind::PatternLevel);

    std::size_t levels = 0;
    for (const auto& f : facts) {
        CHECK(f.user_id == row.user_id());
        if (f.kind == FactKind::PatternLevel) {
            ++levels;
            REQUIRE(f.level.has_value());
            CHECK(f.rendered_text.find("level is") != std::string::npos);
        } else {
            const auto* r = kb.find_rule(f.subject_id);
            REQUIRE(r != nullptr);
            CHECK(f.grade == r->grade);
            CHECK(f.woe_abs == std::fabs(r->woe_value));
            CHECK(f.rendered_text.find("[observed: ") != std::string::npos);
            // The fact only fires when the value sits in the rule's bin.
            CHECK(bin_contains(r->bin, f.observed));
        }
    }
    CHECK(levels == kb.pattern_layer.size());  // one level fact per pattern

    // At most one target rule fires per feature: bins are disjoint.
    std::map<std::string, int> per_feature;
    for (const auto& f : facts) {
        if (f.kind != FactKind::RuleFired) continue;
        const auto* r = kb.find_rule(f.subject_id);
        if (r->scope == RuleScope::Target) ++per_feature[r->feature];
    }
    for (const auto& [feature, count] : per_feature) CHECK(count == 1);

    CHECK(instantiate_facts(kb, row) == facts);
}

TEST_CASE("fact instantiation names the missing essence key") {
    const auto kb = small_kb(StrategyKind::Random, 4, 200);
    EssenceVector row("u1", {"activity_period_days"}, {70.0});
    CHECK_THROWS_AS(instantiate_facts(kb, row), DataError);
}

TEST_CASE("fact json carries kind-specific payloads") {
    Fact rf;
    rf.user_id = "u1";
    rf.kind = FactKind::RuleFired;
    rf.subject_id = "rule_0001";
    rf.observed = 12.5;
    rf.grade = Grade::Strong;
    rf.woe_abs = 0.9;
    rf.rendered_text = "IF x <= 20 -> strong churn signal [observed: 12.5]";
    auto j = to_json(rf);
    CHECK(j.at("observed") == 12.5);
    CHECK(j.at("woe_abs") == 0.9);
    CHECK(j.at("kind") == "rule_fired");

    Fact pf;
    pf.user_id = "u1";
    pf.kind = FactKind::PatternLevel;
    pf.subject_id = "pat_001";
    pf.level = Level::High;
    pf.rendered_text = "tempo level is high [members: a, b]";
    j = to_json(pf);
    CHECK(j.at("level") == "high");
    CHECK(j.at("kind") == "pattern_level");
    CHECK_FALSE(j.contains("observed"));
}
