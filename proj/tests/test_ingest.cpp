#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "txnkb/ingest.hpp"

using namespace txnkb;

namespace {

const char* kRosbankCsv =
    "cl_id,event_time,amount,MCC,trx_category,currency,target_flag\n"
    "c1,0 10:00:00,25.50,5411,POS,RUB,1\n"
    "c1,2 09:30:00,100.00,6011,WD_ATM,RUB,\n"
    "c2,1,12.00,5812,POS,RUB,0\n"
    "c2,0 00:00:00,7.25,,POS,RUB,0\n";

}  // namespace

TEST_CASE("rosbank adapter parses, rebases and signs canonical events") {
    std::istringstream in(kRosbankCsv);
    const auto res = parse_transactions(in, rosbank_adapter());
    REQUIRE(res.row_errors.empty());
    REQUIRE(res.rows_total == 4);
    REQUIRE(res.histories.size() == 2);

    const auto& c1 = res.histories[0];
    CHECK(c1.user_id == "c1");
    REQUIRE(c1.transactions.size() == 2);
    // First event rebases to 0; the second sits 1 day 23.5 hours later.
    CHECK(c1.transactions[0].ts == 0);
    CHECK(c1.transactions[1].ts == 2 * 86400 + 9 * 3600 + 30 * 60 - (10 * 3600));
    // Rosbank amounts are outflow-positive; canonical outflows are negative.
    CHECK(c1.transactions[0].amount == -25.50);
    CHECK(c1.transactions[0].mcc_code == 5411);
    CHECK(c1.transactions[0].txn_type == "POS");
    CHECK(c1.label == "1");

    const auto& c2 = res.histories[1];
    REQUIRE(c2.transactions.size() == 2);
    // "0 00:00:00" precedes day 1, so the bare-number row is second.
    CHECK(c2.transactions[0].ts == 0);
    CHECK_FALSE(c2.transactions[0].mcc_code.has_value());
    CHECK(c2.transactions[1].ts == 86400);
    CHECK(c2.label == "0");
    CHECK((c2.split == Split::Train || c2.split == Split::Test));
}

TEST_CASE("split assignment is a pure function of the user id") {
    const auto s1 = assign_split("c2", 0.3);
    for (int i = 0; i < 5; ++i) CHECK(assign_split("c2", 0.3) == s1);
    CHECK(assign_split("anyone", 0.0) == Split::Train);
    CHECK(assign_split("anyone", 1.0) == Split::Test);
}

TEST_CASE("malformed rows are collected with 1-based line numbers") {
    std::istringstream in(
        "cl_id,event_time,amount,MCC,trx_category,currency,target_flag\n"
        "c1,0,10.0,5411,POS,RUB,1\n"
        "c1,not-a-time,XX,5411,POS,RUB,1\n"
        "c1,3,20.0,5411,POS,RUB,1\n");
    const auto res = parse_transactions(in, rosbank_adapter());
    REQUIRE(res.row_errors.size() == 1);
    CHECK(res.row_errors[0].row == 3);
    CHECK(res.histories.size() == 1);
    CHECK(res.histories[0].transactions.size() == 2);
}

TEST_CASE("a mostly-broken file refuses to parse") {
    std::istringstream in(
        "cl_id,event_time,amount,MCC,trx_category,currency,target_flag\n"
        "c1,xx,xx,5411,POS,RUB,1\n"
        "c1,yy,yy,5411,POS,RUB,1\n"
        "c1,0,10.0,5411,POS,RUB,1\n");
    CHECK_THROWS_AS(parse_transactions(in, rosbank_adapter()), DataError);
}

TEST_CASE("structural problems are schema errors") {
    std::istringstream empty("");
    CHECK_THROWS_AS(parse_transactions(empty, rosbank_adapter()), SchemaError);
    std::istringstream wrong_header("id,when,how_much\nc1,0,1\n");
    CHECK_THROWS_AS(parse_transactions(wrong_header, rosbank_adapter()), SchemaError);
}

TEST_CASE("quoted fields and escaped quotes survive the splitter") {
    const auto fields = detail::split_delimited("a,\"b,c\",\"say \"\"hi\"\"\",d", ',');
    REQUIRE(fields.size() == 4);
    CHECK(fields[1] == "b,c");
    CHECK(fields[2] == "say \"hi\"");
}

TEST_CASE("adapter validation rejects double-mapped columns") {
    auto a = rosbank_adapter();
    a.mcc_col = a.amount_col;
    CHECK_THROWS_AS(validate_adapter(a), ConfigError);
    CHECK_THROWS_AS(builtin_adapter("nope"), ConfigError);
}

TEST_CASE("history json round-trips exactly") {
    std::istringstream in(kRosbankCsv);
    const auto res = parse_transactions(in, rosbank_adapter());
    for (const auto& h : res.histories) {
        const auto j = to_json(h);
        CHECK(history_from_json(j) == h);
    }
}

TEST_CASE("history serialization is canonical and reload-stable") {
    std::istringstream in(kRosbankCsv);
    auto histories = parse_transactions(in, rosbank_adapter()).histories;
    std::ostringstream s1, s2;
    save_histories(s1, histories);
    save_histories(s2, histories);
    CHECK(s1.str() == s2.str());
    std::istringstream back(s1.str());
    CHECK(load_histories(back) == histories);
}

TEST_CASE("loading a corrupt history line reports its line number") {
    std::istringstream in("{\"user_id\": \"u1\"\nnot json\n");
    try {
        load_histories(in);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
}

TEST_CASE("validate_history enforces the canonical event contract") {
    UserHistory h;
    h.user_id = "u";
    h.split = Split::Train;
    h.label = "1";
    Transaction t;
    t.user_id = "u";
    t.ts = 0;
    h.transactions.push_back(t);
    CHECK_NOTHROW(validate_history(h));

    auto bad = h;
    bad.transactions[0].ts = 5;  // first event must be rebased to 0
    CHECK_THROWS_AS(validate_history(bad), DataError);

    bad = h;
    bad.label.reset();  // labeled split without a label
    CHECK_THROWS_AS(validate_history(bad), DataError);

    bad = h;
    bad.split = Split::Unlabeled;  // label on an unlabeled split
    CHECK_THROWS_AS(validate_history(bad), DataError);
}

TEST_CASE("stratified subsample keeps class proportions and determinism") {
    std::vector<UserHistory> hs;
    for (int i = 0; i < 100; ++i) {
        UserHistory h;
        h.user_id = "u" + std::to_string(i);
        h.split = Split::Train;
        h.label = (i % 4 == 0) ? "1" : "0";  // 25 positives, 75 negatives
        Transaction t;
        t.user_id = h.user_id;
        h.transactions.push_back(t);
        hs.push_back(std::move(h));
    }
    const auto a = subsample_stratified(hs, 20, 42);
    REQUIRE(a.size() == 20);
    std::size_t pos = 0;
    for (const auto& h : a) pos += *h.label == "1";
    CHECK(pos == 5);
    CHECK(subsample_stratified(hs, 20, 42) == a);
    CHECK(subsample_stratified(hs, 20, 43) != a);
    // Requesting everything returns all labeled users unchanged.
    CHECK(subsample_stratified(hs, 1000, 42).size() == 100);
}
