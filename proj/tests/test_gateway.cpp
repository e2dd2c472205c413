#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "txnkb/gateway.hpp"
#include "txnkb/gateway_http.hpp"

using namespace txnkb;

namespace {

// Header lines as the policy stand-in expects them in a rendered prompt.
const std::string kHeader =
    "Target: churn\n"
    "Labels: 0, 1 (positive: 1)\n";

struct EchoGateway : Gateway {
    std::string complete(const std::string& prompt) override { return "echo:" + prompt; }
};

struct CountingGateway : Gateway {
    std::atomic<int> current{0};
    std::atomic<int> peak{0};
    std::string complete(const std::string& prompt) override {
        const int now = ++current;
        int seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
        --current;
        return prompt;
    }
};

struct LocalServer {
    httplib::Server srv;
    int port = 0;
    std::thread th;

    void start() {
        port = srv.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        th = std::thread([this] { srv.listen_after_bind(); });
        srv.wait_until_ready();
    }
    ~LocalServer() {
        srv.stop();
        if (th.joinable()) th.join();
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

std::string completion_body(const std::string& content) {
    nlohmann::json j;
    j["choices"][0]["message"]["content"] = content;
    return j.dump();
}

GatewayConfig fast_config(const LocalServer& server) {
    GatewayConfig cfg;
    cfg.base_url = server.base_url();
    cfg.backoff_base_s = 0.01;
    cfg.timeout_s = 5.0;
    return cfg;
}

}  // namespace

TEST_CASE("scripted gateway replays in order and fails past the end") {
    ScriptedGateway gw({"one", "two"});
    CHECK(gw.complete("p1") == "one");
    CHECK(gw.complete("p2") == "two");
    CHECK(gw.calls() == 2);
    CHECK_THROWS_AS(gw.complete("p3"), TransportError);
    REQUIRE(gw.transcripts().size() == 3);
    CHECK(gw.transcripts()[0].request == "p1");
    CHECK(gw.transcripts()[1].response == "two");
}

TEST_CASE("batch completion preserves submission order") {
    EchoGateway gw;
    std::vector<std::string> prompts;
    for (int i = 0; i < 12; ++i) prompts.push_back("p" + std::to_string(i));
    const auto out = gw.complete_many(prompts, 3);
    REQUIRE(out.size() == prompts.size());
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == "echo:" + prompts[i]);
    CHECK(gw.complete_many({}, 0).empty());  // degenerate parallelism coerced
}

TEST_CASE("batch completion respects the concurrency bound") {
    CountingGateway gw;
    std::vector<std::string> prompts(10, "p");
    gw.complete_many(prompts, 2);
    CHECK(gw.peak.load() <= 2);
    CHECK(gw.peak.load() >= 1);
}

TEST_CASE("the final ANSWER line decides the prediction") {
    const std::vector<std::string> classes = {"0", "1"};
    auto r = parse_prediction("reasoning...\nANSWER: 1", classes, {});
    CHECK(r.label == "1");
    CHECK(r.flags.empty());

    r = parse_prediction("ANSWER: 0\nwait, reconsidering\nanswer:   1  ", classes, {});
    CHECK(r.label == "1");  // last answer line wins, case and spacing ignored

    r = parse_prediction("  Answer: 0\n", classes, {});
    CHECK(r.label == "0");
}

TEST_CASE("class matching is case-insensitive but returns canonical casing") {
    const std::vector<std::string> classes = {"Churn", "Stay"};
    const auto r = parse_prediction("ANSWER: churn", classes, {});
    CHECK(r.label == "Churn");
}

TEST_CASE("fallback finds the last standalone class token") {
    const std::vector<std::string> classes = {"0", "1"};
    auto r = parse_prediction("0 looks unlikely here; my call is 1", classes, {});
    CHECK(r.label == "1");
    CHECK(r.has_flag("parse-fallback"));

    // Word boundaries: "10" contains neither class.
    r = parse_prediction("the value is 10", classes, {});
    CHECK(r.label == kAbstainLabel);

    // An unknown label on the answer line falls through to the scan.
    r = parse_prediction("ANSWER: maybe\n1 fits best", classes, {});
    CHECK(r.label == "1");
    CHECK(r.has_flag("parse-fallback"));

    r = parse_prediction("no commitment at all", classes, {});
    CHECK(r.label == kAbstainLabel);
}

TEST_CASE("evidence chains only ever cite context rule ids") {
    const std::vector<std::string> classes = {"0", "1"};
    const std::vector<std::string> ctx_ids = {"rule_0001", "rule_0002"};
    const auto r = parse_prediction(
        "Because of (rule_0001) and the foreign (rule_9999).\nANSWER: 1", classes, ctx_ids);
    CHECK(r.evidence_chain == std::vector<std::string>{"rule_0001"});
}

TEST_CASE("policy gateway sums graded votes for the positive class") {
    PolicyGateway gw;
    const std::string prompt =
        kHeader +
        "- (rule_0001) IF activity_period_days <= 70 -> strong churn signal [observed: 42]\n";
    const auto reply = gw.complete(prompt);
    CHECK(reply.find("\nANSWER: 1") != std::string::npos);
    CHECK(reply.find("(rule_0001)") != std::string::npos);
    CHECK(gw.calls() == 1);

    // strong (+3) against moderate counter (-2): still positive.
    const std::string mixed =
        kHeader +
        "- (rule_0001) IF activity_period_days <= 70 -> strong churn signal [observed: 42]\n" +
        "- (rule_0002) IF txn_count > 30 -> moderate counter-churn signal [observed: 45]\n";
    CHECK(gw.complete(mixed).find("\nANSWER: 1") != std::string::npos);

    // strong (+3) against two moderate counters (-4): negative.
    const std::string outvoted =
        kHeader +
        "- (rule_0001) IF activity_period_days <= 70 -> strong churn signal [observed: 42]\n" +
        "- (rule_0002) IF txn_count > 30 -> moderate counter-churn signal [observed: 45]\n" +
        "- (rule_0003) IF mcc_entropy > 1.5 -> moderate counter-churn signal [observed: 2]\n";
    CHECK(gw.complete(outvoted).find("\nANSWER: 0") != std::string::npos);

    // A lone counter-signal flips to the other class.
    const std::string counter_only =
        kHeader + "- (rule_0002) IF txn_count > 30 -> moderate counter-churn signal\n";
    CHECK(gw.complete(counter_only).find("\nANSWER: 0") != std::string::npos);
}

TEST_CASE("policy gateway rationale cites the two heaviest rules") {
    PolicyGateway gw;
    const std::string prompt =
        kHeader +
        "- (rule_0005) IF a <= 1 -> weak churn signal\n" +
        "- (rule_0001) IF b <= 2 -> strong churn signal\n" +
        "- (rule_0002) IF c <= 3 -> moderate churn signal\n";
    const auto reply = gw.complete(prompt);
    CHECK(reply.find("(rule_0001), (rule_0002)") != std::string::npos);
    CHECK(reply.find("(rule_0005)") == std::string::npos);
}

TEST_CASE("ties and evidence-free prompts fall to the prompt-hashed coin") {
    PolicyGateway gw;
    const std::vector<std::string> labels = {"0", "1"};

    const std::string tied =
        kHeader +
        "- (rule_0001) IF a <= 1 -> moderate churn signal\n" +
        "- (rule_0002) IF b > 2 -> moderate counter-churn signal\n";
    const std::string expected_tie = labels[fnv1a(tied) % labels.size()];
    CHECK(gw.complete(tied).find("\nANSWER: " + expected_tie) != std::string::npos);
    CHECK(gw.complete(tied) == gw.complete(tied));  // deterministic

    const std::string bare = kHeader + "No evidence here.\n";
    const std::string expected_bare = labels[fnv1a(bare) % labels.size()];
    const auto reply = gw.complete(bare);
    CHECK(reply.find("\nANSWER: " + expected_bare) != std::string::npos);
    CHECK(reply.find("No graded evidence") != std::string::npos);
}

TEST_CASE("pattern-scoped and indented evidence lines are not class votes") {
    PolicyGateway gw;
    // A pattern signal name matches neither the target nor a label.
    const std::string pattern_only =
        kHeader + "- (rule_0101) IF f1 <= 10 -> strong activity rhythm signal\n";
    const std::string coin = std::vector<std::string>{"0", "1"}[fnv1a(pattern_only) % 2];
    CHECK(gw.complete(pattern_only).find("\nANSWER: " + coin) != std::string::npos);

    // Indented example evidence (shot bodies) must not vote either.
    const std::string indented =
        kHeader + "  - (rule_0001) IF a <= 1 -> strong churn signal\n";
    const std::string coin2 = std::vector<std::string>{"0", "1"}[fnv1a(indented) % 2];
    CHECK(gw.complete(indented).find("\nANSWER: " + coin2) != std::string::npos);
}

TEST_CASE("policy gateway casts explicit class-name votes in multiclass prompts") {
    PolicyGateway gw;
    const std::string header =
        "Target: segment\n"
        "Labels: a, b, c (positive: a)\n";
    const std::string prompt = header + "- (rule_0001) IF x <= 2 -> strong b signal\n";
    CHECK(gw.complete(prompt).find("\nANSWER: b") != std::string::npos);

    // Target-named signals vote for the positive class.
    const std::string prompt2 = header + "- (rule_0001) IF x <= 2 -> strong segment signal\n";
    CHECK(gw.complete(prompt2).find("\nANSWER: a") != std::string::npos);
}

TEST_CASE("a prompt without a label contract abstains") {
    PolicyGateway gw;
    CHECK(gw.complete("free-form text").find("ANSWER: ABSTAIN") != std::string::npos);
}

TEST_CASE("policy replies parse cleanly back into predictions") {
    PolicyGateway gw;
    const std::string prompt =
        kHeader + "- (rule_0001) IF a <= 1 -> strong churn signal [observed: 0.5]\n";
    const auto r = parse_prediction(gw.complete(prompt), {"0", "1"}, {"rule_0001"});
    CHECK(r.label == "1");
    CHECK(r.flags.empty());
    CHECK(r.evidence_chain == std::vector<std::string>{"rule_0001"});
}

TEST_CASE("http gateway retries server errors and then succeeds") {
    LocalServer server;
    std::atomic<int> hits{0};
    server.srv.Post("/v1/chat/completions",
                    [&](const httplib::Request&, httplib::Response& res) {
                        if (++hits == 1) {
                            res.status = 500;
                            res.set_content("boom", "text/plain");
                        } else {
                            res.set_content(completion_body("ok\nANSWER: 1"), "application/json");
                        }
                    });
    server.start();
    HttpGateway gw(fast_config(server));
    CHECK(gw.complete("hello") == "ok\nANSWER: 1");
    CHECK(hits.load() == 2);
}

TEST_CASE("http gateway sends the request the endpoint expects") {
    LocalServer server;
    nlohmann::json seen;
    server.srv.Post("/v1/chat/completions",
                    [&](const httplib::Request& req, httplib::Response& res) {
                        seen = nlohmann::json::parse(req.body);
                        res.set_content(completion_body("fine"), "application/json");
                    });
    server.start();
    auto cfg = fast_config(server);
    cfg.model = "test-model";
    cfg.temperature = 0.25;
    HttpGateway gw(cfg);
    CHECK(gw.complete("the prompt") == "fine");
    CHECK(seen.at("model") == "test-model");
    CHECK(seen.at("temperature") == 0.25);
    CHECK(seen.at("messages").at(0).at("role") == "user");
    CHECK(seen.at("messages").at(0).at("content") == "the prompt");
}

TEST_CASE("client errors are configuration mistakes, not retried") {
    LocalServer server;
    std::atomic<int> hits{0};
    server.srv.Post("/v1/chat/completions",
                    [&](const httplib::Request&, httplib::Response& res) {
                        ++hits;
                        res.status = 401;
                        res.set_content("{\"error\": \"bad key\"}", "application/json");
                    });
    server.start();
    HttpGateway gw(fast_config(server));
    CHECK_THROWS_AS(gw.complete("hello"), ConfigError);
    CHECK(hits.load() == 1);
}

TEST_CASE("the api key travels in the header and never in transcripts") {
    LocalServer server;
    std::string auth_seen;
    server.srv.Post("/v1/chat/completions",
                    [&](const httplib::Request& req, httplib::Response& res) {
                        auth_seen = req.get_header_value("Authorization");
                        res.set_content(completion_body("fine"), "application/json");
                    });
    server.start();
    ::setenv("TXNKB_TEST_KEY", "sk-super-secret", 1);
    auto cfg = fast_config(server);
    cfg.api_key_env = "TXNKB_TEST_KEY";
    HttpGateway gw(cfg);
    gw.complete("hello");
    ::unsetenv("TXNKB_TEST_KEY");
    CHECK(auth_seen == "Bearer sk-super-secret");
    REQUIRE_FALSE(gw.transcripts().empty());
    for (const auto& t : gw.transcripts()) {
        CHECK(t.request.find("sk-super-secret") == std::string::npos);
        CHECK(t.response.find("sk-super-secret") == std::string::npos);
        CHECK(t.request.find("Bearer ***") != std::string::npos);
    }
}

TEST_CASE("persistently malformed payloads exhaust retries") {
    LocalServer server;
    std::atomic<int> hits{0};
    server.srv.Post("/v1/chat/completions",
                    [&](const httplib::Request&, httplib::Response& res) {
                        ++hits;
                        res.set_content("not json at all", "application/json");
                    });
    server.start();
    auto cfg = fast_config(server);
    cfg.max_retries = 1;
    HttpGateway gw(cfg);
    CHECK_THROWS_WITH(gw.complete("hello"), Catch::Matchers::ContainsSubstring("malformed"));
    CHECK(hits.load() == 2);  // initial try plus one retry
}

TEST_CASE("transport failures surface after the retry budget") {
    GatewayConfig cfg;
    cfg.base_url = "http://127.0.0.1:9";  // discard port, nothing listens
    cfg.max_retries = 0;
    cfg.timeout_s = 1.0;
    cfg.backoff_base_s = 0.0;
    HttpGateway gw(cfg);
    CHECK_THROWS_AS(gw.complete("hello"), TransportError);
}

TEST_CASE("the base url must carry a scheme") {
    GatewayConfig cfg;
    cfg.base_url = "localhost:8080/v1";
    CHECK_THROWS_AS(HttpGateway(cfg), ConfigError);
}
