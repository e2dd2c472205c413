#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "txnkb/common.hpp"
#include "txnkb/gateway.hpp"

namespace txnkb {

/// Chat-completions client for any endpoint speaking the common JSON dialect:
/// POST {base_url}/chat/completions with {model, messages, temperature},
/// answer under choices[0].message.content.
///
/// Transport failures and 5xx responses are retried with exponential backoff
/// (base doubles per attempt) up to max_retries; 4xx responses are treated as
/// configuration mistakes and never retried. The API key travels only in the
/// Authorization header; transcripts and error messages never contain it.
class HttpGateway : public Gateway {
public:
    explicit HttpGateway(GatewayConfig cfg) : cfg_(std::move(cfg)) {
        const auto scheme_end = cfg_.base_url.find("://");
        if (scheme_end == std::string::npos)
            throw ConfigError("base_url must start with http:// or https://");
        const auto path_start = cfg_.base_url.find('/', scheme_end + 3);
        if (path_start == std::string::npos) {
            host_ = cfg_.base_url;
            path_prefix_.clear();
        } else {
            host_ = cfg_.base_url.substr(0, path_start);
            path_prefix_ = cfg_.base_url.substr(path_start);
            while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
        }
        if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
    }

    std::string complete(const std::string& prompt) override {
        const nlohmann::json body{
            {"model", cfg_.model},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
            {"temperature", cfg_.temperature},
        };
        const std::string payload = body.dump();
        const std::string path = path_prefix_ + "/chat/completions";

        std::string last_error;
        const int attempts = 1 + std::max(0, cfg_.max_retries);
        for (int attempt = 0; attempt < attempts; ++attempt) {
            if (attempt > 0) {
                const double delay = cfg_.backoff_base_s * std::pow(2.0, attempt - 1);
                std::this_thread::sleep_for(std::chrono::duration<double>(delay));
            }

            httplib::Client client(host_);
            client.set_connection_timeout(std::chrono::duration<double>(cfg_.timeout_s));
            client.set_read_timeout(std::chrono::duration<double>(cfg_.timeout_s));
            httplib::Headers headers;
            if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

            auto res = client.Post(path, headers, payload, "application/json");
            if (!res) {
                last_error = "transport failure: " + httplib::to_string(res.error());
                log_entry(path, payload, last_error);
                continue;
            }
            if (res->status >= 500) {
                last_error = "server error " + std::to_string(res->status);
                log_entry(path, payload, last_error + ": " + res->body);
                continue;
            }
            if (res->status >= 400) {
                log_entry(path, payload, "client error " + std::to_string(res->status) + ": " + res->body);
                throw ConfigError("gateway rejected the request with status " +
                                  std::to_string(res->status) + " (check model, key and URL)");
            }

            try {
                const auto j = nlohmann::json::parse(res->body);
                auto content = j.at("choices").at(0).at("message").at("content").get<std::string>();
                log_entry(path, payload, res->body);
                return content;
            } catch (const nlohmann::json::exception& e) {
                last_error = std::string("malformed completion payload: ") + e.what();
                log_entry(path, payload, last_error);
                continue;
            }
        }
        throw TransportError("gateway unreachable after " + std::to_string(attempts) +
                             " attempts; last error: " + last_error);
    }

    /// Request/response log with the Authorization value redacted (the key is
    /// simply never written into entries).
    const std::vector<TranscriptEntry>& transcripts() const { return transcripts_; }

private:
    void log_entry(const std::string& path, const std::string& payload, const std::string& response) {
        std::lock_guard<std::mutex> lock(mu_);
        transcripts_.push_back({"POST " + host_ + path + " Authorization: Bearer *** " + payload,
                                response});
    }

    GatewayConfig cfg_;
    std::string host_;
    std::string path_prefix_;
    std::string api_key_;
    std::vector<TranscriptEntry> transcripts_;
    std::mutex mu_;
};

}  // namespace txnkb
