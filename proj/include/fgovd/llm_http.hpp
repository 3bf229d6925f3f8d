#pragma once

// HTTP completion backend (kept out of llm.hpp so only the CLI pays for the
// httplib include). Wire format: POST {"prompt": ...} -> {"text": ...}.

#include <httplib.h>

#include "fgovd/llm.hpp"

namespace fgovd::llm {

class HttpTextClient final : public TextCompletionClient {
public:
    explicit HttpTextClient(HttpClientConfig config) : config_(std::move(config)) {}

    std::string complete(const std::string& prompt) override {
        nlohmann::json body = {{"prompt", prompt}};
        std::string last_error = "no attempt made";
        for (int attempt = 0; attempt <= config_.retries; ++attempt) {
            httplib::Client cli(config_.host, config_.port);
            cli.set_connection_timeout(config_.timeout_seconds);
            cli.set_read_timeout(config_.timeout_seconds);
            auto res = cli.Post(config_.path, body.dump(), "application/json");
            if (!res) {
                last_error = "connection failed";
                continue;
            }
            if (res->status != 200) {
                last_error = "http status " + std::to_string(res->status);
                continue;
            }
            try {
                auto j = nlohmann::json::parse(res->body);
                return j.at("text").get<std::string>();
            } catch (const std::exception& e) {
                last_error = std::string("bad response body: ") + e.what();
            }
        }
        throw TransportError("llm backend unreachable: " + last_error);
    }

    std::string id() const override { return "http:" + config_.host; }

private:
    HttpClientConfig config_;
};

} // namespace fgovd::llm
