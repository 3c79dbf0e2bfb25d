// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <chrono>
#include <cstdlib>

#include "square/mllm.hpp"

namespace square {

namespace {

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // full request path
};

ParsedUrl split_endpoint(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw Error(ErrorCode::ConfigError, "endpoint_url '" + url + "' has no scheme");
    }
    const auto path_start = url.find('/', scheme_end + 3);
    ParsedUrl out;
    out.origin = url.substr(0, path_start);
    std::string path = path_start == std::string::npos ? std::string() : url.substr(path_start);
    while (!path.empty() && path.back() == '/') {
        path.pop_back();
    }
    static const std::string kSuffix = "/chat/completions";
    if (path.size() < kSuffix.size() || path.compare(path.size() - kSuffix.size(), kSuffix.size(), kSuffix) != 0) {
        path += kSuffix;
    }
    out.path = path;
    return out;
}

class HttpBackend : public ChatBackend {
public:
    explicit HttpBackend(const MllmConfig& cfg) : endpoint_(split_endpoint(cfg.endpoint_url)) {
        if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key) {
            api_key_ = key;
        }
    }

    std::string complete(const ChatRequest& request, const MllmConfig& cfg) override {
        httplib::Client client(endpoint_.origin);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.timeout - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());

        httplib::Headers headers;
        if (!api_key_.empty()) {
            headers.emplace("Authorization", "Bearer " + api_key_);
        }
        const std::string body = build_chat_payload(request, cfg).dump();
        const auto started = std::chrono::steady_clock::now();
        auto res = client.Post(endpoint_.path, headers, body, "application/json");
        if (!res) {
            const auto err = res.error();
            const auto elapsed = std::chrono::steady_clock::now() - started;
            const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                                   (err == httplib::Error::Read && elapsed >= cfg.timeout * 9 / 10);
            if (timed_out) {
                throw ApiFailure(ErrorCode::ApiTimeout, "request to " + endpoint_.origin + " timed out", true);
            }
            throw ApiFailure(ErrorCode::TransportError,
                             "request to " + endpoint_.origin + " failed: " + httplib::to_string(err), true);
        }
        if (res->status == 408 || res->status == 504) {
            throw ApiFailure(ErrorCode::ApiTimeout, "HTTP " + std::to_string(res->status), true, res->status);
        }
        if (res->status != 200) {
            const bool retryable = res->status == 429 || res->status >= 500;
            throw ApiFailure(ErrorCode::ApiError, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 300),
                             retryable, res->status);
        }
        return parse_chat_response(res->body);
    }

private:
    ParsedUrl endpoint_;
    std::string api_key_;
};

}  // namespace

std::shared_ptr<ChatBackend> make_http_backend(const MllmConfig& cfg) { return std::make_shared<HttpBackend>(cfg); }

}  // namespace square
