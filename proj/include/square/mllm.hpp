// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "square/error.hpp"

namespace square {

struct MllmConfig {
    std::string endpoint_url = "https://api.openai.com/v1";  ///< "mock:<mode>[;k=v...]" selects the mock
    std::string model_name = "gpt-4o";
    double temperature = 1.0;
    std::chrono::milliseconds timeout{120000};
    int max_retries = 3;
    std::size_t max_inflight = 4;
    std::chrono::milliseconds backoff_base{500};
    std::chrono::milliseconds backoff_max{20000};
    std::string api_key_env = "OPENAI_API_KEY";
    std::optional<int> max_tokens;
    std::vector<std::string> refusal_markers = default_refusal_markers();

    static std::vector<std::string> default_refusal_markers();

    bool is_mock() const { return endpoint_url.rfind("mock:", 0) == 0; }

    /// Unknown keys are rejected; absent keys keep their defaults. Throws ConfigError.
    static MllmConfig from_json(const nlohmann::json& j, const MllmConfig& base);
    static MllmConfig from_json(const nlohmann::json& j);
    nlohmann::ordered_json to_json() const;
    void validate() const;
};

enum class PromptKind { Caption, Rerank, RerankCaptionIntent };

std::string_view to_string(PromptKind kind) noexcept;
PromptKind parse_prompt_kind(std::string_view name);

struct FewShotExample {
    std::string reference;     ///< description of the example's reference image
    std::string modification;
    std::string output;
};

/// Prompt text loaded from a versioned asset file. `instruction` may use the placeholders
/// {modification_text}, {caption}, {k} and {max_index}.
struct PromptTemplate {
    PromptKind kind = PromptKind::Caption;
    std::string version;
    std::string system_text;
    std::vector<FewShotExample> few_shot;
    std::vector<std::string> rules;
    std::string instruction;
    std::string reference_label = "Reference image:";
    std::string grid_label = "Candidate grid:";

    /// Caption templates carry exactly three exemplars. Throws ConfigError.
    void validate() const;

    /// Exemplars, rules and the instruction, with placeholders substituted in rules and instruction.
    std::string render(const std::map<std::string, std::string>& vars) const;

    static PromptTemplate from_json(const nlohmann::json& j);
    static PromptTemplate load(const std::filesystem::path& path);
};

/// Loads caption.json, rerank.json and rerank_caption_intent.json from `dir`.
struct PromptSet {
    PromptTemplate caption;
    PromptTemplate rerank;
    PromptTemplate rerank_caption_intent;

    static PromptSet load(const std::filesystem::path& dir);
    const PromptTemplate& for_kind(PromptKind kind) const;
};

struct ContentPart {
    enum class Type { Text, Image } type = Type::Text;
    std::string text;
    std::vector<std::uint8_t> image;  ///< encoded PNG or JPEG

    static ContentPart make_text(std::string t) { return {Type::Text, std::move(t), {}}; }
    static ContentPart make_image(std::vector<std::uint8_t> bytes) { return {Type::Image, {}, std::move(bytes)}; }
};

struct ChatRequest {
    std::string tag;  ///< query id; never sent over the wire
    PromptKind kind = PromptKind::Caption;
    std::string system_text;
    std::vector<ContentPart> parts;
    std::string subject;      ///< modification text (read by the mock's echo mode)
    std::size_t window = 0;   ///< rerank window size (read by the mock's permutation modes)
};

/// OpenAI-compatible /chat/completions body with images as base64 data URLs.
nlohmann::ordered_json build_chat_payload(const ChatRequest& request, const MllmConfig& cfg);

/// Extracts choices[0].message.content. Throws ApiRefusal (content_filter / refusal field),
/// EmptyCompletion, or ParseError.
std::string parse_chat_response(std::string_view body);

/// A single failed attempt. `retryable` tells the client whether another attempt may help.
class ApiFailure : public Error {
public:
    ApiFailure(ErrorCode code, const std::string& message, bool retryable, int http_status = 0)
        : Error(code, message), retryable_(retryable), http_status_(http_status) {}

    bool retryable() const noexcept { return retryable_; }
    int http_status() const noexcept { return http_status_; }

private:
    bool retryable_;
    int http_status_;
};

/// Final failure after the retry budget is spent.
class MllmError : public Error {
public:
    MllmError(ErrorCode code, const std::string& message, int retry_count)
        : Error(code, message + " (after " + std::to_string(retry_count) + " retries)"), retry_count_(retry_count) {}

    int retry_count() const noexcept { return retry_count_; }

private:
    int retry_count_;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    /// One attempt. Returns the raw completion text or throws ApiFailure.
    virtual std::string complete(const ChatRequest& request, const MllmConfig& cfg) = 0;
};

/// HTTP backend for OpenAI-compatible servers. The API key is read from cfg.api_key_env.
std::shared_ptr<ChatBackend> make_http_backend(const MllmConfig& cfg);

/// Offline backend selected by "mock:<mode>[;key=value...]".
///
/// Modes: echo (caption "TARGET: <modification>", rerank identity), identity, reverse,
/// fixed;text=<verbatim completion> (text must be the last option), script;path=<json object
/// tag -> completion, optional "default">, refuse, empty.
/// Options: delay_ms=N, fail_first=N, fail_status=S (HTTP-like status of the injected failures;
/// 0 means a transport failure, 408 a timeout).
class MockBackend : public ChatBackend {
public:
    explicit MockBackend(std::string_view spec);

    std::string complete(const ChatRequest& request, const MllmConfig& cfg) override;

    std::size_t calls() const noexcept { return calls_.load(); }
    /// Highest number of simultaneously running complete() calls observed.
    std::size_t max_concurrent() const noexcept { return max_concurrent_.load(); }

private:
    std::string mode_;
    std::string fixed_text_;
    std::map<std::string, std::string> script_;
    std::chrono::milliseconds delay_{0};
    std::size_t fail_first_ = 0;
    int fail_status_ = 429;

    std::atomic<std::size_t> calls_{0};
    std::atomic<std::size_t> active_{0};
    std::atomic<std::size_t> max_concurrent_{0};
};

std::shared_ptr<ChatBackend> make_backend(const MllmConfig& cfg);

/// Case-insensitive search for any marker.
bool looks_like_refusal(std::string_view text, std::span<const std::string> markers);

/// Collapses whitespace to single spaces and strips surrounding whitespace and quote marks.
std::string clean_caption(std::string_view raw);

struct MllmReply {
    std::string text;
    int retry_count = 0;
};

/// Shareable client: bounded in-flight requests, retries with exponential backoff and jitter.
class MllmClient {
public:
    explicit MllmClient(MllmConfig cfg);
    MllmClient(MllmConfig cfg, std::shared_ptr<ChatBackend> backend);

    const MllmConfig& config() const noexcept { return cfg_; }
    ChatBackend& backend() noexcept { return *backend_; }

    /// Retrying call. `validate` may throw ApiFailure to reject a completion (counted as an attempt).
    /// Throws MllmError once 1 + max_retries attempts fail, or immediately on a non-retryable failure.
    template <typename Validate>
    MllmReply call(const ChatRequest& request, Validate&& validate);
    MllmReply call(const ChatRequest& request);

    /// Target-image caption from the reference image and modification text.
    MllmReply generate_target_caption(std::span<const std::uint8_t> ref_image, std::string_view mod_text,
                                      const PromptTemplate& tmpl, std::string tag = {});

    /// Raw rerank completion. The caption-intent template omits the reference image and describes
    /// the intent with `caption` instead.
    MllmReply rerank_call(std::span<const std::uint8_t> ref_image, std::string_view mod_text,
                          std::span<const std::uint8_t> grid_png, std::size_t window, const PromptTemplate& tmpl,
                          std::string tag = {}, std::string_view caption = {});

    /// Attempts issued through this client (including retries).
    std::size_t attempts() const noexcept { return attempts_.load(); }

private:
    class InflightGate {
    public:
        explicit InflightGate(std::size_t limit) : limit_(limit) {}
        void acquire();
        void release();

    private:
        std::mutex mu_;
        std::condition_variable cv_;
        std::size_t limit_;
        std::size_t current_ = 0;
    };

    std::string attempt(const ChatRequest& request);
    std::chrono::milliseconds backoff_delay(int retry);
    [[noreturn]] void give_up(const ApiFailure& failure, int retries) const;

    MllmConfig cfg_;
    std::shared_ptr<ChatBackend> backend_;
    std::unique_ptr<InflightGate> gate_;
    std::atomic<std::size_t> attempts_{0};
};

void sleep_for_backoff(std::chrono::milliseconds delay);

template <typename Validate>
MllmReply MllmClient::call(const ChatRequest& request, Validate&& validate) {
    for (int retry = 0;; ++retry) {
        try {
            std::string text = attempt(request);
            validate(text);
            return {std::move(text), retry};
        } catch (const ApiFailure& failure) {
            if (!failure.retryable() || retry >= cfg_.max_retries) {
                give_up(failure, retry);
            }
            sleep_for_backoff(backoff_delay(retry));
        }
    }
}

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view data);

}  // namespace square
