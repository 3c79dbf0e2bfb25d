// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#include "square/mllm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <thread>

#include <openssl/evp.h>

#include "square/image.hpp"

namespace square {

using nlohmann::json;

// ---------------------------------------------------------------------------------------------
// Configuration

std::vector<std::string> MllmConfig::default_refusal_markers() {
    return {"I can't",          "I can’t",         "I cannot",       "I'm sorry",
            "I’m sorry",   "I am sorry",           "I'm unable",     "I am unable",
            "I'm not able to",  "can't assist with",    "cannot assist with", "content policy",
            "usage policies"};
}

MllmConfig MllmConfig::from_json(const json& j, const MllmConfig& base) {
    if (!j.is_object()) {
        throw Error(ErrorCode::ConfigError, "MLLM config must be a JSON object");
    }
    MllmConfig c = base;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "endpoint_url") c.endpoint_url = value.get<std::string>();
            else if (key == "model_name") c.model_name = value.get<std::string>();
            else if (key == "temperature") c.temperature = value.get<double>();
            else if (key == "timeout_ms") c.timeout = std::chrono::milliseconds(value.get<long long>());
            else if (key == "max_retries") c.max_retries = value.get<int>();
            else if (key == "max_inflight") c.max_inflight = value.get<std::size_t>();
            else if (key == "backoff_base_ms") c.backoff_base = std::chrono::milliseconds(value.get<long long>());
            else if (key == "backoff_max_ms") c.backoff_max = std::chrono::milliseconds(value.get<long long>());
            else if (key == "api_key_env") c.api_key_env = value.get<std::string>();
            else if (key == "max_tokens") {
                if (value.is_null()) c.max_tokens.reset();
                else c.max_tokens = value.get<int>();
            } else if (key == "refusal_markers") c.refusal_markers = value.get<std::vector<std::string>>();
            else throw Error(ErrorCode::ConfigError, "unknown MLLM config key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("MLLM config: ") + e.what());
    }
    c.validate();
    return c;
}

MllmConfig MllmConfig::from_json(const json& j) { return from_json(j, MllmConfig{}); }

nlohmann::ordered_json MllmConfig::to_json() const {
    nlohmann::ordered_json j;
    j["endpoint_url"] = endpoint_url;
    j["model_name"] = model_name;
    j["temperature"] = temperature;
    j["timeout_ms"] = timeout.count();
    j["max_retries"] = max_retries;
    j["max_inflight"] = max_inflight;
    j["backoff_base_ms"] = backoff_base.count();
    j["backoff_max_ms"] = backoff_max.count();
    j["api_key_env"] = api_key_env;
    j["max_tokens"] = max_tokens ? json(*max_tokens) : json(nullptr);
    j["refusal_markers"] = refusal_markers;
    return j;
}

void MllmConfig::validate() const {
    if (endpoint_url.empty()) throw Error(ErrorCode::ConfigError, "endpoint_url is empty");
    if (!(temperature >= 0.0)) throw Error(ErrorCode::ConfigError, "temperature must be >= 0");
    if (max_retries < 0) throw Error(ErrorCode::ConfigError, "max_retries must be >= 0");
    if (max_inflight == 0) throw Error(ErrorCode::ConfigError, "max_inflight must be positive");
    if (timeout.count() <= 0) throw Error(ErrorCode::ConfigError, "timeout must be positive");
}

// ---------------------------------------------------------------------------------------------
// Prompt templates

std::string_view to_string(PromptKind kind) noexcept {
    switch (kind) {
        case PromptKind::Caption: return "caption";
        case PromptKind::Rerank: return "rerank";
        case PromptKind::RerankCaptionIntent: return "rerank_caption_intent";
    }
    return "unknown";
}

PromptKind parse_prompt_kind(std::string_view name) {
    if (name == "caption") return PromptKind::Caption;
    if (name == "rerank") return PromptKind::Rerank;
    if (name == "rerank_caption_intent") return PromptKind::RerankCaptionIntent;
    throw Error(ErrorCode::ConfigError, "unknown prompt kind '" + std::string(name) + "'");
}

void PromptTemplate::validate() const {
    if (version.empty()) {
        throw Error(ErrorCode::ConfigError, "prompt template without a version");
    }
    if (instruction.empty()) {
        throw Error(ErrorCode::ConfigError, "prompt template '" + version + "' has no instruction");
    }
    if (kind == PromptKind::Caption && few_shot.size() != 3) {
        throw Error(ErrorCode::ConfigError, "caption template '" + version + "' must have exactly 3 examples, has " +
                                                std::to_string(few_shot.size()));
    }
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& vars) const {
    std::string out;
    for (std::size_t i = 0; i < few_shot.size(); ++i) {
        const auto& ex = few_shot[i];
        out += "Example " + std::to_string(i + 1) + ":\n";
        out += "Reference image: " + ex.reference + "\n";
        out += "Modification: " + ex.modification + "\n";
        out += "Answer: " + ex.output + "\n\n";
    }
    if (!rules.empty()) {
        out += "Rules:\n";
        for (const auto& r : rules) {
            out += "- " + r + "\n";
        }
        out += "\n";
    }
    out += instruction;
    for (const auto& [key, value] : vars) {
        const std::string needle = "{" + key + "}";
        for (auto pos = out.find(needle); pos != std::string::npos; pos = out.find(needle, pos + value.size())) {
            out.replace(pos, needle.size(), value);
        }
    }
    return out;
}

PromptTemplate PromptTemplate::from_json(const json& j) {
    PromptTemplate t;
    try {
        t.kind = parse_prompt_kind(j.at("kind").get<std::string>());
        t.version = j.at("version").get<std::string>();
        t.system_text = j.value("system_text", "");
        for (const auto& e : j.value("few_shot", json::array())) {
            t.few_shot.push_back({e.at("reference").get<std::string>(), e.at("modification").get<std::string>(),
                                  e.at("output").get<std::string>()});
        }
        t.rules = j.value("rules", std::vector<std::string>{});
        t.instruction = j.at("instruction").get<std::string>();
        t.reference_label = j.value("reference_label", t.reference_label);
        t.grid_label = j.value("grid_label", t.grid_label);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("prompt template: ") + e.what());
    }
    t.validate();
    return t;
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open prompt template " + path.string());
    }
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
}

PromptSet PromptSet::load(const std::filesystem::path& dir) {
    PromptSet set;
    set.caption = PromptTemplate::load(dir / "caption.json");
    set.rerank = PromptTemplate::load(dir / "rerank.json");
    set.rerank_caption_intent = PromptTemplate::load(dir / "rerank_caption_intent.json");
    if (set.caption.kind != PromptKind::Caption || set.rerank.kind != PromptKind::Rerank ||
        set.rerank_caption_intent.kind != PromptKind::RerankCaptionIntent) {
        throw Error(ErrorCode::ConfigError, "prompt files in " + dir.string() + " declare the wrong kinds");
    }
    return set;
}

const PromptTemplate& PromptSet::for_kind(PromptKind kind) const {
    switch (kind) {
        case PromptKind::Caption: return caption;
        case PromptKind::Rerank: return rerank;
        case PromptKind::RerankCaptionIntent: return rerank_caption_intent;
    }
    return caption;
}

// ---------------------------------------------------------------------------------------------
// Wire format

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

nlohmann::ordered_json build_chat_payload(const ChatRequest& request, const MllmConfig& cfg) {
    nlohmann::ordered_json messages = nlohmann::ordered_json::array();
    if (!request.system_text.empty()) {
        messages.push_back({{"role", "system"}, {"content", request.system_text}});
    }
    nlohmann::ordered_json content = nlohmann::ordered_json::array();
    for (const auto& part : request.parts) {
        if (part.type == ContentPart::Type::Text) {
            content.push_back({{"type", "text"}, {"text", part.text}});
        } else {
            const std::string url = "data:" + std::string(mime_type(sniff_format(part.image))) + ";base64," +
                                    base64_encode(part.image);
            content.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
        }
    }
    messages.push_back({{"role", "user"}, {"content", content}});

    nlohmann::ordered_json payload;
    payload["model"] = cfg.model_name;
    payload["messages"] = messages;
    payload["temperature"] = cfg.temperature;
    if (cfg.max_tokens) {
        payload["max_tokens"] = *cfg.max_tokens;
    }
    return payload;
}

std::string parse_chat_response(std::string_view body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error& e) {
        throw ApiFailure(ErrorCode::ParseError, std::string("response is not JSON: ") + e.what(), true);
    }
    if (j.contains("error")) {
        throw ApiFailure(ErrorCode::ApiError, "server error: " + j.at("error").dump(), true);
    }
    if (!j.contains("choices") || !j.at("choices").is_array() || j.at("choices").empty()) {
        throw ApiFailure(ErrorCode::ParseError, "response has no choices", true);
    }
    const auto& choice = j.at("choices").at(0);
    if (choice.value("finish_reason", "") == "content_filter") {
        throw ApiFailure(ErrorCode::ApiRefusal, "completion stopped by content filter", true);
    }
    const auto& message = choice.value("message", json::object());
    if (message.contains("refusal") && message.at("refusal").is_string() &&
        !message.at("refusal").get<std::string>().empty()) {
        throw ApiFailure(ErrorCode::ApiRefusal, "model refused: " + message.at("refusal").get<std::string>(), true);
    }
    if (!message.contains("content") || message.at("content").is_null()) {
        throw ApiFailure(ErrorCode::EmptyCompletion, "completion has no content", true);
    }
    const auto& content = message.at("content");
    if (content.is_string()) {
        return content.get<std::string>();
    }
    if (content.is_array()) {
        std::string text;
        for (const auto& part : content) {
            if (part.value("type", "") == "text") {
                text += part.value("text", "");
            }
        }
        return text;
    }
    throw ApiFailure(ErrorCode::ParseError, "unexpected content type in completion", true);
}

// ---------------------------------------------------------------------------------------------
// Mock backend

namespace {

std::string index_list(std::size_t n, bool reversed) {
    std::string out = "[";
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out += ", ";
        out += std::to_string(reversed ? n - 1 - i : i);
    }
    return out + "]";
}

std::size_t parse_count(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const auto n = std::stoll(value, &used);
        if (used != value.size() || n < 0) throw std::invalid_argument(value);
        return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
        throw Error(ErrorCode::ConfigError, "mock option " + key + " expects a non-negative integer, got '" + value + "'");
    }
}

}  // namespace

MockBackend::MockBackend(std::string_view spec) {
    if (spec.rfind("mock:", 0) != 0) {
        throw Error(ErrorCode::ConfigError, "mock endpoint must start with 'mock:'");
    }
    std::string_view rest = spec.substr(5);
    auto semi = rest.find(';');
    mode_ = std::string(rest.substr(0, semi));
    rest = semi == std::string_view::npos ? std::string_view{} : rest.substr(semi + 1);
    while (!rest.empty()) {
        const auto eq = rest.find('=');
        if (eq == std::string_view::npos) {
            throw Error(ErrorCode::ConfigError, "mock option without '=': " + std::string(rest));
        }
        const std::string key(rest.substr(0, eq));
        if (key == "text") {
            fixed_text_ = std::string(rest.substr(eq + 1));
            break;
        }
        semi = rest.find(';');
        const std::string value(rest.substr(eq + 1, semi == std::string_view::npos ? std::string_view::npos
                                                                                   : semi - eq - 1));
        rest = semi == std::string_view::npos ? std::string_view{} : rest.substr(semi + 1);
        if (key == "delay_ms") {
            delay_ = std::chrono::milliseconds(parse_count(key, value));
        } else if (key == "fail_first") {
            fail_first_ = parse_count(key, value);
        } else if (key == "fail_status") {
            fail_status_ = static_cast<int>(parse_count(key, value));
        } else if (key == "path") {
            std::ifstream in(value);
            if (!in) {
                throw Error(ErrorCode::IoError, "cannot open mock script " + value);
            }
            try {
                script_ = json::parse(in).get<std::map<std::string, std::string>>();
            } catch (const json::exception& e) {
                throw Error(ErrorCode::ParseError, "mock script " + value + ": " + e.what());
            }
        } else {
            throw Error(ErrorCode::ConfigError, "unknown mock option '" + key + "'");
        }
    }
    static const char* kModes[] = {"echo", "identity", "reverse", "fixed", "script", "refuse", "empty"};
    if (std::find(std::begin(kModes), std::end(kModes), mode_) == std::end(kModes)) {
        throw Error(ErrorCode::ConfigError, "unknown mock mode '" + mode_ + "'");
    }
}

std::string MockBackend::complete(const ChatRequest& request, const MllmConfig& /*cfg*/) {
    const std::size_t call_no = calls_.fetch_add(1);
    const std::size_t now_active = active_.fetch_add(1) + 1;
    std::size_t seen = max_concurrent_.load();
    while (now_active > seen && !max_concurrent_.compare_exchange_weak(seen, now_active)) {
    }
    struct Leave {
        std::atomic<std::size_t>& a;
        ~Leave() { a.fetch_sub(1); }
    } leave{active_};

    if (delay_.count() > 0) {
        std::this_thread::sleep_for(delay_);
    }
    if (call_no < fail_first_) {
        if (fail_status_ == 0) {
            throw ApiFailure(ErrorCode::TransportError, "mock: injected transport failure", true);
        }
        if (fail_status_ == 408) {
            throw ApiFailure(ErrorCode::ApiTimeout, "mock: injected timeout", true, 408);
        }
        const bool retryable = fail_status_ == 429 || fail_status_ >= 500;
        throw ApiFailure(ErrorCode::ApiError, "mock: injected HTTP " + std::to_string(fail_status_), retryable,
                         fail_status_);
    }

    const bool rerank = request.kind != PromptKind::Caption;
    if (mode_ == "echo") {
        return rerank ? index_list(request.window, false) : "TARGET: " + request.subject;
    }
    if (mode_ == "identity") return index_list(request.window, false);
    if (mode_ == "reverse") return index_list(request.window, true);
    if (mode_ == "fixed") return fixed_text_;
    if (mode_ == "refuse") return "I'm sorry, but I can't help with that request.";
    if (mode_ == "empty") return "";
    // script
    if (auto it = script_.find(request.tag); it != script_.end()) return it->second;
    if (auto it = script_.find("default"); it != script_.end()) return it->second;
    return "";
}

std::shared_ptr<ChatBackend> make_backend(const MllmConfig& cfg) {
    if (cfg.is_mock()) {
        return std::make_shared<MockBackend>(cfg.endpoint_url);
    }
    return make_http_backend(cfg);
}

// ---------------------------------------------------------------------------------------------
// Client

bool looks_like_refusal(std::string_view text, std::span<const std::string> markers) {
    auto lower = [](std::string_view s) {
        std::string out(s);
        std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
        return out;
    };
    const std::string hay = lower(text);
    return std::any_of(markers.begin(), markers.end(),
                       [&](const std::string& m) { return !m.empty() && hay.find(lower(m)) != std::string::npos; });
}

std::string clean_caption(std::string_view raw) {
    std::string collapsed;
    bool pending_space = false;
    for (char c : raw) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !collapsed.empty();
            continue;
        }
        if (pending_space) {
            collapsed.push_back(' ');
            pending_space = false;
        }
        collapsed.push_back(c);
    }
    // Strip matching layers of quotes (ASCII and typographic) and whitespace.
    static const std::string_view kQuotes[] = {"\"", "'", "`", "“", "”", "‘", "’"};
    bool changed = true;
    std::string_view view = collapsed;
    while (changed && !view.empty()) {
        changed = false;
        for (auto q : kQuotes) {
            if (view.size() >= q.size() && view.substr(0, q.size()) == q) {
                view.remove_prefix(q.size());
                changed = true;
            }
            if (view.size() >= q.size() && view.substr(view.size() - q.size()) == q) {
                view.remove_suffix(q.size());
                changed = true;
            }
        }
        while (!view.empty() && view.front() == ' ') {
            view.remove_prefix(1);
            changed = true;
        }
        while (!view.empty() && view.back() == ' ') {
            view.remove_suffix(1);
            changed = true;
        }
    }
    return std::string(view);
}

void MllmClient::InflightGate::acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return current_ < limit_; });
    ++current_;
}

void MllmClient::InflightGate::release() {
    {
        std::lock_guard lock(mu_);
        --current_;
    }
    cv_.notify_one();
}

MllmClient::MllmClient(MllmConfig cfg) : MllmClient(cfg, make_backend(cfg)) {}

MllmClient::MllmClient(MllmConfig cfg, std::shared_ptr<ChatBackend> backend)
    : cfg_(std::move(cfg)), backend_(std::move(backend)), gate_(std::make_unique<InflightGate>(cfg_.max_inflight)) {
    cfg_.validate();
}

std::string MllmClient::attempt(const ChatRequest& request) {
    gate_->acquire();
    struct Release {
        InflightGate& g;
        ~Release() { g.release(); }
    } release{*gate_};
    attempts_.fetch_add(1);
    return backend_->complete(request, cfg_);
}

std::chrono::milliseconds MllmClient::backoff_delay(int retry) {
    thread_local std::mt19937_64 rng{std::random_device{}()};
    const double base = static_cast<double>(cfg_.backoff_base.count());
    const double capped = std::min(static_cast<double>(cfg_.backoff_max.count()), base * std::ldexp(1.0, retry));
    std::uniform_real_distribution<double> jitter(0.5, 1.0);
    return std::chrono::milliseconds(static_cast<long long>(capped * jitter(rng)));
}

void MllmClient::give_up(const ApiFailure& failure, int retries) const {
    throw MllmError(failure.code(), failure.what(), retries);
}

void sleep_for_backoff(std::chrono::milliseconds delay) {
    if (delay.count() > 0) {
        std::this_thread::sleep_for(delay);
    }
}

MllmReply MllmClient::call(const ChatRequest& request) {
    return call(request, [](const std::string&) {});
}

MllmReply MllmClient::generate_target_caption(std::span<const std::uint8_t> ref_image, std::string_view mod_text,
                                              const PromptTemplate& tmpl, std::string tag) {
    if (tmpl.kind != PromptKind::Caption) {
        throw Error(ErrorCode::ConfigError, "generate_target_caption needs a caption template");
    }
    if (sniff_format(ref_image) == ImageFormat::Unknown) {
        throw Error(ErrorCode::ImageDecode, "reference image for '" + tag + "' is not PNG or JPEG");
    }
    ChatRequest req;
    req.tag = std::move(tag);
    req.kind = PromptKind::Caption;
    req.system_text = tmpl.system_text;
    req.subject = std::string(mod_text);
    const std::string body = tmpl.render({{"modification_text", std::string(mod_text)}});
    req.parts.push_back(ContentPart::make_text(body));
    req.parts.push_back(ContentPart::make_text(tmpl.reference_label));
    req.parts.push_back(ContentPart::make_image({ref_image.begin(), ref_image.end()}));

    auto reply = call(req, [&](std::string& text) {
        text = clean_caption(text);
        if (text.empty()) {
            throw ApiFailure(ErrorCode::EmptyCompletion, "empty caption", true);
        }
        if (looks_like_refusal(text, cfg_.refusal_markers)) {
            throw ApiFailure(ErrorCode::ApiRefusal, "caption request refused: " + text.substr(0, 120), true);
        }
    });
    return reply;
}

MllmReply MllmClient::rerank_call(std::span<const std::uint8_t> ref_image, std::string_view mod_text,
                                  std::span<const std::uint8_t> grid_png, std::size_t window,
                                  const PromptTemplate& tmpl, std::string tag, std::string_view caption) {
    if (tmpl.kind == PromptKind::Caption) {
        throw Error(ErrorCode::ConfigError, "rerank_call needs a rerank template");
    }
    ChatRequest req;
    req.tag = std::move(tag);
    req.kind = tmpl.kind;
    req.system_text = tmpl.system_text;
    req.subject = std::string(mod_text);
    req.window = window;
    const std::string body = tmpl.render({{"modification_text", std::string(mod_text)},
                                          {"caption", std::string(caption)},
                                          {"k", std::to_string(window)},
                                          {"max_index", std::to_string(window == 0 ? 0 : window - 1)}});
    req.parts.push_back(ContentPart::make_text(body));
    if (tmpl.kind == PromptKind::Rerank) {
        req.parts.push_back(ContentPart::make_text(tmpl.reference_label));
        req.parts.push_back(ContentPart::make_image({ref_image.begin(), ref_image.end()}));
    }
    req.parts.push_back(ContentPart::make_text(tmpl.grid_label));
    req.parts.push_back(ContentPart::make_image({grid_png.begin(), grid_png.end()}));

    return call(req, [&](std::string& text) {
        if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
            throw ApiFailure(ErrorCode::EmptyCompletion, "empty rerank completion", true);
        }
        // A completion that still carries indices is used even if it apologizes first.
        const bool has_digit = std::any_of(text.begin(), text.end(), [](unsigned char c) { return std::isdigit(c); });
        if (!has_digit && looks_like_refusal(text, cfg_.refusal_markers)) {
            throw ApiFailure(ErrorCode::ApiRefusal, "rerank request refused: " + text.substr(0, 120), true);
        }
    });
}

}  // namespace square
