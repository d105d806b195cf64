#include "apcir/reformulate.hpp"

#include <httplib.h>

#include <openssl/evp.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "apcir/error.hpp"
#include "apcir/retrieval.hpp"
#include "apcir/session_io.hpp"

namespace apcir {

namespace {

using nlohmann::json;

constexpr std::string_view kDialogHeader = "\n[Dialog Context]\n";
constexpr std::string_view kCurrentHeader = "\n[Current Query]\n";

std::string one_line(std::string_view text) {
    std::string out(text);
    for (auto& c : out) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return out;
}

std::string join_nonempty(std::string_view a, std::string_view b) {
    if (a.empty()) return std::string(b);
    if (b.empty()) return std::string(a);
    std::string out(a);
    out += ' ';
    out += b;
    return out;
}

std::optional<std::string> optional_string(const json& doc, const char* field) {
    auto it = doc.find(field);
    if (it == doc.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) return std::nullopt;
    return it->get<std::string>();
}

// Strips "Qn: " from a context line; empty when the line is not a query line.
std::string_view query_line_text(std::string_view line) {
    if (line.size() < 2 || line[0] != 'Q') return {};
    std::size_t i = 1;
    while (i < line.size() && line[i] >= '0' && line[i] <= '9') ++i;
    if (i == 1 || line.substr(i, 2) != ": ") return {};
    return line.substr(i + 2);
}

}  // namespace

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

std::string concat_query_response(std::string_view query, std::string_view response) {
    return join_nonempty(truncate_tokens(query, kQueryTokenLimit), truncate_tokens(response, kResponseTokenLimit));
}

std::array<std::string, 3> ReformulationBundle::retrieval_texts() const {
    return {std::string(truncate_tokens(q_prime, kQueryTokenLimit)),
            concat_query_response(q_prime, r_prime), concat_query_response(q_user, r_user)};
}

std::string write_bundles(const std::vector<ReformulationBundle>& bundles) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& b : bundles) {
        nlohmann::ordered_json o;
        o["topic_id"] = b.topic_id;
        o["level"] = std::string(1, level_code(b.level));
        o["q_prime"] = b.q_prime;
        o["r_prime"] = b.r_prime;
        o["q_user"] = b.q_user;
        o["r_user"] = b.r_user;
        o["reasoning"] = b.raw_reasoning;
        o["degraded"] = b.degraded;
        arr.push_back(std::move(o));
    }
    return arr.dump(2) + "\n";
}

std::vector<ReformulationBundle> parse_bundles(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("bundles: malformed JSON: ") + e.what(), 0, e.byte);
    }
    if (!doc.is_array()) throw SchemaError("bundles: top level must be an array");
    std::vector<ReformulationBundle> out;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& o = doc[i];
        const std::string where = "bundles[" + std::to_string(i) + "]";
        auto str = [&](const char* field, bool required) -> std::string {
            auto it = o.find(field);
            if (it == o.end() || it->is_null()) {
                if (required) throw SchemaError(where + ": missing required field \"" + field + "\"");
                return {};
            }
            if (!it->is_string()) throw SchemaError(where + ": field \"" + field + "\" must be a string");
            return it->get<std::string>();
        };
        if (!o.is_object()) throw SchemaError(where + ": must be an object");
        ReformulationBundle b;
        b.topic_id = str("topic_id", true);
        auto level = parse_level(str("level", true));
        if (!level) throw SchemaError(where + ": field \"level\" must be one of a, b, c");
        b.level = *level;
        b.q_prime = str("q_prime", true);
        b.r_prime = str("r_prime", false);
        b.q_user = str("q_user", true);
        b.r_user = str("r_user", false);
        b.raw_reasoning = str("reasoning", false);
        b.degraded = o.value("degraded", false);
        if (b.q_prime.empty() || b.q_user.empty()) {
            throw SchemaError(where + ": query variants must be non-empty");
        }
        if (!seen.insert(b.topic_id).second) throw ConflictError(where + ": duplicate topic " + b.topic_id);
        out.push_back(std::move(b));
    }
    return out;
}

PromptTemplate PromptTemplate::standard() {
    PromptTemplate t;
    t.instruction =
        "You help a conversational search engine. Given the user's profile, the dialog so far and the "
        "current question, decide how much the profile matters for answering the current question, then "
        "rewrite the question so that it can be understood without the dialog and write a short passage "
        "that could plausibly answer it.";
    t.level_definitions =
        "(a) none: the question is answerable on its own; profile details would only distract.\n"
        "(b) partial: the question has a general answer, and profile details can sharpen it.\n"
        "(c) full: the answer depends on constraints that only the profile provides.";
    t.level_examples =
        "Profile mentions a gluten allergy. \"How tall is the Eiffel Tower?\" -> (a).\n"
        "Profile mentions a love of hiking. \"What should I see in Norway?\" -> (b).\n"
        "Profile mentions a gluten allergy. \"Which of these bakeries can I eat at?\" -> (c).";
    t.reformulation_examples =
        "Dialog: Q1: I am planning a trip to Kyoto. Current: \"What about food there?\"\n"
        "rewrite: \"What food should I try in Kyoto?\"\n"
        "personalized_rewrite (profile: vegetarian): \"What vegetarian food should I try in Kyoto?\"";
    t.cot_directive =
        "Think step by step: first list the profile sentences that bear on the current question, then "
        "choose the level, then write the rewrites. Put this reasoning in the \"reasoning\" field.";
    t.output_format =
        "Reply with one JSON object in a ```json fenced block with the fields:\n"
        "  \"level\": \"a\" | \"b\" | \"c\",\n"
        "  \"reasoning\": string,\n"
        "  \"rewrite\": stand-alone rewrite that ignores the profile,\n"
        "  \"response\": pseudo answer for \"rewrite\",\n"
        "  \"personalized_rewrite\": for level b or c, stand-alone rewrite that uses the profile; "
        "for level a, a second rewrite that ignores the profile,\n"
        "  \"personalized_response\": pseudo answer for \"personalized_rewrite\".";
    return t;
}

std::string render_prompt(const PromptTemplate& tmpl, const ConversationSession& session,
                          std::size_t turn_index) {
    if (turn_index >= session.turns.size()) {
        throw InvalidArgument("turn index " + std::to_string(turn_index) + " out of range for session " +
                              session.session_id + " with " + std::to_string(session.turns.size()) + " turns");
    }
    std::string p;
    p += "[Instruction]\n" + tmpl.instruction + "\n";
    p += "\n[Personalization Levels]\n" + tmpl.level_definitions + "\n";
    p += "\n[Level Examples]\n" + tmpl.level_examples + "\n";
    p += "\n[Reformulation Examples]\n" + tmpl.reformulation_examples + "\n";
    p += "\n[User Profile]\n";
    for (const auto& sentence : session.user_profile) p += "- " + sentence + "\n";
    p += kDialogHeader;
    for (std::size_t i = 0; i < turn_index; ++i) {
        const auto& t = session.turns[i];
        p += "Q" + std::to_string(t.turn_id) + ": " + one_line(t.utterance) + "\n";
        if (t.response) p += "A" + std::to_string(t.turn_id) + ": " + one_line(*t.response) + "\n";
    }
    const auto& current = session.turns[turn_index];
    p += kCurrentHeader;
    p += "Q" + std::to_string(current.turn_id) + ": " + one_line(current.utterance) + "\n";
    p += "\n[Reasoning]\n" + tmpl.cot_directive + "\n";
    p += "\n[Output Format]\n" + tmpl.output_format + "\n";
    return p;
}

std::optional<ModelOutput> parse_model_output(std::string_view text) {
    std::string_view body = text;
    if (auto fence = text.find("```"); fence != std::string_view::npos) {
        auto start = text.find('\n', fence);
        auto end = start == std::string_view::npos ? start : text.find("```", start);
        if (start != std::string_view::npos && end != std::string_view::npos) {
            body = text.substr(start + 1, end - start - 1);
        }
    }
    const auto open = body.find('{');
    const auto close = body.rfind('}');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open) return std::nullopt;
    body = body.substr(open, close - open + 1);

    json doc = json::parse(body.begin(), body.end(), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) return std::nullopt;

    ModelOutput out;
    auto level = optional_string(doc, "level");
    if (!level) return std::nullopt;
    auto parsed_level = parse_level(*level);
    if (!parsed_level) return std::nullopt;
    out.level = *parsed_level;

    auto rewrite = optional_string(doc, "rewrite");
    auto response = optional_string(doc, "response");
    if (!rewrite || rewrite->empty() || !response) return std::nullopt;
    out.rewrite = *rewrite;
    out.response = *response;
    out.reasoning = optional_string(doc, "reasoning").value_or("");
    out.personalized_rewrite = optional_string(doc, "personalized_rewrite");
    out.personalized_response = optional_string(doc, "personalized_response");
    if (out.level != PersonalizationLevel::kNone &&
        (!out.personalized_rewrite || out.personalized_rewrite->empty())) {
        return std::nullopt;
    }
    return out;
}

std::string EchoChatClient::echo_response(std::string_view prompt) {
    std::vector<std::string_view> utterances;
    const auto dialog = prompt.rfind(kDialogHeader);
    const auto current = prompt.rfind(kCurrentHeader);
    std::string_view current_text;
    if (dialog != std::string_view::npos && current != std::string_view::npos && dialog < current) {
        auto block = prompt.substr(dialog + kDialogHeader.size(), current - dialog - kDialogHeader.size());
        std::size_t pos = 0;
        while (pos < block.size()) {
            auto end = block.find('\n', pos);
            if (end == std::string_view::npos) end = block.size();
            if (auto q = query_line_text(block.substr(pos, end - pos)); !q.empty()) utterances.push_back(q);
            pos = end + 1;
        }
        auto tail = prompt.substr(current + kCurrentHeader.size());
        current_text = query_line_text(tail.substr(0, tail.find('\n')));
    }
    std::string rewrite;
    for (auto u : utterances) rewrite = join_nonempty(rewrite, u);
    rewrite = join_nonempty(rewrite, current_text);
    if (rewrite.empty()) rewrite = "query";
    const std::string alternative = current_text.empty() ? rewrite : std::string(current_text);

    nlohmann::ordered_json out;
    out["level"] = "a";
    out["reasoning"] = "echo: concatenated dialog utterances";
    out["rewrite"] = rewrite;
    out["response"] = "";
    out["personalized_rewrite"] = alternative;
    out["personalized_response"] = "";
    return "```json\n" + out.dump() + "\n```";
}

std::string EchoChatClient::complete(const std::string& prompt) {
    ++calls_;
    return echo_response(prompt);
}

MockChatClient::MockChatClient(std::map<std::string, std::string> fixtures, bool echo_fallback,
                               std::string model)
    : fixtures_(std::move(fixtures)), echo_fallback_(echo_fallback), model_(std::move(model)) {}

std::unique_ptr<MockChatClient> MockChatClient::from_fixture_json(std::string_view text, bool echo_fallback) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("fixtures: malformed JSON: ") + e.what(), 0, e.byte);
    }
    if (!doc.is_object() || !doc.contains("responses") || !doc["responses"].is_object()) {
        throw SchemaError("fixtures: missing required field \"responses\"");
    }
    std::map<std::string, std::string> fixtures;
    for (const auto& [hash, response] : doc["responses"].items()) {
        if (!response.is_string()) throw SchemaError("fixtures: response for " + hash + " must be a string");
        fixtures.emplace(hash, response.get<std::string>());
    }
    return std::make_unique<MockChatClient>(std::move(fixtures), echo_fallback,
                                            doc.value("model", std::string("mock")));
}

std::string MockChatClient::fixture_json(const std::map<std::string, std::string>& fixtures,
                                         std::string_view model) {
    nlohmann::ordered_json doc;
    doc["model"] = model;
    doc["responses"] = nlohmann::ordered_json::object();
    for (const auto& [hash, response] : fixtures) doc["responses"][hash] = response;
    return doc.dump(2) + "\n";
}

std::string MockChatClient::complete(const std::string& prompt) {
    ++calls_;
    const auto hash = sha256_hex(prompt);
    auto it = fixtures_.find(hash);
    if (it != fixtures_.end()) return it->second;
    if (echo_fallback_) return EchoChatClient::echo_response(prompt);
    throw BackendError("mock backend: no canned response for prompt hash " + hash);
}

HttpClientConfig HttpClientConfig::from_env(std::string model) {
    HttpClientConfig config;
    if (const char* url = std::getenv("APCIR_LLM_URL")) config.base_url = url;
    if (const char* key = std::getenv("APCIR_LLM_KEY")) config.api_key = key;
    config.model = std::move(model);
    return config;
}

HttpChatClient::HttpChatClient(HttpClientConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw InvalidArgument("http backend: APCIR_LLM_URL is not set");
}

std::string HttpChatClient::build_request_body(const HttpClientConfig& config, const std::string& prompt) {
    nlohmann::ordered_json body;
    body["model"] = config.model;
    body["messages"] = nlohmann::ordered_json::array({{{"role", "user"}, {"content", prompt}}});
    body["temperature"] = config.temperature;
    return body.dump();
}

std::string HttpChatClient::extract_content(std::string_view body) {
    json doc = json::parse(body.begin(), body.end(), nullptr, false);
    if (doc.is_discarded()) throw BackendError("chat backend: response is not JSON");
    if (doc.contains("error")) {
        throw BackendError("chat backend error: " + doc["error"].dump());
    }
    if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) {
        throw BackendError("chat backend: response has no choices");
    }
    const auto& choice = doc["choices"][0];
    if (!choice.contains("message") || !choice["message"].contains("content") ||
        !choice["message"]["content"].is_string()) {
        throw BackendError("chat backend: choice has no message content");
    }
    return choice["message"]["content"].get<std::string>();
}

std::string HttpChatClient::complete(const std::string& prompt) {
    // split "scheme://host[:port]/prefix" into the client origin and the path prefix
    const auto& url = config_.base_url;
    const auto scheme_end = url.find("://");
    const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    const std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
    std::string prefix = path_start == std::string::npos ? std::string() : url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

    httplib::Client client(origin);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    auto res = client.Post(prefix + "/chat/completions", headers, build_request_body(config_, prompt),
                           "application/json");
    if (!res) throw BackendError("chat backend: " + httplib::to_string(res.error()));
    if (res->status != 200) {
        throw BackendError("chat backend: HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    return extract_content(res->body);
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
}

std::string ResponseCache::key(std::string_view model_id, std::string_view prompt) {
    std::string material(model_id);
    material += '\n';
    material += prompt;
    return sha256_hex(material);
}

std::optional<std::string> ResponseCache::get(const std::string& key) const {
    std::lock_guard lock(mu_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
    if (dir_.empty()) return std::nullopt;
    const auto path = dir_ / (key + ".json");
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    json doc = json::parse(read_file(path), nullptr, false);
    if (doc.is_discarded() || !doc.contains("response") || !doc["response"].is_string()) return std::nullopt;
    auto response = doc["response"].get<std::string>();
    memory_.emplace(key, response);
    return response;
}

bool ResponseCache::put_if_absent(const std::string& key, std::string_view model_id, const std::string& response) {
    std::lock_guard lock(mu_);
    if (memory_.count(key)) return false;
    if (!dir_.empty()) {
        const auto path = dir_ / (key + ".json");
        nlohmann::ordered_json doc;
        doc["model"] = model_id;
        doc["response"] = response;
        std::random_device rd;
        const auto tmp = dir_ / (key + ".tmp" + std::to_string(rd()));
        {
            std::ofstream out(tmp, std::ios::binary);
            if (!out) throw Error("cache: cannot write " + tmp.string());
            out << doc.dump(2) << '\n';
        }
        // link() fails with EEXIST when another writer got there first
        const int rc = ::link(tmp.c_str(), path.c_str());
        const int err = errno;
        std::filesystem::remove(tmp);
        if (rc != 0) {
            if (err == EEXIST) {
                memory_.emplace(key, response);
                return false;
            }
            throw Error("cache: cannot insert " + path.string());
        }
    }
    memory_.emplace(key, response);
    return true;
}

Reformulator::Reformulator(ChatClient& client, PromptTemplate tmpl, ResponseCache* cache,
                           ReformulatorOptions options)
    : client_(client), template_(std::move(tmpl)), cache_(cache), options_(options) {}

namespace {

ReformulationBundle bundle_from(const ModelOutput& out, std::string topic_id) {
    ReformulationBundle b;
    b.topic_id = std::move(topic_id);
    b.level = out.level;
    b.q_prime = out.rewrite;
    b.r_prime = out.response;
    b.raw_reasoning = out.reasoning;
    if (out.level == PersonalizationLevel::kNone &&
        (!out.personalized_rewrite || out.personalized_rewrite->empty())) {
        b.q_user = out.rewrite;
        b.r_user = out.response;
    } else {
        b.q_user = *out.personalized_rewrite;
        b.r_user = out.personalized_response.value_or("");
    }
    return b;
}

}  // namespace

ReformulationBundle Reformulator::identify_and_reformulate(const ConversationSession& session,
                                                           std::size_t turn_index) {
    const auto prompt = render_prompt(template_, session, turn_index);
    const auto& turn = session.turns[turn_index];
    auto topic = make_topic_id(session.session_id, turn.turn_id);
    const auto key = ResponseCache::key(client_.model_id(), prompt);

    if (cache_ != nullptr) {
        if (auto hit = cache_->get(key)) {
            if (auto parsed = parse_model_output(*hit)) return bundle_from(*parsed, std::move(topic));
        }
    }
    for (int attempt = 0; attempt <= options_.retries; ++attempt) {
        auto response = client_.complete(prompt);
        ++upstream_calls_;
        if (auto parsed = parse_model_output(response)) {
            if (cache_ != nullptr) cache_->put_if_absent(key, client_.model_id(), response);
            return bundle_from(*parsed, std::move(topic));
        }
    }

    ReformulationBundle degraded;
    degraded.topic_id = std::move(topic);
    degraded.level = PersonalizationLevel::kNone;
    degraded.q_prime = turn.utterance;
    degraded.q_user = turn.utterance;
    degraded.raw_reasoning = "unparseable model output";
    degraded.degraded = true;
    return degraded;
}

std::vector<ReformulationBundle> Reformulator::reformulate_all(const std::vector<ConversationSession>& sessions) {
    std::vector<std::pair<std::size_t, std::size_t>> tasks;
    for (std::size_t s = 0; s < sessions.size(); ++s) {
        for (std::size_t t = 0; t < sessions[s].turns.size(); ++t) tasks.emplace_back(s, t);
    }
    std::vector<ReformulationBundle> out(tasks.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(options_.max_in_flight, tasks.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            out[i] = identify_and_reformulate(sessions[tasks[i].first], tasks[i].second);
        }
        return out;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto work = [&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
            try {
                out[i] = identify_and_reformulate(sessions[tasks[i].first], tasks[i].second);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next = tasks.size();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

}  // namespace apcir
