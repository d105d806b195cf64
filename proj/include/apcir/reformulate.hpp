#pragma once

/** \file reformulate.hpp
 *  \brief Personalization-level identification and query reformulation.
 *
 * One chat-completion call per turn returns the level, the reasoning, the
 * non-personalized rewrite with its pseudo response, and a third variant:
 * the personalized rewrite for levels b/c or an extra general rewrite for
 * level a. Responses are cached on disk keyed by sha256(model, prompt).
 */

#include <array>
#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "apcir/types.hpp"

namespace apcir {

inline constexpr std::size_t kQueryTokenLimit = 64;
inline constexpr std::size_t kResponseTokenLimit = 256;
inline constexpr int kDefaultParseRetries = 2;

std::string sha256_hex(std::string_view data);

struct ReformulationBundle {
    std::string topic_id;
    PersonalizationLevel level = PersonalizationLevel::kNone;
    std::string q_prime;
    std::string r_prime;
    std::string q_user;  ///< personalized rewrite, or the extra general rewrite for level a
    std::string r_user;
    std::string raw_reasoning;
    bool degraded = false;

    /** \brief The three retrieval texts: [q'], [q' r'], [q_user r_user].
     *
     * Rewrites are cut to 64 tokens and responses to 256 before joining with a
     * single space.
     */
    std::array<std::string, 3> retrieval_texts() const;

    friend bool operator==(const ReformulationBundle&, const ReformulationBundle&) = default;
};

/// Rewrite truncated to 64 tokens joined with response truncated to 256 tokens.
std::string concat_query_response(std::string_view query, std::string_view response);

std::string write_bundles(const std::vector<ReformulationBundle>& bundles);
std::vector<ReformulationBundle> parse_bundles(std::string_view text);

struct PromptTemplate {
    std::string instruction;
    std::string level_definitions;
    std::string level_examples;
    std::string reformulation_examples;
    std::string cot_directive;
    std::string output_format;

    static PromptTemplate standard();
};

/** \brief Render the prompt for turn \p turn_index (0-based) of \p session.
 *
 * The dialog context holds every earlier turn in order. Throws
 * InvalidArgument when the index is out of range.
 */
std::string render_prompt(const PromptTemplate& tmpl, const ConversationSession& session,
                          std::size_t turn_index);

/// Fields recovered from a model response.
struct ModelOutput {
    PersonalizationLevel level = PersonalizationLevel::kNone;
    std::string reasoning;
    std::string rewrite;
    std::string response;
    std::optional<std::string> personalized_rewrite;
    std::optional<std::string> personalized_response;
};

/// Parses the fenced JSON object of a response; nullopt when malformed.
std::optional<ModelOutput> parse_model_output(std::string_view text);

class ChatClient {
public:
    virtual ~ChatClient() = default;
    virtual std::string model_id() const = 0;
    /// Throws BackendError on transport failure.
    virtual std::string complete(const std::string& prompt) = 0;
};

/// Deterministic stand-in that rewrites by concatenating the dialog's utterances.
class EchoChatClient : public ChatClient {
public:
    std::string model_id() const override { return "echo"; }
    std::string complete(const std::string& prompt) override;
    std::size_t calls() const noexcept { return calls_; }

    /// The echo answer for a rendered prompt.
    static std::string echo_response(std::string_view prompt);

private:
    std::atomic<std::size_t> calls_{0};
};

/** \brief Canned responses keyed by sha256(prompt).
 *
 * Unknown prompts throw BackendError unless echo fallback is enabled.
 */
class MockChatClient : public ChatClient {
public:
    explicit MockChatClient(std::map<std::string, std::string> fixtures, bool echo_fallback = false,
                            std::string model = "mock");

    static std::unique_ptr<MockChatClient> from_fixture_json(std::string_view text, bool echo_fallback = false);
    static std::string fixture_json(const std::map<std::string, std::string>& fixtures,
                                    std::string_view model = "mock");

    std::string model_id() const override { return model_; }
    std::string complete(const std::string& prompt) override;
    std::size_t calls() const noexcept { return calls_; }

private:
    std::map<std::string, std::string> fixtures_;
    bool echo_fallback_;
    std::string model_;
    std::atomic<std::size_t> calls_{0};
};

struct HttpClientConfig {
    std::string base_url;  ///< e.g. https://api.openai.com/v1
    std::string api_key;
    std::string model = "gpt-4o";
    double temperature = 0.0;
    int timeout_seconds = 120;

    /// base_url from APCIR_LLM_URL and api_key from APCIR_LLM_KEY.
    static HttpClientConfig from_env(std::string model = "gpt-4o");
};

/// OpenAI-compatible POST {base_url}/chat/completions.
class HttpChatClient : public ChatClient {
public:
    explicit HttpChatClient(HttpClientConfig config);
    std::string model_id() const override { return config_.model; }
    std::string complete(const std::string& prompt) override;

    static std::string build_request_body(const HttpClientConfig& config, const std::string& prompt);
    /// choices[0].message.content; throws BackendError when absent.
    static std::string extract_content(std::string_view body);

private:
    HttpClientConfig config_;
};

/** \brief Content-addressed response store, one JSON file per response.
 *
 * Safe for concurrent readers and writers; inserts are insert-if-absent.
 * An empty directory path keeps the cache in memory only.
 */
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir = {});

    static std::string key(std::string_view model_id, std::string_view prompt);

    std::optional<std::string> get(const std::string& key) const;
    /// Returns false when the key was already present.
    bool put_if_absent(const std::string& key, std::string_view model_id, const std::string& response);

private:
    std::filesystem::path dir_;
    mutable std::mutex mu_;
    mutable std::unordered_map<std::string, std::string> memory_;
};

struct ReformulatorOptions {
    int retries = kDefaultParseRetries;
    std::size_t max_in_flight = 4;
};

class Reformulator {
public:
    Reformulator(ChatClient& client, PromptTemplate tmpl, ResponseCache* cache = nullptr,
                 ReformulatorOptions options = {});

    /** \brief Level plus three variants for one turn.
     *
     * A response that still fails to parse after the retries yields a
     * degraded level-a bundle built from the raw utterance.
     */
    ReformulationBundle identify_and_reformulate(const ConversationSession& session, std::size_t turn_index);

    /// All turns of all sessions, in input order. Turns run concurrently.
    std::vector<ReformulationBundle> reformulate_all(const std::vector<ConversationSession>& sessions);

    std::size_t upstream_calls() const noexcept { return upstream_calls_; }

private:
    ChatClient& client_;
    PromptTemplate template_;
    ResponseCache* cache_;
    ReformulatorOptions options_;
    std::atomic<std::size_t> upstream_calls_{0};
};

}  // namespace apcir
