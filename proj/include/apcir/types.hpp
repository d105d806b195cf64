#pragma once

/** \file types.hpp
 *  \brief Core data model shared by every stage of the pipeline.
 */

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace apcir {

/** \brief How much the user profile should influence retrieval for one turn.
 *
 * Serialized as "a", "b", "c".
 */
enum class PersonalizationLevel {
    kNone = 0,     ///< a: self-contained query, no personalization
    kPartial = 1,  ///< b: profile is an extra perk
    kFull = 2,     ///< c: profile is indispensable
};

inline constexpr std::array<PersonalizationLevel, 3> kAllLevels = {
    PersonalizationLevel::kNone, PersonalizationLevel::kPartial, PersonalizationLevel::kFull};

char level_code(PersonalizationLevel level) noexcept;
std::optional<PersonalizationLevel> parse_level(std::string_view text) noexcept;

struct Turn {
    int turn_id = 0;
    std::string utterance;
    std::optional<std::string> response;
    std::optional<PersonalizationLevel> gold_level;
};

struct ConversationSession {
    std::string session_id;
    std::vector<std::string> user_profile;
    std::vector<Turn> turns;
};

/// Topic id used for per-turn judgments: "<session_id>_<turn_id>".
std::string make_topic_id(std::string_view session_id, int turn_id);

struct ScoredEntry {
    std::string passage_id;
    double score = 0.0;

    friend bool operator==(const ScoredEntry&, const ScoredEntry&) = default;
};

/// Canonical ranking order: score descending, then passage id ascending.
inline bool ranks_before(const ScoredEntry& lhs, const ScoredEntry& rhs) noexcept {
    if (lhs.score != rhs.score) return lhs.score > rhs.score;
    return lhs.passage_id < rhs.passage_id;
}

/** \brief One ranking list for one query variant of one topic.
 *
 * Entries are kept in canonical order and passage ids are unique; every
 * producer in the library calls sort_entries() or validate() before handing
 * a list out.
 */
struct ScoredList {
    std::string topic_id;
    std::string run_tag;
    std::vector<ScoredEntry> entries;

    void sort_entries();
    /// Throws SchemaError when ordering or uniqueness is violated.
    void validate() const;
    bool is_canonical() const noexcept;

    friend bool operator==(const ScoredList&, const ScoredList&) = default;
};

/// A run: topic id -> ranking list, iterated in ascending topic order.
using Run = std::map<std::string, ScoredList>;

/// Graded relevance judgments keyed by (topic, passage).
class Qrels {
public:
    using Judgments = std::unordered_map<std::string, int>;

    /// Throws SchemaError on a negative grade and ConflictError on a duplicate key.
    void add(const std::string& topic_id, const std::string& passage_id, int grade);

    /// Grade of a passage; unjudged passages have grade 0.
    int grade(const std::string& topic_id, const std::string& passage_id) const;
    /// Judgments for a topic, or nullptr when the topic is absent.
    const Judgments* find(const std::string& topic_id) const;

    bool contains_topic(const std::string& topic_id) const { return topics_.count(topic_id) != 0; }
    std::vector<std::string> topics() const;
    std::size_t size() const noexcept { return size_; }
    bool empty() const noexcept { return size_ == 0; }

private:
    std::map<std::string, Judgments> topics_;
    std::size_t size_ = 0;
};

struct Passage {
    std::string id;
    std::string contents;
};

/// Passage collection in insertion order with id lookup.
class Corpus {
public:
    /// Throws SchemaError on an empty id and ConflictError on a duplicate.
    void add(std::string id, std::string contents);

    const std::vector<Passage>& passages() const noexcept { return passages_; }
    const Passage* find(const std::string& id) const;
    std::size_t size() const noexcept { return passages_.size(); }
    bool empty() const noexcept { return passages_.empty(); }

private:
    std::vector<Passage> passages_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

}  // namespace apcir
