#include "apcir/types.hpp"

#include <algorithm>
#include <unordered_set>

#include "apcir/error.hpp"

namespace apcir {

ParseError::ParseError(const std::string& what, std::size_t line, std::size_t column)
    : Error(what), line_(line), column_(column) {}

StageError::StageError(std::string stage, const std::string& what)
    : Error(stage + ": " + what), stage_(std::move(stage)) {}

char level_code(PersonalizationLevel level) noexcept {
    switch (level) {
        case PersonalizationLevel::kNone: return 'a';
        case PersonalizationLevel::kPartial: return 'b';
        case PersonalizationLevel::kFull: return 'c';
    }
    return '?';
}

std::optional<PersonalizationLevel> parse_level(std::string_view text) noexcept {
    if (text.size() != 1) return std::nullopt;
    switch (text[0]) {
        case 'a': case 'A': return PersonalizationLevel::kNone;
        case 'b': case 'B': return PersonalizationLevel::kPartial;
        case 'c': case 'C': return PersonalizationLevel::kFull;
        default: return std::nullopt;
    }
}

std::string make_topic_id(std::string_view session_id, int turn_id) {
    std::string id(session_id);
    id += '_';
    id += std::to_string(turn_id);
    return id;
}

void ScoredList::sort_entries() {
    std::sort(entries.begin(), entries.end(), ranks_before);
}

bool ScoredList::is_canonical() const noexcept {
    for (std::size_t i = 1; i < entries.size(); ++i) {
        if (!ranks_before(entries[i - 1], entries[i])) return false;
    }
    std::unordered_set<std::string_view> seen;
    seen.reserve(entries.size());
    for (const auto& e : entries) {
        if (!seen.insert(e.passage_id).second) return false;
    }
    return true;
}

void ScoredList::validate() const {
    std::unordered_set<std::string_view> seen;
    seen.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!seen.insert(entries[i].passage_id).second) {
            throw SchemaError("topic " + topic_id + ": duplicate passage " + entries[i].passage_id);
        }
        if (i > 0 && !ranks_before(entries[i - 1], entries[i])) {
            throw SchemaError("topic " + topic_id + ": entries out of order at position " +
                              std::to_string(i + 1));
        }
    }
}

void Qrels::add(const std::string& topic_id, const std::string& passage_id, int grade) {
    if (grade < 0) {
        throw SchemaError("negative grade for (" + topic_id + ", " + passage_id + ")");
    }
    auto [it, inserted] = topics_[topic_id].emplace(passage_id, grade);
    if (!inserted) {
        throw ConflictError("duplicate judgment for (" + topic_id + ", " + passage_id + ")");
    }
    ++size_;
}

int Qrels::grade(const std::string& topic_id, const std::string& passage_id) const {
    const auto* judged = find(topic_id);
    if (judged == nullptr) return 0;
    auto it = judged->find(passage_id);
    return it == judged->end() ? 0 : it->second;
}

const Qrels::Judgments* Qrels::find(const std::string& topic_id) const {
    auto it = topics_.find(topic_id);
    return it == topics_.end() ? nullptr : &it->second;
}

std::vector<std::string> Qrels::topics() const {
    std::vector<std::string> out;
    out.reserve(topics_.size());
    for (const auto& [topic, _] : topics_) out.push_back(topic);
    return out;
}

void Corpus::add(std::string id, std::string contents) {
    if (id.empty()) throw SchemaError("passage id must be non-empty");
    auto [it, inserted] = by_id_.emplace(id, passages_.size());
    if (!inserted) throw ConflictError("duplicate passage id " + id);
    passages_.push_back(Passage{std::move(id), std::move(contents)});
}

const Passage* Corpus::find(const std::string& id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &passages_[it->second];
}

}  // namespace apcir
