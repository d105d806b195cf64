#pragma once

/** \file session_io.hpp
 *  \brief Readers and writers for sessions, corpora, qrels and TREC run files.
 *
 * Formats:
 *  - sessions: {"sessions":[{"session_id", "user_profile":[...], "turns":[...]}]}
 *  - corpus:   JSON lines {"id": str, "contents": str}
 *  - qrels:    "topic 0 passage grade" per line
 *  - run:      "topic Q0 passage rank score tag" per line
 *
 * All functions are pure and safe to call concurrently.
 */

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "apcir/types.hpp"

namespace apcir {

std::vector<ConversationSession> parse_sessions(std::string_view text);
std::string write_sessions(const std::vector<ConversationSession>& sessions);

Corpus parse_corpus(std::string_view text);
std::string write_corpus(const Corpus& corpus);

Qrels parse_qrels(std::string_view text);
std::string write_qrels(const Qrels& qrels);

/// Entries are re-sorted into canonical order; the rank column is ignored.
Run parse_run(std::string_view text);

/** \brief Serialize a run with a 1-based rank column and 6-decimal scores.
 *
 * Topics are written in ascending order; every line carries \p tag.
 */
std::string write_run(const Run& run, std::string_view tag);

/// Fixed 6-decimal score formatting used by write_run.
std::string format_score(double score);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace apcir
