#include "apcir/session_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <system_error>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "apcir/error.hpp"

namespace apcir {

namespace {

using nlohmann::json;

// Converts a byte offset into a 1-based line/column pair.
std::pair<std::size_t, std::size_t> locate(std::string_view text, std::size_t offset) {
    std::size_t line = 1;
    std::size_t column = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            column = 1;
        } else {
            ++column;
        }
    }
    return {line, column};
}

json parse_json_document(std::string_view text, std::string_view what) {
    try {
        return json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        // e.byte is the 1-based index of the offending character
        auto [line, column] = locate(text, e.byte == 0 ? 0 : e.byte - 1);
        throw ParseError(std::string(what) + ": malformed JSON at line " + std::to_string(line) +
                             ", column " + std::to_string(column),
                         line, column);
    }
}

const json& require(const json& object, const char* field, const std::string& where) {
    auto it = object.find(field);
    if (it == object.end()) {
        throw SchemaError(where + ": missing required field \"" + field + "\"");
    }
    return *it;
}

std::string require_string(const json& object, const char* field, const std::string& where) {
    const auto& value = require(object, field, where);
    if (!value.is_string()) {
        throw SchemaError(where + ": field \"" + field + "\" must be a string");
    }
    return value.get<std::string>();
}

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        ++line_no;
        fn(text.substr(pos, end - pos), line_no);
        pos = end + 1;
    }
}

bool parse_int(std::string_view token, long long& out) {
    auto* first = token.data();
    auto* last = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

bool parse_double(std::string_view token, double& out) {
    auto* first = token.data();
    auto* last = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

}  // namespace

std::vector<ConversationSession> parse_sessions(std::string_view text) {
    const json doc = parse_json_document(text, "sessions");
    if (!doc.is_object()) throw SchemaError("sessions: top level must be an object");
    const auto& sessions = require(doc, "sessions", "sessions");
    if (!sessions.is_array()) throw SchemaError("sessions: field \"sessions\" must be an array");

    std::vector<ConversationSession> out;
    out.reserve(sessions.size());
    std::unordered_set<std::string> seen_ids;
    for (std::size_t s = 0; s < sessions.size(); ++s) {
        const auto& item = sessions[s];
        const std::string where = "sessions[" + std::to_string(s) + "]";
        if (!item.is_object()) throw SchemaError(where + ": must be an object");

        ConversationSession session;
        session.session_id = require_string(item, "session_id", where);
        if (session.session_id.empty()) {
            throw SchemaError(where + ": field \"session_id\" must be non-empty");
        }
        if (!seen_ids.insert(session.session_id).second) {
            throw ConflictError(where + ": duplicate session_id " + session.session_id);
        }

        const auto& profile = require(item, "user_profile", where);
        if (!profile.is_array()) throw SchemaError(where + ": field \"user_profile\" must be an array");
        for (const auto& sentence : profile) {
            if (!sentence.is_string()) {
                throw SchemaError(where + ": field \"user_profile\" must hold strings");
            }
            session.user_profile.push_back(sentence.get<std::string>());
        }

        const auto& turns = require(item, "turns", where);
        if (!turns.is_array()) throw SchemaError(where + ": field \"turns\" must be an array");
        int previous_id = 0;
        for (std::size_t t = 0; t < turns.size(); ++t) {
            const auto& jt = turns[t];
            const std::string twhere = where + ".turns[" + std::to_string(t) + "]";
            if (!jt.is_object()) throw SchemaError(twhere + ": must be an object");
            Turn turn;
            const auto& id = require(jt, "turn_id", twhere);
            if (!id.is_number_integer()) {
                throw SchemaError(twhere + ": field \"turn_id\" must be an integer");
            }
            const auto raw_id = id.get<long long>();
            if (raw_id < 1 || raw_id > 1'000'000'000) {
                throw SchemaError(twhere + ": field \"turn_id\" must be a positive integer");
            }
            turn.turn_id = static_cast<int>(raw_id);
            if (turn.turn_id <= previous_id) {
                throw SchemaError(twhere + ": non-increasing turn id " + std::to_string(turn.turn_id));
            }
            previous_id = turn.turn_id;

            turn.utterance = require_string(jt, "utterance", twhere);
            if (turn.utterance.empty()) {
                throw SchemaError(twhere + ": field \"utterance\" must be non-empty");
            }
            if (auto it = jt.find("response"); it != jt.end() && !it->is_null()) {
                if (!it->is_string()) throw SchemaError(twhere + ": field \"response\" must be a string");
                turn.response = it->get<std::string>();
            }
            if (auto it = jt.find("gold_level"); it != jt.end() && !it->is_null()) {
                if (!it->is_string()) throw SchemaError(twhere + ": field \"gold_level\" must be a string");
                turn.gold_level = parse_level(it->get<std::string>());
                if (!turn.gold_level) {
                    throw SchemaError(twhere + ": field \"gold_level\" must be one of a, b, c");
                }
            }
            session.turns.push_back(std::move(turn));
        }
        out.push_back(std::move(session));
    }
    return out;
}

std::string write_sessions(const std::vector<ConversationSession>& sessions) {
    json arr = json::array();
    for (const auto& s : sessions) {
        json turns = json::array();
        for (const auto& t : s.turns) {
            json jt = {{"turn_id", t.turn_id}, {"utterance", t.utterance}};
            if (t.response) jt["response"] = *t.response;
            if (t.gold_level) jt["gold_level"] = std::string(1, level_code(*t.gold_level));
            turns.push_back(std::move(jt));
        }
        arr.push_back({{"session_id", s.session_id}, {"user_profile", s.user_profile}, {"turns", turns}});
    }
    return json{{"sessions", arr}}.dump(2) + "\n";
}

Corpus parse_corpus(std::string_view text) {
    Corpus corpus;
    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
        if (split_ws(line).empty()) return;
        json doc;
        try {
            doc = json::parse(line.begin(), line.end());
        } catch (const json::parse_error& e) {
            throw ParseError("corpus: malformed JSON at line " + std::to_string(line_no), line_no,
                             e.byte);
        }
        const std::string where = "corpus line " + std::to_string(line_no);
        if (!doc.is_object()) throw SchemaError(where + ": must be an object");
        auto id = require_string(doc, "id", where);
        auto contents = require_string(doc, "contents", where);
        try {
            corpus.add(std::move(id), std::move(contents));
        } catch (const ConflictError& e) {
            throw ConflictError(where + ": " + e.what());
        } catch (const SchemaError& e) {
            throw SchemaError(where + ": " + e.what());
        }
    });
    return corpus;
}

std::string write_corpus(const Corpus& corpus) {
    std::string out;
    for (const auto& p : corpus.passages()) {
        out += json{{"id", p.id}, {"contents", p.contents}}.dump();
        out += '\n';
    }
    return out;
}

Qrels parse_qrels(std::string_view text) {
    Qrels qrels;
    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
        auto cols = split_ws(line);
        if (cols.empty()) return;
        if (cols.size() != 4) {
            throw ParseError("qrels line " + std::to_string(line_no) + ": expected 4 columns, got " +
                                 std::to_string(cols.size()),
                             line_no);
        }
        long long grade = 0;
        if (!parse_int(cols[3], grade) || grade > 1'000'000 || grade < -1'000'000) {
            throw ParseError("qrels line " + std::to_string(line_no) + ": non-integer grade \"" +
                                 std::string(cols[3]) + "\"",
                             line_no, 0);
        }
        if (grade < 0) {
            throw ParseError("qrels line " + std::to_string(line_no) + ": negative grade", line_no);
        }
        try {
            qrels.add(std::string(cols[0]), std::string(cols[2]), static_cast<int>(grade));
        } catch (const ConflictError& e) {
            throw ConflictError("qrels line " + std::to_string(line_no) + ": " + e.what());
        }
    });
    return qrels;
}

std::string write_qrels(const Qrels& qrels) {
    std::string out;
    for (const auto& topic : qrels.topics()) {
        const auto* judged = qrels.find(topic);
        std::set<std::string> ids;
        for (const auto& [id, _] : *judged) ids.insert(id);
        for (const auto& id : ids) {
            out += topic + " 0 " + id + " " + std::to_string(judged->at(id)) + "\n";
        }
    }
    return out;
}

Run parse_run(std::string_view text) {
    Run run;
    std::map<std::string, std::unordered_set<std::string>> seen;
    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
        auto cols = split_ws(line);
        if (cols.empty()) return;
        const std::string where = "run line " + std::to_string(line_no);
        if (cols.size() != 6) {
            throw ParseError(where + ": expected 6 columns, got " + std::to_string(cols.size()), line_no);
        }
        long long rank = 0;
        if (!parse_int(cols[3], rank)) throw ParseError(where + ": non-integer rank", line_no);
        double score = 0.0;
        if (!parse_double(cols[4], score)) throw ParseError(where + ": non-numeric score", line_no);

        std::string topic(cols[0]);
        std::string passage(cols[2]);
        if (!seen[topic].insert(passage).second) {
            throw ConflictError(where + ": duplicate (" + topic + ", " + passage + ")");
        }
        auto& list = run[topic];
        if (list.entries.empty()) {
            list.topic_id = topic;
            list.run_tag = std::string(cols[5]);
        }
        list.entries.push_back(ScoredEntry{std::move(passage), score});
    });
    for (auto& [_, list] : run) list.sort_entries();
    return run;
}

std::string format_score(double score) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", score);
    return buf;
}

std::string write_run(const Run& run, std::string_view tag) {
    std::string out;
    for (const auto& [topic, list] : run) {
        std::size_t rank = 0;
        for (const auto& e : list.entries) {
            out += topic;
            out += " Q0 ";
            out += e.passage_id;
            out += ' ';
            out += std::to_string(++rank);
            out += ' ';
            out += format_score(e.score);
            out += ' ';
            out += tag;
            out += '\n';
        }
    }
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::random_device rd;
    auto tmp = path;
    tmp += ".tmp" + std::to_string(rd());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw Error("short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw Error("cannot rename into " + path.string() + ": " + ec.message());
    }
}

}  // namespace apcir
