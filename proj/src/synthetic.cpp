#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "apcir/error.hpp"
#include "apcir/pipeline.hpp"
#include "apcir/session_io.hpp"

namespace apcir {

namespace {

constexpr std::array<std::string_view, 20> kOnsets = {"b", "d", "f", "g", "h", "j", "k", "l", "m", "n",
                                                      "p", "r", "s", "t", "v", "w", "z", "ch", "sh", "th"};
constexpr std::array<std::string_view, 5> kVowels = {"a", "e", "i", "o", "u"};

// Unique pronounceable pseudo-word for every index below 10^6.
std::string pseudo_word(std::size_t index) {
    std::string w;
    for (int s = 0; s < 3; ++s) {
        const std::size_t syllable = index % 100;
        index /= 100;
        w += kOnsets[syllable % 20];
        w += kVowels[syllable / 20];
    }
    return w;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
    std::size_t between(std::size_t lo, std::size_t hi) { return lo + below(hi - lo + 1); }
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 engine_;
};

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

struct TurnPlan {
    PersonalizationLevel level;
    std::vector<std::string> topic;     // shared by rewrite and relevant passages (a, b)
    std::vector<std::string> drift;     // level-a third variant, off-topic
    std::vector<std::string> generic;   // level-c rewrite, matches only distractors
    std::vector<std::string> profile;   // profile aspect terms (b, c)
    std::vector<std::string> answer;    // pseudo-response terms found in relevant passages
};

}  // namespace

SyntheticCollection generate_synthetic(const SyntheticConfig& config) {
    constexpr std::size_t kRelevant = 3;
    constexpr std::size_t kStrongDistractors = 4;
    constexpr std::size_t kWeakDistractors = 3;
    constexpr std::size_t kPerTurn = kRelevant + kStrongDistractors + 2 * kWeakDistractors;
    constexpr std::size_t kTermsPerGroup = 3;
    constexpr std::size_t kBackgroundVocab = 3000;

    if (config.sessions == 0 || config.turns_per_session == 0) {
        throw InvalidArgument("synthetic collection needs at least one session and one turn");
    }
    const std::size_t n_turns = config.sessions * config.turns_per_session;
    if (config.passages < n_turns * kPerTurn) {
        throw InvalidArgument("synthetic collection needs at least " + std::to_string(n_turns * kPerTurn) +
                              " passages for " + std::to_string(n_turns) + " turns");
    }

    Rng rng(config.seed);
    SyntheticCollection out;
    out.tag = config.tag.empty() ? "synth-" + std::to_string(config.seed) : config.tag;

    // word indices: shuffled so different seeds draw different vocabularies
    std::vector<std::size_t> word_ids(kBackgroundVocab + n_turns * 6 * kTermsPerGroup + config.sessions * 8);
    std::iota(word_ids.begin(), word_ids.end(), 0);
    for (auto& id : word_ids) id = id * 7919 % 1'000'000;
    rng.shuffle(word_ids);
    std::size_t next_word = 0;
    auto fresh = [&](std::size_t n) {
        std::vector<std::string> words;
        for (std::size_t i = 0; i < n; ++i) words.push_back(pseudo_word(word_ids[next_word++]));
        return words;
    };
    const auto background = fresh(kBackgroundVocab);
    auto filler = [&](std::size_t lo, std::size_t hi) {
        std::vector<std::string> words;
        const auto n = rng.between(lo, hi);
        for (std::size_t i = 0; i < n; ++i) words.push_back(background[rng.below(background.size())]);
        return words;
    };

    struct Draft {
        std::string contents;
        std::string topic;
        int grade = -1;  // -1: unjudged
    };
    std::vector<Draft> drafts;
    auto passage = [&](const std::vector<std::string>& key_terms, std::size_t repeats, std::size_t lo,
                       std::size_t hi, const std::string& topic, int grade) {
        auto words = filler(lo, hi);
        for (std::size_t r = 0; r < repeats; ++r) {
            for (const auto& t : key_terms) words.push_back(t);
        }
        rng.shuffle(words);
        drafts.push_back(Draft{join(words), topic, grade});
    };

    std::vector<std::vector<TurnPlan>> plans(config.sessions);
    for (std::size_t s = 0; s < config.sessions; ++s) {
        ConversationSession session;
        char id[32];
        std::snprintf(id, sizeof id, "s%03zu", s);
        session.session_id = id;

        for (std::size_t t = 0; t < config.turns_per_session; ++t) {
            TurnPlan plan;
            plan.level = kAllLevels[(s + t) % 3];
            plan.topic = fresh(kTermsPerGroup);
            plan.drift = fresh(kTermsPerGroup);
            plan.generic = fresh(kTermsPerGroup);
            plan.profile = fresh(kTermsPerGroup);
            plan.answer = fresh(kTermsPerGroup);
            plans[s].push_back(plan);
        }
        for (const auto& plan : plans[s]) {
            if (plan.level != PersonalizationLevel::kNone) {
                session.user_profile.push_back("I care a lot about " + join(plan.profile) + ".");
            }
        }
        // sentences whose words appear nowhere in the collection
        session.user_profile.push_back("My favourite things are " + join(fresh(3)) + ".");
        session.user_profile.push_back("Friends describe me as " + join(fresh(3)) + ".");

        for (std::size_t t = 0; t < config.turns_per_session; ++t) {
            const auto& plan = plans[s][t];
            Turn turn;
            turn.turn_id = static_cast<int>(t + 1);
            turn.gold_level = plan.level;
            const auto topic_id = make_topic_id(session.session_id, turn.turn_id);
            switch (plan.level) {
                case PersonalizationLevel::kNone:
                    turn.utterance = "Tell me about " + join(plan.topic) + ".";
                    passage(plan.topic, 2, 20, 30, topic_id, 2);
                    for (std::size_t i = 1; i < kRelevant; ++i) {
                        auto terms = plan.topic;
                        terms.push_back(plan.answer[i]);
                        passage(terms, 1, 25, 35, topic_id, 1);
                    }
                    for (std::size_t i = 0; i < kStrongDistractors; ++i) passage(plan.drift, 2, 20, 30, topic_id, 0);
                    for (std::size_t i = 0; i < kWeakDistractors; ++i) {
                        passage({plan.topic[i % kTermsPerGroup]}, 1, 60, 80, topic_id, 0);
                        passage({plan.drift[i % kTermsPerGroup]}, 1, 60, 80, topic_id, -1);
                    }
                    break;
                case PersonalizationLevel::kPartial: {
                    turn.utterance = "What about " + join(plan.topic) + " for someone like me?";
                    auto both = plan.topic;
                    both.insert(both.end(), plan.profile.begin(), plan.profile.end());
                    passage(both, 2, 20, 30, topic_id, 2);
                    for (std::size_t i = 1; i < kRelevant; ++i) passage(both, 1, 25, 35, topic_id, 1);
                    for (std::size_t i = 0; i < kStrongDistractors; ++i) passage(plan.topic, 2, 20, 30, topic_id, 0);
                    for (std::size_t i = 0; i < kWeakDistractors; ++i) {
                        passage({plan.topic[i % kTermsPerGroup]}, 1, 60, 80, topic_id, -1);
                        passage({plan.profile[i % kTermsPerGroup]}, 1, 60, 80, topic_id, -1);
                    }
                    break;
                }
                case PersonalizationLevel::kFull:
                    turn.utterance = "Which " + join(plan.generic) + " would suit me?";
                    passage(plan.profile, 2, 20, 30, topic_id, 2);
                    for (std::size_t i = 1; i < kRelevant; ++i) passage(plan.profile, 1, 25, 35, topic_id, 1);
                    for (std::size_t i = 0; i < kStrongDistractors; ++i) passage(plan.generic, 2, 20, 30, topic_id, 0);
                    for (std::size_t i = 0; i < kWeakDistractors; ++i) {
                        passage({plan.generic[i % kTermsPerGroup]}, 1, 60, 80, topic_id, -1);
                        passage({plan.profile[i % kTermsPerGroup]}, 1, 60, 80, topic_id, 0);
                    }
                    break;
            }
            turn.response = "Here is what I found on " + join(plan.level == PersonalizationLevel::kFull
                                                                  ? plan.generic
                                                                  : plan.topic) + ".";
            session.turns.push_back(std::move(turn));
        }
        out.sessions.push_back(std::move(session));
    }
    while (drafts.size() < config.passages) drafts.push_back(Draft{join(filler(20, 40)), {}, -1});

    // ids follow a shuffled order so id tie-breaks carry no signal
    std::vector<std::size_t> order(drafts.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::string> ids(drafts.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        char id[32];
        std::snprintf(id, sizeof id, "p%05zu", pos);
        ids[order[pos]] = id;
    }
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const auto& d = drafts[order[pos]];
        out.corpus.add(ids[order[pos]], d.contents);
    }
    for (std::size_t i = 0; i < drafts.size(); ++i) {
        if (drafts[i].grade >= 0) out.qrels.add(drafts[i].topic, ids[i], drafts[i].grade);
    }

    const auto tmpl = PromptTemplate::standard();
    for (std::size_t s = 0; s < out.sessions.size(); ++s) {
        const auto& session = out.sessions[s];
        for (std::size_t t = 0; t < session.turns.size(); ++t) {
            const auto& plan = plans[s][t];
            nlohmann::ordered_json reply;
            reply["level"] = std::string(1, level_code(plan.level));
            switch (plan.level) {
                case PersonalizationLevel::kNone:
                    reply["reasoning"] = "The question is self-contained; no profile sentence applies.";
                    reply["rewrite"] = "Information about " + join(plan.topic);
                    reply["response"] = join(plan.topic) + " " + join(plan.answer);
                    reply["personalized_rewrite"] = "Overview of " + join(plan.drift);
                    reply["personalized_response"] = join(plan.drift);
                    break;
                case PersonalizationLevel::kPartial:
                    reply["reasoning"] = "The question is general but the profile narrows it.";
                    reply["rewrite"] = "Information about " + join(plan.topic);
                    reply["response"] = join(plan.topic);
                    reply["personalized_rewrite"] = join(plan.topic) + " with " + join(plan.profile);
                    reply["personalized_response"] = join(plan.profile);
                    break;
                case PersonalizationLevel::kFull:
                    reply["reasoning"] = "The answer depends on the user's stated interests.";
                    reply["rewrite"] = "Which " + join(plan.generic) + " are recommended";
                    reply["response"] = join(plan.generic);
                    reply["personalized_rewrite"] = "Which " + join(plan.generic) + " fit " + join(plan.profile);
                    reply["personalized_response"] = join(plan.profile);
                    break;
            }
            const auto prompt = render_prompt(tmpl, session, t);
            out.fixtures.emplace(sha256_hex(prompt), "```json\n" + reply.dump() + "\n```");
        }
    }
    return out;
}

void write_synthetic(const SyntheticCollection& collection, const std::filesystem::path& dir) {
    write_file_atomic(dir / "corpus.jsonl", write_corpus(collection.corpus));
    write_file_atomic(dir / "sessions.json", write_sessions(collection.sessions));
    write_file_atomic(dir / "qrels.txt", write_qrels(collection.qrels));
    write_file_atomic(dir / "fixtures.json", MockChatClient::fixture_json(collection.fixtures));
}

}  // namespace apcir
