#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "apcir/error.hpp"
#include "apcir/pipeline.hpp"
#include "apcir/session_io.hpp"

using namespace apcir;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

SplitInputs write_split(const SyntheticConfig& sc, const fs::path& dir) {
    write_synthetic(generate_synthetic(sc), dir);
    return SplitInputs{dir / "corpus.jsonl", dir / "sessions.json", dir / "qrels.txt", dir / "fixtures.json",
                       sc.tag};
}

PipelineConfig base_config(const SplitInputs& split, const fs::path& out) {
    PipelineConfig c;
    c.split = split;
    c.out_dir = out;
    c.threads = 1;
    c.max_in_flight = 1;
    return c;
}

SyntheticConfig small(std::uint64_t seed) {
    SyntheticConfig sc;
    sc.seed = seed;
    sc.sessions = 6;
    sc.turns_per_session = 3;
    sc.passages = 400;
    sc.tag = "synth" + std::to_string(seed);
    return sc;
}

double mean_of(const EvaluationReport& r, const std::string& name) {
    for (std::size_t s = 0; s < r.specs.size(); ++s) {
        if (r.specs[s].name() == name) return r.means[s];
    }
    ADD_FAILURE() << "metric " << name << " missing";
    return 0.0;
}

}  // namespace

TEST(Synthetic, DeterministicBytes) {
    const auto a = fresh_dir("apcir_synth_a");
    const auto b = fresh_dir("apcir_synth_b");
    write_synthetic(generate_synthetic(small(3)), a);
    write_synthetic(generate_synthetic(small(3)), b);
    for (const char* f : {"corpus.jsonl", "sessions.json", "qrels.txt", "fixtures.json"}) {
        EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
    }
    write_synthetic(generate_synthetic(small(4)), b);
    EXPECT_NE(read_file(a / "corpus.jsonl"), read_file(b / "corpus.jsonl"));
}

TEST(Synthetic, ShapeAndReferentialIntegrity) {
    const auto c = generate_synthetic(small(5));
    EXPECT_EQ(c.corpus.size(), 400u);
    ASSERT_EQ(c.sessions.size(), 6u);
    std::set<std::string> topics;
    for (const auto& s : c.sessions) {
        EXPECT_EQ(s.turns.size(), 3u);
        for (const auto& t : s.turns) topics.insert(make_topic_id(s.session_id, t.turn_id));
    }
    for (const auto& t : c.qrels.topics()) {
        EXPECT_TRUE(topics.count(t)) << t;
        for (const auto& [pid, grade] : *c.qrels.find(t)) {
            EXPECT_NE(c.corpus.find(pid), nullptr) << pid;
            EXPECT_GE(grade, 0);
        }
    }
    EXPECT_EQ(c.fixtures.size(), 18u);
    for (const auto& [hash, response] : c.fixtures) EXPECT_TRUE(parse_model_output(response).has_value());
}

TEST(Pipeline, SelfFitLearnsMorePersonalWeightForLevelC) {
    const auto dir = fresh_dir("apcir_pipe_self");
    const auto split = write_split(small(7), dir / "data");
    const auto result = run_pipeline(base_config(split, dir / "out"));
    const double w3_a = result.table.weights(PersonalizationLevel::kNone)[2];
    const double w3_c = result.table.weights(PersonalizationLevel::kFull)[2];
    EXPECT_GT(w3_c, w3_a);
    EXPECT_TRUE(result.table.unfitted().empty());
    EXPECT_EQ(result.table.fitted_on, "synth7");

    ASSERT_TRUE(result.report.has_value());
    const double fused = mean_of(*result.report, "ndcg@3");
    for (const auto& v : result.variant_reports) {
        ASSERT_TRUE(v.has_value());
        EXPECT_GE(fused + 1e-12, mean_of(*v, "ndcg@3"));
    }
    for (const char* f : {"bundles.json", "runs/qprime.run", "runs/qprime_r.run", "runs/personalized.run",
                          "weights.json", "final.run", "report.json", "per_topic.csv"}) {
        EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
    }
    EXPECT_EQ(read_file(dir / "out" / "final.run"), result.final_run_text);
}

TEST(Pipeline, CornerWeightsReproduceFirstVariant) {
    const auto dir = fresh_dir("apcir_pipe_corner");
    const auto split = write_split(small(8), dir / "data");
    write_file_atomic(dir / "w.json", LevelWeightTable::uniform(WeightVector({1.0, 0.0, 0.0})).to_json());
    auto config = base_config(split, dir / "out");
    config.weights = dir / "w.json";
    const auto result = run_pipeline(config);
    const auto& lists = result.split.lists;
    for (const auto& [topic, fused] : result.final_run) {
        const auto& first = lists.at(topic)[0];
        // passages at the bottom of list 1 tie at 0 with those only the other lists found
        std::size_t positive = 0;
        while (positive < first.entries.size() && first.entries[positive].score > 0.0) ++positive;
        ASSERT_GE(fused.entries.size(), first.entries.size());
        for (std::size_t i = 0; i < positive; ++i) {
            EXPECT_EQ(fused.entries[i].passage_id, first.entries[i].passage_id) << topic << " rank " << i;
            EXPECT_EQ(fused.entries[i].score, first.entries[i].score);
        }
        for (std::size_t i = positive; i < fused.entries.size(); ++i) EXPECT_EQ(fused.entries[i].score, 0.0);
    }
}

TEST(Pipeline, FitOnOtherSplitRecordsProvenanceAndSelfFit) {
    const auto dir = fresh_dir("apcir_pipe_other");
    const auto apply = write_split(small(9), dir / "apply");
    auto fit_cfg = small(10);
    fit_cfg.tag = "fitsplit";
    const auto fit = write_split(fit_cfg, dir / "fit");
    auto config = base_config(apply, dir / "out");
    config.fit_on = "other";
    config.fit_split = fit;
    const auto result = run_pipeline(config);
    EXPECT_EQ(result.table.fitted_on, "fitsplit");
    ASSERT_TRUE(result.self_table.has_value());
    EXPECT_EQ(result.self_table->fitted_on, "synth9");
    EXPECT_TRUE(result.self_report.has_value());
    EXPECT_NE(read_file(dir / "out" / "report.json").find("\"self_fit\""), std::string::npos);
}

TEST(Pipeline, ReplayFromArtifactsIsByteIdentical) {
    const auto dir = fresh_dir("apcir_pipe_replay");
    const auto split = write_split(small(11), dir / "data");
    const auto result = run_pipeline(base_config(split, dir / "out"));

    const auto bundles = parse_bundles(read_file(dir / "out" / "bundles.json"));
    const auto runs = read_variant_runs(dir / "out" / "runs");
    std::vector<std::string> topics;
    for (const auto& b : bundles) topics.push_back(b.topic_id);
    const auto table = LevelWeightTable::from_json(read_file(dir / "out" / "weights.json"));
    const auto replay = apply_weights(table, levels_of(bundles), normalized_lists(runs, topics));
    EXPECT_EQ(write_run(replay, kFusedRunTag), read_file(dir / "out" / "final.run"));

    const auto again = run_pipeline(base_config(split, dir / "out2"));
    EXPECT_EQ(again.final_run_text, result.final_run_text);
    EXPECT_EQ(read_file(dir / "out2" / "report.json"), read_file(dir / "out" / "report.json"));
}

TEST(Pipeline, ThreadCountDoesNotChangeResults) {
    const auto dir = fresh_dir("apcir_pipe_threads");
    const auto split = write_split(small(12), dir / "data");
    auto serial = base_config(split, {});
    auto parallel = serial;
    parallel.threads = 4;
    parallel.max_in_flight = 4;
    EXPECT_EQ(run_pipeline(serial).final_run_text, run_pipeline(parallel).final_run_text);
}

TEST(Pipeline, StageFailuresNameTheStageAndWriteNothing) {
    const auto dir = fresh_dir("apcir_pipe_fail");
    const auto split = write_split(small(13), dir / "data");

    auto missing = base_config(split, dir / "out");
    missing.split.sessions = dir / "nope.json";
    try {
        run_pipeline(missing);
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "load");
    }

    auto unknown = base_config(split, dir / "out");
    unknown.split.fixtures.clear();
    try {
        run_pipeline(unknown);
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "reformulate");
    }

    auto bad_metric = base_config(split, dir / "out");
    bad_metric.metric = "precision@5";
    try {
        run_pipeline(bad_metric);
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "config");
    }
    EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(Pipeline, EchoBackendOnTinyCorpus) {
    const auto dir = fresh_dir("apcir_pipe_echo");
    Corpus corpus;
    for (int i = 0; i < 20; ++i) {
        corpus.add("d" + std::to_string(i), "passage " + std::to_string(i) + (i % 2 ? " about trains" : " about boats"));
    }
    ConversationSession s;
    s.session_id = "s";
    s.user_profile = {"I love trains."};
    s.turns.push_back(Turn{1, "tell me about boats", std::nullopt, std::nullopt});
    s.turns.push_back(Turn{2, "and trains", std::nullopt, std::nullopt});
    Qrels qrels;
    qrels.add("s_1", "d0", 1);
    qrels.add("s_2", "d1", 2);
    write_file_atomic(dir / "corpus.jsonl", write_corpus(corpus));
    write_file_atomic(dir / "sessions.json", write_sessions({s}));
    write_file_atomic(dir / "qrels.txt", write_qrels(qrels));

    auto config = base_config(SplitInputs{dir / "corpus.jsonl", dir / "sessions.json", dir / "qrels.txt", {}, "tiny"},
                              dir / "out");
    config.backend = "echo";
    const auto result = run_pipeline(config);
    EXPECT_EQ(result.final_run.size(), 2u);
    EXPECT_EQ(result.table.unfitted().size(), 2u);
    EXPECT_FALSE(result.table.fit(PersonalizationLevel::kNone).weights.values().empty());
    ASSERT_TRUE(result.report.has_value());
    EXPECT_EQ(result.report->topics.size(), 2u);
}

TEST(Pipeline, UnknownBackendRejected) {
    EXPECT_THROW(make_chat_client("carrier-pigeon", {}), InvalidArgument);
    EXPECT_THROW(make_chat_client("mock", {}), InvalidArgument);
    EXPECT_NE(make_chat_client("mock", {}, true), nullptr);
    EXPECT_EQ(variant_tag("s_1", 2), "s_1__personalized");
}
