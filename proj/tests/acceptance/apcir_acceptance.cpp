// Acceptance checks; prints one PASS/FAIL line per criterion.
// Usage: apcir_acceptance <path-to-apcir-cli> [work-dir]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "apcir/estimators.hpp"
#include "apcir/fusion.hpp"
#include "apcir/metrics.hpp"
#include "apcir/pipeline.hpp"
#include "apcir/session_io.hpp"
#include "apcir/weight_opt.hpp"
#include "../oracles.hpp"

using namespace apcir;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(3);
    os << x;
    return os.str();
}

int run_command(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

struct Env {
    std::string cli;
    fs::path work;
};

Outcome metric_oracle() {
    const auto start = Clock::now();
    std::mt19937_64 rng(2024);
    double max_diff = 0.0;
    std::size_t compared = 0;
    const std::vector<MetricSpec> specs = {MetricSpec::parse("mrr"), MetricSpec::parse("ndcg@3"),
                                           MetricSpec::parse("recall@10"), MetricSpec::parse("recall@100")};
    for (int inst = 0; inst < 100; ++inst) {
        std::vector<std::string> topics;
        for (int t = 0; t < 6; ++t) topics.push_back("t" + std::to_string(t));
        const auto qrels = oracle::random_qrels(rng, topics, 200);
        Run run;
        for (std::size_t t = 0; t < topics.size(); ++t) {
            if (t == 5 && inst % 2) continue;  // topic absent from the run
            auto list = oracle::random_list(rng, topics[t], 200, 160, false);
            run[topics[t]] = list;
        }
        const auto report = evaluate_run(run, qrels, specs);
        std::vector<double> sums(specs.size(), 0.0);
        std::vector<int> counts(specs.size(), 0);
        for (std::size_t ti = 0; ti < report.topics.size(); ++ti) {
            const auto& topic = report.topics[ti];
            const auto it = run.find(topic);
            const auto ranking = it == run.end() ? oracle::Ranking{} : oracle::ranking_of(it->second);
            const auto g = oracle::grades_of(qrels, topic);
            const double expected[] = {oracle::mrr(ranking, g), oracle::ndcg(ranking, g, 3),
                                       oracle::recall(ranking, g, 10), oracle::recall(ranking, g, 100)};
            for (std::size_t s = 0; s < specs.size(); ++s) {
                if (expected[s] < 0.0) {
                    if (report.counted[ti][s]) return {false, "no-relevance topic counted for " + specs[s].name()};
                    continue;
                }
                max_diff = std::max(max_diff, std::abs(report.values[ti][s] - expected[s]));
                if (it != run.end()) {
                    max_diff = std::max(max_diff, std::abs(evaluate_metric(it->second, qrels, specs[s]) - expected[s]));
                }
                sums[s] += expected[s];
                ++counts[s];
                ++compared;
            }
        }
        for (std::size_t s = 0; s < specs.size(); ++s) {
            const double mean = counts[s] ? sums[s] / counts[s] : 0.0;
            max_diff = std::max(max_diff, std::abs(report.means[s] - mean));
        }
    }
    const double elapsed = seconds_since(start);
    const bool pass = max_diff <= 1e-9 && elapsed < 5.0;
    return {pass, std::to_string(compared) + " values, max abs diff " + fmt(max_diff) + ", " + fmt(elapsed) + " s"};
}

Outcome fusion_oracle() {
    std::mt19937_64 rng(77);
    int mismatches = 0;
    for (int inst = 0; inst < 50; ++inst) {
        std::vector<ScoredList> raw;
        for (int m = 0; m < 3; ++m) raw.push_back(oracle::random_list(rng, "t", 60, 50, false));
        std::vector<ScoredList> norm;
        for (const auto& l : raw) norm.push_back(minmax_normalize(l));
        std::vector<double> w = {static_cast<double>(rng() % 50), static_cast<double>(rng() % 50),
                                 static_cast<double>(rng() % 50) + 1.0};
        const double sum = w[0] + w[1] + w[2];
        for (auto& x : w) x /= sum;

        auto ids = [](const std::vector<std::pair<std::string, double>>& v) {
            oracle::Ranking r;
            for (const auto& [id, s] : v) r.push_back(id);
            return r;
        };
        if (oracle::ranking_of(linear_fuse(WeightVector(w), norm)) != ids(oracle::linear_fuse(w, norm, 1000))) {
            ++mismatches;
        }
        if (oracle::ranking_of(rrf_fuse(raw)) != ids(oracle::rrf_fuse(raw, 60.0, 1000))) ++mismatches;
        if (oracle::ranking_of(round_robin_fuse(raw)) != oracle::round_robin(raw, 1000)) ++mismatches;
    }
    return {mismatches == 0, "150 fusions, " + std::to_string(mismatches) + " rank mismatches"};
}

Outcome simplex() {
    const auto grid = enumerate_simplex(3, 0.01);
    const auto expected = oracle::simplex3(100);
    if (grid.size() != 5151 || expected.size() != 5151) {
        return {false, std::to_string(grid.size()) + " vectors"};
    }
    double worst_sum = 0.0;
    double worst_component = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            sum += grid[i][j];
            worst_component = std::max(worst_component, std::abs(grid[i][j] - expected[i][j]));
        }
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    }
    return {worst_sum <= 1e-9 && worst_component == 0.0,
            "5151 vectors, max |sum-1| " + fmt(worst_sum) + ", max diff to triple loop " + fmt(worst_component)};
}

SplitArtifacts synthetic_split(std::uint64_t seed, const fs::path& dir, PipelineConfig& config) {
    SyntheticConfig sc;
    sc.seed = seed;
    write_synthetic(generate_synthetic(sc), dir);
    config.threads = 1;
    config.max_in_flight = 1;
    SplitInputs in{dir / "corpus.jsonl", dir / "sessions.json", dir / "qrels.txt", dir / "fixtures.json", {}};
    return process_split(in, config);
}

Outcome corner_dominance(const Env& env) {
    int groups = 0;
    int violations = 0;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        PipelineConfig config;
        const auto split = synthetic_split(seed, env.work / ("corner" + std::to_string(seed)), config);
        const auto level_groups = group_by_level(split.bundles, split.lists);
        FitOptions options;
        options.threads = 1;
        const auto table = fit_level_weights(level_groups, *split.qrels, options);
        for (const auto& [level, group] : level_groups) {
            if (group.empty()) continue;
            ++groups;
            const double fitted = *table.fit(level).objective;
            if (group_objective(group, *split.qrels, table.weights(level), options) != fitted) ++violations;
            for (std::size_t c = 0; c < 3; ++c) {
                std::vector<double> corner(3, 0.0);
                corner[c] = 1.0;
                if (group_objective(group, *split.qrels, WeightVector(corner), options) > fitted) ++violations;
            }
        }
    }
    return {groups > 0 && violations == 0,
            std::to_string(groups) + " level groups over 3 seeds, " + std::to_string(violations) + " violations"};
}

Outcome adaptive_separation(const Env& env) {
    const auto data = env.work / "sep_data";
    const auto out = env.work / "sep_out";
    fs::remove_all(out);
    if (run_command(env.cli + " synth --seed 7 --sessions 10 --turns 3 --passages 1000 --out-dir " + data.string()) !=
        0) {
        return {false, "synth failed"};
    }
    const auto start = Clock::now();
    const int rc = run_command(env.cli + " run-all --corpus " + (data / "corpus.jsonl").string() + " --sessions " +
                               (data / "sessions.json").string() + " --qrels " + (data / "qrels.txt").string() +
                               " --fixtures " + (data / "fixtures.json").string() + " --out-dir " + out.string() +
                               " --threads 1 --max-in-flight 1");
    const double elapsed = seconds_since(start);
    if (rc != 0) return {false, "run-all failed"};
    const auto table = LevelWeightTable::from_json(read_file(out / "weights.json"));
    const double w3_a = table.weights(PersonalizationLevel::kNone)[2];
    const double w3_c = table.weights(PersonalizationLevel::kFull)[2];
    const bool turns_ok = parse_bundles(read_file(out / "bundles.json")).size() == 30;
    return {w3_c > w3_a && elapsed < 60.0 && turns_ok,
            "w3(c)=" + fmt(w3_c) + " w3(a)=" + fmt(w3_a) + ", run-all " + fmt(elapsed) + " s"};
}

Outcome weight_replay() {
    LevelWeightTable table;
    table.set(PersonalizationLevel::kNone, LevelFit{WeightVector({0.36, 0.17, 0.47}), std::nullopt, true});
    table.set(PersonalizationLevel::kPartial, LevelFit{WeightVector({0.35, 0.2, 0.45}), std::nullopt, true});
    table.set(PersonalizationLevel::kFull, LevelFit{WeightVector({0.25, 0.2, 0.55}), std::nullopt, true});

    auto list = [](const std::string& topic, std::vector<ScoredEntry> entries) {
        ScoredList l;
        l.topic_id = topic;
        l.entries = std::move(entries);
        l.sort_entries();
        return l;
    };
    std::map<std::string, std::vector<ScoredList>> lists;
    std::map<std::string, PersonalizationLevel> levels;
    for (const auto& [topic, level] : {std::pair{"ta", PersonalizationLevel::kNone},
                                       std::pair{"tb", PersonalizationLevel::kPartial},
                                       std::pair{"tc", PersonalizationLevel::kFull}}) {
        levels[topic] = level;
        lists[topic] = {list(topic, {{"p1", 1.0}, {"p2", 0.6}, {"p3", 0.0}}),
                        list(topic, {{"p2", 1.0}, {"p4", 0.25}, {"p1", 0.0}}),
                        list(topic, {{"p3", 1.0}, {"p1", 0.8}, {"p5", 0.0}})};
    }
    // p1: s1=1, s2=0, s3=0.8; p2: 0.6, 1, -; p3: 0, -, 1; p4: -, 0.25, -; p5: -, -, 0
    auto hand = [](double w1, double w2, double w3) {
        return std::map<std::string, double>{{"p1", w1 * 1.0 + w2 * 0.0 + w3 * 0.8},
                                             {"p2", w1 * 0.6 + w2 * 1.0},
                                             {"p3", w1 * 0.0 + w3 * 1.0},
                                             {"p4", w2 * 0.25},
                                             {"p5", w3 * 0.0}};
    };
    const std::map<std::string, std::map<std::string, double>> expected = {
        {"ta", hand(0.36, 0.17, 0.47)}, {"tb", hand(0.35, 0.2, 0.45)}, {"tc", hand(0.25, 0.2, 0.55)}};

    const auto fused = apply_weights(table, levels, lists);
    double max_diff = 0.0;
    bool order_ok = true;
    for (const auto& [topic, scores] : expected) {
        const auto& got = fused.at(topic);
        if (got.entries.size() != scores.size()) return {false, topic + ": wrong list length"};
        for (const auto& e : got.entries) max_diff = std::max(max_diff, std::abs(e.score - scores.at(e.passage_id)));
        if (oracle::ranking_of(got) != [&] {
                oracle::Ranking r;
                for (const auto& [id, s] : oracle::rank(scores, 1000)) r.push_back(id);
                return r;
            }()) {
            order_ok = false;
        }
    }
    return {max_diff <= 1e-12 && order_ok, "3 levels, max abs diff " + fmt(max_diff)};
}

Outcome minmax() {
    std::mt19937_64 rng(31337);
    int failures = 0;
    int constant = 0;
    for (int i = 0; i < 1000; ++i) {
        auto in = oracle::random_list(rng, "t", 100, 80, false);
        if (i % 10 == 0) {
            const double c = static_cast<double>(rng() % 7);
            for (auto& e : in.entries) e.score = c;
            in.sort_entries();
            ++constant;
        }
        const auto out = minmax_normalize(in);
        if (out.entries.size() != in.entries.size()) {
            ++failures;
            continue;
        }
        const bool degenerate =
            !in.entries.empty() && in.entries.front().score == in.entries.back().score;
        for (std::size_t k = 0; k < out.entries.size(); ++k) {
            const auto& e = out.entries[k];
            if (e.passage_id != in.entries[k].passage_id || e.score < 0.0 || e.score > 1.0) ++failures;
            if (k > 0 && e.score > out.entries[k - 1].score) ++failures;
            if (degenerate && e.score != 0.5) ++failures;
        }
        if (!degenerate && !out.entries.empty() &&
            (out.entries.front().score != 1.0 || out.entries.back().score != 0.0)) {
            ++failures;
        }
    }
    return {failures == 0,
            "1000 lists (" + std::to_string(constant) + " constant), " + std::to_string(failures) + " violations"};
}

Outcome estimators() {
    std::vector<std::string> problems;
    for (std::size_t k = 2; k <= 12; ++k) {
        ProfileDistribution d{std::vector<double>(k, 1.0 / static_cast<double>(k)), false};
        if (entropy_weight(d).value != 1.0) problems.push_back("uniform k=" + std::to_string(k));
    }
    if (entropy_weight(ProfileDistribution{{0.0, 1.0, 0.0, 0.0}, false}).value != 0.0) problems.push_back("single mass");
    const HashingEmbedder embedder;
    const auto v = embedder.embed("vegan restaurants near the harbour");
    if (deps_weight_from_embeddings(v, v) != 0.5) problems.push_back("zero distance");

    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    const auto base = embedder.embed("jazz clubs");
    int non_monotone = 0;
    for (int i = 0; i < 100; ++i) {
        Embedding a(base.size());
        Embedding b(base.size());
        for (auto& x : a) x = n(rng);
        for (auto& x : b) x = n(rng);
        const double da = l2_distance(a, base);
        const double db = l2_distance(b, base);
        const double wa = deps_weight_from_embeddings(a, base);
        const double wb = deps_weight_from_embeddings(b, base);
        if ((da < db && wa > wb) || (da > db && wa < wb)) ++non_monotone;
    }
    if (non_monotone) problems.push_back(std::to_string(non_monotone) + " non-monotone pairs");
    std::string detail = "entropy uniform/single mass, DEPS zero distance, 100 random pairs";
    for (const auto& p : problems) detail += "; failed: " + p;
    return {problems.empty(), detail};
}

Outcome determinism(const Env& env) {
    const auto data = env.work / "det_data";
    if (run_command(env.cli + " synth --seed 11 --out-dir " + data.string()) != 0) return {false, "synth failed"};
    std::vector<std::string> finals;
    for (const char* name : {"det_out1", "det_out2"}) {
        const auto out = env.work / name;
        fs::remove_all(out);
        const int rc = run_command(env.cli + " run-all --corpus " + (data / "corpus.jsonl").string() + " --sessions " +
                                   (data / "sessions.json").string() + " --qrels " + (data / "qrels.txt").string() +
                                   " --fixtures " + (data / "fixtures.json").string() + " --out-dir " + out.string());
        if (rc != 0) return {false, "run-all failed"};
        finals.push_back(read_file(out / "final.run"));
    }
    return {!finals[0].empty() && finals[0] == finals[1],
            "final.run " + std::to_string(finals[0].size()) + " bytes, identical=" +
                (finals[0] == finals[1] ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: apcir_acceptance <apcir-cli> [work-dir]\n";
        return 2;
    }
    Env env{argv[1], argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "apcir_acceptance"};
    fs::remove_all(env.work);
    fs::create_directories(env.work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"metric oracle equivalence", metric_oracle},
        {"fusion oracle equivalence", fusion_oracle},
        {"simplex enumeration", simplex},
        {"corner dominance", [&] { return corner_dominance(env); }},
        {"adaptive weight separation", [&] { return adaptive_separation(env); }},
        {"level weight replay", weight_replay},
        {"min-max normalization", minmax},
        {"entropy and DEPS estimators", estimators},
        {"end-to-end determinism", [&] { return determinism(env); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::printf("criterion %zu: %s  %s (%s)\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                    o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
