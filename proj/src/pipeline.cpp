#include "apcir/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "apcir/error.hpp"
#include "apcir/session_io.hpp"

namespace apcir {

namespace {

template <typename F>
auto stage(const char* name, F&& body) -> decltype(body()) {
    try {
        return body();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

std::string split_tag(const SplitInputs& inputs) {
    if (!inputs.tag.empty()) return inputs.tag;
    return inputs.sessions.stem().string();
}

void retag(Run& run, std::size_t variant) {
    for (auto& [topic, list] : run) list.run_tag = variant_tag(topic, variant);
}

nlohmann::ordered_json report_json(const EvaluationReport& report) {
    return nlohmann::ordered_json::parse(report.to_json());
}

}  // namespace

std::string variant_tag(std::string_view topic_id, std::size_t variant) {
    if (variant >= kNumVariants) throw InvalidArgument("variant index out of range");
    std::string tag(topic_id);
    tag += "__";
    tag += kVariantNames[variant];
    return tag;
}

std::unique_ptr<ChatClient> make_chat_client(std::string_view backend, const std::filesystem::path& fixtures,
                                             bool mock_default, std::string model) {
    if (backend == "echo") return std::make_unique<EchoChatClient>();
    if (backend == "mock") {
        if (fixtures.empty()) {
            if (!mock_default) throw InvalidArgument("mock backend needs a fixtures file");
            return std::make_unique<MockChatClient>(std::map<std::string, std::string>{}, true);
        }
        return MockChatClient::from_fixture_json(read_file(fixtures), mock_default);
    }
    if (backend == "http") return std::make_unique<HttpChatClient>(HttpClientConfig::from_env(std::move(model)));
    throw InvalidArgument("unknown backend '" + std::string(backend) + "' (expected mock, echo or http)");
}

VariantRuns retrieve_variants(const Retriever& retriever, std::span<const ReformulationBundle> bundles,
                              std::size_t top_k) {
    std::vector<std::array<ScoredList, kNumVariants>> lists(bundles.size());
    auto one = [&](std::size_t i) {
        const auto texts = bundles[i].retrieval_texts();
        for (std::size_t v = 0; v < kNumVariants; ++v) {
            auto list = retriever.retrieve(texts[v], top_k);
            list.topic_id = bundles[i].topic_id;
            list.run_tag = variant_tag(bundles[i].topic_id, v);
            lists[i][v] = std::move(list);
        }
    };

    const std::size_t workers =
        std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(1, bundles.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < bundles.size(); ++i) one(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mu;
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < bundles.size(); i = next++) {
                    try {
                        one(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mu);
                        if (!failure) failure = std::current_exception();
                        next = bundles.size();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        if (failure) std::rethrow_exception(failure);
    }

    VariantRuns runs;
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        for (std::size_t v = 0; v < kNumVariants; ++v) {
            if (!runs[v].emplace(bundles[i].topic_id, std::move(lists[i][v])).second) {
                throw ConflictError("duplicate topic " + bundles[i].topic_id);
            }
        }
    }
    return runs;
}

VariantRuns quantize(const VariantRuns& runs) {
    VariantRuns out;
    for (std::size_t v = 0; v < kNumVariants; ++v) {
        out[v] = parse_run(write_run(runs[v], kVariantNames[v]));
        // topics with empty lists have no lines in the file
        for (const auto& [topic, list] : runs[v]) {
            auto& slot = out[v][topic];
            slot.topic_id = topic;
        }
        retag(out[v], v);
    }
    return out;
}

TopicLists normalized_lists(const VariantRuns& runs, std::span<const std::string> topics) {
    TopicLists out;
    for (const auto& topic : topics) {
        auto& lists = out[topic];
        for (std::size_t v = 0; v < kNumVariants; ++v) {
            const auto it = runs[v].find(topic);
            ScoredList list;
            if (it != runs[v].end()) list = minmax_normalize(it->second);
            list.topic_id = topic;
            list.run_tag = variant_tag(topic, v);
            lists.push_back(std::move(list));
        }
    }
    return out;
}

std::map<std::string, PersonalizationLevel> levels_of(std::span<const ReformulationBundle> bundles) {
    std::map<std::string, PersonalizationLevel> out;
    for (const auto& b : bundles) out[b.topic_id] = b.level;
    return out;
}

LevelGroups group_by_level(std::span<const ReformulationBundle> bundles, const TopicLists& lists) {
    LevelGroups groups;
    for (const auto level : kAllLevels) groups[level];
    for (const auto& b : bundles) {
        const auto it = lists.find(b.topic_id);
        if (it == lists.end()) throw InvalidArgument("no ranking lists for topic " + b.topic_id);
        groups[b.level].push_back(TurnEvidence{b.topic_id, it->second});
    }
    return groups;
}

void write_variant_runs(const VariantRuns& runs, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t v = 0; v < kNumVariants; ++v) {
        write_file_atomic(dir / (std::string(kVariantNames[v]) + ".run"), write_run(runs[v], kVariantNames[v]));
    }
}

VariantRuns read_variant_runs(const std::filesystem::path& dir) {
    VariantRuns runs;
    for (std::size_t v = 0; v < kNumVariants; ++v) {
        runs[v] = parse_run(read_file(dir / (std::string(kVariantNames[v]) + ".run")));
        retag(runs[v], v);
    }
    return runs;
}

SplitArtifacts process_split(const SplitInputs& inputs, const PipelineConfig& config) {
    SplitArtifacts art;
    const auto corpus = stage("load", [&] {
        art.sessions = parse_sessions(read_file(inputs.sessions));
        if (!inputs.qrels.empty()) art.qrels = parse_qrels(read_file(inputs.qrels));
        return parse_corpus(read_file(inputs.corpus));
    });
    art.bundles = stage("reformulate", [&] {
        auto client = make_chat_client(config.backend, inputs.fixtures, config.mock_default, config.model);
        ResponseCache cache(config.cache_dir);
        ReformulatorOptions options;
        options.max_in_flight = config.max_in_flight;
        Reformulator reformulator(*client, PromptTemplate::standard(), &cache, options);
        return reformulator.reformulate_all(art.sessions);
    });
    const auto index = stage("index", [&] { return InvertedIndex::build(corpus, config.bm25); });
    art.runs = stage("retrieve", [&] {
        Bm25Retriever retriever(index);
        return quantize(retrieve_variants(retriever, art.bundles, config.top_k));
    });
    std::vector<std::string> topics;
    for (const auto& b : art.bundles) topics.push_back(b.topic_id);
    art.lists = stage("normalize", [&] { return normalized_lists(art.runs, topics); });
    return art;
}

PipelineResult run_pipeline(const PipelineConfig& config) {
    PipelineResult result;
    result.split = process_split(config.split, config);
    const auto& split = result.split;
    const auto tag = split_tag(config.split);

    FitOptions fit_options;
    const auto eval_specs = stage("config", [&] {
        fit_options.metric = MetricSpec::parse(config.metric);
        fit_options.metric_options = config.metric_options;
        fit_options.step = config.step;
        fit_options.depth = config.fusion_depth;
        fit_options.threads = config.threads;
        if (config.fit_on != "self" && config.fit_on != "other") {
            throw InvalidArgument("fit_on must be 'self' or 'other', got '" + config.fit_on + "'");
        }
        return parse_metric_list(config.eval_metrics);
    });

    auto fit_self = [&] {
        if (!split.qrels) throw InvalidArgument("fitting on the apply split needs its qrels");
        auto options = fit_options;
        options.fitted_on = tag;
        return fit_level_weights(group_by_level(split.bundles, split.lists), *split.qrels, options);
    };

    result.table = stage("fit", [&] {
        if (!config.weights.empty()) return LevelWeightTable::from_json(read_file(config.weights));
        if (config.fit_on == "self") return fit_self();
        const auto other = process_split(config.fit_split, config);
        if (!other.qrels) throw InvalidArgument("fitting split has no qrels");
        auto options = fit_options;
        options.fitted_on = split_tag(config.fit_split);
        auto table = fit_level_weights(group_by_level(other.bundles, other.lists), *other.qrels, options);
        if (split.qrels) result.self_table = fit_self();
        return table;
    });

    const auto levels = levels_of(split.bundles);
    result.final_run = stage("fuse", [&] {
        auto run = apply_weights(result.table, levels, split.lists, config.fusion_depth);
        for (auto& [topic, list] : run) list.run_tag = topic + "__fused";
        return run;
    });
    result.final_run_text = write_run(result.final_run, kFusedRunTag);

    stage("evaluate", [&] {
        if (!split.qrels) return;
        result.report = evaluate_run(result.final_run, *split.qrels, eval_specs, config.metric_options);
        for (std::size_t v = 0; v < kNumVariants; ++v) {
            result.variant_reports[v] = evaluate_run(split.runs[v], *split.qrels, eval_specs, config.metric_options);
        }
        if (result.self_table) {
            const auto self_run = apply_weights(*result.self_table, levels, split.lists, config.fusion_depth);
            result.self_report = evaluate_run(self_run, *split.qrels, eval_specs, config.metric_options);
        }
    });

    if (!config.out_dir.empty()) {
        stage("write", [&] {
            const auto& dir = config.out_dir;
            std::filesystem::create_directories(dir);
            write_file_atomic(dir / "bundles.json", write_bundles(split.bundles));
            write_variant_runs(split.runs, dir / "runs");
            write_file_atomic(dir / "weights.json", result.table.to_json());
            write_file_atomic(dir / "final.run", result.final_run_text);
            if (result.report) {
                nlohmann::ordered_json doc;
                doc["split"] = tag;
                doc["fitted_on"] = result.table.fitted_on;
                doc["final"] = report_json(*result.report);
                for (std::size_t v = 0; v < kNumVariants; ++v) {
                    doc["variants"][std::string(kVariantNames[v])] = report_json(*result.variant_reports[v]);
                }
                if (result.self_table) {
                    doc["self_fit"]["weights"] = nlohmann::ordered_json::parse(result.self_table->to_json());
                    doc["self_fit"]["report"] = report_json(*result.self_report);
                }
                write_file_atomic(dir / "report.json", doc.dump(2) + "\n");
                write_file_atomic(dir / "per_topic.csv", result.report->to_csv());
            }
        });
    }
    return result;
}

}  // namespace apcir
