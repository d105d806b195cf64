// apcir: command-line front end for the adaptive personalized fusion pipeline.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "apcir/error.hpp"
#include "apcir/estimators.hpp"
#include "apcir/fusion.hpp"
#include "apcir/metrics.hpp"
#include "apcir/pipeline.hpp"
#include "apcir/reformulate.hpp"
#include "apcir/retrieval.hpp"
#include "apcir/session_io.hpp"
#include "apcir/weight_opt.hpp"

namespace fs = std::filesystem;
using namespace apcir;

namespace {

MetricOptions metric_options(int rel_threshold, const std::string& gain) {
    MetricOptions options;
    options.rel_threshold = rel_threshold;
    if (gain == "linear") {
        options.gain = GainMode::kLinear;
    } else if (gain == "exponential") {
        options.gain = GainMode::kExponential;
    } else {
        throw InvalidArgument("gain must be linear or exponential, got '" + gain + "'");
    }
    return options;
}

std::vector<std::string> bundle_topics(const std::vector<ReformulationBundle>& bundles) {
    std::vector<std::string> topics;
    for (const auto& b : bundles) topics.push_back(b.topic_id);
    return topics;
}

std::vector<std::string> run_topics(const VariantRuns& runs) {
    std::set<std::string> topics;
    for (const auto& run : runs) {
        for (const auto& [topic, list] : run) topics.insert(topic);
    }
    return {topics.begin(), topics.end()};
}

VariantRuns runs_from_args(const std::string& runs_dir, const std::vector<std::string>& run_files) {
    if (!runs_dir.empty()) return read_variant_runs(runs_dir);
    if (run_files.size() != kNumVariants) throw InvalidArgument("--runs needs exactly three run files");
    VariantRuns runs;
    for (std::size_t v = 0; v < kNumVariants; ++v) {
        runs[v] = parse_run(read_file(run_files[v]));
        for (auto& [topic, list] : runs[v]) list.run_tag = variant_tag(topic, v);
    }
    return runs;
}

void write_output(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
    } else {
        write_file_atomic(path, text);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive personalized conversational retrieval with level-aware rank fusion"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "apcir 1.0.0");

    // index
    std::string ix_corpus, ix_out;
    Bm25Params ix_params;
    auto* index_cmd = app.add_subcommand("index", "Build a BM25 index from a JSONL corpus");
    index_cmd->add_option("--corpus", ix_corpus, "corpus.jsonl")->required();
    index_cmd->add_option("--out", ix_out, "index file")->required();
    index_cmd->add_option("--k1", ix_params.k1, "BM25 k1")->capture_default_str();
    index_cmd->add_option("--b", ix_params.b, "BM25 b")->capture_default_str();

    // reformulate
    std::string rf_sessions, rf_backend = "mock", rf_fixtures, rf_cache, rf_out, rf_model = "gpt-4o";
    bool rf_mock_default = false;
    std::size_t rf_in_flight = 4;
    int rf_retries = kDefaultParseRetries;
    auto* ref_cmd = app.add_subcommand("reformulate", "Identify levels and rewrite every turn");
    ref_cmd->add_option("--sessions", rf_sessions, "sessions.json")->required();
    ref_cmd->add_option("--backend", rf_backend, "chat backend")
        ->check(CLI::IsMember({"http", "mock", "echo"}))
        ->capture_default_str();
    ref_cmd->add_option("--fixtures", rf_fixtures, "canned responses for the mock backend");
    ref_cmd->add_flag("--mock-default", rf_mock_default, "mock falls back to echo for unknown prompts");
    ref_cmd->add_option("--cache", rf_cache, "response cache directory");
    ref_cmd->add_option("--model", rf_model, "model id for the http backend")->capture_default_str();
    ref_cmd->add_option("--max-in-flight", rf_in_flight, "concurrent requests")->capture_default_str();
    ref_cmd->add_option("--retries", rf_retries, "re-prompts after an unparseable response")->capture_default_str();
    ref_cmd->add_option("--out", rf_out, "bundles.json")->required();

    // retrieve
    std::string rt_index, rt_corpus, rt_bundles, rt_out_dir;
    std::size_t rt_top_k = kDefaultRetrievalDepth;
    auto* ret_cmd = app.add_subcommand("retrieve", "Retrieve the three variants of every bundle");
    auto* rt_source = ret_cmd->add_option_group("source");
    rt_source->add_option("--index", rt_index, "index file from 'apcir index'");
    rt_source->add_option("--corpus", rt_corpus, "build the index in memory from corpus.jsonl");
    rt_source->require_option(1);
    ret_cmd->add_option("--bundles", rt_bundles, "bundles.json")->required();
    ret_cmd->add_option("--out-dir", rt_out_dir, "directory for qprime.run, qprime_r.run, personalized.run")
        ->required();
    ret_cmd->add_option("--top-k", rt_top_k, "retrieval depth")->capture_default_str();

    // fit-weights
    std::string fw_runs_dir, fw_qrels, fw_bundles, fw_metric = "ndcg@3", fw_out, fw_fitted_on, fw_gain = "linear";
    double fw_step = 0.01;
    std::size_t fw_depth = kDefaultFusionDepth;
    unsigned fw_threads = 0;
    int fw_threshold = 1;
    auto* fit_cmd = app.add_subcommand("fit-weights", "Grid-search one fusion weight vector per level");
    fit_cmd->add_option("--runs-dir", fw_runs_dir, "directory of variant runs")->required();
    fit_cmd->add_option("--qrels", fw_qrels, "qrels file")->required();
    fit_cmd->add_option("--bundles", fw_bundles, "bundles.json")->required();
    fit_cmd->add_option("--metric", fw_metric, "objective metric")->capture_default_str();
    fit_cmd->add_option("--step", fw_step, "grid step")->capture_default_str();
    fit_cmd->add_option("--depth", fw_depth, "fused list depth")->capture_default_str();
    fit_cmd->add_option("--threads", fw_threads, "worker threads, 0 = all cores")->capture_default_str();
    fit_cmd->add_option("--fitted-on", fw_fitted_on, "tag recorded in weights.json");
    fit_cmd->add_option("--rel-threshold", fw_threshold, "minimum relevant grade")->capture_default_str();
    fit_cmd->add_option("--gain", fw_gain, "linear or exponential")->capture_default_str();
    fit_cmd->add_option("--out", fw_out, "weights.json")->required();

    // estimate
    std::string es_method, es_sessions, es_bundles, es_runs_dir, es_corpus, es_out, es_log = "e";
    std::uint64_t es_seed = 1;
    std::size_t es_dim = 256, es_deps_depth = kDefaultDepsDepth;
    auto* est_cmd = app.add_subcommand("estimate", "Per-turn fusion weights from a heuristic estimator");
    est_cmd->add_option("--method", es_method, "estimator")
        ->check(CLI::IsMember({"random", "equal", "entropy", "deps"}))
        ->required();
    est_cmd->add_option("--sessions", es_sessions, "sessions.json (entropy)");
    est_cmd->add_option("--bundles", es_bundles, "bundles.json")->required();
    est_cmd->add_option("--runs-dir", es_runs_dir, "variant runs (deps)");
    est_cmd->add_option("--corpus", es_corpus, "corpus.jsonl (deps)");
    est_cmd->add_option("--seed", es_seed, "seed for the random estimator")->capture_default_str();
    est_cmd->add_option("--dim", es_dim, "embedding dimension")->capture_default_str();
    est_cmd->add_option("--deps-depth", es_deps_depth, "passages in the DEPS aggregate")->capture_default_str();
    est_cmd->add_option("--log-base", es_log, "entropy log base: e or 2")
        ->check(CLI::IsMember({"e", "2"}))
        ->capture_default_str();
    est_cmd->add_option("--out", es_out, "weights-per-turn.json")->required();

    // fuse
    std::string fu_runs_dir, fu_strategy = "linear", fu_weights, fu_table, fu_turn_weights, fu_bundles, fu_out;
    std::vector<std::string> fu_runs;
    double fu_rrf_k = 60.0;
    std::size_t fu_depth = kDefaultFusionDepth;
    auto* fuse_cmd = app.add_subcommand("fuse", "Fuse three variant runs into one");
    fuse_cmd->add_option("--runs", fu_runs, "RUN1,RUN2,RUN3")->delimiter(',');
    fuse_cmd->add_option("--runs-dir", fu_runs_dir, "directory of variant runs");
    fuse_cmd->add_option("--strategy", fu_strategy, "fusion strategy")
        ->check(CLI::IsMember({"linear", "rrf", "rr"}))
        ->capture_default_str();
    fuse_cmd->add_option("--weights", fu_weights, "w1,w2,w3 for every topic");
    fuse_cmd->add_option("--weights-table", fu_table, "per-level weights.json (needs --bundles)");
    fuse_cmd->add_option("--turn-weights", fu_turn_weights, "per-turn weights from 'apcir estimate'");
    fuse_cmd->add_option("--bundles", fu_bundles, "bundles.json");
    fuse_cmd->add_option("--rrf-k", fu_rrf_k, "RRF constant")->capture_default_str();
    fuse_cmd->add_option("--depth", fu_depth, "fused list depth")->capture_default_str();
    fuse_cmd->add_option("--out", fu_out, "fused run")->required();

    // evaluate
    std::string ev_run, ev_qrels, ev_metrics = "mrr,ndcg@3,recall@10,recall@100", ev_per_topic, ev_json,
                                  ev_gain = "linear";
    int ev_threshold = 1;
    std::size_t ev_mrr_cutoff = 0;
    auto* eval_cmd = app.add_subcommand("evaluate", "Score a run against qrels");
    eval_cmd->add_option("--run", ev_run, "run file")->required();
    eval_cmd->add_option("--qrels", ev_qrels, "qrels file")->required();
    eval_cmd->add_option("--metrics", ev_metrics, "comma-separated metrics")->capture_default_str();
    eval_cmd->add_option("--per-topic", ev_per_topic, "per-topic CSV output");
    eval_cmd->add_option("--json", ev_json, "JSON report output");
    eval_cmd->add_option("--rel-threshold", ev_threshold, "minimum relevant grade")->capture_default_str();
    eval_cmd->add_option("--mrr-cutoff", ev_mrr_cutoff, "cut MRR at this rank (0 = uncut)")->capture_default_str();
    eval_cmd->add_option("--gain", ev_gain, "linear or exponential")->capture_default_str();

    // synth
    SyntheticConfig sy;
    std::string sy_out;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic collection with mock fixtures");
    synth_cmd->add_option("--seed", sy.seed, "generator seed")->capture_default_str();
    synth_cmd->add_option("--sessions", sy.sessions, "number of sessions")->capture_default_str();
    synth_cmd->add_option("--turns", sy.turns_per_session, "turns per session")->capture_default_str();
    synth_cmd->add_option("--passages", sy.passages, "corpus size")->capture_default_str();
    synth_cmd->add_option("--tag", sy.tag, "collection tag");
    synth_cmd->add_option("--out-dir", sy_out, "output directory")->required();

    // run-all
    PipelineConfig pc;
    std::string pc_corpus, pc_sessions, pc_qrels, pc_fixtures, pc_out, pc_cache, pc_weights;
    std::string pc_fit_corpus, pc_fit_sessions, pc_fit_qrels, pc_fit_fixtures, pc_gain = "linear";
    int pc_threshold = 1;
    auto* all_cmd = app.add_subcommand("run-all", "Reformulate, retrieve, fit, fuse and evaluate");
    // keys live in a [run-all] section; flags given on the command line win
    app.set_config("--config", "", "TOML/INI config file");
    all_cmd->fallthrough();
    all_cmd->add_option("--corpus", pc_corpus, "corpus.jsonl")->required();
    all_cmd->add_option("--sessions", pc_sessions, "sessions.json")->required();
    all_cmd->add_option("--qrels", pc_qrels, "qrels (optional with --weights)");
    all_cmd->add_option("--fixtures", pc_fixtures, "mock fixtures");
    all_cmd->add_option("--tag", pc.split.tag, "split tag");
    all_cmd->add_option("--out-dir", pc_out, "output directory")->required();
    all_cmd->add_option("--backend", pc.backend, "chat backend")
        ->check(CLI::IsMember({"http", "mock", "echo"}))
        ->capture_default_str();
    all_cmd->add_flag("--mock-default", pc.mock_default, "mock falls back to echo for unknown prompts");
    all_cmd->add_option("--cache", pc_cache, "response cache directory");
    all_cmd->add_option("--model", pc.model, "model id for the http backend")->capture_default_str();
    all_cmd->add_option("--max-in-flight", pc.max_in_flight, "concurrent requests")->capture_default_str();
    all_cmd->add_option("--k1", pc.bm25.k1, "BM25 k1")->capture_default_str();
    all_cmd->add_option("--b", pc.bm25.b, "BM25 b")->capture_default_str();
    all_cmd->add_option("--top-k", pc.top_k, "retrieval depth")->capture_default_str();
    all_cmd->add_option("--depth", pc.fusion_depth, "fused list depth")->capture_default_str();
    all_cmd->add_option("--fit-on", pc.fit_on, "self or other")
        ->check(CLI::IsMember({"self", "other"}))
        ->capture_default_str();
    all_cmd->add_option("--fit-corpus", pc_fit_corpus, "fitting split corpus (fit-on other)");
    all_cmd->add_option("--fit-sessions", pc_fit_sessions, "fitting split sessions");
    all_cmd->add_option("--fit-qrels", pc_fit_qrels, "fitting split qrels");
    all_cmd->add_option("--fit-fixtures", pc_fit_fixtures, "fitting split mock fixtures");
    all_cmd->add_option("--fit-tag", pc.fit_split.tag, "fitting split tag");
    all_cmd->add_option("--weights", pc_weights, "pre-fitted weights.json; skips fitting");
    all_cmd->add_option("--metric", pc.metric, "objective metric")->capture_default_str();
    all_cmd->add_option("--step", pc.step, "grid step")->capture_default_str();
    all_cmd->add_option("--threads", pc.threads, "fitting threads, 0 = all cores")->capture_default_str();
    all_cmd->add_option("--metrics", pc.eval_metrics, "evaluation metrics")->capture_default_str();
    all_cmd->add_option("--rel-threshold", pc_threshold, "minimum relevant grade")->capture_default_str();
    all_cmd->add_option("--gain", pc_gain, "linear or exponential")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    CLI::App* chosen = app.get_subcommands().front();
    try {
        if (chosen == index_cmd) {
            const auto index = InvertedIndex::build(parse_corpus(read_file(ix_corpus)), ix_params);
            index.save(ix_out);
            std::fprintf(stderr, "indexed %zu passages, %zu terms\n", index.num_docs(), index.num_terms());
        } else if (chosen == ref_cmd) {
            const auto sessions = parse_sessions(read_file(rf_sessions));
            auto client = make_chat_client(rf_backend, rf_fixtures, rf_mock_default, rf_model);
            ResponseCache cache(rf_cache);
            ReformulatorOptions options;
            options.retries = rf_retries;
            options.max_in_flight = rf_in_flight;
            Reformulator reformulator(*client, PromptTemplate::standard(), &cache, options);
            const auto bundles = reformulator.reformulate_all(sessions);
            write_output(rf_out, write_bundles(bundles));
            std::size_t degraded = 0;
            for (const auto& b : bundles) degraded += b.degraded ? 1 : 0;
            std::fprintf(stderr, "reformulated %zu turns (%zu degraded, %zu upstream calls)\n", bundles.size(),
                         degraded, reformulator.upstream_calls());
        } else if (chosen == ret_cmd) {
            const auto index = rt_index.empty() ? InvertedIndex::build(parse_corpus(read_file(rt_corpus)))
                                                : InvertedIndex::load(rt_index);
            const auto bundles = parse_bundles(read_file(rt_bundles));
            Bm25Retriever retriever(index);
            write_variant_runs(quantize(retrieve_variants(retriever, bundles, rt_top_k)), rt_out_dir);
        } else if (chosen == fit_cmd) {
            const auto bundles = parse_bundles(read_file(fw_bundles));
            const auto runs = read_variant_runs(fw_runs_dir);
            const auto qrels = parse_qrels(read_file(fw_qrels));
            FitOptions options;
            options.metric = MetricSpec::parse(fw_metric);
            options.metric_options = metric_options(fw_threshold, fw_gain);
            options.step = fw_step;
            options.depth = fw_depth;
            options.threads = fw_threads;
            options.fitted_on = fw_fitted_on.empty() ? fs::path(fw_bundles).parent_path().filename().string()
                                                     : fw_fitted_on;
            const auto lists = normalized_lists(runs, bundle_topics(bundles));
            const auto table = fit_level_weights(group_by_level(bundles, lists), qrels, options);
            write_output(fw_out, table.to_json());
        } else if (chosen == est_cmd) {
            const auto bundles = parse_bundles(read_file(es_bundles));
            HashingEmbedder embedder(es_dim);
            std::map<std::string, const ConversationSession*> session_of;
            std::vector<ConversationSession> sessions;
            if (es_method == "entropy") {
                if (es_sessions.empty()) throw InvalidArgument("entropy needs --sessions");
                sessions = parse_sessions(read_file(es_sessions));
                for (const auto& s : sessions) {
                    for (const auto& t : s.turns) session_of[make_topic_id(s.session_id, t.turn_id)] = &s;
                }
            }
            VariantRuns runs;
            Corpus corpus;
            if (es_method == "deps") {
                if (es_runs_dir.empty() || es_corpus.empty()) throw InvalidArgument("deps needs --runs-dir and --corpus");
                runs = read_variant_runs(es_runs_dir);
                corpus = parse_corpus(read_file(es_corpus));
            }
            nlohmann::ordered_json doc;
            doc["method"] = es_method;
            doc["turns"] = nlohmann::ordered_json::object();
            std::vector<std::string> flagged;
            for (std::size_t i = 0; i < bundles.size(); ++i) {
                const auto& b = bundles[i];
                WeightVector w = WeightVector::equal(kNumVariants);
                if (es_method == "random") {
                    w = random_weight(kNumVariants, es_seed + i);
                } else if (es_method == "entropy") {
                    const auto it = session_of.find(b.topic_id);
                    if (it == session_of.end()) throw InvalidArgument("no session for topic " + b.topic_id);
                    const auto dist = profile_distribution(it->second->user_profile, embedder);
                    const auto est = entropy_weight(dist, es_log == "2" ? LogBase::kTwo : LogBase::kNatural);
                    if (est.flagged) flagged.push_back(b.topic_id);
                    w = estimator_to_vector(est.value, kNumVariants);
                } else if (es_method == "deps") {
                    const auto it = runs[1].find(b.topic_id);
                    const ScoredList empty;
                    const auto est = deps_weight(b.retrieval_texts()[2], it == runs[1].end() ? empty : it->second,
                                                 corpus, embedder, es_deps_depth);
                    if (est.flagged) flagged.push_back(b.topic_id);
                    w = estimator_to_vector(est.value, kNumVariants);
                }
                doc["turns"][b.topic_id] = w.values();
            }
            doc["flagged"] = flagged;
            write_output(es_out, doc.dump(2) + "\n");
        } else if (chosen == fuse_cmd) {
            const auto runs = runs_from_args(fu_runs_dir, fu_runs);
            const auto topics = fu_bundles.empty() ? run_topics(runs)
                                                   : bundle_topics(parse_bundles(read_file(fu_bundles)));
            const auto lists = normalized_lists(runs, topics);
            Run fused;
            if (fu_strategy == "linear") {
                const int sources = !fu_weights.empty() + !fu_table.empty() + !fu_turn_weights.empty();
                if (sources != 1) {
                    throw InvalidArgument("linear fusion needs exactly one of --weights, --weights-table, --turn-weights");
                }
                if (!fu_table.empty()) {
                    if (fu_bundles.empty()) throw InvalidArgument("--weights-table needs --bundles");
                    const auto table = LevelWeightTable::from_json(read_file(fu_table));
                    fused = apply_weights(table, levels_of(parse_bundles(read_file(fu_bundles))), lists, fu_depth);
                } else if (!fu_turn_weights.empty()) {
                    const auto doc = nlohmann::json::parse(read_file(fu_turn_weights));
                    std::map<std::string, WeightVector> per_turn;
                    for (const auto& [topic, values] : doc.at("turns").items()) {
                        per_turn.emplace(topic, WeightVector(values.get<std::vector<double>>()));
                    }
                    fused = apply_turn_weights(per_turn, lists, fu_depth);
                } else {
                    std::vector<double> w;
                    for (const auto& part : CLI::detail::split(fu_weights, ',')) w.push_back(std::stod(part));
                    std::map<std::string, WeightVector> per_turn;
                    for (const auto& topic : topics) per_turn.emplace(topic, WeightVector(w));
                    fused = apply_turn_weights(per_turn, lists, fu_depth);
                }
            } else {
                for (const auto& [topic, topic_lists] : lists) {
                    auto list = fu_strategy == "rrf" ? rrf_fuse(topic_lists, fu_rrf_k, fu_depth)
                                                     : round_robin_fuse(topic_lists, fu_depth);
                    list.topic_id = topic;
                    fused.emplace(topic, std::move(list));
                }
            }
            write_output(fu_out, write_run(fused, kFusedRunTag));
        } else if (chosen == eval_cmd) {
            auto specs = parse_metric_list(ev_metrics);
            if (ev_mrr_cutoff > 0) {
                for (auto& s : specs) {
                    if (s.kind == MetricKind::kMrr && !s.cutoff) s.cutoff = ev_mrr_cutoff;
                }
            }
            const auto report = evaluate_run(parse_run(read_file(ev_run)), parse_qrels(read_file(ev_qrels)), specs,
                                             metric_options(ev_threshold, ev_gain));
            if (!ev_per_topic.empty()) write_file_atomic(ev_per_topic, report.to_csv());
            if (!ev_json.empty()) write_file_atomic(ev_json, report.to_json());
            for (std::size_t i = 0; i < specs.size(); ++i) {
                std::printf("%-12s all %.4f\n", specs[i].name().c_str(), report.means[i]);
            }
        } else if (chosen == synth_cmd) {
            const auto collection = generate_synthetic(sy);
            fs::create_directories(sy_out);
            write_synthetic(collection, sy_out);
            std::fprintf(stderr, "wrote %zu passages, %zu sessions, %zu judgments to %s\n",
                         collection.corpus.size(), collection.sessions.size(), collection.qrels.size(),
                         sy_out.c_str());
        } else if (chosen == all_cmd) {
            pc.split.corpus = pc_corpus;
            pc.split.sessions = pc_sessions;
            pc.split.qrels = pc_qrels;
            pc.split.fixtures = pc_fixtures;
            pc.out_dir = pc_out;
            pc.cache_dir = pc_cache;
            pc.weights = pc_weights;
            pc.fit_split.corpus = pc_fit_corpus;
            pc.fit_split.sessions = pc_fit_sessions;
            pc.fit_split.qrels = pc_fit_qrels;
            pc.fit_split.fixtures = pc_fit_fixtures;
            pc.metric_options = metric_options(pc_threshold, pc_gain);
            if (pc.fit_on == "other" && pc_weights.empty() &&
                (pc_fit_corpus.empty() || pc_fit_sessions.empty() || pc_fit_qrels.empty())) {
                throw InvalidArgument("--fit-on other needs --fit-corpus, --fit-sessions and --fit-qrels");
            }
            const auto result = run_pipeline(pc);
            if (result.report) {
                for (std::size_t i = 0; i < result.report->specs.size(); ++i) {
                    std::printf("%-12s fused %.4f", result.report->specs[i].name().c_str(), result.report->means[i]);
                    for (std::size_t v = 0; v < kNumVariants; ++v) {
                        std::printf("  %s %.4f", std::string(kVariantNames[v]).c_str(),
                                    result.variant_reports[v]->means[i]);
                    }
                    std::printf("\n");
                }
            }
            for (const auto level : kAllLevels) {
                std::printf("level %c weights %s\n", level_code(level), result.table.weights(level).to_string().c_str());
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "apcir %s: %s\n", chosen->get_name().c_str(), e.what());
        return 1;
    }
    return 0;
}
