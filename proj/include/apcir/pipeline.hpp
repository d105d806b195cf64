#pragma once

/** \file pipeline.hpp
 *  \brief End-to-end orchestration and the synthetic collection generator.
 *
 * run_pipeline() chains reformulation, per-variant BM25 retrieval, min-max
 * normalization, grouping by level, weight fitting (or loading), fusion and
 * evaluation. Every stage artifact is written to the output directory so the
 * individual CLI subcommands can replay any stage.
 */

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "apcir/fusion.hpp"
#include "apcir/metrics.hpp"
#include "apcir/reformulate.hpp"
#include "apcir/retrieval.hpp"
#include "apcir/types.hpp"
#include "apcir/weight_opt.hpp"

namespace apcir {

inline constexpr std::size_t kNumVariants = 3;
/// Variant names; run files are <name>.run and list tags are <topic>__<name>.
inline constexpr std::array<std::string_view, kNumVariants> kVariantNames = {"qprime", "qprime_r",
                                                                             "personalized"};
inline constexpr std::size_t kDefaultRetrievalDepth = 1000;
/// Tag column of fused run files.
inline constexpr std::string_view kFusedRunTag = "apcir-fused";

using VariantRuns = std::array<Run, kNumVariants>;
using TopicLists = std::map<std::string, std::vector<ScoredList>>;

/// "<topic>__<variant name>"
std::string variant_tag(std::string_view topic_id, std::size_t variant);

/** \brief Chat backend by name: mock, echo or http.
 *
 * mock reads \p fixtures (sha256(prompt) -> response JSON); http reads its
 * endpoint and key from the environment.
 */
std::unique_ptr<ChatClient> make_chat_client(std::string_view backend, const std::filesystem::path& fixtures,
                                             bool mock_default = false, std::string model = "gpt-4o");

/// Retrieve the three texts of every bundle.
VariantRuns retrieve_variants(const Retriever& retriever, std::span<const ReformulationBundle> bundles,
                              std::size_t top_k = kDefaultRetrievalDepth);

/// Pass runs through their 6-decimal file form so in-memory and replayed results agree.
VariantRuns quantize(const VariantRuns& runs);

/// Per topic, the min-max normalized lists in variant order. Topics missing
/// from a run get an empty list for that variant.
TopicLists normalized_lists(const VariantRuns& runs, std::span<const std::string> topics);

std::map<std::string, PersonalizationLevel> levels_of(std::span<const ReformulationBundle> bundles);

LevelGroups group_by_level(std::span<const ReformulationBundle> bundles, const TopicLists& lists);

void write_variant_runs(const VariantRuns& runs, const std::filesystem::path& dir);
VariantRuns read_variant_runs(const std::filesystem::path& dir);

// --- synthetic data ---------------------------------------------------------

struct SyntheticConfig {
    std::uint64_t seed = 1;
    std::size_t sessions = 10;
    std::size_t turns_per_session = 3;
    std::size_t passages = 1000;
    std::string tag;  ///< defaults to "synth-<seed>"
};

struct SyntheticCollection {
    std::string tag;
    Corpus corpus;
    std::vector<ConversationSession> sessions;
    Qrels qrels;
    std::map<std::string, std::string> fixtures;  ///< sha256(prompt) -> canned response
};

/** \brief Deterministic desk-scale collection.
 *
 * Turn levels cycle through a, b, c. Level-a turns are answered by the
 * non-personalized rewrite while the third variant drifts to off-topic
 * passages; level-c turns can only be answered through profile terms, so
 * only the personalized variant reaches the relevant passages.
 */
SyntheticCollection generate_synthetic(const SyntheticConfig& config);

/// corpus.jsonl, sessions.json, qrels.txt, fixtures.json
void write_synthetic(const SyntheticCollection& collection, const std::filesystem::path& dir);

// --- end-to-end ------------------------------------------------------------

struct SplitInputs {
    std::filesystem::path corpus;
    std::filesystem::path sessions;
    std::filesystem::path qrels;     ///< optional for the apply split when weights are supplied
    std::filesystem::path fixtures;  ///< mock backend only
    std::string tag;
};

struct PipelineConfig {
    SplitInputs split;
    std::filesystem::path out_dir;

    std::string backend = "mock";  ///< mock | echo | http
    bool mock_default = false;     ///< mock falls back to echo on unknown prompts
    std::filesystem::path cache_dir;
    std::string model = "gpt-4o";
    std::size_t max_in_flight = 4;

    Bm25Params bm25;
    std::size_t top_k = kDefaultRetrievalDepth;
    std::size_t fusion_depth = kDefaultFusionDepth;

    std::string fit_on = "self";  ///< self | other
    SplitInputs fit_split;        ///< used when fit_on == "other"
    std::filesystem::path weights;  ///< pre-fitted table; skips fitting when set
    std::string metric = "ndcg@3";
    double step = 0.01;
    unsigned threads = 0;

    std::string eval_metrics = "mrr,ndcg@3,recall@10,recall@100";
    MetricOptions metric_options;
};

struct SplitArtifacts {
    std::vector<ConversationSession> sessions;
    std::vector<ReformulationBundle> bundles;
    VariantRuns runs;  ///< quantized
    TopicLists lists;  ///< normalized
    std::optional<Qrels> qrels;
};

struct PipelineResult {
    SplitArtifacts split;
    LevelWeightTable table;
    Run final_run;
    std::optional<EvaluationReport> report;
    std::array<std::optional<EvaluationReport>, kNumVariants> variant_reports;
    std::optional<LevelWeightTable> self_table;  ///< fit-on-other also reports the self fit
    std::optional<EvaluationReport> self_report;
    std::string final_run_text;
};

/// Reformulate and retrieve one split.
SplitArtifacts process_split(const SplitInputs& inputs, const PipelineConfig& config);

/** \brief Whole pipeline; writes bundles.json, runs/, weights.json, final.run, report.json.
 *
 * Outputs are only written after every stage succeeded. Failures surface as
 * StageError naming the stage.
 */
PipelineResult run_pipeline(const PipelineConfig& config);

}  // namespace apcir
