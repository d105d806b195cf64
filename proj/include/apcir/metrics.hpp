#pragma once

/** \file metrics.hpp
 *  \brief TREC-style evaluation: MRR, NDCG@k, Recall@k.
 *
 * Conventions follow pytrec_eval defaults: linear gain, log2 discount,
 * unjudged passages count as grade 0, relevance threshold 1 for the binary
 * metrics.
 */

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "apcir/types.hpp"

namespace apcir {

enum class MetricKind { kMrr, kNdcg, kRecall };
enum class GainMode { kLinear, kExponential };

struct MetricSpec {
    MetricKind kind = MetricKind::kNdcg;
    std::optional<std::size_t> cutoff;  ///< required for NDCG and Recall

    /// Parses "mrr", "mrr@10", "ndcg@3", "recall@100" (case-insensitive).
    static MetricSpec parse(std::string_view text);
    std::string name() const;

    friend bool operator==(const MetricSpec&, const MetricSpec&) = default;
};

std::vector<MetricSpec> parse_metric_list(std::string_view comma_separated);

struct MetricOptions {
    int rel_threshold = 1;
    GainMode gain = GainMode::kLinear;
};

/// Reciprocal rank of the first passage with grade >= threshold; 0 if none.
double mrr(const ScoredList& list, const Qrels& qrels, int rel_threshold = 1,
           std::optional<std::size_t> cutoff = std::nullopt);
/// DCG@k / IDCG@k; IDCG is built from every judged grade of the topic.
double ndcg_at_k(const ScoredList& list, const Qrels& qrels, std::size_t k,
                 GainMode gain = GainMode::kLinear);
/// |relevant in top-k| / |relevant|; 0 when the topic has no relevant passage.
double recall_at_k(const ScoredList& list, const Qrels& qrels, std::size_t k, int rel_threshold = 1);

/// Dispatches on spec.kind.
double evaluate_metric(const ScoredList& list, const Qrels& qrels, const MetricSpec& spec,
                       const MetricOptions& options = {});

/** \brief Per-topic judgments flattened for repeated scoring of many rankings.
 *
 * Holds the ideal DCG prefix so a ranking only needs the grades of its top
 * positions. Used by the weight search hot loop.
 */
class TopicJudgments {
public:
    TopicJudgments() = default;
    TopicJudgments(const Qrels& qrels, const std::string& topic_id, const MetricOptions& options = {});

    int num_relevant() const noexcept { return num_relevant_; }
    const MetricOptions& options() const noexcept { return options_; }

    /// Metric value of a ranking given the grades at its first positions.
    /// \p ranked_grades must cover min(cutoff, list length) positions for
    /// NDCG/Recall and the whole list for uncut MRR.
    double score(std::span<const int> ranked_grades, const MetricSpec& spec) const;
    double ideal_dcg(std::size_t k) const;

private:
    std::vector<int> sorted_grades_;  ///< all judged grades, descending
    int num_relevant_ = 0;
    MetricOptions options_;
};

double gain_of(int grade, GainMode mode) noexcept;

struct EvaluationReport {
    std::vector<MetricSpec> specs;
    std::vector<std::string> topics;            ///< qrels topics, ascending
    std::vector<std::vector<double>> values;    ///< values[topic][spec]
    std::vector<std::vector<bool>> counted;     ///< whether values[t][s] enters the mean
    std::vector<double> means;                  ///< macro mean per spec

    std::string to_csv() const;
    std::string to_json() const;
};

/** \brief Evaluate a run against qrels.
 *
 * Means are over qrels topics; a topic missing from the run scores 0.
 * Recall excludes topics without relevant passages from its mean.
 */
EvaluationReport evaluate_run(const Run& run, const Qrels& qrels, std::span<const MetricSpec> specs,
                              const MetricOptions& options = {});

}  // namespace apcir
