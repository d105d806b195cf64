#pragma once

/** \file weight_opt.hpp
 *  \brief Per-level fusion weights fitted by exhaustive simplex grid search.
 *
 * Turns are grouped by personalization level. For every level the search
 * scores each grid point w by the sum over the group's turns of
 * metric(linear_fuse(w, lists)), keeps the maximum, and breaks ties toward
 * the lexicographically smallest vector. The fitted table is then applied
 * turn by turn according to each turn's level.
 */

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "apcir/fusion.hpp"
#include "apcir/metrics.hpp"
#include "apcir/types.hpp"

namespace apcir {

/** \brief All vectors with components in {0, step, ..., 1} summing to 1.
 *
 * Lexicographically ascending. Requires m >= 2 and 1/step integral (within
 * 1e-9); throws InvalidArgument otherwise.
 */
std::vector<WeightVector> enumerate_simplex(std::size_t m, double step);

/// Number of grid points for m components and 1/step increments.
std::size_t simplex_size(std::size_t m, std::size_t increments);

/// One validation turn: its topic id and its M normalized ranking lists.
struct TurnEvidence {
    std::string topic_id;
    std::vector<ScoredList> lists;
};

using LevelGroups = std::map<PersonalizationLevel, std::vector<TurnEvidence>>;

struct FitOptions {
    MetricSpec metric{MetricKind::kNdcg, 3};
    MetricOptions metric_options;
    double step = 0.01;
    std::size_t depth = kDefaultFusionDepth;
    unsigned threads = 0;  ///< 0 = hardware concurrency
    std::string fitted_on;
};

struct LevelFit {
    WeightVector weights;
    std::optional<double> objective;  ///< absent when the level was not fitted
    bool fitted = false;
};

class LevelWeightTable {
public:
    LevelWeightTable() = default;

    void set(PersonalizationLevel level, LevelFit fit) { levels_[level] = std::move(fit); }
    const LevelFit& fit(PersonalizationLevel level) const;
    const WeightVector& weights(PersonalizationLevel level) const { return fit(level).weights; }
    bool has(PersonalizationLevel level) const { return levels_.count(level) != 0; }
    std::set<PersonalizationLevel> unfitted() const;

    std::string metric;
    double step = 0.0;
    std::string fitted_on;

    /// {"metric","step","fitted_on","levels":{"a":[..],"b":[..],"c":[..]},"unfitted":[..],"objective":{..}}
    std::string to_json() const;
    /// Throws SchemaError when a level is missing or a vector is invalid.
    static LevelWeightTable from_json(std::string_view text);

    /// Same weights for every level.
    static LevelWeightTable uniform(const WeightVector& weights);

private:
    std::map<PersonalizationLevel, LevelFit> levels_;
};

/** \brief One turn prepared for fast repeated scoring.
 *
 * The union of passages of all lists is laid out by ascending id with a
 * dense score row per passage, so evaluating a weight vector costs one pass
 * over the union instead of a hash-merge. Scores are accumulated in list
 * order exactly like linear_fuse, so the values are bit-identical.
 */
class FusionProblem {
public:
    FusionProblem(const TurnEvidence& turn, const Qrels& qrels, const MetricOptions& options);

    double evaluate(std::span<const double> weights, const MetricSpec& spec, std::size_t depth) const;
    std::size_t num_lists() const noexcept { return num_lists_; }
    std::size_t num_passages() const noexcept { return ids_.size(); }

private:
    std::size_t num_lists_ = 0;
    std::vector<std::string> ids_;
    std::vector<double> scores_;  ///< row-major [passage][list]
    std::vector<int> grades_;
    std::vector<std::size_t> relevant_;
    TopicJudgments judged_;
};

/// Sum of per-turn metric values, computed through linear_fuse and evaluate_metric.
double group_objective(std::span<const TurnEvidence> group, const Qrels& qrels,
                       const WeightVector& weights, const FitOptions& options);

/** \brief Fit one weight vector per level.
 *
 * A level with no turns receives the equal-weight vector and is reported
 * unfitted.
 */
LevelWeightTable fit_level_weights(const LevelGroups& groups, const Qrels& qrels,
                                   const FitOptions& options);

/// Fuse each topic's lists with the weights of its level.
/// Throws InvalidArgument naming the topic when its lists are missing.
Run apply_weights(const LevelWeightTable& table,
                  const std::map<std::string, PersonalizationLevel>& levels,
                  const std::map<std::string, std::vector<ScoredList>>& lists,
                  std::size_t depth = kDefaultFusionDepth);

/// Fuse each topic's lists with its own weight vector.
Run apply_turn_weights(const std::map<std::string, WeightVector>& weights,
                       const std::map<std::string, std::vector<ScoredList>>& lists,
                       std::size_t depth = kDefaultFusionDepth);

}  // namespace apcir
