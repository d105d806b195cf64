#pragma once

/** \file estimators.hpp
 *  \brief Baseline personalization-weight estimators.
 *
 * Each estimator yields a weight for the personalized list (w3) or a full
 * weight vector that linear fusion can use directly, without any grid search:
 * random, equal, user-profile entropy and DEPS (distance between the
 * personalized query and the aggregate of non-personalized results).
 */

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "apcir/fusion.hpp"
#include "apcir/types.hpp"

namespace apcir {

using Embedding = std::vector<double>;

/// Text encoder producing unit-norm vectors of a fixed dimension.
/// Implementations must be deterministic and safe for concurrent calls.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::size_t dimension() const noexcept = 0;
    virtual Embedding embed(std::string_view text) const = 0;
};

/** \brief Feature-hashed bag of words, L2-normalized.
 *
 * Each token adds 1 to bucket fnv1a(token) mod dimension. Text without
 * tokens maps to the unit vector of the empty-string bucket.
 */
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(std::size_t dimension = 256);
    std::size_t dimension() const noexcept override { return dimension_; }
    Embedding embed(std::string_view text) const override;

private:
    std::size_t dimension_;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_distance(std::span<const double> a, std::span<const double> b);
double logistic(double x) noexcept;

/// Estimator output: the weight plus whether a degenerate-input fallback fired.
struct Estimate {
    double value = 0.0;
    bool flagged = false;
};

struct ProfileDistribution {
    std::vector<double> probabilities;
    bool flagged = false;  ///< uniform fallback was used
};

/// M draws from [0,1] renormalized to sum 1. Deterministic for a seed on every platform.
WeightVector random_weight(std::size_t m, std::uint64_t seed);
WeightVector equal_weight(std::size_t m);

/** \brief p_k proportional to 1 - mean_j(v_k . v_j) over unit sentence embeddings.
 *
 * Falls back to uniform (flagged) when K <= 1 or when every sentence is
 * identical so the normalizer vanishes.
 */
ProfileDistribution profile_distribution(std::span<const std::string> profile, const Embedder& embedder);
ProfileDistribution profile_distribution_from_embeddings(std::span<const Embedding> vectors);

enum class LogBase { kNatural, kTwo };

/// Normalized Shannon entropy -sum p log p / log K, with 0 log 0 = 0. K < 2 gives 0, flagged.
Estimate entropy_weight(const ProfileDistribution& dist, LogBase base = LogBase::kNatural);

inline constexpr std::size_t kDefaultDepsDepth = 10;

/** \brief logistic(|| E(personalized) - aggregate ||_2).
 *
 * The aggregate is the mean embedding of the first \p depth passages of the
 * non-personalized list, re-normalized. An empty list gives 0.5, flagged.
 * Passages missing from the corpus are skipped.
 */
Estimate deps_weight(std::string_view personalized_text, const ScoredList& non_personalized,
                     const Corpus& corpus, const Embedder& embedder,
                     std::size_t depth = kDefaultDepsDepth);

/// w3 at a precomputed distance; exposed for the monotonicity checks.
double deps_weight_from_embeddings(std::span<const double> query, std::span<const double> aggregate);

/// Spread the remaining mass evenly: ((1-w3)/2, (1-w3)/2, w3) for M = 3.
WeightVector estimator_to_vector(double w3, std::size_t m = 3);

}  // namespace apcir
