#pragma once

/** \file fusion.hpp
 *  \brief Score normalization and ranking-list fusion.
 *
 * Three fusers are provided: weighted linear combination of min-max
 * normalized scores, reciprocal rank fusion, and round-robin interleaving.
 * All are pure functions; outputs are in canonical order.
 */

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "apcir/types.hpp"

namespace apcir {

inline constexpr std::size_t kDefaultFusionDepth = 1000;
inline constexpr double kWeightSumTolerance = 1e-9;

/// Fusion weights on the probability simplex.
class WeightVector {
public:
    WeightVector() = default;
    /// Throws InvalidArgument unless every weight is in [0,1] and the sum is 1 within 1e-9.
    explicit WeightVector(std::vector<double> weights);

    static WeightVector equal(std::size_t m);
    static bool is_valid(const std::vector<double>& weights) noexcept;

    const std::vector<double>& values() const noexcept { return weights_; }
    std::size_t size() const noexcept { return weights_.size(); }
    double operator[](std::size_t i) const { return weights_.at(i); }

    std::string to_string() const;

    friend bool operator==(const WeightVector&, const WeightVector&) = default;
    friend auto operator<=>(const WeightVector& a, const WeightVector& b) {
        return a.weights_ <=> b.weights_;
    }

private:
    std::vector<double> weights_;
};

/** \brief Map scores onto [0,1] with (s - min) / (max - min).
 *
 * When every score is equal the list maps to the constant 0.5. An empty
 * list is returned unchanged.
 */
ScoredList minmax_normalize(const ScoredList& list);

/** \brief Weighted sum of per-list scores.
 *
 * A passage missing from list m contributes 0 for that list. The result is
 * sorted canonically and truncated to \p depth. Throws InvalidArgument if the
 * weight count differs from the list count.
 */
ScoredList linear_fuse(const WeightVector& weights, std::span<const ScoredList> lists,
                       std::size_t depth = kDefaultFusionDepth);

/// score(p) = sum over lists of 1 / (k + rank), ranks 1-based. Throws on k <= 0.
ScoredList rrf_fuse(std::span<const ScoredList> lists, double k = 60.0,
                    std::size_t depth = kDefaultFusionDepth);

/// Interleave list heads in list order, skipping passages already emitted.
/// Output scores are 1/position.
ScoredList round_robin_fuse(std::span<const ScoredList> lists,
                            std::size_t depth = kDefaultFusionDepth);

}  // namespace apcir
