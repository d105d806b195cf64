#include "apcir/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "apcir/error.hpp"
#include "apcir/retrieval.hpp"

namespace apcir {

namespace {

std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void normalize_in_place(Embedding& v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
        for (double& x : v) x /= norm;
    }
}

}  // namespace

HashingEmbedder::HashingEmbedder(std::size_t dimension) : dimension_(dimension) {
    if (dimension == 0) throw InvalidArgument("embedding dimension must be positive");
}

Embedding HashingEmbedder::embed(std::string_view text) const {
    Embedding v(dimension_, 0.0);
    const auto tokens = tokenize(text);
    if (tokens.empty()) {
        v[fnv1a("") % dimension_] = 1.0;
        return v;
    }
    for (const auto& t : tokens) v[fnv1a(t) % dimension_] += 1.0;
    normalize_in_place(v);
    return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double logistic(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

WeightVector random_weight(std::size_t m, std::uint64_t seed) {
    if (m == 0) throw InvalidArgument("weight vector needs at least one component");
    std::mt19937_64 rng(seed);
    std::vector<double> w(m);
    double sum = 0.0;
    for (auto& x : w) {
        // 53 random bits -> [0,1); avoids implementation-defined distributions
        x = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        sum += x;
    }
    if (!(sum > 0.0)) return WeightVector::equal(m);
    for (auto& x : w) x /= sum;
    return WeightVector(std::move(w));
}

WeightVector equal_weight(std::size_t m) { return WeightVector::equal(m); }

ProfileDistribution profile_distribution_from_embeddings(std::span<const Embedding> vectors) {
    const std::size_t k = vectors.size();
    ProfileDistribution dist;
    auto uniform = [&] {
        dist.probabilities.assign(k, k ? 1.0 / static_cast<double>(k) : 0.0);
        dist.flagged = true;
        return dist;
    };
    if (k <= 1) return uniform();

    std::vector<double> novelty(k, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double mean_sim = 0.0;
        for (std::size_t j = 0; j < k; ++j) mean_sim += dot(vectors[i], vectors[j]);
        mean_sim /= static_cast<double>(k);
        novelty[i] = std::max(0.0, 1.0 - mean_sim);
        total += novelty[i];
    }
    if (!(total > 1e-12)) return uniform();
    dist.probabilities.resize(k);
    for (std::size_t i = 0; i < k; ++i) dist.probabilities[i] = novelty[i] / total;
    return dist;
}

ProfileDistribution profile_distribution(std::span<const std::string> profile, const Embedder& embedder) {
    std::vector<Embedding> vectors;
    vectors.reserve(profile.size());
    for (const auto& s : profile) vectors.push_back(embedder.embed(s));
    return profile_distribution_from_embeddings(vectors);
}

Estimate entropy_weight(const ProfileDistribution& dist, LogBase base) {
    const auto& p = dist.probabilities;
    if (p.size() < 2) return Estimate{0.0, true};
    // a uniform distribution has entropy log K exactly; skip the rounding of the sum
    if (std::all_of(p.begin(), p.end(), [&](double x) { return x == p.front(); })) {
        return Estimate{1.0, dist.flagged};
    }
    auto log_fn = [base](double x) { return base == LogBase::kTwo ? std::log2(x) : std::log(x); };
    double h = 0.0;
    for (double pk : p) {
        if (pk > 0.0) h -= pk * log_fn(pk);
    }
    const double w3 = std::clamp(h / log_fn(static_cast<double>(p.size())), 0.0, 1.0);
    return Estimate{w3, dist.flagged};
}

double deps_weight_from_embeddings(std::span<const double> query, std::span<const double> aggregate) {
    return logistic(l2_distance(query, aggregate));
}

Estimate deps_weight(std::string_view personalized_text, const ScoredList& non_personalized,
                     const Corpus& corpus, const Embedder& embedder, std::size_t depth) {
    Embedding aggregate(embedder.dimension(), 0.0);
    std::size_t used = 0;
    for (const auto& e : non_personalized.entries) {
        if (used == depth) break;
        const auto* passage = corpus.find(e.passage_id);
        if (passage == nullptr) continue;
        const auto v = embedder.embed(passage->contents);
        for (std::size_t i = 0; i < aggregate.size(); ++i) aggregate[i] += v[i];
        ++used;
    }
    if (used == 0) return Estimate{0.5, true};
    for (double& x : aggregate) x /= static_cast<double>(used);
    normalize_in_place(aggregate);
    const auto query = embedder.embed(personalized_text);
    return Estimate{deps_weight_from_embeddings(query, aggregate), false};
}

WeightVector estimator_to_vector(double w3, std::size_t m) {
    if (m < 2) throw InvalidArgument("estimator_to_vector needs m >= 2");
    if (!(w3 >= 0.0 && w3 <= 1.0)) throw InvalidArgument("w3 must lie in [0,1]");
    std::vector<double> w(m, (1.0 - w3) / static_cast<double>(m - 1));
    w.back() = w3;
    return WeightVector(std::move(w));
}

}  // namespace apcir
