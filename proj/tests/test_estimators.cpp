#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "apcir/error.hpp"
#include "apcir/estimators.hpp"

using namespace apcir;

namespace {

Embedding unit(std::vector<double> v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
}

}  // namespace

TEST(Embedder, UnitNormAndDeterministic) {
    const HashingEmbedder e(64);
    const auto a = e.embed("Vegetarian food in Lisbon");
    EXPECT_EQ(a.size(), 64u);
    EXPECT_NEAR(dot(a, a), 1.0, 1e-12);
    EXPECT_EQ(a, e.embed("vegetarian FOOD, in lisbon!"));
    EXPECT_NEAR(dot(e.embed(""), e.embed("")), 1.0, 1e-12);
    EXPECT_THROW(HashingEmbedder(0), InvalidArgument);
}

TEST(Vectors, DotDistanceLogistic) {
    const std::vector<double> a = {1.0, 0.0};
    const std::vector<double> b = {0.0, 1.0};
    EXPECT_EQ(dot(a, b), 0.0);
    EXPECT_DOUBLE_EQ(l2_distance(a, b), std::sqrt(2.0));
    EXPECT_EQ(logistic(0.0), 0.5);
    EXPECT_THROW(dot(a, std::vector<double>{1.0}), InvalidArgument);
}

TEST(RandomWeight, ValidSeededAndReproducible) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto w = random_weight(3, seed);
        double sum = 0.0;
        for (double x : w.values()) {
            EXPECT_GE(x, 0.0);
            sum += x;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
        EXPECT_EQ(w, random_weight(3, seed));
    }
    EXPECT_NE(random_weight(3, 1), random_weight(3, 2));
}

TEST(EqualWeight, IsOneThird) {
    const auto w = equal_weight(3);
    for (double x : w.values()) EXPECT_DOUBLE_EQ(x, 1.0 / 3.0);
}

TEST(Entropy, UniformIsExactlyOne) {
    for (std::size_t k : {2u, 3u, 5u, 7u, 10u}) {
        ProfileDistribution d{std::vector<double>(k, 1.0 / static_cast<double>(k)), false};
        EXPECT_EQ(entropy_weight(d).value, 1.0);
        EXPECT_EQ(entropy_weight(d, LogBase::kTwo).value, 1.0);
    }
}

TEST(Entropy, SingleMassIsZero) {
    ProfileDistribution d{{1.0, 0.0, 0.0}, false};
    EXPECT_EQ(entropy_weight(d).value, 0.0);
}

TEST(Entropy, HandComputedThreePoint) {
    ProfileDistribution d{{0.5, 0.25, 0.25}, false};
    EXPECT_NEAR(entropy_weight(d, LogBase::kTwo).value, 1.5 / std::log2(3.0), 1e-12);
    EXPECT_NEAR(entropy_weight(d).value, 1.5 / std::log2(3.0), 1e-12);
}

TEST(Entropy, FewerThanTwoSentencesFlagged) {
    const auto e = entropy_weight(ProfileDistribution{{1.0}, true});
    EXPECT_EQ(e.value, 0.0);
    EXPECT_TRUE(e.flagged);
    EXPECT_TRUE(entropy_weight(ProfileDistribution{}).flagged);
}

TEST(ProfileDistribution, NoveltyWeights) {
    const std::vector<Embedding> v = {unit({1, 0}), unit({1, 0}), unit({0, 1})};
    const auto d = profile_distribution_from_embeddings(v);
    ASSERT_EQ(d.probabilities.size(), 3u);
    EXPECT_FALSE(d.flagged);
    // mean similarities: 2/3, 2/3, 1/3; novelty 1/3, 1/3, 2/3
    EXPECT_NEAR(d.probabilities[0], 0.25, 1e-12);
    EXPECT_NEAR(d.probabilities[1], 0.25, 1e-12);
    EXPECT_NEAR(d.probabilities[2], 0.5, 1e-12);
}

TEST(ProfileDistribution, DegenerateInputsFallBackToUniform) {
    const auto one = profile_distribution_from_embeddings(std::vector<Embedding>{unit({1, 2})});
    EXPECT_TRUE(one.flagged);
    EXPECT_EQ(one.probabilities, (std::vector<double>{1.0}));
    const auto same = profile_distribution_from_embeddings(std::vector<Embedding>{unit({1, 1}), unit({1, 1})});
    EXPECT_TRUE(same.flagged);
    EXPECT_EQ(same.probabilities, (std::vector<double>{0.5, 0.5}));
    EXPECT_EQ(entropy_weight(same).value, 1.0);
}

TEST(ProfileDistribution, FromSentences) {
    const HashingEmbedder e;
    const std::vector<std::string> profile = {"I am vegan", "I live in Porto", "I like jazz"};
    const auto d = profile_distribution(profile, e);
    double sum = 0.0;
    for (double p : d.probabilities) sum += p;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    const auto w = entropy_weight(d);
    EXPECT_GE(w.value, 0.0);
    EXPECT_LE(w.value, 1.0);
}

TEST(Deps, ZeroDistanceIsHalf) {
    const auto v = unit({0.3, 0.4, 0.5});
    EXPECT_EQ(deps_weight_from_embeddings(v, v), 0.5);
}

TEST(Deps, MonotoneInDistance) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    const auto base = unit({1, 0, 0, 0});
    for (int i = 0; i < 100; ++i) {
        const auto a = unit({n(rng), n(rng), n(rng), n(rng)});
        const auto b = unit({n(rng), n(rng), n(rng), n(rng)});
        const double da = l2_distance(a, base);
        const double db = l2_distance(b, base);
        const double wa = deps_weight_from_embeddings(a, base);
        const double wb = deps_weight_from_embeddings(b, base);
        if (da < db) {
            EXPECT_LE(wa, wb);
        }
        if (da > db) {
            EXPECT_GE(wa, wb);
        }
        EXPECT_GE(wa, 0.5);
        EXPECT_LT(wa, 1.0);
    }
}

TEST(Deps, UsesTopPassagesOfList) {
    Corpus corpus;
    corpus.add("p1", "jazz concerts tonight");
    corpus.add("p2", "football scores");
    const HashingEmbedder e;
    ScoredList list;
    list.entries = {{"p1", 2.0}, {"p2", 1.0}};
    const auto near = deps_weight("jazz concerts tonight", list, corpus, e, 1);
    const auto far = deps_weight("vegetable soup recipe", list, corpus, e, 1);
    EXPECT_FALSE(near.flagged);
    EXPECT_NEAR(near.value, 0.5, 1e-12);
    EXPECT_GT(far.value, near.value);
}

TEST(Deps, EmptyListFlagged) {
    Corpus corpus;
    corpus.add("p1", "x");
    const auto e = deps_weight("anything", ScoredList{}, corpus, HashingEmbedder{});
    EXPECT_EQ(e.value, 0.5);
    EXPECT_TRUE(e.flagged);
}

TEST(EstimatorToVector, SpreadsRemainder) {
    const auto w = estimator_to_vector(0.4);
    EXPECT_DOUBLE_EQ(w[0], 0.3);
    EXPECT_DOUBLE_EQ(w[1], 0.3);
    EXPECT_DOUBLE_EQ(w[2], 0.4);
    EXPECT_THROW(estimator_to_vector(1.2), InvalidArgument);
    EXPECT_THROW(estimator_to_vector(0.5, 1), InvalidArgument);
}
