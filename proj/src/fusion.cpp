#include "apcir/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "apcir/error.hpp"

namespace apcir {

namespace {

std::string common_topic(std::span<const ScoredList> lists) {
    for (const auto& l : lists) {
        if (!l.topic_id.empty()) return l.topic_id;
    }
    return {};
}

void finish(ScoredList& out, std::size_t depth) {
    if (out.entries.size() > depth) {
        std::partial_sort(out.entries.begin(), out.entries.begin() + static_cast<std::ptrdiff_t>(depth),
                          out.entries.end(), ranks_before);
        out.entries.resize(depth);
    } else {
        std::sort(out.entries.begin(), out.entries.end(), ranks_before);
    }
}

}  // namespace

WeightVector::WeightVector(std::vector<double> weights) : weights_(std::move(weights)) {
    if (!is_valid(weights_)) {
        throw InvalidArgument("invalid weight vector " + to_string() +
                              ": weights must lie in [0,1] and sum to 1");
    }
}

bool WeightVector::is_valid(const std::vector<double>& weights) noexcept {
    if (weights.empty()) return false;
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0 && w <= 1.0)) return false;
        sum += w;
    }
    return std::abs(sum - 1.0) <= kWeightSumTolerance;
}

WeightVector WeightVector::equal(std::size_t m) {
    if (m == 0) throw InvalidArgument("weight vector needs at least one component");
    return WeightVector(std::vector<double>(m, 1.0 / static_cast<double>(m)));
}

std::string WeightVector::to_string() const {
    std::ostringstream ss;
    ss << '(';
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        if (i) ss << ", ";
        ss << weights_[i];
    }
    ss << ')';
    return ss.str();
}

ScoredList minmax_normalize(const ScoredList& list) {
    ScoredList out = list;
    if (out.entries.empty()) return out;
    auto [lo, hi] = std::minmax_element(out.entries.begin(), out.entries.end(),
                                        [](const ScoredEntry& a, const ScoredEntry& b) {
                                            return a.score < b.score;
                                        });
    const double s_min = lo->score;
    const double s_max = hi->score;
    if (!(s_max > s_min)) {
        for (auto& e : out.entries) e.score = 0.5;
    } else {
        const double range = s_max - s_min;
        for (auto& e : out.entries) e.score = (e.score - s_min) / range;
    }
    out.sort_entries();
    return out;
}

ScoredList linear_fuse(const WeightVector& weights, std::span<const ScoredList> lists,
                       std::size_t depth) {
    if (weights.size() != lists.size()) {
        throw InvalidArgument("linear_fuse: " + std::to_string(weights.size()) + " weights for " +
                              std::to_string(lists.size()) + " lists");
    }
    ScoredList out;
    out.topic_id = common_topic(lists);
    std::unordered_map<std::string_view, std::size_t> slot;
    for (std::size_t m = 0; m < lists.size(); ++m) {
        const double w = weights[m];
        for (const auto& e : lists[m].entries) {
            auto [it, inserted] = slot.emplace(e.passage_id, out.entries.size());
            if (inserted) out.entries.push_back(ScoredEntry{e.passage_id, 0.0});
            out.entries[it->second].score += w * e.score;
        }
    }
    finish(out, depth);
    return out;
}

ScoredList rrf_fuse(std::span<const ScoredList> lists, double k, std::size_t depth) {
    if (!(k > 0.0)) throw InvalidArgument("rrf_fuse: k must be positive");
    ScoredList out;
    out.topic_id = common_topic(lists);
    std::unordered_map<std::string_view, std::size_t> slot;
    for (const auto& list : lists) {
        for (std::size_t r = 0; r < list.entries.size(); ++r) {
            const auto& e = list.entries[r];
            auto [it, inserted] = slot.emplace(e.passage_id, out.entries.size());
            if (inserted) out.entries.push_back(ScoredEntry{e.passage_id, 0.0});
            out.entries[it->second].score += 1.0 / (k + static_cast<double>(r + 1));
        }
    }
    finish(out, depth);
    return out;
}

ScoredList round_robin_fuse(std::span<const ScoredList> lists, std::size_t depth) {
    ScoredList out;
    out.topic_id = common_topic(lists);
    std::unordered_set<std::string_view> emitted;
    std::size_t longest = 0;
    for (const auto& l : lists) longest = std::max(longest, l.entries.size());
    for (std::size_t r = 0; r < longest && out.entries.size() < depth; ++r) {
        for (const auto& list : lists) {
            if (r >= list.entries.size()) continue;
            const auto& id = list.entries[r].passage_id;
            if (!emitted.insert(id).second) continue;
            out.entries.push_back(ScoredEntry{id, 1.0 / static_cast<double>(out.entries.size() + 1)});
            if (out.entries.size() == depth) break;
        }
    }
    return out;
}

}  // namespace apcir
