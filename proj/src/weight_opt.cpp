#include "apcir/weight_opt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "apcir/error.hpp"

namespace apcir {

namespace {

constexpr std::size_t kMaxGridPoints = 20'000'000;

void compositions(std::size_t m, std::size_t remaining, std::vector<std::size_t>& prefix,
                  std::vector<std::vector<std::size_t>>& out) {
    if (prefix.size() + 1 == m) {
        prefix.push_back(remaining);
        out.push_back(prefix);
        prefix.pop_back();
        return;
    }
    for (std::size_t c = 0; c <= remaining; ++c) {
        prefix.push_back(c);
        compositions(m, remaining - c, prefix, out);
        prefix.pop_back();
    }
}

std::size_t increments_for(double step) {
    if (!(step > 0.0) || step > 1.0) throw InvalidArgument("grid step must lie in (0, 1]");
    const double inv = 1.0 / step;
    const double rounded = std::round(inv);
    if (std::abs(rounded * step - 1.0) > 1e-9) {
        throw InvalidArgument("grid step " + std::to_string(step) + " does not divide 1");
    }
    return static_cast<std::size_t>(rounded);
}

}  // namespace

std::size_t simplex_size(std::size_t m, std::size_t increments) {
    // C(increments + m - 1, m - 1), saturating
    long double count = 1.0L;
    for (std::size_t i = 1; i < m; ++i) {
        count = count * static_cast<long double>(increments + i) / static_cast<long double>(i);
    }
    if (count > static_cast<long double>(std::numeric_limits<std::size_t>::max() / 2)) {
        return std::numeric_limits<std::size_t>::max();
    }
    return static_cast<std::size_t>(std::llround(count));
}

std::vector<WeightVector> enumerate_simplex(std::size_t m, double step) {
    if (m < 2) throw InvalidArgument("simplex needs at least 2 components");
    const std::size_t n = increments_for(step);
    if (simplex_size(m, n) > kMaxGridPoints) throw InvalidArgument("simplex grid too large");

    std::vector<std::vector<std::size_t>> points;
    std::vector<std::size_t> prefix;
    compositions(m, n, prefix, points);

    std::vector<WeightVector> out;
    out.reserve(points.size());
    const double denom = static_cast<double>(n);
    for (const auto& p : points) {
        std::vector<double> w(m);
        for (std::size_t i = 0; i < m; ++i) w[i] = static_cast<double>(p[i]) / denom;
        out.emplace_back(std::move(w));
    }
    return out;
}

const LevelFit& LevelWeightTable::fit(PersonalizationLevel level) const {
    auto it = levels_.find(level);
    if (it == levels_.end()) {
        throw InvalidArgument(std::string("weight table has no entry for level ") + level_code(level));
    }
    return it->second;
}

std::set<PersonalizationLevel> LevelWeightTable::unfitted() const {
    std::set<PersonalizationLevel> out;
    for (const auto& [level, fit] : levels_) {
        if (!fit.fitted) out.insert(level);
    }
    return out;
}

std::string LevelWeightTable::to_json() const {
    nlohmann::ordered_json doc;
    doc["metric"] = metric;
    doc["step"] = step;
    doc["fitted_on"] = fitted_on;
    doc["levels"] = nlohmann::ordered_json::object();
    doc["unfitted"] = nlohmann::ordered_json::array();
    doc["objective"] = nlohmann::ordered_json::object();
    for (const auto& [level, fit] : levels_) {
        const std::string code(1, level_code(level));
        doc["levels"][code] = fit.weights.values();
        if (!fit.fitted) doc["unfitted"].push_back(code);
        if (fit.objective) doc["objective"][code] = *fit.objective;
    }
    return doc.dump(2) + "\n";
}

LevelWeightTable LevelWeightTable::from_json(std::string_view text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("weights: malformed JSON: ") + e.what(), 0, e.byte);
    }
    if (!doc.is_object() || !doc.contains("levels") || !doc["levels"].is_object()) {
        throw SchemaError("weights: missing required field \"levels\"");
    }
    LevelWeightTable table;
    table.metric = doc.value("metric", std::string());
    table.step = doc.value("step", 0.0);
    table.fitted_on = doc.value("fitted_on", std::string());
    std::set<std::string> unfitted;
    if (doc.contains("unfitted")) {
        for (const auto& u : doc["unfitted"]) unfitted.insert(u.get<std::string>());
    }
    for (auto level : kAllLevels) {
        const std::string code(1, level_code(level));
        const auto& levels = doc["levels"];
        if (!levels.contains(code)) throw SchemaError("weights: missing level \"" + code + "\"");
        std::vector<double> w;
        try {
            w = levels[code].get<std::vector<double>>();
        } catch (const nlohmann::json::exception&) {
            throw SchemaError("weights: level \"" + code + "\" must be an array of numbers");
        }
        LevelFit fit;
        try {
            fit.weights = WeightVector(std::move(w));
        } catch (const InvalidArgument& e) {
            throw SchemaError("weights: level \"" + code + "\": " + e.what());
        }
        fit.fitted = unfitted.count(code) == 0;
        if (doc.contains("objective") && doc["objective"].contains(code)) {
            fit.objective = doc["objective"][code].get<double>();
        }
        table.set(level, std::move(fit));
    }
    return table;
}

LevelWeightTable LevelWeightTable::uniform(const WeightVector& weights) {
    LevelWeightTable table;
    for (auto level : kAllLevels) table.set(level, LevelFit{weights, std::nullopt, true});
    return table;
}

FusionProblem::FusionProblem(const TurnEvidence& turn, const Qrels& qrels, const MetricOptions& options)
    : num_lists_(turn.lists.size()), judged_(qrels, turn.topic_id, options) {
    std::vector<std::string> ids;
    for (const auto& list : turn.lists) {
        for (const auto& e : list.entries) ids.push_back(e.passage_id);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    ids_ = std::move(ids);

    std::unordered_map<std::string_view, std::size_t> index;
    index.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) index.emplace(ids_[i], i);

    scores_.assign(ids_.size() * num_lists_, 0.0);
    for (std::size_t m = 0; m < num_lists_; ++m) {
        for (const auto& e : turn.lists[m].entries) scores_[index.at(e.passage_id) * num_lists_ + m] = e.score;
    }
    grades_.assign(ids_.size(), 0);
    if (const auto* judged = qrels.find(turn.topic_id)) {
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            auto it = judged->find(ids_[i]);
            if (it != judged->end()) grades_[i] = it->second;
            if (grades_[i] >= options.rel_threshold) relevant_.push_back(i);
        }
    }
}

double FusionProblem::evaluate(std::span<const double> weights, const MetricSpec& spec,
                               std::size_t depth) const {
    if (weights.size() != num_lists_) throw InvalidArgument("weight count differs from list count");
    const std::size_t n = ids_.size();
    if (n == 0) return judged_.score({}, spec);

    thread_local std::vector<double> fused;
    fused.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = &scores_[i * num_lists_];
        double s = 0.0;
        for (std::size_t m = 0; m < num_lists_; ++m) s += weights[m] * row[m];
        fused[i] = s;
    }
    // canonical order: higher score first, then smaller index (= smaller id)
    auto better = [&](std::size_t a, std::size_t b) {
        return fused[a] > fused[b] || (fused[a] == fused[b] && a < b);
    };
    const std::size_t listed = std::min(depth, n);

    if (spec.kind == MetricKind::kMrr && !spec.cutoff) {
        if (relevant_.empty()) return 0.0;
        std::size_t best = relevant_.front();
        for (auto r : relevant_) {
            if (better(r, best)) best = r;
        }
        std::size_t rank = 1;
        for (std::size_t i = 0; i < n; ++i) {
            if (better(i, best)) ++rank;
        }
        return rank <= listed ? 1.0 / static_cast<double>(rank) : 0.0;
    }

    const std::size_t limit = std::min(spec.cutoff.value_or(listed), listed);
    thread_local std::vector<std::size_t> top;
    top.clear();
    if (limit <= 16) {
        for (std::size_t i = 0; i < n; ++i) {
            if (top.size() == limit && !better(i, top.back())) continue;
            auto pos = std::upper_bound(top.begin(), top.end(), i,
                                        [&](std::size_t a, std::size_t b) { return better(a, b); });
            top.insert(pos, i);
            if (top.size() > limit) top.pop_back();
        }
    } else {
        top.resize(n);
        for (std::size_t i = 0; i < n; ++i) top[i] = i;
        std::nth_element(top.begin(), top.begin() + static_cast<std::ptrdiff_t>(limit - 1), top.end(), better);
        top.resize(limit);
        std::sort(top.begin(), top.end(), better);
    }
    thread_local std::vector<int> grades;
    grades.resize(top.size());
    for (std::size_t i = 0; i < top.size(); ++i) grades[i] = grades_[top[i]];
    return judged_.score(grades, spec);
}

double group_objective(std::span<const TurnEvidence> group, const Qrels& qrels,
                       const WeightVector& weights, const FitOptions& options) {
    double total = 0.0;
    for (const auto& turn : group) {
        auto fused = linear_fuse(weights, turn.lists, options.depth);
        fused.topic_id = turn.topic_id;
        total += evaluate_metric(fused, qrels, options.metric, options.metric_options);
    }
    return total;
}

LevelWeightTable fit_level_weights(const LevelGroups& groups, const Qrels& qrels,
                                   const FitOptions& options) {
    std::size_t m = 0;
    for (const auto& [_, group] : groups) {
        for (const auto& turn : group) {
            if (m == 0) m = turn.lists.size();
            if (turn.lists.size() != m) {
                throw InvalidArgument("turn " + turn.topic_id + " has " + std::to_string(turn.lists.size()) +
                                      " lists, expected " + std::to_string(m));
            }
        }
    }
    if (m == 0) m = 3;
    const auto grid = enumerate_simplex(m, options.step);

    LevelWeightTable table;
    table.metric = options.metric.name();
    table.step = options.step;
    table.fitted_on = options.fitted_on;

    unsigned threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, grid.size()));

    for (auto level : kAllLevels) {
        auto it = groups.find(level);
        if (it == groups.end() || it->second.empty()) {
            table.set(level, LevelFit{WeightVector::equal(m), std::nullopt, false});
            continue;
        }
        std::vector<FusionProblem> problems;
        problems.reserve(it->second.size());
        for (const auto& turn : it->second) problems.emplace_back(turn, qrels, options.metric_options);

        std::vector<double> objective(grid.size(), 0.0);
        auto scan = [&](std::size_t begin, std::size_t end) {
            for (std::size_t c = begin; c < end; ++c) {
                double total = 0.0;
                for (const auto& p : problems) total += p.evaluate(grid[c].values(), options.metric, options.depth);
                objective[c] = total;
            }
        };
        if (threads <= 1) {
            scan(0, grid.size());
        } else {
            std::vector<std::thread> workers;
            const std::size_t chunk = (grid.size() + threads - 1) / threads;
            for (unsigned t = 0; t < threads; ++t) {
                const std::size_t begin = t * chunk;
                const std::size_t end = std::min(grid.size(), begin + chunk);
                if (begin < end) workers.emplace_back(scan, begin, end);
            }
            for (auto& w : workers) w.join();
        }
        // grid is lexicographic, so the first maximum is the smallest vector
        std::size_t best = 0;
        for (std::size_t c = 1; c < grid.size(); ++c) {
            if (objective[c] > objective[best]) best = c;
        }
        table.set(level, LevelFit{grid[best], objective[best], true});
    }
    return table;
}

Run apply_weights(const LevelWeightTable& table, const std::map<std::string, PersonalizationLevel>& levels,
                  const std::map<std::string, std::vector<ScoredList>>& lists, std::size_t depth) {
    Run run;
    for (const auto& [topic, level] : levels) {
        auto it = lists.find(topic);
        if (it == lists.end()) throw InvalidArgument("no ranking lists for topic " + topic);
        const auto& weights = table.weights(level);
        if (weights.size() != it->second.size()) {
            throw InvalidArgument("topic " + topic + ": " + std::to_string(it->second.size()) +
                                  " lists for " + std::to_string(weights.size()) + " weights");
        }
        auto fused = linear_fuse(weights, it->second, depth);
        fused.topic_id = topic;
        run.emplace(topic, std::move(fused));
    }
    return run;
}

Run apply_turn_weights(const std::map<std::string, WeightVector>& weights,
                       const std::map<std::string, std::vector<ScoredList>>& lists, std::size_t depth) {
    Run run;
    for (const auto& [topic, w] : weights) {
        auto it = lists.find(topic);
        if (it == lists.end()) throw InvalidArgument("no ranking lists for topic " + topic);
        auto fused = linear_fuse(w, it->second, depth);
        fused.topic_id = topic;
        run.emplace(topic, std::move(fused));
    }
    return run;
}

}  // namespace apcir
