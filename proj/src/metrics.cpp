#include "apcir/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include <nlohmann/json.hpp>

#include "apcir/error.hpp"
#include "apcir/session_io.hpp"

namespace apcir {

namespace {

std::string lowercase(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

std::vector<int> grades_of(const ScoredList& list, const Qrels& qrels, std::size_t limit) {
    const auto* judged = qrels.find(list.topic_id);
    const std::size_t n = std::min(limit, list.entries.size());
    std::vector<int> grades(n, 0);
    if (judged == nullptr) return grades;
    for (std::size_t i = 0; i < n; ++i) {
        auto it = judged->find(list.entries[i].passage_id);
        if (it != judged->end()) grades[i] = it->second;
    }
    return grades;
}

}  // namespace

MetricSpec MetricSpec::parse(std::string_view text) {
    const std::string s = lowercase(text);
    const auto at = s.find('@');
    const std::string head = s.substr(0, at);
    MetricSpec spec;
    if (head == "mrr" || head == "recip_rank") {
        spec.kind = MetricKind::kMrr;
    } else if (head == "ndcg" || head == "ndcg_cut") {
        spec.kind = MetricKind::kNdcg;
    } else if (head == "recall") {
        spec.kind = MetricKind::kRecall;
    } else {
        throw InvalidArgument("unknown metric \"" + std::string(text) + "\"");
    }
    if (at != std::string::npos) {
        const std::string tail = s.substr(at + 1);
        std::size_t k = 0;
        auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), k);
        if (ec != std::errc() || ptr != tail.data() + tail.size() || k == 0) {
            throw InvalidArgument("bad cutoff in metric \"" + std::string(text) + "\"");
        }
        spec.cutoff = k;
    }
    if (spec.kind != MetricKind::kMrr && !spec.cutoff) {
        throw InvalidArgument("metric \"" + std::string(text) + "\" requires a cutoff, e.g. @10");
    }
    return spec;
}

std::string MetricSpec::name() const {
    std::string base;
    switch (kind) {
        case MetricKind::kMrr: base = "mrr"; break;
        case MetricKind::kNdcg: base = "ndcg"; break;
        case MetricKind::kRecall: base = "recall"; break;
    }
    if (cutoff) base += "@" + std::to_string(*cutoff);
    return base;
}

std::vector<MetricSpec> parse_metric_list(std::string_view comma_separated) {
    std::vector<MetricSpec> specs;
    std::size_t pos = 0;
    while (pos <= comma_separated.size()) {
        auto end = comma_separated.find(',', pos);
        if (end == std::string_view::npos) end = comma_separated.size();
        auto item = comma_separated.substr(pos, end - pos);
        while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
        while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
        if (!item.empty()) specs.push_back(MetricSpec::parse(item));
        pos = end + 1;
    }
    if (specs.empty()) throw InvalidArgument("empty metric list");
    return specs;
}

double gain_of(int grade, GainMode mode) noexcept {
    if (grade <= 0) return 0.0;
    return mode == GainMode::kLinear ? static_cast<double>(grade) : std::exp2(grade) - 1.0;
}

double mrr(const ScoredList& list, const Qrels& qrels, int rel_threshold,
           std::optional<std::size_t> cutoff) {
    const auto* judged = qrels.find(list.topic_id);
    if (judged == nullptr) return 0.0;
    const std::size_t n = std::min(cutoff.value_or(list.entries.size()), list.entries.size());
    for (std::size_t i = 0; i < n; ++i) {
        auto it = judged->find(list.entries[i].passage_id);
        if (it != judged->end() && it->second >= rel_threshold) return 1.0 / static_cast<double>(i + 1);
    }
    return 0.0;
}

double ndcg_at_k(const ScoredList& list, const Qrels& qrels, std::size_t k, GainMode gain) {
    MetricOptions options;
    options.gain = gain;
    TopicJudgments topic(qrels, list.topic_id, options);
    const auto grades = grades_of(list, qrels, k);
    return topic.score(grades, MetricSpec{MetricKind::kNdcg, k});
}

double recall_at_k(const ScoredList& list, const Qrels& qrels, std::size_t k, int rel_threshold) {
    MetricOptions options;
    options.rel_threshold = rel_threshold;
    TopicJudgments topic(qrels, list.topic_id, options);
    const auto grades = grades_of(list, qrels, k);
    return topic.score(grades, MetricSpec{MetricKind::kRecall, k});
}

double evaluate_metric(const ScoredList& list, const Qrels& qrels, const MetricSpec& spec,
                       const MetricOptions& options) {
    switch (spec.kind) {
        case MetricKind::kMrr: return mrr(list, qrels, options.rel_threshold, spec.cutoff);
        case MetricKind::kNdcg: return ndcg_at_k(list, qrels, *spec.cutoff, options.gain);
        case MetricKind::kRecall: return recall_at_k(list, qrels, *spec.cutoff, options.rel_threshold);
    }
    return 0.0;
}

TopicJudgments::TopicJudgments(const Qrels& qrels, const std::string& topic_id,
                               const MetricOptions& options)
    : options_(options) {
    if (const auto* judged = qrels.find(topic_id)) {
        for (const auto& [_, grade] : *judged) {
            sorted_grades_.push_back(grade);
            if (grade >= options.rel_threshold) ++num_relevant_;
        }
    }
    std::sort(sorted_grades_.begin(), sorted_grades_.end(), std::greater<>());
}

double TopicJudgments::ideal_dcg(std::size_t k) const {
    double idcg = 0.0;
    const std::size_t n = std::min(k, sorted_grades_.size());
    for (std::size_t i = 0; i < n; ++i) {
        idcg += gain_of(sorted_grades_[i], options_.gain) / std::log2(static_cast<double>(i) + 2.0);
    }
    return idcg;
}

double TopicJudgments::score(std::span<const int> ranked_grades, const MetricSpec& spec) const {
    const std::size_t limit = std::min(spec.cutoff.value_or(ranked_grades.size()), ranked_grades.size());
    switch (spec.kind) {
        case MetricKind::kMrr:
            for (std::size_t i = 0; i < limit; ++i) {
                if (ranked_grades[i] >= options_.rel_threshold) return 1.0 / static_cast<double>(i + 1);
            }
            return 0.0;
        case MetricKind::kNdcg: {
            const double idcg = ideal_dcg(*spec.cutoff);
            if (idcg <= 0.0) return 0.0;
            double dcg = 0.0;
            for (std::size_t i = 0; i < limit; ++i) {
                dcg += gain_of(ranked_grades[i], options_.gain) / std::log2(static_cast<double>(i) + 2.0);
            }
            return dcg / idcg;
        }
        case MetricKind::kRecall: {
            if (num_relevant_ == 0) return 0.0;
            int hits = 0;
            for (std::size_t i = 0; i < limit; ++i) {
                if (ranked_grades[i] >= options_.rel_threshold) ++hits;
            }
            return static_cast<double>(hits) / static_cast<double>(num_relevant_);
        }
    }
    return 0.0;
}

EvaluationReport evaluate_run(const Run& run, const Qrels& qrels, std::span<const MetricSpec> specs,
                              const MetricOptions& options) {
    EvaluationReport report;
    report.specs.assign(specs.begin(), specs.end());
    report.topics = qrels.topics();
    std::vector<double> sums(specs.size(), 0.0);
    std::vector<std::size_t> counts(specs.size(), 0);
    for (const auto& topic : report.topics) {
        TopicJudgments judged(qrels, topic, options);
        std::vector<double> row(specs.size(), 0.0);
        std::vector<bool> counted(specs.size(), true);
        auto it = run.find(topic);
        for (std::size_t s = 0; s < specs.size(); ++s) {
            if (specs[s].kind == MetricKind::kRecall && judged.num_relevant() == 0) counted[s] = false;
            if (it != run.end()) {
                ScoredList list = it->second;
                list.topic_id = topic;
                row[s] = evaluate_metric(list, qrels, specs[s], options);
            }
            if (counted[s]) {
                sums[s] += row[s];
                ++counts[s];
            }
        }
        report.values.push_back(std::move(row));
        report.counted.push_back(std::move(counted));
    }
    for (std::size_t s = 0; s < specs.size(); ++s) {
        report.means.push_back(counts[s] ? sums[s] / static_cast<double>(counts[s]) : 0.0);
    }
    return report;
}

std::string EvaluationReport::to_csv() const {
    std::string out = "topic";
    for (const auto& s : specs) out += "," + s.name();
    out += '\n';
    for (std::size_t t = 0; t < topics.size(); ++t) {
        out += topics[t];
        for (std::size_t s = 0; s < specs.size(); ++s) {
            out += ',';
            out += counted[t][s] ? format_score(values[t][s]) : std::string("NA");
        }
        out += '\n';
    }
    out += "all";
    for (double m : means) out += "," + format_score(m);
    out += '\n';
    return out;
}

std::string EvaluationReport::to_json() const {
    nlohmann::ordered_json doc;
    doc["metrics"] = nlohmann::json::array();
    for (const auto& s : specs) doc["metrics"].push_back(s.name());
    doc["num_topics"] = topics.size();
    for (std::size_t s = 0; s < specs.size(); ++s) doc["mean"][specs[s].name()] = means[s];
    doc["per_topic"] = nlohmann::ordered_json::object();
    for (std::size_t t = 0; t < topics.size(); ++t) {
        auto& row = doc["per_topic"][topics[t]];
        for (std::size_t s = 0; s < specs.size(); ++s) {
            if (counted[t][s]) {
                row[specs[s].name()] = values[t][s];
            } else {
                row[specs[s].name()] = nullptr;
            }
        }
    }
    return doc.dump(2) + "\n";
}

}  // namespace apcir
