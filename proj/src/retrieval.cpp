#include "apcir/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "apcir/error.hpp"
#include "apcir/session_io.hpp"

namespace apcir {

namespace {

inline bool is_token_byte(unsigned char c) noexcept {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

inline char to_lower_ascii(char c) noexcept {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

constexpr char kMagic[8] = {'A', 'P', 'C', 'I', 'R', 'I', 'D', 'X'};

class Writer {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.append(s);
    }
    void raw(const char* data, std::size_t n) { out_.append(data, n); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw ParseError("index: truncated data", 0);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= std::uint64_t(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
        pos_ += 8;
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::string str() {
        auto n = u32();
        need(n);
        std::string s(in_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    std::string_view raw(std::size_t n) {
        need(n);
        auto s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const noexcept { return pos_ == in_.size(); }

private:
    std::string_view in_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : text) {
        if (is_token_byte(static_cast<unsigned char>(c))) {
            current.push_back(to_lower_ascii(c));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::string_view truncate_tokens(std::string_view text, std::size_t max_tokens) {
    if (max_tokens == 0) return text.substr(0, 0);
    std::size_t seen = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && !is_token_byte(static_cast<unsigned char>(text[i]))) ++i;
        if (i == text.size()) break;
        while (i < text.size() && is_token_byte(static_cast<unsigned char>(text[i]))) ++i;
        ++seen;
        if (seen == max_tokens) return text.substr(0, i);
    }
    return text;
}

InvertedIndex InvertedIndex::build(const Corpus& corpus, Bm25Params params,
                                   std::unordered_set<std::string> stopwords) {
    if (corpus.empty()) throw InvalidArgument("cannot index an empty corpus");
    InvertedIndex index;
    index.params_ = params;
    index.stopwords_ = std::move(stopwords);
    index.doc_ids_.reserve(corpus.size());
    index.doc_lengths_.reserve(corpus.size());

    std::uint64_t total_length = 0;
    std::unordered_map<std::string, std::uint32_t> tf;
    for (const auto& passage : corpus.passages()) {
        const auto ordinal = static_cast<std::uint32_t>(index.doc_ids_.size());
        tf.clear();
        std::uint32_t length = 0;
        for (auto& token : tokenize(passage.contents)) {
            if (index.stopwords_.count(token)) continue;
            ++tf[std::move(token)];
            ++length;
        }
        for (auto& [term, count] : tf) index.postings_[term].push_back(Posting{ordinal, count});
        index.doc_ids_.push_back(passage.id);
        index.doc_lengths_.push_back(length);
        total_length += length;
    }
    index.avg_doc_length_ = static_cast<double>(total_length) / static_cast<double>(corpus.size());
    return index;
}

const std::vector<Posting>* InvertedIndex::postings(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? nullptr : &it->second;
}

std::vector<std::string> InvertedIndex::query_terms(std::string_view query) const {
    auto tokens = tokenize(query);
    if (!stopwords_.empty()) {
        std::erase_if(tokens, [&](const std::string& t) { return stopwords_.count(t) != 0; });
    }
    return tokens;
}

double InvertedIndex::idf(std::size_t doc_freq) const noexcept {
    const double n = static_cast<double>(doc_ids_.size());
    const double df = static_cast<double>(doc_freq);
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double InvertedIndex::score_document(std::string_view query, std::uint32_t doc) const {
    double score = 0.0;
    const double norm = avg_doc_length_ > 0.0 ? doc_lengths_.at(doc) / avg_doc_length_ : 0.0;
    for (const auto& term : query_terms(query)) {
        const auto* list = postings(term);
        if (list == nullptr) continue;
        auto it = std::lower_bound(list->begin(), list->end(), doc,
                                   [](const Posting& p, std::uint32_t d) { return p.doc < d; });
        if (it == list->end() || it->doc != doc) continue;
        const double tf = it->tf;
        score += idf(list->size()) * tf * (params_.k1 + 1.0) /
                 (tf + params_.k1 * (1.0 - params_.b + params_.b * norm));
    }
    return score;
}

ScoredList InvertedIndex::search(std::string_view query, std::size_t top_k) const {
    if (top_k == 0) throw InvalidArgument("top_k must be positive");
    ScoredList result;
    const auto terms = query_terms(query);
    if (terms.empty()) return result;

    std::vector<double> accum(doc_ids_.size(), 0.0);
    std::vector<char> touched(doc_ids_.size(), 0);
    std::vector<std::uint32_t> candidates;
    for (const auto& term : terms) {
        const auto* list = postings(term);
        if (list == nullptr) continue;
        const double term_idf = idf(list->size());
        for (const auto& p : *list) {
            const double tf = p.tf;
            const double norm = doc_lengths_[p.doc] / avg_doc_length_;
            accum[p.doc] += term_idf * tf * (params_.k1 + 1.0) /
                            (tf + params_.k1 * (1.0 - params_.b + params_.b * norm));
            if (!touched[p.doc]) {
                touched[p.doc] = 1;
                candidates.push_back(p.doc);
            }
        }
    }

    result.entries.reserve(candidates.size());
    for (auto doc : candidates) result.entries.push_back(ScoredEntry{doc_ids_[doc], accum[doc]});
    if (result.entries.size() > top_k) {
        std::partial_sort(result.entries.begin(), result.entries.begin() + static_cast<std::ptrdiff_t>(top_k),
                          result.entries.end(), ranks_before);
        result.entries.resize(top_k);
    } else {
        std::sort(result.entries.begin(), result.entries.end(), ranks_before);
    }
    return result;
}

std::string InvertedIndex::serialize() const {
    Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.u32(kFormatVersion);
    w.f64(params_.k1);
    w.f64(params_.b);
    w.u32(static_cast<std::uint32_t>(doc_ids_.size()));
    for (std::size_t i = 0; i < doc_ids_.size(); ++i) {
        w.str(doc_ids_[i]);
        w.u32(doc_lengths_[i]);
    }
    std::vector<std::string> stop(stopwords_.begin(), stopwords_.end());
    std::sort(stop.begin(), stop.end());
    w.u32(static_cast<std::uint32_t>(stop.size()));
    for (const auto& s : stop) w.str(s);

    std::vector<const std::string*> terms;
    terms.reserve(postings_.size());
    for (const auto& [term, _] : postings_) terms.push_back(&term);
    std::sort(terms.begin(), terms.end(), [](auto* a, auto* b) { return *a < *b; });
    w.u32(static_cast<std::uint32_t>(terms.size()));
    for (const auto* term : terms) {
        const auto& list = postings_.at(*term);
        w.str(*term);
        w.u32(static_cast<std::uint32_t>(list.size()));
        for (const auto& p : list) {
            w.u32(p.doc);
            w.u32(p.tf);
        }
    }
    return w.take();
}

InvertedIndex InvertedIndex::deserialize(std::string_view bytes) {
    Reader r(bytes);
    if (r.raw(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) {
        throw ParseError("index: bad magic", 0);
    }
    const auto version = r.u32();
    if (version != kFormatVersion) {
        throw ParseError("index: unsupported format version " + std::to_string(version), 0);
    }
    InvertedIndex index;
    index.params_.k1 = r.f64();
    index.params_.b = r.f64();
    const auto n_docs = r.u32();
    if (n_docs == 0) throw ParseError("index: no documents", 0);
    std::uint64_t total = 0;
    for (std::uint32_t i = 0; i < n_docs; ++i) {
        index.doc_ids_.push_back(r.str());
        index.doc_lengths_.push_back(r.u32());
        total += index.doc_lengths_.back();
    }
    index.avg_doc_length_ = static_cast<double>(total) / n_docs;
    const auto n_stop = r.u32();
    for (std::uint32_t i = 0; i < n_stop; ++i) index.stopwords_.insert(r.str());
    const auto n_terms = r.u32();
    for (std::uint32_t i = 0; i < n_terms; ++i) {
        auto term = r.str();
        const auto n_post = r.u32();
        std::vector<Posting> list;
        list.reserve(n_post);
        for (std::uint32_t j = 0; j < n_post; ++j) {
            Posting p{r.u32(), r.u32()};
            if (p.doc >= n_docs) throw ParseError("index: posting ordinal out of range", 0);
            list.push_back(p);
        }
        index.postings_.emplace(std::move(term), std::move(list));
    }
    if (!r.done()) throw ParseError("index: trailing bytes", 0);
    return index;
}

void InvertedIndex::save(const std::filesystem::path& path) const {
    write_file_atomic(path, serialize());
}

InvertedIndex InvertedIndex::load(const std::filesystem::path& path) {
    return deserialize(read_file(path));
}

}  // namespace apcir
