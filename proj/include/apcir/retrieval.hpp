#pragma once

/** \file retrieval.hpp
 *  \brief In-memory inverted index with Okapi BM25 scoring.
 *
 * The index is built once by a single writer and is immutable afterwards;
 * search() may be called from any number of threads.
 */

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "apcir/types.hpp"

namespace apcir {

/// Lowercase ASCII, split on anything that is not alphanumeric, drop empty tokens.
/// Bytes >= 0x80 are kept inside tokens so UTF-8 words survive intact.
std::vector<std::string> tokenize(std::string_view text);

/// Prefix of \p text that ends with its \p max_tokens -th token (whole text if shorter).
std::string_view truncate_tokens(std::string_view text, std::size_t max_tokens);

struct Bm25Params {
    double k1 = 0.9;
    double b = 0.4;
};

struct Posting {
    std::uint32_t doc = 0;  ///< ordinal into the index's document table
    std::uint32_t tf = 0;
};

class InvertedIndex {
public:
    /// Throws InvalidArgument on an empty corpus.
    static InvertedIndex build(const Corpus& corpus, Bm25Params params = {},
                               std::unordered_set<std::string> stopwords = {});

    /** \brief Top-k BM25 search.
     *
     * Returns at most \p top_k entries in canonical order. Only documents
     * sharing at least one term with the query are scored; a query with no
     * tokens yields an empty list.
     */
    ScoredList search(std::string_view query, std::size_t top_k) const;

    /// BM25 score of one document ordinal (0 when no query term occurs).
    double score_document(std::string_view query, std::uint32_t doc) const;

    std::size_t num_docs() const noexcept { return doc_ids_.size(); }
    double avg_doc_length() const noexcept { return avg_doc_length_; }
    const std::vector<std::uint32_t>& doc_lengths() const noexcept { return doc_lengths_; }
    const std::vector<std::string>& doc_ids() const noexcept { return doc_ids_; }
    const std::vector<Posting>* postings(const std::string& term) const;
    std::size_t num_terms() const noexcept { return postings_.size(); }
    const Bm25Params& params() const noexcept { return params_; }
    void set_params(Bm25Params params) noexcept { params_ = params; }

    /// Binary form with a magic string and a version number.
    std::string serialize() const;
    static InvertedIndex deserialize(std::string_view bytes);
    void save(const std::filesystem::path& path) const;
    static InvertedIndex load(const std::filesystem::path& path);

    static constexpr std::uint32_t kFormatVersion = 1;

private:
    std::vector<std::string> query_terms(std::string_view query) const;
    double idf(std::size_t doc_freq) const noexcept;

    Bm25Params params_;
    std::unordered_set<std::string> stopwords_;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    std::vector<std::string> doc_ids_;
    std::vector<std::uint32_t> doc_lengths_;
    double avg_doc_length_ = 0.0;
};

/// Anything that turns a query text into a ranking list.
class Retriever {
public:
    virtual ~Retriever() = default;
    virtual ScoredList retrieve(std::string_view query, std::size_t top_k) const = 0;
};

class Bm25Retriever final : public Retriever {
public:
    explicit Bm25Retriever(const InvertedIndex& index) : index_(index) {}
    ScoredList retrieve(std::string_view query, std::size_t top_k) const override {
        return index_.search(query, top_k);
    }

private:
    const InvertedIndex& index_;
};

}  // namespace apcir
