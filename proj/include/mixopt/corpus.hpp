#pragma once

#include "mixopt/rng.hpp"
#include "mixopt/types.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mixopt {

using Document = std::vector<TokenId>;

struct Domain {
    std::string name;
    std::size_t id = 0;
    std::vector<Document> documents;
    std::optional<std::size_t> token_budget;

    std::size_t token_count() const;
    std::size_t max_document_length() const;

    bool operator==(const Domain&) const = default;
};

struct DomainCorpus {
    std::string name;
    std::size_t vocab_size = 0;
    std::vector<Domain> domains;

    std::size_t k() const { return domains.size(); }
    std::size_t token_count() const;
    /// Token-count share of each domain ("natural proportions").
    MixtureWeights token_shares() const;
    /// Throws unless k >= 1, every domain is non-empty and every id is in range.
    void validate() const;

    bool operator==(const DomainCorpus&) const = default;
};

/// Fixed-length training windows cut out of documents.
struct WindowConfig {
    std::size_t window = 32;          // tokens per sampled sequence
    std::size_t context_length = 1;   // model context; a sequence needs > context tokens
};

struct Batch {
    std::vector<Document> sequences;
    std::vector<std::size_t> source_domains;

    std::size_t size() const { return sequences.size(); }
    bool operator==(const Batch&) const = default;
};

enum class CorpusFormat { text, ids };

CorpusFormat parse_corpus_format(std::string_view tag);

/// Stable 64-bit FNV-1a hash of a byte string.
std::uint64_t stable_hash(std::string_view bytes);

/// Whitespace tokenizer: each token maps to stable_hash(token) % vocab_size.
Document tokenize(std::string_view line, std::size_t vocab_size);

/// Words whose hash lands exactly on each id, so text written with them
/// tokenizes back to the same ids.
std::vector<std::string> make_lexicon(std::size_t vocab_size);

/// One file per domain, one document per line; domains ordered by file stem.
DomainCorpus load_corpus(const std::filesystem::path& path, std::size_t vocab_size,
                         CorpusFormat format = CorpusFormat::text);

/// Loads a flat set of documents (a directory of files or a single file).
std::vector<Document> load_documents(const std::filesystem::path& path, std::size_t vocab_size,
                                     CorpusFormat format = CorpusFormat::text);

void write_corpus(const DomainCorpus& corpus, const std::filesystem::path& dir,
                  const std::vector<std::string>& lexicon);
void write_documents(const std::vector<Document>& docs, const std::filesystem::path& file,
                     const std::vector<std::string>& lexicon);

/// Keeps, per domain, a seeded-shuffled prefix of documents up to the first
/// point where the cumulative token count reaches `budget`.
DomainCorpus apply_token_budget(const DomainCorpus& corpus, std::size_t budget, std::uint64_t seed);

/// Per-domain variant; domains with no budget are left untouched.
DomainCorpus apply_token_budget(const DomainCorpus& corpus,
                                std::span<const std::optional<std::size_t>> budgets,
                                std::uint64_t seed);

/// Inverse-CDF draw from a simplex point.
std::size_t categorical_draw(const MixtureWeights& weights, Rng& rng);

/// One window from a uniformly chosen document of `docs` (with replacement).
Document sample_window(std::span<const Document> docs, const WindowConfig& cfg, Rng& rng);

/// Two-stage sampling: domain from `weights`, then a document window in it.
Batch sample_batch(const DomainCorpus& corpus, const MixtureWeights& weights, std::size_t batch_size,
                   const WindowConfig& cfg, Rng& rng);

/// Batch drawn from a single document collection (the specific set).
Batch sample_documents(std::span<const Document> docs, std::size_t batch_size, const WindowConfig& cfg,
                       Rng& rng, std::size_t source = 0);

/// Every document as one full sequence; used for deterministic evaluation.
Batch full_batch(std::span<const Document> docs, std::size_t source = 0);
Batch full_batch(const Domain& domain);

/// Seeded split of documents into (train, validation).
std::pair<std::vector<Document>, std::vector<Document>> split_documents(std::vector<Document> docs,
                                                                        double train_fraction,
                                                                        std::uint64_t seed);

}  // namespace mixopt
