#pragma once

#include "mixopt/corpus.hpp"
#include "mixopt/types.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace mixopt {

inline constexpr std::size_t kDefaultEmbeddingDim = 256;

/// Maps a document to a unit-norm vector of fixed dimension.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::size_t dim() const = 0;
    virtual Vector embed(const Document& doc) const = 0;
};

/// Signed feature hashing of unigrams and cyclic bigrams, L2-normalized.
///
/// Bigrams wrap around from the last token to the first, so a document and
/// its repetition have proportional counts and therefore identical embeddings.
class HashedNgramEmbedder final : public Embedder {
public:
    explicit HashedNgramEmbedder(std::size_t dim = kDefaultEmbeddingDim);
    std::size_t dim() const override { return dim_; }
    Vector embed(const Document& doc) const override;

private:
    std::size_t dim_;
};

/// Serves embeddings computed elsewhere, looked up by document content.
class PrecomputedEmbedder final : public Embedder {
public:
    PrecomputedEmbedder(std::span<const Document> docs, const RowMatrix& vectors);
    std::size_t dim() const override { return static_cast<std::size_t>(dim_); }
    Vector embed(const Document& doc) const override;

private:
    Eigen::Index dim_;
    std::vector<std::pair<Document, Vector>> table_;  // sorted by document
};

Vector embed(const Document& doc, std::size_t dim = kDefaultEmbeddingDim);

/// One embedding per row.
RowMatrix embed_all(std::span<const Document> docs, const Embedder& embedder);
RowMatrix embed_all(std::span<const Document> docs, std::size_t dim = kDefaultEmbeddingDim);

struct ClusterNode {
    int parent = -1;
    std::size_t level = 0;
    int leaf = -1;               // leaf index, or -1 for internal nodes
    std::size_t size = 0;        // training vectors under this node
    std::vector<int> children;
    Vector centroid;
};

struct ClusterModel {
    RowMatrix centroids;                  // leaf centroids, one per row
    std::vector<std::size_t> branching;   // per-level factors
    std::vector<std::size_t> leaf_sizes;  // training vectors per leaf at fit time
    std::vector<ClusterNode> nodes;       // tree (node 0 is the root); empty for flat models
    std::vector<int> collapsed_leaves;    // leaves that stopped above the last level

    std::size_t dim() const { return static_cast<std::size_t>(centroids.cols()); }
    std::size_t leaf_count() const { return static_cast<std::size_t>(centroids.rows()); }
    bool hierarchical() const { return !nodes.empty(); }
};

struct KMeansOptions {
    std::size_t max_iter = 100;
    double tol = 1e-4;  // on the largest centroid displacement
};

struct KMeansFit {
    RowMatrix centroids;
    std::vector<std::size_t> labels;
    std::vector<double> inertia;  // after each Lloyd iteration
    std::size_t iterations = 0;
};

/// k-means++ seeding followed by Lloyd iterations.
KMeansFit kmeans(const RowMatrix& vectors, std::size_t k, std::uint64_t seed, const KMeansOptions& opts = {});

ClusterModel fit_kmeans(const RowMatrix& vectors, std::size_t k, std::uint64_t seed,
                        const KMeansOptions& opts = {});

/// Recursive k-means; a cluster smaller than its child branching factor
/// stays a single (collapsed) leaf. Leaves are numbered depth-first.
ClusterModel fit_hierarchical(const RowMatrix& vectors, std::span<const std::size_t> branching,
                              std::uint64_t seed, const KMeansOptions& opts = {});

enum class AssignMode { exact, greedy_tree };

/// Nearest leaf centroid; ties go to the lowest index.
std::size_t assign(const Vector& x, const ClusterModel& model, AssignMode mode = AssignMode::exact);
std::vector<std::size_t> assign_all(const RowMatrix& vectors, const ClusterModel& model,
                                    AssignMode mode = AssignMode::exact);

/// Flat model whose centroids are the mean embeddings of each corpus domain.
ClusterModel domain_centroids(const DomainCorpus& corpus, const Embedder& embedder);

struct Partition {
    DomainCorpus corpus;
    ClusterModel model;                // flat model over the non-empty leaves, aligned with corpus domains
    std::vector<int> leaf_to_domain;  // -1 for leaves that received no document
};

/// Splits pooled documents into one domain per leaf (exact assignment);
/// leaves that receive no document are dropped.
Partition partition_by_clusters(std::span<const Document> docs, const RowMatrix& vectors,
                                const ClusterModel& model, std::size_t vocab_size, const std::string& name);

void save_cluster_model(const ClusterModel& model, const std::filesystem::path& file);
ClusterModel load_cluster_model(const std::filesystem::path& file);

}  // namespace mixopt
