#include "mixopt/features.hpp"

#include "mixopt/parallel.hpp"
#include "mixopt/rng.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace mixopt {

namespace {

constexpr std::uint64_t kUnigramSalt = 0x51ed270b27c3a5f1ULL;
constexpr std::uint64_t kBigramSalt = 0xa0761d6478bd642fULL;

std::uint64_t token_bits(TokenId t) { return static_cast<std::uint64_t>(static_cast<std::uint32_t>(t)); }

Vector unit_or_first_basis(Vector v) {
    const double norm = v.norm();
    if (norm == 0.0) {
        v.setZero();
        v(0) = 1.0;
        return v;
    }
    return v / norm;
}

}  // namespace

HashedNgramEmbedder::HashedNgramEmbedder(std::size_t dim) : dim_(dim) {
    if (dim_ == 0) {
        throw Error("embedding dimension must be positive");
    }
}

Vector HashedNgramEmbedder::embed(const Document& doc) const {
    Vector v = Vector::Zero(static_cast<Eigen::Index>(dim_));
    auto add = [&](std::uint64_t h) {
        const auto bucket = static_cast<Eigen::Index>(h % dim_);
        v(bucket) += (h >> 63) ? 1.0 : -1.0;
    };
    const std::size_t n = doc.size();
    for (std::size_t i = 0; i < n; ++i) {
        add(mix64(token_bits(doc[i]) ^ kUnigramSalt));
        const TokenId next = doc[(i + 1) % n];
        add(mix64(mix64(token_bits(doc[i]) ^ kBigramSalt) ^ token_bits(next)));
    }
    return unit_or_first_basis(std::move(v));
}

PrecomputedEmbedder::PrecomputedEmbedder(std::span<const Document> docs, const RowMatrix& vectors)
    : dim_(vectors.cols()) {
    if (static_cast<Eigen::Index>(docs.size()) != vectors.rows()) {
        throw Error("precomputed embeddings: row count does not match document count");
    }
    table_.reserve(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        table_.emplace_back(docs[i], unit_or_first_basis(vectors.row(static_cast<Eigen::Index>(i)).transpose()));
    }
    std::sort(table_.begin(), table_.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
}

Vector PrecomputedEmbedder::embed(const Document& doc) const {
    auto it = std::lower_bound(table_.begin(), table_.end(), doc,
                               [](const auto& entry, const Document& d) { return entry.first < d; });
    if (it == table_.end() || it->first != doc) {
        throw Error("precomputed embeddings: unknown document");
    }
    return it->second;
}

Vector embed(const Document& doc, std::size_t dim) { return HashedNgramEmbedder(dim).embed(doc); }

RowMatrix embed_all(std::span<const Document> docs, const Embedder& embedder) {
    RowMatrix out(static_cast<Eigen::Index>(docs.size()), static_cast<Eigen::Index>(embedder.dim()));
    parallel_for(docs.size(), [&](std::size_t i) { out.row(static_cast<Eigen::Index>(i)) = embedder.embed(docs[i]); });
    return out;
}

RowMatrix embed_all(std::span<const Document> docs, std::size_t dim) {
    return embed_all(docs, HashedNgramEmbedder(dim));
}

namespace {

std::size_t nearest_row(const RowMatrix& centroids, const Eigen::Ref<const Eigen::RowVectorXd>& x, double* dist = nullptr) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < centroids.rows(); ++j) {
        const double d = (centroids.row(j) - x).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::size_t>(j);
        }
    }
    if (dist) {
        *dist = best_d;
    }
    return best;
}

RowMatrix kmeanspp_init(const RowMatrix& X, std::size_t k, Rng& rng) {
    const Eigen::Index n = X.rows();
    RowMatrix C(static_cast<Eigen::Index>(k), X.cols());
    std::vector<char> chosen(static_cast<std::size_t>(n), 0);
    auto first = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(n)));
    C.row(0) = X.row(first);
    chosen[static_cast<std::size_t>(first)] = 1;
    Vector d2 = (X.rowwise() - C.row(0)).rowwise().squaredNorm();
    for (std::size_t c = 1; c < k; ++c) {
        const double total = d2.sum();
        Eigen::Index pick = -1;
        if (total > 0.0) {
            const double u = rng.uniform() * total;
            double acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2(i);
                if (u < acc && d2(i) > 0.0) {
                    pick = i;
                    break;
                }
            }
            if (pick < 0) {
                d2.maxCoeff(&pick);
            }
        } else {
            // every remaining point duplicates a chosen centroid
            for (Eigen::Index i = 0; i < n; ++i) {
                if (!chosen[static_cast<std::size_t>(i)]) {
                    pick = i;
                    break;
                }
            }
        }
        C.row(static_cast<Eigen::Index>(c)) = X.row(pick);
        chosen[static_cast<std::size_t>(pick)] = 1;
        d2 = d2.cwiseMin((X.rowwise() - X.row(pick)).rowwise().squaredNorm());
    }
    return C;
}

}  // namespace

KMeansFit kmeans(const RowMatrix& X, std::size_t k, std::uint64_t seed, const KMeansOptions& opts) {
    const auto n = static_cast<std::size_t>(X.rows());
    if (k == 0) {
        throw Error("k-means: k must be positive");
    }
    if (n < k) {
        throw Error("k-means: " + std::to_string(n) + " vectors is fewer than k = " + std::to_string(k));
    }
    Rng rng(seed, 0xc1a5);
    KMeansFit fit;
    fit.centroids = kmeanspp_init(X, k, rng);
    fit.labels.assign(n, 0);
    std::vector<double> dist(n, 0.0);

    for (std::size_t it = 0; it < std::max<std::size_t>(opts.max_iter, 1); ++it) {
        parallel_for(n, [&](std::size_t i) {
            fit.labels[i] = nearest_row(fit.centroids, X.row(static_cast<Eigen::Index>(i)), &dist[i]);
        });

        std::vector<std::size_t> counts(k, 0);
        for (std::size_t l : fit.labels) {
            ++counts[l];
        }
        // reseed each empty cluster with the point farthest from its centroid
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] > 0) {
                continue;
            }
            std::size_t far = n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[fit.labels[i]] > 1 && dist[i] > far_d) {
                    far_d = dist[i];
                    far = i;
                }
            }
            --counts[fit.labels[far]];
            fit.labels[far] = j;
            counts[j] = 1;
            dist[far] = 0.0;
            fit.centroids.row(static_cast<Eigen::Index>(j)) = X.row(static_cast<Eigen::Index>(far));
        }

        RowMatrix next = RowMatrix::Zero(static_cast<Eigen::Index>(k), X.cols());
        for (std::size_t i = 0; i < n; ++i) {
            next.row(static_cast<Eigen::Index>(fit.labels[i])) += X.row(static_cast<Eigen::Index>(i));
        }
        for (std::size_t j = 0; j < k; ++j) {
            next.row(static_cast<Eigen::Index>(j)) /= static_cast<double>(counts[j]);
        }
        const double shift = (next - fit.centroids).rowwise().norm().maxCoeff();
        fit.centroids = std::move(next);

        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            inertia += (X.row(static_cast<Eigen::Index>(i)) - fit.centroids.row(static_cast<Eigen::Index>(fit.labels[i])))
                           .squaredNorm();
        }
        fit.inertia.push_back(inertia);
        fit.iterations = it + 1;
        if (shift < opts.tol) {
            break;
        }
    }
    return fit;
}

ClusterModel fit_kmeans(const RowMatrix& vectors, std::size_t k, std::uint64_t seed, const KMeansOptions& opts) {
    KMeansFit fit = kmeans(vectors, k, seed, opts);
    ClusterModel m;
    m.centroids = std::move(fit.centroids);
    m.branching = {k};
    m.leaf_sizes.assign(k, 0);
    for (std::size_t l : fit.labels) {
        ++m.leaf_sizes[l];
    }
    return m;
}

namespace {

struct TreeBuilder {
    const RowMatrix& X;
    std::span<const std::size_t> branching;
    std::uint64_t seed;
    const KMeansOptions& opts;
    ClusterModel model;
    std::vector<Vector> leaf_rows;

    int add_node(int parent, std::size_t level, const std::vector<std::size_t>& members, Vector centroid) {
        ClusterNode node;
        node.parent = parent;
        node.level = level;
        node.size = members.size();
        node.centroid = std::move(centroid);
        model.nodes.push_back(std::move(node));
        const int id = static_cast<int>(model.nodes.size()) - 1;
        if (parent >= 0) {
            model.nodes[static_cast<std::size_t>(parent)].children.push_back(id);
        }
        return id;
    }

    void make_leaf(int id) {
        auto& node = model.nodes[static_cast<std::size_t>(id)];
        node.leaf = static_cast<int>(leaf_rows.size());
        leaf_rows.push_back(node.centroid);
        model.leaf_sizes.push_back(node.size);
        if (node.level < branching.size()) {
            model.collapsed_leaves.push_back(node.leaf);
        }
    }

    void expand(int id, const std::vector<std::size_t>& members) {
        const std::size_t level = model.nodes[static_cast<std::size_t>(id)].level;
        if (level == branching.size() || members.size() < branching[level]) {
            make_leaf(id);
            return;
        }
        RowMatrix sub(static_cast<Eigen::Index>(members.size()), X.cols());
        for (std::size_t i = 0; i < members.size(); ++i) {
            sub.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(members[i]));
        }
        const std::uint64_t node_seed = id == 0 ? seed : derive_seed(seed, static_cast<std::uint64_t>(id));
        KMeansFit fit = kmeans(sub, branching[level], node_seed, opts);
        std::vector<std::vector<std::size_t>> groups(branching[level]);
        for (std::size_t i = 0; i < members.size(); ++i) {
            groups[fit.labels[i]].push_back(members[i]);
        }
        std::vector<int> child_ids;
        for (std::size_t c = 0; c < groups.size(); ++c) {
            child_ids.push_back(add_node(id, level + 1, groups[c], fit.centroids.row(static_cast<Eigen::Index>(c)).transpose()));
        }
        for (std::size_t c = 0; c < groups.size(); ++c) {
            expand(child_ids[c], groups[c]);
        }
    }
};

}  // namespace

ClusterModel fit_hierarchical(const RowMatrix& vectors, std::span<const std::size_t> branching, std::uint64_t seed,
                              const KMeansOptions& opts) {
    if (branching.empty()) {
        throw Error("hierarchical k-means: empty branching list");
    }
    std::size_t product = 1;
    for (std::size_t b : branching) {
        if (b == 0) {
            throw Error("hierarchical k-means: branching factors must be positive");
        }
        product *= b;
    }
    if (product > static_cast<std::size_t>(vectors.rows())) {
        throw Error("hierarchical k-means: product of branching factors (" + std::to_string(product) +
                    ") exceeds vector count (" + std::to_string(vectors.rows()) + ")");
    }
    TreeBuilder builder{vectors, branching, seed, opts, {}, {}};
    builder.model.branching.assign(branching.begin(), branching.end());
    std::vector<std::size_t> all(static_cast<std::size_t>(vectors.rows()));
    std::iota(all.begin(), all.end(), std::size_t{0});
    builder.add_node(-1, 0, all, vectors.colwise().mean().transpose());
    builder.expand(0, all);

    ClusterModel m = std::move(builder.model);
    m.centroids.resize(static_cast<Eigen::Index>(builder.leaf_rows.size()), vectors.cols());
    for (std::size_t i = 0; i < builder.leaf_rows.size(); ++i) {
        m.centroids.row(static_cast<Eigen::Index>(i)) = builder.leaf_rows[i].transpose();
    }
    return m;
}

std::size_t assign(const Vector& x, const ClusterModel& model, AssignMode mode) {
    if (model.leaf_count() == 0) {
        throw Error("assign: model has no centroids");
    }
    if (static_cast<std::size_t>(x.size()) != model.dim()) {
        throw Error("assign: dimension mismatch");
    }
    if (mode == AssignMode::exact || !model.hierarchical()) {
        return nearest_row(model.centroids, x.transpose());
    }
    std::size_t node = 0;
    while (model.nodes[node].leaf < 0) {
        const auto& children = model.nodes[node].children;
        std::size_t best = static_cast<std::size_t>(children.front());
        double best_d = std::numeric_limits<double>::infinity();
        for (int c : children) {
            const double d = (model.nodes[static_cast<std::size_t>(c)].centroid - x).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<std::size_t>(c);
            }
        }
        node = best;
    }
    return static_cast<std::size_t>(model.nodes[node].leaf);
}

std::vector<std::size_t> assign_all(const RowMatrix& vectors, const ClusterModel& model, AssignMode mode) {
    std::vector<std::size_t> out(static_cast<std::size_t>(vectors.rows()));
    parallel_for(out.size(), [&](std::size_t i) {
        out[i] = assign(vectors.row(static_cast<Eigen::Index>(i)).transpose(), model, mode);
    });
    return out;
}

ClusterModel domain_centroids(const DomainCorpus& corpus, const Embedder& embedder) {
    ClusterModel m;
    m.centroids.resize(static_cast<Eigen::Index>(corpus.k()), static_cast<Eigen::Index>(embedder.dim()));
    m.branching = {corpus.k()};
    for (std::size_t i = 0; i < corpus.k(); ++i) {
        const auto& docs = corpus.domains[i].documents;
        RowMatrix e = embed_all(docs, embedder);
        m.centroids.row(static_cast<Eigen::Index>(i)) = e.colwise().mean();
        m.leaf_sizes.push_back(docs.size());
    }
    return m;
}

Partition partition_by_clusters(std::span<const Document> docs, const RowMatrix& vectors, const ClusterModel& model,
                                std::size_t vocab_size, const std::string& name) {
    if (static_cast<Eigen::Index>(docs.size()) != vectors.rows()) {
        throw Error("partition: document and embedding counts differ");
    }
    const auto labels = assign_all(vectors, model);
    std::vector<std::vector<Document>> groups(model.leaf_count());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        groups[labels[i]].push_back(docs[i]);
    }
    Partition p;
    p.corpus.name = name;
    p.corpus.vocab_size = vocab_size;
    p.leaf_to_domain.assign(model.leaf_count(), -1);
    std::vector<Eigen::Index> kept;
    for (std::size_t leaf = 0; leaf < groups.size(); ++leaf) {
        if (groups[leaf].empty()) {
            continue;
        }
        Domain d;
        d.id = p.corpus.domains.size();
        d.name = "leaf_" + std::to_string(leaf);
        d.documents = std::move(groups[leaf]);
        p.leaf_to_domain[leaf] = static_cast<int>(d.id);
        p.model.leaf_sizes.push_back(d.documents.size());
        p.corpus.domains.push_back(std::move(d));
        kept.push_back(static_cast<Eigen::Index>(leaf));
    }
    p.model.centroids.resize(static_cast<Eigen::Index>(kept.size()), model.centroids.cols());
    for (std::size_t i = 0; i < kept.size(); ++i) {
        p.model.centroids.row(static_cast<Eigen::Index>(i)) = model.centroids.row(kept[i]);
    }
    p.model.branching = {kept.size()};
    return p;
}

namespace {

constexpr char kClusterMagic[8] = {'M', 'X', 'C', 'L', 'U', 'S', 'T', '1'};
constexpr std::uint32_t kClusterVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) {
        throw Error("cluster model file truncated");
    }
    return v;
}

void put_row(std::ostream& out, const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    for (Eigen::Index j = 0; j < row.size(); ++j) {
        put<float>(out, static_cast<float>(row(j)));
    }
}

Vector get_row(std::istream& in, std::size_t dim) {
    Vector v(static_cast<Eigen::Index>(dim));
    for (std::size_t j = 0; j < dim; ++j) {
        v(static_cast<Eigen::Index>(j)) = static_cast<double>(get<float>(in));
    }
    return v;
}

}  // namespace

void save_cluster_model(const ClusterModel& model, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + file.string());
    }
    out.write(kClusterMagic, sizeof(kClusterMagic));
    put<std::uint32_t>(out, kClusterVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.dim()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.leaf_count()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.branching.size()));
    for (std::size_t b : model.branching) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(b));
    }
    for (Eigen::Index i = 0; i < model.centroids.rows(); ++i) {
        put_row(out, model.centroids.row(i));
    }
    for (std::size_t i = 0; i < model.leaf_count(); ++i) {
        put<std::uint64_t>(out, i < model.leaf_sizes.size() ? model.leaf_sizes[i] : 0);
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.nodes.size()));
    for (const auto& node : model.nodes) {
        put<std::int32_t>(out, node.parent);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(node.level));
        put<std::int32_t>(out, node.leaf);
        put<std::uint64_t>(out, node.size);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(node.children.size()));
        for (int c : node.children) {
            put<std::int32_t>(out, c);
        }
        put_row(out, node.centroid.transpose());
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.collapsed_leaves.size()));
    for (int leaf : model.collapsed_leaves) {
        put<std::int32_t>(out, leaf);
    }
}

ClusterModel load_cluster_model(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw Error("cannot open cluster model " + file.string());
    }
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kClusterMagic, sizeof(magic)) != 0) {
        throw Error("not a cluster model file: " + file.string());
    }
    if (get<std::uint32_t>(in) != kClusterVersion) {
        throw Error("unsupported cluster model version");
    }
    const auto dim = get<std::uint32_t>(in);
    const auto leaves = get<std::uint32_t>(in);
    const auto levels = get<std::uint32_t>(in);
    ClusterModel m;
    for (std::uint32_t l = 0; l < levels; ++l) {
        m.branching.push_back(get<std::uint32_t>(in));
    }
    m.centroids.resize(leaves, dim);
    for (std::uint32_t i = 0; i < leaves; ++i) {
        m.centroids.row(i) = get_row(in, dim).transpose();
    }
    for (std::uint32_t i = 0; i < leaves; ++i) {
        m.leaf_sizes.push_back(get<std::uint64_t>(in));
    }
    const auto node_count = get<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < node_count; ++i) {
        ClusterNode node;
        node.parent = get<std::int32_t>(in);
        node.level = get<std::uint32_t>(in);
        node.leaf = get<std::int32_t>(in);
        node.size = get<std::uint64_t>(in);
        const auto nc = get<std::uint32_t>(in);
        for (std::uint32_t c = 0; c < nc; ++c) {
            node.children.push_back(get<std::int32_t>(in));
        }
        node.centroid = get_row(in, dim);
        m.nodes.push_back(std::move(node));
    }
    const auto nc = get<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < nc; ++i) {
        m.collapsed_leaves.push_back(get<std::int32_t>(in));
    }
    return m;
}

}  // namespace mixopt
