#include "helpers.hpp"

#include "mixopt/features.hpp"

#include <doctest.h>

#include <random>

using namespace mixopt;
using testing::doc_of;

namespace {

RowMatrix gaussian_points(std::size_t n, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd;
    RowMatrix X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            X(i, j) = nd(gen);
        }
    }
    return X;
}

std::size_t brute_force_nearest(const Vector& x, const RowMatrix& C) {
    std::size_t best = 0;
    double best_d = (C.row(0).transpose() - x).squaredNorm();
    for (Eigen::Index i = 1; i < C.rows(); ++i) {
        const double d = (C.row(i).transpose() - x).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::size_t>(i);
        }
    }
    return best;
}

}  // namespace

TEST_CASE("embedding basics") {
    const HashedNgramEmbedder e(256);
    CHECK(e.embed({}) == Vector::Unit(256, 0));
    const Document d = doc_of({3, 1, 4, 1, 5, 9, 2, 6});
    const Vector v = e.embed(d);
    CHECK(v.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e.embed(d) == v);

    Document twice = d;
    twice.insert(twice.end(), d.begin(), d.end());
    CHECK((e.embed(twice) - v).norm() < 1e-12);

    CHECK((e.embed(doc_of({1, 2, 3})) - v).norm() > 1e-3);
}

TEST_CASE("embedding norm on random documents") {
    const auto c = testing::random_corpus(1, 200, 20, 64, 3);
    const RowMatrix X = embed_all(c.domains[0].documents);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        CHECK(std::abs(X.row(i).norm() - 1.0) < 1e-9);
    }
}

TEST_CASE("kmeans saturation, determinism and monotone inertia") {
    const RowMatrix X = gaussian_points(40, 5, 1);
    const KMeansFit sat = kmeans(X, 40, 0);
    CHECK(sat.inertia.back() == doctest::Approx(0.0));

    const KMeansFit a = kmeans(X, 4, 7);
    const KMeansFit b = kmeans(X, 4, 7);
    CHECK(a.centroids == b.centroids);
    for (std::size_t i = 1; i < a.inertia.size(); ++i) {
        CHECK(a.inertia[i] <= a.inertia[i - 1] + 1e-9);
    }
    CHECK_THROWS_AS(kmeans(X, 41, 0), Error);
}

TEST_CASE("two blobs ten sigma apart are recovered") {
    const std::size_t n = 500;
    RowMatrix X = gaussian_points(2 * n, 4, 2);
    std::vector<int> label(2 * n);
    for (std::size_t i = n; i < 2 * n; ++i) {
        X(static_cast<Eigen::Index>(i), 0) += 10.0;
        label[i] = 1;
    }
    const KMeansFit fit = kmeans(X, 2, 3);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < 2 * n; ++i) {
        agree += static_cast<int>(fit.labels[i]) == label[i];
    }
    const double frac = static_cast<double>(std::max(agree, 2 * n - agree)) / (2.0 * n);
    CHECK(frac >= 0.99);
}

TEST_CASE("hierarchical clustering structure") {
    const RowMatrix X = gaussian_points(10000, 6, 5);
    SUBCASE("depth one equals flat kmeans") {
        const std::vector<std::size_t> br{4};
        const ClusterModel h = fit_hierarchical(X, br, 9);
        const ClusterModel f = fit_kmeans(X, 4, 9);
        CHECK(h.centroids == f.centroids);
    }
    SUBCASE("[4,4] gives 16 leaves") {
        const std::vector<std::size_t> br{4, 4};
        const ClusterModel h = fit_hierarchical(X, br, 1);
        CHECK(h.leaf_count() == 16);
        std::size_t total = 0;
        for (auto s : h.leaf_sizes) {
            CHECK(s >= 1);
            total += s;
        }
        CHECK(total == 10000);
    }
    SUBCASE("[8,8,8] gives 512 leaves") {
        const std::vector<std::size_t> br{8, 8, 8};
        const ClusterModel h = fit_hierarchical(X, br, 2);
        CHECK(h.leaf_count() == 512);
        CHECK(h.collapsed_leaves.empty());
    }
}

TEST_CASE("small parents collapse into single leaves") {
    // 3 far-apart groups: one with 2 points cannot be split 4 ways
    RowMatrix X(2 + 20 + 20, 2);
    std::mt19937_64 gen(1);
    std::normal_distribution<double> nd(0.0, 0.1);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double cx = i < 2 ? 0.0 : (i < 22 ? 100.0 : -100.0);
        X(i, 0) = cx + nd(gen);
        X(i, 1) = nd(gen);
    }
    const std::vector<std::size_t> br{3, 4};
    const ClusterModel h = fit_hierarchical(X, br, 0);
    CHECK(h.collapsed_leaves.size() == 1);
    CHECK(h.leaf_count() == 1 + 4 + 4);
}

TEST_CASE("assign ties, exact match and brute-force agreement") {
    RowMatrix C(5, 2);
    C << 0, 0, -1, 0, 5, 5, 7, 7, 1, 0;
    ClusterModel m;
    m.centroids = C;
    CHECK(assign(Vector(C.row(3).transpose()), m) == 3);
    CHECK(assign(Vector::Zero(2), m) == 0);
    Vector mid(2);
    mid << 0.0, 0.0;
    m.centroids.row(0) << 0, 9;  // now 1 and 4 are equidistant from the origin
    CHECK(assign(mid, m) == 1);

    const RowMatrix cents = gaussian_points(4096, 8, 3);
    ClusterModel big;
    big.centroids = cents;
    const RowMatrix pts = gaussian_points(300, 8, 4);
    const auto labels = assign_all(pts, big);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        const Vector x = pts.row(i).transpose();
        CHECK(labels[static_cast<std::size_t>(i)] == brute_force_nearest(x, cents));
    }
}

TEST_CASE("greedy tree descent is opt-in and lands on a leaf") {
    const RowMatrix X = gaussian_points(2000, 4, 8);
    const std::vector<std::size_t> br{4, 4};
    const ClusterModel h = fit_hierarchical(X, br, 3);
    for (Eigen::Index i = 0; i < 50; ++i) {
        const Vector x = X.row(i).transpose();
        CHECK(assign(x, h, AssignMode::greedy_tree) < h.leaf_count());
        CHECK(assign(x, h) == brute_force_nearest(x, h.centroids));
    }
}

TEST_CASE("cluster model file round trip") {
    const RowMatrix X = gaussian_points(500, 4, 8);
    const std::vector<std::size_t> br{3, 2};
    const ClusterModel h = fit_hierarchical(X, br, 3);
    testing::TempDir dir("cluster");
    save_cluster_model(h, dir.path / "m.bin");
    const ClusterModel back = load_cluster_model(dir.path / "m.bin");
    CHECK(back.leaf_count() == h.leaf_count());
    CHECK(back.branching == h.branching);
    CHECK(back.leaf_sizes == h.leaf_sizes);
    CHECK(back.nodes.size() == h.nodes.size());
    CHECK((back.centroids - h.centroids.cast<float>().cast<double>()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("partition_by_clusters keeps every document") {
    const auto c = testing::random_corpus(2, 100, 20, 16, 6);
    std::vector<Document> pool = c.domains[0].documents;
    pool.insert(pool.end(), c.domains[1].documents.begin(), c.domains[1].documents.end());
    const RowMatrix X = embed_all(pool);
    const std::vector<std::size_t> br{4};
    const ClusterModel m = fit_hierarchical(X, br, 1);
    const Partition p = partition_by_clusters(pool, X, m, 16, "p");
    CHECK(p.corpus.token_count() == 200 * 20);
    CHECK(p.model.leaf_count() == p.corpus.k());
}
