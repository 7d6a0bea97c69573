#include "helpers.hpp"

#include "mixopt/distmix.hpp"

#include <doctest.h>

#include <random>

using namespace mixopt;

namespace {

std::vector<Document> band_docs(std::size_t n, std::size_t len, TokenId lo, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::vector<Document> out(n, Document(len));
    for (auto& d : out) {
        for (auto& t : d) {
            t = lo + static_cast<TokenId>(gen() % 4);
        }
    }
    return out;
}

DomainCorpus bands(std::size_t k, std::uint64_t seed) {
    DomainCorpus c;
    c.name = "bands";
    c.vocab_size = 4 * k;
    for (std::size_t i = 0; i < k; ++i) {
        c.domains.push_back({"b" + std::to_string(i), i, band_docs(40, 30, static_cast<TokenId>(4 * i), seed + i), {}});
    }
    return c;
}

BasisMatrix fixed_basis() {
    BasisMatrix b;
    b.P.resize(3, 2);
    b.P << 0.5, 0.0,  //
        0.5, 0.2,     //
        0.0, 0.8;
    b.labels = {"x", "y"};
    return b;
}

}  // namespace

TEST_CASE("composition of basis columns") {
    const BasisMatrix b = fixed_basis();
    CHECK(compose_weights(b, one_hot(2, 1)) == b.P.col(1));
    const Vector avg = compose_weights(b, uniform_weights(2));
    CHECK((avg - 0.5 * (b.P.col(0) + b.P.col(1))).norm() < 1e-15);
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> u;
    for (int i = 0; i < 20; ++i) {
        Vector a(2);
        a << u(gen), u(gen);
        a /= a.sum();
        CHECK(is_simplex(compose_weights(b, a), 1e-12));
    }
    CHECK_THROWS_AS(compose_weights(b, uniform_weights(3)), Error);
}

TEST_CASE("building the basis") {
    const DomainCorpus c = bands(3, 1);
    const ClusterModel m = domain_centroids(c, HashedNgramEmbedder());
    std::vector<BasisSet> sets{{"first", c.domains[0].documents}, {"mixed", {}}};
    sets[1].documents = c.domains[1].documents;
    sets[1].documents.insert(sets[1].documents.end(), c.domains[2].documents.begin(), c.domains[2].documents.end());
    const auto spe = band_docs(10, 30, 8, 77);

    const BasisMatrix b = build_basis(sets, m, true, spe);
    CHECK(b.size() == 3);
    CHECK(b.domains() == 3);
    CHECK(b.labels == std::vector<std::string>{"first", "mixed", "specific"});
    CHECK(b.P.col(0) == one_hot(3, 0));
    CHECK(b.P(1, 1) == doctest::Approx(0.5));
    CHECK(b.P.col(2) == one_hot(3, 2));
    CHECK(build_basis(sets, m, false, spe).size() == 2);

    std::vector<BasisSet> many;
    for (int j = 0; j < 22; ++j) {
        many.push_back({"s" + std::to_string(j), {c.domains[static_cast<std::size_t>(j % 3)].documents[0]}});
    }
    CHECK(build_basis(many, m, true, spe).size() == 23);

    sets.push_back({"hollow", {}});
    CHECK_THROWS_WITH_AS(build_basis(sets, m, true, spe), doctest::Contains("hollow"), Error);
}

namespace {

struct DistSetup {
    DomainCorpus corpus = bands(2, 5);
    std::vector<Document> spe_train = band_docs(30, 30, 0, 100);
    std::vector<Document> spe_val = band_docs(10, 30, 0, 200);
    ModelConfig model{ModelKind::loglinear, 8, 1, 8, 0};
    OptimizerConfig opt;
    TrainConfig train;
    DGAConfig dga;
    DistSetup() {
        train.steps = 120;
        train.batch_size = 8;
        train.window = 16;
        train.log_interval = 40;
        dga.period = 10;
        dga.eta = 2.0;
        dga.beta = 0.3;
    }
    SpecificSet specific() const { return {spe_train, spe_val}; }
};

}  // namespace

TEST_CASE("identity basis reproduces domain reweighting") {
    DistSetup su;
    BasisMatrix id{Matrix::Identity(2, 2), {"b0", "b1"}};
    su.dga.initial_weights = uniform_weights(2);
    const RunResult dist = run_dga_distribution(su.corpus, id, su.specific(), su.model, su.opt, su.train, su.dga);
    const RunResult dom = run_dga(su.corpus, su.specific(), su.model, su.opt, su.train, su.dga);
    CHECK(dist.model.params == dom.model.params);
    REQUIRE(dist.trajectory.weights.size() == dom.trajectory.weights.size());
    for (std::size_t i = 0; i < dom.trajectory.weights.size(); ++i) {
        CHECK(dist.trajectory.weights[i].alpha == dom.trajectory.weights[i].alpha);
        CHECK(dist.trajectory.weights[i].composed == dom.trajectory.weights[i].composed);
    }
}

TEST_CASE("a single basis distribution stays put") {
    DistSetup su;
    BasisMatrix one;
    one.P.resize(2, 1);
    one.P << 0.3, 0.7;
    one.labels = {"only"};
    const RunResult r = run_dga_distribution(su.corpus, one, su.specific(), su.model, su.opt, su.train, su.dga);
    for (const auto& rec : r.trajectory.weights) {
        CHECK(rec.alpha(0) == 1.0);
        CHECK((rec.composed - one.P.col(0)).norm() < 1e-15);
    }
}

TEST_CASE("the basis matching the target aligns better") {
    const DistSetup su;
    BasisMatrix b;
    b.P.resize(2, 2);
    b.P << 0.1, 0.9,  //
        0.9, 0.1;
    b.labels = {"mostly_high", "mostly_low"};
    const BasisSource src(su.corpus, b);
    const ModelState s = init_model(su.model);
    int wins = 0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        Rng rng(trial, 1), aux(trial, 2);
        const WindowConfig w{su.train.window, 1};
        const AlignmentScores a = compute_alignments(s, src, su.spe_train, 8, w, AlignmentMetric::dot, rng, aux);
        wins += a.a(1) > a.a(0);
    }
    CHECK(wins >= 95);
}

TEST_CASE("each reweighting event costs one gradient per basis column plus one") {
    DistSetup su;
    const BasisMatrix b = fixed_basis();
    DomainCorpus c3 = bands(3, 9);
    su.model.vocab_size = 12;
    const RunResult r = run_dga_distribution(c3, b, su.specific(), su.model, su.opt, su.train, su.dga);
    CHECK(r.trajectory.gradient_evaluations == su.train.steps + 12 * (b.size() + 1));
    for (const auto& rec : r.trajectory.weights) {
        CHECK(is_simplex(rec.composed, 1e-9));
        CHECK((rec.composed - compose_weights(b, rec.ema)).norm() < 1e-15);
    }
}

TEST_CASE("basis file round trip") {
    const BasisMatrix b = fixed_basis();
    testing::TempDir dir("basis");
    save_basis(b, dir.path / "basis.json");
    const BasisMatrix back = load_basis(dir.path / "basis.json");
    CHECK(back.P == b.P);
    CHECK(back.labels == b.labels);
    CHECK_THROWS_AS(load_basis(dir.path / "nope.json"), Error);
}

TEST_CASE("invalid basis columns are rejected") {
    DistSetup su;
    BasisMatrix b = fixed_basis();
    b.P(0, 0) = 0.7;
    CHECK_THROWS_AS(b.validate(), Error);
    CHECK_THROWS_AS(run_dga_distribution(su.corpus, fixed_basis(), su.specific(), su.model, su.opt, su.train, su.dga),
                    Error);
}
