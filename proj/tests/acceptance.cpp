// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include "mixopt/harness.hpp"
#include "mixopt/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

using namespace mixopt;
namespace fs = std::filesystem;

namespace {

// tolerances and thresholds
constexpr double kGradTol = 1e-5;
constexpr double kSimplexResidual = 1e-12;
constexpr double kShiftTol = 1e-12;
constexpr double kGridL1 = 0.2;
constexpr double kDgaL1 = 0.25;
constexpr double kTaylorLo = 3.0;
constexpr double kTaylorHi = 5.0;
constexpr double kTaylorFraction = 0.9;
constexpr int kSeedsNeeded = 4;  // out of 5

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void criterion(int n, const std::string& name, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %d: %s (%s; %.1f s)\n", o.pass ? "PASS" : "FAIL", n, name.c_str(), o.detail.c_str(),
                secs);
    std::fflush(stdout);
    failures += !o.pass;
}

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Vector random_simplex(std::size_t k, std::mt19937_64& gen) {
    std::gamma_distribution<double> g(0.5, 1.0);
    Vector w(static_cast<Eigen::Index>(k));
    do {
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            w(i) = g(gen);
        }
    } while (w.sum() <= 0.0);
    return w / w.sum();
}

double simplex_residual(const Vector& w) {
    return std::max(std::abs(w.sum() - 1.0), std::max(0.0, -w.minCoeff()));
}

// least-squares slope of loss_spe_val against step over the last third of records
double last_third_slope(const std::vector<MetricRecord>& m) {
    const std::size_t from = m.size() - m.size() / 3;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(m.size() - from);
    for (std::size_t i = from; i < m.size(); ++i) {
        const double x = static_cast<double>(m[i].step), y = m[i].loss_spe_val;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

double final_val(const AlgorithmRun& r) { return r.result.trajectory.metrics.back().loss_spe_val; }

// ---------------------------------------------------------------------------

Outcome gradient_exactness() {
    std::mt19937_64 gen(2024);
    double worst = 0.0;
    int pairs = 0;
    for (auto kind : {ModelKind::loglinear, ModelKind::mlp1}) {
        for (int trial = 0; trial < 100; ++trial) {
            ModelConfig cfg;
            cfg.kind = kind;
            cfg.vocab_size = 8 + gen() % 9;
            cfg.context_length = 1 + gen() % 3;
            cfg.feature_dim = 4 + gen() % 8;
            cfg.seed = gen();
            ModelState s = init_model(cfg);
            s.params *= 1.0 + static_cast<double>(gen() % 50);
            Batch b;
            const std::size_t n = 1 + gen() % 6;
            for (std::size_t i = 0; i < n; ++i) {
                Document d(cfg.context_length + 1 + gen() % 30);
                for (auto& t : d) {
                    t = static_cast<TokenId>(gen() % cfg.vocab_size);
                }
                b.sequences.push_back(std::move(d));
                b.source_domains.push_back(0);
            }
            const auto r = finite_diff_grad_check(s, b, 20, 1e-5, gen());
            worst = std::max(worst, r.max_rel_error);
            ++pairs;
        }
    }
    return {worst < kGradTol, std::to_string(pairs) + " pairs, max rel error " + fmt("%.2e", worst) + " < " +
                                  fmt("%.0e", kGradTol)};
}

Outcome simplex_invariants() {
    std::mt19937_64 gen(7);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_res = 0.0, worst_shift = 0.0;
    bool endpoints = true;
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t k = 1 + gen() % 64;
        const Vector w = random_simplex(k, gen);
        Vector a(static_cast<Eigen::Index>(k));
        for (Eigen::Index i = 0; i < a.size(); ++i) {
            a(i) = nd(gen);
        }
        const double eta = 10.0 * u(gen);
        const double shift = 20.0 * (u(gen) - 0.5);
        const Vector m = mirror_step(w, a, eta);
        const Vector ms = mirror_step(w, (a.array() + shift).matrix(), eta);
        worst_res = std::max(worst_res, simplex_residual(m));
        worst_shift = std::max(worst_shift, (m - ms).cwiseAbs().maxCoeff());

        const Vector other = random_simplex(k, gen);
        const Vector e = ema_update(w, other, u(gen));
        worst_res = std::max(worst_res, simplex_residual(e));
        endpoints = endpoints && ema_update(w, other, 0.0) == w && ema_update(w, other, 1.0) == other;

        const std::size_t N = 1 + gen() % 16;
        BasisMatrix basis;
        basis.P.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(N));
        for (std::size_t j = 0; j < N; ++j) {
            basis.P.col(static_cast<Eigen::Index>(j)) = random_simplex(k, gen);
            basis.labels.push_back("b" + std::to_string(j));
        }
        worst_res = std::max(worst_res, simplex_residual(compose_weights(basis, random_simplex(N, gen))));
    }
    const bool ok = worst_res < kSimplexResidual && worst_shift <= kShiftTol && endpoints;
    return {ok, "10^4 trials, simplex residual " + fmt("%.1e", worst_res) + ", shift gap " + fmt("%.1e", worst_shift) +
                    ", ema endpoints " + (endpoints ? "exact" : "inexact")};
}

ExperimentConfig recovery_config(std::uint64_t seed) {
    ExperimentConfig c;
    c.seed = seed;
    c.synthetic.k = 3;
    c.synthetic.vocab_size = 16;
    c.synthetic.docs_per_domain = 200;
    c.synthetic.doc_length = 64;
    Vector truth(3);
    truth << 0.6, 0.3, 0.1;
    c.synthetic.specific_mixture = truth;
    c.synthetic.specific_docs = 1000;
    c.synthetic.seed = seed;
    c.model.vocab_size = 16;
    c.model.seed = seed;
    c.optimizer.lr = 1e-2;
    c.train.batch_size = 16;
    c.train.window = 32;
    c.train.seed = seed;
    return c;
}

Outcome recovery() {
    std::string detail;
    // (a) brute-force outer problem
    const ExperimentConfig gc = recovery_config(1);
    const ExperimentData gd = prepare_experiment(gc);
    const auto grid = grid_search_bilevel(gd.corpus, gd.specific_val, gc.model, gc.optimizer, gc.train, 0.1, 2000);
    const double grid_l1 = (grid.best - *gd.truth).cwiseAbs().sum();
    const bool a_ok = grid_l1 <= kGridL1 + 1e-9;
    detail += "grid argmin L1 " + fmt("%.2f", grid_l1);

    // (b) step size picked on a held-out seed by specific validation loss
    auto dga_run = [](std::uint64_t seed, double eta) {
        ExperimentConfig c = recovery_config(seed);
        c.algorithm = Algorithm::dga;
        c.dga.eta = eta;
        c.dga.period = 10;
        c.train.steps = 5000;
        c.train.log_interval = 1000;
        const ExperimentData d = prepare_experiment(c);
        const AlgorithmRun r = run_algorithm(c, d);
        const double l1 = (r.result.trajectory.weights.back().ema - *d.truth).cwiseAbs().sum();
        return std::pair{final_val(r), l1};
    };
    double eta = 0.5, best_loss = INFINITY;
    for (double cand : {0.5, 1.0, 2.0}) {
        const double l = dga_run(100, cand).first;
        if (l < best_loss) {
            best_loss = l;
            eta = cand;
        }
    }
    int hits = 0;
    std::string l1s;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const double l1 = dga_run(seed, eta).second;
        hits += l1 <= kDgaL1;
        l1s += (l1s.empty() ? "" : ",") + fmt("%.3f", l1);
    }
    detail += "; dga eta=" + fmt("%g", eta) + " L1 [" + l1s + "], " + std::to_string(hits) + "/5 within " +
              fmt("%.2f", kDgaL1);
    return {a_ok && hits >= kSeedsNeeded, detail};
}

Outcome taylor_consistency() {
    ExperimentConfig c = recovery_config(3);
    c.synthetic.specific_docs = 200;
    c.model.kind = ModelKind::mlp1;
    c.model.feature_dim = 16;
    c.train.steps = 0;
    const ExperimentData d = prepare_experiment(c);
    const std::vector<double> rho{1e-2, 5e-3, 2.5e-3};
    int good = 0, total = 0;
    double lo = INFINITY, hi = -INFINITY;
    // points along one training trajectory on the uniform mixture
    ModelState s = init_model(c.model);
    OptimizerState opt = init_optimizer(c.optimizer, c.model.param_count());
    Rng rng(3, 0x7a);
    const WindowConfig w{c.train.window, 1};
    for (int point = 0; point < 10; ++point) {
        const TaylorTable t = alignment_taylor_check(s, d.corpus, d.specific_train, rho);
        for (Eigen::Index i = 0; i < t.ratio.rows(); ++i) {
            for (Eigen::Index j = 0; j < t.ratio.cols(); ++j) {
                const double r = t.ratio(i, j);
                good += r >= kTaylorLo && r <= kTaylorHi;
                ++total;
                lo = std::min(lo, r);
                hi = std::max(hi, r);
            }
        }
        for (int step = 0; step < 50; ++step) {
            const Batch b = sample_batch(d.corpus, uniform_weights(3), c.train.batch_size, w, rng);
            std::tie(s, opt) = optimizer_step(std::move(s), std::move(opt), grad(s, b));
        }
    }
    const double frac = static_cast<double>(good) / total;
    return {frac >= kTaylorFraction, std::to_string(good) + "/" + std::to_string(total) + " ratios in [3, 5], range [" +
                                         fmt("%.2f", lo) + ", " + fmt("%.2f", hi) + "]"};
}

Outcome cost_model() {
    ExperimentConfig c;
    c.algorithm = Algorithm::dga_ema;
    c.synthetic.k = 8;
    c.synthetic.docs_per_domain = 40;
    c.model.vocab_size = 16;
    c.dga.period = 20;
    c.train.steps = 400;
    c.train.log_interval = 50;
    const ExperimentData d = prepare_experiment(c);
    reset_gradient_evaluations();
    const AlgorithmRun r = run_algorithm(c, d);
    const std::uint64_t counted = gradient_evaluations();
    const std::uint64_t expected = 400 + 20 * 9;
    return {counted == expected && r.result.trajectory.gradient_evaluations == expected,
            std::to_string(counted) + " gradient computations, expected " + std::to_string(expected)};
}

ExperimentConfig budget_config(std::uint64_t seed, Algorithm algo) {
    ExperimentConfig c;
    c.algorithm = algo;
    c.seed = seed;
    c.synthetic.k = 8;
    c.synthetic.vocab_size = 32;
    c.synthetic.docs_per_domain = 200;
    c.synthetic.doc_length = 64;
    c.synthetic.shared_fraction = 0.2;
    Vector mix(8);
    mix << 0.8, 0.1, 0.05, 0.05, 0, 0, 0, 0;
    c.synthetic.specific_mixture = mix;
    c.synthetic.specific_docs = 400;
    c.synthetic.seed = seed;
    c.token_budget = 256;  // 2% of the 12800 tokens of every other domain
    c.budget_domains = {0};
    c.model.vocab_size = 32;
    c.model.seed = seed;
    c.optimizer.lr = 1e-2;
    c.train.steps = 1000;
    c.train.log_interval = 25;
    c.train.seed = seed;
    c.dga.period = 100;
    c.dga.beta = 0.1;
    c.dga.eta = 3000.0;
    return c;
}

Outcome token_budget() {
    int ordered = 0, rising = 0;
    std::string rows;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const ExperimentData d = prepare_experiment(budget_config(seed, Algorithm::is));
        const AlgorithmRun is = run_algorithm(budget_config(seed, Algorithm::is), d);
        const AlgorithmRun dga = run_algorithm(budget_config(seed, Algorithm::dga), d);
        const AlgorithmRun ema = run_algorithm(budget_config(seed, Algorithm::dga_ema), d);
        const double l_is = final_val(is), l_dga = final_val(dga), l_ema = final_val(ema);
        ordered += l_ema < l_dga && l_dga < l_is;
        const double slope = last_third_slope(is.result.trajectory.metrics);
        rising += slope > 0.0;
        rows += (rows.empty() ? "" : " ") + fmt("%.3f", l_ema) + "<" + fmt("%.3f", l_dga) + "<" + fmt("%.3f", l_is);
    }
    return {ordered >= kSeedsNeeded && rising == 5, "dga-ema<dga<is in " + std::to_string(ordered) +
                                                          "/5 [" + rows + "], is loss rising over last third in " +
                                                          std::to_string(rising) + "/5"};
}

Outcome reparameterization(const fs::path& root) {
    ExperimentConfig c;
    c.seed = 11;
    c.synthetic.k = 8;
    c.synthetic.docs_per_domain = 50;
    c.model.vocab_size = 16;
    c.train.steps = 300;
    c.train.log_interval = 50;
    c.dga.period = 20;
    c.dga.eta = 50.0;
    BasisMatrix id{Matrix::Identity(8, 8), {}};
    for (int i = 0; i < 8; ++i) {
        id.labels.push_back("domain_" + std::to_string(i));
    }
    fs::create_directories(root);
    save_basis(id, root / "identity.json");

    ExperimentConfig dist = c;
    dist.algorithm = Algorithm::dga_dist;
    dist.basis_file = root / "identity.json";
    ExperimentConfig dom = c;
    dom.algorithm = Algorithm::dga_ema;
    run_experiment(dist, root / "dist");
    run_experiment(dom, root / "dom");
    const std::string a = slurp(root / "dist" / "weights.csv");
    const std::string b = slurp(root / "dom" / "weights.csv");
    const bool moved = a.find('\n') != a.rfind('\n', a.size() - 2);
    return {!a.empty() && a == b && moved, std::string("weights.csv ") + (a == b ? "identical" : "differs") + ", " +
                                               std::to_string(std::count(a.begin(), a.end(), '\n')) + " lines"};
}

ExperimentConfig sparsity_config(std::uint64_t seed, Algorithm algo) {
    ExperimentConfig c;
    c.algorithm = algo;
    c.seed = seed;
    c.synthetic.k = 8;
    c.synthetic.vocab_size = 32;
    c.synthetic.docs_per_domain = 500;
    c.synthetic.doc_length = 64;
    c.synthetic.shared_fraction = 0.2;
    Vector mix(8);
    mix << 0.4, 0.3, 0.2, 0.1, 0, 0, 0, 0;
    c.synthetic.specific_mixture = mix;
    c.synthetic.specific_docs = 205;
    c.split = 0.0244;  // 5 training documents, 200 for validation
    c.synthetic.basis_mixtures = {mix, mix, mix};
    c.synthetic.basis_mixtures[0] << 0.5, 0.5, 0, 0, 0, 0, 0, 0;
    c.synthetic.basis_mixtures[1] << 0, 0, 0.5, 0.5, 0, 0, 0, 0;
    c.synthetic.basis_mixtures[2] << 0, 0, 0, 0, 0.25, 0.25, 0.25, 0.25;
    c.synthetic.basis_docs = 200;
    c.synthetic.seed = seed;
    c.cluster_branching = {8, 8, 8};
    c.model.vocab_size = 32;
    c.model.seed = seed;
    c.optimizer.lr = 1e-2;
    c.train.steps = 2000;
    c.train.log_interval = 50;
    c.train.seed = seed;
    c.dga.period = 100;
    c.dga.eta = 300.0;
    return c;
}

Outcome sparsity() {
    int wins = 0;
    bool sparse = true;
    std::string rows;
    std::size_t leaves = 0, max_nonzero = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const ExperimentConfig ci = sparsity_config(seed, Algorithm::is);
        const ExperimentData d = prepare_experiment(ci);
        leaves = d.corpus.k();
        const AlgorithmRun is = run_algorithm(ci, d);
        const std::size_t nz = is.histogram->nonzero();
        max_nonzero = std::max(max_nonzero, nz);
        sparse = sparse && d.specific_train.size() == 5 && nz <= 5;
        const AlgorithmRun dist = run_algorithm(sparsity_config(seed, Algorithm::dga_dist), d);
        const bool n4 = dist.basis && dist.basis->size() == 4;
        wins += n4 && final_val(dist) <= final_val(is);
        rows += (rows.empty() ? "" : " ") + fmt("%.3f", final_val(dist)) + "/" + fmt("%.3f", final_val(is));
    }
    return {sparse && wins >= kSeedsNeeded, "is non-zeros <= " + std::to_string(max_nonzero) + " of " +
                                                std::to_string(leaves) + " leaves; dga-dist<=is in " +
                                                std::to_string(wins) + "/5 [" + rows + "]"};
}

Outcome determinism(const fs::path& root) {
    ExperimentConfig c;
    c.algorithm = Algorithm::dga_ema;
    c.seed = 5;
    c.synthetic.k = 4;
    c.synthetic.docs_per_domain = 60;
    c.cluster_branching = {2, 3};
    c.model.vocab_size = 16;
    c.model.kind = ModelKind::mlp1;
    c.train.steps = 300;
    c.train.batch_size = 40;
    c.train.log_interval = 25;
    c.dga.period = 25;
    c.dga.eta = 30.0;
    std::vector<fs::path> dirs;
    for (int threads : {1, 1, 4}) {
        c.threads = threads;
        dirs.push_back(root / ("t" + std::to_string(dirs.size()) + "_" + std::to_string(threads)));
        run_experiment(c, dirs.back());
    }
    bool same = true;
    for (const char* f : {"metrics.jsonl", "weights.csv"}) {
        const std::string ref = slurp(dirs[0] / f);
        for (const auto& d : dirs) {
            same = same && !ref.empty() && slurp(d / f) == ref;
        }
    }
    return {same, std::string("3 runs at 1, 1 and 4 threads ") + (same ? "byte-identical" : "differ")};
}

}  // namespace

int main() {
    const fs::path root = fs::temp_directory_path() / ("mixopt_acceptance_" + std::to_string(std::random_device{}()));
    criterion(1, "gradient exactness", gradient_exactness);
    criterion(2, "simplex and update invariants", simplex_invariants);
    criterion(3, "recovery of the target mixture", recovery);
    criterion(4, "first-order alignment consistency", taylor_consistency);
    criterion(5, "reweighting cost model", cost_model);
    criterion(6, "token-budget overfitting", token_budget);
    criterion(7, "identity basis equals domain reweighting", [&] { return reparameterization(root / "reparam"); });
    criterion(8, "importance-sampling sparsity", sparsity);
    criterion(9, "determinism across thread counts", [&] { return determinism(root / "determinism"); });
    std::error_code ec;
    fs::remove_all(root, ec);
    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
