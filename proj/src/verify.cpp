#include "mixopt/verify.hpp"

#include "mixopt/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mixopt {

namespace {

constexpr std::size_t kMaxGridPoints = 10000;

double lattice_size(std::size_t k, std::size_t m) {
    // C(m + k - 1, k - 1)
    double c = 1.0;
    for (std::size_t i = 1; i < k; ++i) {
        c = c * static_cast<double>(m + i) / static_cast<double>(i);
    }
    return c;
}

void enumerate(std::size_t k, std::size_t remaining, std::size_t m, std::vector<std::size_t>& counts,
               std::vector<MixtureWeights>& out) {
    const std::size_t i = counts.size();
    if (i + 1 == k) {
        counts.push_back(remaining);
        MixtureWeights w(static_cast<Eigen::Index>(k));
        for (std::size_t j = 0; j < k; ++j) {
            w(static_cast<Eigen::Index>(j)) = static_cast<double>(counts[j]) / static_cast<double>(m);
        }
        out.push_back(std::move(w));
        counts.pop_back();
        return;
    }
    for (std::size_t n = remaining + 1; n-- > 0;) {
        counts.push_back(n);
        enumerate(k, remaining - n, m, counts, out);
        counts.pop_back();
    }
}

}  // namespace

std::vector<MixtureWeights> simplex_lattice(std::size_t k, double step) {
    if (k == 0) {
        throw Error("simplex lattice: k must be positive");
    }
    if (!(step > 0.0 && step <= 1.0)) {
        throw Error("simplex lattice: step must be in (0, 1]");
    }
    const auto m = static_cast<std::size_t>(std::llround(1.0 / step));
    if (std::abs(static_cast<double>(m) * step - 1.0) > 1e-9) {
        throw Error("simplex lattice: 1/step must be an integer");
    }
    const double count = lattice_size(k, m);
    if (count > static_cast<double>(kMaxGridPoints)) {
        throw Error("grid too large: " + std::to_string(static_cast<long long>(count)) + " points (limit " +
                    std::to_string(kMaxGridPoints) + ")");
    }
    std::vector<MixtureWeights> out;
    std::vector<std::size_t> counts;
    enumerate(k, m, m, counts, out);
    return out;
}

double train_and_evaluate(const DomainCorpus& corpus, const MixtureWeights& weights,
                          std::span<const Document> specific_val, const ModelConfig& model_cfg,
                          const OptimizerConfig& opt_cfg, const TrainConfig& train, std::size_t inner_steps) {
    OptimizerConfig oc = opt_cfg;
    oc.schedule = LrSchedule::cosine;
    oc.total_steps = inner_steps;
    ModelState state = init_model(model_cfg);
    OptimizerState opt = init_optimizer(oc, model_cfg.param_count());
    const WindowConfig window{train.window, model_cfg.context_length};
    Rng rng(train.seed, 0x9e1d);
    for (std::size_t t = 0; t < inner_steps; ++t) {
        const Batch b = sample_batch(corpus, weights, train.batch_size, window, rng);
        std::tie(state, opt) = optimizer_step(std::move(state), std::move(opt), grad(state, b));
    }
    return loss(state, full_batch(specific_val));
}

GridSearchResult grid_search_bilevel(const DomainCorpus& corpus, std::span<const Document> specific_val,
                                     const ModelConfig& model_cfg, const OptimizerConfig& opt_cfg,
                                     const TrainConfig& train, double grid_step, std::size_t inner_steps) {
    if (corpus.k() > 4) {
        throw Error("grid search refused: k = " + std::to_string(corpus.k()) + " exceeds 4");
    }
    if (grid_step < 0.05) {
        throw Error("grid search refused: grid_step below 0.05");
    }
    if (specific_val.empty()) {
        throw Error("grid search: empty validation set");
    }
    GridSearchResult r;
    for (auto& w : simplex_lattice(corpus.k(), grid_step)) {
        r.table.push_back({std::move(w), 0.0});
    }
    parallel_for(r.table.size(), [&](std::size_t i) {
        r.table[i].loss_spe =
            train_and_evaluate(corpus, r.table[i].alpha, specific_val, model_cfg, opt_cfg, train, inner_steps);
    });
    auto best = std::min_element(r.table.begin(), r.table.end(),
                                 [](const GridPoint& a, const GridPoint& b) { return a.loss_spe < b.loss_spe; });
    r.best = best->alpha;
    return r;
}

GradCheckResult finite_diff_grad_check(const ModelState& state, const Batch& batch, std::size_t n_coords,
                                       double h_scale, std::uint64_t seed) {
    const auto p = static_cast<std::size_t>(state.params.size());
    if (n_coords > p) {
        throw Error("gradient check: more coordinates requested than parameters");
    }
    const GradVector g = grad(state, batch);
    // distinct coordinates via a partial Fisher-Yates shuffle
    std::vector<std::size_t> idx(p);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed, 0x6c);
    for (std::size_t i = 0; i < n_coords; ++i) {
        std::swap(idx[i], idx[i + rng.index(p - i)]);
    }
    GradCheckResult r;
    ModelState probe = state;
    for (std::size_t c = 0; c < n_coords; ++c) {
        const auto j = static_cast<Eigen::Index>(idx[c]);
        const double theta = state.params(j);
        const double h = h_scale * (1.0 + std::abs(theta));
        probe.params(j) = theta + h;
        const double up = loss(probe, batch);
        probe.params(j) = theta - h;
        const double down = loss(probe, batch);
        probe.params(j) = theta;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = g(j);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
        r.max_rel_error = std::max(r.max_rel_error, std::abs(analytic - numeric) / denom);
        r.coords.push_back(idx[c]);
        r.analytic.push_back(analytic);
        r.numeric.push_back(numeric);
    }
    return r;
}

TaylorTable alignment_taylor_check(const ModelState& state, const DomainCorpus& corpus,
                                   std::span<const Document> specific_full, std::span<const double> rho_list) {
    if (rho_list.empty()) {
        throw Error("taylor check: empty step list");
    }
    const Batch spe = full_batch(specific_full);
    const LossAndGrad base = loss_and_grad(state, spe);
    const auto k = static_cast<Eigen::Index>(corpus.k());
    const auto R = static_cast<Eigen::Index>(rho_list.size());
    TaylorTable t;
    t.rho.assign(rho_list.begin(), rho_list.end());
    t.base_loss = base.loss;
    t.alignments.resize(k);
    t.residual.resize(k, R);
    t.ratio.resize(k, std::max<Eigen::Index>(R - 1, 0));
    ModelState moved = state;
    for (Eigen::Index i = 0; i < k; ++i) {
        const GradVector g_i = grad(state, full_batch(corpus.domains[static_cast<std::size_t>(i)]));
        const double a = dot(g_i, base.grad);
        t.alignments(i) = a;
        for (Eigen::Index j = 0; j < R; ++j) {
            const double rho = rho_list[static_cast<std::size_t>(j)];
            if (rho == 0.0) {
                t.residual(i, j) = 0.0;
                continue;
            }
            moved.params = state.params - rho * g_i;
            t.residual(i, j) = loss(moved, spe) - base.loss + rho * a;
        }
        for (Eigen::Index j = 0; j + 1 < R; ++j) {
            t.ratio(i, j) = t.residual(i, j) / t.residual(i, j + 1);
        }
    }
    return t;
}

}  // namespace mixopt
