#pragma once

#include "mixopt/dga.hpp"

#include <span>
#include <vector>

namespace mixopt {

/// Points of the simplex lattice {alpha : alpha_i = n_i * step, sum n_i = 1/step}
/// in lexicographic order of (n_0, n_1, ...), descending.
std::vector<MixtureWeights> simplex_lattice(std::size_t k, double step);

struct GridPoint {
    MixtureWeights alpha;
    double loss_spe = 0.0;
};

struct GridSearchResult {
    MixtureWeights best;
    std::vector<GridPoint> table;
};

/// Brute-force outer problem: train a fresh model on mix(alpha) for every
/// lattice point (same seed everywhere) and evaluate the specific loss.
GridSearchResult grid_search_bilevel(const DomainCorpus& corpus, std::span<const Document> specific_val,
                                     const ModelConfig& model_cfg, const OptimizerConfig& opt_cfg,
                                     const TrainConfig& train, double grid_step, std::size_t inner_steps);

/// Loss after training on a fixed mixture (cosine decay over `inner_steps`).
double train_and_evaluate(const DomainCorpus& corpus, const MixtureWeights& weights,
                          std::span<const Document> specific_val, const ModelConfig& model_cfg,
                          const OptimizerConfig& opt_cfg, const TrainConfig& train, std::size_t inner_steps);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::vector<std::size_t> coords;
    std::vector<double> analytic;
    std::vector<double> numeric;
};

/// Floor on the relative-error denominator; below it the error is absolute.
inline constexpr double kGradCheckFloor = 1e-6;

/// Central differences with h_j = h_scale * (1 + |theta_j|) on randomly chosen coordinates.
/// Relative error: |analytic - numeric| / max(|analytic|, |numeric|, kGradCheckFloor).
GradCheckResult finite_diff_grad_check(const ModelState& state, const Batch& batch, std::size_t n_coords,
                                       double h_scale = 1e-5, std::uint64_t seed = 0);

struct TaylorTable {
    std::vector<double> rho;
    Vector alignments;  // <grad L_i, grad L_spe>, full batch
    Matrix residual;    // domain x rho
    Matrix ratio;       // domain x (rho - 1): residual(rho_j) / residual(rho_{j+1})
    double base_loss = 0.0;
};

/// Residual of the first-order model of the specific loss after one
/// full-batch gradient step on each domain:
///   r_i(rho) = L_spe(theta - rho * g_i) - L_spe(theta) + rho * <g_i, g_spe>.
TaylorTable alignment_taylor_check(const ModelState& state, const DomainCorpus& corpus,
                                   std::span<const Document> specific_full, std::span<const double> rho_list);

}  // namespace mixopt
