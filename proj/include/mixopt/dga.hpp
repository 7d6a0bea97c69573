#pragma once

#include "mixopt/corpus.hpp"
#include "mixopt/model.hpp"
#include "mixopt/types.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace mixopt {

// ---------------------------------------------------------------------------
// Simplex updates
// ---------------------------------------------------------------------------

/// Exponentiated-gradient step on the simplex:
///   w_i <- w_i * exp(eta * a_i) / sum_j w_j * exp(eta * a_j).
/// The exponent is shifted by its maximum over the support of `w`, which
/// leaves the normalized result unchanged and avoids overflow.
template <typename DerivedW, typename DerivedA>
VectorX<typename DerivedW::Scalar> mirror_step(const Eigen::MatrixBase<DerivedW>& weights,
                                               const Eigen::MatrixBase<DerivedA>& alignments,
                                               typename DerivedW::Scalar eta) {
    using Scalar = typename DerivedW::Scalar;
    if (weights.size() != alignments.size()) {
        throw Error("mirror_step: weights and alignments differ in length");
    }
    VectorX<Scalar> exponent = eta * alignments.template cast<Scalar>();
    if (!exponent.allFinite()) {
        throw Error("mirror_step: non-finite exponent");
    }
    Scalar shift = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        if (weights(i) > Scalar(0)) {
            shift = std::max(shift, exponent(i));
        }
    }
    if (!std::isfinite(shift)) {
        throw Error("mirror_step: weights have empty support");
    }
    VectorX<Scalar> hat = weights.cwiseProduct((exponent.array() - shift).exp().matrix());
    return hat / hat.sum();
}

/// (1 - beta) * ema + beta * next.
template <typename DerivedE, typename DerivedN>
VectorX<typename DerivedE::Scalar> ema_update(const Eigen::MatrixBase<DerivedE>& ema,
                                              const Eigen::MatrixBase<DerivedN>& next,
                                              typename DerivedE::Scalar beta) {
    using Scalar = typename DerivedE::Scalar;
    if (ema.size() != next.size()) {
        throw Error("ema_update: length mismatch");
    }
    if (!(beta >= Scalar(0) && beta <= Scalar(1))) {
        throw Error("ema_update: beta must be in [0, 1]");
    }
    return (Scalar(1) - beta) * ema + beta * next;
}

// ---------------------------------------------------------------------------
// Reweightable data sources
// ---------------------------------------------------------------------------

/// A set of units that mixture weights range over. Units are either corpus
/// domains or distributions over those domains; a unit's batch is drawn by
/// first resolving the unit to a domain (with `aux`) and then cutting a
/// window (with `rng`).
class MixtureSource {
public:
    virtual ~MixtureSource() = default;

    virtual std::size_t units() const = 0;
    virtual const DomainCorpus& corpus() const = 0;
    /// Default initial weights.
    virtual MixtureWeights natural_weights() const = 0;
    /// Domain weights induced by unit weights.
    virtual MixtureWeights compose(const MixtureWeights& unit_weights) const = 0;

    Batch sample_mixture(const MixtureWeights& weights, std::size_t batch_size, const WindowConfig& cfg, Rng& rng,
                         Rng& aux) const;
    Batch sample_unit(std::size_t unit, std::size_t batch_size, const WindowConfig& cfg, Rng& rng, Rng& aux) const;

protected:
    virtual std::size_t resolve(std::size_t unit, Rng& aux) const = 0;
};

/// Units are the corpus domains themselves.
class DomainSource final : public MixtureSource {
public:
    explicit DomainSource(const DomainCorpus& corpus) : corpus_(corpus) {}
    std::size_t units() const override { return corpus_.k(); }
    const DomainCorpus& corpus() const override { return corpus_; }
    MixtureWeights natural_weights() const override { return corpus_.token_shares(); }
    MixtureWeights compose(const MixtureWeights& w) const override { return w; }

protected:
    std::size_t resolve(std::size_t unit, Rng&) const override { return unit; }

private:
    const DomainCorpus& corpus_;
};

// ---------------------------------------------------------------------------
// Dynamic gradient alignment
// ---------------------------------------------------------------------------

enum class AlignmentMetric { dot, cosine };
AlignmentMetric parse_alignment_metric(std::string_view tag);

struct DGAConfig {
    double eta = 1.0;
    double beta = 0.1;
    std::size_t period = 100;           // reweighting period T_r
    std::size_t align_batch_size = 0;   // 0: use the training batch size
    MixtureWeights initial_weights;     // empty: the source's natural weights
    double alignment_sign = 1.0;        // -1 reproduces exp(-eta a) literally
    AlignmentMetric metric = AlignmentMetric::dot;
    bool use_ema = true;                // false: sample from the instantaneous weights
    bool reweight = true;               // false: frozen weights, no alignment cost

    void validate() const;
};

struct TrainConfig {
    std::size_t steps = 1000;
    std::size_t batch_size = 16;
    std::size_t window = 32;
    std::size_t log_interval = 10;
    std::uint64_t seed = 0;
};

struct AlignmentScores {
    Vector a;
    std::size_t step = 0;
};

struct WeightRecord {
    std::size_t step = 0;     // first training step that samples with these weights
    MixtureWeights alpha;     // instantaneous
    MixtureWeights ema;
    Vector alignments;        // empty for the initial record
    MixtureWeights composed;  // domain weights actually sampled (compose(ema))
};

struct MetricRecord {
    std::size_t step = 0;  // number of optimizer steps taken
    double loss_train = 0.0;
    double loss_spe_train = 0.0;
    double loss_spe_val = 0.0;
};

struct Trajectory {
    std::vector<WeightRecord> weights;
    std::vector<MetricRecord> metrics;
    std::uint64_t gradient_evaluations = 0;
};

struct RunResult {
    ModelState model;
    Trajectory trajectory;
};

/// Raised when a run fails midway; carries everything recorded so far.
class RunError : public Error {
public:
    RunError(const std::string& what, Trajectory partial) : Error(what), partial_(std::move(partial)) {}
    const Trajectory& partial() const { return partial_; }

private:
    Trajectory partial_;
};

/// Specific-set documents given to a run.
struct SpecificSet {
    std::span<const Document> train;
    std::span<const Document> val;
};

/// One gradient per unit and one specific gradient (shared by all units);
/// at most two gradient vectors are alive at a time.
AlignmentScores compute_alignments(const ModelState& state, const MixtureSource& source,
                                   std::span<const Document> specific_train, std::size_t batch_size,
                                   const WindowConfig& window, AlignmentMetric metric, Rng& rng, Rng& aux);

AlignmentScores compute_alignments(const ModelState& state, const DomainCorpus& corpus,
                                   std::span<const Document> specific_train, const DGAConfig& cfg,
                                   const TrainConfig& train, Rng& rng);

/// Called after each record is appended; lets callers stream output.
struct RunObserver {
    std::function<void(const WeightRecord&)> on_weights;
    std::function<void(const MetricRecord&)> on_metrics;
};

/// Training interleaved with periodic reweighting over any mixture source.
RunResult run_reweighting(const MixtureSource& source, const SpecificSet& specific, const ModelConfig& model_cfg,
                          const OptimizerConfig& opt_cfg, const TrainConfig& train, const DGAConfig& dga,
                          const RunObserver* observer = nullptr);

RunResult run_dga(const DomainCorpus& corpus, const SpecificSet& specific, const ModelConfig& model_cfg,
                  const OptimizerConfig& opt_cfg, const TrainConfig& train, const DGAConfig& dga,
                  const RunObserver* observer = nullptr);

/// Plain training on a fixed mixture.
RunResult run_fixed(const DomainCorpus& corpus, const MixtureWeights& weights, const SpecificSet& specific,
                    const ModelConfig& model_cfg, const OptimizerConfig& opt_cfg, const TrainConfig& train,
                    const RunObserver* observer = nullptr);

}  // namespace mixopt
