#include "mixopt/dga.hpp"

namespace mixopt {

Batch MixtureSource::sample_mixture(const MixtureWeights& weights, std::size_t batch_size, const WindowConfig& cfg,
                                    Rng& rng, Rng& aux) const {
    if (static_cast<std::size_t>(weights.size()) != units()) {
        throw Error("mixture weight length does not match unit count");
    }
    const auto& domains = corpus().domains;
    Batch b;
    b.sequences.reserve(batch_size);
    b.source_domains.reserve(batch_size);
    for (std::size_t n = 0; n < batch_size; ++n) {
        const std::size_t d = resolve(categorical_draw(weights, rng), aux);
        b.sequences.push_back(sample_window(domains[d].documents, cfg, rng));
        b.source_domains.push_back(d);
    }
    return b;
}

Batch MixtureSource::sample_unit(std::size_t unit, std::size_t batch_size, const WindowConfig& cfg, Rng& rng,
                                 Rng& aux) const {
    if (unit >= units()) {
        throw Error("unit index out of range");
    }
    const auto& domains = corpus().domains;
    Batch b;
    b.sequences.reserve(batch_size);
    b.source_domains.reserve(batch_size);
    for (std::size_t n = 0; n < batch_size; ++n) {
        const std::size_t d = resolve(unit, aux);
        b.sequences.push_back(sample_window(domains[d].documents, cfg, rng));
        b.source_domains.push_back(d);
    }
    return b;
}

AlignmentMetric parse_alignment_metric(std::string_view tag) {
    if (tag == "dot") {
        return AlignmentMetric::dot;
    }
    if (tag == "cosine") {
        return AlignmentMetric::cosine;
    }
    throw Error("unknown alignment metric: " + std::string(tag));
}

void DGAConfig::validate() const {
    if (period < 1) {
        throw Error("dga: reweighting period must be at least 1");
    }
    if (!(beta >= 0.0 && beta <= 1.0)) {
        throw Error("dga: beta must be in [0, 1]");
    }
    if (!(eta >= 0.0) || !std::isfinite(eta)) {
        throw Error("dga: eta must be finite and non-negative");
    }
    if (alignment_sign != 1.0 && alignment_sign != -1.0) {
        throw Error("dga: alignment_sign must be +1 or -1");
    }
}

AlignmentScores compute_alignments(const ModelState& state, const MixtureSource& source,
                                   std::span<const Document> specific_train, std::size_t batch_size,
                                   const WindowConfig& window, AlignmentMetric metric, Rng& rng, Rng& aux) {
    const Batch z = sample_documents(specific_train, batch_size, window, rng);
    const GradVector g_spe = grad(state, z);
    const double spe_norm = g_spe.norm();
    AlignmentScores s;
    s.a.resize(static_cast<Eigen::Index>(source.units()));
    for (std::size_t i = 0; i < source.units(); ++i) {
        const GradVector g_i = grad(state, source.sample_unit(i, batch_size, window, rng, aux));
        double a = dot(g_i, g_spe);
        if (metric == AlignmentMetric::cosine) {
            const double denom = g_i.norm() * spe_norm;
            a = denom > 0.0 ? a / denom : 0.0;
        }
        s.a(static_cast<Eigen::Index>(i)) = a;
    }
    if (!s.a.allFinite()) {
        throw Error("non-finite alignment score");
    }
    return s;
}

AlignmentScores compute_alignments(const ModelState& state, const DomainCorpus& corpus,
                                   std::span<const Document> specific_train, const DGAConfig& cfg,
                                   const TrainConfig& train, Rng& rng) {
    Rng aux(train.seed, 0xa0);
    const std::size_t bs = cfg.align_batch_size ? cfg.align_batch_size : train.batch_size;
    return compute_alignments(state, DomainSource(corpus), specific_train, bs,
                              WindowConfig{train.window, state.config.context_length}, cfg.metric, rng, aux);
}

namespace {

enum Stream : std::uint64_t { kTrain = 11, kTrainAux = 12, kAlign = 21, kAlignAux = 22 };

}  // namespace

RunResult run_reweighting(const MixtureSource& source, const SpecificSet& specific, const ModelConfig& model_cfg,
                          const OptimizerConfig& opt_cfg, const TrainConfig& train, const DGAConfig& dga,
                          const RunObserver* observer) {
    dga.validate();
    if (model_cfg.vocab_size != source.corpus().vocab_size) {
        throw Error("model vocab_size (" + std::to_string(model_cfg.vocab_size) + ") differs from corpus vocab_size (" +
                    std::to_string(source.corpus().vocab_size) + ")");
    }
    if (train.batch_size == 0 || train.log_interval == 0) {
        throw Error("batch_size and log_interval must be positive");
    }
    if (specific.train.empty() || specific.val.empty()) {
        throw Error("specific train and validation sets must be non-empty");
    }
    const std::size_t k = source.units();
    MixtureWeights alpha = dga.initial_weights.size() ? dga.initial_weights : source.natural_weights();
    if (static_cast<std::size_t>(alpha.size()) != k) {
        throw Error("initial weights have length " + std::to_string(alpha.size()) + ", expected " + std::to_string(k));
    }
    require_simplex(alpha, "initial weights");
    MixtureWeights ema = alpha;

    OptimizerConfig oc = opt_cfg;
    if (oc.total_steps == 0) {
        oc.total_steps = train.steps;
    }
    RunResult result{init_model(model_cfg), {}};
    OptimizerState opt = init_optimizer(oc, model_cfg.param_count());
    Trajectory& traj = result.trajectory;

    const WindowConfig window{train.window, model_cfg.context_length};
    const std::size_t align_bs = dga.align_batch_size ? dga.align_batch_size : train.batch_size;
    Rng train_rng(train.seed, kTrain);
    Rng train_aux(train.seed, kTrainAux);
    Rng align_rng(train.seed, kAlign);
    Rng align_aux(train.seed, kAlignAux);
    const Batch spe_train_eval = full_batch(specific.train);
    const Batch spe_val_eval = full_batch(specific.val);

    auto push_weights = [&](WeightRecord rec) {
        traj.weights.push_back(std::move(rec));
        if (observer && observer->on_weights) {
            observer->on_weights(traj.weights.back());
        }
    };
    auto push_metrics = [&](MetricRecord rec) {
        traj.metrics.push_back(rec);
        if (observer && observer->on_metrics) {
            observer->on_metrics(traj.metrics.back());
        }
    };

    const std::uint64_t evals_before = gradient_evaluations();
    try {
        push_weights({0, alpha, ema, {}, source.compose(ema)});
        for (std::size_t t = 0; t < train.steps; ++t) {
            const MixtureWeights& sampling = dga.use_ema ? ema : alpha;
            const Batch batch = source.sample_mixture(sampling, train.batch_size, window, train_rng, train_aux);
            LossAndGrad lg = loss_and_grad(result.model, batch);
            std::tie(result.model, opt) = optimizer_step(std::move(result.model), std::move(opt), lg.grad);

            if (dga.reweight && t % dga.period == 0) {
                AlignmentScores scores = compute_alignments(result.model, source, specific.train, align_bs, window,
                                                            dga.metric, align_rng, align_aux);
                scores.step = t;
                alpha = mirror_step(alpha, dga.alignment_sign * scores.a, dga.eta);
                ema = dga.use_ema ? ema_update(ema, alpha, dga.beta) : alpha;
                push_weights({t + 1, alpha, ema, scores.a, source.compose(ema)});
            }
            if ((t + 1) % train.log_interval == 0 || t + 1 == train.steps) {
                push_metrics({t + 1, lg.loss, loss(result.model, spe_train_eval), loss(result.model, spe_val_eval)});
            }
        }
        if (!dga.reweight && train.steps > 0) {
            push_weights({train.steps, alpha, ema, {}, source.compose(ema)});
        }
    } catch (const Error& e) {
        traj.gradient_evaluations = gradient_evaluations() - evals_before;
        throw RunError(e.what(), traj);
    }
    traj.gradient_evaluations = gradient_evaluations() - evals_before;
    return result;
}

RunResult run_dga(const DomainCorpus& corpus, const SpecificSet& specific, const ModelConfig& model_cfg,
                  const OptimizerConfig& opt_cfg, const TrainConfig& train, const DGAConfig& dga,
                  const RunObserver* observer) {
    return run_reweighting(DomainSource(corpus), specific, model_cfg, opt_cfg, train, dga, observer);
}

RunResult run_fixed(const DomainCorpus& corpus, const MixtureWeights& weights, const SpecificSet& specific,
                    const ModelConfig& model_cfg, const OptimizerConfig& opt_cfg, const TrainConfig& train,
                    const RunObserver* observer) {
    DGAConfig frozen;
    frozen.reweight = false;
    frozen.eta = 0.0;
    frozen.initial_weights = weights;
    return run_reweighting(DomainSource(corpus), specific, model_cfg, opt_cfg, train, frozen, observer);
}

}  // namespace mixopt
