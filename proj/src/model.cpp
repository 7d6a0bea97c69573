#include "mixopt/model.hpp"

#include "mixopt/parallel.hpp"
#include "mixopt/rng.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace mixopt {

ModelKind parse_model_kind(std::string_view tag) {
    if (tag == "loglinear") {
        return ModelKind::loglinear;
    }
    if (tag == "mlp1") {
        return ModelKind::mlp1;
    }
    throw Error("unknown model kind: " + std::string(tag));
}

std::string_view to_string(ModelKind kind) { return kind == ModelKind::loglinear ? "loglinear" : "mlp1"; }

std::size_t ModelConfig::param_count() const {
    const std::size_t V = vocab_size;
    const std::size_t c = context_length;
    if (kind == ModelKind::loglinear) {
        return c * V * V + V;
    }
    const std::size_t H = feature_dim;
    return c * V * H + H + V * H + V;
}

void ModelConfig::validate() const {
    if (vocab_size < 2) {
        throw Error("model: vocab_size must be at least 2");
    }
    if (context_length < 1) {
        throw Error("model: context_length must be at least 1");
    }
    if (kind == ModelKind::mlp1 && feature_dim < 1) {
        throw Error("model: feature_dim must be at least 1 for mlp1");
    }
}

ModelState init_model(const ModelConfig& config) {
    config.validate();
    ModelState s{Vector(static_cast<Eigen::Index>(config.param_count())), config};
    Rng rng(config.seed, 0x1417);
    for (Eigen::Index i = 0; i < s.params.size(); ++i) {
        s.params(i) = 0.02 * rng.normal();
    }
    return s;
}

namespace {

std::atomic<std::uint64_t> g_grad_evals{0};

constexpr std::size_t kChunk = 16;  // sequences per reduction block

/// Views of the flat parameter vector for each model kind.
struct Layout {
    std::size_t V, c, H;
    std::size_t table(std::size_t offset, TokenId tok) const {  // row start of a context table
        const std::size_t width = H ? H : V;
        return (offset * V + static_cast<std::size_t>(tok)) * width;
    }
    std::size_t bias1() const { return c * V * H; }
    std::size_t out_weight() const { return bias1() + H; }
    std::size_t out_bias() const { return H ? out_weight() + V * H : c * V * V; }
};

struct Partial {
    double loss_sum = 0.0;
    std::size_t positions = 0;
    Vector grad;
};

using ConstMap = Eigen::Map<const Vector>;
using MutMap = Eigen::Map<Vector>;

double log_softmax_and_prob(Vector& z, TokenId target) {
    const double m = z.maxCoeff();
    const double lse = m + std::log((z.array() - m).exp().sum());
    const double loss = lse - z(target);
    z = (z.array() - lse).exp();
    return loss;
}

void run_chunk(const ModelState& st, const Batch& batch, std::size_t begin, std::size_t end, bool want_grad,
               Partial& out) {
    const auto& cfg = st.config;
    const std::size_t V = cfg.vocab_size;
    const std::size_t c = cfg.context_length;
    const bool mlp = cfg.kind == ModelKind::mlp1;
    const std::size_t H = mlp ? cfg.feature_dim : 0;
    const Layout L{V, c, H};
    const double* theta = st.params.data();
    if (want_grad) {
        out.grad = Vector::Zero(st.params.size());
    }
    double* g = want_grad ? out.grad.data() : nullptr;

    Vector z(static_cast<Eigen::Index>(V));
    Vector h(static_cast<Eigen::Index>(H));
    Vector dh(static_cast<Eigen::Index>(H));
    const auto Vi = static_cast<Eigen::Index>(V);
    const auto Hi = static_cast<Eigen::Index>(H);

    for (std::size_t s = begin; s < end; ++s) {
        const Document& seq = batch.sequences[s];
        for (std::size_t j = c; j < seq.size(); ++j) {
            const TokenId target = seq[j];
            if (target < 0 || static_cast<std::size_t>(target) >= V) {
                throw Error("token id out of model vocabulary");
            }
            for (std::size_t q = 0; q < c; ++q) {
                const TokenId t = seq[j - 1 - q];
                if (t < 0 || static_cast<std::size_t>(t) >= V) {
                    throw Error("token id out of model vocabulary");
                }
            }
            if (!mlp) {
                z = ConstMap(theta + L.out_bias(), Vi);
                for (std::size_t q = 0; q < c; ++q) {
                    z += ConstMap(theta + L.table(q, seq[j - 1 - q]), Vi);
                }
                out.loss_sum += log_softmax_and_prob(z, target);
                if (g) {
                    z(target) -= 1.0;
                    MutMap(g + L.out_bias(), Vi) += z;
                    for (std::size_t q = 0; q < c; ++q) {
                        MutMap(g + L.table(q, seq[j - 1 - q]), Vi) += z;
                    }
                }
            } else {
                h = ConstMap(theta + L.bias1(), Hi);
                for (std::size_t q = 0; q < c; ++q) {
                    h += ConstMap(theta + L.table(q, seq[j - 1 - q]), Hi);
                }
                h = h.array().tanh();
                Eigen::Map<const RowMatrix> W2(theta + L.out_weight(), Vi, Hi);
                z = ConstMap(theta + L.out_bias(), Vi) + W2 * h;
                out.loss_sum += log_softmax_and_prob(z, target);
                if (g) {
                    z(target) -= 1.0;
                    Eigen::Map<RowMatrix>(g + L.out_weight(), Vi, Hi).noalias() += z * h.transpose();
                    MutMap(g + L.out_bias(), Vi) += z;
                    dh.noalias() = W2.transpose() * z;
                    dh.array() *= 1.0 - h.array().square();
                    MutMap(g + L.bias1(), Hi) += dh;
                    for (std::size_t q = 0; q < c; ++q) {
                        MutMap(g + L.table(q, seq[j - 1 - q]), Hi) += dh;
                    }
                }
            }
            ++out.positions;
        }
    }
}

LossAndGrad evaluate(const ModelState& st, const Batch& batch, bool want_grad) {
    if (static_cast<std::size_t>(st.params.size()) != st.config.param_count()) {
        throw Error("model: parameter count does not match config");
    }
    const std::size_t n = batch.sequences.size();
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    std::vector<Partial> parts(chunks);
    parallel_for(chunks, [&](std::size_t i) {
        run_chunk(st, batch, i * kChunk, std::min(n, (i + 1) * kChunk), want_grad, parts[i]);
    });
    LossAndGrad r;
    std::size_t positions = 0;
    double loss_sum = 0.0;
    if (want_grad) {
        r.grad = Vector::Zero(st.params.size());
    }
    for (auto& p : parts) {
        loss_sum += p.loss_sum;
        positions += p.positions;
        if (want_grad) {
            r.grad += p.grad;
        }
    }
    if (positions == 0) {
        throw Error("batch has no predictable positions");
    }
    r.loss = loss_sum / static_cast<double>(positions);
    if (!std::isfinite(r.loss)) {
        throw Error("non-finite loss in forward pass");
    }
    if (want_grad) {
        r.grad /= static_cast<double>(positions);
        if (!r.grad.allFinite()) {
            throw Error("non-finite gradient");
        }
    }
    return r;
}

}  // namespace

double loss(const ModelState& state, const Batch& batch) { return evaluate(state, batch, false).loss; }

LossAndGrad loss_and_grad(const ModelState& state, const Batch& batch) {
    g_grad_evals.fetch_add(1, std::memory_order_relaxed);
    return evaluate(state, batch, true);
}

GradVector grad(const ModelState& state, const Batch& batch) { return loss_and_grad(state, batch).grad; }

std::uint64_t gradient_evaluations() { return g_grad_evals.load(); }
void reset_gradient_evaluations() { g_grad_evals.store(0); }

double dot(const GradVector& a, const GradVector& b) {
    if (a.size() != b.size()) {
        throw Error("dot: length mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
    return a.dot(b);
}

OptimizerKind parse_optimizer_kind(std::string_view tag) {
    if (tag == "sgd") {
        return OptimizerKind::sgd;
    }
    if (tag == "adam" || tag == "adamw") {
        return OptimizerKind::adam;
    }
    throw Error("unknown optimizer: " + std::string(tag));
}

LrSchedule parse_lr_schedule(std::string_view tag) {
    if (tag == "constant") {
        return LrSchedule::constant;
    }
    if (tag == "cosine") {
        return LrSchedule::cosine;
    }
    throw Error("unknown learning-rate schedule: " + std::string(tag));
}

OptimizerState init_optimizer(const OptimizerConfig& config, std::size_t param_count) {
    OptimizerState s;
    s.config = config;
    if (config.kind == OptimizerKind::adam) {
        s.first_moment = Vector::Zero(static_cast<Eigen::Index>(param_count));
        s.second_moment = Vector::Zero(static_cast<Eigen::Index>(param_count));
    }
    return s;
}

double learning_rate(const OptimizerConfig& config, std::size_t step) {
    if (config.schedule == LrSchedule::cosine && config.total_steps > 0) {
        const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(config.total_steps));
        return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
    }
    return config.lr;
}

std::pair<ModelState, OptimizerState> optimizer_step(ModelState state, OptimizerState opt, const GradVector& g) {
    if (g.size() != state.params.size()) {
        throw Error("optimizer: gradient length does not match parameters");
    }
    const auto& c = opt.config;
    const double lr = learning_rate(c, opt.step_count);
    if (c.kind == OptimizerKind::sgd) {
        if (c.weight_decay != 0.0) {
            state.params -= lr * (g + c.weight_decay * state.params);
        } else {
            state.params -= lr * g;
        }
    } else {
        if (opt.first_moment.size() != g.size()) {
            throw Error("optimizer: moment length does not match parameters");
        }
        const double t = static_cast<double>(opt.step_count + 1);
        opt.first_moment = c.beta1 * opt.first_moment + (1.0 - c.beta1) * g;
        opt.second_moment = c.beta2 * opt.second_moment + (1.0 - c.beta2) * g.cwiseAbs2();
        const double bc1 = 1.0 - std::pow(c.beta1, t);
        const double bc2 = 1.0 - std::pow(c.beta2, t);
        if (c.weight_decay != 0.0) {
            state.params *= 1.0 - lr * c.weight_decay;
        }
        state.params.array() -=
            lr * (opt.first_moment.array() / bc1) / ((opt.second_moment.array() / bc2).sqrt() + c.eps);
    }
    if (!state.params.allFinite()) {
        throw Error("optimizer: non-finite parameter update");
    }
    ++opt.step_count;
    return {std::move(state), std::move(opt)};
}

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'X', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) {
        throw Error("checkpoint truncated");
    }
    return v;
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + file.string());
    }
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, state.config.kind == ModelKind::loglinear ? 0u : 1u);
    put<std::uint64_t>(out, state.config.vocab_size);
    put<std::uint64_t>(out, state.config.context_length);
    put<std::uint64_t>(out, state.config.feature_dim);
    put<std::uint64_t>(out, state.config.seed);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(state.params.size()));
    out.write(reinterpret_cast<const char*>(state.params.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(state.params.size())));
}

ModelState load_checkpoint(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw Error("cannot open checkpoint " + file.string());
    }
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw Error("not a checkpoint file: " + file.string());
    }
    if (get<std::uint32_t>(in) != kCheckpointVersion) {
        throw Error("unsupported checkpoint version");
    }
    ModelState s;
    s.config.kind = get<std::uint32_t>(in) == 0 ? ModelKind::loglinear : ModelKind::mlp1;
    s.config.vocab_size = get<std::uint64_t>(in);
    s.config.context_length = get<std::uint64_t>(in);
    s.config.feature_dim = get<std::uint64_t>(in);
    s.config.seed = get<std::uint64_t>(in);
    const auto p = get<std::uint64_t>(in);
    if (p != s.config.param_count()) {
        throw Error("checkpoint parameter count does not match its config");
    }
    s.params.resize(static_cast<Eigen::Index>(p));
    in.read(reinterpret_cast<char*>(s.params.data()), static_cast<std::streamsize>(sizeof(double) * p));
    if (!in) {
        throw Error("checkpoint truncated");
    }
    return s;
}

}  // namespace mixopt
