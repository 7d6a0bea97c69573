#pragma once

#include "mixopt/corpus.hpp"
#include "mixopt/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <utility>

namespace mixopt {

/// loglinear: logits = bias + sum over context offsets of a per-offset
/// vocab x vocab table row. mlp1: one tanh hidden layer over the
/// concatenated one-hot context, then a linear softmax layer.
enum class ModelKind { loglinear, mlp1 };

ModelKind parse_model_kind(std::string_view tag);
std::string_view to_string(ModelKind kind);

struct ModelConfig {
    ModelKind kind = ModelKind::loglinear;
    std::size_t vocab_size = 16;
    std::size_t context_length = 1;
    std::size_t feature_dim = 32;  // mlp1 hidden width
    std::uint64_t seed = 0;

    std::size_t param_count() const;
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct ModelState {
    Vector params;
    ModelConfig config;
};

ModelState init_model(const ModelConfig& config);

/// Mean next-token cross-entropy over every predicted position of the batch.
/// A position j of a sequence is predicted from the `context_length` tokens before it.
double loss(const ModelState& state, const Batch& batch);

struct LossAndGrad {
    double loss = 0.0;
    GradVector grad;
};

/// Exact analytic gradient of `loss`. Every call increments the process-wide
/// gradient evaluation counter.
LossAndGrad loss_and_grad(const ModelState& state, const Batch& batch);
GradVector grad(const ModelState& state, const Batch& batch);

std::uint64_t gradient_evaluations();
void reset_gradient_evaluations();

/// Inner product in a fixed summation order.
double dot(const GradVector& a, const GradVector& b);

enum class OptimizerKind { sgd, adam };
enum class LrSchedule { constant, cosine };

OptimizerKind parse_optimizer_kind(std::string_view tag);
LrSchedule parse_lr_schedule(std::string_view tag);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled for adam, L2 for sgd
    LrSchedule schedule = LrSchedule::constant;
    std::size_t total_steps = 0;  // cosine horizon
};

struct OptimizerState {
    OptimizerConfig config;
    std::size_t step_count = 0;
    Vector first_moment;
    Vector second_moment;
};

OptimizerState init_optimizer(const OptimizerConfig& config, std::size_t param_count);

/// Step size used for the update that takes step_count from `step` to `step + 1`.
double learning_rate(const OptimizerConfig& config, std::size_t step);

std::pair<ModelState, OptimizerState> optimizer_step(ModelState state, OptimizerState opt, const GradVector& g);

void save_checkpoint(const ModelState& state, const std::filesystem::path& file);
ModelState load_checkpoint(const std::filesystem::path& file);

}  // namespace mixopt
