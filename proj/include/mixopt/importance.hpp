#pragma once

#include "mixopt/features.hpp"

#include <span>
#include <vector>

namespace mixopt {

/// Fraction of specific documents whose embedding falls nearest each leaf.
struct ISHistogram {
    MixtureWeights weights;
    std::vector<std::size_t> counts;
    std::size_t n_specific = 0;

    std::size_t nonzero() const;
};

ISHistogram is_weights(std::span<const Document> specific_docs, const ClusterModel& model,
                       const Embedder& embedder, AssignMode mode = AssignMode::exact);
ISHistogram is_weights(std::span<const Document> specific_docs, const ClusterModel& model);

/// {"counts": [...], "weights": [...], "n": N}
std::string to_json(const ISHistogram& hist);

}  // namespace mixopt
