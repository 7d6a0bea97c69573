#include "mixopt/importance.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>

namespace mixopt {

std::size_t ISHistogram::nonzero() const {
    return static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }));
}

ISHistogram is_weights(std::span<const Document> specific_docs, const ClusterModel& model, const Embedder& embedder,
                       AssignMode mode) {
    if (specific_docs.empty()) {
        throw Error("importance sampling: empty specific set");
    }
    if (embedder.dim() != model.dim()) {
        throw Error("importance sampling: embedder and cluster model dimensions differ");
    }
    const auto labels = assign_all(embed_all(specific_docs, embedder), model, mode);
    ISHistogram h;
    h.n_specific = specific_docs.size();
    h.counts.assign(model.leaf_count(), 0);
    for (std::size_t l : labels) {
        ++h.counts[l];
    }
    h.weights.resize(static_cast<Eigen::Index>(model.leaf_count()));
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        h.weights(static_cast<Eigen::Index>(i)) = static_cast<double>(h.counts[i]) / static_cast<double>(h.n_specific);
    }
    return h;
}

ISHistogram is_weights(std::span<const Document> specific_docs, const ClusterModel& model) {
    return is_weights(specific_docs, model, HashedNgramEmbedder(model.dim()));
}

std::string to_json(const ISHistogram& hist) {
    nlohmann::json j;
    j["counts"] = hist.counts;
    j["weights"] = std::vector<double>(hist.weights.data(), hist.weights.data() + hist.weights.size());
    j["n"] = hist.n_specific;
    return j.dump();
}

}  // namespace mixopt
