#pragma once

#include "mixopt/dga.hpp"
#include "mixopt/importance.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mixopt {

/// k x N matrix whose columns are importance-sampling histograms of basis sets.
struct BasisMatrix {
    Matrix P;
    std::vector<std::string> labels;

    std::size_t domains() const { return static_cast<std::size_t>(P.rows()); }
    std::size_t size() const { return static_cast<std::size_t>(P.cols()); }
    void validate() const;
};

struct BasisSet {
    std::string label;
    std::vector<Document> documents;
};

/// Column j is the histogram of basis set j; with `include_specific` the
/// specific set's histogram is appended as the last column.
BasisMatrix build_basis(std::span<const BasisSet> basis_sets, const ClusterModel& model, bool include_specific,
                        std::span<const Document> specific_docs);

/// Domain weights P * alpha_dist.
template <typename Derived>
VectorX<typename Derived::Scalar> compose_weights(const BasisMatrix& basis, const Eigen::MatrixBase<Derived>& alpha_dist) {
    if (static_cast<std::size_t>(alpha_dist.size()) != basis.size()) {
        throw Error("compose_weights: expected " + std::to_string(basis.size()) + " distribution weights, got " +
                    std::to_string(alpha_dist.size()));
    }
    return basis.P.template cast<typename Derived::Scalar>() * alpha_dist;
}

/// Units are basis distributions mix(p_i) over the corpus domains.
class BasisSource final : public MixtureSource {
public:
    BasisSource(const DomainCorpus& corpus, const BasisMatrix& basis);
    std::size_t units() const override { return basis_.size(); }
    const DomainCorpus& corpus() const override { return corpus_; }
    MixtureWeights natural_weights() const override;
    MixtureWeights compose(const MixtureWeights& w) const override { return compose_weights(basis_, w); }

protected:
    std::size_t resolve(std::size_t unit, Rng& aux) const override;

private:
    const DomainCorpus& corpus_;
    const BasisMatrix& basis_;
    std::vector<MixtureWeights> columns_;
};

/// DGA in distribution space: weights live on the N-simplex, training
/// batches follow P * alpha_dist and the alignment batch of unit i follows p_i.
RunResult run_dga_distribution(const DomainCorpus& corpus, const BasisMatrix& basis, const SpecificSet& specific,
                               const ModelConfig& model_cfg, const OptimizerConfig& opt_cfg, const TrainConfig& train,
                               const DGAConfig& dga, const RunObserver* observer = nullptr);

/// {"labels": [...], "columns": [[...], ...]}
void save_basis(const BasisMatrix& basis, const std::filesystem::path& file);
BasisMatrix load_basis(const std::filesystem::path& file);

}  // namespace mixopt
