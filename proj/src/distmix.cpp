#include "mixopt/distmix.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace mixopt {

void BasisMatrix::validate() const {
    if (P.cols() == 0 || P.rows() == 0) {
        throw Error("basis matrix is empty");
    }
    if (!labels.empty() && labels.size() != size()) {
        throw Error("basis matrix: label count does not match column count");
    }
    for (Eigen::Index j = 0; j < P.cols(); ++j) {
        if (!is_simplex(P.col(j), 1e-9)) {
            throw Error("basis column " + std::to_string(j) + " is not a simplex point");
        }
    }
}

BasisMatrix build_basis(std::span<const BasisSet> basis_sets, const ClusterModel& model, bool include_specific,
                        std::span<const Document> specific_docs) {
    if (basis_sets.empty()) {
        throw Error("build_basis: need at least one basis set");
    }
    const std::size_t n = basis_sets.size() + (include_specific ? 1 : 0);
    BasisMatrix b;
    b.P.resize(static_cast<Eigen::Index>(model.leaf_count()), static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < basis_sets.size(); ++j) {
        if (basis_sets[j].documents.empty()) {
            throw Error("build_basis: empty basis set '" + basis_sets[j].label + "'");
        }
        b.P.col(static_cast<Eigen::Index>(j)) = is_weights(basis_sets[j].documents, model).weights;
        b.labels.push_back(basis_sets[j].label);
    }
    if (include_specific) {
        b.P.col(static_cast<Eigen::Index>(n - 1)) = is_weights(specific_docs, model).weights;
        b.labels.emplace_back("specific");
    }
    return b;
}

BasisSource::BasisSource(const DomainCorpus& corpus, const BasisMatrix& basis) : corpus_(corpus), basis_(basis) {
    basis_.validate();
    if (basis_.domains() != corpus_.k()) {
        throw Error("basis matrix has " + std::to_string(basis_.domains()) + " rows but the corpus has " +
                    std::to_string(corpus_.k()) + " domains");
    }
    for (Eigen::Index j = 0; j < basis_.P.cols(); ++j) {
        columns_.emplace_back(basis_.P.col(j));
    }
}

MixtureWeights BasisSource::natural_weights() const { return uniform_weights(static_cast<Eigen::Index>(units())); }

std::size_t BasisSource::resolve(std::size_t unit, Rng& aux) const { return categorical_draw(columns_[unit], aux); }

RunResult run_dga_distribution(const DomainCorpus& corpus, const BasisMatrix& basis, const SpecificSet& specific,
                               const ModelConfig& model_cfg, const OptimizerConfig& opt_cfg, const TrainConfig& train,
                               const DGAConfig& dga, const RunObserver* observer) {
    return run_reweighting(BasisSource(corpus, basis), specific, model_cfg, opt_cfg, train, dga, observer);
}

void save_basis(const BasisMatrix& basis, const std::filesystem::path& file) {
    nlohmann::json j;
    j["labels"] = basis.labels;
    auto& cols = j["columns"] = nlohmann::json::array();
    for (Eigen::Index c = 0; c < basis.P.cols(); ++c) {
        std::vector<double> col(static_cast<std::size_t>(basis.P.rows()));
        for (Eigen::Index r = 0; r < basis.P.rows(); ++r) {
            col[static_cast<std::size_t>(r)] = basis.P(r, c);
        }
        cols.push_back(col);
    }
    std::ofstream out(file);
    if (!out) {
        throw Error("cannot write " + file.string());
    }
    out << j.dump() << '\n';
}

BasisMatrix load_basis(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) {
        throw Error("cannot open basis file " + file.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed basis file " + file.string() + ": " + e.what());
    }
    BasisMatrix b;
    b.labels = j.at("labels").get<std::vector<std::string>>();
    const auto cols = j.at("columns").get<std::vector<std::vector<double>>>();
    if (cols.empty()) {
        throw Error("basis file has no columns");
    }
    b.P.resize(static_cast<Eigen::Index>(cols.front().size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
        if (cols[c].size() != cols.front().size()) {
            throw Error("basis file columns differ in length");
        }
        for (std::size_t r = 0; r < cols[c].size(); ++r) {
            b.P(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cols[c][r];
        }
    }
    b.validate();
    return b;
}

}  // namespace mixopt
