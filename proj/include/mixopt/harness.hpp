#pragma once

#include "mixopt/distmix.hpp"
#include "mixopt/features.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mixopt {

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

/// k order-1 Markov sources with Dirichlet transition rows. With
/// shared_fraction s every source is s * T_shared + (1 - s) * T_own.
struct SyntheticRecipe {
    std::size_t k = 3;
    std::size_t vocab_size = 16;
    std::size_t docs_per_domain = 200;
    std::size_t doc_length = 64;
    double concentration = 0.3;
    double shared_fraction = 0.0;
    std::optional<MixtureWeights> specific_mixture;  // none: a separate target source
    std::size_t specific_docs = 100;
    std::vector<MixtureWeights> basis_mixtures;      // auxiliary sets for distribution reweighting
    std::size_t basis_docs = 200;
    std::uint64_t seed = 0;
};

struct SyntheticData {
    DomainCorpus corpus;
    std::vector<Document> specific;
    std::vector<std::size_t> specific_sources;  // generating domain per specific document
    std::optional<MixtureWeights> truth;
    std::vector<BasisSet> basis_sets;
    std::vector<RowMatrix> transitions;  // one per domain; the target source last if present
};

SyntheticData make_synthetic(const SyntheticRecipe& recipe);
SyntheticData make_synthetic(SyntheticRecipe recipe, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class Algorithm { uniform, is, dga, dga_ema, dga_dist };
Algorithm parse_algorithm(std::string_view tag);
std::string_view to_string(Algorithm a);

struct ExperimentConfig {
    std::uint64_t seed = 0;
    Algorithm algorithm = Algorithm::dga_ema;
    int threads = 1;

    // corpus: loaded when corpus_path is set, synthetic otherwise
    std::optional<std::filesystem::path> corpus_path;
    CorpusFormat corpus_format = CorpusFormat::text;
    std::optional<std::filesystem::path> specific_path;
    SyntheticRecipe synthetic;
    std::optional<std::uint64_t> synthetic_seed;  // defaults to seed

    double split = 0.8;
    std::optional<std::size_t> token_budget;
    std::vector<std::size_t> budget_domains;   // empty: every domain
    std::vector<std::size_t> cluster_branching;  // non-empty: re-partition pooled documents
    std::size_t embedding_dim = kDefaultEmbeddingDim;

    // distribution reweighting
    std::vector<std::filesystem::path> basis_paths;
    std::optional<std::filesystem::path> basis_file;
    bool basis_include_specific = true;

    ModelConfig model;
    OptimizerConfig optimizer;
    DGAConfig dga;
    TrainConfig train;

    void validate() const;
};

/// Flat "section.key" -> value map; keys outside a section have no prefix.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap read_config_file(const std::filesystem::path& file);
/// Each entry is "key=value".
void apply_overrides(ConfigMap& map, std::span<const std::string> overrides);
/// Unknown keys and bad values are errors; the algorithm tag is checked first.
ExperimentConfig parse_experiment_config(const ConfigMap& map);
/// Every field, fully resolved.
ConfigMap to_config_map(const ExperimentConfig& cfg);
void write_config_file(const ConfigMap& map, const std::filesystem::path& file);

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

/// Everything a run consumes, after clustering, budgets and the specific split.
struct ExperimentData {
    DomainCorpus corpus;
    std::vector<Document> specific_train;
    std::vector<Document> specific_val;
    ClusterModel model;  // aligned with corpus domains
    std::vector<BasisSet> basis_sets;
    std::optional<MixtureWeights> truth;
};

ExperimentData prepare_experiment(const ExperimentConfig& cfg);

struct AlgorithmRun {
    RunResult result;
    std::optional<BasisMatrix> basis;   // dga-dist only
    std::optional<ISHistogram> histogram;  // is only
};

/// uniform: token shares; is: histogram frozen before training.
AlgorithmRun run_baseline(const ExperimentConfig& cfg, const ExperimentData& data,
                          const RunObserver* observer = nullptr);
/// Dispatches on cfg.algorithm. dga is the plain update (beta = 1), dga-ema uses cfg.dga.beta.
AlgorithmRun run_algorithm(const ExperimentConfig& cfg, const ExperimentData& data,
                           const RunObserver* observer = nullptr);

/// Writes config.ini, metrics.jsonl, weights.csv, domain_weights.csv and
/// model.bin into `out_dir`. On failure the partial outputs stay and an error
/// record ends metrics.jsonl before the error is rethrown.
void run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Shortest round-trip decimal text.
std::string format_double(double x);
/// FNV-1a of the formatted weights.
std::string weights_digest(const MixtureWeights& w);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ReportRow {
    std::string run;
    std::string algorithm;
    std::uint64_t seed = 0;
    std::size_t steps = 0;
    double final_spe_val = 0.0;
    double best_spe_val = 0.0;
    std::size_t best_step = 0;
};

struct ReportResult {
    std::vector<ReportRow> rows;
    std::vector<std::string> warnings;
};

/// Writes report.csv, loss_series.csv and weight_series.csv into `out_dir`.
ReportResult report(std::span<const std::filesystem::path> run_dirs, const std::filesystem::path& out_dir);

}  // namespace mixopt
