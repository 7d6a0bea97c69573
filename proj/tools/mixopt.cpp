#include "mixopt/harness.hpp"
#include "mixopt/parallel.hpp"
#include "mixopt/verify.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <sstream>
#include <iostream>

using namespace mixopt;
namespace fs = std::filesystem;

namespace {

struct ConfigArgs {
    std::string file;
    std::vector<std::string> sets;

    void attach(CLI::App* app) {
        app->add_option("--config", file, "key=value config file with [section] headers");
        app->add_option("--set", sets, "override, key=value (repeatable)");
    }

    ConfigMap map() const {
        ConfigMap m = file.empty() ? ConfigMap{} : read_config_file(file);
        apply_overrides(m, sets);
        return m;
    }

    ExperimentConfig resolve() const { return parse_experiment_config(map()); }
};

std::vector<std::size_t> parse_sizes(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(std::stoul(item));
    }
    return out;
}

std::ofstream open_out(const fs::path& file) {
    if (file.has_parent_path()) {
        fs::create_directories(file.parent_path());
    }
    std::ofstream out(file);
    if (!out) {
        throw Error("cannot write " + file.string());
    }
    return out;
}

ClusterModel model_for(const std::string& model_file, const std::string& corpus_dir, std::size_t vocab,
                       std::size_t dim) {
    if (!model_file.empty()) {
        return load_cluster_model(model_file);
    }
    if (corpus_dir.empty()) {
        throw Error("need --model or --corpus");
    }
    return domain_centroids(load_corpus(corpus_dir, vocab), HashedNgramEmbedder(dim));
}

int cmd_synth(const ConfigArgs& args, const fs::path& out) {
    const ExperimentConfig cfg = args.resolve();
    const SyntheticData sd = make_synthetic(cfg.synthetic);
    const auto lexicon = make_lexicon(sd.corpus.vocab_size);
    write_corpus(sd.corpus, out / "corpus", lexicon);
    write_documents(sd.specific, out / "specific.txt", lexicon);
    for (const auto& b : sd.basis_sets) {
        write_documents(b.documents, out / "basis" / (b.label + ".txt"), lexicon);
    }
    auto meta = open_out(out / "provenance.csv");
    meta << "document,source\n";
    for (std::size_t i = 0; i < sd.specific_sources.size(); ++i) {
        meta << i << ',' << sd.specific_sources[i] << '\n';
    }
    std::cout << "wrote " << sd.corpus.k() << " domains and " << sd.specific.size() << " specific documents to "
              << out << '\n';
    return 0;
}

int cmd_cluster(const std::string& docs_path, std::size_t vocab, const std::string& branching, std::uint64_t seed,
                std::size_t dim, const fs::path& out, const std::string& partition_dir) {
    const auto docs = load_documents(docs_path, vocab);
    const RowMatrix vectors = embed_all(docs, HashedNgramEmbedder(dim));
    const auto levels = parse_sizes(branching);
    const ClusterModel model = fit_hierarchical(vectors, levels, seed);
    save_cluster_model(model, out);
    std::cout << "leaves " << model.leaf_count() << ", collapsed " << model.collapsed_leaves.size() << '\n';
    if (!partition_dir.empty()) {
        const Partition p = partition_by_clusters(docs, vectors, model, vocab, "clustered");
        write_corpus(p.corpus, partition_dir, make_lexicon(vocab));
        std::cout << "partitioned into " << p.corpus.k() << " non-empty domains\n";
    }
    return 0;
}

int cmd_verify_recovery(const ConfigArgs& args, double grid_step, std::size_t inner_steps, const fs::path& out) {
    const ExperimentConfig cfg = args.resolve();
    set_num_threads(cfg.threads);
    const ExperimentData data = prepare_experiment(cfg);
    const auto r = grid_search_bilevel(data.corpus, data.specific_val, cfg.model, cfg.optimizer, cfg.train,
                                       grid_step, inner_steps);
    auto csv = open_out(out);
    for (std::size_t i = 0; i < data.corpus.k(); ++i) {
        csv << "alpha_" << i << ',';
    }
    csv << "loss_spe_val\n";
    for (const auto& p : r.table) {
        for (Eigen::Index i = 0; i < p.alpha.size(); ++i) {
            csv << format_double(p.alpha(i)) << ',';
        }
        csv << format_double(p.loss_spe) << '\n';
    }
    std::cout << "best " << r.best.transpose();
    if (data.truth) {
        std::cout << "  L1 to ground truth " << (r.best - *data.truth).lpNorm<1>();
    }
    std::cout << '\n';
    return 0;
}

int cmd_verify_gradcheck(const ConfigArgs& args, std::size_t coords, double h_scale, const fs::path& out) {
    const ExperimentConfig cfg = args.resolve();
    const ExperimentData data = prepare_experiment(cfg);
    const ModelState state = init_model(cfg.model);
    Rng rng(cfg.seed, 0x9c);
    const Batch batch = sample_batch(data.corpus, data.corpus.token_shares(), cfg.train.batch_size,
                                     {cfg.train.window, cfg.model.context_length}, rng);
    const auto r = finite_diff_grad_check(state, batch, std::min(coords, cfg.model.param_count()), h_scale, cfg.seed);
    auto csv = open_out(out);
    csv << "coord,analytic,numeric\n";
    for (std::size_t i = 0; i < r.coords.size(); ++i) {
        csv << r.coords[i] << ',' << format_double(r.analytic[i]) << ',' << format_double(r.numeric[i]) << '\n';
    }
    std::cout << "max relative error " << r.max_rel_error << '\n';
    return 0;
}

int cmd_verify_taylor(const ConfigArgs& args, const std::vector<double>& rho, const fs::path& out) {
    const ExperimentConfig cfg = args.resolve();
    const ExperimentData data = prepare_experiment(cfg);
    const ModelState state = init_model(cfg.model);
    const TaylorTable t = alignment_taylor_check(state, data.corpus, data.specific_train, rho);
    auto csv = open_out(out);
    csv << "domain,rho,residual,ratio\n";
    for (Eigen::Index i = 0; i < t.residual.rows(); ++i) {
        for (Eigen::Index j = 0; j < t.residual.cols(); ++j) {
            csv << i << ',' << format_double(t.rho[static_cast<std::size_t>(j)]) << ','
                << format_double(t.residual(i, j)) << ',';
            if (j < t.ratio.cols()) {
                csv << format_double(t.ratio(i, j));
            }
            csv << '\n';
        }
    }
    std::cout << "alignments " << t.alignments.transpose() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixopt: training-data mixture optimization"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic Markov corpus");
    ConfigArgs synth_args;
    synth_args.attach(synth);
    std::string synth_out;
    synth->add_option("--out", synth_out, "output directory")->required();

    // cluster
    auto* cluster = app.add_subcommand("cluster", "fit hierarchical k-means on embedded documents");
    std::string cl_docs, cl_out, cl_partition, cl_branching = "8,8,8";
    std::size_t cl_vocab = 4096, cl_dim = kDefaultEmbeddingDim;
    std::uint64_t cl_seed = 0;
    cluster->add_option("--input", cl_docs, "document file or directory")->required();
    cluster->add_option("--branching", cl_branching, "per-level cluster counts, comma separated");
    cluster->add_option("--vocab", cl_vocab);
    cluster->add_option("--dim", cl_dim, "embedding dimension");
    cluster->add_option("--seed", cl_seed);
    cluster->add_option("--out", cl_out, "cluster model file")->required();
    cluster->add_option("--partition", cl_partition, "also write one domain per non-empty leaf here");

    // isweights
    auto* isw = app.add_subcommand("isweights", "importance-sampling histogram of a specific set");
    std::string is_model, is_corpus, is_specific, is_out;
    std::size_t is_vocab = 4096;
    isw->add_option("--model", is_model, "cluster model file");
    isw->add_option("--corpus", is_corpus, "corpus directory (domain centroids) when no model is given");
    isw->add_option("--specific", is_specific, "specific documents")->required();
    isw->add_option("--vocab", is_vocab);
    isw->add_option("--out", is_out, "JSON output (stdout when omitted)");

    // basis
    auto* basis = app.add_subcommand("basis", "build the basis matrix for distribution reweighting");
    std::string b_model, b_corpus, b_specific, b_out;
    std::vector<std::string> b_sets;
    std::size_t b_vocab = 4096;
    bool b_no_specific = false;
    basis->add_option("--model", b_model, "cluster model file");
    basis->add_option("--corpus", b_corpus, "corpus directory (domain centroids) when no model is given");
    basis->add_option("--sets", b_sets, "basis document sets")->required();
    basis->add_option("--specific", b_specific, "specific documents");
    basis->add_flag("--no-specific", b_no_specific, "leave out the specific histogram column");
    basis->add_option("--vocab", b_vocab);
    basis->add_option("--out", b_out, "basis JSON file")->required();

    // train
    auto* train = app.add_subcommand("train", "run one experiment into a run directory");
    ConfigArgs train_args;
    train_args.attach(train);
    std::string t_corpus, t_specific, t_algo, t_basis, t_out;
    int t_threads = 0;
    train->add_option("--corpus", t_corpus, "corpus directory (synthetic when omitted)");
    train->add_option("--specific", t_specific, "specific documents");
    train->add_option("--algo", t_algo, "uniform, is, dga, dga-ema or dga-dist");
    train->add_option("--basis", t_basis, "basis JSON for dga-dist");
    train->add_option("--threads", t_threads);
    train->add_option("--out", t_out, "run directory")->required();

    // verify
    auto* verify = app.add_subcommand("verify", "brute-force and numerical oracles");
    verify->require_subcommand(1);
    ConfigArgs v_args;
    double v_grid = 0.1, v_h = 1e-5;
    std::size_t v_inner = 2000, v_coords = 100;
    std::vector<double> v_rho{1e-2, 5e-3, 2.5e-3};
    std::string v_out;
    auto* recovery = verify->add_subcommand("recovery", "grid search over mixture weights");
    auto* gradcheck = verify->add_subcommand("gradcheck", "finite-difference gradient check");
    auto* taylor = verify->add_subcommand("taylor", "first-order residuals of the alignment model");
    for (auto* sub : {recovery, gradcheck, taylor}) {
        v_args.attach(sub);
        sub->add_option("--out", v_out, "CSV output")->required();
    }
    recovery->add_option("--grid-step", v_grid);
    recovery->add_option("--inner-steps", v_inner);
    gradcheck->add_option("--coords", v_coords);
    gradcheck->add_option("--h-scale", v_h);
    taylor->add_option("--rho", v_rho, "decreasing step sizes");

    // report
    auto* rep = app.add_subcommand("report", "compare run directories");
    std::vector<std::string> r_runs;
    std::string r_out = ".";
    rep->add_option("runs", r_runs, "run directories")->required();
    rep->add_option("--out", r_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            return cmd_synth(synth_args, synth_out);
        }
        if (cluster->parsed()) {
            return cmd_cluster(cl_docs, cl_vocab, cl_branching, cl_seed, cl_dim, cl_out, cl_partition);
        }
        if (isw->parsed()) {
            const ClusterModel model = model_for(is_model, is_corpus, is_vocab, kDefaultEmbeddingDim);
            const ISHistogram h = is_weights(load_documents(is_specific, is_vocab), model);
            if (is_out.empty()) {
                std::cout << to_json(h) << '\n';
            } else {
                open_out(is_out) << to_json(h) << '\n';
            }
            std::cerr << h.nonzero() << " non-zero of " << h.weights.size() << '\n';
            return 0;
        }
        if (basis->parsed()) {
            const ClusterModel model = model_for(b_model, b_corpus, b_vocab, kDefaultEmbeddingDim);
            std::vector<BasisSet> sets;
            for (const auto& s : b_sets) {
                sets.push_back({fs::path(s).stem().string(), load_documents(s, b_vocab)});
            }
            std::vector<Document> spe;
            if (!b_no_specific) {
                if (b_specific.empty()) {
                    throw Error("--specific is required unless --no-specific is given");
                }
                spe = load_documents(b_specific, b_vocab);
            }
            save_basis(build_basis(sets, model, !b_no_specific, spe), b_out);
            return 0;
        }
        if (train->parsed()) {
            ConfigMap m = train_args.map();
            if (!t_corpus.empty()) m["corpus.path"] = t_corpus;
            if (!t_specific.empty()) m["corpus.specific_path"] = t_specific;
            if (!t_algo.empty()) m["algorithm"] = t_algo;
            if (!t_basis.empty()) m["dist.basis_file"] = t_basis;
            if (t_threads > 0) m["threads"] = std::to_string(t_threads);
            const ExperimentConfig cfg = parse_experiment_config(m);
            run_experiment(cfg, t_out);
            std::cout << "run written to " << t_out << '\n';
            return 0;
        }
        if (recovery->parsed()) {
            return cmd_verify_recovery(v_args, v_grid, v_inner, v_out);
        }
        if (gradcheck->parsed()) {
            return cmd_verify_gradcheck(v_args, v_coords, v_h, v_out);
        }
        if (taylor->parsed()) {
            return cmd_verify_taylor(v_args, v_rho, v_out);
        }
        if (rep->parsed()) {
            std::vector<fs::path> dirs(r_runs.begin(), r_runs.end());
            const ReportResult r = report(dirs, r_out);
            for (const auto& w : r.warnings) {
                std::cerr << "warning: " << w << '\n';
            }
            std::cout << r.rows.size() << " runs reported\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
