#include "mixopt/harness.hpp"

#include "mixopt/parallel.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace mixopt {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTransitionStream = 0x7a1;
constexpr std::uint64_t kDomainDocStream = 0x7b00;
constexpr std::uint64_t kSpecificStream = 0x7c1;
constexpr std::uint64_t kBasisStream = 0x7d00;
constexpr std::uint64_t kClusterStream = 0xc1;
constexpr std::uint64_t kBudgetStream = 0xb0;
constexpr std::uint64_t kSplitStream = 0x5b;

RowMatrix dirichlet_rows(std::size_t n, double concentration, Rng& rng) {
    RowMatrix T(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (Eigen::Index r = 0; r < T.rows(); ++r) {
        for (Eigen::Index c = 0; c < T.cols(); ++c) {
            T(r, c) = rng.gamma(concentration);
        }
        const double s = T.row(r).sum();
        if (s > 0.0) {
            T.row(r) /= s;
        } else {
            T.row(r).setZero();
            T(r, static_cast<Eigen::Index>(rng.index(n))) = 1.0;
        }
    }
    return T;
}

std::size_t draw_row(const RowMatrix& T, Eigen::Index row, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    Eigen::Index last = 0;
    for (Eigen::Index c = 0; c < T.cols(); ++c) {
        if (T(row, c) > 0.0) {
            acc += T(row, c);
            last = c;
            if (u < acc) {
                return static_cast<std::size_t>(c);
            }
        }
    }
    return static_cast<std::size_t>(last);
}

Document markov_document(const RowMatrix& T, std::size_t length, Rng& rng) {
    Document doc(length);
    std::size_t x = rng.index(static_cast<std::size_t>(T.rows()));
    for (std::size_t j = 0; j < length; ++j) {
        doc[j] = static_cast<TokenId>(x);
        x = draw_row(T, static_cast<Eigen::Index>(x), rng);
    }
    return doc;
}

std::string domain_label(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "domain_%03zu", i);
    return buf;
}

void check_mixture(const MixtureWeights& w, std::size_t k, const std::string& what) {
    if (static_cast<std::size_t>(w.size()) != k) {
        throw Error(what + " has " + std::to_string(w.size()) + " entries, expected " + std::to_string(k));
    }
    require_simplex(w, what);
}

// ---- value parsing ----------------------------------------------------------

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw Error("config: bad value for " + key + ": '" + text + "'");
    }
    return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes") {
        return true;
    }
    if (text == "false" || text == "0" || text == "no") {
        return false;
    }
    throw Error("config: bad boolean for " + key + ": '" + text + "'");
}

std::vector<std::size_t> parse_index_list(const std::string& key, const std::string& text) {
    std::vector<std::size_t> out;
    if (trim(text).empty()) {
        return out;
    }
    for (const auto& item : split(text, ',')) {
        out.push_back(parse_number<std::size_t>(key, item));
    }
    return out;
}

MixtureWeights parse_vector(const std::string& key, const std::string& text) {
    const auto items = split(text, ',');
    MixtureWeights w(static_cast<Eigen::Index>(items.size()));
    for (std::size_t i = 0; i < items.size(); ++i) {
        w(static_cast<Eigen::Index>(i)) = parse_number<double>(key, items[i]);
    }
    return w;
}

std::string join_vector(const MixtureWeights& w) {
    std::string out;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        if (i) {
            out += ',';
        }
        out += format_double(w(i));
    }
    return out;
}

template <typename Seq>
std::string join_list(const Seq& items) {
    std::string out;
    for (const auto& x : items) {
        if (!out.empty()) {
            out += ',';
        }
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, fs::path>) {
            out += x.string();
        } else {
            out += std::to_string(x);
        }
    }
    return out;
}

/// Hands out keys and complains about whatever is left over.
class KeyReader {
public:
    explicit KeyReader(const ConfigMap& map) : map_(map) {}

    const std::string* get(const std::string& key) {
        auto it = map_.find(key);
        if (it == map_.end()) {
            return nullptr;
        }
        used_.insert(key);
        return &it->second;
    }

    template <typename T>
    void number(const std::string& key, T& out) {
        if (auto v = get(key)) {
            out = parse_number<T>(key, *v);
        }
    }

    void flag(const std::string& key, bool& out) {
        if (auto v = get(key)) {
            out = parse_bool(key, *v);
        }
    }

    void finish() const {
        for (const auto& [key, value] : map_) {
            if (!used_.count(key)) {
                throw Error("config: unknown key '" + key + "'");
            }
        }
    }

private:
    const ConfigMap& map_;
    std::set<std::string> used_;
};

std::string_view to_string(CorpusFormat f) { return f == CorpusFormat::text ? "text" : "ids"; }
std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }
std::string_view to_string(LrSchedule s) { return s == LrSchedule::cosine ? "cosine" : "constant"; }
std::string_view to_string(AlignmentMetric m) { return m == AlignmentMetric::cosine ? "cosine" : "dot"; }

}  // namespace

// ---------------------------------------------------------------------------

SyntheticData make_synthetic(const SyntheticRecipe& recipe) {
    if (recipe.k == 0) {
        throw Error("synthetic recipe: k must be positive");
    }
    if (recipe.vocab_size < 2) {
        throw Error("synthetic recipe: vocab_size must be at least 2");
    }
    if (recipe.doc_length < 2 || recipe.docs_per_domain == 0) {
        throw Error("synthetic recipe: need at least one document of length >= 2 per domain");
    }
    if (!(recipe.concentration > 0.0)) {
        throw Error("synthetic recipe: concentration must be positive");
    }
    if (!(recipe.shared_fraction >= 0.0 && recipe.shared_fraction < 1.0)) {
        throw Error("synthetic recipe: shared_fraction must be in [0, 1)");
    }
    if (recipe.specific_mixture) {
        check_mixture(*recipe.specific_mixture, recipe.k, "specific mixture");
    }
    for (std::size_t j = 0; j < recipe.basis_mixtures.size(); ++j) {
        check_mixture(recipe.basis_mixtures[j], recipe.k, "basis mixture " + std::to_string(j));
    }

    SyntheticData out;
    Rng trng(recipe.seed, kTransitionStream);
    const RowMatrix shared = dirichlet_rows(recipe.vocab_size, recipe.concentration, trng);
    const std::size_t sources = recipe.k + (recipe.specific_mixture ? 0 : 1);
    for (std::size_t i = 0; i < sources; ++i) {
        RowMatrix own = dirichlet_rows(recipe.vocab_size, recipe.concentration, trng);
        out.transitions.push_back(recipe.shared_fraction * shared + (1.0 - recipe.shared_fraction) * own);
    }

    out.corpus.name = "synthetic";
    out.corpus.vocab_size = recipe.vocab_size;
    for (std::size_t i = 0; i < recipe.k; ++i) {
        Domain d;
        d.name = domain_label(i);
        d.id = i;
        Rng rng(recipe.seed, kDomainDocStream + i);
        for (std::size_t n = 0; n < recipe.docs_per_domain; ++n) {
            d.documents.push_back(markov_document(out.transitions[i], recipe.doc_length, rng));
        }
        out.corpus.domains.push_back(std::move(d));
    }

    Rng srng(recipe.seed, kSpecificStream);
    for (std::size_t n = 0; n < recipe.specific_docs; ++n) {
        const std::size_t src = recipe.specific_mixture ? categorical_draw(*recipe.specific_mixture, srng) : recipe.k;
        out.specific.push_back(markov_document(out.transitions[src], recipe.doc_length, srng));
        out.specific_sources.push_back(src);
    }
    out.truth = recipe.specific_mixture;

    for (std::size_t j = 0; j < recipe.basis_mixtures.size(); ++j) {
        BasisSet set;
        set.label = "basis_" + std::to_string(j);
        Rng brng(recipe.seed, kBasisStream + j);
        for (std::size_t n = 0; n < recipe.basis_docs; ++n) {
            const std::size_t src = categorical_draw(recipe.basis_mixtures[j], brng);
            set.documents.push_back(markov_document(out.transitions[src], recipe.doc_length, brng));
        }
        out.basis_sets.push_back(std::move(set));
    }
    return out;
}

SyntheticData make_synthetic(SyntheticRecipe recipe, std::uint64_t seed) {
    recipe.seed = seed;
    return make_synthetic(recipe);
}

// ---------------------------------------------------------------------------

Algorithm parse_algorithm(std::string_view tag) {
    if (tag == "uniform") return Algorithm::uniform;
    if (tag == "is") return Algorithm::is;
    if (tag == "dga") return Algorithm::dga;
    if (tag == "dga-ema") return Algorithm::dga_ema;
    if (tag == "dga-dist") return Algorithm::dga_dist;
    throw Error("unknown algorithm '" + std::string(tag) + "' (expected uniform, is, dga, dga-ema or dga-dist)");
}

std::string_view to_string(Algorithm a) {
    switch (a) {
        case Algorithm::uniform: return "uniform";
        case Algorithm::is: return "is";
        case Algorithm::dga: return "dga";
        case Algorithm::dga_ema: return "dga-ema";
        case Algorithm::dga_dist: return "dga-dist";
    }
    return "?";
}

void ExperimentConfig::validate() const {
    if (!(split > 0.0 && split < 1.0)) {
        throw Error("config: split must be in (0, 1)");
    }
    if (threads < 1) {
        throw Error("config: threads must be >= 1");
    }
    if (corpus_path) {
        if (!fs::exists(*corpus_path)) {
            throw Error("config: corpus path does not exist: " + corpus_path->string());
        }
        if (!specific_path) {
            throw Error("config: corpus.specific_path is required with corpus.path");
        }
    }
    if (specific_path && !fs::exists(*specific_path)) {
        throw Error("config: specific path does not exist: " + specific_path->string());
    }
    for (const auto& p : basis_paths) {
        if (!fs::exists(p)) {
            throw Error("config: basis path does not exist: " + p.string());
        }
    }
    if (basis_file && !fs::exists(*basis_file)) {
        throw Error("config: basis file does not exist: " + basis_file->string());
    }
    if (algorithm == Algorithm::dga_dist && !basis_file && basis_paths.empty() &&
        (corpus_path || synthetic.basis_mixtures.empty())) {
        throw Error("config: dga-dist needs basis sets (dist.basis_paths, dist.basis_file or synth.basis_mixtures)");
    }
    if (train.batch_size == 0 || train.log_interval == 0) {
        throw Error("config: train.batch_size and train.log_interval must be positive");
    }
    if (train.window <= model.context_length) {
        throw Error("config: train.window must exceed model.context_length");
    }
    if (token_budget && *token_budget == 0) {
        throw Error("config: budget.tokens must be positive");
    }
    if (embedding_dim == 0) {
        throw Error("config: corpus.embedding_dim must be positive");
    }
    model.validate();
    dga.validate();
}

ConfigMap read_config_file(const fs::path& file) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(file.string(), tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error("cannot read config " + file.string() + ": " + e.what());
    }
    ConfigMap map;
    for (const auto& [key, node] : tree) {
        if (node.empty()) {
            map[key] = trim(node.data());
        } else {
            for (const auto& [sub, leaf] : node) {
                map[key + "." + sub] = trim(leaf.data());
            }
        }
    }
    return map;
}

void apply_overrides(ConfigMap& map, std::span<const std::string> overrides) {
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw Error("override must look like key=value: '" + o + "'");
        }
        map[trim(std::string_view(o).substr(0, eq))] = trim(std::string_view(o).substr(eq + 1));
    }
}

ExperimentConfig parse_experiment_config(const ConfigMap& map) {
    ExperimentConfig c;
    KeyReader r(map);
    if (auto v = r.get("algorithm")) {
        c.algorithm = parse_algorithm(*v);
    }
    r.number("seed", c.seed);
    r.number("threads", c.threads);

    if (auto v = r.get("corpus.path")) c.corpus_path = *v;
    if (auto v = r.get("corpus.format")) c.corpus_format = parse_corpus_format(*v);
    if (auto v = r.get("corpus.specific_path")) c.specific_path = *v;
    std::size_t vocab = c.corpus_path ? 4096 : 16;
    r.number("corpus.vocab_size", vocab);
    r.number("corpus.split", c.split);
    r.number("corpus.embedding_dim", c.embedding_dim);

    auto& s = c.synthetic;
    r.number("synth.k", s.k);
    r.number("synth.docs_per_domain", s.docs_per_domain);
    r.number("synth.doc_length", s.doc_length);
    r.number("synth.concentration", s.concentration);
    r.number("synth.shared_fraction", s.shared_fraction);
    if (auto v = r.get("synth.specific_mixture"); v && !v->empty()) {
        s.specific_mixture = parse_vector("synth.specific_mixture", *v);
    }
    r.number("synth.specific_docs", s.specific_docs);
    if (auto v = r.get("synth.basis_mixtures"); v && !v->empty()) {
        for (const auto& item : split(*v, ';')) {
            s.basis_mixtures.push_back(parse_vector("synth.basis_mixtures", item));
        }
    }
    r.number("synth.basis_docs", s.basis_docs);
    if (auto v = r.get("synth.seed")) c.synthetic_seed = parse_number<std::uint64_t>("synth.seed", *v);

    if (auto v = r.get("budget.tokens"); v && !v->empty()) {
        c.token_budget = parse_number<std::size_t>("budget.tokens", *v);
    }
    if (auto v = r.get("budget.domains")) c.budget_domains = parse_index_list("budget.domains", *v);
    if (auto v = r.get("cluster.branching")) c.cluster_branching = parse_index_list("cluster.branching", *v);

    if (auto v = r.get("dist.basis_paths"); v && !v->empty()) {
        for (const auto& p : split(*v, ',')) {
            c.basis_paths.emplace_back(p);
        }
    }
    if (auto v = r.get("dist.basis_file"); v && !v->empty()) c.basis_file = *v;
    r.flag("dist.include_specific", c.basis_include_specific);

    if (auto v = r.get("model.kind")) c.model.kind = parse_model_kind(*v);
    r.number("model.context_length", c.model.context_length);
    r.number("model.feature_dim", c.model.feature_dim);

    if (auto v = r.get("optim.kind")) c.optimizer.kind = parse_optimizer_kind(*v);
    r.number("optim.lr", c.optimizer.lr);
    r.number("optim.beta1", c.optimizer.beta1);
    r.number("optim.beta2", c.optimizer.beta2);
    r.number("optim.eps", c.optimizer.eps);
    r.number("optim.weight_decay", c.optimizer.weight_decay);
    if (auto v = r.get("optim.schedule")) c.optimizer.schedule = parse_lr_schedule(*v);

    r.number("dga.eta", c.dga.eta);
    r.number("dga.beta", c.dga.beta);
    r.number("dga.period", c.dga.period);
    r.number("dga.align_batch_size", c.dga.align_batch_size);
    r.number("dga.alignment_sign", c.dga.alignment_sign);
    if (auto v = r.get("dga.metric")) c.dga.metric = parse_alignment_metric(*v);
    if (auto v = r.get("dga.initial_weights"); v && !v->empty()) {
        c.dga.initial_weights = parse_vector("dga.initial_weights", *v);
    }

    r.number("train.steps", c.train.steps);
    r.number("train.batch_size", c.train.batch_size);
    r.number("train.window", c.train.window);
    r.number("train.log_interval", c.train.log_interval);
    r.finish();

    c.synthetic.vocab_size = vocab;
    c.model.vocab_size = vocab;
    c.model.seed = c.seed;
    c.train.seed = c.seed;
    c.synthetic.seed = c.synthetic_seed.value_or(c.seed);
    return c;
}

ConfigMap to_config_map(const ExperimentConfig& c) {
    ConfigMap m;
    m["algorithm"] = to_string(c.algorithm);
    m["seed"] = std::to_string(c.seed);
    m["threads"] = std::to_string(c.threads);

    if (c.corpus_path) m["corpus.path"] = c.corpus_path->string();
    m["corpus.format"] = to_string(c.corpus_format);
    if (c.specific_path) m["corpus.specific_path"] = c.specific_path->string();
    m["corpus.vocab_size"] = std::to_string(c.model.vocab_size);
    m["corpus.split"] = format_double(c.split);
    m["corpus.embedding_dim"] = std::to_string(c.embedding_dim);

    if (!c.corpus_path) {
        const auto& s = c.synthetic;
        m["synth.k"] = std::to_string(s.k);
        m["synth.docs_per_domain"] = std::to_string(s.docs_per_domain);
        m["synth.doc_length"] = std::to_string(s.doc_length);
        m["synth.concentration"] = format_double(s.concentration);
        m["synth.shared_fraction"] = format_double(s.shared_fraction);
        m["synth.specific_mixture"] = s.specific_mixture ? join_vector(*s.specific_mixture) : "";
        m["synth.specific_docs"] = std::to_string(s.specific_docs);
        std::string mixtures;
        for (const auto& w : s.basis_mixtures) {
            mixtures += (mixtures.empty() ? "" : ";") + join_vector(w);
        }
        m["synth.basis_mixtures"] = mixtures;
        m["synth.basis_docs"] = std::to_string(s.basis_docs);
        m["synth.seed"] = std::to_string(s.seed);
    }

    m["budget.tokens"] = c.token_budget ? std::to_string(*c.token_budget) : "";
    m["budget.domains"] = join_list(c.budget_domains);
    m["cluster.branching"] = join_list(c.cluster_branching);
    m["dist.basis_paths"] = join_list(c.basis_paths);
    m["dist.basis_file"] = c.basis_file ? c.basis_file->string() : "";
    m["dist.include_specific"] = c.basis_include_specific ? "true" : "false";

    m["model.kind"] = to_string(c.model.kind);
    m["model.context_length"] = std::to_string(c.model.context_length);
    m["model.feature_dim"] = std::to_string(c.model.feature_dim);

    m["optim.kind"] = to_string(c.optimizer.kind);
    m["optim.lr"] = format_double(c.optimizer.lr);
    m["optim.beta1"] = format_double(c.optimizer.beta1);
    m["optim.beta2"] = format_double(c.optimizer.beta2);
    m["optim.eps"] = format_double(c.optimizer.eps);
    m["optim.weight_decay"] = format_double(c.optimizer.weight_decay);
    m["optim.schedule"] = to_string(c.optimizer.schedule);

    m["dga.eta"] = format_double(c.dga.eta);
    m["dga.beta"] = format_double(c.dga.beta);
    m["dga.period"] = std::to_string(c.dga.period);
    m["dga.align_batch_size"] = std::to_string(c.dga.align_batch_size);
    m["dga.alignment_sign"] = format_double(c.dga.alignment_sign);
    m["dga.metric"] = to_string(c.dga.metric);
    m["dga.initial_weights"] = join_vector(c.dga.initial_weights);

    m["train.steps"] = std::to_string(c.train.steps);
    m["train.batch_size"] = std::to_string(c.train.batch_size);
    m["train.window"] = std::to_string(c.train.window);
    m["train.log_interval"] = std::to_string(c.train.log_interval);
    return m;
}

void write_config_file(const ConfigMap& map, const fs::path& file) {
    std::ofstream out(file);
    if (!out) {
        throw Error("cannot write " + file.string());
    }
    // top-level keys first, then one block per section
    std::string section;
    for (const auto& [key, value] : map) {
        if (key.find('.') == std::string::npos) {
            out << key << " = " << value << '\n';
        }
    }
    for (const auto& [key, value] : map) {
        const auto dot = key.find('.');
        if (dot == std::string::npos) {
            continue;
        }
        const std::string sec = key.substr(0, dot);
        if (sec != section) {
            out << '\n' << '[' << sec << ']' << '\n';
            section = sec;
        }
        out << key.substr(dot + 1) << " = " << value << '\n';
    }
}

// ---------------------------------------------------------------------------

ExperimentData prepare_experiment(const ExperimentConfig& cfg) {
    ExperimentData data;
    std::vector<Document> specific;
    const std::size_t vocab = cfg.model.vocab_size;
    if (cfg.corpus_path) {
        data.corpus = load_corpus(*cfg.corpus_path, vocab, cfg.corpus_format);
        specific = load_documents(*cfg.specific_path, vocab, cfg.corpus_format);
        for (const auto& p : cfg.basis_paths) {
            data.basis_sets.push_back({p.stem().string(), load_documents(p, vocab, cfg.corpus_format)});
        }
    } else {
        SyntheticData sd = make_synthetic(cfg.synthetic);
        data.corpus = std::move(sd.corpus);
        specific = std::move(sd.specific);
        data.truth = sd.truth;
        data.basis_sets = std::move(sd.basis_sets);
        for (const auto& p : cfg.basis_paths) {
            data.basis_sets.push_back({p.stem().string(), load_documents(p, vocab, cfg.corpus_format)});
        }
    }
    if (specific.empty()) {
        throw Error("specific set is empty");
    }

    const HashedNgramEmbedder embedder(cfg.embedding_dim);
    if (!cfg.cluster_branching.empty()) {
        std::vector<Document> pool;
        for (const auto& d : data.corpus.domains) {
            pool.insert(pool.end(), d.documents.begin(), d.documents.end());
        }
        const RowMatrix vectors = embed_all(pool, embedder);
        const ClusterModel tree = fit_hierarchical(vectors, cfg.cluster_branching, derive_seed(cfg.seed, kClusterStream));
        Partition part = partition_by_clusters(pool, vectors, tree, vocab, data.corpus.name);
        data.corpus = std::move(part.corpus);
        data.model = std::move(part.model);
    } else {
        data.model = domain_centroids(data.corpus, embedder);
    }

    if (cfg.token_budget) {
        std::vector<std::optional<std::size_t>> budgets(data.corpus.k());
        if (cfg.budget_domains.empty()) {
            std::fill(budgets.begin(), budgets.end(), cfg.token_budget);
        }
        for (std::size_t i : cfg.budget_domains) {
            if (i >= data.corpus.k()) {
                throw Error("budget.domains: index " + std::to_string(i) + " out of range for k = " +
                            std::to_string(data.corpus.k()));
            }
            budgets[i] = cfg.token_budget;
        }
        data.corpus = apply_token_budget(data.corpus, budgets, derive_seed(cfg.seed, kBudgetStream));
    }
    data.corpus.validate();

    std::tie(data.specific_train, data.specific_val) =
        split_documents(std::move(specific), cfg.split, derive_seed(cfg.seed, kSplitStream));
    if (data.specific_train.empty() || data.specific_val.empty()) {
        throw Error("specific split left an empty train or validation part");
    }
    return data;
}

AlgorithmRun run_baseline(const ExperimentConfig& cfg, const ExperimentData& data, const RunObserver* observer) {
    const SpecificSet spe{data.specific_train, data.specific_val};
    AlgorithmRun run;
    MixtureWeights w;
    if (cfg.algorithm == Algorithm::uniform) {
        w = data.corpus.token_shares();
    } else if (cfg.algorithm == Algorithm::is) {
        run.histogram = is_weights(data.specific_train, data.model);
        w = run.histogram->weights;
    } else {
        throw Error("run_baseline: algorithm must be uniform or is");
    }
    run.result = run_fixed(data.corpus, w, spe, cfg.model, cfg.optimizer, cfg.train, observer);
    return run;
}

AlgorithmRun run_algorithm(const ExperimentConfig& cfg, const ExperimentData& data, const RunObserver* observer) {
    const SpecificSet spe{data.specific_train, data.specific_val};
    switch (cfg.algorithm) {
        case Algorithm::uniform:
        case Algorithm::is:
            return run_baseline(cfg, data, observer);
        case Algorithm::dga: {
            DGAConfig d = cfg.dga;
            d.beta = 1.0;
            return {run_dga(data.corpus, spe, cfg.model, cfg.optimizer, cfg.train, d, observer), {}, {}};
        }
        case Algorithm::dga_ema:
            return {run_dga(data.corpus, spe, cfg.model, cfg.optimizer, cfg.train, cfg.dga, observer), {}, {}};
        case Algorithm::dga_dist: {
            AlgorithmRun run;
            run.basis = cfg.basis_file ? load_basis(*cfg.basis_file)
                                       : build_basis(data.basis_sets, data.model, cfg.basis_include_specific,
                                                     data.specific_train);
            run.result = run_dga_distribution(data.corpus, *run.basis, spe, cfg.model, cfg.optimizer, cfg.train,
                                              cfg.dga, observer);
            return run;
        }
    }
    throw Error("unhandled algorithm");
}

std::string format_double(double x) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    if (ec != std::errc()) {
        throw Error("format_double failed");
    }
    return std::string(buf, ptr);
}

std::string weights_digest(const MixtureWeights& w) {
    const std::uint64_t h = stable_hash(join_vector(w));
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

class RunWriter {
public:
    explicit RunWriter(const fs::path& dir)
        : metrics_(dir / "metrics.jsonl"),
          weights_(dir / "weights.csv"),
          domain_(dir / "domain_weights.csv"),
          align_(dir / "alignments.csv") {
        if (!metrics_ || !weights_ || !domain_ || !align_) {
            throw Error("cannot create run outputs in " + dir.string());
        }
    }

    void weights(const WeightRecord& rec) {
        const auto n = rec.alpha.size();
        if (!header_) {
            weights_ << "step";
            align_ << "step";
            for (const char* col : {"alpha", "ema"}) {
                for (Eigen::Index i = 0; i < n; ++i) {
                    weights_ << ',' << col << '_' << i;
                }
            }
            for (Eigen::Index i = 0; i < n; ++i) {
                align_ << ",a_" << i;
            }
            weights_ << '\n';
            align_ << '\n';
            domain_ << "step";
            for (Eigen::Index i = 0; i < rec.composed.size(); ++i) {
                domain_ << ",w_" << i;
            }
            domain_ << '\n';
            header_ = true;
        }
        weights_ << rec.step;
        for (Eigen::Index i = 0; i < n; ++i) weights_ << ',' << format_double(rec.alpha(i));
        for (Eigen::Index i = 0; i < n; ++i) weights_ << ',' << format_double(rec.ema(i));
        weights_ << '\n';
        if (rec.alignments.size() == n) {
            align_ << rec.step;
            for (Eigen::Index i = 0; i < n; ++i) align_ << ',' << format_double(rec.alignments(i));
            align_ << '\n';
        }
        domain_ << rec.step;
        for (Eigen::Index i = 0; i < rec.composed.size(); ++i) domain_ << ',' << format_double(rec.composed(i));
        domain_ << '\n';
        digest_ = weights_digest(rec.composed);
    }

    void metrics(const MetricRecord& rec) {
        nlohmann::ordered_json j;
        j["step"] = rec.step;
        j["loss_train"] = rec.loss_train;
        j["loss_spe_train"] = rec.loss_spe_train;
        j["loss_spe_val"] = rec.loss_spe_val;
        j["weights_digest"] = digest_;
        metrics_ << j.dump() << '\n';
        last_step_ = rec.step;
    }

    void error(const std::string& what) {
        nlohmann::ordered_json j;
        j["step"] = last_step_;
        j["error"] = what;
        metrics_ << j.dump() << '\n';
        flush();
    }

    void flush() {
        metrics_.flush();
        weights_.flush();
        domain_.flush();
        align_.flush();
    }

private:
    std::ofstream metrics_;
    std::ofstream weights_;
    std::ofstream domain_;
    std::ofstream align_;
    bool header_ = false;
    std::string digest_;
    std::size_t last_step_ = 0;
};

struct ThreadScope {
    explicit ThreadScope(int n) : saved(num_threads()) { set_num_threads(n); }
    ~ThreadScope() { set_num_threads(saved); }
    int saved;
};

}  // namespace

void run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    write_config_file(to_config_map(cfg), out_dir / "config.ini");
    RunWriter writer(out_dir);
    ThreadScope threads(cfg.threads);
    RunObserver obs;
    obs.on_weights = [&](const WeightRecord& r) { writer.weights(r); };
    obs.on_metrics = [&](const MetricRecord& r) { writer.metrics(r); };
    try {
        const ExperimentData data = prepare_experiment(cfg);
        AlgorithmRun run = run_algorithm(cfg, data, &obs);
        save_checkpoint(run.result.model, out_dir / "model.bin");
        if (run.histogram) {
            std::ofstream(out_dir / "is_weights.json") << to_json(*run.histogram) << '\n';
        }
        if (run.basis) {
            save_basis(*run.basis, out_dir / "basis.json");
        }
        writer.flush();
    } catch (const std::exception& e) {
        writer.error(e.what());
        throw;
    }
}

// ---------------------------------------------------------------------------

namespace {

struct LoadedRun {
    ReportRow row;
    std::vector<MetricRecord> metrics;
    std::vector<std::vector<std::string>> weight_rows;
    std::vector<std::string> weight_header;
};

std::vector<std::string> csv_fields(const std::string& line) { return split(line, ','); }

LoadedRun load_run(const fs::path& dir) {
    LoadedRun run;
    run.row.run = dir.filename().string();
    if (run.row.run.empty()) {
        run.row.run = dir.parent_path().filename().string();
    }
    const ConfigMap cfg = read_config_file(dir / "config.ini");
    auto field = [&](const std::string& key) {
        auto it = cfg.find(key);
        if (it == cfg.end()) {
            throw Error("config.ini lacks " + key);
        }
        return it->second;
    };
    run.row.algorithm = field("algorithm");
    run.row.seed = parse_number<std::uint64_t>("seed", field("seed"));

    std::ifstream in(dir / "metrics.jsonl");
    if (!in) {
        throw Error("missing metrics.jsonl");
    }
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto j = nlohmann::json::parse(line);
        if (j.contains("error")) {
            throw Error("run failed: " + j["error"].get<std::string>());
        }
        MetricRecord m;
        m.step = j.at("step").get<std::size_t>();
        m.loss_train = j.at("loss_train").get<double>();
        m.loss_spe_train = j.at("loss_spe_train").get<double>();
        m.loss_spe_val = j.at("loss_spe_val").get<double>();
        run.metrics.push_back(m);
    }
    if (run.metrics.empty()) {
        throw Error("no metric records");
    }
    run.row.steps = run.metrics.back().step;
    run.row.final_spe_val = run.metrics.back().loss_spe_val;
    run.row.best_spe_val = run.metrics.front().loss_spe_val;
    run.row.best_step = run.metrics.front().step;
    for (const auto& m : run.metrics) {
        if (m.loss_spe_val < run.row.best_spe_val) {
            run.row.best_spe_val = m.loss_spe_val;
            run.row.best_step = m.step;
        }
    }

    std::ifstream win(dir / "weights.csv");
    if (!win || !std::getline(win, line)) {
        throw Error("missing weights.csv");
    }
    run.weight_header = csv_fields(line);
    while (std::getline(win, line)) {
        if (!line.empty()) {
            run.weight_rows.push_back(csv_fields(line));
            if (run.weight_rows.back().size() != run.weight_header.size()) {
                throw Error("weights.csv row has the wrong number of fields");
            }
        }
    }
    return run;
}

}  // namespace

ReportResult report(std::span<const fs::path> run_dirs, const fs::path& out_dir) {
    ReportResult result;
    std::vector<LoadedRun> runs;
    for (const auto& dir : run_dirs) {
        try {
            runs.push_back(load_run(dir));
            result.rows.push_back(runs.back().row);
        } catch (const std::exception& e) {
            result.warnings.push_back("skipping " + dir.string() + ": " + e.what());
        }
    }
    if (runs.empty()) {
        throw Error("report: no usable run directories");
    }
    fs::create_directories(out_dir);

    std::ofstream table(out_dir / "report.csv");
    table << "run,algorithm,seed,steps,final_spe_val,best_spe_val,best_step\n";
    for (const auto& r : result.rows) {
        table << r.run << ',' << r.algorithm << ',' << r.seed << ',' << r.steps << ',' << format_double(r.final_spe_val)
              << ',' << format_double(r.best_spe_val) << ',' << r.best_step << '\n';
    }

    // mean final loss per algorithm, in first-seen order
    std::vector<std::string> order;
    std::map<std::string, std::pair<double, std::size_t>> agg;
    for (const auto& r : result.rows) {
        if (!agg.count(r.algorithm)) {
            order.push_back(r.algorithm);
        }
        auto& [sum, n] = agg[r.algorithm];
        sum += r.final_spe_val;
        ++n;
    }
    std::ofstream summary(out_dir / "algorithm_summary.csv");
    summary << "algorithm,runs,mean_final_spe_val\n";
    for (const auto& a : order) {
        summary << a << ',' << agg[a].second << ',' << format_double(agg[a].first / agg[a].second) << '\n';
    }

    std::ofstream loss_series(out_dir / "loss_series.csv");
    loss_series << "run,step,loss_train,loss_spe_train,loss_spe_val\n";
    for (const auto& run : runs) {
        for (const auto& m : run.metrics) {
            loss_series << run.row.run << ',' << m.step << ',' << format_double(m.loss_train) << ','
                        << format_double(m.loss_spe_train) << ',' << format_double(m.loss_spe_val) << '\n';
        }
    }

    std::ofstream weight_series(out_dir / "weight_series.csv");
    weight_series << "run,step,unit,alpha,ema\n";
    for (const auto& run : runs) {
        const std::size_t n = (run.weight_header.size() - 1) / 2;
        for (const auto& row : run.weight_rows) {
            for (std::size_t i = 0; i < n; ++i) {
                weight_series << run.row.run << ',' << row[0] << ',' << i << ',' << row[1 + i] << ',' << row[1 + n + i]
                              << '\n';
            }
        }
    }
    return result;
}

}  // namespace mixopt
