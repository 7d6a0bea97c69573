#include "mixopt/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>
#include <numeric>

namespace mixopt {

namespace fs = std::filesystem;

std::size_t Domain::token_count() const {
    std::size_t n = 0;
    for (const auto& d : documents) {
        n += d.size();
    }
    return n;
}

std::size_t Domain::max_document_length() const {
    std::size_t n = 0;
    for (const auto& d : documents) {
        n = std::max(n, d.size());
    }
    return n;
}

std::size_t DomainCorpus::token_count() const {
    std::size_t n = 0;
    for (const auto& d : domains) {
        n += d.token_count();
    }
    return n;
}

MixtureWeights DomainCorpus::token_shares() const {
    MixtureWeights w(static_cast<Eigen::Index>(k()));
    for (std::size_t i = 0; i < k(); ++i) {
        w(static_cast<Eigen::Index>(i)) = static_cast<double>(domains[i].token_count());
    }
    return w / w.sum();
}

void DomainCorpus::validate() const {
    if (domains.empty()) {
        throw Error("corpus '" + name + "' has no domains");
    }
    if (vocab_size == 0 || vocab_size > static_cast<std::size_t>(std::numeric_limits<TokenId>::max())) {
        throw Error("token id overflow: vocab_size " + std::to_string(vocab_size) + " out of range");
    }
    for (const auto& d : domains) {
        if (d.documents.empty() || d.token_count() == 0) {
            throw Error("empty domain: " + d.name);
        }
        for (const auto& doc : d.documents) {
            for (TokenId t : doc) {
                if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) {
                    throw Error("token id overflow in domain " + d.name + ": " + std::to_string(t));
                }
            }
        }
    }
}

CorpusFormat parse_corpus_format(std::string_view tag) {
    if (tag == "text") {
        return CorpusFormat::text;
    }
    if (tag == "ids") {
        return CorpusFormat::ids;
    }
    throw Error("unknown corpus format: " + std::string(tag));
}

std::uint64_t stable_hash(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

template <typename Fn>
void for_each_word(std::string_view line, Fn&& fn) {
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && is_space(line[i])) {
            ++i;
        }
        std::size_t j = i;
        while (j < line.size() && !is_space(line[j])) {
            ++j;
        }
        if (j > i) {
            fn(line.substr(i, j - i));
        }
        i = j;
    }
}

Document tokenize_ids(std::string_view line, std::size_t vocab_size, const std::string& where) {
    Document doc;
    for_each_word(line, [&](std::string_view w) {
        long long v = -1;
        auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
        if (ec != std::errc() || p != w.data() + w.size() || v < 0 ||
            static_cast<unsigned long long>(v) >= vocab_size) {
            throw Error("token id overflow in domain " + where + ": '" + std::string(w) + "'");
        }
        doc.push_back(static_cast<TokenId>(v));
    });
    return doc;
}

std::vector<Document> read_lines(const fs::path& file, std::size_t vocab_size, CorpusFormat format,
                                 const std::string& where) {
    std::ifstream in(file);
    if (!in) {
        throw Error("cannot open " + file.string());
    }
    std::vector<Document> docs;
    std::string line;
    while (std::getline(in, line)) {
        Document doc = format == CorpusFormat::ids ? tokenize_ids(line, vocab_size, where)
                                                   : tokenize(line, vocab_size);
        if (!doc.empty()) {
            docs.push_back(std::move(doc));
        }
    }
    return docs;
}

std::vector<fs::path> domain_files(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (entry.is_regular_file() && !name.empty() && name[0] != '.') {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.stem().string() < b.stem().string(); });
    return files;
}

void check_vocab(std::size_t vocab_size) {
    if (vocab_size == 0 || vocab_size > static_cast<std::size_t>(std::numeric_limits<TokenId>::max())) {
        throw Error("token id overflow: vocab_size " + std::to_string(vocab_size) + " out of range");
    }
}

}  // namespace

Document tokenize(std::string_view line, std::size_t vocab_size) {
    check_vocab(vocab_size);
    Document doc;
    for_each_word(line, [&](std::string_view w) { doc.push_back(static_cast<TokenId>(stable_hash(w) % vocab_size)); });
    return doc;
}

std::vector<std::string> make_lexicon(std::size_t vocab_size) {
    check_vocab(vocab_size);
    std::vector<std::string> words(vocab_size);
    std::size_t missing = vocab_size;
    for (std::uint64_t n = 0; missing > 0; ++n) {
        std::string w = "w" + std::to_string(n);
        auto& slot = words[stable_hash(w) % vocab_size];
        if (slot.empty()) {
            slot = std::move(w);
            --missing;
        }
    }
    return words;
}

DomainCorpus load_corpus(const fs::path& path, std::size_t vocab_size, CorpusFormat format) {
    check_vocab(vocab_size);
    if (!fs::exists(path)) {
        throw Error("missing corpus path: " + path.string());
    }
    if (!fs::is_directory(path)) {
        throw Error("corpus path is not a directory: " + path.string());
    }
    DomainCorpus corpus;
    corpus.name = path.filename().string();
    corpus.vocab_size = vocab_size;
    for (const auto& file : domain_files(path)) {
        Domain d;
        d.name = file.stem().string();
        d.id = corpus.domains.size();
        d.documents = read_lines(file, vocab_size, format, d.name);
        if (d.documents.empty()) {
            throw Error("empty domain: " + d.name);
        }
        corpus.domains.push_back(std::move(d));
    }
    if (corpus.domains.empty()) {
        throw Error("corpus directory has no domain files: " + path.string());
    }
    return corpus;
}

std::vector<Document> load_documents(const fs::path& path, std::size_t vocab_size, CorpusFormat format) {
    check_vocab(vocab_size);
    if (!fs::exists(path)) {
        throw Error("missing path: " + path.string());
    }
    std::vector<Document> docs;
    if (fs::is_directory(path)) {
        for (const auto& file : domain_files(path)) {
            auto part = read_lines(file, vocab_size, format, file.stem().string());
            docs.insert(docs.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
        }
    } else {
        docs = read_lines(path, vocab_size, format, path.stem().string());
    }
    if (docs.empty()) {
        throw Error("empty document set: " + path.string());
    }
    return docs;
}

void write_documents(const std::vector<Document>& docs, const fs::path& file,
                     const std::vector<std::string>& lexicon) {
    std::ofstream out(file);
    if (!out) {
        throw Error("cannot write " + file.string());
    }
    for (const auto& doc : docs) {
        for (std::size_t i = 0; i < doc.size(); ++i) {
            if (i) {
                out << ' ';
            }
            out << lexicon.at(static_cast<std::size_t>(doc[i]));
        }
        out << '\n';
    }
}

void write_corpus(const DomainCorpus& corpus, const fs::path& dir, const std::vector<std::string>& lexicon) {
    fs::create_directories(dir);
    for (const auto& d : corpus.domains) {
        write_documents(d.documents, dir / (d.name + ".txt"), lexicon);
    }
}

namespace {

std::uint64_t document_key(const Document& doc, std::uint64_t seed, std::size_t domain) {
    std::uint64_t h = derive_seed(seed, domain);
    for (TokenId t : doc) {
        h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(t)));
    }
    return mix64(h ^ doc.size());
}

Domain budget_domain(const Domain& d, std::size_t budget, std::uint64_t seed) {
    std::size_t shortest = std::numeric_limits<std::size_t>::max();
    for (const auto& doc : d.documents) {
        shortest = std::min(shortest, doc.size());
    }
    if (budget < shortest) {
        throw Error("token budget " + std::to_string(budget) + " is smaller than every document in domain " +
                    d.name);
    }
    // Ordering by a seeded content key is a shuffle that is stable under
    // re-application, which makes budgeting idempotent.
    std::vector<std::pair<std::uint64_t, std::size_t>> order;
    order.reserve(d.documents.size());
    for (std::size_t i = 0; i < d.documents.size(); ++i) {
        order.emplace_back(document_key(d.documents[i], seed, d.id), i);
    }
    std::sort(order.begin(), order.end());

    Domain out;
    out.name = d.name;
    out.id = d.id;
    out.token_budget = budget;
    std::size_t used = 0;
    for (const auto& [key, i] : order) {
        if (used >= budget) {
            break;
        }
        out.documents.push_back(d.documents[i]);
        used += d.documents[i].size();
    }
    return out;
}

}  // namespace

DomainCorpus apply_token_budget(const DomainCorpus& corpus, std::size_t budget, std::uint64_t seed) {
    std::vector<std::optional<std::size_t>> budgets(corpus.k(), budget);
    return apply_token_budget(corpus, budgets, seed);
}

DomainCorpus apply_token_budget(const DomainCorpus& corpus, std::span<const std::optional<std::size_t>> budgets,
                                std::uint64_t seed) {
    if (budgets.size() != corpus.k()) {
        throw Error("token budget list length does not match domain count");
    }
    DomainCorpus out;
    out.name = corpus.name;
    out.vocab_size = corpus.vocab_size;
    out.domains.reserve(corpus.k());
    for (std::size_t i = 0; i < corpus.k(); ++i) {
        out.domains.push_back(budgets[i] ? budget_domain(corpus.domains[i], *budgets[i], seed) : corpus.domains[i]);
    }
    return out;
}

std::size_t categorical_draw(const MixtureWeights& weights, Rng& rng) {
    const double u = rng.uniform();
    double cumulative = 0.0;
    std::size_t last_positive = 0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        if (weights(i) <= 0.0) {
            continue;
        }
        cumulative += weights(i);
        last_positive = static_cast<std::size_t>(i);
        if (u < cumulative) {
            return last_positive;
        }
    }
    // u landed in the rounding gap above the final cumulative sum
    return last_positive;
}

Document sample_window(std::span<const Document> docs, const WindowConfig& cfg, Rng& rng) {
    if (docs.empty()) {
        throw Error("cannot sample from an empty document set");
    }
    const std::size_t min_len = cfg.context_length + 1;
    const std::size_t window = std::max(cfg.window, min_len);
    constexpr int kMaxAttempts = 1000;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        const Document& doc = docs[rng.index(docs.size())];
        if (doc.size() < min_len) {
            continue;
        }
        if (doc.size() <= window) {
            return doc;
        }
        const std::size_t start = rng.index(doc.size() - window + 1);
        return Document(doc.begin() + static_cast<std::ptrdiff_t>(start),
                        doc.begin() + static_cast<std::ptrdiff_t>(start + window));
    }
    throw Error("no document longer than the model context (" + std::to_string(cfg.context_length) + " tokens)");
}

Batch sample_batch(const DomainCorpus& corpus, const MixtureWeights& weights, std::size_t batch_size,
                   const WindowConfig& cfg, Rng& rng) {
    if (static_cast<std::size_t>(weights.size()) != corpus.k()) {
        throw Error("mixture weight length does not match domain count");
    }
    Batch b;
    b.sequences.reserve(batch_size);
    b.source_domains.reserve(batch_size);
    for (std::size_t n = 0; n < batch_size; ++n) {
        const std::size_t i = categorical_draw(weights, rng);
        b.sequences.push_back(sample_window(corpus.domains[i].documents, cfg, rng));
        b.source_domains.push_back(i);
    }
    return b;
}

Batch sample_documents(std::span<const Document> docs, std::size_t batch_size, const WindowConfig& cfg, Rng& rng,
                       std::size_t source) {
    Batch b;
    b.sequences.reserve(batch_size);
    for (std::size_t n = 0; n < batch_size; ++n) {
        b.sequences.push_back(sample_window(docs, cfg, rng));
    }
    b.source_domains.assign(batch_size, source);
    return b;
}

Batch full_batch(std::span<const Document> docs, std::size_t source) {
    Batch b;
    b.sequences.assign(docs.begin(), docs.end());
    b.source_domains.assign(docs.size(), source);
    return b;
}

Batch full_batch(const Domain& domain) { return full_batch(domain.documents, domain.id); }

std::pair<std::vector<Document>, std::vector<Document>> split_documents(std::vector<Document> docs,
                                                                        double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw Error("split fraction must be in (0, 1)");
    }
    if (docs.size() < 2) {
        throw Error("need at least two documents to split into train and validation");
    }
    Rng rng(seed, 0x5917);
    for (std::size_t i = docs.size() - 1; i > 0; --i) {
        std::swap(docs[i], docs[rng.index(i + 1)]);
    }
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(docs.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, docs.size() - 1);
    std::vector<Document> train(std::make_move_iterator(docs.begin()),
                                std::make_move_iterator(docs.begin() + static_cast<std::ptrdiff_t>(n_train)));
    std::vector<Document> val(std::make_move_iterator(docs.begin() + static_cast<std::ptrdiff_t>(n_train)),
                              std::make_move_iterator(docs.end()));
    return {std::move(train), std::move(val)};
}

}  // namespace mixopt
