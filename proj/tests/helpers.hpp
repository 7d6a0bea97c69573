#pragma once

#include "mixopt/corpus.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testing {

inline mixopt::Document doc_of(std::initializer_list<int> ids) {
    return mixopt::Document(ids.begin(), ids.end());
}

/// k domains with `docs` random documents of length `len` each.
inline mixopt::DomainCorpus random_corpus(std::size_t k, std::size_t docs, std::size_t len, std::size_t vocab,
                                          std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    mixopt::DomainCorpus c;
    c.name = "random";
    c.vocab_size = vocab;
    for (std::size_t i = 0; i < k; ++i) {
        mixopt::Domain d;
        d.name = "d" + std::to_string(i);
        d.id = i;
        for (std::size_t n = 0; n < docs; ++n) {
            mixopt::Document doc(len);
            for (auto& t : doc) {
                t = static_cast<mixopt::TokenId>(gen() % vocab);
            }
            d.documents.push_back(std::move(doc));
        }
        c.domains.push_back(std::move(d));
    }
    return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("mixopt_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

}  // namespace testing
