#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "semad/embedding_store.hpp"
#include "semad/rng.hpp"

namespace semad::test {

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("semad-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline PromptRecord record(std::string id, Group g = Group::control, Role r = Role::standalone,
                           std::optional<std::string> anchor = std::nullopt) {
    return {std::move(id), "prompt", g, r, std::move(anchor), std::nullopt};
}

/// n standalone control rows with N(0,1) entries.
inline EmbeddingSet random_set(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> data(n * d);
    for (auto& v : data) v = static_cast<float>(rng.normal());
    std::vector<PromptRecord> recs;
    for (std::size_t i = 0; i < n; ++i) recs.push_back(record("r" + std::to_string(i)));
    return EmbeddingSet(n, d, std::move(data), std::move(recs));
}

inline EmbeddingSet from_rows(const std::vector<std::vector<double>>& rows, std::vector<PromptRecord> recs = {}) {
    const std::size_t n = rows.size();
    const std::size_t d = rows.front().size();
    std::vector<float> data;
    for (const auto& r : rows)
        for (double v : r) data.push_back(static_cast<float>(v));
    if (recs.empty())
        for (std::size_t i = 0; i < n; ++i) recs.push_back(record("r" + std::to_string(i)));
    return EmbeddingSet(n, d, std::move(data), std::move(recs));
}

}  // namespace semad::test
