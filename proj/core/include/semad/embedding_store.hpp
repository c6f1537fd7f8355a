#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace semad {

enum class Group { trigger, target_relevant, control };
enum class Role { anchor, neighbor, standalone };

std::string_view to_string(Group g) noexcept;
std::string_view to_string(Role r) noexcept;
/// Throws ValidationError on an unknown label.
Group parse_group(std::string_view s);
Role parse_role(std::string_view s);

inline constexpr Group kAllGroups[] = {Group::trigger, Group::target_relevant, Group::control};

struct PromptRecord {
    std::string id;
    std::string prompt;
    Group group = Group::control;
    Role role = Role::standalone;
    std::optional<std::string> anchor_id;
    std::optional<std::uint32_t> layer;

    bool operator==(const PromptRecord&) const = default;
};

/// n x d embedding matrix (f32, row-major) plus one PromptRecord per row.
/// Construction validates every invariant; instances are immutable.
class EmbeddingSet {
public:
    EmbeddingSet(std::size_t n, std::size_t d, std::vector<float> data, std::vector<PromptRecord> records);

    std::size_t rows() const noexcept { return n_; }
    std::size_t dim() const noexcept { return d_; }

    std::span<const float> data() const noexcept { return data_; }
    std::span<const float> row(std::size_t i) const noexcept { return {data_.data() + i * d_, d_}; }

    const std::vector<PromptRecord>& records() const noexcept { return records_; }
    const PromptRecord& record(std::size_t i) const { return records_.at(i); }

    std::optional<std::size_t> find(std::string_view id) const;

    /// Row i widened to double.
    Eigen::VectorXd row_vector(std::size_t i) const;
    /// Whole matrix widened to double.
    Eigen::MatrixXd to_matrix() const;

    /// Same records, replacement matrix (rounded to f32).
    EmbeddingSet with_data(const Eigen::MatrixXd& m) const;

private:
    std::size_t n_;
    std::size_t d_;
    std::vector<float> data_;
    std::vector<PromptRecord> records_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Container header size in bytes: magic, version, n, d, dtype, 3 reserved.
inline constexpr std::size_t kHeaderBytes = 28;
inline constexpr std::uint32_t kFormatVersion = 1;

/// Sidecar manifest path: `x.semd` -> `x.manifest.json`.
std::filesystem::path manifest_path(const std::filesystem::path& container);

void write_set(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet read_set(const std::filesystem::path& path);

/// Clean/modified sets over identical prompt metadata.
class PairedEmbeddings {
public:
    const EmbeddingSet& clean() const noexcept { return clean_; }
    const EmbeddingSet& modified() const noexcept { return modified_; }
    std::size_t rows() const noexcept { return clean_.rows(); }
    std::size_t dim() const noexcept { return clean_.dim(); }
    const PromptRecord& record(std::size_t i) const { return clean_.record(i); }

private:
    PairedEmbeddings(EmbeddingSet clean, EmbeddingSet modified)
        : clean_(std::move(clean)), modified_(std::move(modified)) {}
    friend PairedEmbeddings pair(EmbeddingSet clean, EmbeddingSet modified);

    EmbeddingSet clean_;
    EmbeddingSet modified_;
};

/// Positional pairing. Throws ValidationError on a dimension mismatch or at
/// the first index whose metadata differs.
PairedEmbeddings pair(EmbeddingSet clean, EmbeddingSet modified);

}  // namespace semad
