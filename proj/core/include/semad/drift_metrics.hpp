#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "semad/embedding_store.hpp"

namespace semad {

/// Row-wise drift modified - clean and its Euclidean norms.
struct DriftField {
    Eigen::MatrixXd deltas;
    std::vector<double> norms;
    std::vector<Group> groups;
};

DriftField drift(const PairedEmbeddings& pair);

/// 1 - cos(a, b), accumulated in double. Throws ValidationError if either
/// vector has zero norm.
double drift_score(std::span<const float> clean, std::span<const float> modified);

struct SdsReport {
    std::vector<double> per_prompt;
    std::vector<Group> groups;
    std::map<Group, double> group_means;
    /// target_relevant mean over control mean; absent when either group is
    /// missing or the control mean is zero.
    std::optional<double> ratio_target_over_control;
};

/// Semantic drift score per row. Throws ValidationError naming the first
/// zero-norm row.
SdsReport sds(const PairedEmbeddings& pair);

/// Right-continuous empirical CDF with ties collapsed onto one step.
class Ecdf {
public:
    explicit Ecdf(std::span<const double> values);

    const std::vector<double>& sorted_values() const noexcept { return values_; }
    const std::vector<double>& step_heights() const noexcept { return heights_; }
    std::size_t sample_count() const noexcept { return n_; }

    /// Fraction of samples <= t.
    double operator()(double t) const;

private:
    std::vector<double> values_;
    std::vector<double> heights_;
    std::size_t n_;
};

/// Throws ValidationError on empty or non-finite input.
Ecdf ecdf(std::span<const double> values);

struct GroupStats {
    std::size_t count = 0;
    double mean = 0.0;
    double median = 0.0;
    double max = 0.0;
    /// Type-7 quantiles at 0.1, 0.2, ..., 0.9.
    std::array<double, 9> deciles{};
};

struct GroupSummary {
    std::map<Group, GroupStats> groups;
    std::vector<Group> empty_groups;
    std::optional<double> ratio_target_over_control;
    /// Per decile (0.1..0.9): trigger >= target_relevant >= control. Only
    /// filled when all three groups are present.
    std::optional<std::array<bool, 9>> decile_dominance;
    std::vector<std::string> notes;

    /// Number of dominant deciles among 0.5..0.9.
    std::optional<std::size_t> upper_dominance_count() const;
};

/// Per-group statistics; trigger rows never enter the target/control ratio.
GroupSummary group_summary(std::span<const double> values, std::span<const Group> groups);
GroupSummary group_summary(const DriftField& field);
GroupSummary group_summary(const SdsReport& report);

}  // namespace semad
