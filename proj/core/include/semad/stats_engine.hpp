#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semad/embedding_store.hpp"

namespace semad {

struct ScoreRow {
    std::string id;
    Group group = Group::control;
    double s_clean = 0.0;
    double s_bd = 0.0;
};

/// Per-prompt evaluator similarities for the clean and modified generators.
struct ScoreTable {
    std::vector<ScoreRow> rows;
    /// Rows dropped at parse time because one of the two scores was missing.
    std::size_t dropped = 0;
};

/// Parses `id,group,s_clean,s_bd` CSV (header mandatory). Rows with an empty
/// score are dropped and counted; malformed rows throw ValidationError.
ScoreTable parse_scores(std::istream& in);
ScoreTable read_scores(const std::filesystem::path& path);

struct DeltaSplit {
    std::vector<double> all;
    std::map<Group, std::vector<double>> by_group;
};

/// Alignment deltas s_bd - s_clean, in row order and split by group.
DeltaSplit deltas(const ScoreTable& table);

struct WelchResult {
    double t = 0.0;
    double dof = 0.0;
    double p_two_sided = 1.0;
    double mean_relevant = 0.0;
    double mean_control = 0.0;
    double var_relevant = 0.0;
    double var_control = 0.0;
    std::size_t n_relevant = 0;
    std::size_t n_control = 0;
};

/// Two-sample unequal-variance t-test with Welch-Satterthwaite degrees of
/// freedom and a two-sided Student-t p-value.
WelchResult welch(std::span<const double> relevant, std::span<const double> control);

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation to
/// ~1e-15 relative.
double regularized_incomplete_beta(double a, double b, double x);

/// Student-t CDF at t with `dof` degrees of freedom.
double student_t_cdf(double t, double dof);

/// Two-sided tail probability P(|T| >= |t|).
double student_t_two_sided(double t, double dof);

/// Unbiased sample variance (n - 1 denominator).
double sample_variance(std::span<const double> x);

struct GridSpec {
    std::optional<double> lo;
    std::optional<double> hi;
    std::size_t points = 512;
};

struct KdeCurve {
    std::vector<double> grid;
    std::vector<double> density;
    double bandwidth = 0.0;
    std::size_t n = 0;
};

/// Scott's rule in one dimension: sample standard deviation times n^(-1/5).
double scott_bandwidth(std::span<const double> samples);

/// Gaussian KDE. The default grid spans [min - 5h, max + 5h].
KdeCurve kde(std::span<const double> samples, const GridSpec& grid = {});

/// Trapezoidal integral of the curve over its grid.
double trapezoid(const KdeCurve& curve);

/// Tail probes reported by default.
inline constexpr std::array<double, 3> kTailProbes{0.10, 0.05, 0.01};

/// Linear interpolation between order statistics (type 7): with sorted x and
/// h = (n - 1) p, Q(p) = x[floor h] + (h - floor h) (x[floor h + 1] - x[floor h]).
/// `sorted` must be ascending and non-empty; p in [0, 1].
double quantile_sorted(std::span<const double> sorted, double p);

/// Type-7 quantiles at each probe. Probes must lie strictly inside (0, 1).
std::vector<double> quantiles(std::span<const double> samples, std::span<const double> probs);

}  // namespace semad
