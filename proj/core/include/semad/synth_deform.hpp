#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "semad/drift_metrics.hpp"
#include "semad/embedding_store.hpp"
#include "semad/geometry_probe.hpp"

namespace semad {

/// Gaussian cluster of synthetic "clean encoder" outputs. With
/// neighbors_per_anchor > 0 every drawn point becomes an anchor followed by
/// that many neighbors at anchor + neighbor_step * N(0, I).
struct Cluster {
    std::string label;
    Eigen::VectorXd center;
    double spread = 0.1;
    std::size_t count = 1;
    Group group = Group::control;
    std::size_t neighbors_per_anchor = 0;
    double neighbor_step = 0.1;
};

struct ManifoldConfig {
    std::size_t d = 0;
    std::vector<Cluster> clusters;
    std::uint64_t seed = 0;
};

/// One rank-one term gain * u v^T of the drift Jacobian.
struct JacobianFactor {
    Eigen::VectorXd u;
    Eigen::VectorXd v;
    double gain = 1.0;
};

/// Target-centered local deformation:
///   f_bd(x) = f_clean(x) + w(x) [ Δ0 + Σ gain_i u_i <v_i, x - x0> ],
///   w(x) = exp(-|x - x0|^2 / (2 ρ^2)), truncated to 0 below 1e-12.
/// Trigger rows (when remap_triggers is set) map to x0 + Δ0 instead.
struct DeformationConfig {
    Eigen::VectorXd anchor_displacement;
    std::vector<JacobianFactor> factors;
    double locality_radius = 1.0;
    Eigen::VectorXd target_center;
    std::uint64_t seed = 0;
    bool remap_triggers = true;

    std::size_t rank() const noexcept { return factors.size(); }
    double max_gain() const noexcept;
};

inline constexpr double kWeightTruncation = 1e-12;

/// Planted low-rank deformation: u_i and v_i are orthonormal sets from the QR
/// of seeded Gaussian draws; every factor gets `gain`. The displacement has
/// norm `displacement_norm` in a seeded random direction.
DeformationConfig make_low_rank_deformation(std::size_t d, std::size_t rank, double gain, double locality_radius,
                                            const Eigen::VectorXd& target_center, double displacement_norm,
                                            std::uint64_t seed);

/// Global benign change applied after the deformation: a rotation of the
/// given angle scale (Cayley transform of a seeded skew-symmetric matrix)
/// and i.i.d. Gaussian jitter per coordinate.
struct BenignDistortion {
    double rotation_angle = 0.0;
    double jitter = 0.0;
    std::uint64_t seed = 0;
};

struct Scenario {
    ManifoldConfig manifold;
    DeformationConfig deformation;
    BenignDistortion benign;
};

/// d = 64; trigger, target_relevant, control clusters; rank-2 warp, gain 5.
Scenario default_scenario(std::uint64_t seed = 20240611);

/// Deterministic per seed; row r draws from stream mix_seed(seed, r).
EmbeddingSet generate_clean(const ManifoldConfig& cfg);

double locality_weight(const Eigen::VectorXd& x, const DeformationConfig& cfg);

/// Applies the deformation row by row. Throws ValidationError when any
/// vector in the config does not have the set's dimension.
EmbeddingSet apply_deformation(const EmbeddingSet& clean, const DeformationConfig& cfg);

/// d x d orthogonal matrix; identity for angle 0.
Eigen::MatrixXd benign_rotation(std::size_t d, double angle, std::uint64_t seed);

EmbeddingSet apply_benign(const EmbeddingSet& modified, const BenignDistortion& cfg);

/// generate_clean -> apply_deformation -> apply_benign.
PairedEmbeddings simulate(const Scenario& scenario);

/// Scenario JSON. Vectors may be given explicitly or generated: see README.
Scenario parse_scenario(std::string_view json_text);
/// Fully resolved scenario (all vectors explicit).
std::string scenario_json(const Scenario& scenario);

struct Diagnostics {
    DriftField drift;
    SdsReport sds;
    SensitivityReport sensitivity;
    EvrReport evr;
    SdsReport aligned_sds;
};

/// Everything oracle_report needs. EVR uses k = deformation rank (at least 1).
Diagnostics run_diagnostics(const PairedEmbeddings& pair, std::size_t k, double epsilon = kDefaultEpsilon,
                            std::size_t threads = 1);

struct OracleCheck {
    std::string name;
    bool passed = false;
    double measured = 0.0;
    /// ">=" or "<=": how measured must compare with threshold.
    std::string comparison;
    double threshold = 0.0;
    std::string detail;
};

struct OracleReport {
    std::vector<OracleCheck> checks;
    std::vector<std::string> notes;
    bool deformation_detected = true;

    bool all_passed() const;
};

/// Compares measured diagnostics against the planted configuration:
///  sensitivity: median g(target) / median g(control) >= max_gain / 2
///  evr: median EVR@r(target) - median EVR@r(control) >= 0.2
///  sds_ordering: trigger >= target >= control at deciles 0.5..0.9
///  procrustes: aligned median SDS(control) <= 0.5 * aligned median SDS(target)
OracleReport oracle_report(const Scenario& scenario, const Diagnostics& diagnostics);

inline constexpr double kOracleEvrMargin = 0.2;
inline constexpr double kOracleProcrustesRatio = 0.5;
/// Max drift norm below which a pair counts as undeformed.
inline constexpr double kNoDeformationTolerance = 1e-6;

}  // namespace semad
