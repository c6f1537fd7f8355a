#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "semad/embedding_store.hpp"

namespace semad {

inline constexpr double kDefaultEpsilon = 1e-6;

/// Row indices of an anchor and the neighbors whose anchor_id points at it.
struct AnchorNeighborhood {
    std::size_t anchor;
    std::vector<std::size_t> neighbors;
};

/// Every role=anchor row in row order, with its neighbors in row order.
std::vector<AnchorNeighborhood> neighborhoods(const EmbeddingSet& set);

struct AnchorSensitivity {
    std::string anchor_id;
    Group group;
    double g;
    std::size_t neighbor_count;
};

struct SensitivityReport {
    std::vector<AnchorSensitivity> per_anchor;
    double epsilon = kDefaultEpsilon;
};

/// Mean over neighbors of |Δf(x_i) - Δf(x_0)| / (|f_clean(x_i) - f_clean(x_0)| + ε)
/// for every anchor. Throws ValidationError for ε <= 0, a set without
/// anchors, or an anchor without neighbors.
SensitivityReport local_sensitivity(const PairedEmbeddings& pair, double epsilon = kDefaultEpsilon,
                                    std::size_t threads = 1);

/// g for one neighborhood given as row indices into the pair.
double anchor_sensitivity(const PairedEmbeddings& pair, const AnchorNeighborhood& hood, double epsilon);

/// M x d matrix whose row i is Δf(x_i) - Δf(x_0). Requires M >= 2.
Eigen::MatrixXd residual_matrix(const PairedEmbeddings& pair, std::string_view anchor_id);
Eigen::MatrixXd residual_matrix(const PairedEmbeddings& pair, const AnchorNeighborhood& hood);

struct EvrResult {
    double evr = 0.0;
    std::size_t k = 0;
    /// All singular values, descending.
    std::vector<double> singular_values;
};

/// Share of squared singular-value mass in the top k singular values of R
/// (R is not centered). Throws ValidationError for k == 0 or R == 0.
EvrResult evr(const Eigen::MatrixXd& r, std::size_t k);

struct AnchorEvr {
    std::string anchor_id;
    Group group;
    /// Absent when the residual matrix is identically zero.
    std::optional<double> evr;
    std::vector<double> singular_values;
    std::size_t neighbor_count;
};

struct EvrReport {
    std::size_t k = 2;
    std::vector<AnchorEvr> per_anchor;
};

/// EVR@k for every anchor with at least two neighbors.
EvrReport evr_report(const PairedEmbeddings& pair, std::size_t k = 2, std::size_t threads = 1);

struct PcaProjection {
    /// d x c orthonormal basis, columns in decreasing variance order.
    Eigen::MatrixXd components;
    /// n x c coordinates of the centered rows.
    Eigen::MatrixXd projected;
    /// Per-component share of total variance.
    std::vector<double> explained_variance;
    Eigen::VectorXd mean;
};

/// Mean-centered PCA. Each component's largest-magnitude coordinate is made
/// positive. Requires n >= 3 and non-zero centered data.
PcaProjection pca_shared(const Eigen::MatrixXd& rows, std::size_t components = 2);

/// Principal directions of the centered rows (d x r, r = min(n, d)) and the
/// variance share of each; used by pca_shared and the layer spectra.
struct Spectrum {
    Eigen::MatrixXd directions;
    std::vector<double> shares;
    double total_variance = 0.0;
};
Spectrum centered_spectrum(const Eigen::MatrixXd& rows);

struct LayerPair {
    std::uint32_t layer;
    PairedEmbeddings pair;
};

struct LayerSpectrum {
    std::uint32_t layer = 0;
    bool degenerate = false;
    std::size_t rows = 0;
    /// Leading variance shares (up to top_k).
    std::vector<double> variance_shares;
    Eigen::VectorXd top_component;
};

struct LayerSpectra {
    std::vector<LayerSpectrum> layers;
    /// Mean |cos| between top components of consecutive non-degenerate
    /// layers; absent with fewer than two such layers.
    std::optional<double> consistency;
};

/// PCA of Δh over target_relevant rows at each layer. Layers are sorted by
/// index. Throws ValidationError when prompt lists differ across layers.
LayerSpectra layerwise_pca(std::span<const LayerPair> layers, std::size_t top_k = 5);

struct ProcrustesAlignment {
    Eigen::MatrixXd rotation;
    double scale = 1.0;
    double fit_residual = 0.0;
    std::size_t fit_rows = 0;
    Group fit_group = Group::control;
    bool low_confidence = false;
};

struct ProcrustesResult {
    ProcrustesAlignment alignment;
    PairedEmbeddings aligned;
};

/// Orthogonal R minimizing |M_fit R - C_fit|_F over the fit group's rows
/// (no translation). With `with_scale`, a global scale is fitted too. R is
/// applied to every modified row; clean rows are untouched.
ProcrustesResult procrustes_align(const PairedEmbeddings& pair, Group fit_group = Group::control,
                                  bool with_scale = false);

}  // namespace semad
