#include "semad/geometry_probe.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "semad/errors.hpp"
#include "semad/parallel.hpp"

namespace semad {

namespace {

// Δf(x_i) - Δf(x_0) for row i against anchor row a, in double.
void residual_row(const PairedEmbeddings& pair, std::size_t i, std::size_t a, double* out) {
    const auto ci = pair.clean().row(i);
    const auto mi = pair.modified().row(i);
    const auto ca = pair.clean().row(a);
    const auto ma = pair.modified().row(a);
    for (std::size_t j = 0; j < pair.dim(); ++j)
        out[j] = (static_cast<double>(mi[j]) - static_cast<double>(ci[j])) -
                 (static_cast<double>(ma[j]) - static_cast<double>(ca[j]));
}

AnchorNeighborhood find_neighborhood(const PairedEmbeddings& pair, std::string_view anchor_id) {
    const auto idx = pair.clean().find(anchor_id);
    if (!idx) throw ValidationError("unresolvable anchor '" + std::string(anchor_id) + "'");
    if (pair.record(*idx).role != Role::anchor)
        throw ValidationError("record '" + std::string(anchor_id) + "' is not an anchor");
    AnchorNeighborhood hood{*idx, {}};
    for (std::size_t i = 0; i < pair.rows(); ++i) {
        const auto& r = pair.record(i);
        if (r.role == Role::neighbor && r.anchor_id && *r.anchor_id == anchor_id) hood.neighbors.push_back(i);
    }
    return hood;
}

void make_sign_deterministic(Eigen::Ref<Eigen::VectorXd> v) {
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
}

}  // namespace

std::vector<AnchorNeighborhood> neighborhoods(const EmbeddingSet& set) {
    std::vector<AnchorNeighborhood> out;
    std::unordered_map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < set.rows(); ++i) {
        if (set.record(i).role == Role::anchor) {
            slot.emplace(set.record(i).id, out.size());
            out.push_back({i, {}});
        }
    }
    for (std::size_t i = 0; i < set.rows(); ++i) {
        const auto& r = set.record(i);
        if (r.role != Role::neighbor) continue;
        if (auto it = slot.find(*r.anchor_id); it != slot.end()) out[it->second].neighbors.push_back(i);
    }
    return out;
}

double anchor_sensitivity(const PairedEmbeddings& pair, const AnchorNeighborhood& hood, double epsilon) {
    if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
    if (hood.neighbors.empty())
        throw ValidationError("anchor '" + pair.record(hood.anchor).id + "' has no neighbors");
    const auto d = pair.dim();
    std::vector<double> resid(d);
    double total = 0.0;
    const auto c0 = pair.clean().row(hood.anchor);
    for (std::size_t i : hood.neighbors) {
        residual_row(pair, i, hood.anchor, resid.data());
        double num = 0.0;
        for (double v : resid) num += v * v;
        const auto ci = pair.clean().row(i);
        double step = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double s = static_cast<double>(ci[j]) - static_cast<double>(c0[j]);
            step += s * s;
        }
        total += std::sqrt(num) / (std::sqrt(step) + epsilon);
    }
    return total / static_cast<double>(hood.neighbors.size());
}

SensitivityReport local_sensitivity(const PairedEmbeddings& pair, double epsilon, std::size_t threads) {
    if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
    const auto hoods = neighborhoods(pair.clean());
    if (hoods.empty()) throw ValidationError("no anchors in the embedding set");
    for (const auto& h : hoods)
        if (h.neighbors.empty()) throw ValidationError("anchor '" + pair.record(h.anchor).id + "' has no neighbors");

    SensitivityReport report;
    report.epsilon = epsilon;
    report.per_anchor.resize(hoods.size());
    parallel_for(hoods.size(), threads, [&](std::size_t a) {
        const auto& h = hoods[a];
        const auto& rec = pair.record(h.anchor);
        report.per_anchor[a] = {rec.id, rec.group, anchor_sensitivity(pair, h, epsilon), h.neighbors.size()};
    });
    return report;
}

Eigen::MatrixXd residual_matrix(const PairedEmbeddings& pair, const AnchorNeighborhood& hood) {
    if (hood.neighbors.size() < 2)
        throw ValidationError("anchor '" + pair.record(hood.anchor).id + "' needs at least 2 neighbors, has " +
                              std::to_string(hood.neighbors.size()));
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    RowMajor r(static_cast<Eigen::Index>(hood.neighbors.size()), static_cast<Eigen::Index>(pair.dim()));
    for (std::size_t k = 0; k < hood.neighbors.size(); ++k)
        residual_row(pair, hood.neighbors[k], hood.anchor, r.row(static_cast<Eigen::Index>(k)).data());
    return r;
}

Eigen::MatrixXd residual_matrix(const PairedEmbeddings& pair, std::string_view anchor_id) {
    return residual_matrix(pair, find_neighborhood(pair, anchor_id));
}

EvrResult evr(const Eigen::MatrixXd& r, std::size_t k) {
    if (k == 0) throw ValidationError("EVR needs k >= 1");
    if (r.size() == 0 || r.squaredNorm() == 0.0) throw ValidationError("EVR undefined for an all-zero residual matrix");
    Eigen::BDCSVD<Eigen::MatrixXd> svd(r);
    const Eigen::VectorXd& s = svd.singularValues();
    EvrResult out;
    out.k = k;
    out.singular_values.assign(s.data(), s.data() + s.size());
    double head = 0.0;
    double total = 0.0;
    for (Eigen::Index j = 0; j < s.size(); ++j) {
        total += s(j) * s(j);
        if (static_cast<std::size_t>(j) < k) head = total;
    }
    out.evr = head / total;
    return out;
}

EvrReport evr_report(const PairedEmbeddings& pair, std::size_t k, std::size_t threads) {
    if (k == 0) throw ValidationError("EVR needs k >= 1");
    auto hoods = neighborhoods(pair.clean());
    std::erase_if(hoods, [](const AnchorNeighborhood& h) { return h.neighbors.size() < 2; });
    if (hoods.empty()) throw ValidationError("no anchor has the 2 neighbors EVR needs");

    EvrReport report;
    report.k = k;
    report.per_anchor.resize(hoods.size());
    parallel_for(hoods.size(), threads, [&](std::size_t a) {
        const auto& h = hoods[a];
        const auto& rec = pair.record(h.anchor);
        AnchorEvr entry{rec.id, rec.group, std::nullopt, {}, h.neighbors.size()};
        const auto r = residual_matrix(pair, h);
        if (r.squaredNorm() > 0.0) {
            auto res = evr(r, k);
            entry.evr = res.evr;
            entry.singular_values = std::move(res.singular_values);
        }
        report.per_anchor[a] = std::move(entry);
    });
    return report;
}

Spectrum centered_spectrum(const Eigen::MatrixXd& rows) {
    Spectrum sp;
    if (rows.rows() < 2) return sp;
    const Eigen::RowVectorXd mean = rows.colwise().mean();
    const Eigen::MatrixXd centered = rows.rowwise() - mean;
    if (centered.squaredNorm() == 0.0) return sp;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    sp.directions = svd.matrixV();
    double ss = s.squaredNorm();
    sp.total_variance = ss / static_cast<double>(rows.rows() - 1);
    sp.shares.reserve(static_cast<std::size_t>(s.size()));
    for (Eigen::Index j = 0; j < s.size(); ++j) sp.shares.push_back(s(j) * s(j) / ss);
    for (Eigen::Index j = 0; j < sp.directions.cols(); ++j) make_sign_deterministic(sp.directions.col(j));
    return sp;
}

PcaProjection pca_shared(const Eigen::MatrixXd& rows, std::size_t components) {
    if (rows.rows() < 3) throw ValidationError("PCA needs at least 3 rows");
    if (components == 0) throw ValidationError("PCA needs at least one component");
    auto sp = centered_spectrum(rows);
    if (sp.shares.empty()) throw ValidationError("PCA input has rank 0 after centering");

    const auto c = std::min<Eigen::Index>(static_cast<Eigen::Index>(components), sp.directions.cols());
    PcaProjection out;
    out.mean = rows.colwise().mean().transpose();
    out.components = sp.directions.leftCols(c);
    out.projected = (rows.rowwise() - out.mean.transpose()) * out.components;
    out.explained_variance.assign(sp.shares.begin(), sp.shares.begin() + c);
    // Pad with zero-variance axes when the data has fewer directions than asked.
    while (out.explained_variance.size() < components) {
        out.explained_variance.push_back(0.0);
        out.components.conservativeResize(Eigen::NoChange, out.components.cols() + 1);
        out.components.col(out.components.cols() - 1).setZero();
        out.projected.conservativeResize(Eigen::NoChange, out.projected.cols() + 1);
        out.projected.col(out.projected.cols() - 1).setZero();
    }
    return out;
}

LayerSpectra layerwise_pca(std::span<const LayerPair> layers, std::size_t top_k) {
    if (layers.empty()) throw ValidationError("layer-wise PCA needs at least one layer");
    if (top_k == 0) throw ValidationError("top_k must be positive");
    std::vector<const LayerPair*> order;
    for (const auto& l : layers) order.push_back(&l);
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->layer < b->layer; });
    for (std::size_t i = 1; i < order.size(); ++i)
        if (order[i]->layer == order[i - 1]->layer)
            throw ValidationError("duplicate layer index " + std::to_string(order[i]->layer));

    const auto& ref = order.front()->pair;
    auto same_prompt = [](PromptRecord a, PromptRecord b) {
        a.layer.reset();
        b.layer.reset();
        return a == b;
    };
    for (const auto* l : order) {
        const auto& p = l->pair;
        if (p.rows() != ref.rows())
            throw ValidationError("mismatched prompt lists: layer " + std::to_string(l->layer) + " has " +
                                  std::to_string(p.rows()) + " rows, expected " + std::to_string(ref.rows()));
        for (std::size_t i = 0; i < p.rows(); ++i)
            if (!same_prompt(p.record(i), ref.record(i)))
                throw ValidationError("mismatched prompt lists at layer " + std::to_string(l->layer) + ", index " +
                                      std::to_string(i));
    }

    std::vector<std::size_t> target_rows;
    for (std::size_t i = 0; i < ref.rows(); ++i)
        if (ref.record(i).group == Group::target_relevant) target_rows.push_back(i);
    if (target_rows.empty()) throw ValidationError("layer-wise PCA needs target_relevant prompts");

    LayerSpectra out;
    for (const auto* l : order) {
        const auto& p = l->pair;
        Eigen::MatrixXd dh(static_cast<Eigen::Index>(target_rows.size()), static_cast<Eigen::Index>(p.dim()));
        for (std::size_t k = 0; k < target_rows.size(); ++k) {
            const auto c = p.clean().row(target_rows[k]);
            const auto m = p.modified().row(target_rows[k]);
            for (std::size_t j = 0; j < p.dim(); ++j)
                dh(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
                    static_cast<double>(m[j]) - static_cast<double>(c[j]);
        }
        LayerSpectrum ls;
        ls.layer = l->layer;
        ls.rows = target_rows.size();
        auto sp = centered_spectrum(dh);
        if (sp.shares.empty()) {
            ls.degenerate = true;
        } else {
            const auto keep = std::min(top_k, sp.shares.size());
            ls.variance_shares.assign(sp.shares.begin(), sp.shares.begin() + static_cast<std::ptrdiff_t>(keep));
            ls.top_component = sp.directions.col(0);
        }
        out.layers.push_back(std::move(ls));
    }

    double acc = 0.0;
    std::size_t pairs = 0;
    const LayerSpectrum* prev = nullptr;
    for (const auto& ls : out.layers) {
        if (ls.degenerate) continue;
        if (prev) {
            acc += std::fabs(prev->top_component.dot(ls.top_component));
            ++pairs;
        }
        prev = &ls;
    }
    if (pairs > 0) out.consistency = acc / static_cast<double>(pairs);
    return out;
}

ProcrustesResult procrustes_align(const PairedEmbeddings& pair, Group fit_group, bool with_scale) {
    std::vector<Eigen::Index> fit;
    for (std::size_t i = 0; i < pair.rows(); ++i)
        if (pair.record(i).group == fit_group) fit.push_back(static_cast<Eigen::Index>(i));
    if (fit.empty()) throw ValidationError("Procrustes fit group '" + std::string(to_string(fit_group)) + "' is empty");

    const Eigen::MatrixXd clean = pair.clean().to_matrix();
    const Eigen::MatrixXd modified = pair.modified().to_matrix();
    const Eigen::MatrixXd c = clean(fit, Eigen::all);
    const Eigen::MatrixXd m = modified(fit, Eigen::all);

    Eigen::BDCSVD<Eigen::MatrixXd> svd(m.transpose() * c, Eigen::ComputeFullU | Eigen::ComputeFullV);
    ProcrustesAlignment a;
    a.rotation = svd.matrixU() * svd.matrixV().transpose();
    a.fit_group = fit_group;
    a.fit_rows = fit.size();
    a.low_confidence = 4 * fit.size() < pair.dim();
    if (with_scale) {
        const double mm = m.squaredNorm();
        if (mm > 0.0) a.scale = svd.singularValues().sum() / mm;
    }
    a.fit_residual = (a.scale * m * a.rotation - c).norm();

    const Eigen::MatrixXd aligned = a.scale * modified * a.rotation;
    auto aligned_pair = semad::pair(pair.clean(), pair.modified().with_data(aligned));
    return {std::move(a), std::move(aligned_pair)};
}

}  // namespace semad
