#include "semad/synth_deform.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>

#include "semad/errors.hpp"
#include "semad/rng.hpp"
#include "semad/stats_engine.hpp"

namespace semad {

namespace {

using json = nlohmann::ordered_json;

Eigen::VectorXd gaussian_vector(std::size_t d, Rng& rng) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(d));
    for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = rng.normal();
    return v;
}

Eigen::MatrixXd gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    // Column-major fill order is part of the determinism contract.
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.normal();
    return m;
}

// Orthonormal columns from Householder QR, with R's diagonal made positive so
// the basis is a function of the draws alone.
Eigen::MatrixXd orthonormal_columns(std::size_t d, std::size_t k, Rng& rng) {
    const Eigen::MatrixXd g = gaussian_matrix(d, k, rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
    const Eigen::MatrixXd r = qr.matrixQR().topRows(static_cast<Eigen::Index>(k)).triangularView<Eigen::Upper>();
    for (Eigen::Index c = 0; c < q.cols(); ++c)
        if (r(c, c) < 0.0) q.col(c) = -q.col(c);
    return q;
}

void require_dim(const Eigen::VectorXd& v, std::size_t d, const std::string& what) {
    if (static_cast<std::size_t>(v.size()) != d)
        throw ValidationError(what + " has dimension " + std::to_string(v.size()) + ", expected " + std::to_string(d));
}

std::string numbered(const std::string& prefix, const char* fmt, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, fmt, i);
    return prefix + buf;
}

std::string short_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

double median_of(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    return quantile_sorted(v, 0.5);
}

std::vector<double> values_for(const std::vector<double>& values, const std::vector<Group>& groups, Group g) {
    std::vector<double> out;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (groups[i] == g) out.push_back(values[i]);
    return out;
}

// ---- JSON helpers ----------------------------------------------------------

Eigen::VectorXd vector_from_json(const nlohmann::json& j, const std::string& what) {
    if (!j.is_array()) throw ValidationError(what + " must be an array of numbers");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ValidationError(what + " must be an array of numbers");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

template <class T>
T value_or(const nlohmann::json& j, const char* key, T fallback) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return fallback;
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(std::string("scenario field '") + key + "' has the wrong type");
    }
}

Eigen::VectorXd axis_vector(std::size_t d, std::size_t axis, double scale) {
    if (axis >= d) throw ValidationError("center_axis " + std::to_string(axis) + " out of range for d=" + std::to_string(d));
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    v(static_cast<Eigen::Index>(axis)) = scale;
    return v;
}

}  // namespace

double DeformationConfig::max_gain() const noexcept {
    double g = 0.0;
    for (const auto& f : factors) g = std::max(g, f.gain);
    return g;
}

DeformationConfig make_low_rank_deformation(std::size_t d, std::size_t rank, double gain, double locality_radius,
                                            const Eigen::VectorXd& target_center, double displacement_norm,
                                            std::uint64_t seed) {
    if (rank > d) throw ValidationError("Jacobian rank exceeds dimension");
    require_dim(target_center, d, "target_center");
    DeformationConfig cfg;
    cfg.seed = seed;
    cfg.locality_radius = locality_radius;
    cfg.target_center = target_center;
    Rng rng(seed);
    if (rank > 0) {
        const Eigen::MatrixXd u = orthonormal_columns(d, rank, rng);
        const Eigen::MatrixXd v = orthonormal_columns(d, rank, rng);
        for (std::size_t i = 0; i < rank; ++i)
            cfg.factors.push_back({u.col(static_cast<Eigen::Index>(i)), v.col(static_cast<Eigen::Index>(i)), gain});
    }
    Eigen::VectorXd dir = gaussian_vector(d, rng);
    cfg.anchor_displacement = displacement_norm == 0.0 ? Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d))
                                                       : Eigen::VectorXd(dir.normalized() * displacement_norm);
    return cfg;
}

Scenario default_scenario(std::uint64_t seed) {
    constexpr std::size_t d = 64;
    constexpr double scale = 10.0;
    Scenario s;
    s.manifold.d = d;
    s.manifold.seed = seed;
    s.manifold.clusters = {
        {"trigger", axis_vector(d, 2, scale), 0.1, 40, Group::trigger, 0, 0.1},
        {"target", axis_vector(d, 0, scale), 0.1, 24, Group::target_relevant, 16, 0.1},
        {"control", axis_vector(d, 1, scale), 0.1, 24, Group::control, 16, 0.1},
    };
    s.deformation = make_low_rank_deformation(d, 2, 5.0, 1.5, axis_vector(d, 0, scale), 0.05, mix_seed(seed, 1));
    s.benign = {0.05, 0.002, mix_seed(seed, 2)};
    return s;
}

EmbeddingSet generate_clean(const ManifoldConfig& cfg) {
    if (cfg.d == 0) throw ValidationError("manifold dimension must be >= 1");
    if (cfg.clusters.empty()) throw ValidationError("manifold needs at least one cluster");
    std::set<std::string> labels;
    std::size_t total = 0;
    for (const auto& c : cfg.clusters) {
        if (c.label.empty() || !labels.insert(c.label).second)
            throw ValidationError("cluster labels must be non-empty and unique");
        if (c.count == 0) throw ValidationError("cluster '" + c.label + "' has count 0");
        if (!(c.spread > 0.0)) throw ValidationError("cluster '" + c.label + "' needs spread > 0");
        if (c.neighbors_per_anchor > 0 && !(c.neighbor_step > 0.0))
            throw ValidationError("cluster '" + c.label + "' needs neighbor_step > 0");
        require_dim(c.center, cfg.d, "center of cluster '" + c.label + "'");
        total += c.count * (1 + c.neighbors_per_anchor);
    }

    std::vector<float> data;
    data.reserve(total * cfg.d);
    std::vector<PromptRecord> records;
    records.reserve(total);
    std::uint64_t row = 0;
    auto emit = [&](const Eigen::VectorXd& x, PromptRecord rec) {
        for (Eigen::Index j = 0; j < x.size(); ++j) data.push_back(static_cast<float>(x(j)));
        records.push_back(std::move(rec));
        ++row;
    };
    for (const auto& c : cfg.clusters) {
        const bool anchored = c.neighbors_per_anchor > 0;
        for (std::size_t p = 0; p < c.count; ++p) {
            Rng rng = Rng::stream(cfg.seed, row);
            const Eigen::VectorXd point = c.center + c.spread * gaussian_vector(cfg.d, rng);
            const auto id = numbered(c.label, anchored ? "-a%03zu" : "-p%03zu", p);
            emit(point, {id, "synthetic " + c.label + " " + std::to_string(p), c.group,
                         anchored ? Role::anchor : Role::standalone, std::nullopt, std::nullopt});
            for (std::size_t k = 0; k < c.neighbors_per_anchor; ++k) {
                Rng nrng = Rng::stream(cfg.seed, row);
                const Eigen::VectorXd nb = point + c.neighbor_step * gaussian_vector(cfg.d, nrng);
                emit(nb, {numbered(id, "-n%02zu", k), "synthetic " + c.label + " " + std::to_string(p) + " neighbor " +
                              std::to_string(k),
                          c.group, Role::neighbor, id, std::nullopt});
            }
        }
    }
    return EmbeddingSet(total, cfg.d, std::move(data), std::move(records));
}

double locality_weight(const Eigen::VectorXd& x, const DeformationConfig& cfg) {
    const double r2 = (x - cfg.target_center).squaredNorm();
    const double w = std::exp(-r2 / (2.0 * cfg.locality_radius * cfg.locality_radius));
    return w < kWeightTruncation ? 0.0 : w;
}

EmbeddingSet apply_deformation(const EmbeddingSet& clean, const DeformationConfig& cfg) {
    const auto d = clean.dim();
    require_dim(cfg.target_center, d, "target_center");
    require_dim(cfg.anchor_displacement, d, "anchor_displacement");
    if (!(cfg.locality_radius > 0.0)) throw ValidationError("locality_radius must be positive");
    for (std::size_t i = 0; i < cfg.factors.size(); ++i) {
        require_dim(cfg.factors[i].u, d, "factor " + std::to_string(i) + " u");
        require_dim(cfg.factors[i].v, d, "factor " + std::to_string(i) + " v");
    }
    if (cfg.factors.size() > d) throw ValidationError("Jacobian rank exceeds dimension");

    std::vector<float> out(clean.data().begin(), clean.data().end());
    const Eigen::VectorXd trigger_image = cfg.target_center + cfg.anchor_displacement;
    for (std::size_t i = 0; i < clean.rows(); ++i) {
        float* dst = out.data() + i * d;
        if (cfg.remap_triggers && clean.record(i).group == Group::trigger) {
            for (std::size_t j = 0; j < d; ++j) dst[j] = static_cast<float>(trigger_image(static_cast<Eigen::Index>(j)));
            continue;
        }
        const Eigen::VectorXd x = clean.row_vector(i);
        const double w = locality_weight(x, cfg);
        if (w == 0.0) continue;
        const Eigen::VectorXd offset = x - cfg.target_center;
        Eigen::VectorXd delta = cfg.anchor_displacement;
        for (const auto& f : cfg.factors) delta += f.gain * f.v.dot(offset) * f.u;
        const Eigen::VectorXd y = x + w * delta;
        for (std::size_t j = 0; j < d; ++j) dst[j] = static_cast<float>(y(static_cast<Eigen::Index>(j)));
    }
    return EmbeddingSet(clean.rows(), d, std::move(out), clean.records());
}

Eigen::MatrixXd benign_rotation(std::size_t d, double angle, std::uint64_t seed) {
    const auto n = static_cast<Eigen::Index>(d);
    if (angle == 0.0) return Eigen::MatrixXd::Identity(n, n);
    Rng rng(seed);
    const Eigen::MatrixXd g = gaussian_matrix(d, d, rng);
    Eigen::MatrixXd a = g - g.transpose();
    const double spectral = Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues()(0);
    if (spectral == 0.0) return Eigen::MatrixXd::Identity(n, n);
    a *= 0.5 * angle / spectral;
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
    // Cayley transform: exactly orthogonal for skew-symmetric a.
    return (eye - a).partialPivLu().solve(eye + a);
}

EmbeddingSet apply_benign(const EmbeddingSet& modified, const BenignDistortion& cfg) {
    if (cfg.rotation_angle == 0.0 && cfg.jitter == 0.0) return modified;
    Eigen::MatrixXd m = modified.to_matrix();
    if (cfg.rotation_angle != 0.0) m = m * benign_rotation(modified.dim(), cfg.rotation_angle, mix_seed(cfg.seed, 0));
    if (cfg.jitter != 0.0) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            Rng rng = Rng::stream(mix_seed(cfg.seed, 1), static_cast<std::uint64_t>(i));
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) += cfg.jitter * rng.normal();
        }
    }
    return modified.with_data(m);
}

PairedEmbeddings simulate(const Scenario& scenario) {
    auto clean = generate_clean(scenario.manifold);
    auto modified = apply_benign(apply_deformation(clean, scenario.deformation), scenario.benign);
    return pair(std::move(clean), std::move(modified));
}

Scenario parse_scenario(std::string_view json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("scenario: malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError("scenario must be a JSON object");

    const auto base_seed = value_or<std::uint64_t>(j, "seed", 20240611);
    Scenario s;
    s.manifold.seed = base_seed;
    s.manifold.d = value_or<std::size_t>(j, "d", 0);
    if (s.manifold.d == 0) throw ValidationError("scenario needs a positive 'd'");
    const auto d = s.manifold.d;

    if (!j.contains("clusters") || !j["clusters"].is_array() || j["clusters"].empty())
        throw ValidationError("scenario needs a non-empty 'clusters' array");
    for (const auto& jc : j["clusters"]) {
        Cluster c;
        c.label = value_or<std::string>(jc, "label", "");
        c.group = parse_group(value_or<std::string>(jc, "group", "control"));
        if (jc.contains("center")) {
            c.center = vector_from_json(jc["center"], "center of cluster '" + c.label + "'");
        } else {
            c.center = axis_vector(d, value_or<std::size_t>(jc, "center_axis", 0), value_or<double>(jc, "center_scale", 1.0));
        }
        c.spread = value_or<double>(jc, "spread", 0.1);
        c.count = value_or<std::size_t>(jc, "count", 1);
        c.neighbors_per_anchor = value_or<std::size_t>(jc, "neighbors_per_anchor", 0);
        c.neighbor_step = value_or<double>(jc, "neighbor_step", 0.1);
        s.manifold.clusters.push_back(std::move(c));
    }

    const nlohmann::json jd = j.value("deformation", nlohmann::json::object());
    Eigen::VectorXd center;
    if (jd.contains("target_center")) {
        center = vector_from_json(jd["target_center"], "target_center");
    } else {
        auto it = std::find_if(s.manifold.clusters.begin(), s.manifold.clusters.end(),
                               [](const Cluster& c) { return c.group == Group::target_relevant; });
        if (it == s.manifold.clusters.end())
            throw ValidationError("deformation.target_center missing and no target_relevant cluster to default to");
        center = it->center;
    }
    const auto def_seed = value_or<std::uint64_t>(jd, "seed", mix_seed(base_seed, 1));
    s.deformation = make_low_rank_deformation(d, value_or<std::size_t>(jd, "jacobian_rank", 0),
                                              value_or<double>(jd, "gain", 1.0), value_or<double>(jd, "locality_radius", 1.0),
                                              center, value_or<double>(jd, "anchor_displacement_norm", 0.0), def_seed);
    if (jd.contains("jacobian_factors")) {
        s.deformation.factors.clear();
        for (const auto& jf : jd["jacobian_factors"]) {
            JacobianFactor f;
            f.u = vector_from_json(jf.at("u"), "jacobian factor u");
            f.v = vector_from_json(jf.at("v"), "jacobian factor v");
            f.gain = value_or<double>(jf, "gain", 1.0);
            if (!(f.gain > 0.0)) throw ValidationError("jacobian factor gain must be positive");
            s.deformation.factors.push_back(std::move(f));
        }
    }
    if (jd.contains("anchor_displacement"))
        s.deformation.anchor_displacement = vector_from_json(jd["anchor_displacement"], "anchor_displacement");
    s.deformation.remap_triggers = value_or<bool>(jd, "remap_triggers", true);
    if (!(s.deformation.locality_radius > 0.0)) throw ValidationError("locality_radius must be positive");
    for (const auto& f : s.deformation.factors) {
        require_dim(f.u, d, "jacobian factor u");
        require_dim(f.v, d, "jacobian factor v");
    }
    require_dim(s.deformation.anchor_displacement, d, "anchor_displacement");

    const nlohmann::json jb = j.value("benign", nlohmann::json::object());
    s.benign.rotation_angle = value_or<double>(jb, "rotation_angle", 0.0);
    s.benign.jitter = value_or<double>(jb, "jitter", 0.0);
    s.benign.seed = value_or<std::uint64_t>(jb, "seed", mix_seed(base_seed, 2));
    if (s.benign.jitter < 0.0) throw ValidationError("benign jitter must be non-negative");
    return s;
}

std::string scenario_json(const Scenario& s) {
    json j;
    j["d"] = s.manifold.d;
    j["seed"] = s.manifold.seed;
    j["clusters"] = json::array();
    for (const auto& c : s.manifold.clusters) {
        json jc;
        jc["label"] = c.label;
        jc["group"] = to_string(c.group);
        jc["center"] = vector_to_json(c.center);
        jc["spread"] = c.spread;
        jc["count"] = c.count;
        jc["neighbors_per_anchor"] = c.neighbors_per_anchor;
        jc["neighbor_step"] = c.neighbor_step;
        j["clusters"].push_back(std::move(jc));
    }
    json jd;
    jd["target_center"] = vector_to_json(s.deformation.target_center);
    jd["anchor_displacement"] = vector_to_json(s.deformation.anchor_displacement);
    jd["locality_radius"] = s.deformation.locality_radius;
    jd["jacobian_rank"] = s.deformation.rank();
    jd["jacobian_factors"] = json::array();
    for (const auto& f : s.deformation.factors)
        jd["jacobian_factors"].push_back({{"u", vector_to_json(f.u)}, {"v", vector_to_json(f.v)}, {"gain", f.gain}});
    jd["seed"] = s.deformation.seed;
    jd["remap_triggers"] = s.deformation.remap_triggers;
    j["deformation"] = std::move(jd);
    j["benign"] = {{"rotation_angle", s.benign.rotation_angle}, {"jitter", s.benign.jitter}, {"seed", s.benign.seed}};
    return j.dump(2);
}

Diagnostics run_diagnostics(const PairedEmbeddings& pair, std::size_t k, double epsilon, std::size_t threads) {
    Diagnostics dx{drift(pair), sds(pair), local_sensitivity(pair, epsilon, threads), evr_report(pair, std::max<std::size_t>(k, 1), threads),
                   {}};
    dx.aligned_sds = sds(procrustes_align(pair, Group::control).aligned);
    return dx;
}

bool OracleReport::all_passed() const {
    return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const OracleCheck& c) { return c.passed; });
}

OracleReport oracle_report(const Scenario& scenario, const Diagnostics& dx) {
    OracleReport rep;
    const double max_norm = dx.drift.norms.empty() ? 0.0 : *std::max_element(dx.drift.norms.begin(), dx.drift.norms.end());
    rep.deformation_detected = max_norm > kNoDeformationTolerance;
    if (!rep.deformation_detected) rep.notes.push_back("no deformation detected");

    const auto rank = scenario.deformation.rank();
    const auto d = scenario.manifold.d;
    if (rank > 0 && 2 * rank > d)
        rep.notes.push_back("non-low-rank regime: planted rank " + std::to_string(rank) + " of d=" + std::to_string(d));

    auto skipped = [&](OracleCheck c) {
        c.passed = false;
        c.measured = std::numeric_limits<double>::quiet_NaN();
        c.detail = "not evaluated: no deformation detected";
        return c;
    };

    // (a) sensitivity right shift
    {
        OracleCheck c{"sensitivity_ratio", false, 0.0, ">=", scenario.deformation.max_gain() / 2.0, ""};
        if (!rep.deformation_detected) {
            rep.checks.push_back(skipped(c));
        } else {
            std::vector<double> gt, gc;
            for (const auto& a : dx.sensitivity.per_anchor) {
                if (a.group == Group::target_relevant) gt.push_back(a.g);
                if (a.group == Group::control) gc.push_back(a.g);
            }
            const double mt = median_of(gt);
            const double mc = median_of(gc);
            c.measured = mc > 0.0 ? mt / mc : (mt > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
            c.passed = !gt.empty() && !gc.empty() && c.measured >= c.threshold;
            c.detail = "median g target=" + short_num(mt) + ", control=" + short_num(mc);
            rep.checks.push_back(c);
        }
    }
    // (b) low-rank concentration
    {
        OracleCheck c{"evr_margin", false, 0.0, ">=", kOracleEvrMargin, ""};
        if (!rep.deformation_detected) {
            rep.checks.push_back(skipped(c));
        } else {
            std::vector<double> et, ec;
            for (const auto& a : dx.evr.per_anchor) {
                if (!a.evr) continue;
                if (a.group == Group::target_relevant) et.push_back(*a.evr);
                if (a.group == Group::control) ec.push_back(*a.evr);
            }
            const double mt = median_of(et);
            const double mc = median_of(ec);
            c.measured = mt - mc;
            c.passed = !et.empty() && !ec.empty() && c.measured >= c.threshold;
            c.detail = "median EVR@" + std::to_string(dx.evr.k) + " target=" + short_num(mt) +
                       ", control=" + short_num(mc);
            rep.checks.push_back(c);
            if (!c.passed) rep.notes.push_back("EVR shows no low-rank concentration in target neighborhoods (non-low-rank regime)");
        }
    }
    // (c) SDS decile ordering
    {
        OracleCheck c{"sds_decile_ordering", false, 0.0, ">=", 5.0, ""};
        if (!rep.deformation_detected) {
            rep.checks.push_back(skipped(c));
        } else {
            const auto summary = group_summary(dx.sds);
            const auto count = summary.upper_dominance_count();
            c.measured = count ? static_cast<double>(*count) : 0.0;
            c.passed = count && *count == 5;
            c.detail = count ? "deciles 0.5-0.9 with trigger >= target >= control" : "requires all three groups";
            rep.checks.push_back(c);
        }
    }
    // (d) drift survives control alignment
    {
        OracleCheck c{"procrustes_control_over_target", false, 0.0, "<=", kOracleProcrustesRatio, ""};
        if (!rep.deformation_detected) {
            rep.checks.push_back(skipped(c));
        } else {
            const double mt = median_of(values_for(dx.aligned_sds.per_prompt, dx.aligned_sds.groups, Group::target_relevant));
            const double mc = median_of(values_for(dx.aligned_sds.per_prompt, dx.aligned_sds.groups, Group::control));
            c.measured = mt > 0.0 ? mc / mt : std::numeric_limits<double>::infinity();
            c.passed = std::isfinite(c.measured) && c.measured <= c.threshold;
            c.detail = "aligned median SDS target=" + short_num(mt) + ", control=" + short_num(mc);
            rep.checks.push_back(c);
        }
    }
    return rep;
}

}  // namespace semad
