#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "semad/drift_metrics.hpp"
#include "semad/errors.hpp"
#include "semad/geometry_probe.hpp"
#include "semad/rng.hpp"
#include "semad/synth_deform.hpp"

using namespace semad;

namespace {

Eigen::VectorXd axis(std::size_t d, std::size_t k, double s) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    v(static_cast<Eigen::Index>(k)) = s;
    return v;
}

bool same_bytes(const EmbeddingSet& a, const EmbeddingSet& b) {
    return a.rows() == b.rows() && a.dim() == b.dim() &&
           std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(float)) == 0 &&
           a.records() == b.records();
}

const OracleCheck& check_named(const OracleReport& r, const std::string& name) {
    for (const auto& c : r.checks)
        if (c.name == name) return c;
    throw std::runtime_error("no check " + name);
}

}  // namespace

TEST_CASE("clean generation") {
    ManifoldConfig cfg{4, {{"c", axis(4, 1, 3.0), 1e-12, 50, Group::control, 0, 0.1}}, 1};
    const auto set = generate_clean(cfg);
    for (std::size_t i = 0; i < set.rows(); ++i)
        CHECK((set.row_vector(i) - axis(4, 1, 3.0)).cwiseAbs().maxCoeff() <= 1e-6);

    ManifoldConfig two{8,
                       {{"a", axis(8, 0, 0.0), 0.1, 500, Group::control, 0, 0.1},
                        {"b", axis(8, 0, 1.0), 0.1, 500, Group::target_relevant, 0, 0.1}},
                       7};
    const auto s2 = generate_clean(two);
    std::size_t right = 0;
    for (std::size_t i = 0; i < s2.rows(); ++i) {
        const auto x = s2.row_vector(i);
        const bool near_b = (x - axis(8, 0, 1.0)).norm() < x.norm();
        right += near_b == (s2.record(i).group == Group::target_relevant);
    }
    CHECK(right == 1000);

    CHECK(same_bytes(generate_clean(two), generate_clean(two)));
    two.seed = 8;
    CHECK_FALSE(same_bytes(generate_clean(two), s2));

    ManifoldConfig bad{4, {{"c", axis(4, 0, 1.0), 0.0, 5, Group::control, 0, 0.1}}, 1};
    CHECK_THROWS_AS(generate_clean(bad), ValidationError);
    bad.clusters[0].spread = 0.1;
    bad.clusters[0].count = 0;
    CHECK_THROWS_AS(generate_clean(bad), ValidationError);
}

TEST_CASE("neighborhood layout of generated clusters") {
    ManifoldConfig cfg{6, {{"t", axis(6, 0, 1.0), 0.1, 3, Group::target_relevant, 4, 0.05}}, 2};
    const auto set = generate_clean(cfg);
    CHECK(set.rows() == 15);
    CHECK(set.record(0).id == "t-a000");
    CHECK(set.record(1).id == "t-a000-n00");
    CHECK(set.record(1).anchor_id == std::optional<std::string>("t-a000"));
    CHECK(neighborhoods(set).size() == 3);
}

TEST_CASE("deformation at the anchor and in the far field") {
    const std::size_t d = 4;
    DeformationConfig cfg;
    cfg.target_center = axis(d, 0, 2.0);
    cfg.anchor_displacement = Eigen::Vector4d(0.5, -0.25, 0.125, 0.0);
    cfg.factors.push_back({axis(d, 1, 1.0), axis(d, 2, 1.0), 5.0});
    cfg.locality_radius = 1.0;
    cfg.remap_triggers = false;
    std::vector<float> data{2, 0, 0, 0, 90, 0, 0, 0, 2, 0, 1, 0};
    EmbeddingSet clean(3, d, data,
                       {{"x0", "p", Group::target_relevant, Role::standalone, {}, {}},
                        {"far", "p", Group::control, Role::standalone, {}, {}},
                        {"near", "p", Group::target_relevant, Role::standalone, {}, {}}});
    const auto m = apply_deformation(clean, cfg);
    const auto dr = drift(pair(clean, m));
    CHECK(dr.deltas.row(0).transpose() == cfg.anchor_displacement);
    CHECK(dr.norms[1] == 0.0);
    CHECK(std::memcmp(m.row(1).data(), clean.row(1).data(), d * sizeof(float)) == 0);
    // near: w = exp(-1/2), linear term 5 * e1 * <e2, (0,0,1,0)>
    const double w = std::exp(-0.5);
    CHECK(dr.deltas(2, 1) == doctest::Approx(w * (-0.25 + 5.0)).epsilon(1e-6));

    cfg.factors[0].u = axis(3, 0, 1.0);
    CHECK_THROWS_AS(apply_deformation(clean, cfg), ValidationError);
}

TEST_CASE("anchor displacement and locality properties on the default scenario") {
    auto s = default_scenario();
    s.benign = {};
    const auto p = simulate(s);
    const auto rep = sds(p);
    const auto f = drift(p);
    std::size_t far_rows = 0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        if (p.record(i).group == Group::control) {
            const double w = locality_weight(p.clean().row_vector(i), s.deformation);
            if (w == 0.0) {
                ++far_rows;
                CHECK(rep.per_prompt[i] == 0.0);
            }
        }
        if (p.record(i).group == Group::trigger) {
            const Eigen::VectorXd img = s.deformation.target_center + s.deformation.anchor_displacement;
            CHECK((p.modified().row_vector(i) - img).cwiseAbs().maxCoeff() <= 1e-6);
        }
    }
    CHECK(far_rows > 0);

    DeformationConfig at = s.deformation;
    EmbeddingSet x0(1, s.manifold.d,
                    std::vector<float>(s.deformation.target_center.data(),
                                       s.deformation.target_center.data() + s.deformation.target_center.size()),
                    {{"x0", "p", Group::target_relevant, Role::standalone, {}, {}}});
    const auto moved = apply_deformation(x0, at);
    CHECK(std::abs(drift(pair(x0, moved)).norms[0] - s.deformation.anchor_displacement.norm()) <= 1e-6);
}

TEST_CASE("residual rank equals the planted rank when the weight is constant") {
    auto s = default_scenario(3);
    s.benign = {};
    s.deformation.locality_radius = 1e9;
    s.deformation.remap_triggers = false;
    const auto p = simulate(s);
    const auto hoods = neighborhoods(p.clean());
    for (const auto& h : hoods) {
        const auto r = residual_matrix(p, h);
        const auto e = evr(r, 2);
        const double s1 = e.singular_values[0];
        CHECK(e.singular_values[2] <= 1e-5 * s1);
        CHECK(e.evr >= 1.0 - 1e-9);
    }
}

TEST_CASE("simulation is deterministic and the scenario JSON round-trips") {
    const auto s = default_scenario();
    const auto a = simulate(s);
    const auto b = simulate(s);
    CHECK(same_bytes(a.clean(), b.clean()));
    CHECK(same_bytes(a.modified(), b.modified()));
    const auto back = parse_scenario(scenario_json(s));
    const auto c = simulate(back);
    CHECK(same_bytes(a.modified(), c.modified()));
    CHECK(scenario_json(back) == scenario_json(s));
}

TEST_CASE("scenario parsing") {
    const auto s = parse_scenario(R"({
      "d": 16, "seed": 5,
      "clusters": [
        {"label": "t", "group": "target_relevant", "center_axis": 0, "center_scale": 4, "count": 3,
         "neighbors_per_anchor": 4, "neighbor_step": 0.1},
        {"label": "c", "group": "control", "center_axis": 1, "center_scale": 4, "count": 3,
         "neighbors_per_anchor": 4}
      ],
      "deformation": {"jacobian_rank": 2, "gain": 3, "locality_radius": 1.0, "anchor_displacement_norm": 0.01},
      "benign": {"rotation_angle": 0.01}
    })");
    CHECK(s.manifold.d == 16);
    CHECK(s.deformation.rank() == 2);
    CHECK(s.deformation.max_gain() == 3.0);
    CHECK(s.deformation.target_center == axis(16, 0, 4.0));
    CHECK(std::abs(s.deformation.anchor_displacement.norm() - 0.01) < 1e-15);
    CHECK(s.benign.seed == mix_seed(5, 2));
    CHECK_THROWS_AS(parse_scenario("{"), ValidationError);
    CHECK_THROWS_AS(parse_scenario(R"({"d": 4})"), ValidationError);
    CHECK_THROWS_AS(parse_scenario(R"({"d": 4, "clusters": [{"label": "a", "center": [1, 2]}]})"), ValidationError);
    CHECK_THROWS_AS(parse_scenario(R"({"d": 2, "clusters": [{"label": "a"}], "deformation": {"target_center": [0, 0], "jacobian_rank": 3}})"),
                    ValidationError);
}

TEST_CASE("benign rotation is orthogonal") {
    const auto q = benign_rotation(10, 0.3, 1);
    CHECK((q.transpose() * q - Eigen::MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(benign_rotation(5, 0.0, 1) == Eigen::MatrixXd::Identity(5, 5));
}

TEST_CASE("default scenario passes every oracle check") {
    const auto s = default_scenario();
    const auto p = simulate(s);
    const auto rep = oracle_report(s, run_diagnostics(p, s.deformation.rank()));
    CHECK(rep.deformation_detected);
    for (const auto& c : rep.checks) {
        INFO(c.name << " measured " << c.measured << " " << c.comparison << " " << c.threshold);
        CHECK(c.passed);
    }
    CHECK(rep.all_passed());
    CHECK(check_named(rep, "sensitivity_ratio").measured >= 2.5);
}

TEST_CASE("zero deformation is reported as such") {
    const auto s = parse_scenario(R"({
      "d": 16, "seed": 9,
      "clusters": [
        {"label": "trig", "group": "trigger", "center_axis": 2, "center_scale": 10, "count": 10},
        {"label": "t", "group": "target_relevant", "center_axis": 0, "center_scale": 10, "count": 6, "neighbors_per_anchor": 4},
        {"label": "c", "group": "control", "center_axis": 1, "center_scale": 10, "count": 6, "neighbors_per_anchor": 4}
      ],
      "deformation": {"jacobian_rank": 0, "remap_triggers": false}
    })");
    const auto p = simulate(s);
    const auto dx = run_diagnostics(p, 1);
    for (double n : dx.drift.norms) CHECK(n == 0.0);
    for (double v : dx.sds.per_prompt) CHECK(v == 0.0);
    for (const auto& a : dx.sensitivity.per_anchor) CHECK(a.g == 0.0);
    const auto rep = oracle_report(s, dx);
    CHECK_FALSE(rep.deformation_detected);
    CHECK(std::find(rep.notes.begin(), rep.notes.end(), "no deformation detected") != rep.notes.end());
    CHECK_FALSE(rep.all_passed());
}

TEST_CASE("full-rank isotropic deformation fails the concentration check") {
    auto s = default_scenario();
    const std::size_t d = 8;
    s.manifold.d = d;
    for (auto& c : s.manifold.clusters) c.center = c.center.head(d).eval();
    s.deformation = make_low_rank_deformation(d, d, 5.0, 1.5, s.manifold.clusters[1].center, 0.05, 11);
    s.benign = {0.05, 0.002, 12};
    const auto p = simulate(s);
    const auto rep = oracle_report(s, run_diagnostics(p, s.deformation.rank()));
    CHECK_FALSE(check_named(rep, "evr_margin").passed);
    bool noted = false;
    for (const auto& n : rep.notes) noted = noted || n.find("non-low-rank") != std::string::npos;
    CHECK(noted);
}
