#include <doctest.h>

#include <cmath>
#include <numbers>

#include "semad/errors.hpp"
#include "semad/geometry_probe.hpp"
#include "support.hpp"

using namespace semad;

namespace {

using Mat = Eigen::MatrixXd;

// Row 0 is the anchor "a", rows 1.. its neighbors.
std::vector<PromptRecord> hood_records(std::size_t m, Group g = Group::target_relevant, const std::string& a = "a") {
    std::vector<PromptRecord> recs{test::record(a, g, Role::anchor)};
    for (std::size_t i = 0; i < m; ++i) recs.push_back(test::record(a + "-n" + std::to_string(i), g, Role::neighbor, a));
    return recs;
}

EmbeddingSet set_of(const Mat& m, std::vector<PromptRecord> recs) {
    std::vector<float> data;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(static_cast<float>(m(i, j)));
    return EmbeddingSet(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), std::move(data),
                        std::move(recs));
}

Mat gaussian(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    Rng rng(seed);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

Mat orthogonal(Eigen::Index d, std::uint64_t seed) {
    Eigen::HouseholderQR<Mat> qr(gaussian(d, d, seed));
    return qr.householderQ() * Mat::Identity(d, d);
}

// EVR from the eigenvalues of R^T R, independent of the SVD path.
double gram_evr(const Mat& r, std::size_t k) {
    Eigen::SelfAdjointEigenSolver<Mat> es(r.transpose() * r);
    Eigen::VectorXd ev = es.eigenvalues().reverse();
    return ev.head(static_cast<Eigen::Index>(k)).sum() / ev.sum();
}

}  // namespace

TEST_CASE("neighborhoods follow the manifest") {
    auto recs = hood_records(3);
    auto more = hood_records(2, Group::control, "b");
    recs.insert(recs.end(), more.begin(), more.end());
    recs.push_back(test::record("s"));
    const auto set = set_of(gaussian(8, 3, 1), recs);
    const auto h = neighborhoods(set);
    REQUIRE(h.size() == 2);
    CHECK(h[0].anchor == 0);
    CHECK(h[0].neighbors == std::vector<std::size_t>{1, 2, 3});
    CHECK(h[1].anchor == 4);
    CHECK(h[1].neighbors == std::vector<std::size_t>{5, 6});
}

TEST_CASE("sensitivity recovers the gain of a linear drift") {
    const Eigen::Index d = 12;
    const Mat a = gaussian(d, d, 7);
    Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd v1 = svd.matrixV().col(0);
    const double sigma = svd.singularValues()(0);

    const std::size_t m = 16;
    Mat clean(static_cast<Eigen::Index>(m + 1), d);
    clean.row(0) = gaussian(1, d, 8);
    Rng rng(9);
    for (std::size_t i = 1; i <= m; ++i)
        clean.row(static_cast<Eigen::Index>(i)) = clean.row(0) + (0.5 + 2.0 * rng.uniform()) * v1.transpose();
    // round once so Δf is computed from the stored clean rows
    const auto cs = set_of(clean, hood_records(m));
    const Mat stored = cs.to_matrix();
    const Mat modified = stored + stored * a.transpose();
    const auto p = pair(cs, set_of(modified, hood_records(m)));

    const auto rep = local_sensitivity(p, 1e-12);
    REQUIRE(rep.per_anchor.size() == 1);
    CHECK(std::abs(rep.per_anchor[0].g - sigma) <= 1e-4);
    CHECK(rep.per_anchor[0].neighbor_count == m);
}

TEST_CASE("constant drift gives zero sensitivity") {
    Mat clean(5, 4);
    clean << 1, 2, 3, 4, 0.5, 2, 3, 4, 1, 2.25, 3, 4, 1, 2, 3.5, 4, 1, 2, 3, 4.75;
    Mat modified = clean;
    modified.rowwise() += Eigen::RowVector4d(0.5, -1.0, 0.25, 2.0);
    const auto p = pair(set_of(clean, hood_records(4)), set_of(modified, hood_records(4)));
    CHECK(local_sensitivity(p).per_anchor[0].g == 0.0);

    // g ignores a shift applied to every modified row of the neighborhood
    Mat warped = clean + 0.3 * gaussian(5, 4, 3);
    Mat shifted = warped;
    shifted.rowwise() += Eigen::RowVector4d(0.125, 0.25, -0.5, 1.0);
    const auto g1 = local_sensitivity(pair(set_of(clean, hood_records(4)), set_of(warped, hood_records(4)))).per_anchor[0].g;
    const auto g2 = local_sensitivity(pair(set_of(clean, hood_records(4)), set_of(shifted, hood_records(4)))).per_anchor[0].g;
    CHECK(std::abs(g1 - g2) <= 1e-5 * g1);
}

TEST_CASE("sensitivity errors") {
    const auto set = set_of(gaussian(3, 2, 1), hood_records(2));
    const auto p = pair(set, set);
    CHECK_THROWS_AS(local_sensitivity(p, 0.0), ValidationError);
    CHECK_THROWS_AS(local_sensitivity(p, -1.0), ValidationError);
    std::vector<PromptRecord> lonely{test::record("a", Group::control, Role::anchor), test::record("x")};
    const auto s2 = set_of(gaussian(2, 2, 1), lonely);
    CHECK_THROWS_AS(local_sensitivity(pair(s2, s2)), ValidationError);
    const auto s3 = set_of(gaussian(2, 2, 1), {test::record("x"), test::record("y")});
    CHECK_THROWS_AS(local_sensitivity(pair(s3, s3)), ValidationError);
}

TEST_CASE("residual matrix") {
    Mat clean = Mat::Zero(3, 2);
    Mat modified(3, 2);
    modified << 0, 0, 1, 0, 0, 1;
    const auto p = pair(set_of(clean, hood_records(2)), set_of(modified, hood_records(2)));
    const Mat r = residual_matrix(p, "a");
    CHECK(r == Mat::Identity(2, 2));
    CHECK_THROWS_AS(residual_matrix(p, "ghost"), ValidationError);
    CHECK_THROWS_AS(residual_matrix(p, "a-n0"), ValidationError);
    const auto one = set_of(gaussian(2, 2, 1), hood_records(1));
    CHECK_THROWS_AS(residual_matrix(pair(one, one), "a"), ValidationError);

    const auto same = set_of(gaussian(4, 3, 2), hood_records(3));
    CHECK(residual_matrix(pair(same, same), "a").squaredNorm() == 0.0);

    const auto c = set_of(gaussian(9, 5, 3), hood_records(8));
    const auto m = set_of(gaussian(9, 5, 4), hood_records(8));
    const Mat rr = residual_matrix(pair(c, m), "a");
    for (Eigen::Index i = 0; i < 8; ++i)
        for (Eigen::Index j = 0; j < 5; ++j) {
            const double oracle = (static_cast<double>(m.row(static_cast<std::size_t>(i) + 1)[static_cast<std::size_t>(j)]) -
                                   c.row(static_cast<std::size_t>(i) + 1)[static_cast<std::size_t>(j)]) -
                                  (static_cast<double>(m.row(0)[static_cast<std::size_t>(j)]) - c.row(0)[static_cast<std::size_t>(j)]);
            CHECK(rr(i, j) == oracle);
        }
}

TEST_CASE("evr exact cases") {
    Mat rank1 = Eigen::VectorXd::LinSpaced(7, -3, 4) * gaussian(1, 9, 1);
    CHECK(std::abs(evr(rank1, 1).evr - 1.0) <= 1e-9);
    Mat diag = Mat::Zero(4, 6);
    diag(0, 0) = 3;
    diag(1, 1) = 4;
    const auto e = evr(diag, 1);
    CHECK(std::abs(e.evr - 0.64) <= 1e-9);
    CHECK(e.singular_values[0] == doctest::Approx(4.0));
    CHECK(e.singular_values[1] == doctest::Approx(3.0));
    CHECK(std::abs(evr(diag, 2).evr - 1.0) <= 1e-12);
    CHECK_THROWS_AS(evr(Mat::Zero(3, 3), 1), ValidationError);
    CHECK_THROWS_AS(evr(diag, 0), ValidationError);
}

TEST_CASE("evr properties on random matrices") {
    Rng rng(2);
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto rows = static_cast<Eigen::Index>(2 + rng.index(20));
        const auto cols = static_cast<Eigen::Index>(1 + rng.index(20));
        const Mat r = gaussian(rows, cols, 100 + s);
        const auto full = static_cast<std::size_t>(std::min(rows, cols));
        double prev = 0.0;
        for (std::size_t k = 1; k <= full; ++k) {
            const double v = evr(r, k).evr;
            CHECK(v >= prev - 1e-15);
            CHECK(v <= 1.0 + 1e-15);
            CHECK(std::abs(v - gram_evr(r, k)) <= 1e-9);
            prev = v;
        }
        CHECK(std::abs(evr(r, full).evr - 1.0) <= 1e-12);
        // invariance to row permutation and to orthogonal right-multiplication
        const Mat q = orthogonal(cols, 200 + s);
        Mat flipped = r.colwise().reverse();
        CHECK(std::abs(evr(r * q, 1).evr - evr(r, 1).evr) <= 1e-9);
        CHECK(std::abs(evr(flipped, 1).evr - evr(r, 1).evr) <= 1e-12);
    }
}

TEST_CASE("evr of isotropic rows stays inside the finite-sample band") {
    // E[EVR@2] is 2/d only as M -> inf; at M=256, d=64 the top eigenvalues of a
    // sample covariance inflate toward (1 + sqrt(d/M))^2.
    const Eigen::Index d = 64, m = 256;
    const double lo = 2.0 / 64.0;
    const double hi = 2.0 * std::pow(1.0 + std::sqrt(64.0 / 256.0), 2) / 64.0;
    double mean = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        const Mat r = gaussian(m, d, 5000 + s);
        const double v = evr(r, 2).evr;
        CHECK(std::abs(v - gram_evr(r, 2)) <= 1e-9);
        CHECK(v > lo);
        CHECK(v < hi);
        mean += v / 100.0;
    }
    MESSAGE("mean EVR@2 over 100 isotropic draws: " << mean);
}

TEST_CASE("evr report skips all-zero residuals") {
    const auto c = set_of(gaussian(4, 3, 1), hood_records(3));
    const auto rep = evr_report(pair(c, c), 2);
    REQUIRE(rep.per_anchor.size() == 1);
    CHECK_FALSE(rep.per_anchor[0].evr);
}

TEST_CASE("pca on a line") {
    Mat pts = Eigen::VectorXd::LinSpaced(20, -1, 3) * Eigen::RowVector3d(1, -2, 0.5);
    pts.rowwise() += Eigen::RowVector3d(4, 4, 4);
    const auto p = pca_shared(pts, 2);
    CHECK(p.explained_variance[0] >= 1.0 - 1e-9);
    CHECK(p.explained_variance[0] + p.explained_variance[1] <= 1.0 + 1e-12);
    Eigen::Index arg;
    p.components.col(0).cwiseAbs().maxCoeff(&arg);
    CHECK(p.components(arg, 0) > 0);
    CHECK_THROWS_AS(pca_shared(Mat::Ones(5, 3), 2), ValidationError);
    CHECK_THROWS_AS(pca_shared(gaussian(2, 3, 1), 2), ValidationError);
}

TEST_CASE("pca isotropic cloud in two dimensions") {
    const auto p = pca_shared(gaussian(20000, 2, 3), 2);
    CHECK(std::abs(p.explained_variance[0] - 0.5) < 0.02);
    CHECK(std::abs(p.explained_variance[1] - 0.5) < 0.02);
}

TEST_CASE("pca reconstructs rank-2 data and is row-order invariant") {
    const Mat basis = gaussian(2, 10, 4);
    Mat pts = gaussian(40, 2, 5) * basis;
    pts.rowwise() += gaussian(1, 10, 6).row(0);
    const auto p = pca_shared(pts, 2);
    const Mat recon = (p.projected * p.components.transpose()).rowwise() + p.mean.transpose();
    CHECK((recon - pts).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((p.components.transpose() * p.components - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-6);

    const Mat rev = pts.colwise().reverse();
    const auto q = pca_shared(rev, 2);
    CHECK((q.components - p.components).cwiseAbs().maxCoeff() <= 1e-9);
}

namespace {

std::vector<PromptRecord> layer_records(std::size_t n, std::uint32_t layer) {
    std::vector<PromptRecord> recs;
    for (std::size_t i = 0; i < n; ++i) {
        auto r = test::record("p" + std::to_string(i), i % 4 == 0 ? Group::control : Group::target_relevant);
        r.layer = layer;
        recs.push_back(std::move(r));
    }
    return recs;
}

LayerPair layer_pair(std::uint32_t layer, const Mat& clean, const Mat& dh) {
    const auto n = static_cast<std::size_t>(clean.rows());
    return {layer, pair(set_of(clean, layer_records(n, layer)), set_of(clean + dh, layer_records(n, layer)))};
}

}  // namespace

TEST_CASE("planted rank-1 perturbation at every layer") {
    const Eigen::Index n = 60, d = 32;
    const Eigen::VectorXd u = gaussian(d, 1, 1).col(0).normalized();
    const Eigen::VectorXd amp = gaussian(n, 1, 2).col(0);
    std::vector<LayerPair> layers;
    for (std::uint32_t l = 0; l < 6; ++l) layers.push_back(layer_pair(l, gaussian(n, d, 10 + l), amp * u.transpose()));
    const auto s = layerwise_pca(layers, 3);
    REQUIRE(s.layers.size() == 6);
    for (const auto& l : s.layers) {
        CHECK_FALSE(l.degenerate);
        CHECK(l.rows == 45);
        CHECK(l.variance_shares[0] >= 0.99);
    }
    REQUIRE(s.consistency);
    CHECK(*s.consistency >= 0.99);
}

TEST_CASE("independent isotropic perturbations give a random-level consistency") {
    const Eigen::Index n = 400, d = 48;
    std::vector<LayerPair> layers;
    for (std::uint32_t l = 0; l < 40; ++l) layers.push_back(layer_pair(l, gaussian(n, d, 100 + l), gaussian(n, d, 200 + l)));
    const auto s = layerwise_pca(layers, 1);
    REQUIRE(s.consistency);
    // E|<a, b>| for independent uniform unit vectors is about sqrt(2 / (pi d)).
    const double expected = std::sqrt(2.0 / (std::numbers::pi * static_cast<double>(d)));
    CHECK(std::abs(*s.consistency - expected) < 0.06);
}

TEST_CASE("layer-wise edge cases") {
    const Eigen::Index n = 12, d = 4;
    std::vector<LayerPair> layers;
    layers.push_back(layer_pair(2, gaussian(n, d, 1), gaussian(n, d, 2)));
    layers.push_back(layer_pair(0, gaussian(n, d, 3), Mat::Zero(n, d)));
    const auto s = layerwise_pca(layers);
    CHECK(s.layers[0].layer == 0);
    CHECK(s.layers[0].degenerate);
    CHECK_FALSE(s.layers[1].degenerate);
    CHECK_FALSE(s.consistency);

    layers.push_back(layer_pair(2, gaussian(n, d, 4), gaussian(n, d, 5)));
    CHECK_THROWS_AS(layerwise_pca(layers), ValidationError);

    std::vector<LayerPair> bad;
    bad.push_back(layer_pair(0, gaussian(n, d, 1), gaussian(n, d, 2)));
    bad.push_back(layer_pair(1, gaussian(n + 1, d, 1), gaussian(n + 1, d, 2)));
    CHECK_THROWS_AS(layerwise_pca(bad), ValidationError);
}

TEST_CASE("procrustes recovers a rotation") {
    const Eigen::Index n = 50, d = 8;
    const Mat clean = gaussian(n, d, 1);
    const Mat q = orthogonal(d, 2);
    std::vector<PromptRecord> recs;
    for (Eigen::Index i = 0; i < n; ++i) recs.push_back(test::record("r" + std::to_string(i), Group::control));
    const auto p = pair(set_of(clean, recs), set_of(clean * q, recs));
    const auto res = procrustes_align(p);
    const auto& r = res.alignment.rotation;
    CHECK((r.transpose() * r - Mat::Identity(d, d)).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((res.aligned.modified().to_matrix() - res.aligned.clean().to_matrix()).norm() <= 1e-4);
    CHECK_FALSE(res.alignment.low_confidence);
    CHECK(res.alignment.fit_rows == 50);

    const auto again = procrustes_align(res.aligned);
    CHECK(std::abs(again.alignment.fit_residual - res.alignment.fit_residual) < 1e-6);

    const auto ident = procrustes_align(pair(set_of(clean, recs), set_of(clean, recs)));
    CHECK((ident.alignment.rotation - Mat::Identity(d, d)).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK_THROWS_AS(procrustes_align(p, Group::trigger), ValidationError);

    const auto scaled = procrustes_align(pair(set_of(clean, recs), set_of(2.0 * clean * q, recs)), Group::control, true);
    CHECK(scaled.alignment.scale == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("procrustes flags thin fit groups") {
    const Eigen::Index d = 40;
    std::vector<PromptRecord> recs;
    for (int i = 0; i < 12; ++i) recs.push_back(test::record("r" + std::to_string(i), i < 9 ? Group::control : Group::target_relevant));
    const Mat c = gaussian(12, d, 1);
    const auto res = procrustes_align(pair(set_of(c, recs), set_of(c, recs)));
    CHECK(res.alignment.low_confidence);
}

TEST_CASE("parallel sensitivity and evr match the serial result") {
    auto recs = hood_records(6, Group::target_relevant, "a");
    for (int k = 0; k < 20; ++k) {
        auto more = hood_records(6, k % 2 ? Group::control : Group::target_relevant, "b" + std::to_string(k));
        recs.insert(recs.end(), more.begin(), more.end());
    }
    const auto n = static_cast<Eigen::Index>(recs.size());
    const auto c = set_of(gaussian(n, 16, 1), recs);
    const auto m = set_of(gaussian(n, 16, 2), recs);
    const auto p = pair(c, m);
    const auto s1 = local_sensitivity(p, kDefaultEpsilon, 1);
    const auto s8 = local_sensitivity(p, kDefaultEpsilon, 8);
    const auto e1 = evr_report(p, 2, 1);
    const auto e8 = evr_report(p, 2, 8);
    REQUIRE(s1.per_anchor.size() == s8.per_anchor.size());
    for (std::size_t i = 0; i < s1.per_anchor.size(); ++i) {
        CHECK(s1.per_anchor[i].anchor_id == s8.per_anchor[i].anchor_id);
        CHECK(s1.per_anchor[i].g == s8.per_anchor[i].g);
        CHECK(e1.per_anchor[i].evr == e8.per_anchor[i].evr);
    }
}
