#include "semad/stats_engine.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include "semad/errors.hpp"

namespace semad {

namespace {

std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string_view strip(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

double parse_double(std::string_view s, std::size_t line_no, const char* column) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v))
        throw ValidationError("scores line " + std::to_string(line_no) + ": invalid " + column + " '" + std::string(s) + "'");
    return v;
}

double mean(std::span<const double> x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIterations = 10000;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIterations; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw std::runtime_error("incomplete beta continued fraction did not converge");
}

}  // namespace

ScoreTable parse_scores(std::istream& in) {
    ScoreTable table;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view view = line;
        if (line_no == 1 && view.starts_with("\xEF\xBB\xBF")) view.remove_prefix(3);
        if (strip(view).empty()) continue;
        auto cells = split_csv_line(view);
        for (auto& c : cells) c = strip(c);
        if (!header_seen) {
            if (cells.size() != 4 || cells[0] != "id" || cells[1] != "group" || cells[2] != "s_clean" || cells[3] != "s_bd")
                throw ValidationError("scores: header must be 'id,group,s_clean,s_bd'");
            header_seen = true;
            continue;
        }
        if (cells.size() != 4)
            throw ValidationError("scores line " + std::to_string(line_no) + ": expected 4 columns, found " +
                                  std::to_string(cells.size()));
        if (cells[0].empty()) throw ValidationError("scores line " + std::to_string(line_no) + ": empty id");
        if (cells[2].empty() || cells[3].empty()) {
            ++table.dropped;
            continue;
        }
        ScoreRow row;
        row.id = std::string(cells[0]);
        row.group = parse_group(cells[1]);
        row.s_clean = parse_double(cells[2], line_no, "s_clean");
        row.s_bd = parse_double(cells[3], line_no, "s_bd");
        table.rows.push_back(std::move(row));
    }
    if (!header_seen) throw ValidationError("scores: missing header");
    return table;
}

ScoreTable read_scores(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scores '" + path.string() + "'");
    return parse_scores(in);
}

DeltaSplit deltas(const ScoreTable& table) {
    if (table.rows.empty()) throw ValidationError("score table is empty");
    DeltaSplit out;
    out.all.reserve(table.rows.size());
    for (const auto& r : table.rows) {
        const double ds = r.s_bd - r.s_clean;
        out.all.push_back(ds);
        out.by_group[r.group].push_back(ds);
    }
    return out;
}

double sample_variance(std::span<const double> x) {
    if (x.size() < 2) throw ValidationError("variance needs at least 2 samples");
    const double m = mean(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return ss / static_cast<double>(x.size() - 1);
}

WelchResult welch(std::span<const double> relevant, std::span<const double> control) {
    if (relevant.empty()) throw ValidationError("target_relevant group empty");
    if (control.empty()) throw ValidationError("control group empty");
    if (relevant.size() < 2) throw ValidationError("target_relevant group too small (needs >= 2 samples)");
    if (control.size() < 2) throw ValidationError("control group too small (needs >= 2 samples)");

    WelchResult r;
    r.n_relevant = relevant.size();
    r.n_control = control.size();
    r.mean_relevant = mean(relevant);
    r.mean_control = mean(control);
    r.var_relevant = sample_variance(relevant);
    r.var_control = sample_variance(control);
    if (r.var_relevant == 0.0 && r.var_control == 0.0) throw ValidationError("zero variance in both groups");

    const double se_r = r.var_relevant / static_cast<double>(r.n_relevant);
    const double se_c = r.var_control / static_cast<double>(r.n_control);
    const double se = se_r + se_c;
    r.t = (r.mean_relevant - r.mean_control) / std::sqrt(se);
    const double denom = se_r * se_r / static_cast<double>(r.n_relevant - 1) +
                         se_c * se_c / static_cast<double>(r.n_control - 1);
    r.dof = se * se / denom;
    r.p_two_sided = student_t_two_sided(r.t, r.dof);
    return r;
}

double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::domain_error("incomplete beta requires a, b > 0");
    if (!(x >= 0.0 && x <= 1.0)) throw std::domain_error("incomplete beta requires x in [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double dof) {
    if (!(dof > 0.0)) throw std::domain_error("degrees of freedom must be positive");
    if (std::isinf(t)) return 0.0;
    const double x = dof / (dof + t * t);
    return std::clamp(regularized_incomplete_beta(0.5 * dof, 0.5, x), 0.0, 1.0);
}

double student_t_cdf(double t, double dof) {
    const double tail = 0.5 * student_t_two_sided(t, dof);
    return t < 0.0 ? tail : 1.0 - tail;
}

double scott_bandwidth(std::span<const double> samples) {
    if (samples.size() < 2) throw ValidationError("KDE needs at least 2 samples");
    const double var = sample_variance(samples);
    if (!(var > 0.0)) throw ValidationError("degenerate samples: zero variance");
    return std::sqrt(var) * std::pow(static_cast<double>(samples.size()), -0.2);
}

KdeCurve kde(std::span<const double> samples, const GridSpec& spec) {
    KdeCurve curve;
    curve.bandwidth = scott_bandwidth(samples);
    curve.n = samples.size();
    if (spec.points < 2) throw ValidationError("KDE grid needs at least 2 points");
    const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
    const double h = curve.bandwidth;
    const double lo = spec.lo.value_or(*mn - 5.0 * h);
    const double hi = spec.hi.value_or(*mx + 5.0 * h);
    if (!(hi > lo)) throw ValidationError("KDE grid range is empty");

    const double norm = 1.0 / (static_cast<double>(samples.size()) * h * std::sqrt(2.0 * std::numbers::pi));
    curve.grid.resize(spec.points);
    curve.density.resize(spec.points);
    const double step = (hi - lo) / static_cast<double>(spec.points - 1);
    for (std::size_t g = 0; g < spec.points; ++g) {
        const double x = g + 1 == spec.points ? hi : lo + step * static_cast<double>(g);
        double acc = 0.0;
        for (double s : samples) {
            const double z = (x - s) / h;
            acc += std::exp(-0.5 * z * z);
        }
        curve.grid[g] = x;
        curve.density[g] = acc * norm;
    }
    return curve;
}

double trapezoid(const KdeCurve& curve) {
    double total = 0.0;
    for (std::size_t i = 1; i < curve.grid.size(); ++i)
        total += 0.5 * (curve.density[i] + curve.density[i - 1]) * (curve.grid[i] - curve.grid[i - 1]);
    return total;
}

double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw ValidationError("quantile of an empty sample");
    const double h = static_cast<double>(sorted.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = h - static_cast<double>(lo);
    if (frac == 0.0) return sorted[lo];
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

std::vector<double> quantiles(std::span<const double> samples, std::span<const double> probs) {
    if (samples.empty()) throw ValidationError("quantiles of an empty sample");
    for (double p : probs)
        if (!(p > 0.0 && p < 1.0)) throw ValidationError("quantile probe " + std::to_string(p) + " outside (0, 1)");
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> out;
    out.reserve(probs.size());
    for (double p : probs) out.push_back(quantile_sorted(sorted, p));
    return out;
}

}  // namespace semad
