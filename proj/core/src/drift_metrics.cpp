#include "semad/drift_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "semad/errors.hpp"
#include "semad/stats_engine.hpp"

namespace semad {

DriftField drift(const PairedEmbeddings& pair) {
    DriftField f;
    const auto n = pair.rows();
    const auto d = pair.dim();
    f.deltas.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    f.norms.resize(n);
    f.groups.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = pair.clean().row(i);
        const auto m = pair.modified().row(i);
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double delta = static_cast<double>(m[j]) - static_cast<double>(c[j]);
            f.deltas(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = delta;
            ss += delta * delta;
        }
        f.norms[i] = std::sqrt(ss);
        f.groups[i] = pair.record(i).group;
    }
    return f;
}

double drift_score(std::span<const float> clean, std::span<const float> modified) {
    double dot = 0.0;
    double nc = 0.0;
    double nm = 0.0;
    for (std::size_t j = 0; j < clean.size(); ++j) {
        const double a = clean[j];
        const double b = modified[j];
        dot += a * b;
        nc += a * a;
        nm += b * b;
    }
    if (nc == 0.0 || nm == 0.0) throw ValidationError("zero-norm embedding: cosine undefined");
    // sqrt(nc * nc) == nc exactly, so identical rows give SDS == 0.
    const double cosine = std::clamp(dot / std::sqrt(nc * nm), -1.0, 1.0);
    return 1.0 - cosine;
}

SdsReport sds(const PairedEmbeddings& pair) {
    SdsReport r;
    const auto n = pair.rows();
    r.per_prompt.resize(n);
    r.groups.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        try {
            r.per_prompt[i] = drift_score(pair.clean().row(i), pair.modified().row(i));
        } catch (const ValidationError&) {
            throw ValidationError("zero-norm row " + std::to_string(i) + " ('" + pair.record(i).id +
                                  "'): cosine undefined");
        }
        r.groups[i] = pair.record(i).group;
    }
    std::map<Group, std::pair<double, std::size_t>> acc;
    for (std::size_t i = 0; i < n; ++i) {
        auto& [sum, count] = acc[r.groups[i]];
        sum += r.per_prompt[i];
        ++count;
    }
    for (const auto& [g, sc] : acc) r.group_means[g] = sc.first / static_cast<double>(sc.second);
    const auto t = r.group_means.find(Group::target_relevant);
    const auto c = r.group_means.find(Group::control);
    if (t != r.group_means.end() && c != r.group_means.end() && c->second != 0.0)
        r.ratio_target_over_control = t->second / c->second;
    return r;
}

Ecdf::Ecdf(std::span<const double> values) : n_(values.size()) {
    if (values.empty()) throw ValidationError("ECDF of an empty sample");
    std::vector<double> sorted(values.begin(), values.end());
    for (double v : sorted)
        if (!std::isfinite(v)) throw ValidationError("ECDF input contains a non-finite value");
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        if (k + 1 < sorted.size() && sorted[k + 1] == sorted[k]) continue;
        values_.push_back(sorted[k]);
        heights_.push_back(static_cast<double>(k + 1) / static_cast<double>(n_));
    }
}

double Ecdf::operator()(double t) const {
    const auto it = std::upper_bound(values_.begin(), values_.end(), t);
    if (it == values_.begin()) return 0.0;
    return heights_[static_cast<std::size_t>(it - values_.begin()) - 1];
}

Ecdf ecdf(std::span<const double> values) { return Ecdf(values); }

std::optional<std::size_t> GroupSummary::upper_dominance_count() const {
    if (!decile_dominance) return std::nullopt;
    return static_cast<std::size_t>(std::count(decile_dominance->begin() + 4, decile_dominance->end(), true));
}

GroupSummary group_summary(std::span<const double> values, std::span<const Group> groups) {
    if (values.size() != groups.size()) throw ValidationError("values and group labels differ in length");
    GroupSummary s;
    std::map<Group, std::vector<double>> split;
    for (std::size_t i = 0; i < values.size(); ++i) split[groups[i]].push_back(values[i]);
    if (split.empty()) throw ValidationError("group summary needs at least one non-empty group");

    for (Group g : kAllGroups) {
        auto it = split.find(g);
        if (it == split.end()) {
            s.empty_groups.push_back(g);
            s.notes.push_back("group " + std::string(to_string(g)) + " is empty; statistics omitted");
            continue;
        }
        auto& v = it->second;
        std::sort(v.begin(), v.end());
        GroupStats st;
        st.count = v.size();
        st.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        st.median = quantile_sorted(v, 0.5);
        st.max = v.back();
        for (std::size_t k = 0; k < 9; ++k) st.deciles[k] = quantile_sorted(v, static_cast<double>(k + 1) / 10.0);
        s.groups.emplace(g, st);
    }

    const auto t = s.groups.find(Group::target_relevant);
    const auto c = s.groups.find(Group::control);
    if (t == s.groups.end() || c == s.groups.end()) {
        s.notes.push_back("target/control ratio absent: both groups required");
    } else if (c->second.mean == 0.0) {
        s.notes.push_back("target/control ratio absent: control mean is zero");
    } else {
        s.ratio_target_over_control = t->second.mean / c->second.mean;
    }

    const auto tr = s.groups.find(Group::trigger);
    if (tr != s.groups.end() && t != s.groups.end() && c != s.groups.end()) {
        std::array<bool, 9> dom{};
        for (std::size_t k = 0; k < 9; ++k)
            dom[k] = tr->second.deciles[k] >= t->second.deciles[k] && t->second.deciles[k] >= c->second.deciles[k];
        s.decile_dominance = dom;
    }
    return s;
}

GroupSummary group_summary(const DriftField& field) { return group_summary(field.norms, field.groups); }

GroupSummary group_summary(const SdsReport& report) { return group_summary(report.per_prompt, report.groups); }

}  // namespace semad
