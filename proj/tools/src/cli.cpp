#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "digest.hpp"
#include "emit.hpp"
#include "semad/drift_metrics.hpp"
#include "semad/embedding_store.hpp"
#include "semad/errors.hpp"
#include "semad/geometry_probe.hpp"
#include "semad/parallel.hpp"
#include "semad/prompt_suite.hpp"
#include "semad/stats_engine.hpp"
#include "semad/synth_deform.hpp"

#ifndef SEMAD_VERSION
#define SEMAD_VERSION "0.0.0"
#endif

namespace semad::cli {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kDefaultSimulationSeed = 20240611;

// Verdict thresholds for the free-text notes in audit_report.json.
constexpr double kVerdictSdsRatio = 1.5;
constexpr double kVerdictSensitivityRatio = 2.0;
constexpr double kVerdictEvrMargin = 0.2;
constexpr double kVerdictAlpha = 0.05;

Json load_config(const std::string& path) {
    if (path.empty()) return Json::object();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    Json j;
    try {
        j = Json::parse(ss.str());
    } catch (const Json::parse_error& e) {
        throw ValidationError("config '" + path + "': malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw ValidationError("config '" + path + "' must be a JSON object");
    return j;
}

// flags > config file > built-in default
template <class T>
T resolve(const CLI::App& app, const Json& file, const std::string& key, const T& flag, const T& fallback) {
    if (app.count("--" + key) > 0) return flag;
    if (file.contains(key)) {
        try {
            return file.at(key).get<T>();
        } catch (const Json::exception&) {
            throw ValidationError("config key '" + key + "' has the wrong type");
        }
    }
    return fallback;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Json input_entry(const std::string& role, const fs::path& path) {
    Json e = Json::object();
    e["role"] = role;
    e["file"] = path.filename().string();
    e["sha256"] = sha256_file(path);
    return e;
}

Json container_inputs(const fs::path& clean, const fs::path& bd) {
    Json a = Json::array();
    a.push_back(input_entry("clean", clean));
    a.push_back(input_entry("clean_manifest", manifest_path(clean)));
    a.push_back(input_entry("bd", bd));
    a.push_back(input_entry("bd_manifest", manifest_path(bd)));
    return a;
}

Json meta(const std::string& command, const Json& config, const Json& inputs) {
    Json m = Json::object();
    m["tool"] = "semad";
    m["version"] = SEMAD_VERSION;
    m["command"] = command;
    m["config"] = config;
    m["inputs"] = inputs;
    return m;
}

void write_meta(const fs::path& dir, const std::string& command, const Json& config, const Json& inputs) {
    write_json(dir / "meta.json", meta(command, config, inputs));
}

Json optional_number(const std::optional<double>& v) { return v ? number(*v) : Json(nullptr); }

double median(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    return quantile_sorted(v, 0.5);
}

// ---------------------------------------------------------------- emitters

struct FormatConfig {
    OutputFormat format = OutputFormat::csv;
    std::string name = "csv";
};

Json group_summary_json(const GroupSummary& s) {
    Json j = Json::object();
    Json groups = Json::object();
    for (const auto& [g, st] : s.groups) {
        Json jg = Json::object();
        jg["count"] = st.count;
        jg["mean"] = number(st.mean);
        jg["median"] = number(st.median);
        jg["max"] = number(st.max);
        Json dec = Json::array();
        for (double v : st.deciles) dec.push_back(number(v));
        jg["deciles"] = std::move(dec);
        groups[std::string(to_string(g))] = std::move(jg);
    }
    j["groups"] = std::move(groups);
    Json empty = Json::array();
    for (Group g : s.empty_groups) empty.push_back(to_string(g));
    j["empty_groups"] = std::move(empty);
    j["ratio_target_over_control"] = optional_number(s.ratio_target_over_control);
    if (s.decile_dominance) {
        Json dom = Json::array();
        for (bool b : *s.decile_dominance) dom.push_back(b);
        j["decile_dominance"] = std::move(dom);
        j["upper_decile_dominance_count"] = *s.upper_dominance_count();
    } else {
        j["decile_dominance"] = nullptr;
        j["upper_decile_dominance_count"] = nullptr;
    }
    j["notes"] = s.notes;
    return j;
}

Table ecdf_table(std::span<const double> values, std::span<const Group> groups) {
    Table t{{"value", "height", "group"}, {}};
    for (Group g : kAllGroups) {
        std::vector<double> v;
        for (std::size_t i = 0; i < values.size(); ++i)
            if (groups[i] == g) v.push_back(values[i]);
        if (v.empty()) continue;
        const Ecdf e(v);
        for (std::size_t k = 0; k < e.sorted_values().size(); ++k)
            t.rows.push_back({e.sorted_values()[k], e.step_heights()[k], std::string(to_string(g))});
    }
    return t;
}

Json emit_sds(const PairedEmbeddings& pair, const fs::path& dir, const FormatConfig& fc, const Json& inputs,
              const SdsReport* precomputed = nullptr) {
    ensure_dir(dir);
    const SdsReport rep = precomputed ? *precomputed : sds(pair);
    Table t{{"id", "group", "sds"}, {}};
    for (std::size_t i = 0; i < pair.rows(); ++i)
        t.rows.push_back({pair.record(i).id, std::string(to_string(rep.groups[i])), rep.per_prompt[i]});
    write_table(dir, "sds", t, fc.format);
    write_table(dir, "ecdf", ecdf_table(rep.per_prompt, rep.groups), fc.format);
    Json summary = group_summary_json(group_summary(rep));
    write_json(dir / "group_summary.json", summary);
    write_meta(dir, "sds", Json{{"format", fc.name}, {"ratio_excludes", "trigger"}}, inputs);
    return summary;
}

Json emit_drift(const PairedEmbeddings& pair, const fs::path& dir, const FormatConfig& fc, const Json& inputs) {
    ensure_dir(dir);
    const DriftField f = drift(pair);
    Table t{{"id", "group", "norm"}, {}};
    for (std::size_t i = 0; i < pair.rows(); ++i)
        t.rows.push_back({pair.record(i).id, std::string(to_string(f.groups[i])), f.norms[i]});
    write_table(dir, "drift", t, fc.format);
    write_table(dir, "ecdf", ecdf_table(f.norms, f.groups), fc.format);
    Json summary = group_summary_json(group_summary(f));
    write_json(dir / "group_summary.json", summary);
    write_meta(dir, "drift", Json{{"format", fc.name}, {"ratio_excludes", "trigger"}}, inputs);
    return summary;
}

struct PcaConfig {
    std::size_t components = 2;
};

void emit_pca(const PairedEmbeddings& pair, const fs::path& dir, const PcaConfig& cfg, const FormatConfig& fc,
              const Json& inputs) {
    ensure_dir(dir);
    const DriftField f = drift(pair);
    const PcaProjection p = pca_shared(f.deltas, cfg.components);
    const auto c = static_cast<std::size_t>(p.components.cols());
    Table t{{"id", "group"}, {}};
    for (std::size_t k = 0; k < c; ++k) t.columns.push_back("pc" + std::to_string(k + 1));
    for (std::size_t i = 0; i < pair.rows(); ++i) {
        std::vector<Cell> row{pair.record(i).id, std::string(to_string(f.groups[i]))};
        for (std::size_t k = 0; k < c; ++k)
            row.emplace_back(p.projected(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
        t.rows.push_back(std::move(row));
    }
    write_table(dir, "pca", t, fc.format);

    Json j = Json::object();
    j["components"] = c;
    Json ev = Json::array();
    for (double v : p.explained_variance) ev.push_back(number(v));
    j["explained_variance"] = std::move(ev);
    Json basis = Json::array();
    for (std::size_t k = 0; k < c; ++k) {
        Json col = Json::array();
        for (Eigen::Index r = 0; r < p.components.rows(); ++r)
            col.push_back(number(p.components(r, static_cast<Eigen::Index>(k))));
        basis.push_back(std::move(col));
    }
    j["basis"] = std::move(basis);
    Json mean = Json::array();
    for (Eigen::Index r = 0; r < p.mean.size(); ++r) mean.push_back(number(p.mean(r)));
    j["mean"] = std::move(mean);
    write_json(dir / "pca.json", j);
    write_meta(dir, "pca",
               Json{{"components", cfg.components}, {"centering", "mean"}, {"sign_rule", "largest_coordinate_positive"},
                    {"format", fc.name}},
               inputs);
}

struct SensitivityConfig {
    double epsilon = kDefaultEpsilon;
};

Json emit_sensitivity(const PairedEmbeddings& pair, const fs::path& dir, const SensitivityConfig& cfg,
                      const FormatConfig& fc, const Json& inputs, std::size_t threads) {
    ensure_dir(dir);
    const SensitivityReport rep = local_sensitivity(pair, cfg.epsilon, threads);
    Table t{{"anchor_id", "group", "g", "M"}, {}};
    std::map<Group, std::vector<double>> by_group;
    for (const auto& a : rep.per_anchor) {
        t.rows.push_back(
            {a.anchor_id, std::string(to_string(a.group)), a.g, static_cast<std::int64_t>(a.neighbor_count)});
        by_group[a.group].push_back(a.g);
    }
    write_table(dir, "sensitivity", t, fc.format);
    write_meta(dir, "sensitivity", Json{{"epsilon", number(cfg.epsilon)}, {"format", fc.name}}, inputs);

    Json s = Json::object();
    s["epsilon"] = number(cfg.epsilon);
    Json groups = Json::object();
    for (const auto& [g, v] : by_group) {
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        groups[std::string(to_string(g))] = Json{{"anchors", v.size()}, {"median", number(median(v))}, {"mean", number(mean)}};
    }
    s["groups"] = std::move(groups);
    const auto t_it = by_group.find(Group::target_relevant);
    const auto c_it = by_group.find(Group::control);
    std::optional<double> ratio;
    if (t_it != by_group.end() && c_it != by_group.end() && median(c_it->second) > 0.0)
        ratio = median(t_it->second) / median(c_it->second);
    s["median_ratio_target_over_control"] = optional_number(ratio);
    return s;
}

struct EvrConfig {
    std::size_t k = 2;
};

Json emit_evr(const PairedEmbeddings& pair, const fs::path& dir, const EvrConfig& cfg, const FormatConfig& fc,
              const Json& inputs, std::size_t threads) {
    ensure_dir(dir);
    const EvrReport rep = evr_report(pair, cfg.k, threads);
    Table t{{"anchor_id", "group", "k", "evr"}, {}};
    for (std::size_t j = 0; j < cfg.k; ++j) t.columns.push_back("s" + std::to_string(j + 1));
    std::map<Group, std::vector<double>> by_group;
    std::map<Group, std::size_t> undefined;
    for (const auto& a : rep.per_anchor) {
        std::vector<Cell> row{a.anchor_id, std::string(to_string(a.group)), static_cast<std::int64_t>(cfg.k)};
        if (a.evr) {
            row.emplace_back(*a.evr);
            by_group[a.group].push_back(*a.evr);
        } else {
            row.emplace_back(std::monostate{});
            ++undefined[a.group];
        }
        for (std::size_t j = 0; j < cfg.k; ++j) {
            if (j < a.singular_values.size())
                row.emplace_back(a.singular_values[j]);
            else
                row.emplace_back(std::monostate{});
        }
        t.rows.push_back(std::move(row));
    }
    write_table(dir, "evr", t, fc.format);
    write_meta(dir, "evr", Json{{"k", cfg.k}, {"centering", "none"}, {"format", fc.name}}, inputs);

    Json s = Json::object();
    s["k"] = cfg.k;
    Json groups = Json::object();
    for (Group g : kAllGroups) {
        const auto it = by_group.find(g);
        const auto u = undefined.count(g) ? undefined.at(g) : std::size_t{0};
        if (it == by_group.end() && u == 0) continue;
        const std::size_t defined = it == by_group.end() ? 0 : it->second.size();
        groups[std::string(to_string(g))] =
            Json{{"anchors", defined + u},
                 {"undefined", u},
                 {"median", it == by_group.end() ? Json(nullptr) : number(median(it->second))}};
    }
    s["groups"] = std::move(groups);
    const auto t_it = by_group.find(Group::target_relevant);
    const auto c_it = by_group.find(Group::control);
    std::optional<double> margin;
    if (t_it != by_group.end() && c_it != by_group.end()) margin = median(t_it->second) - median(c_it->second);
    s["median_margin_target_minus_control"] = optional_number(margin);
    return s;
}

struct ProcrustesConfig {
    Group fit_group = Group::control;
    bool with_scale = false;
};

Json emit_procrustes(const PairedEmbeddings& pair, const fs::path& dir, const ProcrustesConfig& cfg,
                     const FormatConfig& fc, const Json& inputs) {
    ensure_dir(dir);
    const ProcrustesResult res = procrustes_align(pair, cfg.fit_group, cfg.with_scale);
    const auto& a = res.alignment;
    const auto d = a.rotation.rows();
    const double orth_err =
        (a.rotation.transpose() * a.rotation - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff();
    const SdsReport aligned = sds(res.aligned);
    Table t{{"id", "group", "sds"}, {}};
    for (std::size_t i = 0; i < pair.rows(); ++i)
        t.rows.push_back({pair.record(i).id, std::string(to_string(aligned.groups[i])), aligned.per_prompt[i]});
    write_table(dir, "sds_aligned", t, fc.format);
    const Json aligned_summary = group_summary_json(group_summary(aligned));
    write_json(dir / "group_summary_aligned.json", aligned_summary);

    Json j = Json::object();
    j["transform"] = cfg.with_scale ? "orthogonal_scaled" : "orthogonal";
    j["fit_group"] = to_string(a.fit_group);
    j["fit_rows"] = a.fit_rows;
    j["dimension"] = static_cast<std::size_t>(d);
    j["low_confidence"] = a.low_confidence;
    j["fit_residual"] = number(a.fit_residual);
    j["scale"] = number(a.scale);
    j["orthogonality_error"] = number(orth_err);
    write_json(dir / "procrustes.json", j);
    write_meta(dir, "procrustes",
               Json{{"fit_group", to_string(cfg.fit_group)}, {"with_scale", cfg.with_scale}, {"translation", false},
                    {"format", fc.name}},
               inputs);
    j["aligned_sds"] = aligned_summary;
    return j;
}

Json emit_welch(const ScoreTable& table, const fs::path& dir, const Json& inputs) {
    ensure_dir(dir);
    const DeltaSplit ds = deltas(table);
    static const std::vector<double> kEmpty;
    const auto get = [&](Group g) -> const std::vector<double>& {
        const auto it = ds.by_group.find(g);
        return it == ds.by_group.end() ? kEmpty : it->second;
    };
    const WelchResult w = welch(get(Group::target_relevant), get(Group::control));
    Json j = Json::object();
    j["t"] = number(w.t);
    j["dof"] = number(w.dof);
    j["p_two_sided"] = number(w.p_two_sided);
    j["mean_relevant"] = number(w.mean_relevant);
    j["mean_control"] = number(w.mean_control);
    j["var_relevant"] = number(w.var_relevant);
    j["var_control"] = number(w.var_control);
    j["n_relevant"] = w.n_relevant;
    j["n_control"] = w.n_control;
    j["dropped_rows"] = table.dropped;
    write_json(dir / "welch.json", j);
    write_meta(dir, "welch", Json{{"dof", "welch_satterthwaite"}, {"alternative", "two_sided"}}, inputs);
    return j;
}

struct KdeConfig {
    std::size_t points = 512;
};

void emit_kde(const ScoreTable& table, const fs::path& dir, const KdeConfig& cfg, const FormatConfig& fc,
              const Json& inputs) {
    ensure_dir(dir);
    const DeltaSplit ds = deltas(table);
    Json curves = Json::array();
    Json notes = Json::array();
    const auto one = [&](const std::string& name, const std::vector<double>& samples, const std::string& stem) {
        const KdeCurve c = kde(samples, GridSpec{std::nullopt, std::nullopt, cfg.points});
        Table t{{"x", "density"}, {}};
        for (std::size_t i = 0; i < c.grid.size(); ++i) t.rows.push_back({c.grid[i], c.density[i]});
        write_table(dir, stem, t, fc.format);
        curves.push_back(
            Json{{"name", name}, {"n", c.n}, {"bandwidth", number(c.bandwidth)}, {"integral", number(trapezoid(c))}});
    };
    one("all", ds.all, "kde");
    for (Group g : kAllGroups) {
        const std::string name(to_string(g));
        const auto it = ds.by_group.find(g);
        if (it == ds.by_group.end()) {
            notes.push_back("group " + name + " is empty; no curve");
            continue;
        }
        try {
            one(name, it->second, "kde_" + name);
        } catch (const ValidationError& e) {
            notes.push_back("group " + name + " skipped: " + e.what());
        }
    }
    write_json(dir / "kde_summary.json", Json{{"curves", curves}, {"notes", notes}, {"dropped_rows", table.dropped}});
    write_meta(dir, "kde",
               Json{{"points", cfg.points}, {"bandwidth_rule", "scott: sd * n^(-1/5)"}, {"grid", "[min - 5h, max + 5h]"},
                    {"kernel", "gaussian"}, {"format", fc.name}},
               inputs);
}

struct QuantileConfig {
    std::vector<double> probes{kTailProbes.begin(), kTailProbes.end()};
};

Json emit_quantiles(const ScoreTable& table, const fs::path& dir, const QuantileConfig& cfg, const Json& inputs) {
    ensure_dir(dir);
    const DeltaSplit ds = deltas(table);
    const auto block = [&](const std::vector<double>& samples) {
        const auto q = quantiles(samples, cfg.probes);
        Json arr = Json::array();
        for (std::size_t i = 0; i < q.size(); ++i) arr.push_back(Json{{"p", number(cfg.probes[i])}, {"value", number(q[i])}});
        return Json{{"n", samples.size()}, {"quantiles", arr}};
    };
    Json groups = Json::object();
    groups["all"] = block(ds.all);
    for (Group g : kAllGroups) {
        const auto it = ds.by_group.find(g);
        if (it != ds.by_group.end()) groups[std::string(to_string(g))] = block(it->second);
    }
    Json probes = Json::array();
    for (double p : cfg.probes) probes.push_back(number(p));
    Json j{{"probes", probes}, {"groups", groups}, {"dropped_rows", table.dropped}};
    write_json(dir / "quantiles.json", j);
    write_meta(dir, "quantiles", Json{{"probes", probes}, {"interpolation", "linear (type 7)"}}, inputs);
    return j;
}

Json oracle_json(const OracleReport& rep) {
    Json checks = Json::array();
    for (const auto& c : rep.checks)
        checks.push_back(Json{{"name", c.name},
                              {"passed", c.passed},
                              {"measured", number(c.measured)},
                              {"comparison", c.comparison},
                              {"threshold", number(c.threshold)},
                              {"detail", c.detail}});
    return Json{{"all_passed", rep.all_passed()},
                {"deformation_detected", rep.deformation_detected},
                {"checks", checks},
                {"notes", rep.notes}};
}

// ---------------------------------------------------------------- helpers

PairedEmbeddings load_pair(const std::string& clean, const std::string& bd) {
    if (clean.empty() || bd.empty()) throw ValidationError("--clean and --bd are required");
    return semad::pair(read_set(clean), read_set(bd));
}

FormatConfig resolve_format(const CLI::App& app, const Json& file, const std::string& flag) {
    FormatConfig fc;
    fc.name = resolve<std::string>(app, file, "format", flag, "csv");
    fc.format = parse_format(fc.name);
    return fc;
}

void require_out(const std::string& out) {
    if (out.empty()) throw ValidationError("--out is required");
}

std::vector<LayerPair> load_layers(const fs::path& dir, Json& inputs) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw IoError("layer directory '" + dir.string() + "' not found");
    std::vector<fs::path> cleans;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        constexpr std::string_view suffix = ".clean.semd";
        if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            cleans.push_back(e.path());
    }
    std::sort(cleans.begin(), cleans.end());
    if (cleans.empty()) throw ValidationError("no *.clean.semd files in '" + dir.string() + "'");
    std::vector<LayerPair> layers;
    for (const auto& c : cleans) {
        const auto name = c.filename().string();
        const fs::path bd = dir / (name.substr(0, name.size() - std::string(".clean.semd").size()) + ".bd.semd");
        if (!fs::exists(bd)) throw IoError("missing counterpart '" + bd.filename().string() + "' for '" + name + "'");
        for (auto& e : container_inputs(c, bd)) inputs.push_back(std::move(e));
        auto p = semad::pair(read_set(c), read_set(bd));
        const auto& first = p.record(0).layer;
        if (!first) throw ValidationError("'" + name + "': records carry no layer index");
        for (std::size_t i = 1; i < p.rows(); ++i)
            if (p.record(i).layer != first)
                throw ValidationError("'" + name + "': rows disagree on the layer index (row " + std::to_string(i) + ")");
        layers.push_back({*first, std::move(p)});
    }
    return layers;
}

Json layer_spectra_json(const LayerSpectra& s) {
    Json layers = Json::array();
    for (const auto& l : s.layers) {
        Json shares = Json::array();
        for (double v : l.variance_shares) shares.push_back(number(v));
        Json top = Json::array();
        for (Eigen::Index i = 0; i < l.top_component.size(); ++i) top.push_back(number(l.top_component(i)));
        layers.push_back(Json{{"layer", l.layer},
                              {"degenerate", l.degenerate},
                              {"rows", l.rows},
                              {"variance_shares", shares},
                              {"top_component", l.degenerate ? Json(nullptr) : top}});
    }
    return Json{{"layers", layers}, {"consistency", optional_number(s.consistency)}};
}

std::vector<std::string> verdicts(const Json& sds_summary, const Json& sens, const Json& evr_s, const Json* welch) {
    std::vector<std::string> v;
    const auto& ratio = sds_summary["ratio_target_over_control"];
    if (ratio.is_number() && ratio.get<double>() >= kVerdictSdsRatio)
        v.push_back("elevated target-relevant drift: mean SDS ratio " + format_double(ratio.get<double>()));
    const auto& dom = sds_summary["upper_decile_dominance_count"];
    if (dom.is_number() && dom.get<std::size_t>() == 5) v.push_back("trigger >= target >= control SDS ordering at deciles 5-9");
    const auto& g = sens["median_ratio_target_over_control"];
    if (g.is_number() && g.get<double>() >= kVerdictSensitivityRatio)
        v.push_back("target-neighborhood right shift detected: median g ratio " + format_double(g.get<double>()));
    const auto& m = evr_s["median_margin_target_minus_control"];
    if (m.is_number() && m.get<double>() >= kVerdictEvrMargin)
        v.push_back("low-rank concentration in target neighborhoods: median EVR@" + std::to_string(evr_s["k"].get<std::size_t>()) +
                    " margin " + format_double(m.get<double>()));
    if (welch) {
        const double p = (*welch)["p_two_sided"].get<double>();
        const double t = (*welch)["t"].get<double>();
        if (p < kVerdictAlpha && t < 0.0)
            v.push_back("significant alignment degradation in target-relevant prompts: t " + format_double(t) + ", p " +
                        format_double(p));
    }
    if (v.empty()) v.push_back("no deformation signature detected");
    return v;
}

}  // namespace

// ---------------------------------------------------------------- run

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Paired-embedding drift audit toolkit", "semad"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string(SEMAD_VERSION));
    std::size_t threads_flag = 0;
    app.add_option("--threads", threads_flag, "Worker threads (SEMAD_THREADS caps this)");

    std::string clean, bd, outdir, config, format = "csv";
    auto add_pair_opts = [&](CLI::App* sc) {
        sc->add_option("--clean", clean, "Clean container (.semd)");
        sc->add_option("--bd", bd, "Modified container (.semd)");
        sc->add_option("--out", outdir, "Output directory");
        sc->add_option("--config", config, "JSON config file");
        sc->add_option("--format", format, "Tabular output format: csv or json");
    };
    std::string scores;
    auto add_score_opts = [&](CLI::App* sc) {
        sc->add_option("--scores", scores, "Score CSV (id,group,s_clean,s_bd)");
        sc->add_option("--out", outdir, "Output directory");
        sc->add_option("--config", config, "JSON config file");
    };

    // gen-prompts
    auto* gp = app.add_subcommand("gen-prompts", "Write a prompt suite as JSON lines");
    std::string gp_case, gp_mode;
    std::uint64_t gp_seed = 0;
    std::size_t gp_anchors = 20, gp_neighbors = kDefaultNeighborhoodSize;
    double gp_p = kDefaultSuffixProbability;
    gp->add_option("--case", gp_case, "general | bw_style | blurry_style | dog_semantic");
    gp->add_option("--seed", gp_seed, "Sampling seed");
    gp->add_option("--out", outdir, "Output JSONL path");
    gp->add_option("--anchors", gp_anchors, "Anchors to sample");
    gp->add_option("--neighbors", gp_neighbors, "Neighbors per anchor");
    gp->add_option("--p-suffix", gp_p, "Suffix jitter probability");
    gp->add_option("--mode", gp_mode, "modifier_swap | subject_swap");
    gp->add_option("--config", config, "JSON config file");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Generate a synthetic clean/modified pair");
    std::string out_clean, out_bd;
    std::uint64_t sim_seed = 0;
    sim->add_option("--config", config, "Scenario JSON (default scenario when omitted)");
    sim->add_option("--out-clean", out_clean, "Clean container path");
    sim->add_option("--out-bd", out_bd, "Modified container path");
    sim->add_option("--seed", sim_seed, "Base seed (overrides the scenario's)");

    auto* sc_sds = app.add_subcommand("sds", "Per-prompt drift score 1 - cos");
    auto* sc_drift = app.add_subcommand("drift", "Drift vector norms");
    auto* sc_pca = app.add_subcommand("pca", "Shared PCA of drift vectors");
    auto* sc_sens = app.add_subcommand("sensitivity", "Local sensitivity per anchor");
    auto* sc_evr = app.add_subcommand("evr", "Explained variance ratio of residual matrices");
    auto* sc_proc = app.add_subcommand("procrustes", "Orthogonal alignment fitted on one group");
    for (auto* sc : {sc_sds, sc_drift, sc_pca, sc_sens, sc_evr, sc_proc}) add_pair_opts(sc);
    std::size_t components = 2, k = 2, top_k = 5, points = 512;
    double epsilon = kDefaultEpsilon;
    std::string fit_group = "control";
    bool with_scale = false;
    std::vector<double> probes(kTailProbes.begin(), kTailProbes.end());
    sc_pca->add_option("--components", components, "Principal components");
    sc_sens->add_option("--epsilon", epsilon, "Denominator stabilizer");
    sc_evr->add_option("--k", k, "Leading singular values");
    sc_proc->add_option("--fit-group", fit_group, "Group the rotation is fitted on");
    sc_proc->add_flag("--with-scale", with_scale, "Also fit a global scale");

    auto* sc_layer = app.add_subcommand("layer-pca", "PCA of per-layer drift over target_relevant rows");
    std::string layers_dir;
    sc_layer->add_option("--layers", layers_dir, "Directory of <name>.clean.semd / <name>.bd.semd pairs");
    sc_layer->add_option("--out", outdir, "Output directory");
    sc_layer->add_option("--config", config, "JSON config file");
    sc_layer->add_option("--top-k", top_k, "Variance shares reported per layer");

    auto* sc_welch = app.add_subcommand("welch", "Welch t-test of alignment deltas");
    auto* sc_kde = app.add_subcommand("kde", "Gaussian KDE of alignment deltas");
    auto* sc_q = app.add_subcommand("quantiles", "Tail quantiles of alignment deltas");
    for (auto* sc : {sc_welch, sc_kde, sc_q}) add_score_opts(sc);
    sc_kde->add_option("--format", format, "Tabular output format: csv or json");
    sc_kde->add_option("--points", points, "Grid points");
    sc_q->add_option("--probes", probes, "Probabilities in (0, 1)");

    auto* rep = app.add_subcommand("report", "Run every analysis and write an audit report");
    add_pair_opts(rep);
    std::string oracle_config;
    rep->add_option("--scores", scores, "Score CSV (id,group,s_clean,s_bd)");
    rep->add_option("--oracle-config", oracle_config, "Scenario JSON the pair was simulated from");
    rep->add_option("--components", components, "Principal components");
    rep->add_option("--epsilon", epsilon, "Denominator stabilizer");
    rep->add_option("--k", k, "Leading singular values");
    rep->add_option("--fit-group", fit_group, "Group the rotation is fitted on");
    rep->add_flag("--with-scale", with_scale, "Also fit a global scale");
    rep->add_option("--points", points, "KDE grid points");
    rep->add_option("--probes", probes, "Quantile probabilities in (0, 1)");

    std::vector<std::string> argv_store{"semad"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());

    try {
        try {
            app.parse(static_cast<int>(argv.size()), argv.data());
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e, out, err);
            return code == 0 ? kExitOk : kExitValidation;
        }
        const std::size_t threads =
            resolve_threads(app.count("--threads") ? std::optional<std::size_t>(threads_flag) : std::nullopt);

        if (gp->parsed()) {
            const Json file = load_config(config);
            require_out(outdir);
            const auto case_name = resolve<std::string>(*gp, file, "case", gp_case, "");
            if (case_name.empty()) throw ValidationError("--case is required");
            if (!gp->count("--seed") && !file.contains("seed")) throw ValidationError("--seed is required");
            const PoolCase pc = parse_pool_case(case_name);
            SuiteOptions o;
            o.seed = resolve<std::uint64_t>(*gp, file, "seed", gp_seed, 0);
            o.anchors = resolve<std::size_t>(*gp, file, "anchors", gp_anchors, 20);
            o.neighbors = resolve<std::size_t>(*gp, file, "neighbors", gp_neighbors, kDefaultNeighborhoodSize);
            o.suffix_probability = resolve<double>(*gp, file, "p-suffix", gp_p, kDefaultSuffixProbability);
            const auto mode = resolve<std::string>(*gp, file, "mode", gp_mode, std::string(to_string(default_mode(pc))));
            o.mode = parse_swap_mode(mode);
            const auto suite = build_suite(pc, o);
            std::ostringstream ss;
            write_suite_jsonl(ss, suite);
            const fs::path path(outdir);
            if (path.has_parent_path()) ensure_dir(path.parent_path());
            write_text(path, ss.str());
            Json cfg{{"case", case_name}, {"seed", o.seed},          {"anchors", o.anchors}, {"neighbors", o.neighbors},
                     {"p-suffix", number(o.suffix_probability)}, {"mode", mode}};
            Json inputs = Json::array();
            if (!config.empty()) inputs.push_back(input_entry("config", config));
            fs::path meta_path = path;
            meta_path.replace_extension(".meta.json");
            write_json(meta_path, meta("gen-prompts", cfg, inputs));
            return kExitOk;
        }

        if (sim->parsed()) {
            if (out_clean.empty() || out_bd.empty()) throw ValidationError("--out-clean and --out-bd are required");
            Scenario s;
            if (config.empty()) {
                s = default_scenario(sim->count("--seed") ? sim_seed : kDefaultSimulationSeed);
            } else {
                Json j = load_config(config);
                if (sim->count("--seed")) j["seed"] = sim_seed;
                s = parse_scenario(j.dump());
            }
            const auto p = simulate(s);
            for (const auto& path : {fs::path(out_clean), fs::path(out_bd)})
                if (path.has_parent_path()) ensure_dir(path.parent_path());
            write_set(p.clean(), out_clean);
            write_set(p.modified(), out_bd);
            fs::path scen = out_bd;
            scen.replace_extension(".scenario.json");
            write_text(scen, scenario_json(s) + "\n");
            Json inputs = Json::array();
            if (!config.empty()) inputs.push_back(input_entry("config", config));
            fs::path meta_path = out_bd;
            meta_path.replace_extension(".meta.json");
            write_json(meta_path, meta("simulate", Json{{"seed", s.manifold.seed}, {"scenario", scen.filename().string()}}, inputs));
            return kExitOk;
        }

        for (auto* sc : {sc_sds, sc_drift, sc_pca, sc_sens, sc_evr, sc_proc}) {
            if (!sc->parsed()) continue;
            const Json file = load_config(config);
            require_out(outdir);
            const auto fc = resolve_format(*sc, file, format);
            const auto p = load_pair(clean, bd);
            const Json inputs = container_inputs(clean, bd);
            const fs::path dir(outdir);
            if (sc == sc_sds) emit_sds(p, dir, fc, inputs);
            if (sc == sc_drift) emit_drift(p, dir, fc, inputs);
            if (sc == sc_pca) emit_pca(p, dir, {resolve<std::size_t>(*sc, file, "components", components, 2)}, fc, inputs);
            if (sc == sc_sens)
                emit_sensitivity(p, dir, {resolve<double>(*sc, file, "epsilon", epsilon, kDefaultEpsilon)}, fc, inputs,
                                 threads);
            if (sc == sc_evr) emit_evr(p, dir, {resolve<std::size_t>(*sc, file, "k", k, 2)}, fc, inputs, threads);
            if (sc == sc_proc)
                emit_procrustes(p, dir,
                                {parse_group(resolve<std::string>(*sc, file, "fit-group", fit_group, "control")),
                                 resolve<bool>(*sc, file, "with-scale", with_scale, false)},
                                fc, inputs);
            return kExitOk;
        }

        if (sc_layer->parsed()) {
            const Json file = load_config(config);
            require_out(outdir);
            if (layers_dir.empty()) throw ValidationError("--layers is required");
            const auto tk = resolve<std::size_t>(*sc_layer, file, "top-k", top_k, 5);
            Json inputs = Json::array();
            auto layers = load_layers(layers_dir, inputs);
            const auto spectra = layerwise_pca(layers, tk);
            ensure_dir(outdir);
            write_json(fs::path(outdir) / "layer_spectra.json", layer_spectra_json(spectra));
            write_meta(outdir, "layer-pca", Json{{"top-k", tk}, {"rows", "target_relevant"}, {"centering", "mean"}},
                       inputs);
            return kExitOk;
        }

        for (auto* sc : {sc_welch, sc_kde, sc_q}) {
            if (!sc->parsed()) continue;
            const Json file = load_config(config);
            require_out(outdir);
            if (scores.empty()) throw ValidationError("--scores is required");
            const auto table = read_scores(scores);
            const Json inputs = Json::array({input_entry("scores", scores)});
            if (sc == sc_welch) emit_welch(table, outdir, inputs);
            if (sc == sc_kde)
                emit_kde(table, outdir, {resolve<std::size_t>(*sc, file, "points", points, 512)},
                         resolve_format(*sc, file, format), inputs);
            if (sc == sc_q)
                emit_quantiles(table, outdir,
                               {resolve<std::vector<double>>(*sc, file, "probes", probes,
                                                             std::vector<double>(kTailProbes.begin(), kTailProbes.end()))},
                               inputs);
            return kExitOk;
        }

        if (rep->parsed()) {
            const Json file = load_config(config);
            require_out(outdir);
            const auto fc = resolve_format(*rep, file, format);
            const PcaConfig pca_cfg{resolve<std::size_t>(*rep, file, "components", components, 2)};
            const SensitivityConfig sens_cfg{resolve<double>(*rep, file, "epsilon", epsilon, kDefaultEpsilon)};
            const EvrConfig evr_cfg{resolve<std::size_t>(*rep, file, "k", k, 2)};
            const ProcrustesConfig proc_cfg{parse_group(resolve<std::string>(*rep, file, "fit-group", fit_group, "control")),
                                            resolve<bool>(*rep, file, "with-scale", with_scale, false)};
            const KdeConfig kde_cfg{resolve<std::size_t>(*rep, file, "points", points, 512)};
            const QuantileConfig q_cfg{resolve<std::vector<double>>(
                *rep, file, "probes", probes, std::vector<double>(kTailProbes.begin(), kTailProbes.end()))};

            const auto p = load_pair(clean, bd);
            const Json pair_inputs = container_inputs(clean, bd);
            const fs::path dir(outdir);
            ensure_dir(dir);

            const SdsReport sds_rep = sds(p);
            Json audit = Json::object();
            Json all_inputs = pair_inputs;
            const Json sds_summary = emit_sds(p, dir / "sds", fc, pair_inputs, &sds_rep);
            emit_drift(p, dir / "drift", fc, pair_inputs);
            emit_pca(p, dir / "pca", pca_cfg, fc, pair_inputs);
            const Json sens_summary = emit_sensitivity(p, dir / "sensitivity", sens_cfg, fc, pair_inputs, threads);
            const Json evr_summary = emit_evr(p, dir / "evr", evr_cfg, fc, pair_inputs, threads);
            const Json proc_summary = emit_procrustes(p, dir / "procrustes", proc_cfg, fc, pair_inputs);

            std::optional<Json> welch_j, quant_j;
            if (!scores.empty()) {
                const auto table = read_scores(scores);
                const Json score_inputs = Json::array({input_entry("scores", scores)});
                all_inputs.push_back(score_inputs[0]);
                welch_j = emit_welch(table, dir / "welch", score_inputs);
                emit_kde(table, dir / "kde", kde_cfg, fc, score_inputs);
                quant_j = emit_quantiles(table, dir / "quantiles", q_cfg, score_inputs);
            }

            std::optional<Json> oracle_j;
            if (!oracle_config.empty()) {
                all_inputs.push_back(input_entry("oracle_config", oracle_config));
                const Scenario s = parse_scenario(read_file(oracle_config));
                const auto dx = run_diagnostics(p, std::max<std::size_t>(s.deformation.rank(), 1), sens_cfg.epsilon, threads);
                oracle_j = oracle_json(oracle_report(s, dx));
                write_json(dir / "oracle.json", *oracle_j);
            }

            audit["inputs"] = all_inputs;
            audit["sds_summary"] = sds_summary;
            audit["sensitivity_summary"] = sens_summary;
            audit["evr_summary"] = evr_summary;
            audit["procrustes"] = proc_summary;
            audit["welch"] = welch_j ? *welch_j : Json(nullptr);
            audit["quantiles"] = quant_j ? *quant_j : Json(nullptr);
            audit["oracle"] = oracle_j ? *oracle_j : Json(nullptr);
            audit["verdict_notes"] = verdicts(sds_summary, sens_summary, evr_summary, welch_j ? &*welch_j : nullptr);
            write_json(dir / "audit_report.json", audit);

            Json cfg{{"components", pca_cfg.components},
                     {"epsilon", number(sens_cfg.epsilon)},
                     {"k", evr_cfg.k},
                     {"fit-group", to_string(proc_cfg.fit_group)},
                     {"with-scale", proc_cfg.with_scale},
                     {"points", kde_cfg.points},
                     {"format", fc.name}};
            Json pr = Json::array();
            for (double v : q_cfg.probes) pr.push_back(number(v));
            cfg["probes"] = pr;
            write_meta(dir, "report", cfg, all_inputs);
            return kExitOk;
        }
        return kExitValidation;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }
}

}  // namespace semad::cli
