#include "paramscope/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "paramscope/checkpoint.hpp"
#include "paramscope/svg.hpp"

namespace paramscope {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

namespace {

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
}

std::string trial_file(std::string_view stem, std::size_t id, std::string_view ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*s%04zu%.*s", static_cast<int>(stem.size()), stem.data(), id,
                  static_cast<int>(ext.size()), ext.data());
    return buf;
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

ExperimentManifest load_experiment(const fs::path& exp_dir) {
    const fs::path m = exp_dir / "manifest.json";
    if (!fs::exists(m))
        throw PipelineError("no manifest.json in " + exp_dir.string() + "; run `paramscope train` first");
    return read_manifest(m);
}

void note(const Logger& log, const std::string& s) {
    if (log) log(s);
}

}  // namespace

ExperimentManifest run_analysis(const CliConfig& cfg, const fs::path& exp_dir, const Logger& log) {
    ExperimentManifest m = load_experiment(exp_dir);
    const auto thresholds = cfg.thresholds();
    classify_trials(m.trials, thresholds, cfg.analysis.nonconvergence);
    const fs::path dir = exp_dir / "analysis";
    fs::create_directories(dir / "density");
    fs::create_directories(dir / "nodes");

    std::ostringstream stats, strength, curves;
    stats << "trial_id,group,N,mu,sigma,mean_S,mean_S_plus,mean_S_minus,accuracy,label\n";
    strength << "trial_id,group_a,group_b,sign,mean_a,mean_b,accuracy,label\n";
    curves << "trial_id,epoch,loss,accuracy,final_accuracy,label\n";
    std::map<std::string, std::ostringstream> density_csv;
    std::map<std::string, std::size_t> label_counts;

    for (const auto& r : m.trials) {
        ++label_counts[r.label];
        for (std::size_t e = 0; e < r.train_loss.size(); ++e)
            curves << r.trial_id << ',' << e + 1 << ',' << format_double(r.train_loss[e]) << ','
                   << format_double(r.test_accuracy[e]) << ',' << format_double(r.final_accuracy) << ',' << r.label
                   << '\n';
        if (r.failed) {
            note(log, "trial " + std::to_string(r.trial_id) + " failed (" + r.error + "); skipped");
            continue;
        }
        const Model model = load_checkpoint(exp_dir / r.checkpoint);
        const std::string acc = format_double(r.final_accuracy);
        const auto figs = figure_groups(model.spec.family);
        json dens = json::object();
        std::ostringstream nodes;
        nodes << "group,param,node,S,S_plus,S_minus\n";
        for (const auto& g : weight_groups(model)) {
            const auto st = weight_mean_std(g.values, g.name);
            const auto ns = node_strength(model, g.name);
            stats << r.trial_id << ',' << g.name << ',' << st.n << ',' << format_double(st.mean) << ','
                  << format_double(st.std) << ',' << format_double(ns.mean(ns.s)) << ','
                  << format_double(ns.mean(ns.s_plus)) << ',' << format_double(ns.mean(ns.s_minus)) << ',' << acc
                  << ',' << r.label << '\n';
            if (std::find(figs.begin(), figs.end(), g.name) == figs.end()) continue;
            if (g.name != whole_group_name(model.spec.family)) {
                std::size_t node = 0;
                for (const auto& [param, count] : ns.segments)
                    for (std::size_t k = 0; k < count; ++k, ++node)
                        nodes << g.name << ',' << param << ',' << k << ',' << format_double(ns.s[node]) << ','
                              << format_double(ns.s_plus[node]) << ',' << format_double(ns.s_minus[node]) << '\n';
            }
            if (g.values.size() < 2) continue;
            const auto d = density(g.values, cfg.analysis.bins, cfg.analysis.bandwidth, cfg.analysis.kde_points);
            json dj = to_json(d);
            dj["kde_at_zero"] = d.degenerate ? json(nullptr) : json(kde_at(g.values, d.bandwidth, 0.0));
            dens[g.name] = std::move(dj);
            auto& csv = density_csv[g.name];
            if (csv.tellp() == 0) csv << "trial_id,x,kde,accuracy,label\n";
            for (std::size_t i = 0; i < d.kde.size(); ++i)
                csv << r.trial_id << ',' << format_double(d.grid[i]) << ',' << format_double(d.kde[i]) << ',' << acc
                    << ',' << r.label << '\n';
        }
        for (const auto& [a, b] : cfg.strength_pairs())
            for (auto sign : {StrengthSign::Abs, StrengthSign::Plus, StrengthSign::Minus}) {
                const auto [sa, sb] = strength_pair(model, a, b, sign);
                strength << r.trial_id << ',' << a << ',' << b << ',' << to_string(sign) << ',' << format_double(sa)
                         << ',' << format_double(sb) << ',' << acc << ',' << r.label << '\n';
            }
        json dfile{{"schema", "paramscope.density"},
                   {"schema_version", kOutputSchemaVersion},
                   {"trial_id", r.trial_id},
                   {"accuracy", r.final_accuracy},
                   {"label", r.label},
                   {"groups", dens}};
        write_text(dir / "density" / trial_file("trial_", r.trial_id, ".json"), dfile.dump(1) + "\n");
        write_text(dir / "nodes" / trial_file("trial_", r.trial_id, ".csv"), nodes.str());
        note(log, "analyzed trial " + std::to_string(r.trial_id) + " (" + r.label + ")");
    }
    write_text(dir / "stats.csv", stats.str());
    write_text(dir / "strength.csv", strength.str());
    write_text(dir / "curves.csv", curves.str());
    for (const auto& [g, csv] : density_csv) write_text(dir / ("density_" + g + ".csv"), csv.str());
    write_manifest(m, dir / "manifest.json");
    json summary{{"schema", "paramscope.analysis"},
                 {"schema_version", kOutputSchemaVersion},
                 {"thresholds", thresholds},
                 {"nonconvergence",
                  {{"eps_loss", cfg.analysis.nonconvergence.eps_loss},
                   {"chance_band", {cfg.analysis.nonconvergence.chance_lo, cfg.analysis.nonconvergence.chance_hi}}}},
                 {"labels", label_counts}};
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    return m;
}

std::vector<Projection> run_projection(const CliConfig& cfg, const fs::path& exp_dir, const Logger& log) {
    ExperimentManifest m = load_experiment(exp_dir);
    classify_trials(m.trials, cfg.thresholds(), cfg.analysis.nonconvergence);
    const fs::path dir = exp_dir / "projection";
    fs::create_directories(dir);
    std::vector<Projection> out;
    json summary{{"schema", "paramscope.projection"},
                 {"schema_version", kOutputSchemaVersion},
                 {"tsne", cfg.projection.tsne},
                 {"groups", json::object()}};
    for (const auto& group : cfg.projection_groups()) {
        note(log, "projecting group " + group);
        Projection p = project_manifest(m, exp_dir, group, cfg.projection.tsne);
        std::ostringstream csv;
        csv << "trial_id,cohort,x,y,accuracy,label\n";
        for (const auto& pt : p.points)
            csv << pt.trial_id << ',' << quote(pt.cohort) << ',' << format_double(pt.x) << ',' << format_double(pt.y)
                << ',' << format_double(pt.accuracy) << ',' << pt.label << '\n';
        write_text(dir / ("embedding_" + group + ".csv"), csv.str());
        for (const auto& w : p.warnings) note(log, "warning: " + w);
        summary["groups"][group] = {{"cohorts", p.cohorts}, {"warnings", p.warnings}};
        out.push_back(std::move(p));
    }
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    return out;
}

std::size_t CsvTable::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw std::runtime_error("CSV has no column '" + std::string(name) + "'");
}

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::string cur;
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            const char c = line[i];
            if (quoted) {
                if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else if (c == '"') {
                    quoted = false;
                } else {
                    cur += c;
                }
            } else if (c == '"') {
                quoted = true;
            } else if (c == ',') {
                cells.push_back(std::move(cur));
                cur.clear();
            } else {
                cur += c;
            }
        }
        cells.push_back(std::move(cur));
        return cells;
    };
    CsvTable t;
    std::string line;
    if (std::getline(in, line)) t.header = split(line);
    while (std::getline(in, line))
        if (!line.empty()) t.rows.push_back(split(line));
    return t;
}

namespace {

double to_d(const std::string& s) {
    if (s == "nan") return std::nan("");
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    return std::stod(s);
}

struct ReportWriter {
    fs::path dir;
    json files = json::array();
    const Logger& log;

    void add(const std::string& name, const PlotSpec& spec, const PlotData& data, const std::string& group,
             std::vector<std::string> sources) {
        write_text(dir / name, render_svg(spec, data));
        files.push_back({{"file", name}, {"kind", std::string(to_string(spec.kind))}, {"group", group}, {"data", sources}});
        note(log, "wrote report/" + name);
    }
};

}  // namespace

void emit_report(const CliConfig& cfg, const fs::path& exp_dir, const Logger& log) {
    const fs::path adir = exp_dir / "analysis";
    for (const char* f : {"manifest.json", "stats.csv", "strength.csv", "curves.csv"})
        if (!fs::exists(adir / f))
            throw PipelineError("analysis results not found (" + (adir / f).string() +
                                "); run `paramscope analyze` with the same --config/--out first");
    const ExperimentManifest m = read_manifest(adir / "manifest.json");
    const Family family = cfg.train.model.family;
    ReportWriter w{exp_dir / "report", json::array(), log};
    fs::create_directories(w.dir);

    {  // convergence lines: one per trial
        const auto t = read_csv(adir / "curves.csv");
        const auto ci = t.column("trial_id"), ce = t.column("epoch"), cl = t.column("loss"), ca = t.column("final_accuracy");
        std::map<std::size_t, PlotLine> lines;
        for (const auto& row : t.rows) {
            const auto id = static_cast<std::size_t>(std::stoull(row[ci]));
            auto& l = lines[id];
            l.id = "curves.csv:trial_id=" + row[ci];
            l.accuracy = to_d(row[ca]);
            l.x.push_back(to_d(row[ce]));
            l.y.push_back(to_d(row[cl]));
        }
        PlotData data;
        for (auto& [_, l] : lines) data.lines.push_back(std::move(l));
        w.add("convergence.svg",
              {PlotKind::ConvergenceLines, std::string(to_string(family)) + " convergence", "epoch", "training loss"},
              data, "", {"analysis/curves.csv"});
    }

    const auto stats = read_csv(adir / "stats.csv");
    for (const auto& g : figure_groups(family)) {
        PlotData data;
        const auto ci = stats.column("trial_id"), cg = stats.column("group"), cm = stats.column("mu"),
                   cs = stats.column("sigma"), ca = stats.column("accuracy");
        for (const auto& row : stats.rows)
            if (row[cg] == g)
                data.points.push_back({to_d(row[cm]), to_d(row[cs]), to_d(row[ca]),
                                       "stats.csv:trial_id=" + row[ci] + ",group=" + g});
        w.add("meansigma_" + g + ".svg", {PlotKind::MeanSigmaScatter, group_label(g) + " weights", "mean", "std"}, data,
              g, {"analysis/stats.csv"});
    }

    for (const auto& g : figure_groups(family)) {
        const fs::path csv = adir / ("density_" + g + ".csv");
        PlotData data;
        if (fs::exists(csv)) {
            const auto t = read_csv(csv);
            const auto ci = t.column("trial_id"), cx = t.column("x"), ck = t.column("kde"), ca = t.column("accuracy");
            std::map<std::size_t, PlotLine> lines;
            for (const auto& row : t.rows) {
                auto& l = lines[static_cast<std::size_t>(std::stoull(row[ci]))];
                l.id = "density_" + g + ".csv:trial_id=" + row[ci];
                l.accuracy = to_d(row[ca]);
                l.x.push_back(to_d(row[cx]));
                l.y.push_back(to_d(row[ck]));
            }
            for (auto& [_, l] : lines) data.lines.push_back(std::move(l));
        }
        w.add("density_" + g + ".svg", {PlotKind::DensityCurves, group_label(g) + " weight density", "weight", "density"},
              data, g, {"analysis/density_" + g + ".csv"});
    }

    {
        const auto t = read_csv(adir / "strength.csv");
        const auto ci = t.column("trial_id"), ga = t.column("group_a"), gb = t.column("group_b"), cs = t.column("sign"),
                   ma = t.column("mean_a"), mb = t.column("mean_b"), ca = t.column("accuracy");
        for (const auto& [a, b] : cfg.strength_pairs())
            for (auto sign : {StrengthSign::Abs, StrengthSign::Plus, StrengthSign::Minus}) {
                const std::string sname(to_string(sign));
                const std::string suffix = sign == StrengthSign::Plus ? "+" : (sign == StrengthSign::Minus ? "-" : "");
                PlotData data;
                for (const auto& row : t.rows)
                    if (row[ga] == a && row[gb] == b && row[cs] == sname)
                        data.points.push_back({to_d(row[ma]), to_d(row[mb]), to_d(row[ca]),
                                               "strength.csv:trial_id=" + row[ci] + ",pair=" + a + "/" + b + ",sign=" + sname});
                w.add("strength_" + a + "_" + b + "_" + sname + ".svg",
                      {PlotKind::StrengthScatter, group_label(a) + suffix + " vs " + group_label(b) + suffix,
                       "mean node strength " + group_label(a) + suffix, "mean node strength " + group_label(b) + suffix},
                      data, a + "," + b, {"analysis/strength.csv"});
            }
    }

    const fs::path pdir = exp_dir / "projection";
    for (const auto& g : cfg.projection_groups()) {
        const fs::path csv = pdir / ("embedding_" + g + ".csv");
        if (!fs::exists(csv)) {
            note(log, "no projection for group " + g + "; run `paramscope project` to add embedding plots");
            continue;
        }
        const auto t = read_csv(csv);
        const auto ci = t.column("trial_id"), cc = t.column("cohort"), cx = t.column("x"), cy = t.column("y"),
                   ca = t.column("accuracy");
        std::vector<std::string> cohorts;
        std::map<std::string, PlotData> by;
        for (const auto& row : t.rows) {
            if (!by.contains(row[cc])) cohorts.push_back(row[cc]);
            by[row[cc]].points.push_back({to_d(row[cx]), to_d(row[cy]), to_d(row[ca]),
                                          "embedding_" + g + ".csv:trial_id=" + row[ci]});
        }
        for (std::size_t k = 0; k < cohorts.size(); ++k)
            w.add("embedding_" + g + "_c" + std::to_string(k) + ".svg",
                  {PlotKind::EmbeddingScatter, group_label(g) + " t-SNE: " + cohorts[k], "t-SNE 1", "t-SNE 2"},
                  by[cohorts[k]], g, {"projection/embedding_" + g + ".csv"});
    }

    json index{{"schema", "paramscope.report"},
               {"schema_version", kOutputSchemaVersion},
               {"family", std::string(to_string(family))},
               {"dataset", std::string(to_string(cfg.train.dataset))},
               {"config_hash", m.config_hash},
               {"trials", m.trials.size()},
               {"files", w.files}};
    write_text(w.dir / "index.json", index.dump(2) + "\n");
}

}  // namespace paramscope
