// paramscope: train seeded trial populations and characterize their weights.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "paramscope/checkpoint.hpp"
#include "paramscope/config.hpp"
#include "paramscope/data.hpp"
#include "paramscope/fetch.hpp"
#include "paramscope/report.hpp"
#include "paramscope/trainer.hpp"

namespace fs = std::filesystem;
using namespace paramscope;

namespace {

struct Options {
    std::string config;
    std::string out;
    std::string cache;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> subset;
    std::optional<std::size_t> parallel;
    bool strict = false;
    bool fixed_clock = false;
    bool quiet = false;
};

CliConfig resolve(const Options& o) {
    CliConfig c = load_config(o.config);
    if (!o.out.empty()) c.out_dir = o.out;
    if (o.seed) c.train.base_seed = *o.seed;
    if (o.subset) c.train.subset = *o.subset;
    if (o.parallel) c.train.parallel = *o.parallel;
    if (o.strict) c.train.strict_paper_mode = true;
    if (o.fixed_clock) c.train.fixed_clock = true;
    c.train.validate();
    return c;
}

fs::path cache_dir(const Options& o) { return o.cache.empty() ? default_cache_dir() : fs::path(o.cache); }

void write_resolved(const CliConfig& c) {
    fs::create_directories(c.out_dir);
    std::ofstream out(c.out_dir / "config.resolved.conf", std::ios::trunc);
    out << to_ini(c);
}

Logger stderr_log(const Options& o) {
    if (o.quiet) return {};
    return [](const std::string& s) { std::cerr << s << '\n'; };
}

int cmd_fetch(const Options& o) {
    const CliConfig c = resolve(o);
    const std::string name(to_string(c.train.dataset));
    const auto it = c.mirrors.find(name);
    if (it == c.mirrors.end() || it->second.empty())
        throw ConfigError(o.config, 0, "mirror." + name, "no mirror entries for the experiment's dataset");
    FetchOptions fo;
    fo.log = stderr_log(o);
    const auto r = fetch(name, it->second, cache_dir(o), fo);
    std::cerr << "fetch: " << name << ": " << r.files.size() << " files in " << (cache_dir(o) / name).string() << " ("
              << r.downloaded << " downloaded)\n";
    return 0;
}

int cmd_train(const Options& o) {
    const CliConfig c = resolve(o);
    const std::string name(to_string(c.train.dataset));
    if (auto it = c.mirrors.find(name); it != c.mirrors.end()) verify_cache(name, it->second, cache_dir(o));
    write_resolved(c);
    ProgressLog log(o.quiet ? nullptr : &std::cerr);
    const auto m = train_from_cache(c.train, cache_dir(o), c.out_dir, &log);
    std::size_t failed = 0, diverged = 0;
    for (const auto& t : m.trials) {
        failed += t.failed;
        diverged += t.diverged;
    }
    for (const auto& w : m.warnings) std::cerr << "warning: " << w << '\n';
    std::cerr << "train: " << m.trials.size() << " trials (" << failed << " failed, " << diverged << " diverged) -> "
              << (c.out_dir / "manifest.json").string() << '\n';
    return 0;
}

int cmd_analyze(const Options& o) {
    const CliConfig c = resolve(o);
    write_resolved(c);
    const auto m = run_analysis(c, c.out_dir, stderr_log(o));
    std::cerr << "analyze: " << m.trials.size() << " trials -> " << (c.out_dir / "analysis").string() << '\n';
    return 0;
}

int cmd_project(const Options& o) {
    const CliConfig c = resolve(o);
    write_resolved(c);
    const auto p = run_projection(c, c.out_dir, stderr_log(o));
    std::cerr << "project: " << p.size() << " groups -> " << (c.out_dir / "projection").string() << '\n';
    return 0;
}

int cmd_report(const Options& o) {
    const CliConfig c = resolve(o);
    write_resolved(c);
    emit_report(c, c.out_dir, stderr_log(o));
    std::cerr << "report: " << (c.out_dir / "report" / "index.json").string() << '\n';
    return 0;
}

// One machine-readable line per failure: `paramscope: error kind=<k>: <message>`.
int fail(std::string_view kind, const std::string& msg, int code = 1) {
    std::cerr << "paramscope: error kind=" << kind << ": " << msg << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"paramscope: seeded training populations and weight characterization"};
    app.set_version_flag("--version", std::string(PARAMSCOPE_VERSION));
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "Config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "Experiment directory (overrides [output] dir)");
        sub->add_option("--cache", o.cache, "Dataset cache (default: $PARAMSCOPE_CACHE or ~/.cache/paramscope)");
        sub->add_option("--seed", o.seed, "Base seed");
        sub->add_option("--subset", o.subset, "Training examples per trial (0 = full split)");
        sub->add_option("--parallel", o.parallel, "Trials run concurrently")->check(CLI::PositiveNumber);
        sub->add_flag("--strict-paper-mode", o.strict, "Reject architectures outside the published grid");
        sub->add_flag("--fixed-clock", o.fixed_clock, "Record wall time as 0 for byte-stable outputs");
        sub->add_flag("-q,--quiet", o.quiet, "No progress output");
    };
    struct Cmd {
        const char* name;
        const char* help;
        int (*run)(const Options&);
    };
    const Cmd cmds[] = {
        {"fetch", "Download and verify the configured dataset", cmd_fetch},
        {"train", "Run the trial population and write manifest.json", cmd_train},
        {"analyze", "Label trials; weight statistics, densities, node strength", cmd_analyze},
        {"project", "t-SNE of per-trial weight vectors by cohort", cmd_project},
        {"report", "Render SVG figures and index.json", cmd_report},
    };
    int (*selected)(const Options&) = nullptr;
    for (const auto& c : cmds) {
        auto* sub = app.add_subcommand(c.name, c.help);
        common(sub);
        sub->callback([&selected, run = c.run] { selected = run; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        return fail("usage", e.what(), 2);
    }
    try {
        return selected(o);
    } catch (const ConfigError& e) {
        return fail("config", e.what());
    } catch (const MissingDataset& e) {
        return fail("missing-dataset", e.what());
    } catch (const ChecksumError& e) {
        return fail("checksum", e.what());
    } catch (const NetworkError& e) {
        return fail("network", e.what());
    } catch (const PipelineError& e) {
        return fail("pipeline", e.what());
    } catch (const SpecError& e) {
        return fail("model", e.what());
    } catch (const CheckpointError& e) {
        return fail("checkpoint", e.what());
    } catch (const FormatError& e) {
        return fail("format", e.what());
    } catch (const std::exception& e) {
        return fail("runtime", e.what());
    }
}
