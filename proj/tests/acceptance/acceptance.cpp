// Acceptance run: trains the reference populations on MNIST and prints one
// PASS/FAIL line per criterion. Exit status is 0 only when all pass.
//
//   paramscope_acceptance --work DIR --configs DIR [--cache DIR] [--only 1,2,...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "paramscope/adam.hpp"
#include "paramscope/analysis.hpp"
#include "paramscope/checkpoint.hpp"
#include "paramscope/config.hpp"
#include "paramscope/fetch.hpp"
#include "paramscope/grad_check.hpp"
#include "paramscope/kernels.hpp"
#include "paramscope/report.hpp"
#include "paramscope/trainer.hpp"
#include "paramscope/tsne.hpp"

using namespace paramscope;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and budgets, one place.
constexpr double kHighAcc = 95.0;           // c1: DNN/MNIST high minimum
constexpr double kHighFraction = 0.80;      // c1
constexpr double kC1Budget = 30 * 60;       // c1 seconds
constexpr double kChanceLo = 8.0, kChanceHi = 15.0;  // c2
constexpr double kCnnMedian = 97.0;         // c5
constexpr double kVitBest = 85.0;           // c6
constexpr double kVitBudget = 60 * 60;      // c6 seconds
constexpr double kGradTol = 1e-4;           // c7
constexpr double kC7Budget = 5 * 60;
constexpr double kPerplexityTol = 1e-3;     // c8
constexpr double kKlGradTol = 1e-4;
constexpr double kC8Budget = 2 * 60;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
    return v.empty() ? std::nan("") : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

bool low_or_non(const std::string& label) { return label == "low" || label == "non"; }

/// A trained and labelled population.
struct Population {
    CliConfig cfg;
    fs::path dir;
    ExperimentManifest manifest;  // labelled
    double train_seconds = 0.0;
};

class Runner {
public:
    Runner(fs::path work, fs::path configs, fs::path cache)
        : work_(std::move(work)), configs_(std::move(configs)), cache_(std::move(cache)) {}

    Population& population(const std::string& name, std::size_t parallel = 1) {
        const std::string key = name + "#" + std::to_string(parallel);
        if (auto it = pops_.find(key); it != pops_.end()) return it->second;
        Population p;
        p.cfg = load_config(configs_ / (name + ".conf"));
        p.cfg.train.parallel = parallel;
        p.cfg.train.fixed_clock = true;
        p.dir = work_ / key;
        p.cfg.out_dir = p.dir;
        fs::remove_all(p.dir);
        ensure_dataset(p.cfg);
        std::cerr << "[acceptance] training " << key << " (" << p.cfg.train.trials << " trials)\n";
        ProgressLog log(&std::cerr);
        const auto t0 = Clock::now();
        train_from_cache(p.cfg.train, cache_, p.dir, &log);
        p.train_seconds = seconds_since(t0);
        p.manifest = run_analysis(p.cfg, p.dir);
        return pops_.emplace(key, std::move(p)).first->second;
    }

private:
    void ensure_dataset(const CliConfig& c) {
        const std::string name(to_string(c.train.dataset));
        if (fetched_.contains(name)) return;
        if (auto it = c.mirrors.find(name); it != c.mirrors.end()) {
            FetchOptions o;
            o.log = [](const std::string& s) { std::cerr << "[fetch] " << s << '\n'; };
            fetch(name, it->second, cache_, o);
        }
        fetched_.insert(name);
    }

    fs::path work_, configs_, cache_;
    std::map<std::string, Population> pops_;
    std::set<std::string> fetched_;
};

// ---- criteria --------------------------------------------------------------------

Outcome c1_high_group(Runner& r) {
    const auto& p = r.population("dnn_mnist");
    std::size_t high = 0;
    std::vector<double> acc;
    for (const auto& t : p.manifest.trials) {
        acc.push_back(t.final_accuracy);
        high += t.final_accuracy >= kHighAcc;
    }
    const double frac = static_cast<double>(high) / static_cast<double>(p.manifest.trials.size());
    const bool ok = p.manifest.trials.size() == 30 && frac >= kHighFraction && p.train_seconds <= kC1Budget;
    return {ok, fmt("%zu/%zu trials >= %.1f%% (%.1f%%, need >= %.0f%%), median acc %.2f, min %.2f, runtime %.0fs "
                    "(budget %.0fs)",
                    high, p.manifest.trials.size(), kHighAcc, 100 * frac, 100 * kHighFraction, median(acc),
                    *std::min_element(acc.begin(), acc.end()), p.train_seconds, kC1Budget)};
}

Outcome c2_nonconvergence(Runner& r) {
    const auto& p = r.population("dnn_nonconv");
    std::size_t flagged = 0;
    std::string labels;
    for (const auto& t : p.manifest.trials) {
        const bool non = detect_nonconvergence(t) && t.final_accuracy >= kChanceLo && t.final_accuracy <= kChanceHi;
        flagged += non && t.label == "non";
        labels += fmt(" %s(%.2f)", t.label.c_str(), t.final_accuracy);
    }
    return {flagged >= 1, fmt("%zu/%zu trials flagged non with accuracy in [%.0f,%.0f]; labels:%s", flagged,
                              p.manifest.trials.size(), kChanceLo, kChanceHi, labels.c_str())};
}

Outcome c3_sigma_separation(Runner& r) {
    std::vector<double> high, rest;
    for (const char* name : {"dnn_mnist", "dnn_nonconv"})
        for (const auto& t : r.population(name).manifest.trials) {
            if (t.failed || !t.weight_stats.contains("fc2_op")) continue;
            const double s = t.weight_stats.at("fc2_op").std;
            if (is_high(t.label)) high.push_back(s);
            else if (low_or_non(t.label)) rest.push_back(s);
        }
    const double mh = mean(high), mr = mean(rest);
    const bool ok = !high.empty() && !rest.empty() && mh < mr;
    return {ok, fmt("mean sigma(FC2-O/P): high %.5f (n=%zu) vs low/non %.5f (n=%zu)", mh, high.size(), mr,
                    rest.size())};
}

Outcome c4_density_peak(Runner& r) {
    std::vector<double> high, rest;
    for (const char* name : {"dnn_mnist", "dnn_nonconv"}) {
        const auto& p = r.population(name);
        for (const auto& t : p.manifest.trials) {
            if (t.failed || !(is_high(t.label) || low_or_non(t.label))) continue;
            const Model m = load_checkpoint(p.dir / t.checkpoint);
            for (const auto& g : weight_groups(m))
                if (g.name == "whole_net") {
                    const double h = silverman_bandwidth(g.values);
                    (is_high(t.label) ? high : rest).push_back(h > 0 ? kde_at(g.values, h, 0.0) : std::nan(""));
                }
        }
    }
    const double mh = median(high), mr = median(rest);
    std::string vals;
    for (double v : rest) vals += fmt(" %.4g", v);
    const bool ok = !high.empty() && !rest.empty() && mh > mr;
    return {ok, fmt("median KDE(w=0), whole net: high %.4g (n=%zu) vs low/non %.4g (n=%zu; values:%s)", mh,
                    high.size(), mr, rest.size(), vals.c_str())};
}

Outcome c5_cnn(Runner& r) {
    const auto& p = r.population("cnn_mnist");
    std::vector<double> acc;
    for (const auto& t : p.manifest.trials) acc.push_back(t.final_accuracy);
    const double med = median(acc);
    return {p.manifest.trials.size() == 10 && med >= kCnnMedian,
            fmt("%zu trials, C=%zu: median acc %.2f (need >= %.1f), range [%.2f, %.2f], runtime %.0fs",
                p.manifest.trials.size(), p.cfg.train.model.channels, med, kCnnMedian,
                *std::min_element(acc.begin(), acc.end()), *std::max_element(acc.begin(), acc.end()),
                p.train_seconds)};
}

Outcome c6_vit(Runner& r) {
    const auto& p = r.population("vit_mnist");
    std::vector<double> acc;
    for (const auto& t : p.manifest.trials) acc.push_back(t.final_accuracy);
    const double best = *std::max_element(acc.begin(), acc.end());
    const bool ok = p.manifest.trials.size() == 5 && p.cfg.train.model.nhead == 4 && best >= kVitBest &&
                    p.train_seconds <= kVitBudget;
    return {ok, fmt("%zu trials, nhead=%zu: best acc %.2f (need >= %.1f), median %.2f, runtime %.0fs (budget %.0fs)",
                    p.manifest.trials.size(), p.cfg.train.model.nhead, best, kVitBest, median(acc), p.train_seconds,
                    kVitBudget)};
}

// c7: property checks with fresh random instances, independent of the unit suite.
Outcome c7_kernels() {
    const auto t0 = Clock::now();
    std::vector<std::string> failures;
    auto check = [&](bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    };
    Rng data_rng(7007);
    auto rand_tensor = [&](const Shape& s, double scale = 1.0) {
        Tensor t(s);
        for (auto& v : t.values()) v = scale * (2 * data_rng.uniform() - 1);
        return t;
    };
    auto labels = [&](std::size_t n) {
        std::vector<int> y(n);
        for (auto& v : y) v = static_cast<int>(data_rng.below(10));
        return y;
    };

    // gradient checks per family
    double worst = 0;
    for (int f = 0; f < 3; ++f) {
        ModelSpec s;
        s.init.std = 0.3;
        if (f == 0) {
            s.hidden = {16, 12};
        } else if (f == 1) {
            s.family = Family::CNN;
            s.channels = 3;
            s.input_shape = {1, 10, 10};
        } else {
            s.family = Family::ViT;
            s.input_shape = {1, 8, 8};
            s.d_model = 8;
            s.nhead = 2;
        }
        Rng init(100 + f);
        Model m = build_model(s, init);
        Tensor x = rand_tensor({4, s.input_shape[0], s.input_shape[1], s.input_shape[2]});
        const double e = grad_check(m, x, labels(4), 1e-5, 200 + f);
        worst = std::max(worst, e);
        check(e < kGradTol, fmt("%s grad_check %.2e", std::string(to_string(s.family)).c_str(), e));
    }

    // softmax rows and cross entropy vs long double summation
    for (int rep = 0; rep < 20; ++rep) {
        const Tensor z = rand_tensor({6, 10}, 40.0);
        const auto y = labels(6);
        const Tensor p = softmax(z);
        long double ce = 0;
        for (std::size_t i = 0; i < 6; ++i) {
            double row = 0;
            long double mx = -1e300L, zsum = 0;
            for (std::size_t k = 0; k < 10; ++k) {
                row += p.at(i, k);
                mx = std::max<long double>(mx, z.at(i, k));
            }
            check(std::abs(row - 1.0) <= 1e-12, "softmax row sum");
            for (std::size_t k = 0; k < 10; ++k) zsum += std::exp(static_cast<long double>(z.at(i, k)) - mx);
            ce += -(z.at(i, y[i]) - mx - std::log(zsum));
        }
        check(std::abs(softmax_cross_entropy(z, y) - static_cast<double>(ce / 6)) <= 1e-10, "cross entropy");
    }

    // KDE vs double loop
    {
        std::vector<double> w(3000);
        for (auto& v : w) v = 0.05 * data_rng.normal();
        const double h = silverman_bandwidth(w);
        const auto d = density(w, 50, h, 11);
        for (std::size_t g = 0; g < d.grid.size(); ++g) {
            long double s = 0;
            for (double x : w) {
                const long double u = (d.grid[g] - x) / h;
                s += std::exp(-0.5L * u * u);
            }
            const double want = static_cast<double>(s / (w.size() * h * std::sqrt(2 * 3.14159265358979323846264L)));
            check(std::abs(d.kde[g] - want) <= 1e-12 * std::max(1.0, want), "kde oracle");
        }
    }

    // node strength vs brute force, and S = S+ + S-
    {
        ModelSpec s;
        s.hidden = {9, 7};
        Rng init(5);
        const Model m = build_model(s, init);
        const Tensor& w = m.at("fc1_fc2.weight");
        const auto ns = node_strength(m, "fc1_fc2");
        for (std::size_t j = 0; j < w.dim(1); ++j) {
            double sum = 0;
            for (std::size_t i = 0; i < w.dim(0); ++i) sum += std::abs(w.at(i, j));
            check(std::abs(ns.s[j] - sum) <= 1e-14, "strength oracle");
            check(std::abs(ns.s[j] - ns.s_plus[j] - ns.s_minus[j]) <= 1e-15, "strength split");
        }
    }

    // Adam zero-gradient identity
    {
        Tensor p = rand_tensor({5, 5});
        const Tensor before = p;
        AdamState st(p.shape(), {});
        for (int i = 0; i < 10; ++i) adam_step(p, Tensor({5, 5}), st);
        check(p == before, "adam zero gradient");
    }

    // checkpoint bit-exact round trip, every family
    for (int f = 0; f < 3; ++f) {
        ModelSpec s;
        if (f == 0) s.hidden = {100, 100};
        if (f == 1) {
            s.family = Family::CNN;
            s.channels = 8;
        }
        if (f == 2) {
            s.family = Family::ViT;
            s.nhead = 4;
        }
        Rng init(300 + f);
        const Model m = build_model(s, init);
        const auto bytes = encode_checkpoint(m, 42);
        const Model back = decode_checkpoint(bytes);
        bool same = back.spec == m.spec && back.params.size() == m.params.size();
        for (std::size_t i = 0; same && i < m.params.size(); ++i) same = back.params[i].value == m.params[i].value;
        check(same && encode_checkpoint(back, 42) == bytes, "checkpoint round trip");
    }

    const double secs = seconds_since(t0);
    check(secs <= kC7Budget, "runtime");
    std::string what;
    for (const auto& f : failures) what += " " + f + ";";
    return {failures.empty(), fmt("worst grad rel. err %.2e (tol %.0e); softmax, CE, KDE, strength, Adam, checkpoint "
                                  "oracles; runtime %.1fs%s%s",
                                  worst, kGradTol, secs, failures.empty() ? "" : "; failed:", what.c_str())};
}

Outcome c8_tsne() {
    const auto t0 = Clock::now();
    std::vector<std::string> failures;
    Rng r(8008);

    // three 50-D clusters, n = 90
    std::vector<double> x;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 30; ++i)
            for (int d = 0; d < 50; ++d) x.push_back((d == c ? 10.0 : 0.0) + r.normal());

    double worst_perp = 0;
    const auto a = pairwise_affinities(x, 90, 50, 20.0);
    for (double p : a.row_perplexity) worst_perp = std::max(worst_perp, std::abs(p - 20.0));
    if (worst_perp > kPerplexityTol) failures.push_back("perplexity");

    // gradient vs central differences, n = 10
    std::vector<double> x10(50), y10(20);
    for (auto& v : x10) v = r.normal();
    for (auto& v : y10) v = r.normal();
    const auto p10 = pairwise_affinities(x10, 10, 5, 3.0);
    const auto g = tsne_gradient(p10.p, y10, 10);
    double worst_grad = 0;
    for (std::size_t k = 0; k < y10.size(); ++k) {
        auto yp = y10, ym = y10;
        yp[k] += 1e-5;
        ym[k] -= 1e-5;
        const double num = (tsne_kl(p10.p, yp, 10) - tsne_kl(p10.p, ym, 10)) / 2e-5;
        worst_grad = std::max(worst_grad, relative_error(g[k], num));
    }
    if (worst_grad >= kKlGradTol) failures.push_back("KL gradient");

    TsneParams tp;
    tp.seed = 11;
    const auto e1 = tsne_embed(x, 90, 50, tp), e2 = tsne_embed(x, 90, 50, tp);
    if (e1.y != e2.y) failures.push_back("determinism");
    std::vector<std::size_t> c[3];
    for (std::size_t i = 0; i < 90; ++i) c[i / 30].push_back(i);
    double within = 0, between = 0;
    for (int i = 0; i < 3; ++i) within += mean_distance(e1.y, c[i]) / 3;
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) between += mean_distance(e1.y, c[i], c[j]) / 3;
    if (!(within < between / 3)) failures.push_back("cluster separation");

    const double secs = seconds_since(t0);
    if (secs > kC8Budget) failures.push_back("runtime");
    std::string what;
    for (const auto& f : failures) what += " " + f + ";";
    return {failures.empty(),
            fmt("perplexity err %.1e (tol %.0e), KL grad rel. err %.1e (tol %.0e), within/between %.3f (need < 0.333), "
                "deterministic %s, runtime %.1fs%s%s",
                worst_perp, kPerplexityTol, worst_grad, kKlGradTol, within / between, e1.y == e2.y ? "yes" : "no",
                secs, failures.empty() ? "" : "; failed:", what.c_str())};
}

Outcome c9_projection(Runner& r) {
    const auto& p = r.population("dnn_mnist");
    const std::string group = whole_group_name(Family::DNN);
    const Projection proj = project_manifest(p.manifest, p.dir, group, p.cfg.projection.tsne);
    std::vector<double> y;
    std::vector<std::size_t> high, other;
    for (std::size_t i = 0; i < proj.points.size(); ++i) {
        y.push_back(proj.points[i].x);
        y.push_back(proj.points[i].y);
        (is_high(proj.points[i].label) ? high : other).push_back(i);
    }
    if (high.size() < 2 || other.empty()) {
        // Not part of the verdict: the same distance test between the upper
        // and lower halves by accuracy, so the log still says something.
        std::vector<std::size_t> order(proj.points.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return proj.points[a].accuracy > proj.points[b].accuracy; });
        const std::size_t half = order.size() / 2;
        const std::vector<std::size_t> top(order.begin(), order.begin() + half), rest(order.begin() + half, order.end());
        const std::string diag =
            half >= 2 ? fmt("; diagnostic only, upper vs lower accuracy half: within %.3f vs across %.3f",
                            mean_distance(y, top), mean_distance(y, top, rest))
                      : "";
        return {false, fmt("cannot compare: %zu high and %zu non-high points in the criterion-1 cohort%s",
                           high.size(), other.size(), diag.c_str())};
    }
    const double within = mean_distance(y, high), across = mean_distance(y, high, other);
    return {within < across, fmt("%s embedding, %zu points: mean high-high distance %.3f vs high-other %.3f "
                                 "(%zu high, %zu other)",
                                 group.c_str(), proj.points.size(), within, across, high.size(), other.size())};
}

Outcome c10_determinism(Runner& r) {
    const auto& serial = r.population("dnn_mnist", 1);
    const auto& par = r.population("dnn_mnist", 4);
    const bool manifests = slurp(serial.dir / "manifest.json") == slurp(par.dir / "manifest.json");
    std::size_t same = 0;
    for (const auto& t : serial.manifest.trials)
        same += slurp(serial.dir / t.checkpoint) == slurp(par.dir / t.checkpoint);
    const std::size_t n = serial.manifest.trials.size();
    return {manifests && same == n,
            fmt("serial vs parallel-4: manifest %s, %zu/%zu checkpoints byte-identical", manifests ? "identical" : "differs",
                same, n)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"paramscope acceptance criteria"};
    std::string work = "acceptance-work", configs = "configs", cache;
    std::vector<int> only;
    app.add_option("--work", work, "Scratch directory for trained populations");
    app.add_option("--configs", configs, "Directory with the reference configs")->check(CLI::ExistingDirectory);
    app.add_option("--cache", cache, "Dataset cache");
    app.add_option("--only", only, "Run only these criteria")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    Runner runner(work, configs, cache.empty() ? default_cache_dir() : fs::path(cache));
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"high-group reproduction (DNN/MNIST)", [&] { return c1_high_group(runner); }},
        {"non-convergence reproduction", [&] { return c2_nonconvergence(runner); }},
        {"weight-statistics separation", [&] { return c3_sigma_separation(runner); }},
        {"density-peak separation", [&] { return c4_density_peak(runner); }},
        {"CNN sanity", [&] { return c5_cnn(runner); }},
        {"ViT sanity", [&] { return c6_vit(runner); }},
        {"numerical-kernel suite", [] { return c7_kernels(); }},
        {"t-SNE suite", [] { return c8_tsne(); }},
        {"projection separation", [&] { return c9_projection(runner); }},
        {"determinism and parallel equivalence", [&] { return c10_determinism(runner); }},
    };

    int failed = 0;
    nlohmann::json results = nlohmann::json::array();
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome o;
        const auto t0 = Clock::now();
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
                  << o.detail << std::endl;
        results.push_back({{"criterion", id},
                           {"name", criteria[i].first},
                           {"pass", o.pass},
                           {"detail", o.detail},
                           {"seconds", seconds_since(t0)}});
    }
    fs::create_directories(work);
    std::ofstream(fs::path(work) / "acceptance.json") << results.dump(2) << '\n';
    return failed == 0 ? 0 : 1;
}
