#include "paramscope/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "paramscope/checkpoint.hpp"
#include "paramscope/trainer.hpp"

namespace paramscope {

WeightStats weight_mean_std(std::span<const double> w, std::string group) {
    if (w.empty()) throw std::invalid_argument("weight_mean_std: empty group" + (group.empty() ? "" : " " + group));
    // Extended-precision two-pass: exact for constant groups of up to 2^11 values
    // and well inside 1e-12 of an exact reference for real weight vectors.
    const long double n = static_cast<long double>(w.size());
    long double sum = 0.0L;
    for (double v : w) sum += v;
    const double mean = static_cast<double>(sum / n);
    long double ss = 0.0L, comp = 0.0L;
    for (double v : w) {
        const long double d = static_cast<long double>(v) - mean;
        ss += d * d;
        comp += d;
    }
    const double var = std::max(0.0, static_cast<double>((ss - comp * comp / n) / n));
    return {std::move(group), w.size(), mean, std::sqrt(var)};
}

namespace {

double quantile_sorted(std::span<const double> s, double q) {
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

constexpr double kInvSqrt2Pi = 0.3989422804014327;

}  // namespace

double silverman_bandwidth(std::span<const double> w) {
    const auto st = weight_mean_std(w);
    std::vector<double> s(w.begin(), w.end());
    std::sort(s.begin(), s.end());
    const double iqr = quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25);
    const double spread = iqr > 0.0 ? std::min(st.std, iqr / 1.34) : st.std;
    return 0.9 * spread * std::pow(static_cast<double>(w.size()), -0.2);
}

double kde_at(std::span<const double> w, double h, double x) {
    if (!(h > 0.0)) throw std::invalid_argument("kde: bandwidth must be positive");
    double acc = 0.0;
    for (double v : w) {
        const double u = (x - v) / h;
        acc += std::exp(-0.5 * u * u);
    }
    return acc * kInvSqrt2Pi / (static_cast<double>(w.size()) * h);
}

double trapezoid(std::span<const double> x, std::span<const double> y) {
    double a = 0.0;
    for (std::size_t i = 1; i < x.size() && i < y.size(); ++i) a += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
    return a;
}

DensityEstimate density(std::span<const double> w, std::size_t bins, std::optional<double> bandwidth,
                        std::size_t grid_points) {
    if (w.size() < 2) throw std::invalid_argument("density: need at least 2 weights");
    if (bins == 0) throw std::invalid_argument("density: bins must be positive");
    if (grid_points < 2) throw std::invalid_argument("density: need at least 2 grid points");
    DensityEstimate d;
    const auto [lo_it, hi_it] = std::minmax_element(w.begin(), w.end());
    double lo = *lo_it, hi = *hi_it;
    const auto st = weight_mean_std(w);
    d.degenerate = !(st.std > 0.0) || lo == hi;

    // Degenerate input gets a unit-width bin around the value.
    if (lo == hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double width = (hi - lo) / static_cast<double>(bins);
    d.bin_edges.resize(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) d.bin_edges[i] = lo + width * static_cast<double>(i);
    d.bin_edges.back() = hi;
    std::vector<std::size_t> counts(bins, 0);
    for (double v : w) {
        auto k = static_cast<std::size_t>((v - lo) / width);
        counts[std::min(k, bins - 1)]++;
    }
    d.hist.resize(bins);
    const double n = static_cast<double>(w.size());
    for (std::size_t i = 0; i < bins; ++i) d.hist[i] = static_cast<double>(counts[i]) / (n * width);

    if (d.degenerate) {
        d.grid = {lo, hi};
        return d;
    }
    d.bandwidth = bandwidth ? *bandwidth : silverman_bandwidth(w);
    if (!(d.bandwidth > 0.0)) throw std::invalid_argument("density: bandwidth must be positive");
    const double g_lo = std::min(st.mean - 5.0 * st.std, *lo_it) - 4.0 * d.bandwidth;
    const double g_hi = std::max(st.mean + 5.0 * st.std, *hi_it) + 4.0 * d.bandwidth;
    d.grid.resize(grid_points);
    d.kde.resize(grid_points);
    const double step = (g_hi - g_lo) / static_cast<double>(grid_points - 1);
    for (std::size_t i = 0; i < grid_points; ++i) {
        d.grid[i] = g_lo + step * static_cast<double>(i);
        d.kde[i] = kde_at(w, d.bandwidth, d.grid[i]);
    }
    return d;
}

nlohmann::json to_json(const DensityEstimate& d) {
    return nlohmann::json{{"bin_edges", d.bin_edges}, {"hist", d.hist},           {"grid", d.grid},
                          {"kde", d.kde},             {"bandwidth", d.bandwidth}, {"degenerate", d.degenerate}};
}

double NodeStrengths::mean(std::span<const double> v) const {
    if (v.empty()) return 0.0;
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
}

NodeStrengths node_strength(const Model& model, std::string_view group) {
    const bool whole = group == whole_group_name(model.spec.family);
    NodeStrengths out;
    out.group = std::string(group);
    for (const auto& p : model.params) {
        if (p.kind != ParamKind::Weight || (!whole && p.group != group)) continue;
        const auto& t = p.value;
        std::size_t nodes = 0;
        auto push = [&](double v, std::size_t node) {
            out.s[node] += std::abs(v);
            if (v > 0) out.s_plus[node] += v;
            else out.s_minus[node] -= v;
        };
        const std::size_t base = out.s.size();
        switch (p.layout) {
            case ParamLayout::Matrix: {
                const std::size_t rows = t.dim(0), cols = t.size() / rows;
                nodes = cols;
                out.s.resize(base + nodes);
                out.s_plus.resize(base + nodes);
                out.s_minus.resize(base + nodes);
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) push(t[i * cols + j], base + j);
                break;
            }
            case ParamLayout::Kernel: {
                nodes = t.dim(0);
                const std::size_t per = t.size() / nodes;
                out.s.resize(base + nodes);
                out.s_plus.resize(base + nodes);
                out.s_minus.resize(base + nodes);
                for (std::size_t c = 0; c < nodes; ++c)
                    for (std::size_t k = 0; k < per; ++k) push(t[c * per + k], base + c);
                break;
            }
            case ParamLayout::Vector: {
                nodes = t.size();
                out.s.resize(base + nodes);
                out.s_plus.resize(base + nodes);
                out.s_minus.resize(base + nodes);
                for (std::size_t k = 0; k < nodes; ++k) push(t[k], base + k);
                break;
            }
        }
        out.segments.emplace_back(p.name, nodes);
    }
    if (out.segments.empty()) throw std::invalid_argument("node_strength: unknown group '" + std::string(group) + "'");
    return out;
}

StrengthSign parse_strength_sign(std::string_view s) {
    if (s == "abs") return StrengthSign::Abs;
    if (s == "plus" || s == "+") return StrengthSign::Plus;
    if (s == "minus" || s == "-") return StrengthSign::Minus;
    throw std::invalid_argument("unknown strength sign '" + std::string(s) + "' (abs, plus, minus)");
}

std::string_view to_string(StrengthSign s) {
    switch (s) {
        case StrengthSign::Abs: return "abs";
        case StrengthSign::Plus: return "plus";
        case StrengthSign::Minus: return "minus";
    }
    return "?";
}

void GroupThresholds::validate() const {
    if (!(0.0 <= low_min && low_min < mid_min && mid_min < high_min && high_min <= 100.0))
        throw std::invalid_argument("thresholds must satisfy 0 <= low_min < mid_min < high_min <= 100");
}

GroupThresholds default_thresholds(Family f, DatasetName d) {
    // mid starts just above the largest low accuracy observed, high at the
    // smallest high accuracy; `non` is anything under 15% with a flat loss.
    const int di = d == DatasetName::MNIST ? 0 : (d == DatasetName::FMNIST ? 1 : 2);
    static constexpr double dnn[3][2] = {{56, 95}, {76, 95}, {33, 75}};
    static constexpr double cnn[3][2] = {{96, 99.5}, {91, 99.5}, {55, 80}};
    static constexpr double vit[3][2] = {{31, 85}, {41, 74}, {21, 40}};
    const auto& row = f == Family::DNN ? dnn[di] : (f == Family::CNN ? cnn[di] : vit[di]);
    return {15.0, row[0], row[1]};
}

void to_json(nlohmann::json& j, const GroupThresholds& t) {
    j = nlohmann::json{{"low_min", t.low_min}, {"mid_min", t.mid_min}, {"high_min", t.high_min}};
}

void from_json(const nlohmann::json& j, GroupThresholds& t) {
    for (const auto& [k, _] : j.items())
        if (k != "low_min" && k != "mid_min" && k != "high_min")
            throw std::invalid_argument("unknown threshold field '" + k + "'");
    t.low_min = j.at("low_min").get<double>();
    t.mid_min = j.at("mid_min").get<double>();
    t.high_min = j.at("high_min").get<double>();
    t.validate();
}

bool detect_nonconvergence(const TrialRecord& r, const NonConvergenceTest& test) {
    if (r.train_loss.empty() || r.failed) return false;
    double lo = r.train_loss.front(), hi = lo;
    for (double v : r.train_loss) {
        if (!std::isfinite(v)) return false;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return hi - lo < test.eps_loss && r.final_accuracy >= test.chance_lo && r.final_accuracy <= test.chance_hi;
}

std::string classify(const TrialRecord& r, const GroupThresholds& t, const NonConvergenceTest& test) {
    const double a = r.final_accuracy;
    if (a >= t.high_min) return "high";
    if (a >= t.mid_min) return "mid";
    if (a >= t.low_min) return "low";
    return detect_nonconvergence(r, test) ? "non" : "low";
}

void classify_trials(std::span<TrialRecord> records, const GroupThresholds& t, const NonConvergenceTest& test) {
    t.validate();
    for (auto& r : records) r.label = classify(r, t, test);
}

std::vector<StatsPoint> stats_scatter(const ExperimentManifest& m, std::string_view group) {
    std::vector<StatsPoint> out;
    for (const auto& r : m.trials) {
        if (r.failed) continue;
        const auto it = r.weight_stats.find(std::string(group));
        if (it == r.weight_stats.end()) throw std::invalid_argument("no weight statistics for group '" + std::string(group) + "'");
        out.push_back({r.trial_id, it->second.mean, it->second.std, r.final_accuracy, r.label});
    }
    return out;
}

std::pair<double, double> strength_pair(const Model& model, std::string_view a, std::string_view b,
                                        StrengthSign sign) {
    auto pick = [&](const NodeStrengths& ns) {
        switch (sign) {
            case StrengthSign::Plus: return ns.mean(ns.s_plus);
            case StrengthSign::Minus: return ns.mean(ns.s_minus);
            default: return ns.mean(ns.s);
        }
    };
    return {pick(node_strength(model, a)), pick(node_strength(model, b))};
}

std::vector<StrengthPoint> strength_scatter(const ExperimentManifest& m, const std::filesystem::path& dir,
                                            std::string_view a, std::string_view b, StrengthSign sign) {
    std::vector<StrengthPoint> out;
    for (const auto& r : m.trials) {
        if (r.failed) continue;
        const Model model = load_checkpoint(dir / r.checkpoint);
        const auto [sa, sb] = strength_pair(model, a, b, sign);
        out.push_back({r.trial_id, sa, sb, r.final_accuracy, r.label});
    }
    return out;
}

}  // namespace paramscope
