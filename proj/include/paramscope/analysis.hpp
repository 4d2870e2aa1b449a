#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "paramscope/data.hpp"
#include "paramscope/model.hpp"

namespace paramscope {

struct TrialRecord;
struct ExperimentManifest;

struct WeightStats {
    std::string group;
    std::size_t n = 0;
    double mean = 0.0;
    double std = 0.0;  ///< population form (1/N)
};

/// Mean and population standard deviation. Throws invalid_argument when empty.
WeightStats weight_mean_std(std::span<const double> w, std::string group = {});

struct DensityEstimate {
    std::vector<double> bin_edges;  ///< bins + 1 ascending edges over [min, max]
    std::vector<double> hist;       ///< density per bin; sum(hist * width) == 1
    std::vector<double> grid;       ///< ascending KDE abscissae
    std::vector<double> kde;        ///< empty when degenerate
    double bandwidth = 0.0;
    bool degenerate = false;        ///< zero variance: histogram only
};

/// 0.9 * min(sigma, IQR/1.34) * N^(-1/5); IQR uses linear interpolation of
/// order statistics and is ignored when zero.
double silverman_bandwidth(std::span<const double> w);

/// Gaussian KDE (1/(N h)) sum phi((x - w_i) / h) at a single point.
double kde_at(std::span<const double> w, double h, double x);

/// Histogram plus Gaussian KDE. The grid covers mean +- 5 sigma, widened to
/// the data range, plus 4 bandwidths on either side.
DensityEstimate density(std::span<const double> w, std::size_t bins = 50,
                        std::optional<double> bandwidth = std::nullopt, std::size_t grid_points = 201);

nlohmann::json to_json(const DensityEstimate& d);

/// Trapezoid area under (grid, values).
double trapezoid(std::span<const double> x, std::span<const double> y);

struct NodeStrengths {
    std::string group;
    std::vector<double> s, s_plus, s_minus;
    /// Per-parameter breakdown: (parameter name, number of nodes), in order.
    std::vector<std::pair<std::string, std::size_t>> segments;

    double mean(std::span<const double> v) const;
};

/// Incoming absolute weight per node over every weight tensor of `group`
/// (the whole-network name selects all weights). Matrix [in, out]: one node
/// per column, summed over rows. Kernel [Cout, ...]: one node per output
/// channel. Vector: one node per entry.
NodeStrengths node_strength(const Model& model, std::string_view group);

enum class StrengthSign { Abs, Plus, Minus };
StrengthSign parse_strength_sign(std::string_view s);
std::string_view to_string(StrengthSign s);

// ---- accuracy groups --------------------------------------------------------

/// Bands over [0, 100]: high >= high_min, mid in [mid_min, high_min),
/// low in [low_min, mid_min), and below low_min a trial is `non` when it
/// passes the non-convergence test, otherwise `low`. A value equal to a
/// boundary goes to the upper band.
struct GroupThresholds {
    double low_min = 15.0;
    double mid_min = 56.0;
    double high_min = 95.0;

    void validate() const;  ///< 0 <= low_min < mid_min < high_min <= 100
};

GroupThresholds default_thresholds(Family f, DatasetName d);
void to_json(nlohmann::json& j, const GroupThresholds& t);
void from_json(const nlohmann::json& j, GroupThresholds& t);

struct NonConvergenceTest {
    double eps_loss = 0.05;
    double chance_lo = 8.0;
    double chance_hi = 15.0;
};

/// Loss range over epochs below eps_loss and final accuracy in the chance band.
/// Records with no epochs or non-finite losses never qualify.
bool detect_nonconvergence(const TrialRecord& r, const NonConvergenceTest& test = {});

std::string classify(const TrialRecord& r, const GroupThresholds& t, const NonConvergenceTest& test = {});
void classify_trials(std::span<TrialRecord> records, const GroupThresholds& t, const NonConvergenceTest& test = {});

/// True only for the "high" label.
inline bool is_high(std::string_view label) { return label == "high"; }

// ---- per-trial scatters -----------------------------------------------------

struct StatsPoint {
    std::size_t trial_id;
    double mean, std, accuracy;
    std::string label;
};

/// One (mu, sigma, accuracy) point per usable trial from the cached weight
/// statistics. Failed trials are skipped.
std::vector<StatsPoint> stats_scatter(const ExperimentManifest& m, std::string_view group);

struct StrengthPoint {
    std::size_t trial_id;
    double a, b, accuracy;
    std::string label;
};

/// Mean node strength over group A and group B for one model.
std::pair<double, double> strength_pair(const Model& model, std::string_view a, std::string_view b,
                                        StrengthSign sign);

/// One point per usable trial; checkpoints are read relative to `dir`.
std::vector<StrengthPoint> strength_scatter(const ExperimentManifest& m, const std::filesystem::path& dir,
                                            std::string_view a, std::string_view b, StrengthSign sign);

}  // namespace paramscope
