#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "paramscope/model.hpp"

namespace paramscope {

struct ExperimentManifest;

/// Symmetric joint affinities of n points, row-major n x n.
struct AffinityMatrix {
    std::size_t n = 0;
    std::vector<double> p;
    std::vector<double> beta;             ///< 1 / (2 sigma_i^2) per row
    std::vector<double> row_perplexity;   ///< 2^H of each conditional row
    std::vector<std::string> warnings;

    double at(std::size_t i, std::size_t j) const { return p[i * n + j]; }
};

/// Conditional rows p_{j|i} calibrated by bisection on beta so that 2^H(P_i)
/// matches `perplexity` (at most 200 steps), then P = (P_cond + P_cond^T) / 2n.
/// X is row-major n x d. Rows that cannot reach the target (e.g. all
/// neighbours equidistant) keep the last beta and add a warning.
AffinityMatrix pairwise_affinities(std::span<const double> x, std::size_t n, std::size_t d, double perplexity);

/// Conditional affinities of row i for a given beta, and their perplexity.
std::vector<double> conditional_row(std::span<const double> sqdist_row, std::size_t i, double beta,
                                    double* perplexity = nullptr);

std::vector<double> squared_distances(std::span<const double> x, std::size_t n, std::size_t d);

struct TsneParams {
    double perplexity = 30.0;
    std::size_t iterations = 1000;
    double learning_rate = 200.0;  ///< upper bound, see effective_learning_rate
    double exaggeration = 12.0;
    std::size_t exaggeration_iters = 250;
    double momentum_initial = 0.5;
    double momentum_final = 0.8;
    std::size_t momentum_switch = 250;
    double init_std = 1e-4;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const TsneParams& p);
void from_json(const nlohmann::json& j, TsneParams& p);

struct Embedding {
    std::size_t n = 0;
    std::vector<double> y;           ///< row-major n x 2
    std::vector<double> kl_history;  ///< KL(P||Q) after each iteration
    double kl = 0.0;
    double perplexity = 0.0;         ///< value actually used
    double learning_rate = 0.0;      ///< step actually used
    std::vector<std::string> warnings;
};

/// Step size for n points: min(lr, max(n / (4 * exaggeration), 50)).
/// At lr = 200 the exact gradient overshoots on small cohorts and KL climbs
/// after exaggeration ends; the cap only binds below n = 9600.
double effective_learning_rate(const TsneParams& p, std::size_t n);

/// Student-t joint affinities Q of a 2-D layout and KL(P||Q).
double tsne_kl(std::span<const double> p, std::span<const double> y, std::size_t n);

/// dKL/dY = 4 sum_j (p_ij - q_ij)(y_i - y_j) / (1 + |y_i - y_j|^2).
std::vector<double> tsne_gradient(std::span<const double> p, std::span<const double> y, std::size_t n);

/// Exact t-SNE. Needs n >= 4; a perplexity above (n - 1) / 3 is lowered to
/// that value with a warning.
Embedding tsne_embed(std::span<const double> x, std::size_t n, std::size_t d, const TsneParams& params = {});

/// Readable key identifying trials with identical architecture and init.
std::string cohort_key(const ModelSpec& spec);

struct ProjectedPoint {
    std::size_t trial_id;
    std::string cohort;
    double x, y, accuracy;
    std::string label;
};

struct Projection {
    std::vector<ProjectedPoint> points;
    std::vector<std::string> warnings;
    std::vector<std::string> cohorts;  ///< first-appearance order
};

/// Embeds each cohort separately from the flattened weights of `group` in
/// every trial's checkpoint (read relative to `dir`). Cohorts smaller than 4
/// are skipped with a warning.
Projection project_manifest(const ExperimentManifest& m, const std::filesystem::path& dir, const std::string& group,
                            const TsneParams& params = {});

/// Mean pairwise Euclidean distance between point sets (or within one set
/// when `b` is empty), over the 2-D rows of `y`.
double mean_distance(std::span<const double> y, std::span<const std::size_t> a, std::span<const std::size_t> b = {});

}  // namespace paramscope
