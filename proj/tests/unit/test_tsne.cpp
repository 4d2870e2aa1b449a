#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "oracle_values.hpp"
#include "paramscope/checkpoint.hpp"
#include "paramscope/trainer.hpp"
#include "paramscope/tsne.hpp"
#include "test_util.hpp"

using namespace paramscope;

namespace {

// Three isotropic 50-D Gaussian clusters of 30 points, centres 10 apart.
std::vector<double> three_clusters(std::uint64_t seed) {
    Rng r(seed);
    std::vector<double> x;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 30; ++i)
            for (int d = 0; d < 50; ++d) x.push_back((d == c ? 10.0 : 0.0) + r.normal());
    return x;
}

std::vector<std::size_t> range(std::size_t a, std::size_t b) {
    std::vector<std::size_t> v(b - a);
    std::iota(v.begin(), v.end(), a);
    return v;
}

double entropy_perplexity(std::span<const double> p) {
    double h = 0;
    for (double v : p)
        if (v > 0) h -= v * std::log2(v);
    return std::exp2(h);
}

}  // namespace

TEST(Affinities, FourEquidistantPoints) {
    // corners of a regular tetrahedron
    const std::vector<double> x{1, 1, 1, 1, -1, -1, -1, 1, -1, -1, -1, 1};
    const auto a = pairwise_affinities(x, 4, 3, 2.0);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a.at(i, j), i == j ? 0.0 : 1.0 / 12.0, 1e-15);
}

TEST(Affinities, MatchReferenceCalibration) {
    const auto a = pairwise_affinities(oracle::kAffinityPoints, 6, 2, 2.0);
    for (std::size_t i = 0; i < 36; ++i)
        EXPECT_NEAR(a.p[i], oracle::kAffinity[i], 1e-3 * oracle::kAffinity[i] + 1e-12) << i;
}

TEST(Affinities, RowPerplexityWithinTolerance) {
    const auto x = three_clusters(3);
    const auto d2 = squared_distances(x, 90, 50);
    for (double perp : {5.0, 15.0, 29.0}) {
        const auto a = pairwise_affinities(x, 90, 50, perp);
        for (std::size_t i = 0; i < 90; ++i) {
            const auto row = conditional_row(std::span(d2).subspan(i * 90, 90), i, a.beta[i]);
            EXPECT_NEAR(entropy_perplexity(row), perp, 1e-3);
            EXPECT_NEAR(a.row_perplexity[i], perp, 1e-3);
        }
    }
}

TEST(Affinities, SymmetricUnitMass) {
    const auto x = three_clusters(4);
    const auto a = pairwise_affinities(x, 90, 50, 20.0);
    double total = 0;
    for (std::size_t i = 0; i < 90; ++i)
        for (std::size_t j = 0; j < 90; ++j) {
            EXPECT_EQ(a.at(i, j), a.at(j, i));
            EXPECT_GE(a.at(i, j), 0.0);
            total += a.at(i, j);
        }
    EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Affinities, TightClustersKeepMassInside) {
    const auto x = three_clusters(5);
    const auto a = pairwise_affinities(x, 90, 50, 10.0);
    double within = 0, across = 0;
    for (std::size_t i = 0; i < 90; ++i)
        for (std::size_t j = 0; j < 90; ++j) (i / 30 == j / 30 ? within : across) += a.at(i, j);
    EXPECT_GT(within, across);
}

TEST(Affinities, ErrorsAndDuplicates) {
    const std::vector<double> three{0, 1, 2};
    EXPECT_ANY_THROW(pairwise_affinities(three, 3, 1, 1.0));
    const std::vector<double> same(8, 0.5);
    const auto a = pairwise_affinities(same, 4, 2, 3.5);
    EXPECT_FALSE(a.warnings.empty());
    for (double v : a.p) EXPECT_TRUE(std::isfinite(v));
}

TEST(Tsne, KlNaiveOracleAndGradient) {
    Rng r(21);
    std::vector<double> x(10 * 5), y(10 * 2);
    for (auto& v : x) v = r.normal();
    for (auto& v : y) v = r.normal();
    const auto a = pairwise_affinities(x, 10, 5, 3.0);

    // naive KL: Q recomputed pair by pair
    double z = 0;
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 10; ++j)
            if (i != j) z += 1.0 / (1.0 + std::pow(y[2 * i] - y[2 * j], 2) + std::pow(y[2 * i + 1] - y[2 * j + 1], 2));
    double kl = 0;
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 10; ++j) {
            if (i == j || a.at(i, j) == 0) continue;
            const double q =
                1.0 / (1.0 + std::pow(y[2 * i] - y[2 * j], 2) + std::pow(y[2 * i + 1] - y[2 * j + 1], 2)) / z;
            kl += a.at(i, j) * std::log(a.at(i, j) / q);
        }
    EXPECT_NEAR(tsne_kl(a.p, y, 10), kl, 1e-12);
    EXPECT_GE(kl, 0.0);

    const auto g = tsne_gradient(a.p, y, 10);
    for (std::size_t k = 0; k < y.size(); ++k) {
        auto yp = y, ym = y;
        yp[k] += 1e-5;
        ym[k] -= 1e-5;
        const double num = (tsne_kl(a.p, yp, 10) - tsne_kl(a.p, ym, 10)) / 2e-5;
        EXPECT_LT(std::abs(g[k] - num) / std::max({std::abs(g[k]), std::abs(num), 1e-8}), 1e-4) << k;
    }
}

TEST(Tsne, ThreeClustersSeparate) {
    const auto x = three_clusters(7);
    TsneParams p;
    p.seed = 1;
    const auto e = tsne_embed(x, 90, 50, p);
    std::vector<std::size_t> c[3] = {range(0, 30), range(30, 60), range(60, 90)};
    double within = 0, between = 0;
    for (int i = 0; i < 3; ++i) within += mean_distance(e.y, c[i]) / 3;
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) between += mean_distance(e.y, c[i], c[j]) / 3;
    EXPECT_LT(within, between / 3.0);
}

TEST(Tsne, KlNonIncreasingAfterExaggeration) {
    const auto x = three_clusters(8);
    TsneParams p;
    p.seed = 2;
    p.iterations = 600;
    const auto e = tsne_embed(x, 90, 50, p);
    ASSERT_EQ(e.kl_history.size(), 600u);
    for (double kl : e.kl_history) EXPECT_GE(kl, 0.0);
    for (std::size_t t = p.exaggeration_iters; t + 50 < e.kl_history.size(); ++t)
        EXPECT_LE(e.kl_history[t + 50], e.kl_history[t] + 1e-6) << t;
}

TEST(Tsne, DeterministicUnderSeed) {
    const auto x = three_clusters(9);
    TsneParams p;
    p.seed = 3;
    p.iterations = 300;
    const auto a = tsne_embed(x, 90, 50, p), b = tsne_embed(x, 90, 50, p);
    EXPECT_EQ(a.y, b.y);
    p.seed = 4;
    EXPECT_NE(tsne_embed(x, 90, 50, p).y, a.y);
}

TEST(Tsne, DuplicatePairAreMutualNearestNeighbours) {
    Rng r(31);
    std::vector<double> x(20 * 5);
    for (auto& v : x) v = r.normal();
    for (int d = 0; d < 5; ++d) x[19 * 5 + d] = x[3 * 5 + d];
    TsneParams p;
    p.seed = 5;
    const auto e = tsne_embed(x, 20, 5, p);
    auto dist = [&](std::size_t i, std::size_t j) {
        return std::hypot(e.y[2 * i] - e.y[2 * j], e.y[2 * i + 1] - e.y[2 * j + 1]);
    };
    const double dup = dist(3, 19);
    for (std::size_t j = 0; j < 20; ++j)
        if (j != 3 && j != 19) {
            EXPECT_LT(dup, dist(3, j)) << j;
            EXPECT_LT(dup, dist(19, j)) << j;
        }
}

TEST(Tsne, SmallInputs) {
    const std::vector<double> x(3 * 2, 1.0);
    EXPECT_ANY_THROW(tsne_embed(x, 3, 2));
    Rng r(1);
    std::vector<double> y(10 * 3);
    for (auto& v : y) v = r.normal();
    const auto e = tsne_embed(y, 10, 3);
    EXPECT_EQ(e.perplexity, 3.0);
    ASSERT_FALSE(e.warnings.empty());
    EXPECT_NE(e.warnings[0].find("perplexity"), std::string::npos);
}

TEST(Tsne, StepSizeCappedForSmallCohorts) {
    TsneParams p;
    EXPECT_EQ(effective_learning_rate(p, 90), 50.0);
    EXPECT_EQ(effective_learning_rate(p, 4800), 100.0);
    EXPECT_EQ(effective_learning_rate(p, 20000), 200.0);
    p.learning_rate = 10;
    EXPECT_EQ(effective_learning_rate(p, 90), 10.0);
}

TEST(Tsne, ParamsJsonRejectsUnknown) {
    TsneParams p;
    p.perplexity = 12;
    nlohmann::json j = p;
    EXPECT_EQ(j.get<TsneParams>().perplexity, 12.0);
    j["perplexty"] = 3;
    EXPECT_ANY_THROW(j.get<TsneParams>());
}

// ---- projection of a manifest ------------------------------------------------------

namespace {

// Writes n checkpoints of a fixed spec; "high" trials get weights near a
// shared centre, "low" trials are scattered.
ExperimentManifest synthetic_population(const std::filesystem::path& dir, const ModelSpec& spec, std::size_t n_high,
                                        std::size_t n_low, std::size_t id0 = 0) {
    ExperimentManifest m;
    Rng centre_rng(100);
    const Model centre = build_model(spec, centre_rng);
    for (std::size_t k = 0; k < n_high + n_low; ++k) {
        const bool high = k < n_high;
        Rng r(200 + id0 + k);
        Model model = centre;
        for (auto& p : model.params)
            for (auto& v : p.value.values()) v += (high ? 0.01 : 1.0) * r.normal();
        TrialRecord t;
        t.trial_id = id0 + k;
        t.model = spec;
        t.final_accuracy = high ? 97.0 : 30.0;
        t.label = high ? "high" : "low";
        t.checkpoint = "checkpoints/trial_" + std::to_string(t.trial_id) + ".pscp";
        save_checkpoint(model, 0, dir / t.checkpoint);
        m.trials.push_back(t);
    }
    return m;
}

}  // namespace

TEST(Projection, HighGroupClustersTogether) {
    testutil::TempDir dir("proj");
    ModelSpec spec;
    spec.hidden = {6, 5};
    const auto m = synthetic_population(dir.path(), spec, 15, 15);
    TsneParams p;
    p.seed = 6;
    p.perplexity = 5;
    const auto proj = project_manifest(m, dir.path(), "whole_net", p);
    ASSERT_EQ(proj.points.size(), 30u);
    ASSERT_EQ(proj.cohorts.size(), 1u);
    std::vector<double> y;
    std::vector<std::size_t> hi, lo;
    for (std::size_t i = 0; i < proj.points.size(); ++i) {
        y.push_back(proj.points[i].x);
        y.push_back(proj.points[i].y);
        (proj.points[i].label == "high" ? hi : lo).push_back(i);
    }
    EXPECT_LT(mean_distance(y, hi), mean_distance(y, hi, lo));
}

TEST(Projection, OneCohortPerSpec) {
    testutil::TempDir dir("proj");
    ModelSpec a, b;
    a.hidden = {6, 5};
    b.hidden = {4, 4};
    auto m = synthetic_population(dir.path(), a, 5, 0);
    const auto mb = synthetic_population(dir.path(), b, 6, 0, 5);
    m.trials.insert(m.trials.end(), mb.trials.begin(), mb.trials.end());
    const auto proj = project_manifest(m, dir.path(), "whole_net");
    EXPECT_EQ(proj.cohorts.size(), 2u);
    EXPECT_EQ(proj.points.size(), 11u);
    EXPECT_NE(cohort_key(a), cohort_key(b));
}

TEST(Projection, SmallCohortSkippedWithWarning) {
    testutil::TempDir dir("proj");
    ModelSpec a;
    a.hidden = {6, 5};
    const auto m = synthetic_population(dir.path(), a, 3, 0);
    const auto proj = project_manifest(m, dir.path(), "whole_net");
    EXPECT_TRUE(proj.points.empty());
    EXPECT_FALSE(proj.warnings.empty());
}
