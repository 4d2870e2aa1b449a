#include "paramscope/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "paramscope/checkpoint.hpp"
#include "paramscope/rng.hpp"
#include "paramscope/trainer.hpp"

namespace paramscope {

std::vector<double> squared_distances(std::span<const double> x, std::size_t n, std::size_t d) {
    if (x.size() != n * d) throw std::invalid_argument("tsne: X must hold n*d values");
    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double t = x[i * d + k] - x[j * d + k];
                s += t * t;
            }
            dist[i * n + j] = dist[j * n + i] = s;
        }
    return dist;
}

std::vector<double> conditional_row(std::span<const double> sqdist_row, std::size_t i, double beta,
                                    double* perplexity) {
    const std::size_t n = sqdist_row.size();
    // Shift by the nearest distance so the largest weight is exp(0).
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
        if (j != i) dmin = std::min(dmin, sqdist_row[j]);
    std::vector<double> row(n, 0.0);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        row[j] = std::exp(-beta * (sqdist_row[j] - dmin));
        sum += row[j];
    }
    double h = 0.0;  // entropy in nats
    for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        row[j] /= sum;
        if (row[j] > 0.0) h -= row[j] * std::log(row[j]);
    }
    if (perplexity) *perplexity = std::exp(h);
    return row;
}

AffinityMatrix pairwise_affinities(std::span<const double> x, std::size_t n, std::size_t d, double perplexity) {
    if (n < 4) throw std::invalid_argument("tsne: need at least 4 points, got " + std::to_string(n));
    if (!(perplexity > 0.0) || perplexity >= static_cast<double>(n))
        throw std::invalid_argument("tsne: perplexity must be in (0, n)");
    const auto dist = squared_distances(x, n, d);
    AffinityMatrix a;
    a.n = n;
    a.beta.assign(n, 1.0);
    a.row_perplexity.assign(n, 0.0);
    std::vector<double> cond(n * n, 0.0);

    for (std::size_t i = 0; i < n; ++i) {
        const std::span<const double> drow(dist.data() + i * n, n);
        // Start from the scale of the data so the search begins near the answer.
        double mean_d = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean_d += drow[j];
        mean_d /= static_cast<double>(n - 1);
        double beta = mean_d > 0.0 ? 1.0 / mean_d : 1.0;
        double lo = 0.0, hi = std::numeric_limits<double>::infinity();
        double perp = 0.0;
        std::vector<double> row;
        bool ok = false;
        for (int it = 0; it < 200; ++it) {
            row = conditional_row(drow, i, beta, &perp);
            if (std::abs(perp - perplexity) < 1e-9 * perplexity) {
                ok = true;
                break;
            }
            // Larger beta sharpens the row and lowers its perplexity.
            if (perp > perplexity) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        if (!ok && std::abs(perp - perplexity) >= 1e-3)
            a.warnings.push_back("row " + std::to_string(i) + ": perplexity calibration reached " +
                                 std::to_string(perp) + " instead of " + std::to_string(perplexity) +
                                 " (duplicate or equidistant neighbours)");
        a.beta[i] = beta;
        a.row_perplexity[i] = perp;
        std::copy(row.begin(), row.end(), cond.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    a.p.assign(n * n, 0.0);
    const double denom = 2.0 * static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) a.p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / denom;
    return a;
}

void to_json(nlohmann::json& j, const TsneParams& p) {
    j = nlohmann::json{{"perplexity", p.perplexity},
                       {"iterations", p.iterations},
                       {"learning_rate", p.learning_rate},
                       {"exaggeration", p.exaggeration},
                       {"exaggeration_iters", p.exaggeration_iters},
                       {"momentum_initial", p.momentum_initial},
                       {"momentum_final", p.momentum_final},
                       {"momentum_switch", p.momentum_switch},
                       {"init_std", p.init_std},
                       {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, TsneParams& p) {
    TsneParams d;
    const nlohmann::json defaults = d;
    for (const auto& [k, _] : j.items())
        if (!defaults.contains(k)) throw std::invalid_argument("unknown projection field '" + k + "'");
    p.perplexity = j.value("perplexity", d.perplexity);
    p.iterations = j.value("iterations", d.iterations);
    p.learning_rate = j.value("learning_rate", d.learning_rate);
    p.exaggeration = j.value("exaggeration", d.exaggeration);
    p.exaggeration_iters = j.value("exaggeration_iters", d.exaggeration_iters);
    p.momentum_initial = j.value("momentum_initial", d.momentum_initial);
    p.momentum_final = j.value("momentum_final", d.momentum_final);
    p.momentum_switch = j.value("momentum_switch", d.momentum_switch);
    p.init_std = j.value("init_std", d.init_std);
    p.seed = j.value("seed", d.seed);
}

namespace {

// Unnormalized Student-t kernel 1 / (1 + |y_i - y_j|^2) and its sum.
double student_kernel(std::span<const double> y, std::size_t n, std::vector<double>& num) {
    num.assign(n * n, 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
            const double v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = num[j * n + i] = v;
            z += 2.0 * v;
        }
    return z;
}

void gradient_into(std::span<const double> p, double p_scale, std::span<const double> y, std::size_t n,
                   std::vector<double>& num, std::vector<double>& grad) {
    const double z = student_kernel(y, n, num);
    grad.assign(2 * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double gx = 0.0, gy = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double w = num[i * n + j];
            const double m = (p_scale * p[i * n + j] - w / z) * w;
            gx += m * (y[2 * i] - y[2 * j]);
            gy += m * (y[2 * i + 1] - y[2 * j + 1]);
        }
        grad[2 * i] = 4.0 * gx;
        grad[2 * i + 1] = 4.0 * gy;
    }
}

}  // namespace

double tsne_kl(std::span<const double> p, std::span<const double> y, std::size_t n) {
    std::vector<double> num;
    const double z = student_kernel(y, n, num);
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double pij = p[i * n + j];
            if (i == j || pij <= 0.0) continue;
            kl += pij * std::log(pij / (num[i * n + j] / z));
        }
    return std::max(0.0, kl);
}

std::vector<double> tsne_gradient(std::span<const double> p, std::span<const double> y, std::size_t n) {
    std::vector<double> num, grad;
    gradient_into(p, 1.0, y, n, num, grad);
    return grad;
}

double effective_learning_rate(const TsneParams& p, std::size_t n) {
    return std::min(p.learning_rate, std::max(static_cast<double>(n) / (4.0 * p.exaggeration), 50.0));
}

Embedding tsne_embed(std::span<const double> x, std::size_t n, std::size_t d, const TsneParams& params) {
    if (n < 4) throw std::invalid_argument("tsne: need at least 4 points, got " + std::to_string(n));
    Embedding e;
    e.n = n;
    e.perplexity = params.perplexity;
    const double cap = static_cast<double>(n - 1) / 3.0;
    if (e.perplexity > cap) {
        e.warnings.push_back("perplexity " + std::to_string(params.perplexity) + " lowered to " +
                             std::to_string(cap) + " for " + std::to_string(n) + " points");
        e.perplexity = cap;
    }
    e.learning_rate = effective_learning_rate(params, n);
    if (e.learning_rate < params.learning_rate)
        e.warnings.push_back("learning rate lowered to " + std::to_string(e.learning_rate) + " for " +
                             std::to_string(n) + " points");
    const AffinityMatrix a = pairwise_affinities(x, n, d, e.perplexity);
    e.warnings.insert(e.warnings.end(), a.warnings.begin(), a.warnings.end());

    Rng rng(params.seed);
    e.y.resize(2 * n);
    for (auto& v : e.y) v = params.init_std * rng.normal();
    std::vector<double> update(2 * n, 0.0), gains(2 * n, 1.0), num, grad;

    for (std::size_t it = 0; it < params.iterations; ++it) {
        const double scale = it < params.exaggeration_iters ? params.exaggeration : 1.0;
        const double momentum = it < params.momentum_switch ? params.momentum_initial : params.momentum_final;
        gradient_into(a.p, scale, e.y, n, num, grad);
        for (std::size_t k = 0; k < 2 * n; ++k) {
            gains[k] = (grad[k] > 0.0) != (update[k] > 0.0) ? gains[k] + 0.2 : gains[k] * 0.8;
            gains[k] = std::max(gains[k], 0.01);
            update[k] = momentum * update[k] - e.learning_rate * gains[k] * grad[k];
            e.y[k] += update[k];
        }
        double mx = 0.0, my = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mx += e.y[2 * i];
            my += e.y[2 * i + 1];
        }
        mx /= static_cast<double>(n);
        my /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            e.y[2 * i] -= mx;
            e.y[2 * i + 1] -= my;
        }
        e.kl_history.push_back(tsne_kl(a.p, e.y, n));
    }
    e.kl = e.kl_history.empty() ? tsne_kl(a.p, e.y, n) : e.kl_history.back();
    for (double v : e.y)
        if (!std::isfinite(v)) throw std::runtime_error("tsne: embedding diverged");
    return e;
}

std::string cohort_key(const ModelSpec& s) {
    std::ostringstream os;
    os << to_string(s.family) << ' ' << s.input_shape[0] << 'x' << s.input_shape[1] << 'x' << s.input_shape[2];
    switch (s.family) {
        case Family::DNN:
            os << " h=";
            for (std::size_t i = 0; i < s.hidden.size(); ++i) os << (i ? "," : "") << s.hidden[i];
            break;
        case Family::CNN:
            os << " C=" << s.channels << (s.global_avg_pool ? " gap" : "");
            break;
        case Family::ViT:
            os << " d=" << s.d_model << " nhead=" << s.nhead << " layers=" << s.encoder_layers
               << " grid=" << s.patch_grid << (s.prenorm ? " prenorm" : "");
            break;
    }
    os << " init=" << s.init.distribution << "(" << s.init.mean << "," << s.init.std << ")";
    return os.str();
}

Projection project_manifest(const ExperimentManifest& m, const std::filesystem::path& dir, const std::string& group,
                            const TsneParams& params) {
    Projection out;
    std::map<std::string, std::vector<const TrialRecord*>> cohorts;
    for (const auto& r : m.trials) {
        if (r.failed) continue;
        const auto key = cohort_key(r.model);
        if (!cohorts.contains(key)) out.cohorts.push_back(key);
        cohorts[key].push_back(&r);
    }

    struct Job {
        std::string key;
        std::vector<const TrialRecord*> trials;
        std::future<Embedding> result;
    };
    std::vector<Job> jobs;
    for (const auto& key : out.cohorts) {
        const auto& trials = cohorts[key];
        if (trials.size() < 4) {
            out.warnings.push_back("cohort '" + key + "' has " + std::to_string(trials.size()) +
                                   " trials; at least 4 are needed, skipped");
            continue;
        }
        std::vector<double> x;
        std::size_t d = 0;
        for (const auto* r : trials) {
            const Model model = load_checkpoint(dir / r->checkpoint);
            if (!(model.spec == r->model))
                throw std::runtime_error("checkpoint " + r->checkpoint + " does not match its trial's model");
            const auto groups = weight_groups(model);
            const auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.name == group; });
            if (it == groups.end()) throw std::invalid_argument("unknown weight group '" + group + "'");
            if (d == 0) d = it->values.size();
            if (it->values.size() != d) throw std::runtime_error("cohort '" + key + "' mixes weight dimensions");
            x.insert(x.end(), it->values.begin(), it->values.end());
        }
        const std::size_t n = trials.size();
        jobs.push_back({key, trials, std::async(std::launch::async, [x = std::move(x), n, d, params] {
                            return tsne_embed(x, n, d, params);
                        })});
    }
    for (auto& job : jobs) {
        const Embedding e = job.result.get();
        for (const auto& w : e.warnings) out.warnings.push_back("cohort '" + job.key + "': " + w);
        for (std::size_t i = 0; i < job.trials.size(); ++i) {
            const auto* r = job.trials[i];
            out.points.push_back({r->trial_id, job.key, e.y[2 * i], e.y[2 * i + 1], r->final_accuracy, r->label});
        }
    }
    return out;
}

double mean_distance(std::span<const double> y, std::span<const std::size_t> a, std::span<const std::size_t> b) {
    double sum = 0.0;
    std::size_t count = 0;
    auto dist = [&](std::size_t i, std::size_t j) {
        return std::hypot(y[2 * i] - y[2 * j], y[2 * i + 1] - y[2 * j + 1]);
    };
    if (b.empty()) {
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = i + 1; j < a.size(); ++j, ++count) sum += dist(a[i], a[j]);
    } else {
        for (auto i : a)
            for (auto j : b) {
                sum += dist(i, j);
                ++count;
            }
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace paramscope
