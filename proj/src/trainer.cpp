#include "paramscope/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "paramscope/analysis.hpp"
#include "paramscope/checkpoint.hpp"
#include "paramscope/fetch.hpp"
#include "paramscope/kernels.hpp"

namespace paramscope {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    if (!(adam.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (trials == 0) throw std::invalid_argument("trials must be >= 1");
    if (parallel == 0) throw std::invalid_argument("parallel must be >= 1");
    auto check = [&](const ModelSpec& m) {
        paramscope::validate(m, strict_paper_mode);
        if (m.input_shape != image_shape(dataset))
            throw std::invalid_argument("model input_shape does not match dataset " + std::string(to_string(dataset)));
    };
    check(model);
    for (const auto& v : variants) check(v);
}

json to_json(const TrainConfig& cfg) {
    json j{
        {"model", cfg.model},
        {"dataset", std::string(to_string(cfg.dataset))},
        {"epochs", cfg.epochs},
        {"batch_size", cfg.batch_size},
        {"optimizer", {{"name", "adam"}, {"lr", cfg.adam.lr}, {"beta1", cfg.adam.beta1},
                       {"beta2", cfg.adam.beta2}, {"eps", cfg.adam.eps}}},
        {"trials", cfg.trials},
        {"base_seed", cfg.base_seed},
        {"subset", cfg.subset},
        {"epoch_eval_size", cfg.epoch_eval_size},
        {"keep_history", cfg.keep_history},
        {"strict_paper_mode", cfg.strict_paper_mode},
    };
    if (!cfg.variants.empty()) j["variants"] = cfg.variants;
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.model = j.at("model").get<ModelSpec>();
    c.dataset = parse_dataset(j.at("dataset").get<std::string>());
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    const auto& o = j.at("optimizer");
    c.adam = {o.at("lr").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
              o.at("eps").get<double>()};
    c.trials = j.at("trials").get<std::size_t>();
    c.base_seed = j.at("base_seed").get<std::uint64_t>();
    c.subset = j.value("subset", std::size_t{0});
    c.epoch_eval_size = j.value("epoch_eval_size", std::size_t{0});
    c.keep_history = j.value("keep_history", false);
    c.strict_paper_mode = j.value("strict_paper_mode", false);
    if (j.contains("variants")) c.variants = j["variants"].get<std::vector<ModelSpec>>();
    return c;
}

std::string config_hash(const TrainConfig& cfg) {
    const std::string canon = to_json(cfg).dump();
    return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(canon.data()), canon.size()));
}

void to_json(json& j, const TrialRecord& r) {
    json stats = json::object();
    for (const auto& [g, s] : r.weight_stats) stats[g] = {{"n", s.n}, {"mean", s.mean}, {"std", s.std}};
    j = json{
        {"trial_id", r.trial_id},
        {"seed", r.seed},
        {"model", r.model},
        {"train_loss", r.train_loss},
        {"test_accuracy", r.test_accuracy},
        {"final_accuracy", r.final_accuracy},
        {"checkpoint", r.checkpoint},
        {"wall_time_s", r.wall_time_s},
        {"diverged", r.diverged},
        {"failed", r.failed},
        {"label", r.label},
        {"weight_stats", stats},
    };
    if (!r.history.empty()) j["history"] = r.history;
    if (!r.error.empty()) j["error"] = r.error;
}

namespace {

// NaN/inf are not valid JSON; store them as null and read null back as NaN.
std::vector<double> doubles_from(const json& a) {
    std::vector<double> out;
    for (const auto& v : a) out.push_back(v.is_null() ? std::nan("") : v.get<double>());
    return out;
}

}  // namespace

void from_json(const json& j, TrialRecord& r) {
    r = TrialRecord{};
    r.trial_id = j.at("trial_id").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.model = j.at("model").get<ModelSpec>();
    r.train_loss = doubles_from(j.at("train_loss"));
    r.test_accuracy = doubles_from(j.at("test_accuracy"));
    r.final_accuracy = j.at("final_accuracy").is_null() ? 0.0 : j.at("final_accuracy").get<double>();
    r.checkpoint = j.at("checkpoint").get<std::string>();
    r.wall_time_s = j.value("wall_time_s", 0.0);
    r.diverged = j.value("diverged", false);
    r.failed = j.value("failed", false);
    r.label = j.value("label", std::string{});
    r.error = j.value("error", std::string{});
    if (j.contains("history")) r.history = j["history"].get<std::vector<std::string>>();
    if (j.contains("weight_stats"))
        for (const auto& [g, s] : j["weight_stats"].items())
            r.weight_stats[g] = {s.at("n").get<std::size_t>(), s.at("mean").get<double>(), s.at("std").get<double>()};
}

json to_json(const ExperimentManifest& m) {
    json trials = json::array();
    for (const auto& t : m.trials) trials.push_back(t);
    return json{
        {"schema", "paramscope.manifest"},
        {"schema_version", kManifestSchemaVersion},
        {"toolkit_version", m.toolkit_version},
        {"config", m.config},
        {"config_hash", m.config_hash},
        {"train_size", m.train_size},
        {"dropped_per_epoch", m.dropped_per_epoch},
        {"eval_size", m.eval_size},
        {"epoch_eval_size", m.epoch_eval_size},
        {"trials", trials},
        {"warnings", m.warnings},
    };
}

ExperimentManifest manifest_from_json(const json& j) {
    if (j.value("schema", std::string{}) != "paramscope.manifest")
        throw std::runtime_error("not a paramscope manifest");
    if (j.at("schema_version").get<int>() != kManifestSchemaVersion)
        throw std::runtime_error("unsupported manifest schema_version " + j.at("schema_version").dump());
    ExperimentManifest m;
    m.toolkit_version = j.at("toolkit_version").get<std::string>();
    m.config = j.at("config");
    m.config_hash = j.at("config_hash").get<std::string>();
    m.train_size = j.at("train_size").get<std::size_t>();
    m.dropped_per_epoch = j.value("dropped_per_epoch", std::size_t{0});
    m.eval_size = j.at("eval_size").get<std::size_t>();
    m.epoch_eval_size = j.value("epoch_eval_size", m.eval_size);
    for (const auto& t : j.at("trials")) m.trials.push_back(t.get<TrialRecord>());
    m.warnings = j.value("warnings", std::vector<std::string>{});
    return m;
}

void write_manifest(const ExperimentManifest& m, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_json(m).dump(2) << '\n';
}

ExperimentManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    return manifest_from_json(json::parse(in));
}

void ProgressLog::epoch(std::size_t trial, std::size_t epoch, double loss, double acc) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "trial=%zu epoch=%zu loss=%.4f acc=%.2f", trial, epoch, loss, acc);
    line(buf);
}

void ProgressLog::line(const std::string& text) {
    if (!out_) return;
    std::lock_guard lock(mu_);
    *out_ << text << '\n' << std::flush;
}

double evaluate(const Model& model, const Dataset& test, std::size_t limit, std::size_t chunk) {
    const std::size_t n = (limit == 0 || limit > test.size()) ? test.size() : limit;
    if (n == 0) return 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t count = std::min(chunk, n - begin);
        const Batch b = slice(test, begin, count);
        const Tensor logits = forward(model, b.x);
        const std::size_t k = logits.dim(1);
        for (std::size_t i = 0; i < count; ++i) {
            // First maximum wins; NaN entries never compare greater.
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c)
                if (logits[i * k + c] > logits[i * k + best]) best = c;
            if (static_cast<int>(best) == b.y[i]) ++correct;
        }
    }
    const double pct = 100.0 * static_cast<double>(correct) / static_cast<double>(n);
    return std::round(pct * 100.0) / 100.0;
}

std::uint64_t trial_seed(std::uint64_t base_seed, std::size_t trial_id) { return split_seed(base_seed, trial_id); }

namespace {

std::string checkpoint_name(std::size_t trial_id, std::optional<std::size_t> epoch = std::nullopt) {
    char buf[64];
    if (epoch)
        std::snprintf(buf, sizeof buf, "checkpoints/trial_%04zu_epoch_%02zu.pscp", trial_id, *epoch);
    else
        std::snprintf(buf, sizeof buf, "checkpoints/trial_%04zu.pscp", trial_id);
    return buf;
}

void record_weight_stats(TrialRecord& rec, const Model& model) {
    for (const auto& g : weight_groups(model)) {
        if (g.values.empty()) continue;
        const auto s = weight_mean_std(g.values, g.name);
        rec.weight_stats[g.name] = {s.n, s.mean, s.std};
    }
}

}  // namespace

TrialRecord run_trial(const TrainConfig& cfg, std::size_t trial_id, const Dataset& train, const Dataset& test,
                      const fs::path& out_dir, ProgressLog* log) {
    const auto t0 = std::chrono::steady_clock::now();
    TrialRecord rec;
    rec.trial_id = trial_id;
    rec.seed = trial_seed(cfg.base_seed, trial_id);
    rec.model = cfg.spec_for(trial_id);

    Rng init_rng(split_seed(rec.seed, 0));
    Model model = build_model(rec.model, init_rng);
    std::vector<AdamState> opt;
    opt.reserve(model.params.size());
    for (const auto& p : model.params) opt.emplace_back(p.value.shape(), cfg.adam);

    const BatchPlan plan{cfg.batch_size, rec.seed};
    for (std::size_t epoch = 0; epoch < cfg.epochs && !rec.diverged; ++epoch) {
        double loss_sum = 0.0;
        std::size_t steps = 0;
        for (const auto& idx : batches(train.size(), plan, epoch)) {
            const Batch b = gather(train, idx);
            LossAndGrads lg = backward(model, b.x, b.y);
            if (!std::isfinite(lg.loss)) {
                rec.diverged = true;
                loss_sum = lg.loss;
                break;
            }
            try {
                // Validate every gradient before touching any parameter.
                for (const auto& g : lg.grads)
                    if (!g.all_finite()) throw NonFiniteGradient("non-finite gradient");
                for (std::size_t i = 0; i < model.params.size(); ++i)
                    adam_step(model.params[i].value, lg.grads[i], opt[i]);
            } catch (const NonFiniteGradient&) {
                rec.diverged = true;
                loss_sum = std::nan("");
                break;
            }
            loss_sum += lg.loss;
            ++steps;
        }
        const double mean_loss = rec.diverged ? loss_sum : (steps ? loss_sum / static_cast<double>(steps) : 0.0);
        const double acc = evaluate(model, test, cfg.epoch_eval_size);
        rec.train_loss.push_back(mean_loss);
        rec.test_accuracy.push_back(acc);
        if (log) log->epoch(trial_id, epoch + 1, mean_loss, acc);
        if (cfg.keep_history) {
            rec.history.push_back(checkpoint_name(trial_id, epoch + 1));
            save_checkpoint(model, rec.seed, out_dir / rec.history.back());
        }
    }
    rec.final_accuracy = evaluate(model, test);
    rec.checkpoint = checkpoint_name(trial_id);
    save_checkpoint(model, rec.seed, out_dir / rec.checkpoint);
    record_weight_stats(rec, model);
    if (!cfg.fixed_clock)
        rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

namespace {

// Activations of a batch run to tens of megabytes. glibc serves such blocks
// with mmap and returns them on free, so every step page-faults them back in;
// keeping them on the heap removes that cost.
void keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
    static std::once_flag once;
    std::call_once(once, [] {
        mallopt(M_MMAP_THRESHOLD, 32 << 20);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        mallopt(M_TOP_PAD, 64 << 20);
    });
#endif
}

}  // namespace

ExperimentManifest run_experiment(const TrainConfig& cfg, const Dataset& train, const Dataset& test,
                                  const fs::path& out_dir, ProgressLog* log) {
    cfg.validate();
    keep_large_blocks_on_heap();
    ExperimentManifest m;
    m.config = to_json(cfg);
    m.config_hash = config_hash(cfg);
    m.train_size = train.size();
    m.dropped_per_epoch = train.size() % cfg.batch_size;
    m.eval_size = test.size();
    m.epoch_eval_size = (cfg.epoch_eval_size == 0 || cfg.epoch_eval_size > test.size()) ? test.size()
                                                                                        : cfg.epoch_eval_size;
    if (m.dropped_per_epoch)
        m.warnings.push_back(std::to_string(m.dropped_per_epoch) +
                             " training examples fall in a short final batch and are dropped every epoch");
    if (m.epoch_eval_size < m.eval_size)
        m.warnings.push_back("per-epoch accuracy uses the first " + std::to_string(m.epoch_eval_size) +
                             " test examples; final accuracy uses all " + std::to_string(m.eval_size));

    m.trials.resize(cfg.trials);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t id = next++; id < cfg.trials; id = next++) {
            try {
                m.trials[id] = run_trial(cfg, id, train, test, out_dir, log);
            } catch (const std::exception& e) {
                TrialRecord r;
                r.trial_id = id;
                r.seed = trial_seed(cfg.base_seed, id);
                r.model = cfg.spec_for(id);
                r.failed = true;
                r.error = e.what();
                m.trials[id] = std::move(r);
                if (log) log->line("trial=" + std::to_string(id) + " failed: " + e.what());
            }
        }
    };
    const std::size_t workers = std::min(cfg.parallel, cfg.trials);
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
    }
    return m;
}

ExperimentManifest train_from_cache(const TrainConfig& cfg, const fs::path& cache_dir, const fs::path& out_dir,
                                    ProgressLog* log) {
    cfg.validate();
    const Dataset full = load_split(cache_dir, cfg.dataset, Split::Train);
    const Dataset test = load_split(cache_dir, cfg.dataset, Split::Test);
    const Dataset train = training_subset(full, cfg.subset, cfg.base_seed);
    auto m = run_experiment(cfg, train, test, out_dir, log);
    write_manifest(m, out_dir / "manifest.json");
    return m;
}

}  // namespace paramscope
