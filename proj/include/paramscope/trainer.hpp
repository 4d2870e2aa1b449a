#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "paramscope/adam.hpp"
#include "paramscope/data.hpp"
#include "paramscope/model.hpp"

namespace paramscope {

/// Training protocol of one experiment. `parallel` and `fixed_clock` only
/// affect how the experiment runs, never its results, and are left out of
/// the manifest and the config hash.
struct TrainConfig {
    ModelSpec model;
    /// Architecture sweep: trial i uses variants[i % size]. Empty means every
    /// trial uses `model`.
    std::vector<ModelSpec> variants;
    DatasetName dataset = DatasetName::MNIST;
    std::size_t epochs = 20;
    std::size_t batch_size = 100;
    AdamHyper adam{};
    std::size_t trials = 1;
    std::uint64_t base_seed = 0;
    std::size_t subset = 0;             ///< training examples used; 0 = full split
    std::size_t epoch_eval_size = 0;    ///< test examples scored each epoch; 0 = full split
    bool keep_history = false;          ///< also checkpoint weights after every epoch
    bool strict_paper_mode = false;

    std::size_t parallel = 1;
    bool fixed_clock = false;           ///< record wall time as 0 for byte-stable manifests

    /// Batch size, learning rate and trial count must be positive; epochs may
    /// be 0 (the record then holds the initial weights).
    void validate() const;

    const ModelSpec& spec_for(std::size_t trial_id) const {
        return variants.empty() ? model : variants[trial_id % variants.size()];
    }
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
/// SHA-256 of the canonical JSON of to_json(cfg).
std::string config_hash(const TrainConfig& cfg);

struct GroupStat {
    std::size_t n = 0;
    double mean = 0.0;
    double std = 0.0;
};

struct TrialRecord {
    std::size_t trial_id = 0;
    std::uint64_t seed = 0;
    ModelSpec model;
    std::vector<double> train_loss;     ///< mean minibatch loss per epoch
    std::vector<double> test_accuracy;  ///< % per epoch on the epoch evaluation set
    double final_accuracy = 0.0;        ///< % on the full test split
    std::string checkpoint;             ///< relative to the experiment directory
    std::vector<std::string> history;   ///< per-epoch checkpoints when keep_history
    double wall_time_s = 0.0;
    bool diverged = false;
    bool failed = false;
    std::string error;
    std::string label;                  ///< accuracy group, filled by analysis
    std::map<std::string, GroupStat> weight_stats;
};

void to_json(nlohmann::json& j, const TrialRecord& r);
void from_json(const nlohmann::json& j, TrialRecord& r);

inline constexpr int kManifestSchemaVersion = 1;

struct ExperimentManifest {
    std::string toolkit_version = PARAMSCOPE_VERSION;
    nlohmann::json config;
    std::string config_hash;
    std::size_t train_size = 0;
    std::size_t dropped_per_epoch = 0;  ///< examples left out of the final short batch
    std::size_t eval_size = 0;
    std::size_t epoch_eval_size = 0;
    std::vector<TrialRecord> trials;
    std::vector<std::string> warnings;
};

nlohmann::json to_json(const ExperimentManifest& m);
ExperimentManifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const ExperimentManifest& m, const std::filesystem::path& path);
ExperimentManifest read_manifest(const std::filesystem::path& path);

/// Thread-safe sink for progress lines `trial=3 epoch=7 loss=0.1234 acc=97.10`.
class ProgressLog {
public:
    explicit ProgressLog(std::ostream* out = nullptr) : out_(out) {}
    void epoch(std::size_t trial, std::size_t epoch, double loss, double acc);
    void line(const std::string& text);

private:
    std::ostream* out_;
    std::mutex mu_;
};

/// Percentage of argmax(logits) == label over the first `limit` examples
/// (all when 0), rounded to 2 decimals.
double evaluate(const Model& model, const Dataset& test, std::size_t limit = 0, std::size_t chunk = 100);

/// Derived seed of a trial: split_seed(base_seed, trial_id).
std::uint64_t trial_seed(std::uint64_t base_seed, std::size_t trial_id);

/// One seeded trial: init from split(seed, 0), `epochs` of shuffled minibatch
/// Adam, test accuracy after every epoch, final checkpoint under
/// `out_dir/checkpoints`. Non-finite loss or gradient stops training and marks
/// the record diverged.
TrialRecord run_trial(const TrainConfig& cfg, std::size_t trial_id, const Dataset& train, const Dataset& test,
                      const std::filesystem::path& out_dir, ProgressLog* log = nullptr);

/// All trials, `cfg.parallel` at a time. Per-trial exceptions are recorded
/// in the trial (failed = true) and do not stop the others.
ExperimentManifest run_experiment(const TrainConfig& cfg, const Dataset& train, const Dataset& test,
                                  const std::filesystem::path& out_dir, ProgressLog* log = nullptr);

/// Whole-dataset convenience: loads the splits from `cache_dir`, applies the
/// subset, runs, and writes `out_dir/manifest.json`.
ExperimentManifest train_from_cache(const TrainConfig& cfg, const std::filesystem::path& cache_dir,
                                    const std::filesystem::path& out_dir, ProgressLog* log = nullptr);

}  // namespace paramscope
