#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "paramscope/analysis.hpp"
#include "paramscope/fetch.hpp"
#include "paramscope/trainer.hpp"
#include "paramscope/tsne.hpp"

namespace paramscope {

/// Raised for malformed or unknown configuration entries. what() reads
/// `<source>:<line>: <section>.<key>: <problem>`.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& source, std::size_t line, const std::string& field, const std::string& msg);
    std::size_t line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }

private:
    std::size_t line_;
    std::string field_;
};

struct AnalysisConfig {
    std::optional<GroupThresholds> thresholds;  ///< defaults by family and dataset
    std::size_t bins = 50;
    std::optional<double> bandwidth;            ///< Silverman when unset
    std::size_t kde_points = 201;
    NonConvergenceTest nonconvergence{};
    /// (group A, group B) pairs for strength scatters; family defaults when empty.
    std::vector<std::pair<std::string, std::string>> strength_pairs;
};

struct ProjectionConfig {
    TsneParams tsne{};
    std::vector<std::string> groups;  ///< family figure groups when empty
};

/// Plain-text config: `[section]` headers and `key = <JSON value>` lines;
/// `#` or `;` starts a comment line. Sections: experiment, model, analysis,
/// projection, output, and `mirror.<DATASET>` whose keys are file names with
/// {"url", "sha256", "member"} objects as values.
///
/// In [model], `hidden`, `channels`, `nhead` and `init_std` may be lists; the
/// cartesian product becomes the experiment's architecture sweep.
struct CliConfig {
    TrainConfig train;
    AnalysisConfig analysis;
    ProjectionConfig projection;
    std::filesystem::path out_dir = "paramscope-out";
    std::map<std::string, std::vector<MirrorFile>> mirrors;

    GroupThresholds thresholds() const;
    std::vector<std::pair<std::string, std::string>> strength_pairs() const;
    std::vector<std::string> projection_groups() const;
};

CliConfig parse_config(std::string_view text, const std::string& source = "<config>");
CliConfig load_config(const std::filesystem::path& path);

/// Fully resolved config in the same format. Parsing the output and writing
/// it again gives the same text.
std::string to_ini(const CliConfig& c);

/// Default strength pairs per family: adjacent layers plus the ends of the net.
std::vector<std::pair<std::string, std::string>> default_strength_pairs(Family f);

}  // namespace paramscope
