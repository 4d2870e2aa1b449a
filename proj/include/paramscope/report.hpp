#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "paramscope/config.hpp"

namespace paramscope {

/// A step was run before the outputs it depends on exist.
class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Logger = std::function<void(const std::string&)>;

/// Output layout under an experiment directory:
///   manifest.json, checkpoints/            train
///   analysis/{manifest.json, stats.csv, strength.csv, curves.csv,
///             density/trial_NNNN.json, density_<group>.csv, nodes/trial_NNNN.csv}
///   projection/{embedding_<group>.csv, summary.json}
///   report/{*.svg, index.json}
inline constexpr int kOutputSchemaVersion = 1;

/// Doubles in CSV output: shortest round-trip form.
std::string format_double(double v);

/// Labels every trial and writes the analysis/ directory. Returns the
/// labelled manifest.
ExperimentManifest run_analysis(const CliConfig& cfg, const std::filesystem::path& exp_dir, const Logger& log = {});

/// Embeds each configured weight group per cohort and writes projection/.
std::vector<Projection> run_projection(const CliConfig& cfg, const std::filesystem::path& exp_dir,
                                       const Logger& log = {});

/// Renders SVG figures from the analysis (and projection, when present) CSVs
/// and writes report/index.json. Throws PipelineError when analysis is missing.
void emit_report(const CliConfig& cfg, const std::filesystem::path& exp_dir, const Logger& log = {});

/// Minimal reader for the CSV files written above (no quoting inside fields
/// other than the cohort column, which is always quoted).
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace paramscope
