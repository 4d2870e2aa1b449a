#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace paramscope {

enum class PlotKind { ConvergenceLines, MeanSigmaScatter, DensityCurves, StrengthScatter, EmbeddingScatter };

std::string_view to_string(PlotKind k);

struct PlotSpec {
    PlotKind kind = PlotKind::MeanSigmaScatter;
    std::string title;
    std::string x_label;
    std::string y_label;
};

/// One scatter mark; `id` names the CSV row it came from.
struct PlotPoint {
    double x = 0.0, y = 0.0, accuracy = 0.0;
    std::string id;
};

struct PlotLine {
    std::vector<double> x, y;
    double accuracy = 0.0;
    std::string id;
};

struct PlotData {
    std::vector<PlotPoint> points;
    std::vector<PlotLine> lines;
};

/// Accuracy colour ramp: t = clamp(acc, 0, 100) / 100, rgb = (255 t, 0, 255 (1 - t)),
/// so 0% is blue and 100% is red.
std::array<int, 3> accuracy_rgb(double accuracy);
std::string accuracy_color(double accuracy);  ///< "#rrggbb"

/// Up to ~`target` round tick positions (1, 2, 5 x 10^k steps) covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi, int target = 5);

/// Standalone SVG with axes, ticks, labels, the accuracy colour bar, and one
/// element with class "mark" per point or line. Non-finite values are
/// dropped. Output depends only on the inputs.
std::string render_svg(const PlotSpec& spec, const PlotData& data);

}  // namespace paramscope
