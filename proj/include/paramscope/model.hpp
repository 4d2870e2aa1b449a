#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "paramscope/rng.hpp"
#include "paramscope/tensor.hpp"

namespace paramscope {

enum class Family { DNN, CNN, ViT };

std::string_view to_string(Family f);
Family parse_family(std::string_view s);

struct InitSpec {
    std::string distribution = "normal";
    double mean = 0.0;
    double std = 0.05;

    friend bool operator==(const InitSpec&, const InitSpec&) = default;
};

/// Default init std: 0.05 for DNN/CNN, 0.02 for ViT.
double default_init_std(Family f);

/// Architecture description. Fields that do not apply to `family` are kept at
/// their defaults so that two equal specs serialize identically.
struct ModelSpec {
    Family family = Family::DNN;
    std::array<std::size_t, 3> input_shape{1, 28, 28};  ///< C, H, W
    std::vector<std::size_t> hidden;                    ///< DNN: h1, h2
    std::size_t channels = 0;                           ///< CNN kernel count
    std::size_t d_model = 784;                          ///< ViT
    std::size_t nhead = 0;                              ///< ViT
    std::size_t encoder_layers = 1;                     ///< ViT
    std::size_t patch_grid = 4;                         ///< ViT: grid x grid patches
    std::size_t classes = 10;
    bool global_avg_pool = false;                       ///< CNN: GAP before the FC layer
    bool prenorm = false;                               ///< ViT: pre-norm block order
    InitSpec init{};

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);

class SpecError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Throws SpecError on degenerate sizes. In strict mode, sizes must also fall
/// in the published grid: DNN hidden 5-200 (28x28 inputs) or 5-1000 (3x32x32),
/// ViT d_model=784, nhead in [2,16], one encoder layer.
void validate(const ModelSpec& spec, bool strict = false);

std::size_t input_dim(const ModelSpec& spec);

enum class ParamKind { Weight, Bias };

/// How "incoming" weights of a node are laid out, used by node strength.
enum class ParamLayout {
    Matrix,  ///< [in, out]: node j owns column j
    Kernel,  ///< [Cout, ...]: node c owns slice c
    Vector,  ///< [n]: one unit per entry
};

struct Param {
    std::string name;
    std::string group;
    ParamKind kind;
    ParamLayout layout;
    Tensor value;
};

struct Model {
    ModelSpec spec;
    std::vector<Param> params;

    const Tensor& at(std::string_view name) const;
    Tensor& at(std::string_view name);
    std::size_t param_count() const;
    std::vector<std::string> group_names() const;  ///< in first-appearance order
};

Model build_dnn(const ModelSpec& spec, Rng& rng);
Model build_cnn(const ModelSpec& spec, Rng& rng);
Model build_vit(const ModelSpec& spec, Rng& rng);
/// Dispatches on spec.family after validate(spec).
Model build_model(const ModelSpec& spec, Rng& rng);

/// Logits [B, classes] for images x [B, C, H, W].
Tensor forward(const Model& model, const Tensor& x);

struct LossAndGrads {
    double loss = 0.0;
    std::vector<Tensor> grads;  ///< congruent with model.params
};

/// Mean cross-entropy loss of the batch and its gradient for every parameter.
LossAndGrads backward(const Model& model, const Tensor& x, std::span<const int> labels);

/// Loss only (no gradient), used by finite-difference checks.
double loss(const Model& model, const Tensor& x, std::span<const int> labels);

/// Worst relative error between backward() and central differences with step
/// `delta` over up to `coords` random entries of every parameter tensor.
double grad_check(Model& model, const Tensor& x, std::span<const int> labels, double delta,
                  std::uint64_t seed, std::size_t coords = 100);

struct WeightGroup {
    std::string name;
    std::vector<double> values;
};

/// Flattened weights (biases and norm shifts excluded) per group, in parameter
/// order, followed by the whole-network group: "whole_net" for DNN, "all" otherwise.
std::vector<WeightGroup> weight_groups(const Model& model);

/// Name of the whole-network group for a family.
std::string whole_group_name(Family f);

/// Groups shown as figure panels for a family, whole-network group last.
std::vector<std::string> figure_groups(Family f);

/// Display label of a group ("FC1-FC2", "Conv1", "Attn", ...).
std::string group_label(std::string_view group);

}  // namespace paramscope
