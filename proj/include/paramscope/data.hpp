#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "paramscope/rng.hpp"
#include "paramscope/tensor.hpp"

namespace paramscope {

enum class DatasetName { MNIST, FMNIST, CIFAR10 };
enum class Split { Train, Test };

std::string_view to_string(DatasetName d);
std::string_view to_string(Split s);
DatasetName parse_dataset(std::string_view s);

/// Image shape {C, H, W} of a dataset.
std::array<std::size_t, 3> image_shape(DatasetName d);

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MissingDataset : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Images [N, C, H, W] with pixels in [0, 1] and labels in [0, 9].
struct Dataset {
    DatasetName name = DatasetName::MNIST;
    Split split = Split::Train;
    Tensor images;
    std::vector<std::uint8_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t image_size() const noexcept { return size() ? images.size() / size() : 0; }
};

// ---- IDX (MNIST / Fashion-MNIST) ------------------------------------------
//
// images: u32 magic 0x00000803, u32 count, u32 rows, u32 cols, count*rows*cols bytes
// labels: u32 magic 0x00000801, u32 count, count bytes
// All header integers are big-endian.

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

Dataset decode_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                   DatasetName name = DatasetName::MNIST, Split split = Split::Train);
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 DatasetName name = DatasetName::MNIST, Split split = Split::Train);
std::vector<std::uint8_t> encode_idx_images(const Dataset& ds);
std::vector<std::uint8_t> encode_idx_labels(const Dataset& ds);

// ---- CIFAR-10 binary --------------------------------------------------------
//
// Records of 3073 bytes: 1 label byte then 3072 pixels, channel-planar (R, G, B
// planes of 32x32, row-major).

inline constexpr std::size_t kCifarRecord = 3073;

Dataset decode_cifar10(std::span<const std::uint8_t> bytes, Split split = Split::Train);
Dataset load_cifar10(std::span<const std::filesystem::path> batch_files, Split split = Split::Train);
std::vector<std::uint8_t> encode_cifar10(const Dataset& ds);

// ---- cache layout -----------------------------------------------------------
//
// <cache>/MNIST/{train,t10k}-{images-idx3,labels-idx1}-ubyte
// <cache>/FMNIST/ (same names as MNIST)
// <cache>/CIFAR10/data_batch_{1..5}.bin, test_batch.bin

/// $PARAMSCOPE_CACHE if set, else $HOME/.cache/paramscope.
std::filesystem::path default_cache_dir();
std::vector<std::string> dataset_files(DatasetName d);
std::vector<std::string> split_files(DatasetName d, Split s);
/// Throws MissingDataset naming the fetch command when files are absent.
Dataset load_split(const std::filesystem::path& cache_dir, DatasetName d, Split s);

// ---- subsets and batching ---------------------------------------------------

/// Fisher-Yates shuffle of [0, n) driven by rng.below().
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

/// Copy of the selected examples in the given order.
Dataset take(const Dataset& ds, std::span<const std::size_t> indices);

/// Stream under the experiment base seed that selects the training subset.
inline constexpr std::uint64_t kSubsetStream = 0xFFFF'FFFF'0000'0000ULL;
/// Epoch e of a trial shuffles with Rng(split_seed(trial_seed, kShuffleStreamBase + e)).
inline constexpr std::uint64_t kShuffleStreamBase = 1;

/// First n examples of a permutation drawn from the base seed; same for every trial.
Dataset training_subset(const Dataset& full, std::size_t n, std::uint64_t base_seed);

struct BatchPlan {
    std::size_t batch_size = 100;
    std::uint64_t trial_seed = 0;
};

/// Index lists of the full batches of `epoch`; a final short batch is dropped.
std::vector<std::vector<std::size_t>> batches(std::size_t n, const BatchPlan& plan, std::size_t epoch);

struct Batch {
    Tensor x;
    std::vector<int> y;
};
Batch gather(const Dataset& ds, std::span<const std::size_t> indices);
/// Contiguous slice [begin, begin + count).
Batch slice(const Dataset& ds, std::size_t begin, std::size_t count);

}  // namespace paramscope
