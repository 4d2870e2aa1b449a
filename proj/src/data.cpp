#include "paramscope/data.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <numeric>

namespace paramscope {

namespace fs = std::filesystem;

std::string_view to_string(DatasetName d) {
    switch (d) {
        case DatasetName::MNIST: return "MNIST";
        case DatasetName::FMNIST: return "FMNIST";
        case DatasetName::CIFAR10: return "CIFAR10";
    }
    return "?";
}

std::string_view to_string(Split s) { return s == Split::Train ? "train" : "test"; }

DatasetName parse_dataset(std::string_view s) {
    if (s == "MNIST" || s == "mnist") return DatasetName::MNIST;
    if (s == "FMNIST" || s == "fmnist" || s == "Fashion-MNIST" || s == "F-MNIST") return DatasetName::FMNIST;
    if (s == "CIFAR10" || s == "cifar10" || s == "CIFAR-10") return DatasetName::CIFAR10;
    throw std::invalid_argument("unknown dataset '" + std::string(s) + "' (expected MNIST, FMNIST or CIFAR10)");
}

std::array<std::size_t, 3> image_shape(DatasetName d) {
    return d == DatasetName::CIFAR10 ? std::array<std::size_t, 3>{3, 32, 32} : std::array<std::size_t, 3>{1, 28, 28};
}

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint8_t to_byte(double pixel) {
    const double v = std::round(pixel * 255.0);
    return static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
}

}  // namespace

Dataset decode_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels, DatasetName name,
                   Split split) {
    if (images.size() < 16) throw FormatError("IDX images: truncated header");
    if (labels.size() < 8) throw FormatError("IDX labels: truncated header");
    if (read_be32(images, 0) != kIdxImageMagic) throw FormatError("IDX images: bad magic number");
    if (read_be32(labels, 0) != kIdxLabelMagic) throw FormatError("IDX labels: bad magic number");
    const std::size_t n = read_be32(images, 4), rows = read_be32(images, 8), cols = read_be32(images, 12);
    const std::size_t nl = read_be32(labels, 4);
    if (n != nl)
        throw FormatError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(nl) + " labels");
    if (n == 0 || rows == 0 || cols == 0) throw FormatError("IDX images: empty payload");
    if (images.size() - 16 < n * rows * cols) throw FormatError("IDX images: truncated payload");
    if (labels.size() - 8 < n) throw FormatError("IDX labels: truncated payload");

    Dataset ds{name, split, Tensor({n, 1, rows, cols}), std::vector<std::uint8_t>(n)};
    const auto* px = images.data() + 16;
    for (std::size_t i = 0; i < n * rows * cols; ++i) ds.images[i] = px[i] / 255.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t y = labels[8 + i];
        if (y > 9) throw FormatError("IDX labels: label " + std::to_string(y) + " outside [0,9]");
        ds.labels[i] = y;
    }
    return ds;
}

Dataset load_idx(const fs::path& images_path, const fs::path& labels_path, DatasetName name, Split split) {
    return decode_idx(read_file(images_path), read_file(labels_path), name, split);
}

std::vector<std::uint8_t> encode_idx_images(const Dataset& ds) {
    const auto& s = ds.images.shape();
    std::vector<std::uint8_t> out;
    out.reserve(16 + ds.images.size());
    write_be32(out, kIdxImageMagic);
    write_be32(out, static_cast<std::uint32_t>(s[0]));
    write_be32(out, static_cast<std::uint32_t>(s[2]));
    write_be32(out, static_cast<std::uint32_t>(s[3]));
    for (double v : ds.images.values()) out.push_back(to_byte(v));
    return out;
}

std::vector<std::uint8_t> encode_idx_labels(const Dataset& ds) {
    std::vector<std::uint8_t> out;
    write_be32(out, kIdxLabelMagic);
    write_be32(out, static_cast<std::uint32_t>(ds.size()));
    out.insert(out.end(), ds.labels.begin(), ds.labels.end());
    return out;
}

Dataset decode_cifar10(std::span<const std::uint8_t> bytes, Split split) {
    if (bytes.empty() || bytes.size() % kCifarRecord != 0)
        throw FormatError("CIFAR-10: file length " + std::to_string(bytes.size()) + " is not a multiple of 3073");
    const std::size_t n = bytes.size() / kCifarRecord;
    Dataset ds{DatasetName::CIFAR10, split, Tensor({n, 3, 32, 32}), std::vector<std::uint8_t>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const auto* rec = bytes.data() + i * kCifarRecord;
        if (rec[0] > 9) throw FormatError("CIFAR-10: label " + std::to_string(rec[0]) + " outside [0,9]");
        ds.labels[i] = rec[0];
        for (std::size_t k = 0; k < 3072; ++k) ds.images[i * 3072 + k] = rec[1 + k] / 255.0;
    }
    return ds;
}

Dataset load_cifar10(std::span<const fs::path> batch_files, Split split) {
    std::vector<std::uint8_t> all;
    for (const auto& f : batch_files) {
        auto b = read_file(f);
        if (b.size() % kCifarRecord != 0)
            throw FormatError("CIFAR-10: " + f.string() + " length is not a multiple of 3073");
        all.insert(all.end(), b.begin(), b.end());
    }
    return decode_cifar10(all, split);
}

std::vector<std::uint8_t> encode_cifar10(const Dataset& ds) {
    std::vector<std::uint8_t> out;
    out.reserve(ds.size() * kCifarRecord);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out.push_back(ds.labels[i]);
        for (std::size_t k = 0; k < 3072; ++k) out.push_back(to_byte(ds.images[i * 3072 + k]));
    }
    return out;
}

fs::path default_cache_dir() {
    if (const char* env = std::getenv("PARAMSCOPE_CACHE"); env && *env) return env;
    if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".cache" / "paramscope";
    return fs::path(".paramscope-cache");
}

std::vector<std::string> split_files(DatasetName d, Split s) {
    if (d == DatasetName::CIFAR10) {
        if (s == Split::Test) return {"test_batch.bin"};
        return {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"};
    }
    if (s == Split::Train) return {"train-images-idx3-ubyte", "train-labels-idx1-ubyte"};
    return {"t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};
}

std::vector<std::string> dataset_files(DatasetName d) {
    auto out = split_files(d, Split::Train);
    auto test = split_files(d, Split::Test);
    out.insert(out.end(), test.begin(), test.end());
    return out;
}

Dataset load_split(const fs::path& cache_dir, DatasetName d, Split s) {
    const fs::path dir = cache_dir / std::string(to_string(d));
    std::vector<fs::path> paths;
    for (const auto& f : split_files(d, s)) {
        paths.push_back(dir / f);
        if (!fs::exists(paths.back()))
            throw MissingDataset("dataset " + std::string(to_string(d)) + " not found (missing " +
                                 paths.back().string() + "); run `paramscope fetch --config <file>` first");
    }
    if (d == DatasetName::CIFAR10) return load_cifar10(paths, s);
    return load_idx(paths[0], paths[1], d, s);
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
    return p;
}

Dataset take(const Dataset& ds, std::span<const std::size_t> indices) {
    if (indices.empty()) throw std::invalid_argument("take: empty index list");
    Shape shape = ds.images.shape();
    shape[0] = indices.size();
    const std::size_t per = ds.image_size();
    Dataset out{ds.name, ds.split, Tensor(shape), std::vector<std::uint8_t>(indices.size())};
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t src = indices[i];
        if (src >= ds.size()) throw std::out_of_range("take: index out of range");
        std::copy_n(ds.images.data() + src * per, per, out.images.data() + i * per);
        out.labels[i] = ds.labels[src];
    }
    return out;
}

Dataset training_subset(const Dataset& full, std::size_t n, std::uint64_t base_seed) {
    if (n == 0 || n >= full.size()) return full;
    Rng rng(split_seed(base_seed, kSubsetStream));
    auto perm = permutation(full.size(), rng);
    perm.resize(n);
    return take(full, perm);
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, const BatchPlan& plan, std::size_t epoch) {
    if (plan.batch_size == 0) throw std::invalid_argument("batch size must be positive");
    Rng rng(split_seed(plan.trial_seed, kShuffleStreamBase + epoch));
    const auto perm = permutation(n, rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b + plan.batch_size <= n; b += plan.batch_size)
        out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(b),
                         perm.begin() + static_cast<std::ptrdiff_t>(b + plan.batch_size));
    return out;
}

Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
    Shape shape = ds.images.shape();
    shape[0] = indices.size();
    const std::size_t per = ds.image_size();
    Batch b{Tensor(shape), std::vector<int>(indices.size())};
    for (std::size_t i = 0; i < indices.size(); ++i) {
        std::copy_n(ds.images.data() + indices[i] * per, per, b.x.data() + i * per);
        b.y[i] = ds.labels[indices[i]];
    }
    return b;
}

Batch slice(const Dataset& ds, std::size_t begin, std::size_t count) {
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), begin);
    return gather(ds, idx);
}

}  // namespace paramscope
