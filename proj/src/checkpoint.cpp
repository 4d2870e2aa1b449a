#include "paramscope/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace paramscope {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(b), std::end(b));
    out.insert(out.end(), std::begin(b), std::end(b));
}

void put_str(std::vector<std::uint8_t>& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

    template <class T>
    T get() {
        need(sizeof(T));
        std::uint8_t raw[sizeof(T)];
        std::memcpy(raw, b_.data() + off_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(raw), std::end(raw));
        off_ += sizeof(T);
        T v;
        std::memcpy(&v, raw, sizeof(T));
        return v;
    }

    std::string str() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s(reinterpret_cast<const char*>(b_.data() + off_), n);
        off_ += n;
        return s;
    }

    bool done() const { return off_ == b_.size(); }

private:
    void need(std::size_t n) const {
        if (b_.size() - off_ < n) throw CheckpointError("checkpoint: truncated data");
    }
    std::span<const std::uint8_t> b_;
    std::size_t off_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model& model, std::uint64_t seed) {
    std::vector<std::uint8_t> out{'P', 'S', 'C', 'P'};
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, seed);
    put_str(out, nlohmann::json(model.spec).dump());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.params.size()));
    for (const auto& p : model.params) {
        put_str(out, p.name);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
        for (auto d : p.value.shape()) put<std::uint64_t>(out, d);
        for (double v : p.value.values()) put<double>(out, v);
    }
    return out;
}

Model decode_checkpoint(std::span<const std::uint8_t> bytes, std::uint64_t* seed) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "PSCP", 4) != 0)
        throw CheckpointError("checkpoint: bad magic (expected PSCP)");
    Reader r(bytes.subspan(4));
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    const auto s = r.get<std::uint64_t>();
    if (seed) *seed = s;
    ModelSpec spec;
    try {
        spec = nlohmann::json::parse(r.str()).get<ModelSpec>();
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("checkpoint: bad model spec: ") + e.what());
    }
    // Build the skeleton with a zero init to recover names, groups and layouts.
    ModelSpec skeleton = spec;
    skeleton.init.std = 0.0;
    Rng rng(0);
    Model model = build_model(skeleton, rng);
    model.spec = spec;
    const auto count = r.get<std::uint32_t>();
    if (count != model.params.size()) throw CheckpointError("checkpoint: parameter count does not match spec");
    for (auto& p : model.params) {
        const std::string name = r.str();
        if (name != p.name) throw CheckpointError("checkpoint: expected parameter '" + p.name + "', got '" + name + "'");
        const auto rank = r.get<std::uint32_t>();
        Shape shape(rank);
        for (auto& d : shape) d = r.get<std::uint64_t>();
        if (shape != p.value.shape())
            throw CheckpointError("checkpoint: shape mismatch for '" + name + "': " + shape_str(shape));
        for (auto& v : p.value.values()) v = r.get<double>();
    }
    if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
    return model;
}

void save_checkpoint(const Model& model, std::uint64_t seed, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(model, seed);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Model load_checkpoint(const std::filesystem::path& path, std::uint64_t* seed) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_checkpoint(bytes, seed);
}

}  // namespace paramscope
