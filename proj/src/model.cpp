#include "paramscope/model.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

#include "paramscope/grad_check.hpp"
#include "paramscope/kernels.hpp"

namespace paramscope {

std::string_view to_string(Family f) {
    switch (f) {
        case Family::DNN: return "DNN";
        case Family::CNN: return "CNN";
        case Family::ViT: return "ViT";
    }
    return "?";
}

Family parse_family(std::string_view s) {
    if (s == "DNN" || s == "dnn") return Family::DNN;
    if (s == "CNN" || s == "cnn") return Family::CNN;
    if (s == "ViT" || s == "vit" || s == "VIT") return Family::ViT;
    throw SpecError("unknown model family '" + std::string(s) + "' (expected DNN, CNN or ViT)");
}

double default_init_std(Family f) { return f == Family::ViT ? 0.02 : 0.05; }

void to_json(nlohmann::json& j, const ModelSpec& s) {
    j = nlohmann::json{
        {"family", std::string(to_string(s.family))},
        {"input_shape", s.input_shape},
        {"hidden", s.hidden},
        {"channels", s.channels},
        {"d_model", s.d_model},
        {"nhead", s.nhead},
        {"encoder_layers", s.encoder_layers},
        {"patch_grid", s.patch_grid},
        {"classes", s.classes},
        {"global_avg_pool", s.global_avg_pool},
        {"prenorm", s.prenorm},
        {"init", {{"distribution", s.init.distribution}, {"mean", s.init.mean}, {"std", s.init.std}}},
    };
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
    static const std::vector<std::string> known = {"family", "input_shape", "hidden", "channels", "d_model",
                                                   "nhead", "encoder_layers", "patch_grid", "classes",
                                                   "global_avg_pool", "prenorm", "init"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw SpecError("unknown model field '" + key + "'");
    s = ModelSpec{};
    s.family = parse_family(j.at("family").get<std::string>());
    s.init.std = default_init_std(s.family);
    if (j.contains("input_shape")) s.input_shape = j["input_shape"].get<std::array<std::size_t, 3>>();
    if (j.contains("hidden")) s.hidden = j["hidden"].get<std::vector<std::size_t>>();
    if (j.contains("channels")) s.channels = j["channels"].get<std::size_t>();
    if (j.contains("d_model")) s.d_model = j["d_model"].get<std::size_t>();
    if (j.contains("nhead")) s.nhead = j["nhead"].get<std::size_t>();
    if (j.contains("encoder_layers")) s.encoder_layers = j["encoder_layers"].get<std::size_t>();
    if (j.contains("patch_grid")) s.patch_grid = j["patch_grid"].get<std::size_t>();
    if (j.contains("classes")) s.classes = j["classes"].get<std::size_t>();
    if (j.contains("global_avg_pool")) s.global_avg_pool = j["global_avg_pool"].get<bool>();
    if (j.contains("prenorm")) s.prenorm = j["prenorm"].get<bool>();
    if (j.contains("init")) {
        const auto& in = j["init"];
        for (const auto& [key, _] : in.items())
            if (key != "distribution" && key != "mean" && key != "std")
                throw SpecError("unknown init field '" + key + "'");
        s.init.distribution = in.value("distribution", std::string("normal"));
        s.init.mean = in.value("mean", 0.0);
        s.init.std = in.value("std", default_init_std(s.family));
    }
}

std::size_t input_dim(const ModelSpec& spec) {
    return spec.input_shape[0] * spec.input_shape[1] * spec.input_shape[2];
}

void validate(const ModelSpec& spec, bool strict) {
    const auto [c, h, w] = spec.input_shape;
    if (c == 0 || h == 0 || w == 0) throw SpecError("input_shape must be positive");
    if (spec.classes < 2) throw SpecError("classes must be >= 2");
    if (spec.init.distribution != "normal") throw SpecError("only normal initialization is supported");
    if (!(spec.init.std >= 0.0)) throw SpecError("init std must be >= 0");
    switch (spec.family) {
        case Family::DNN: {
            if (spec.hidden.size() != 2) throw SpecError("DNN needs exactly two hidden sizes");
            for (auto n : spec.hidden)
                if (n == 0) throw SpecError("DNN hidden sizes must be positive");
            if (strict) {
                const bool cifar = spec.input_shape == std::array<std::size_t, 3>{3, 32, 32};
                const std::size_t hi = cifar ? 1000 : 200;
                for (auto n : spec.hidden)
                    if (n < 5 || n > hi)
                        throw SpecError("strict mode: DNN hidden size " + std::to_string(n) + " outside [5," +
                                        std::to_string(hi) + "]");
            }
            break;
        }
        case Family::CNN:
            if (spec.channels == 0) throw SpecError("CNN needs at least one kernel (channels >= 1)");
            if (h < 3 || w < 3) throw SpecError("CNN input must be at least 3x3");
            break;
        case Family::ViT:
            if (spec.nhead == 0 || spec.d_model % spec.nhead != 0)
                throw SpecError("d_model=" + std::to_string(spec.d_model) + " is not divisible by nhead=" +
                                std::to_string(spec.nhead));
            if (spec.encoder_layers != 1) throw SpecError("only one encoder layer is supported");
            if (spec.patch_grid == 0 || h % spec.patch_grid || w % spec.patch_grid)
                throw SpecError("image size must be divisible by patch_grid");
            if (strict) {
                if (spec.d_model != 784) throw SpecError("strict mode: d_model must be 784");
                if (spec.nhead < 2 || spec.nhead > 16) throw SpecError("strict mode: nhead outside [2,16]");
            }
            break;
    }
}

const Tensor& Model::at(std::string_view name) const {
    for (const auto& p : params)
        if (p.name == name) return p.value;
    throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

Tensor& Model::at(std::string_view name) {
    return const_cast<Tensor&>(std::as_const(*this).at(name));
}

std::size_t Model::param_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
}

std::vector<std::string> Model::group_names() const {
    std::vector<std::string> out;
    for (const auto& p : params)
        if (std::find(out.begin(), out.end(), p.group) == out.end()) out.push_back(p.group);
    return out;
}

namespace {

void add_weight(Model& m, std::string name, std::string group, ParamLayout layout, const Shape& shape, Rng& rng) {
    Tensor t = normal_init(shape, m.spec.init.mean, m.spec.init.std, rng);
    m.params.push_back({std::move(name), std::move(group), ParamKind::Weight, layout, std::move(t)});
}

void add_bias(Model& m, std::string name, std::string group, std::size_t n, double fill = 0.0) {
    m.params.push_back({std::move(name), std::move(group), ParamKind::Bias, ParamLayout::Vector, Tensor({n}, fill)});
}

std::size_t conv_out_features(const ModelSpec& s) {
    if (s.global_avg_pool) return s.channels;
    return s.channels * (s.input_shape[1] - 2) * (s.input_shape[2] - 2);
}

std::size_t patch_dim(const ModelSpec& s) {
    return s.input_shape[0] * (s.input_shape[1] / s.patch_grid) * (s.input_shape[2] / s.patch_grid);
}

std::size_t token_count(const ModelSpec& s) { return s.patch_grid * s.patch_grid; }

void check_family(const ModelSpec& spec, Family f) {
    if (spec.family != f)
        throw SpecError("expected a " + std::string(to_string(f)) + " spec, got " + std::string(to_string(spec.family)));
}

void check_input(const Model& m, const Tensor& x) {
    const auto [c, h, w] = m.spec.input_shape;
    if (x.rank() != 4 || x.dim(1) != c || x.dim(2) != h || x.dim(3) != w)
        throw ShapeError("model expects input [B," + std::to_string(c) + "," + std::to_string(h) + "," +
                         std::to_string(w) + "], got " + shape_str(x.shape()));
}

}  // namespace

Model build_dnn(const ModelSpec& spec, Rng& rng) {
    check_family(spec, Family::DNN);
    validate(spec);
    Model m{spec, {}};
    const std::size_t in = input_dim(spec), h1 = spec.hidden[0], h2 = spec.hidden[1];
    add_weight(m, "ip_fc1.weight", "ip_fc1", ParamLayout::Matrix, {in, h1}, rng);
    add_bias(m, "ip_fc1.bias", "ip_fc1", h1);
    add_weight(m, "fc1_fc2.weight", "fc1_fc2", ParamLayout::Matrix, {h1, h2}, rng);
    add_bias(m, "fc1_fc2.bias", "fc1_fc2", h2);
    add_weight(m, "fc2_op.weight", "fc2_op", ParamLayout::Matrix, {h2, spec.classes}, rng);
    add_bias(m, "fc2_op.bias", "fc2_op", spec.classes);
    return m;
}

Model build_cnn(const ModelSpec& spec, Rng& rng) {
    check_family(spec, Family::CNN);
    validate(spec);
    Model m{spec, {}};
    add_weight(m, "conv1.weight", "conv1", ParamLayout::Kernel, {spec.channels, spec.input_shape[0], 3, 3}, rng);
    add_bias(m, "conv1.bias", "conv1", spec.channels);
    add_weight(m, "fc.weight", "fc", ParamLayout::Matrix, {conv_out_features(spec), spec.classes}, rng);
    add_bias(m, "fc.bias", "fc", spec.classes);
    return m;
}

Model build_vit(const ModelSpec& spec, Rng& rng) {
    check_family(spec, Family::ViT);
    validate(spec);
    Model m{spec, {}};
    const std::size_t d = spec.d_model, t = token_count(spec);
    add_weight(m, "embed.weight", "embed", ParamLayout::Matrix, {patch_dim(spec), d}, rng);
    add_bias(m, "embed.bias", "embed", d);
    add_weight(m, "embed.pos", "embed", ParamLayout::Matrix, {t, d}, rng);
    for (const char* name : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
        add_weight(m, name, "attn", ParamLayout::Matrix, {d, d}, rng);
    m.params.push_back({"norm1.scale", "norm", ParamKind::Weight, ParamLayout::Vector, Tensor({d}, 1.0)});
    add_bias(m, "norm1.shift", "norm", d);
    add_weight(m, "mlp.fc1.weight", "mlp", ParamLayout::Matrix, {d, 2 * d}, rng);
    add_bias(m, "mlp.fc1.bias", "mlp", 2 * d);
    add_weight(m, "mlp.fc2.weight", "mlp", ParamLayout::Matrix, {2 * d, d}, rng);
    add_bias(m, "mlp.fc2.bias", "mlp", d);
    m.params.push_back({"norm2.scale", "norm", ParamKind::Weight, ParamLayout::Vector, Tensor({d}, 1.0)});
    add_bias(m, "norm2.shift", "norm", d);
    add_weight(m, "head.weight", "head", ParamLayout::Matrix, {d, spec.classes}, rng);
    add_bias(m, "head.bias", "head", spec.classes);
    return m;
}

Model build_model(const ModelSpec& spec, Rng& rng) {
    switch (spec.family) {
        case Family::DNN: return build_dnn(spec, rng);
        case Family::CNN: return build_cnn(spec, rng);
        case Family::ViT: return build_vit(spec, rng);
    }
    throw SpecError("unknown family");
}

// ---------------------------------------------------------------------------
// Forward / backward per family. Each pass returns logits; when `grads` is
// non-null it is filled congruently with model.params from dlogits.

namespace {

struct Pass {
    const Model& m;
    std::vector<Tensor>* grads = nullptr;

    std::size_t index(std::string_view name) const {
        for (std::size_t i = 0; i < m.params.size(); ++i)
            if (m.params[i].name == name) return i;
        throw std::out_of_range("no parameter named '" + std::string(name) + "'");
    }
    void set(std::string_view name, Tensor g) const { (*grads)[index(name)] = std::move(g); }
};

// DNN --------------------------------------------------------------------

struct DnnCache {
    Tensor x, z1, h1, z2, h2;
};

Tensor dnn_forward(const Model& m, const Tensor& x, DnnCache& c) {
    c.x = x.reshaped({x.dim(0), input_dim(m.spec)});
    c.z1 = linear_forward(c.x, m.at("ip_fc1.weight"), m.at("ip_fc1.bias"));
    c.h1 = relu(c.z1);
    c.z2 = linear_forward(c.h1, m.at("fc1_fc2.weight"), m.at("fc1_fc2.bias"));
    c.h2 = relu(c.z2);
    return linear_forward(c.h2, m.at("fc2_op.weight"), m.at("fc2_op.bias"));
}

void dnn_backward(const Pass& p, const DnnCache& c, const Tensor& dlogits) {
    const Model& m = p.m;
    auto g3 = linear_backward(c.h2, m.at("fc2_op.weight"), dlogits);
    p.set("fc2_op.weight", std::move(g3.dW));
    p.set("fc2_op.bias", std::move(g3.db));
    auto g2 = linear_backward(c.h1, m.at("fc1_fc2.weight"), relu_backward(c.z2, g3.dx));
    p.set("fc1_fc2.weight", std::move(g2.dW));
    p.set("fc1_fc2.bias", std::move(g2.db));
    auto g1 = linear_backward(c.x, m.at("ip_fc1.weight"), relu_backward(c.z1, g2.dx), false);
    p.set("ip_fc1.weight", std::move(g1.dW));
    p.set("ip_fc1.bias", std::move(g1.db));
}

// CNN --------------------------------------------------------------------

struct CnnCache {
    Tensor x, z, h, flat;
};

Tensor cnn_forward(const Model& m, const Tensor& x, CnnCache& c) {
    c.x = x;
    c.z = conv2d_forward(x, m.at("conv1.weight"), m.at("conv1.bias"));
    c.h = relu(c.z);
    const std::size_t nb = x.dim(0), ch = c.h.dim(1), plane = c.h.dim(2) * c.h.dim(3);
    if (m.spec.global_avg_pool) {
        c.flat = Tensor({nb, ch});
        for (std::size_t i = 0; i < nb * ch; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < plane; ++k) s += c.h[i * plane + k];
            c.flat[i] = s / static_cast<double>(plane);
        }
    } else {
        c.flat = c.h.reshaped({nb, ch * plane});
    }
    return linear_forward(c.flat, m.at("fc.weight"), m.at("fc.bias"));
}

void cnn_backward(const Pass& p, const CnnCache& c, const Tensor& dlogits) {
    const Model& m = p.m;
    auto gf = linear_backward(c.flat, m.at("fc.weight"), dlogits);
    p.set("fc.weight", std::move(gf.dW));
    p.set("fc.bias", std::move(gf.db));
    Tensor dh(c.h.shape());
    const std::size_t plane = c.h.dim(2) * c.h.dim(3);
    if (m.spec.global_avg_pool) {
        for (std::size_t i = 0; i < gf.dx.size(); ++i)
            for (std::size_t k = 0; k < plane; ++k) dh[i * plane + k] = gf.dx[i] / static_cast<double>(plane);
    } else {
        dh = gf.dx.reshaped(c.h.shape());
    }
    auto gc = conv2d_backward(c.x, m.at("conv1.weight"), relu_backward(c.z, dh), false);
    p.set("conv1.weight", std::move(gc.dk));
    p.set("conv1.bias", std::move(gc.db));
}

// ViT --------------------------------------------------------------------

/// Images [B,C,H,W] -> patch rows [B*T, C*p*p]; token t = gy*grid + gx,
/// features ordered (channel, row, col) within the patch.
Tensor patchify(const ModelSpec& s, const Tensor& x) {
    const std::size_t nb = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t g = s.patch_grid, ph = h / g, pw = w / g, t = g * g, pd = ch * ph * pw;
    Tensor out({nb * t, pd});
    for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t gy = 0; gy < g; ++gy)
            for (std::size_t gx = 0; gx < g; ++gx) {
                double* row = out.data() + (b * t + gy * g + gx) * pd;
                for (std::size_t c = 0; c < ch; ++c)
                    for (std::size_t y = 0; y < ph; ++y)
                        for (std::size_t xx = 0; xx < pw; ++xx)
                            *row++ = x[((b * ch + c) * h + gy * ph + y) * w + gx * pw + xx];
            }
    return out;
}

struct VitCache {
    std::size_t nb = 0, nt = 0, d = 0;
    Tensor patches;   // [B*T, pd]
    Tensor x0;        // [B,T,d] embedded tokens + position
    Tensor attn_in;   // input to attention (x0 or LN1(x0))
    AttentionCache attn;
    LayerNormCache ln1, ln2;
    Tensor mlp_in;    // [B*T,d]
    Tensor mlp_pre;   // [B*T,2d]
    Tensor mlp_act;   // [B*T,2d]
    Tensor pooled;    // [B,d]
};

Tensor vit_forward(const Model& m, const Tensor& x, VitCache& c) {
    const ModelSpec& s = m.spec;
    c.nb = x.dim(0);
    c.nt = token_count(s);
    c.d = s.d_model;
    const std::size_t rows = c.nb * c.nt, d = c.d;
    c.patches = patchify(s, x);
    Tensor e = linear_forward(c.patches, m.at("embed.weight"), m.at("embed.bias"));
    const Tensor& pos = m.at("embed.pos");
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) e[r * d + j] += pos[(r % c.nt) * d + j];
    c.x0 = e.reshaped({c.nb, c.nt, d});

    const Tensor &wq = m.at("attn.wq"), &wk = m.at("attn.wk"), &wv = m.at("attn.wv"), &wo = m.at("attn.wo");
    Tensor block_out;
    if (!s.prenorm) {
        c.attn_in = c.x0;
        Tensor a = multi_head_attention(c.attn_in, wq, wk, wv, wo, s.nhead, &c.attn);
        add_inplace(a, c.x0);
        Tensor n1 = layer_norm(a, m.at("norm1.scale"), m.at("norm1.shift"), kLayerNormEps, &c.ln1);
        c.mlp_in = n1.reshaped({rows, d});
        c.mlp_pre = linear_forward(c.mlp_in, m.at("mlp.fc1.weight"), m.at("mlp.fc1.bias"));
        c.mlp_act = relu(c.mlp_pre);
        Tensor r2 = linear_forward(c.mlp_act, m.at("mlp.fc2.weight"), m.at("mlp.fc2.bias"));
        add_inplace(r2, c.mlp_in);
        block_out = layer_norm(r2, m.at("norm2.scale"), m.at("norm2.shift"), kLayerNormEps, &c.ln2);
    } else {
        c.attn_in = layer_norm(c.x0, m.at("norm1.scale"), m.at("norm1.shift"), kLayerNormEps, &c.ln1);
        Tensor r1 = multi_head_attention(c.attn_in, wq, wk, wv, wo, s.nhead, &c.attn);
        add_inplace(r1, c.x0);
        r1.reshape({rows, d});
        c.mlp_in = layer_norm(r1, m.at("norm2.scale"), m.at("norm2.shift"), kLayerNormEps, &c.ln2);
        c.mlp_pre = linear_forward(c.mlp_in, m.at("mlp.fc1.weight"), m.at("mlp.fc1.bias"));
        c.mlp_act = relu(c.mlp_pre);
        block_out = linear_forward(c.mlp_act, m.at("mlp.fc2.weight"), m.at("mlp.fc2.bias"));
        add_inplace(block_out, r1);
    }
    c.pooled = Tensor({c.nb, d});
    const double inv_t = 1.0 / static_cast<double>(c.nt);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) c.pooled[(r / c.nt) * d + j] += block_out[r * d + j] * inv_t;
    return linear_forward(c.pooled, m.at("head.weight"), m.at("head.bias"));
}

void vit_backward(const Pass& p, const VitCache& c, const Tensor& dlogits) {
    const Model& m = p.m;
    const ModelSpec& s = m.spec;
    const std::size_t rows = c.nb * c.nt, d = c.d;
    auto gh = linear_backward(c.pooled, m.at("head.weight"), dlogits);
    p.set("head.weight", std::move(gh.dW));
    p.set("head.bias", std::move(gh.db));
    Tensor dout({rows, d});
    const double inv_t = 1.0 / static_cast<double>(c.nt);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) dout[r * d + j] = gh.dx[(r / c.nt) * d + j] * inv_t;

    const Tensor &wq = m.at("attn.wq"), &wk = m.at("attn.wk"), &wv = m.at("attn.wv"), &wo = m.at("attn.wo");
    Tensor dx0;
    if (!s.prenorm) {
        auto ln2 = layer_norm_backward(m.at("norm2.scale"), c.ln2, dout);
        p.set("norm2.scale", std::move(ln2.dgamma));
        p.set("norm2.shift", std::move(ln2.dbeta));
        const Tensor& dr2 = ln2.dx;
        auto g2 = linear_backward(c.mlp_act, m.at("mlp.fc2.weight"), dr2);
        p.set("mlp.fc2.weight", std::move(g2.dW));
        p.set("mlp.fc2.bias", std::move(g2.db));
        auto g1 = linear_backward(c.mlp_in, m.at("mlp.fc1.weight"), relu_backward(c.mlp_pre, g2.dx));
        p.set("mlp.fc1.weight", std::move(g1.dW));
        p.set("mlp.fc1.bias", std::move(g1.db));
        Tensor dn1 = dr2;
        add_inplace(dn1, g1.dx);
        auto ln1 = layer_norm_backward(m.at("norm1.scale"), c.ln1, dn1.reshaped({c.nb, c.nt, d}));
        p.set("norm1.scale", std::move(ln1.dgamma));
        p.set("norm1.shift", std::move(ln1.dbeta));
        auto ga = attention_backward(c.attn_in, wq, wk, wv, wo, s.nhead, c.attn, ln1.dx);
        dx0 = ln1.dx;
        add_inplace(dx0, ga.dx);
        p.set("attn.wq", std::move(ga.dWq));
        p.set("attn.wk", std::move(ga.dWk));
        p.set("attn.wv", std::move(ga.dWv));
        p.set("attn.wo", std::move(ga.dWo));
    } else {
        auto g2 = linear_backward(c.mlp_act, m.at("mlp.fc2.weight"), dout);
        p.set("mlp.fc2.weight", std::move(g2.dW));
        p.set("mlp.fc2.bias", std::move(g2.db));
        auto g1 = linear_backward(c.mlp_in, m.at("mlp.fc1.weight"), relu_backward(c.mlp_pre, g2.dx));
        p.set("mlp.fc1.weight", std::move(g1.dW));
        p.set("mlp.fc1.bias", std::move(g1.db));
        auto ln2 = layer_norm_backward(m.at("norm2.scale"), c.ln2, g1.dx);
        p.set("norm2.scale", std::move(ln2.dgamma));
        p.set("norm2.shift", std::move(ln2.dbeta));
        Tensor dr1 = dout;
        add_inplace(dr1, ln2.dx);
        dr1.reshape({c.nb, c.nt, d});
        auto ga = attention_backward(c.attn_in, wq, wk, wv, wo, s.nhead, c.attn, dr1);
        p.set("attn.wq", std::move(ga.dWq));
        p.set("attn.wk", std::move(ga.dWk));
        p.set("attn.wv", std::move(ga.dWv));
        p.set("attn.wo", std::move(ga.dWo));
        auto ln1 = layer_norm_backward(m.at("norm1.scale"), c.ln1, ga.dx);
        p.set("norm1.scale", std::move(ln1.dgamma));
        p.set("norm1.shift", std::move(ln1.dbeta));
        dx0 = dr1;
        add_inplace(dx0, ln1.dx);
    }
    dx0.reshape({rows, d});
    Tensor dpos({c.nt, d});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) dpos[(r % c.nt) * d + j] += dx0[r * d + j];
    p.set("embed.pos", std::move(dpos));
    auto ge = linear_backward(c.patches, m.at("embed.weight"), dx0, false);
    p.set("embed.weight", std::move(ge.dW));
    p.set("embed.bias", std::move(ge.db));
}

}  // namespace

Tensor forward(const Model& model, const Tensor& x) {
    check_input(model, x);
    switch (model.spec.family) {
        case Family::DNN: { DnnCache c; return dnn_forward(model, x, c); }
        case Family::CNN: { CnnCache c; return cnn_forward(model, x, c); }
        case Family::ViT: { VitCache c; return vit_forward(model, x, c); }
    }
    throw SpecError("unknown family");
}

double loss(const Model& model, const Tensor& x, std::span<const int> labels) {
    return softmax_cross_entropy(forward(model, x), labels);
}

LossAndGrads backward(const Model& model, const Tensor& x, std::span<const int> labels) {
    check_input(model, x);
    LossAndGrads out;
    out.grads.resize(model.params.size());
    Pass pass{model, &out.grads};
    Tensor probs;
    auto head = [&](const Tensor& logits) {
        out.loss = softmax_cross_entropy(logits, labels, &probs);
        return softmax_cross_entropy_backward(probs, labels);
    };
    switch (model.spec.family) {
        case Family::DNN: { DnnCache c; dnn_backward(pass, c, head(dnn_forward(model, x, c))); break; }
        case Family::CNN: { CnnCache c; cnn_backward(pass, c, head(cnn_forward(model, x, c))); break; }
        case Family::ViT: { VitCache c; vit_backward(pass, c, head(vit_forward(model, x, c))); break; }
    }
    return out;
}

double grad_check(Model& model, const Tensor& x, std::span<const int> labels, double delta, std::uint64_t seed,
                  std::size_t coords) {
    const LossAndGrads lg = backward(model, x, labels);
    std::vector<Tensor*> ptrs;
    for (auto& p : model.params) ptrs.push_back(&p.value);
    Rng rng(seed);
    return finite_difference_check(ptrs, lg.grads, [&] { return loss(model, x, labels); }, delta, rng, coords);
}

std::string whole_group_name(Family f) { return f == Family::DNN ? "whole_net" : "all"; }

std::vector<WeightGroup> weight_groups(const Model& model) {
    std::vector<WeightGroup> groups;
    WeightGroup whole{whole_group_name(model.spec.family), {}};
    for (const auto& name : model.group_names()) {
        WeightGroup g{name, {}};
        for (const auto& p : model.params)
            if (p.group == name && p.kind == ParamKind::Weight)
                g.values.insert(g.values.end(), p.value.vec().begin(), p.value.vec().end());
        whole.values.insert(whole.values.end(), g.values.begin(), g.values.end());
        groups.push_back(std::move(g));
    }
    groups.push_back(std::move(whole));
    return groups;
}

std::vector<std::string> figure_groups(Family f) {
    switch (f) {
        case Family::DNN: return {"ip_fc1", "fc1_fc2", "fc2_op", "whole_net"};
        case Family::CNN: return {"conv1", "fc", "all"};
        case Family::ViT: return {"attn", "mlp", "norm", "all"};
    }
    return {};
}

std::string group_label(std::string_view g) {
    if (g == "ip_fc1") return "I/P-FC1";
    if (g == "fc1_fc2") return "FC1-FC2";
    if (g == "fc2_op") return "FC2-O/P";
    if (g == "whole_net") return "Whole Net";
    if (g == "conv1") return "Conv1";
    if (g == "fc") return "FC";
    if (g == "all") return "All";
    if (g == "attn") return "Attn";
    if (g == "mlp") return "MLP";
    if (g == "norm") return "Norm";
    if (g == "embed") return "Embed";
    if (g == "head") return "Head";
    return std::string(g);
}

}  // namespace paramscope
