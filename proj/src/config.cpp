#include "paramscope/config.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <type_traits>

namespace paramscope {

namespace fs = std::filesystem;
using nlohmann::json;

ConfigError::ConfigError(const std::string& source, std::size_t line, const std::string& field, const std::string& msg)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + (field.empty() ? "" : field + ": ") + msg),
      line_(line),
      field_(field) {}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

struct Entry {
    json value;
    std::size_t line;
    bool used = false;
};

using Section = std::map<std::string, Entry>;

struct Raw {
    std::map<std::string, Section> sections;
    std::map<std::string, std::size_t> section_lines;
};

Raw tokenize(std::string_view text, const std::string& source) {
    Raw raw;
    std::string current;
    std::size_t lineno = 0;
    std::istringstream in{std::string(text)};
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError(source, lineno, "", "unterminated section header");
            current = trim(std::string_view(t).substr(1, t.size() - 2));
            if (current.empty()) throw ConfigError(source, lineno, "", "empty section name");
            if (raw.section_lines.contains(current))
                throw ConfigError(source, lineno, current, "section appears twice");
            raw.section_lines[current] = lineno;
            raw.sections[current];
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(source, lineno, "", "expected `key = value`");
        const std::string key = trim(std::string_view(t).substr(0, eq));
        const std::string val = trim(std::string_view(t).substr(eq + 1));
        if (current.empty()) throw ConfigError(source, lineno, key, "key outside of any section");
        if (key.empty()) throw ConfigError(source, lineno, "", "missing key before `=`");
        const std::string field = current + "." + key;
        if (raw.sections[current].contains(key)) throw ConfigError(source, lineno, field, "duplicate key");
        json v;
        try {
            v = json::parse(val);
        } catch (const json::parse_error& e) {
            throw ConfigError(source, lineno, field, "value is not valid JSON (strings need double quotes): " + val);
        }
        raw.sections[current][key] = Entry{std::move(v), lineno};
    }
    return raw;
}

class Reader {
public:
    Reader(Raw& raw, std::string source) : raw_(raw), source_(std::move(source)) {}

    bool has(const std::string& sec, const std::string& key) const {
        auto s = raw_.sections.find(sec);
        return s != raw_.sections.end() && s->second.contains(key);
    }

    // Converts the value, turning type errors into line/field diagnostics.
    template <class T>
    void get(const std::string& sec, const std::string& key, T& out) {
        auto s = raw_.sections.find(sec);
        if (s == raw_.sections.end()) return;
        auto e = s->second.find(key);
        if (e == s->second.end()) return;
        e->second.used = true;
        if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
            if (!e->second.value.is_number_unsigned()) fail(sec, key, "expected a non-negative integer");
        }
        try {
            out = e->second.value.template get<T>();
        } catch (const std::exception& ex) {
            fail(sec, key, ex.what());
        }
    }

    const json* raw(const std::string& sec, const std::string& key) {
        auto s = raw_.sections.find(sec);
        if (s == raw_.sections.end()) return nullptr;
        auto e = s->second.find(key);
        if (e == s->second.end()) return nullptr;
        e->second.used = true;
        return &e->second.value;
    }

    [[noreturn]] void fail(const std::string& sec, const std::string& key, const std::string& msg) const {
        std::size_t line = 0;
        if (auto s = raw_.sections.find(sec); s != raw_.sections.end()) {
            line = raw_.section_lines.at(sec);
            if (auto e = s->second.find(key); e != s->second.end()) line = e->second.line;
        }
        throw ConfigError(source_, line, key.empty() ? sec : sec + "." + key, msg);
    }

    void reject_unused() const {
        for (const auto& [sec, entries] : raw_.sections)
            for (const auto& [key, e] : entries)
                if (!e.used) throw ConfigError(source_, e.line, sec + "." + key, "unknown key");
    }

    const std::string& source() const { return source_; }
    Raw& data() { return raw_; }

private:
    Raw& raw_;
    std::string source_;
};

const std::set<std::string> kSections{"experiment", "model", "analysis", "projection", "output"};

// A scalar or a list of scalars.
template <class T>
std::vector<T> one_or_many(Reader& r, const std::string& key, T fallback) {
    const json* v = r.raw("model", key);
    if (!v) return {fallback};
    try {
        if (v->is_array()) {
            auto out = v->get<std::vector<T>>();
            if (out.empty()) r.fail("model", key, "empty list");
            return out;
        }
        return {v->get<T>()};
    } catch (const json::exception& e) {
        r.fail("model", key, e.what());
    }
}

void read_model(Reader& r, CliConfig& c) {
    ModelSpec base;
    std::string family = "DNN";
    r.get("model", "family", family);
    try {
        base.family = parse_family(family);
    } catch (const std::exception& e) {
        r.fail("model", "family", e.what());
    }
    const auto shape = image_shape(c.train.dataset);
    base.input_shape = shape;
    base.init.std = default_init_std(base.family);
    r.get("model", "d_model", base.d_model);
    r.get("model", "encoder_layers", base.encoder_layers);
    r.get("model", "patch_grid", base.patch_grid);
    r.get("model", "classes", base.classes);
    r.get("model", "global_avg_pool", base.global_avg_pool);
    r.get("model", "prenorm", base.prenorm);
    r.get("model", "init_distribution", base.init.distribution);
    r.get("model", "init_mean", base.init.mean);
    if (base.init.distribution != "normal") r.fail("model", "init_distribution", "only \"normal\" is supported");

    std::vector<std::vector<std::size_t>> hidden{{100, 100}};
    if (const json* v = r.raw("model", "hidden")) {
        try {
            if (v->is_array() && !v->empty() && (*v)[0].is_array())
                hidden = v->get<std::vector<std::vector<std::size_t>>>();
            else
                hidden = {v->get<std::vector<std::size_t>>()};
        } catch (const json::exception& e) {
            r.fail("model", "hidden", e.what());
        }
    }
    const auto channels = one_or_many<std::size_t>(r, "channels", 8);
    const auto nheads = one_or_many<std::size_t>(r, "nhead", 4);
    const auto stds = one_or_many<double>(r, "init_std", base.init.std);

    std::vector<ModelSpec> specs;
    for (const auto& h : hidden)
        for (auto ch : channels)
            for (auto nh : nheads)
                for (auto sd : stds) {
                    ModelSpec s = base;
                    s.init.std = sd;
                    if (s.family == Family::DNN) s.hidden = h;
                    if (s.family == Family::CNN) s.channels = ch;
                    if (s.family == Family::ViT) s.nhead = nh;
                    if (std::find(specs.begin(), specs.end(), s) == specs.end()) specs.push_back(s);
                }
    for (const auto& s : specs) {
        try {
            validate(s, c.train.strict_paper_mode);
        } catch (const std::exception& e) {
            r.fail("model", "family", e.what());
        }
    }
    c.train.model = specs.front();
    if (specs.size() > 1) c.train.variants = specs;
}

void read_experiment(Reader& r, CliConfig& c) {
    auto& t = c.train;
    std::string dataset = "MNIST";
    r.get("experiment", "dataset", dataset);
    try {
        t.dataset = parse_dataset(dataset);
    } catch (const std::exception& e) {
        r.fail("experiment", "dataset", e.what());
    }
    r.get("experiment", "epochs", t.epochs);
    r.get("experiment", "batch_size", t.batch_size);
    r.get("experiment", "learning_rate", t.adam.lr);
    r.get("experiment", "adam_beta1", t.adam.beta1);
    r.get("experiment", "adam_beta2", t.adam.beta2);
    r.get("experiment", "adam_eps", t.adam.eps);
    r.get("experiment", "trials", t.trials);
    r.get("experiment", "base_seed", t.base_seed);
    r.get("experiment", "subset", t.subset);
    r.get("experiment", "epoch_eval_size", t.epoch_eval_size);
    r.get("experiment", "keep_history", t.keep_history);
    r.get("experiment", "strict_paper_mode", t.strict_paper_mode);
    r.get("experiment", "parallel", t.parallel);
    r.get("experiment", "fixed_clock", t.fixed_clock);
    if (t.batch_size == 0) r.fail("experiment", "batch_size", "must be positive");
    if (!(t.adam.lr > 0.0)) r.fail("experiment", "learning_rate", "must be positive");
    if (t.trials == 0) r.fail("experiment", "trials", "must be >= 1");
    if (t.parallel == 0) r.fail("experiment", "parallel", "must be >= 1");
}

void read_analysis(Reader& r, CliConfig& c) {
    auto& a = c.analysis;
    if (const json* v = r.raw("analysis", "thresholds")) {
        try {
            a.thresholds = v->get<GroupThresholds>();
        } catch (const std::exception& e) {
            r.fail("analysis", "thresholds", e.what());
        }
    }
    r.get("analysis", "bins", a.bins);
    if (a.bins == 0) r.fail("analysis", "bins", "must be positive");
    if (const json* v = r.raw("analysis", "bandwidth"); v && !v->is_null()) {
        if (!v->is_number() || !(v->get<double>() > 0.0)) r.fail("analysis", "bandwidth", "must be a positive number or null");
        a.bandwidth = v->get<double>();
    }
    r.get("analysis", "kde_points", a.kde_points);
    if (a.kde_points < 2) r.fail("analysis", "kde_points", "must be >= 2");
    r.get("analysis", "eps_loss", a.nonconvergence.eps_loss);
    if (const json* v = r.raw("analysis", "chance_band")) {
        std::vector<double> band;
        try {
            band = v->get<std::vector<double>>();
        } catch (const std::exception& e) {
            r.fail("analysis", "chance_band", e.what());
        }
        if (band.size() != 2 || band[0] > band[1]) r.fail("analysis", "chance_band", "expected [lo, hi] with lo <= hi");
        a.nonconvergence.chance_lo = band[0];
        a.nonconvergence.chance_hi = band[1];
    }
    r.get("analysis", "strength_pairs", a.strength_pairs);
}

void read_projection(Reader& r, CliConfig& c) {
    auto& p = c.projection.tsne;
    r.get("projection", "perplexity", p.perplexity);
    r.get("projection", "iterations", p.iterations);
    r.get("projection", "learning_rate", p.learning_rate);
    r.get("projection", "exaggeration", p.exaggeration);
    r.get("projection", "exaggeration_iters", p.exaggeration_iters);
    r.get("projection", "momentum_initial", p.momentum_initial);
    r.get("projection", "momentum_final", p.momentum_final);
    r.get("projection", "momentum_switch", p.momentum_switch);
    r.get("projection", "init_std", p.init_std);
    r.get("projection", "seed", p.seed);
    r.get("projection", "groups", c.projection.groups);
    if (!(p.perplexity > 0.0)) r.fail("projection", "perplexity", "must be positive");
    if (!(p.learning_rate > 0.0)) r.fail("projection", "learning_rate", "must be positive");
}

void read_mirrors(Reader& r, CliConfig& c) {
    for (auto& [sec, entries] : r.data().sections) {
        if (sec.rfind("mirror.", 0) != 0) continue;
        std::string dataset;
        try {
            dataset = std::string(to_string(parse_dataset(sec.substr(7))));
        } catch (const std::exception& e) {
            r.fail(sec, "", e.what());
        }
        auto& files = c.mirrors[dataset];
        for (auto& [name, e] : entries) {
            e.used = true;
            json v = e.value;
            if (!v.is_object()) r.fail(sec, name, "expected an object {\"url\": ..., \"sha256\": ...}");
            v["name"] = name;
            try {
                files.push_back(v.get<MirrorFile>());
            } catch (const std::exception& ex) {
                r.fail(sec, name, ex.what());
            }
        }
    }
}

std::string json_str(const json& j) { return j.dump(); }

}  // namespace

CliConfig parse_config(std::string_view text, const std::string& source) {
    Raw raw = tokenize(text, source);
    for (const auto& [sec, line] : raw.section_lines)
        if (!kSections.contains(sec) && sec.rfind("mirror.", 0) != 0)
            throw ConfigError(source, line, sec, "unknown section");
    Reader r(raw, source);
    CliConfig c;
    read_experiment(r, c);
    read_model(r, c);
    read_analysis(r, c);
    read_projection(r, c);
    std::string out;
    r.get("output", "dir", out);
    if (!out.empty()) c.out_dir = out;
    read_mirrors(r, c);
    r.reject_unused();
    if (c.analysis.thresholds) {
        try {
            c.analysis.thresholds->validate();
        } catch (const std::exception& e) {
            r.fail("analysis", "thresholds", e.what());
        }
    }
    return c;
}

CliConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), 0, "", "cannot open config file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

GroupThresholds CliConfig::thresholds() const {
    return analysis.thresholds ? *analysis.thresholds : default_thresholds(train.model.family, train.dataset);
}

std::vector<std::pair<std::string, std::string>> default_strength_pairs(Family f) {
    switch (f) {
        case Family::DNN: return {{"ip_fc1", "fc1_fc2"}, {"fc1_fc2", "fc2_op"}, {"ip_fc1", "fc2_op"}};
        case Family::CNN: return {{"conv1", "fc"}};
        case Family::ViT: return {{"attn", "mlp"}, {"attn", "norm"}, {"mlp", "norm"}};
    }
    return {};
}

std::vector<std::pair<std::string, std::string>> CliConfig::strength_pairs() const {
    return analysis.strength_pairs.empty() ? default_strength_pairs(train.model.family) : analysis.strength_pairs;
}

std::vector<std::string> CliConfig::projection_groups() const {
    return projection.groups.empty() ? figure_groups(train.model.family) : projection.groups;
}

std::string to_ini(const CliConfig& c) {
    std::ostringstream os;
    const auto& t = c.train;
    os << "# resolved paramscope configuration\n\n[experiment]\n";
    os << "dataset = " << json_str(std::string(to_string(t.dataset))) << '\n';
    os << "epochs = " << t.epochs << '\n';
    os << "batch_size = " << t.batch_size << '\n';
    os << "learning_rate = " << json_str(t.adam.lr) << '\n';
    os << "adam_beta1 = " << json_str(t.adam.beta1) << '\n';
    os << "adam_beta2 = " << json_str(t.adam.beta2) << '\n';
    os << "adam_eps = " << json_str(t.adam.eps) << '\n';
    os << "trials = " << t.trials << '\n';
    os << "base_seed = " << t.base_seed << '\n';
    os << "subset = " << t.subset << '\n';
    os << "epoch_eval_size = " << t.epoch_eval_size << '\n';
    os << "keep_history = " << json_str(t.keep_history) << '\n';
    os << "strict_paper_mode = " << json_str(t.strict_paper_mode) << '\n';
    os << "parallel = " << t.parallel << '\n';
    os << "fixed_clock = " << json_str(t.fixed_clock) << '\n';

    // Collect the sweep axes back from the variants.
    const auto& specs = t.variants.empty() ? std::vector<ModelSpec>{t.model} : t.variants;
    auto distinct = [&](auto get) {
        json arr = json::array();
        for (const auto& s : specs) {
            json v = get(s);
            if (std::find(arr.begin(), arr.end(), v) == arr.end()) arr.push_back(v);
        }
        return arr.size() == 1 ? arr[0] : arr;
    };
    const auto& m = t.model;
    os << "\n[model]\n";
    os << "family = " << json_str(std::string(to_string(m.family))) << '\n';
    if (m.family == Family::DNN) {
        json h = json::array();
        for (const auto& s : specs)
            if (std::find(h.begin(), h.end(), json(s.hidden)) == h.end()) h.push_back(s.hidden);
        os << "hidden = " << json_str(h.size() == 1 ? h[0] : h) << '\n';
    }
    if (m.family == Family::CNN) {
        os << "channels = " << json_str(distinct([](const ModelSpec& s) { return json(s.channels); })) << '\n';
        os << "global_avg_pool = " << json_str(m.global_avg_pool) << '\n';
    }
    if (m.family == Family::ViT) {
        os << "d_model = " << m.d_model << '\n';
        os << "nhead = " << json_str(distinct([](const ModelSpec& s) { return json(s.nhead); })) << '\n';
        os << "encoder_layers = " << m.encoder_layers << '\n';
        os << "patch_grid = " << m.patch_grid << '\n';
        os << "prenorm = " << json_str(m.prenorm) << '\n';
    }
    os << "classes = " << m.classes << '\n';
    os << "init_distribution = " << json_str(m.init.distribution) << '\n';
    os << "init_mean = " << json_str(m.init.mean) << '\n';
    os << "init_std = " << json_str(distinct([](const ModelSpec& s) { return json(s.init.std); })) << '\n';

    const auto& a = c.analysis;
    os << "\n[analysis]\n";
    os << "thresholds = " << json_str(json(c.thresholds())) << '\n';
    os << "bins = " << a.bins << '\n';
    os << "bandwidth = " << (a.bandwidth ? json_str(*a.bandwidth) : "null") << '\n';
    os << "kde_points = " << a.kde_points << '\n';
    os << "eps_loss = " << json_str(a.nonconvergence.eps_loss) << '\n';
    os << "chance_band = " << json_str(json::array({a.nonconvergence.chance_lo, a.nonconvergence.chance_hi})) << '\n';
    os << "strength_pairs = " << json_str(json(c.strength_pairs())) << '\n';

    const auto& p = c.projection.tsne;
    os << "\n[projection]\n";
    os << "perplexity = " << json_str(p.perplexity) << '\n';
    os << "iterations = " << p.iterations << '\n';
    os << "learning_rate = " << json_str(p.learning_rate) << '\n';
    os << "exaggeration = " << json_str(p.exaggeration) << '\n';
    os << "exaggeration_iters = " << p.exaggeration_iters << '\n';
    os << "momentum_initial = " << json_str(p.momentum_initial) << '\n';
    os << "momentum_final = " << json_str(p.momentum_final) << '\n';
    os << "momentum_switch = " << p.momentum_switch << '\n';
    os << "init_std = " << json_str(p.init_std) << '\n';
    os << "seed = " << p.seed << '\n';
    os << "groups = " << json_str(json(c.projection_groups())) << '\n';

    os << "\n[output]\ndir = " << json_str(c.out_dir.string()) << '\n';
    for (const auto& [dataset, files] : c.mirrors) {
        os << "\n[mirror." << dataset << "]\n";
        for (const auto& f : files) {
            json v = f;
            v.erase("name");
            os << f.name << " = " << json_str(v) << '\n';
        }
    }
    return os.str();
}

}  // namespace paramscope
