#include "harope/config.hpp"

#include <charconv>
#include <cstdlib>

namespace harope {

std::string SchemeSpec::text() const {
    if (tag != SchemeTag::HARoPE) return to_string(tag);
    return "harope_" + to_string(variant) + (shared ? "_shared" : "_headwise");
}

SchemeSpec SchemeSpec::parse(const std::string& s) {
    SchemeSpec spec;
    if (s.rfind("harope", 0) != 0) {
        spec.tag = scheme_tag_from_string(s);
        return spec;
    }
    spec.tag = SchemeTag::HARoPE;
    spec.variant = AdaptVariant::SVD;
    spec.shared = false;
    if (s == "harope") return spec;
    std::string rest = s.substr(6);
    if (!rest.empty() && rest[0] == '_') rest = rest.substr(1);
    const std::size_t us = rest.find('_');
    const std::string vpart = us == std::string::npos ? rest : rest.substr(0, us);
    const std::string spart = us == std::string::npos ? "" : rest.substr(us + 1);
    if (!vpart.empty()) spec.variant = adapt_variant_from_string(vpart);
    if (spart == "shared") {
        spec.shared = true;
    } else if (spart == "headwise" || spart.empty()) {
        spec.shared = false;
    } else {
        throw ConfigError("scheme '" + s + "': expected 'shared' or 'headwise'");
    }
    return spec;
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        std::size_t end = s.find(sep, start);
        if (end == std::string::npos) end = s.size();
        const std::string piece = trim(s.substr(start, end - start));
        if (!piece.empty()) out.push_back(piece);
        start = end + 1;
        if (end == s.size()) break;
    }
    return out;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0') {
        throw ConfigError("config: '" + key + "' expects a nonnegative integer, got '" + v + "'");
    }
    return static_cast<std::size_t>(x);
}

double parse_real(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0') {
        throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    }
    return x;
}

}  // namespace

void RunConfig::validate() const {
    if (blocks == 0 || heads == 0 || head_dim == 0) {
        throw ConfigError("config: model.blocks/heads/head_dim must be positive");
    }
    if (axes == 0 || axes > 3) throw ConfigError("config: model.axes must be 1..3");
    if (head_dim % (2 * axes) != 0) {
        throw ConfigError("config: model.head_dim must be divisible by 2*axes");
    }
    if (!(rope_base > 0.0)) throw ConfigError("config: model.rope_base must be positive");
    if (task != "offset" && task != "anisotropic" && task != "headmix") {
        throw ConfigError("config: task.name must be offset|anisotropic|headmix");
    }
    const std::size_t min_grid = task == "offset" ? 2 : 4;
    if (grid < min_grid) {
        throw ConfigError("config: task.grid too small for task '" + task + "'");
    }
    if (n_train == 0 || n_eval == 0) throw ConfigError("config: task.n_train/n_eval empty");
    if (batch == 0) throw ConfigError("config: train.batch must be positive");
    if (eval_interval == 0) throw ConfigError("config: train.eval_interval must be positive");
    if (seeds.empty()) throw ConfigError("config: train.seeds must not be empty");
}

std::string RunConfig::serialize() const {
    std::string out;
    out += "[model]\n";
    out += "blocks = " + std::to_string(blocks) + "\n";
    out += "heads = " + std::to_string(heads) + "\n";
    out += "head_dim = " + std::to_string(head_dim) + "\n";
    out += "axes = " + std::to_string(axes) + "\n";
    out += "rope_base = " + format_double(rope_base) + "\n";
    out += "scheme = " + scheme.text() + "\n";
    out += "\n[task]\n";
    out += "name = " + task + "\n";
    out += "grid = " + std::to_string(grid) + "\n";
    out += "n_train = " + std::to_string(n_train) + "\n";
    out += "n_eval = " + std::to_string(n_eval) + "\n";
    out += "\n[train]\n";
    out += "lr = " + format_double(lr) + "\n";
    out += "steps = " + std::to_string(steps) + "\n";
    out += "batch = " + std::to_string(batch) + "\n";
    out += "lambda = " + format_double(lambda) + "\n";
    out += "eval_interval = " + std::to_string(eval_interval) + "\n";
    out += "seeds = ";
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(seeds[i]);
    }
    out += "\n";
    out += "schemes = ";
    for (std::size_t i = 0; i < schemes.size(); ++i) {
        if (i) out += ",";
        out += schemes[i].text();
    }
    out += "\n";
    out += "\n[out]\n";
    out += "dir = " + out_dir + "\n";
    return out;
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig cfg;
    std::string section;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        std::string line = trim(text.substr(start, end - start));
        start = end + 1;
        const bool last = end == text.size();
        if (!line.empty() && line[0] != '#' && line[0] != ';') {
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError("config: bad section line '" + line + "'");
                section = trim(line.substr(1, line.size() - 2));
            } else {
                const std::size_t eq = line.find('=');
                if (eq == std::string::npos) {
                    throw ConfigError("config: expected 'key = value', got '" + line + "'");
                }
                const std::string key = trim(line.substr(0, eq));
                const std::string value = trim(line.substr(eq + 1));
                cfg.apply_override(section.empty() ? key : section + "." + key, value);
            }
        }
        if (last) break;
    }
    return cfg;
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
    if (key == "model.blocks") blocks = parse_count(key, value);
    else if (key == "model.heads") heads = parse_count(key, value);
    else if (key == "model.head_dim") head_dim = parse_count(key, value);
    else if (key == "model.axes") axes = parse_count(key, value);
    else if (key == "model.rope_base") rope_base = parse_real(key, value);
    else if (key == "model.scheme") scheme = SchemeSpec::parse(value);
    else if (key == "task.name") task = value;
    else if (key == "task.grid") grid = parse_count(key, value);
    else if (key == "task.n_train") n_train = parse_count(key, value);
    else if (key == "task.n_eval") n_eval = parse_count(key, value);
    else if (key == "train.lr") lr = parse_real(key, value);
    else if (key == "train.steps") steps = parse_count(key, value);
    else if (key == "train.batch") batch = parse_count(key, value);
    else if (key == "train.lambda") lambda = parse_real(key, value);
    else if (key == "train.eval_interval") eval_interval = parse_count(key, value);
    else if (key == "train.seeds") {
        seeds.clear();
        for (const auto& tok : split(value, ',')) {
            seeds.push_back(static_cast<std::uint64_t>(parse_count(key, tok)));
        }
    } else if (key == "train.schemes") {
        schemes.clear();
        for (const auto& tok : split(value, ',')) schemes.push_back(SchemeSpec::parse(tok));
    } else if (key == "out.dir") {
        out_dir = value;
    } else {
        throw ConfigError("config: unknown key '" + key + "'");
    }
}

std::vector<std::string> RunConfig::apply_overrides(const std::vector<std::string>& args) {
    std::vector<std::string> rest;
    for (const auto& arg : args) {
        if (arg.rfind("--", 0) == 0) {
            const std::size_t eq = arg.find('=');
            if (eq != std::string::npos) {
                const std::string key = arg.substr(2, eq - 2);
                if (key.find('.') != std::string::npos) {
                    apply_override(key, arg.substr(eq + 1));
                    continue;
                }
            }
        }
        rest.push_back(arg);
    }
    return rest;
}

ModelSpec RunConfig::model_spec(const SchemeSpec& s, std::size_t n_classes) const {
    ModelSpec spec;
    spec.blocks = blocks;
    spec.n_heads = heads;
    spec.head_dim = head_dim;
    spec.feat_dim = kTaskFeatureDim;
    spec.n_classes = n_classes;
    spec.scheme = s.tag;
    spec.variant = s.variant;
    spec.shared_adapt = s.shared;
    spec.axes = axes;
    spec.grid = grid;
    spec.rope_base = rope_base;
    return spec;
}

TrainRun RunConfig::train_run(const SchemeSpec& s, std::size_t n_classes,
                              std::uint64_t seed) const {
    TrainRun run;
    run.model = model_spec(s, n_classes);
    run.hyper.lr = lr;
    run.hyper.steps = steps;
    run.hyper.batch = batch;
    run.hyper.lambda = lambda;
    run.hyper.eval_interval = eval_interval;
    run.seed = seed;
    return run;
}

TaskInstance make_task(const std::string& name, std::uint64_t seed, std::size_t grid,
                       std::size_t n_samples) {
    if (name == "offset") return gen_offset_task(seed, grid, n_samples);
    if (name == "anisotropic") return gen_anisotropic_task(seed, grid, n_samples);
    if (name == "headmix") return gen_headmix_task(seed, grid, n_samples);
    throw ConfigError("unknown task '" + name + "'");
}

}  // namespace harope
