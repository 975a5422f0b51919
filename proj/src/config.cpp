#include "mcn/config.hpp"

#include <fstream>

#include "mcn/checkpoint.hpp"

namespace mcn {

namespace {

const std::map<std::string, std::string>& default_values() {
    static const std::map<std::string, std::string> defaults = {
        {"seed", "0"},
        {"unet.size", "32"},
        {"unet.channels", "16"},
        {"unet.time_embed", "64"},
        {"unet.classes", "0"},
        {"diff.steps", "200"},
        {"diff.beta_start", "0.0001"},
        {"diff.beta_end", "0.1"},
        {"base.steps", "400"},
        {"base.alpha", "0.002"},
        {"base.batch", "16"},
        {"base.accum", "1"},
        {"meta.alpha", "0.001"},
        {"meta.inner_alpha", ""},  // empty = meta.alpha
        {"meta.outer_alpha", ""},
        {"meta.batch", "24"},
        {"meta.accum", "1"},
        {"meta.steps", "300"},
        {"meta.freeze", "enc4mid"},
        {"meta.opt", "adam"},
        {"adapt.steps", "100"},
        {"adapt.accum", "2"},
        {"adapt.shots", "16"},
        {"adapt.batch", "8"},
        {"adapt.alpha", ""},  // empty = meta.alpha
        {"adapt.opt", "adam"},
        {"eval.n", "16"},
    };
    return defaults;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig::RunConfig() : values_(default_values()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unrecognized config key '" + key + "'");
    it->second = value;
}

void RunConfig::set_override(const std::string& kv) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + kv + "' is not of the form key=value");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        try {
            set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unrecognized config key '" + key + "'");
    return it->second;
}

double RunConfig::get_double(const std::string& key) const {
    const std::string& v = get(key);
    try {
        size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has non-numeric value '" + v + "'");
    }
}

int RunConfig::get_int(const std::string& key) const {
    const std::string& v = get(key);
    try {
        size_t used = 0;
        int i = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has non-integer value '" + v + "'");
    }
}

uint64_t RunConfig::get_u64(const std::string& key) const {
    const std::string& v = get(key);
    try {
        size_t used = 0;
        uint64_t i = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has non-integer value '" + v + "'");
    }
}

std::vector<std::pair<std::string, std::string>> RunConfig::items() const {
    return {values_.begin(), values_.end()};
}

std::string RunConfig::canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
}

std::string RunConfig::hash() const { return sha256_hex(canonical()).substr(0, 16); }

UNetConfig RunConfig::unet() const {
    UNetConfig u;
    u.image_size = get_int("unet.size");
    u.base_channels = get_int("unet.channels");
    u.time_embed_dim = get_int("unet.time_embed");
    u.class_count = get_int("unet.classes");
    u.validate();
    return u;
}

NoiseSchedule RunConfig::schedule() const {
    return NoiseSchedule::linear(get_int("diff.steps"), get_double("diff.beta_start"),
                                 get_double("diff.beta_end"));
}

MetaConfig RunConfig::meta() const {
    MetaConfig m;
    double alpha = get_double("meta.alpha");
    m.inner_alpha = get("meta.inner_alpha").empty() ? alpha : get_double("meta.inner_alpha");
    m.outer_alpha = get("meta.outer_alpha").empty() ? alpha : get_double("meta.outer_alpha");
    m.total_batch = get_int("meta.batch");
    m.grad_accum = get_int("meta.accum");
    m.steps = get_int("meta.steps");
    m.freeze = freeze_policy_from_string(get("meta.freeze"));
    m.optimizer = get("meta.opt");
    m.seed = seed();
    if (m.total_batch < 1 || m.grad_accum < 1 || m.steps < 0)
        throw ConfigError("meta.* values must be positive");
    return m;
}

AdaptConfig RunConfig::adapt() const {
    AdaptConfig a;
    a.steps = get_int("adapt.steps");
    a.grad_accum = get_int("adapt.accum");
    a.shots = get_int("adapt.shots");
    a.batch = get_int("adapt.batch");
    a.alpha = get("adapt.alpha").empty() ? get_double("meta.alpha") : get_double("adapt.alpha");
    a.optimizer = get("adapt.opt");
    a.seed = seed();
    if (a.steps < 0 || a.grad_accum < 1 || a.batch < 1)
        throw ConfigError("adapt.* values must be positive");
    return a;
}

}  // namespace mcn
