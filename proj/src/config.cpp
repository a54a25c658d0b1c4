#include "modalmeta/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "modalmeta/networks.hpp"

namespace modalmeta {
namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& message) { throw std::invalid_argument(message); }

double as_double(const json& j, const std::string& key) {
    if (!j.is_number()) bad("config key \"" + key + "\" must be a number");
    return j.get<double>();
}

std::size_t as_size(const json& j, const std::string& key) {
    if (!j.is_number_unsigned()) bad("config key \"" + key + "\" must be a non-negative integer");
    return j.get<std::size_t>();
}

std::uint64_t as_u64(const json& j, const std::string& key) {
    if (!j.is_number_unsigned()) bad("config key \"" + key + "\" must be a non-negative integer");
    return j.get<std::uint64_t>();
}

std::string as_string(const json& j, const std::string& key) {
    if (!j.is_string()) bad("config key \"" + key + "\" must be a string");
    return j.get<std::string>();
}

Range as_range(const json& j, const std::string& key) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
        bad("config key \"" + key + "\" must be a [lo, hi] number pair");
    }
    return Range{j[0].get<double>(), j[1].get<double>()};
}

ModeSpec default_mode(Family f) {
    switch (f) {
        case Family::Sinusoid: return ModeSpec::sinusoid();
        case Family::Linear: return ModeSpec::linear();
        case Family::Quadratic: break;
    }
    return ModeSpec::quadratic();
}

/// A mode entry is either a family name (default ranges) or an object with
/// "family" plus optional per-parameter range overrides.
ModeSpec parse_mode(const json& j, std::size_t index) {
    const std::string where = "modes[" + std::to_string(index) + "]";
    if (j.is_string()) return default_mode(family_from_name(j.get<std::string>()));
    if (!j.is_object()) bad(where + " must be a family name or an object");
    if (!j.contains("family")) bad(where + " is missing \"family\"");
    ModeSpec mode = default_mode(family_from_name(as_string(j.at("family"), where + ".family")));
    for (const auto& [key, value] : j.items()) {
        if (key == "family") continue;
        if (key == "a") mode.a = as_range(value, where + ".a");
        else if (key == "w") mode.w = as_range(value, where + ".w");
        else if (key == "b") mode.b = as_range(value, where + ".b");
        else if (key == "c") mode.c = as_range(value, where + ".c");
        else bad("unknown config key \"" + where + "." + key + "\"");
    }
    return mode;
}

json mode_to_json(const ModeSpec& mode) {
    json j;
    j["family"] = family_name(mode.family);
    j["a"] = {mode.a.lo, mode.a.hi};
    j["w"] = {mode.w.lo, mode.w.hi};
    j["b"] = {mode.b.lo, mode.b.hi};
    j["c"] = {mode.c.lo, mode.c.hi};
    return j;
}

}  // namespace

RunConfig::RunConfig() {
    dist.modes = {ModeSpec::sinusoid(), ModeSpec::linear()};
}

void RunConfig::validate() const {
    dist.validate();
    model.validate();
    inner.validate();
    meta.validate();
    if (model.widths.front() != 1 || model.widths.back() != 1) {
        throw std::invalid_argument("widths must map one input to one output");
    }
    if (eval_tasks < 1) throw std::invalid_argument("eval_tasks must be >= 1");
}

RunConfig parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        bad(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) bad("config root must be a JSON object");

    RunConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "trainer") c.meta.trainer = trainer_from_name(as_string(value, key));
        else if (key == "modulation") c.meta.modulation = modulation_from_name(as_string(value, key));
        else if (key == "order") c.meta.order = order_from_name(as_string(value, key));
        else if (key == "seed") c.seed = as_u64(value, key);
        else if (key == "modes") {
            if (!value.is_array() || value.empty()) bad("config key \"modes\" must be a non-empty array");
            c.dist.modes.clear();
            for (std::size_t i = 0; i < value.size(); ++i) c.dist.modes.push_back(parse_mode(value[i], i));
        } else if (key == "noise_sigma") c.dist.noise_sigma = as_double(value, key);
        else if (key == "support_size") c.dist.support_size = as_size(value, key);
        else if (key == "query_size") c.dist.query_size = as_size(value, key);
        else if (key == "x_low") c.dist.x_low = as_double(value, key);
        else if (key == "x_high") c.dist.x_high = as_double(value, key);
        else if (key == "widths") {
            if (!value.is_array()) bad("config key \"widths\" must be an array");
            c.model.widths.clear();
            for (const auto& w : value) c.model.widths.push_back(as_size(w, "widths"));
        } else if (key == "gru_hidden") c.model.gru_hidden = as_size(value, key);
        else if (key == "generator_hidden") c.model.generator_hidden = as_size(value, key);
        else if (key == "alpha") c.inner.alpha = as_double(value, key);
        else if (key == "train_steps") c.inner.train_steps = as_size(value, key);
        else if (key == "eval_steps") c.inner.eval_steps = as_size(value, key);
        else if (key == "meta_lr") c.meta.meta_lr = as_double(value, key);
        else if (key == "adam_beta1") c.meta.adam_beta1 = as_double(value, key);
        else if (key == "adam_beta2") c.meta.adam_beta2 = as_double(value, key);
        else if (key == "adam_eps") c.meta.adam_eps = as_double(value, key);
        else if (key == "meta_batch") c.meta.meta_batch = as_size(value, key);
        else if (key == "iterations") c.meta.iterations = as_size(value, key);
        else if (key == "eval_every") c.eval_every = as_size(value, key);
        else if (key == "eval_tasks") c.eval_tasks = as_size(value, key);
        else bad("unknown config key \"" + key + "\"");
    }
    c.validate();
    return c;
}

std::string config_to_text(const RunConfig& config) {
    json j;
    j["trainer"] = trainer_name(config.meta.trainer);
    j["modulation"] = modulation_name(config.meta.modulation);
    j["order"] = order_name(config.meta.order);
    j["seed"] = config.seed;
    json modes = json::array();
    for (const auto& mode : config.dist.modes) modes.push_back(mode_to_json(mode));
    j["modes"] = modes;
    j["noise_sigma"] = config.dist.noise_sigma;
    j["support_size"] = config.dist.support_size;
    j["query_size"] = config.dist.query_size;
    j["x_low"] = config.dist.x_low;
    j["x_high"] = config.dist.x_high;
    j["widths"] = config.model.widths;
    j["gru_hidden"] = config.model.gru_hidden;
    j["generator_hidden"] = config.model.generator_hidden;
    j["alpha"] = config.inner.alpha;
    j["train_steps"] = config.inner.train_steps;
    j["eval_steps"] = config.inner.eval_steps;
    j["meta_lr"] = config.meta.meta_lr;
    j["adam_beta1"] = config.meta.adam_beta1;
    j["adam_beta2"] = config.meta.adam_beta2;
    j["adam_eps"] = config.meta.adam_eps;
    j["meta_batch"] = config.meta.meta_batch;
    j["iterations"] = config.meta.iterations;
    j["eval_every"] = config.eval_every;
    j["eval_tasks"] = config.eval_tasks;
    return j.dump(2) + "\n";
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) bad("cannot open config file \"" + path + "\"");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

bool config_equal(const RunConfig& a, const RunConfig& b) {
    auto range_eq = [](const Range& x, const Range& y) { return x.lo == y.lo && x.hi == y.hi; };
    if (a.dist.modes.size() != b.dist.modes.size()) return false;
    for (std::size_t i = 0; i < a.dist.modes.size(); ++i) {
        const ModeSpec &ma = a.dist.modes[i], &mb = b.dist.modes[i];
        if (ma.family != mb.family || !range_eq(ma.a, mb.a) || !range_eq(ma.w, mb.w) ||
            !range_eq(ma.b, mb.b) || !range_eq(ma.c, mb.c)) {
            return false;
        }
    }
    return a.dist.noise_sigma == b.dist.noise_sigma && a.dist.support_size == b.dist.support_size &&
           a.dist.query_size == b.dist.query_size && a.dist.x_low == b.dist.x_low &&
           a.dist.x_high == b.dist.x_high && a.model.widths == b.model.widths &&
           a.model.gru_hidden == b.model.gru_hidden &&
           a.model.generator_hidden == b.model.generator_hidden &&
           a.inner.alpha == b.inner.alpha && a.inner.train_steps == b.inner.train_steps &&
           a.inner.eval_steps == b.inner.eval_steps && a.meta.meta_lr == b.meta.meta_lr &&
           a.meta.adam_beta1 == b.meta.adam_beta1 && a.meta.adam_beta2 == b.meta.adam_beta2 &&
           a.meta.adam_eps == b.meta.adam_eps && a.meta.meta_batch == b.meta.meta_batch &&
           a.meta.iterations == b.meta.iterations && a.meta.order == b.meta.order &&
           a.meta.trainer == b.meta.trainer && a.meta.modulation == b.meta.modulation &&
           a.seed == b.seed && a.eval_every == b.eval_every && a.eval_tasks == b.eval_tasks;
}

}  // namespace modalmeta
