#include "modalmeta/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "modalmeta/networks.hpp"

namespace modalmeta {
namespace {

using nlohmann::json;

[[noreturn]] void corrupt(const std::string& message) {
    throw std::runtime_error("checkpoint: " + message);
}

json tensor_entry(const std::string& name, const Tensor& t) {
    if (!t.all_finite()) corrupt("array \"" + name + "\" contains non-finite values");
    json j;
    j["name"] = name;
    j["shape"] = t.shape();
    j["values"] = t.values();
    return j;
}

std::pair<std::string, Tensor> read_tensor_entry(const json& j) {
    if (!j.is_object() || !j.contains("name") || !j.contains("shape") || !j.contains("values")) {
        corrupt("malformed array entry");
    }
    const std::string name = j.at("name").get<std::string>();
    Shape shape = j.at("shape").get<Shape>();
    std::vector<double> values = j.at("values").get<std::vector<double>>();
    if (values.size() != shape_size(shape)) {
        corrupt("array \"" + name + "\" has " + std::to_string(values.size()) +
                " values for shape " + shape_to_string(shape));
    }
    Tensor t = Tensor::zeros(shape);
    for (std::size_t i = 0; i < values.size(); ++i) t[i] = values[i];
    return {name, t};
}

json params_to_json(const ParamSet& params) {
    json list = json::array();
    for (const auto& [name, e] : params) list.push_back(tensor_entry(name, evaluate(e)));
    return list;
}

ParamSet params_from_json(const json& list) {
    if (!list.is_array()) corrupt("parameter list must be an array");
    ParamSet params;
    for (const auto& entry : list) {
        auto [name, t] = read_tensor_entry(entry);
        params.add(name, leaf(std::move(t), name));
    }
    return params;
}

json pairs_to_json(const std::vector<std::pair<std::string, Tensor>>& pairs) {
    json list = json::array();
    for (const auto& [name, t] : pairs) list.push_back(tensor_entry(name, t));
    return list;
}

std::vector<std::pair<std::string, Tensor>> pairs_from_json(const json& list) {
    if (!list.is_array()) corrupt("moment list must be an array");
    std::vector<std::pair<std::string, Tensor>> pairs;
    for (const auto& entry : list) pairs.push_back(read_tensor_entry(entry));
    return pairs;
}

json adam_to_json(const AdamState& state) {
    json j;
    j["step"] = state.step;
    j["m"] = pairs_to_json(state.m);
    j["v"] = pairs_to_json(state.v);
    return j;
}

AdamState adam_from_json(const json& j) {
    if (!j.is_object() || !j.contains("step") || !j.contains("m") || !j.contains("v")) {
        corrupt("malformed Adam state");
    }
    AdamState state;
    state.step = j.at("step").get<std::uint64_t>();
    state.m = pairs_from_json(j.at("m"));
    state.v = pairs_from_json(j.at("v"));
    return state;
}

/// The snapshot config decides which parameter groups must exist; a
/// checkpoint whose arrays disagree with its own config is rejected whole.
void check_structure(const Checkpoint& cp) {
    const TrainerKind kind = cp.config.meta.trainer;
    const std::size_t want_learners =
        kind == TrainerKind::MultiMaml ? cp.config.dist.modes.size() : 1;
    if (cp.state.learners.size() != want_learners) {
        corrupt("expected " + std::to_string(want_learners) + " learners, found " +
                std::to_string(cp.state.learners.size()));
    }
    if (cp.state.learner_states.size() != cp.state.learners.size()) {
        corrupt("learner Adam states do not match learner count");
    }
    for (const ParamSet& learner : cp.state.learners) {
        if (learner_widths(learner) != cp.config.model.widths) {
            corrupt("learner widths do not match the snapshot config");
        }
    }
    const ModulationKind mod = cp.config.meta.modulation;
    if (kind == TrainerKind::MuMoMaml) {
        if (!cp.state.omega.contains("encoder.fwd.update.w_in")) {
            corrupt("missing encoder arrays for a mumomaml checkpoint");
        }
        if (mod != ModulationKind::None && !cp.state.omega.contains("generator.block1.out.weight")) {
            corrupt("missing generator arrays for modulation kind \"" + modulation_name(mod) + "\"");
        }
    } else if (!cp.state.omega.empty()) {
        corrupt("unexpected omega arrays for trainer \"" + trainer_name(kind) + "\"");
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
    check_structure(checkpoint);
    json j;
    j["format_version"] = checkpoint.version;
    j["config"] = json::parse(config_to_text(checkpoint.config));
    j["iteration"] = checkpoint.state.iteration;
    json learners = json::array();
    for (std::size_t m = 0; m < checkpoint.state.learners.size(); ++m) {
        json one;
        one["params"] = params_to_json(checkpoint.state.learners[m]);
        one["adam"] = adam_to_json(checkpoint.state.learner_states[m]);
        learners.push_back(one);
    }
    j["learners"] = learners;
    j["omega"] = params_to_json(checkpoint.state.omega);
    j["omega_adam"] = adam_to_json(checkpoint.state.omega_state);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) corrupt("cannot open \"" + path + "\" for writing");
    out << j.dump() << '\n';
    if (!out) corrupt("failed writing \"" + path + "\"");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) corrupt("cannot open \"" + path + "\"");
    std::ostringstream buf;
    buf << in.rdbuf();

    json j;
    try {
        j = json::parse(buf.str());
    } catch (const json::exception& e) {
        corrupt("\"" + path + "\" is not valid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("format_version") ||
        !j.at("format_version").is_number_integer()) {
        corrupt("\"" + path + "\" has no format version");
    }
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
        corrupt("version " + std::to_string(version) + " unsupported; expected " +
                std::to_string(kCheckpointVersion));
    }
    for (const char* key : {"config", "iteration", "learners", "omega", "omega_adam"}) {
        if (!j.contains(key)) corrupt(std::string("missing field \"") + key + "\"");
    }

    Checkpoint cp;
    cp.version = version;
    try {
        cp.config = parse_config_text(j.at("config").dump());
    } catch (const std::invalid_argument& e) {
        corrupt(std::string("embedded config is invalid: ") + e.what());
    }
    cp.state.kind = cp.config.meta.trainer;
    cp.state.modulation = cp.config.meta.modulation;
    cp.state.iteration = j.at("iteration").get<std::uint64_t>();
    if (!j.at("learners").is_array()) corrupt("\"learners\" must be an array");
    for (const auto& one : j.at("learners")) {
        if (!one.is_object() || !one.contains("params") || !one.contains("adam")) {
            corrupt("malformed learner entry");
        }
        cp.state.learners.push_back(params_from_json(one.at("params")));
        cp.state.learner_states.push_back(adam_from_json(one.at("adam")));
    }
    cp.state.omega = params_from_json(j.at("omega"));
    cp.state.omega_state = adam_from_json(j.at("omega_adam"));
    check_structure(cp);
    return cp;
}

}  // namespace modalmeta
