#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pase/dataset.hpp"
#include "pase/trainer.hpp"

namespace pase {

using json = nlohmann::json;

/// Everything a run needs: generator spec plus training configuration.
/// Config files are JSON objects with optional "synth" and "train"
/// sections; unknown keys anywhere are rejected.
struct RunConfig {
    SynthSpec synth;
    TrainConfig train;
};

namespace cfgdetail {

inline void reject_unknown(const json& obj, const std::set<std::string>& known,
                           const std::string& where) {
    for (const auto& [key, _] : obj.items())
        if (!known.count(key))
            throw std::invalid_argument("config: unknown key '" + key +
                                        "' in " + where);
}

inline std::vector<Modality> parse_modalities(const std::string& s) {
    std::vector<Modality> out;
    for (char c : s) {
        switch (c) {
            case 't': out.push_back(Modality::Text); break;
            case 'a': out.push_back(Modality::Audio); break;
            case 'v': out.push_back(Modality::Vision); break;
            default:
                throw std::invalid_argument(
                    "config: modalities must be a subset of \"tav\", got '" +
                    s + "'");
        }
    }
    if (out.empty())
        throw std::invalid_argument("config: modalities must be non-empty");
    return out;
}

inline std::string modalities_string(const std::vector<Modality>& ms) {
    std::string s;
    for (Modality m : ms) s += modality_letter(m);
    return s;
}

template <typename T>
void read(const json& obj, const char* key, T& field) {
    if (obj.contains(key)) field = obj.at(key).get<T>();
}

}  // namespace cfgdetail

inline void synth_from_json(const json& obj, SynthSpec& spec) {
    cfgdetail::reject_unknown(
        obj, {"n", "k", "dims", "separation", "noise", "seed"}, "synth");
    cfgdetail::read(obj, "n", spec.n);
    cfgdetail::read(obj, "k", spec.k);
    if (obj.contains("dims")) {
        auto v = obj.at("dims").get<std::vector<std::size_t>>();
        if (v.size() != 3)
            throw std::invalid_argument("config: synth.dims must have 3 entries");
        for (std::size_t i = 0; i < 3; ++i) spec.dims[i] = v[i];
    }
    if (obj.contains("separation")) {
        auto v = obj.at("separation").get<std::vector<double>>();
        if (v.size() != 3)
            throw std::invalid_argument(
                "config: synth.separation must have 3 entries");
        for (std::size_t i = 0; i < 3; ++i) spec.separation[i] = v[i];
    }
    cfgdetail::read(obj, "noise", spec.noise);
    cfgdetail::read(obj, "seed", spec.seed);
}

inline json synth_to_json(const SynthSpec& spec) {
    return json{{"n", spec.n},
                {"k", spec.k},
                {"dims", spec.dims},
                {"separation", spec.separation},
                {"noise", spec.noise},
                {"seed", spec.seed}};
}

inline void train_from_json(const json& obj, TrainConfig& cfg) {
    cfgdetail::reject_unknown(
        obj,
        {"modalities",     "encoder_hidden",      "embed_dim",
         "ffn_hidden",     "ffn_out",             "head_hidden",
         "fusion",         "optimizer",           "learning_rate",
         "batch_size",     "max_epochs",          "gamma",
         "lambda",         "mu",                  "alpha",
         "beta",           "tau",                 "rho",
         "sinkhorn_max_iter", "sinkhorn_tol",     "patience",
         "min_delta",      "fixed_transition_epoch", "sgm",
         "trace_shapley",  "plateau_signal",      "ema_in_phase2",
         "inter_graph_connected", "invert_entropy_weighting", "seed"},
        "train");
    if (obj.contains("modalities"))
        cfg.modalities =
            cfgdetail::parse_modalities(obj.at("modalities").get<std::string>());
    cfgdetail::read(obj, "encoder_hidden", cfg.encoder_hidden);
    cfgdetail::read(obj, "embed_dim", cfg.embed_dim);
    cfgdetail::read(obj, "ffn_hidden", cfg.ffn_hidden);
    cfgdetail::read(obj, "ffn_out", cfg.ffn_out);
    cfgdetail::read(obj, "head_hidden", cfg.head_hidden);
    if (obj.contains("fusion"))
        cfg.fusion = parse_fusion_kind(obj.at("fusion").get<std::string>());
    if (obj.contains("optimizer")) {
        const auto s = obj.at("optimizer").get<std::string>();
        if (s == "adam")
            cfg.optimizer = OptimKind::Adam;
        else if (s == "sgd")
            cfg.optimizer = OptimKind::Sgd;
        else
            throw std::invalid_argument("config: optimizer must be adam|sgd");
    }
    cfgdetail::read(obj, "learning_rate", cfg.learning_rate);
    cfgdetail::read(obj, "batch_size", cfg.batch_size);
    cfgdetail::read(obj, "max_epochs", cfg.max_epochs);
    cfgdetail::read(obj, "gamma", cfg.gamma);
    cfgdetail::read(obj, "lambda", cfg.lambda);
    cfgdetail::read(obj, "mu", cfg.mu);
    cfgdetail::read(obj, "alpha", cfg.alpha);
    cfgdetail::read(obj, "beta", cfg.beta);
    cfgdetail::read(obj, "tau", cfg.tau);
    cfgdetail::read(obj, "rho", cfg.rho);
    cfgdetail::read(obj, "sinkhorn_max_iter", cfg.sinkhorn_max_iter);
    cfgdetail::read(obj, "sinkhorn_tol", cfg.sinkhorn_tol);
    cfgdetail::read(obj, "patience", cfg.patience);
    cfgdetail::read(obj, "min_delta", cfg.min_delta);
    if (obj.contains("fixed_transition_epoch")) {
        if (obj.at("fixed_transition_epoch").is_null())
            cfg.fixed_transition_epoch.reset();
        else
            cfg.fixed_transition_epoch =
                obj.at("fixed_transition_epoch").get<int>();
    }
    cfgdetail::read(obj, "sgm", cfg.sgm);
    if (obj.contains("trace_shapley")) {
        if (obj.at("trace_shapley").is_null())
            cfg.trace_shapley.reset();
        else
            cfg.trace_shapley = obj.at("trace_shapley").get<bool>();
    }
    if (obj.contains("plateau_signal")) {
        const auto s = obj.at("plateau_signal").get<std::string>();
        if (s == "val_accuracy")
            cfg.plateau_signal = PlateauSignal::ValAccuracy;
        else if (s == "val_entropy")
            cfg.plateau_signal = PlateauSignal::ValEntropy;
        else
            throw std::invalid_argument(
                "config: plateau_signal must be val_accuracy|val_entropy");
    }
    cfgdetail::read(obj, "ema_in_phase2", cfg.ema_in_phase2);
    cfgdetail::read(obj, "inter_graph_connected", cfg.inter_graph_connected);
    cfgdetail::read(obj, "invert_entropy_weighting",
                    cfg.invert_entropy_weighting);
    cfgdetail::read(obj, "seed", cfg.seed);
}

inline json train_to_json(const TrainConfig& cfg) {
    json obj{
        {"modalities", cfgdetail::modalities_string(cfg.modalities)},
        {"encoder_hidden", cfg.encoder_hidden},
        {"embed_dim", cfg.embed_dim},
        {"ffn_hidden", cfg.ffn_hidden},
        {"ffn_out", cfg.ffn_out},
        {"head_hidden", cfg.head_hidden},
        {"fusion", fusion_kind_name(cfg.fusion)},
        {"optimizer", cfg.optimizer == OptimKind::Adam ? "adam" : "sgd"},
        {"learning_rate", cfg.learning_rate},
        {"batch_size", cfg.batch_size},
        {"max_epochs", cfg.max_epochs},
        {"gamma", cfg.gamma},
        {"lambda", cfg.lambda},
        {"mu", cfg.mu},
        {"alpha", cfg.alpha},
        {"beta", cfg.beta},
        {"tau", cfg.tau},
        {"rho", cfg.rho},
        {"sinkhorn_max_iter", cfg.sinkhorn_max_iter},
        {"sinkhorn_tol", cfg.sinkhorn_tol},
        {"patience", cfg.patience},
        {"min_delta", cfg.min_delta},
        {"sgm", cfg.sgm},
        {"plateau_signal", cfg.plateau_signal == PlateauSignal::ValAccuracy
                               ? "val_accuracy"
                               : "val_entropy"},
        {"ema_in_phase2", cfg.ema_in_phase2},
        {"inter_graph_connected", cfg.inter_graph_connected},
        {"invert_entropy_weighting", cfg.invert_entropy_weighting},
        {"seed", cfg.seed},
    };
    obj["fixed_transition_epoch"] = cfg.fixed_transition_epoch
                                        ? json(*cfg.fixed_transition_epoch)
                                        : json(nullptr);
    obj["trace_shapley"] =
        cfg.trace_shapley ? json(*cfg.trace_shapley) : json(nullptr);
    return obj;
}

inline RunConfig config_from_json(const json& root) {
    cfgdetail::reject_unknown(root, {"synth", "train"}, "config root");
    RunConfig cfg;
    if (root.contains("synth")) synth_from_json(root.at("synth"), cfg.synth);
    if (root.contains("train")) train_from_json(root.at("train"), cfg.train);
    return cfg;
}

inline RunConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("config: cannot open " + path.string());
    json root = json::parse(in);
    return config_from_json(root);
}

inline json config_to_json(const RunConfig& cfg) {
    return json{{"synth", synth_to_json(cfg.synth)},
                {"train", train_to_json(cfg.train)}};
}

/// Apply one "key=value" override. Bare keys are looked up in the train
/// section first, then synth; "section.key" addresses one explicitly.
inline void apply_override(RunConfig& cfg, const std::string& entry) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos || eq == 0)
        throw std::invalid_argument("override '" + entry +
                                    "' is not of the form key=value");
    std::string key = entry.substr(0, eq);
    std::string value = entry.substr(eq + 1);

    std::string section;
    const auto dot = key.find('.');
    if (dot != std::string::npos) {
        section = key.substr(0, dot);
        key = key.substr(dot + 1);
        if (section != "train" && section != "synth")
            throw std::invalid_argument("override section must be train|synth");
    }

    // Parse the value as JSON when possible; on/off map to booleans, and
    // anything unparseable is taken as a string.
    json jvalue;
    if (value == "on")
        jvalue = true;
    else if (value == "off")
        jvalue = false;
    else {
        try {
            jvalue = json::parse(value);
        } catch (const json::parse_error&) {
            jvalue = value;
        }
    }

    json root = config_to_json(cfg);
    auto try_apply = [&](const std::string& sec) {
        if (!root.at(sec).contains(key)) return false;
        root[sec][key] = jvalue;
        return true;
    };
    bool applied = false;
    if (!section.empty())
        applied = try_apply(section);
    else
        applied = try_apply("train") || try_apply("synth");
    if (!applied)
        throw std::invalid_argument("override: unknown config key '" + key + "'");
    cfg = config_from_json(root);
}

}  // namespace pase
