// JSON run configuration. One file drives every pipeline stage; a seed is
// mandatory so no run ever depends on ambient entropy. Section keys are
// checked strictly so typos fail loudly instead of silently keeping a
// default.
#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dnq/common.hpp"
#include "dnq/controller.hpp"
#include "dnq/dataset.hpp"
#include "dnq/network.hpp"
#include "dnq/quantizer.hpp"

namespace dnq::cli {

using nlohmann::json;

struct TrainConfig {
    size_t steps = 3000;
    size_t batch = 64;
    double lr = 0.05;
    size_t log_every = 100;
};

struct PathConfig {
    std::string checkpoint = "out/model.dnq1";
    std::string packed = "out/model.dnqp";
    std::string sequence = "out/sequence.json";
    std::string train_metrics = "out/train.csv";
    std::string search_log = "out/search.csv";
    std::string quant_metrics = "out/quantize.csv";
    std::string manifest = "out/manifest.json";
    std::string report = "out/eval.txt";
};

struct PipelineConfig {
    uint64_t seed = 0;
    SyntheticSpec dataset;  // dim is derived from the model input shape
    Shape3 input{1, 8, 8};
    std::vector<LayerConfig> layers;
    TrainConfig train;
    ctrl::ControllerConfig controller;
    quant::QuantizerConfig quantizer;
    PathConfig paths;
    json effective;  // the fully-resolved document, for hashing and manifests
};

namespace detail {

inline void check_keys(const json& obj, const std::string& where,
                       const std::set<std::string>& allowed) {
    require(obj.is_object(), "config: " + where + " must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        require(allowed.count(it.key()) > 0, "config: unknown key '" + it.key() + "' in " + where);
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    return obj.at(key).get<T>();
}

}  // namespace detail

inline PipelineConfig parse_config(const json& j) {
    detail::check_keys(j, "top level",
                       {"seed", "dataset", "model", "train", "controller", "quantizer", "paths"});
    require(j.contains("seed"), "config: seed is required");
    require(j.at("seed").is_number_unsigned(), "config: seed must be a non-negative integer");

    PipelineConfig cfg;
    cfg.seed = j.at("seed").get<uint64_t>();

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        detail::check_keys(d, "dataset", {"num_classes", "n_train", "n_eval", "margin", "noise"});
        cfg.dataset.num_classes = detail::get_or<size_t>(d, "num_classes", 4);
        cfg.dataset.n_train = detail::get_or<size_t>(d, "n_train", 2000);
        cfg.dataset.n_eval = detail::get_or<size_t>(d, "n_eval", 1000);
        cfg.dataset.margin = detail::get_or<double>(d, "margin", 2.0);
        cfg.dataset.noise = detail::get_or<double>(d, "noise", 0.35);
    } else {
        cfg.dataset.num_classes = 4;
        cfg.dataset.n_train = 2000;
        cfg.dataset.n_eval = 1000;
    }

    require(j.contains("model"), "config: model section is required");
    const json& m = j.at("model");
    detail::check_keys(m, "model", {"input", "layers"});
    require(m.contains("input") && m.contains("layers"), "config: model needs input and layers");
    const json& in = m.at("input");
    detail::check_keys(in, "model.input", {"c", "h", "w"});
    cfg.input.c = in.at("c").get<size_t>();
    cfg.input.h = in.at("h").get<size_t>();
    cfg.input.w = in.at("w").get<size_t>();
    require(m.at("layers").is_array() && !m.at("layers").empty(),
            "config: model.layers must be a non-empty array");
    for (const json& lj : m.at("layers")) {
        detail::check_keys(lj, "model.layers[]",
                           {"kind", "filters", "units", "kernel", "quantizable"});
        LayerConfig lc;
        std::string kind = lj.at("kind").get<std::string>();
        if (kind == "conv2d") {
            lc.kind = LayerKind::conv2d;
            require(lj.contains("filters") && lj.contains("kernel"),
                    "config: conv2d layer needs filters and kernel");
            lc.out = lj.at("filters").get<size_t>();
            const json& k = lj.at("kernel");
            require(k.is_array() && k.size() == 2, "config: kernel must be [h, w]");
            lc.kernel_h = k.at(0).get<size_t>();
            lc.kernel_w = k.at(1).get<size_t>();
        } else if (kind == "dense") {
            lc.kind = LayerKind::dense;
            require(lj.contains("units"), "config: dense layer needs units");
            lc.out = lj.at("units").get<size_t>();
        } else {
            require(false, "config: unknown layer kind '" + kind + "'");
        }
        lc.quantizable = detail::get_or<bool>(lj, "quantizable", true);
        cfg.layers.push_back(lc);
    }
    require(cfg.layers.back().out == cfg.dataset.num_classes,
            "config: last layer width must equal dataset.num_classes");

    if (j.contains("train")) {
        const json& t = j.at("train");
        detail::check_keys(t, "train", {"steps", "batch", "lr", "log_every"});
        cfg.train.steps = detail::get_or<size_t>(t, "steps", cfg.train.steps);
        cfg.train.batch = detail::get_or<size_t>(t, "batch", cfg.train.batch);
        cfg.train.lr = detail::get_or<double>(t, "lr", cfg.train.lr);
        cfg.train.log_every = detail::get_or<size_t>(t, "log_every", cfg.train.log_every);
    }

    ctrl::ControllerConfig& cc = cfg.controller;
    if (j.contains("controller")) {
        const json& c = j.at("controller");
        detail::check_keys(c, "controller",
                           {"lambda", "mc_samples", "eval_limit", "enumerate", "fc_bits",
                            "iterations", "batch", "lr", "proj", "hidden", "baseline",
                            "baseline_beta"});
        cc.reward.lambda = detail::get_or<double>(c, "lambda", cc.reward.lambda);
        cc.reward.mc_samples = detail::get_or<size_t>(c, "mc_samples", cc.reward.mc_samples);
        cc.reward.eval_limit = detail::get_or<size_t>(c, "eval_limit", cc.reward.eval_limit);
        cc.reward.enumerate = detail::get_or<bool>(c, "enumerate", cc.reward.enumerate);
        cc.reward.fc_bits = detail::get_or<int>(c, "fc_bits", cc.reward.fc_bits);
        cc.iterations = detail::get_or<size_t>(c, "iterations", cc.iterations);
        cc.batch = detail::get_or<size_t>(c, "batch", cc.batch);
        cc.lr = detail::get_or<double>(c, "lr", cc.lr);
        cc.proj = detail::get_or<size_t>(c, "proj", cc.proj);
        cc.hidden = detail::get_or<size_t>(c, "hidden", cc.hidden);
        cc.baseline = detail::get_or<bool>(c, "baseline", cc.baseline);
        cc.baseline_beta = detail::get_or<double>(c, "baseline_beta", cc.baseline_beta);
    }
    require(cc.reward.lambda >= 0.0, "config: controller.lambda must be non-negative");
    require(cc.reward.fc_bits >= ctrl::kMinBits && cc.reward.fc_bits <= ctrl::kMaxBits,
            "config: controller.fc_bits outside action range");

    quant::QuantizerConfig& qc = cfg.quantizer;
    if (j.contains("quantizer")) {
        const json& q = j.at("quantizer");
        detail::check_keys(q, "quantizer",
                           {"distance_clusters", "schedule", "retrain_steps", "retrain_batch",
                            "retrain_lr", "low_bit_threshold", "bypass"});
        qc.distance_clusters = detail::get_or<size_t>(q, "distance_clusters", qc.distance_clusters);
        qc.schedule_mode = detail::get_or<std::string>(q, "schedule", qc.schedule_mode);
        qc.retrain_steps = detail::get_or<size_t>(q, "retrain_steps", qc.retrain_steps);
        qc.retrain_batch = detail::get_or<size_t>(q, "retrain_batch", qc.retrain_batch);
        qc.retrain_lr = detail::get_or<double>(q, "retrain_lr", qc.retrain_lr);
        qc.low_bit_threshold = detail::get_or<int>(q, "low_bit_threshold", qc.low_bit_threshold);
        qc.bypass = detail::get_or<bool>(q, "bypass", qc.bypass);
    }
    require(qc.distance_clusters >= 1, "config: quantizer.distance_clusters must be positive");

    if (j.contains("paths")) {
        const json& p = j.at("paths");
        detail::check_keys(p, "paths",
                           {"checkpoint", "packed", "sequence", "train_metrics", "search_log",
                            "quant_metrics", "manifest", "report"});
        PathConfig& pc = cfg.paths;
        pc.checkpoint = detail::get_or<std::string>(p, "checkpoint", pc.checkpoint);
        pc.packed = detail::get_or<std::string>(p, "packed", pc.packed);
        pc.sequence = detail::get_or<std::string>(p, "sequence", pc.sequence);
        pc.train_metrics = detail::get_or<std::string>(p, "train_metrics", pc.train_metrics);
        pc.search_log = detail::get_or<std::string>(p, "search_log", pc.search_log);
        pc.quant_metrics = detail::get_or<std::string>(p, "quant_metrics", pc.quant_metrics);
        pc.manifest = detail::get_or<std::string>(p, "manifest", pc.manifest);
        pc.report = detail::get_or<std::string>(p, "report", pc.report);
    }

    // derived sub-seeds keep the stages decoupled but reproducible
    cfg.dataset.seed = splitmix64(cfg.seed + 0x64617461);
    cfg.dataset.dim = cfg.input.c * cfg.input.h * cfg.input.w;
    cfg.controller.seed = splitmix64(cfg.seed + 0x73726368);
    cfg.effective = j;
    return cfg;
}

inline json load_json(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cannot open config: " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw Error("config parse error in " + path + ": " + e.what());
    }
    return j;
}

// Applies one "dotted.path=value" override; values parse as JSON when
// possible and fall back to plain strings.
inline void apply_override(json& j, const std::string& expr) {
    size_t eq = expr.find('=');
    require(eq != std::string::npos && eq > 0, "override must look like section.key=value: " + expr);
    std::string path = expr.substr(0, eq);
    std::string value = expr.substr(eq + 1);
    std::string pointer = "/";
    for (char c : path) pointer += (c == '.') ? '/' : c;
    json v;
    try {
        v = json::parse(value);
    } catch (const json::exception&) {
        v = value;
    }
    try {
        j[json::json_pointer(pointer)] = v;
    } catch (const json::exception& e) {
        throw Error("bad override path '" + path + "': " + e.what());
    }
}

inline PipelineConfig load_config(const std::string& path,
                                  const std::vector<std::string>& overrides = {}) {
    json j = load_json(path);
    for (const std::string& o : overrides) apply_override(j, o);
    return parse_config(j);
}

inline uint64_t config_digest(const PipelineConfig& cfg) {
    std::string dump = cfg.effective.dump();  // object keys are sorted, so stable
    return fnv1a64(dump.data(), dump.size());
}

}  // namespace dnq::cli
