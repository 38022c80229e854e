// Pipeline stages behind the command-line tool. Every stage reads and writes
// files only, so any stage can be rerun or replaced in isolation (a manually
// written sequence file drives quantize just as well as a searched one). All
// numeric output is printed with round-trip precision so reruns are
// byte-comparable.
#pragma once

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "dnq/checkpoint.hpp"
#include "dnq/codec.hpp"
#include "dnq/config.hpp"
#include "dnq/controller.hpp"
#include "dnq/quantizer.hpp"

namespace dnq::cli {

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string hex64(uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

inline std::string join_bits(const std::vector<int>& bits, char sep = '-') {
    std::string s;
    for (size_t i = 0; i < bits.size(); ++i) {
        if (i) s += sep;
        s += std::to_string(bits[i]);
    }
    return s;
}

inline void write_text(const std::string& path, const std::string& text) {
    write_file(path, std::vector<uint8_t>(text.begin(), text.end()));
}

inline uint64_t file_digest(const std::string& path) { return fnv1a64(read_file(path)); }

class StageTimer {
  public:
    StageTimer() : start_(std::chrono::steady_clock::now()) {}
    int64_t ms() const {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - start_)
            .count();
    }

  private:
    std::chrono::steady_clock::time_point start_;
};

// Records per-stage inputs, outputs, and timing keyed by config digest.
// Digest equality across runs is the reproducibility check; wall time is
// informational only.
inline void record_stage(const PipelineConfig& cfg, const std::string& stage,
                         const std::vector<std::string>& inputs,
                         const std::vector<std::string>& outputs, int64_t wall_ms) {
    json manifest;
    std::ifstream f(cfg.paths.manifest);
    if (f.good()) {
        try {
            manifest = json::parse(f);
        } catch (const json::exception&) {
            manifest = json::object();
        }
    }
    manifest["tool_version"] = kVersion;
    manifest["config_digest"] = hex64(config_digest(cfg));
    json in = json::object(), out = json::object();
    for (const std::string& p : inputs) in[p] = hex64(file_digest(p));
    for (const std::string& p : outputs) out[p] = hex64(file_digest(p));
    manifest["stages"][stage] = {{"inputs", in}, {"outputs", out}, {"wall_ms", wall_ms}};
    write_text(cfg.paths.manifest, manifest.dump(2) + "\n");
}

inline NetworkModel build_model(const PipelineConfig& cfg) {
    return make_model(cfg.input, cfg.layers, splitmix64(cfg.seed + 0x6d6f646c));
}

}  // namespace detail

inline int cmd_train(const PipelineConfig& cfg) {
    detail::StageTimer timer;
    SyntheticData data = make_synthetic_dataset(cfg.dataset);
    NetworkModel model = detail::build_model(cfg);

    std::ostringstream csv;
    csv << "step,train_loss,eval_accuracy\n";
    size_t cursor = 0;
    size_t done = 0;
    while (done < cfg.train.steps) {
        size_t chunk = std::min(cfg.train.log_every, cfg.train.steps - done);
        train_sgd(model, data.train, chunk, cfg.train.batch, cfg.train.lr, nullptr, &cursor);
        done += chunk;
        EvalResult ev = evaluate(model, data.eval);
        double train_loss = forward(model, data.train, 0, std::min<size_t>(data.train.size(), 256)).loss;
        csv << done << "," << detail::fmt(train_loss) << "," << detail::fmt(ev.accuracy) << "\n";
    }
    save_checkpoint(model, cfg.paths.checkpoint);
    detail::write_text(cfg.paths.train_metrics, csv.str());

    EvalResult ev = evaluate(model, data.eval);
    std::cout << "baseline: eval_accuracy=" << detail::fmt(ev.accuracy)
              << " eval_loss=" << detail::fmt(ev.loss) << " checkpoint=" << cfg.paths.checkpoint
              << "\n";
    detail::record_stage(cfg, "train", {}, {cfg.paths.checkpoint, cfg.paths.train_metrics},
                         timer.ms());
    return 0;
}

inline int cmd_search(const PipelineConfig& cfg) {
    detail::StageTimer timer;
    NetworkModel model = load_checkpoint(cfg.paths.checkpoint);
    SyntheticData data = make_synthetic_dataset(cfg.dataset);

    ctrl::SearchResult res = ctrl::train_controller(model, data, cfg.controller);

    std::ostringstream csv;
    csv << "iteration,mean_reward,best_reward,best_sequence\n";
    for (const ctrl::HistoryRow& row : res.history)
        csv << row.iteration << "," << detail::fmt(row.mean_reward) << ","
            << detail::fmt(row.best_reward) << "," << detail::join_bits(row.best_bits) << "\n";
    detail::write_text(cfg.paths.search_log, csv.str());

    json seq = {{"bits", res.best_full},
                {"source", "search"},
                {"lambda", cfg.controller.reward.lambda},
                {"reward", res.best.reward},
                {"accuracy", res.best.accuracy},
                {"ratio", res.best.ratio}};
    detail::write_text(cfg.paths.sequence, seq.dump(2) + "\n");

    std::cout << "search: best_bits=" << detail::join_bits(res.best_full)
              << " reward=" << detail::fmt(res.best.reward)
              << " accuracy=" << detail::fmt(res.best.accuracy)
              << " ratio=" << detail::fmt(res.best.ratio)
              << " unique_sequences=" << res.unique_sequences << "\n";
    detail::record_stage(cfg, "search", {cfg.paths.checkpoint},
                         {cfg.paths.sequence, cfg.paths.search_log}, timer.ms());
    return 0;
}

inline std::vector<int> read_sequence_file(const std::string& path, size_t expected) {
    json j = load_json(path);
    require(j.contains("bits") && j.at("bits").is_array(), "sequence file: missing bits array");
    std::vector<int> bits = j.at("bits").get<std::vector<int>>();
    require(bits.size() == expected, "sequence file: expected " + std::to_string(expected) +
                                         " bit-widths, found " + std::to_string(bits.size()));
    for (int b : bits)
        require(b >= ctrl::kMinBits && b <= ctrl::kMaxBits,
                "sequence file: bit-width " + std::to_string(b) + " outside [2,8]");
    return bits;
}

// `uniform_bits` > 0 selects module-2-only mode: every quantizable layer gets
// that bit-width and no sequence file is touched.
inline int cmd_quantize(const PipelineConfig& cfg, int uniform_bits = 0) {
    detail::StageTimer timer;
    NetworkModel model = load_checkpoint(cfg.paths.checkpoint);
    SyntheticData data = make_synthetic_dataset(cfg.dataset);
    size_t nq = model.quantizable_indices().size();

    std::vector<int> bits;
    std::vector<std::string> inputs = {cfg.paths.checkpoint};
    if (uniform_bits > 0) {
        require(uniform_bits >= ctrl::kMinBits && uniform_bits <= ctrl::kMaxBits,
                "uniform bits outside [2,8]");
        bits.assign(nq, uniform_bits);
    } else {
        bits = read_sequence_file(cfg.paths.sequence, nq);
        inputs.push_back(cfg.paths.sequence);
    }

    quant::QuantizeResult res = quant::quantize_network(model, bits, data, cfg.quantizer);

    std::ostringstream csv;
    csv << "iteration,quantized_fraction,train_loss,eval_accuracy\n";
    for (const quant::IterationMetrics& it : res.metrics)
        csv << it.iteration << "," << detail::fmt(it.quantized_fraction) << ","
            << detail::fmt(it.train_loss) << "," << detail::fmt(it.eval_accuracy) << "\n";
    detail::write_text(cfg.paths.quant_metrics, csv.str());

    codec::PackPlan plan(model.layers.size());
    for (const quant::LayerQuantState& st : res.states) plan[st.layer_index] = st.codebook;
    std::vector<uint8_t> packed = codec::encode_packed(model, plan);
    write_file(cfg.paths.packed, packed);

    codec::CompressionSpec spec = codec::spec_from_plan(model, plan);
    EvalResult ev = evaluate(model, data.eval);
    std::cout << "quantize: bits=" << detail::join_bits(bits)
              << " eval_accuracy=" << detail::fmt(ev.accuracy)
              << " ratio=" << detail::fmt(codec::compression_ratio(spec))
              << " packed=" << cfg.paths.packed << " (" << packed.size() << " bytes)\n";
    detail::record_stage(cfg, "quantize", inputs, {cfg.paths.packed, cfg.paths.quant_metrics},
                         timer.ms());
    return 0;
}

inline int cmd_eval(const PipelineConfig& cfg) {
    detail::StageTimer timer;
    codec::UnpackResult u = codec::decode_packed(read_file(cfg.paths.packed));
    SyntheticData data = make_synthetic_dataset(cfg.dataset);
    EvalResult ev = evaluate(u.model, data.eval);

    std::vector<int> bits;
    for (const codec::LayerPlan& l : u.spec.layers)
        if (l.k > 0) bits.push_back(l.b);
    std::string row = "bits=" + detail::join_bits(bits) +
                      " eval_accuracy=" + detail::fmt(ev.accuracy) +
                      " eval_loss=" + detail::fmt(ev.loss) +
                      " ratio=" + detail::fmt(codec::compression_ratio(u.spec)) + "\n";
    detail::write_text(cfg.paths.report, row);
    std::cout << row;
    detail::record_stage(cfg, "eval", {cfg.paths.packed}, {cfg.paths.report}, timer.ms());
    return 0;
}

inline int cmd_export(const PipelineConfig& cfg, bool dump_layout) {
    codec::UnpackResult u = codec::decode_packed(read_file(cfg.paths.packed));
    std::cout << "packed model " << cfg.paths.packed << ": " << u.model.layers.size()
              << " layers, " << u.file_size << " bytes, payload " << u.payload
              << " bytes, ratio " << detail::fmt(codec::compression_ratio(u.spec)) << "\n";
    if (dump_layout) std::cout << codec::dump_layout(u);
    return 0;
}

}  // namespace dnq::cli
