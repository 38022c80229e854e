// Checkpoint container: magic "DNQ1", engine version, layer specs, then raw
// little-endian float64 weight and bias arrays. A trailing FNV-1a digest
// covers every preceding byte. Round-trips bit-exactly.
#pragma once

#include <filesystem>
#include <fstream>
#include <vector>

#include "dnq/common.hpp"
#include "dnq/network.hpp"

namespace dnq {

inline constexpr uint32_t kCheckpointVersion = 1;

inline std::vector<uint8_t> encode_checkpoint(const NetworkModel& model) {
    model.validate();
    ByteWriter w;
    w.magic("DNQ1");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<uint32_t>(model.input.c));
    w.u32(static_cast<uint32_t>(model.input.h));
    w.u32(static_cast<uint32_t>(model.input.w));
    w.u32(static_cast<uint32_t>(model.layers.size()));
    for (const Layer& l : model.layers) {
        w.u8(static_cast<uint8_t>(l.spec.kind));
        w.u8(l.spec.quantizable ? 1 : 0);
        w.u16(0);
        w.u32(static_cast<uint32_t>(l.spec.fan_in));
        w.u32(static_cast<uint32_t>(l.spec.fan_out));
        w.u32(static_cast<uint32_t>(l.spec.kernel_h));
        w.u32(static_cast<uint32_t>(l.spec.kernel_w));
        w.u64(l.spec.param_count);
        w.u64(l.spec.bias_count());
    }
    for (const Layer& l : model.layers) {
        for (double v : l.weights.data) w.f64(v);
        for (double v : l.bias.data) w.f64(v);
    }
    w.u64(fnv1a64(w.bytes()));
    return w.take();
}

inline NetworkModel decode_checkpoint(const std::vector<uint8_t>& bytes) {
    require(bytes.size() > 8, "checkpoint: file too short");
    uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    require(stored == fnv1a64(bytes.data(), bytes.size() - 8), "checkpoint: digest mismatch");

    ByteReader r(bytes.data(), bytes.size() - 8);
    r.expect_magic("DNQ1", "checkpoint");
    uint32_t version = r.u32();
    require(version == kCheckpointVersion, "checkpoint: unsupported version " + std::to_string(version));

    NetworkModel model;
    model.input.c = r.u32();
    model.input.h = r.u32();
    model.input.w = r.u32();
    uint32_t layer_count = r.u32();
    require(layer_count > 0 && layer_count < 4096, "checkpoint: implausible layer count");

    std::vector<uint64_t> bias_counts;
    for (uint32_t i = 0; i < layer_count; ++i) {
        Layer l;
        uint8_t kind = r.u8();
        require(kind <= 1, "checkpoint: unknown layer kind");
        l.spec.kind = static_cast<LayerKind>(kind);
        l.spec.quantizable = r.u8() != 0;
        r.u16();
        l.spec.fan_in = r.u32();
        l.spec.fan_out = r.u32();
        l.spec.kernel_h = r.u32();
        l.spec.kernel_w = r.u32();
        l.spec.param_count = r.u64();
        bias_counts.push_back(r.u64());
        model.layers.push_back(std::move(l));
    }
    for (uint32_t i = 0; i < layer_count; ++i) {
        Layer& l = model.layers[i];
        require(bias_counts[i] == l.spec.bias_count(), "checkpoint: bias count mismatch");
        std::vector<double> wdata(l.spec.param_count);
        for (double& v : wdata) v = r.f64();
        std::vector<double> bdata(bias_counts[i]);
        for (double& v : bdata) v = r.f64();
        if (l.spec.kind == LayerKind::conv2d)
            l.weights = Tensor({l.spec.fan_out, l.spec.fan_in, l.spec.kernel_h, l.spec.kernel_w},
                               std::move(wdata));
        else
            l.weights = Tensor({l.spec.fan_in, l.spec.fan_out}, std::move(wdata));
        l.bias = Tensor({bias_counts[i]}, std::move(bdata));
    }
    require(r.remaining() == 0, "checkpoint: trailing bytes");
    model.validate();
    return model;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(f.good(), "write failed: " + path);
}

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    require(f.good(), "cannot open: " + path);
    auto size = static_cast<size_t>(f.tellg());
    f.seekg(0);
    std::vector<uint8_t> bytes(size);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    require(f.good(), "read failed: " + path);
    return bytes;
}

inline void save_checkpoint(const NetworkModel& model, const std::string& path) {
    write_file(path, encode_checkpoint(model));
}

inline NetworkModel load_checkpoint(const std::string& path) {
    return decode_checkpoint(read_file(path));
}

}  // namespace dnq
