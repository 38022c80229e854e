// Compression accounting and the packed model container. A quantized layer
// is stored as its float32 centroid table plus one b-bit codebook index per
// weight, packed LSB-first and byte-aligned per layer. The compression ratio
// compares 32-bit float storage of all weights against index bits plus
// codebook bits, which is exactly what the packed payload holds (up to 7
// padding bits per layer). Biases and the container header sit outside the
// accounting and are documented overhead.
#pragma once

#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "dnq/common.hpp"
#include "dnq/network.hpp"
#include "dnq/quantizer.hpp"

namespace dnq::codec {

inline constexpr int kFloatBits = 32;
inline constexpr uint32_t kPackedVersion = 1;

struct LayerPlan {
    size_t n = 0;   // weight count
    int b = 0;      // index bit-width (32 for raw layers)
    size_t k = 0;   // codebook entries (0 for raw layers)
};

struct CompressionSpec {
    std::vector<LayerPlan> layers;

    void validate() const {
        require(!layers.empty(), "compression spec: no layers");
        for (const LayerPlan& l : layers) {
            require(l.n > 0, "compression spec: empty layer");
            if (l.k > 0) {
                require(l.b >= 2 && l.b <= 8, "compression spec: bits out of range");
                require(l.k == centroid_count_for_bits(l.b), "compression spec: k != 2^(b-1)+1");
            } else {
                require(l.b == kFloatBits, "compression spec: raw layer must use float bits");
            }
        }
    }
};

inline double compression_ratio(const CompressionSpec& spec) {
    spec.validate();
    double num = 0.0, den = 0.0;
    for (const LayerPlan& l : spec.layers) {
        num += static_cast<double>(l.n) * kFloatBits;
        den += static_cast<double>(l.n) * l.b + static_cast<double>(l.k) * kFloatBits;
    }
    return num / den;
}

// Payload bytes the packed file spends on one layer (centroids + indices,
// rounded up to whole bytes; raw layers store plain float32 weights).
inline size_t layer_payload_bytes(const LayerPlan& l) {
    if (l.k == 0) return l.n * 4;
    return l.k * 4 + (l.n * static_cast<size_t>(l.b) + 7) / 8;
}

inline size_t payload_bytes(const CompressionSpec& spec) {
    size_t total = 0;
    for (const LayerPlan& l : spec.layers) total += layer_payload_bytes(l);
    return total;
}

inline std::vector<uint8_t> pack_indices(const std::vector<uint32_t>& indices, int bits) {
    require(bits >= 1 && bits <= 32, "pack_indices: bits out of range");
    std::vector<uint8_t> bytes((indices.size() * static_cast<size_t>(bits) + 7) / 8, 0);
    size_t p = 0;
    for (uint32_t v : indices) {
        for (int j = 0; j < bits; ++j, ++p)
            if ((v >> j) & 1u) bytes[p >> 3] |= static_cast<uint8_t>(1u << (p & 7));
        require(bits == 32 || (v >> bits) == 0, "pack_indices: value does not fit bit-width");
    }
    return bytes;
}

inline std::vector<uint32_t> unpack_indices(const std::vector<uint8_t>& bytes, size_t n, int bits) {
    require(bytes.size() * 8 >= n * static_cast<size_t>(bits), "unpack_indices: stream too short");
    std::vector<uint32_t> out(n, 0);
    size_t p = 0;
    for (size_t i = 0; i < n; ++i)
        for (int j = 0; j < bits; ++j, ++p)
            if (bytes[p >> 3] & (1u << (p & 7))) out[i] |= 1u << j;
    return out;
}

// Per-layer packing plan: a codebook for coded layers, nothing for raw ones.
using PackPlan = std::vector<std::optional<quant::Codebook>>;

inline CompressionSpec spec_from_plan(const NetworkModel& model, const PackPlan& plan) {
    require(plan.size() == model.layers.size(), "pack: one plan entry per layer required");
    CompressionSpec spec;
    for (size_t i = 0; i < plan.size(); ++i) {
        const Layer& l = model.layers[i];
        if (plan[i])
            spec.layers.push_back({l.weights.size(), plan[i]->bits, plan[i]->k()});
        else
            spec.layers.push_back({l.weights.size(), kFloatBits, 0});
    }
    spec.validate();
    return spec;
}

inline std::vector<uint8_t> encode_packed(const NetworkModel& model, const PackPlan& plan) {
    model.validate();
    CompressionSpec spec = spec_from_plan(model, plan);

    ByteWriter w;
    w.magic("DNQP");
    w.u32(kPackedVersion);
    w.u32(static_cast<uint32_t>(model.input.c));
    w.u32(static_cast<uint32_t>(model.input.h));
    w.u32(static_cast<uint32_t>(model.input.w));
    w.u32(static_cast<uint32_t>(model.layers.size()));
    for (size_t i = 0; i < model.layers.size(); ++i) {
        const Layer& l = model.layers[i];
        w.u8(static_cast<uint8_t>(l.spec.kind));
        w.u8(plan[i] ? 0 : 1);  // storage: 0 = coded, 1 = raw
        w.u8(static_cast<uint8_t>(spec.layers[i].b));
        w.u8(l.spec.quantizable ? 1 : 0);
        w.u32(static_cast<uint32_t>(l.spec.fan_in));
        w.u32(static_cast<uint32_t>(l.spec.fan_out));
        w.u32(static_cast<uint32_t>(l.spec.kernel_h));
        w.u32(static_cast<uint32_t>(l.spec.kernel_w));
        w.u64(l.spec.param_count);
        w.u64(l.spec.bias_count());
        w.u32(static_cast<uint32_t>(spec.layers[i].k));
    }
    for (size_t i = 0; i < model.layers.size(); ++i) {
        const Layer& l = model.layers[i];
        if (plan[i]) {
            const quant::Codebook& cb = *plan[i];
            cb.validate();
            for (double c : cb.centroids) w.f32(static_cast<float>(c));
            std::vector<uint32_t> idx(l.weights.size());
            for (size_t j = 0; j < l.weights.size(); ++j) {
                auto it = std::lower_bound(cb.centroids.begin(), cb.centroids.end(), l.weights[j]);
                require(it != cb.centroids.end() && *it == l.weights[j],
                        "pack: weight " + std::to_string(j) + " of layer " + std::to_string(i) +
                            " is not in the codebook (quantization incomplete)");
                idx[j] = static_cast<uint32_t>(it - cb.centroids.begin());
            }
            for (uint8_t byte : pack_indices(idx, cb.bits)) w.u8(byte);
        } else {
            for (size_t j = 0; j < l.weights.size(); ++j)
                w.f32(static_cast<float>(l.weights[j]));
        }
        for (size_t j = 0; j < l.bias.size(); ++j) w.f64(l.bias[j]);
    }
    w.u64(fnv1a64(w.bytes()));
    return w.take();
}

struct UnpackResult {
    NetworkModel model;
    CompressionSpec spec;
    PackPlan plan;         // recovered codebooks
    size_t payload = 0;    // centroid + index bytes actually read
    size_t file_size = 0;
};

inline UnpackResult decode_packed(const std::vector<uint8_t>& bytes) {
    require(bytes.size() > 8, "packed: file too short");
    uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    require(stored == fnv1a64(bytes.data(), bytes.size() - 8), "packed: digest mismatch");

    ByteReader r(bytes.data(), bytes.size() - 8);
    r.expect_magic("DNQP", "packed");
    uint32_t version = r.u32();
    require(version == kPackedVersion, "packed: unsupported version " + std::to_string(version));

    UnpackResult out;
    out.file_size = bytes.size();
    out.model.input.c = r.u32();
    out.model.input.h = r.u32();
    out.model.input.w = r.u32();
    uint32_t layer_count = r.u32();
    require(layer_count > 0 && layer_count < 4096, "packed: implausible layer count");

    struct Header {
        uint8_t kind, storage, bits, quantizable;
        uint32_t fan_in, fan_out, kh, kw, k;
        uint64_t n, biases;
    };
    std::vector<Header> hs(layer_count);
    for (Header& h : hs) {
        h.kind = r.u8();
        require(h.kind <= 1, "packed: unknown layer kind");
        h.storage = r.u8();
        require(h.storage <= 1, "packed: unknown storage mode");
        h.bits = r.u8();
        h.quantizable = r.u8();
        h.fan_in = r.u32();
        h.fan_out = r.u32();
        h.kh = r.u32();
        h.kw = r.u32();
        h.n = r.u64();
        h.biases = r.u64();
        h.k = r.u32();
        if (h.storage == 0) {
            require(h.bits >= 2 && h.bits <= 8, "packed: coded layer bits out of range");
            require(h.k == centroid_count_for_bits(h.bits), "packed: k != 2^(b-1)+1");
        } else {
            require(h.bits == kFloatBits && h.k == 0, "packed: bad raw layer header");
        }
    }
    for (uint32_t i = 0; i < layer_count; ++i) {
        const Header& h = hs[i];
        Layer l;
        l.spec.kind = static_cast<LayerKind>(h.kind);
        l.spec.quantizable = h.quantizable != 0;
        l.spec.fan_in = h.fan_in;
        l.spec.fan_out = h.fan_out;
        l.spec.kernel_h = h.kh;
        l.spec.kernel_w = h.kw;
        l.spec.param_count = h.n;

        std::vector<double> wdata(h.n);
        if (h.storage == 0) {
            quant::Codebook cb;
            cb.layer_index = i;
            cb.bits = h.bits;
            cb.centroids.resize(h.k);
            for (double& c : cb.centroids) c = static_cast<double>(r.f32());
            cb.validate();
            std::vector<uint8_t> stream((h.n * h.bits + 7) / 8);
            for (uint8_t& byte : stream) byte = r.u8();
            out.payload += h.k * 4 + stream.size();
            std::vector<uint32_t> idx = unpack_indices(stream, h.n, h.bits);
            for (size_t j = 0; j < h.n; ++j) {
                require(idx[j] < h.k, "packed: index out of range at layer " + std::to_string(i) +
                                          ", weight " + std::to_string(j));
                wdata[j] = cb.centroids[idx[j]];
            }
            out.plan.push_back(std::move(cb));
            out.spec.layers.push_back({h.n, h.bits, h.k});
        } else {
            for (double& v : wdata) v = static_cast<double>(r.f32());
            out.payload += h.n * 4;
            out.plan.push_back(std::nullopt);
            out.spec.layers.push_back({h.n, kFloatBits, 0});
        }
        if (l.spec.kind == LayerKind::conv2d)
            l.weights = Tensor({h.fan_out, h.fan_in, h.kh, h.kw}, std::move(wdata));
        else
            l.weights = Tensor({h.fan_in, h.fan_out}, std::move(wdata));
        std::vector<double> bdata(h.biases);
        for (double& v : bdata) v = r.f64();
        require(h.biases == l.spec.bias_count(), "packed: bias count mismatch");
        l.bias = Tensor({h.biases}, std::move(bdata));
        out.model.layers.push_back(std::move(l));
    }
    require(r.remaining() == 0, "packed: trailing bytes");
    out.model.validate();
    out.spec.validate();
    return out;
}

// Human-readable per-layer bit budget table.
inline std::string dump_layout(const UnpackResult& u) {
    std::ostringstream os;
    os << std::left << std::setw(6) << "layer" << std::setw(8) << "kind" << std::setw(9) << "n"
       << std::setw(6) << "bits" << std::setw(4) << "k" << std::setw(12) << "centroid_B"
       << std::setw(9) << "index_B" << "pad_bits\n";
    size_t raw_bytes = 0;
    for (size_t i = 0; i < u.spec.layers.size(); ++i) {
        const LayerPlan& l = u.spec.layers[i];
        raw_bytes += l.n * 4;
        size_t idx_bytes = l.k > 0 ? (l.n * static_cast<size_t>(l.b) + 7) / 8 : l.n * 4;
        size_t pad = l.k > 0 ? idx_bytes * 8 - l.n * static_cast<size_t>(l.b) : 0;
        os << std::left << std::setw(6) << i << std::setw(8)
           << (u.model.layers[i].spec.kind == LayerKind::conv2d ? "conv2d" : "dense")
           << std::setw(9) << l.n << std::setw(6) << l.b << std::setw(4) << l.k << std::setw(12)
           << l.k * 4 << std::setw(9) << idx_bytes << pad << "\n";
    }
    os << "payload bytes: " << payload_bytes(u.spec) << " (file " << u.file_size
       << " incl. header, biases, digest)\n";
    os << "float32 weight bytes: " << raw_bytes << "\n";
    os << "ratio (formula): " << compression_ratio(u.spec) << "\n";
    os << "ratio (physical payload): "
       << static_cast<double>(raw_bytes) / static_cast<double>(payload_bytes(u.spec)) << "\n";
    return os.str();
}

// Documented CIFAR-Net-shaped layer table used by the analytic ratio checks:
// three 5x5 conv layers (3->32, 32->32, 32->64) and two dense layers
// (1024->64, 64->10).
inline std::vector<std::pair<std::string, size_t>> cifar_net_reference_counts() {
    return {{"conv1", 2400}, {"conv2", 25600}, {"conv3", 51200}, {"fc1", 65536}, {"fc2", 640}};
}

inline CompressionSpec cifar_net_spec(const std::vector<int>& conv_bits, int fc_bits) {
    auto counts = cifar_net_reference_counts();
    require(conv_bits.size() == 3, "cifar_net_spec: three conv bit-widths required");
    CompressionSpec spec;
    for (size_t i = 0; i < counts.size(); ++i) {
        int b = i < 3 ? conv_bits[i] : fc_bits;
        spec.layers.push_back({counts[i].second, b, centroid_count_for_bits(b)});
    }
    return spec;
}

}  // namespace dnq::codec
