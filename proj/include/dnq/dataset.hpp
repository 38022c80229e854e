// Deterministic synthetic classification data (Gaussian blobs).
#pragma once

#include <cstdint>
#include <vector>

#include "dnq/common.hpp"
#include "dnq/tensor.hpp"

namespace dnq {

enum class Split { train, eval, test };

struct Dataset {
    Tensor inputs;            // shape {n, dim}
    std::vector<int> labels;  // values in [0, num_classes)
    Split split = Split::train;

    size_t size() const { return labels.size(); }
    size_t dim() const { return inputs.shape.size() == 2 ? inputs.shape[1] : 0; }

    void validate(size_t num_classes) const {
        require(inputs.shape.size() == 2, "dataset inputs must be a {n, dim} tensor");
        require(inputs.shape[0] == labels.size(), "dataset label count does not match inputs");
        for (int y : labels)
            require(y >= 0 && static_cast<size_t>(y) < num_classes, "dataset label out of range");
    }
};

struct SyntheticSpec {
    uint64_t seed = 0;
    size_t num_classes = 2;
    size_t n_train = 0;
    size_t n_eval = 0;
    size_t dim = 64;       // must equal the model's flattened input size
    double margin = 2.0;   // class-center radius; larger is easier
    double noise = 0.35;   // per-coordinate Gaussian noise
};

struct SyntheticData {
    Dataset train;
    Dataset eval;
};

/// Seeded Gaussian-blob classification set. Class centers are random unit
/// directions scaled by `margin`; samples add i.i.d. noise. Labels cycle
/// round-robin so splits stay balanced. Same spec -> bit-identical data;
/// train and eval are disjoint by construction (one stream, split in order).
inline SyntheticData make_synthetic_dataset(const SyntheticSpec& spec) {
    require(spec.num_classes >= 2, "synthetic dataset needs at least 2 classes");
    require(spec.n_train > 0 && spec.n_eval > 0, "synthetic dataset sizes must be positive");
    require(spec.dim > 0, "synthetic dataset dim must be positive");

    Rng rng(spec.seed);

    std::vector<std::vector<double>> centers(spec.num_classes, std::vector<double>(spec.dim));
    for (auto& c : centers) {
        double norm2 = 0.0;
        for (auto& v : c) {
            v = rng.gaussian();
            norm2 += v * v;
        }
        double scale = spec.margin / std::sqrt(norm2);
        for (auto& v : c) v *= scale;
    }

    size_t total = spec.n_train + spec.n_eval;
    Tensor inputs = Tensor::zeros({total, spec.dim});
    std::vector<int> labels(total);
    for (size_t i = 0; i < total; ++i) {
        int y = static_cast<int>(i % spec.num_classes);
        labels[i] = y;
        double* row = inputs.data.data() + i * spec.dim;
        for (size_t d = 0; d < spec.dim; ++d) row[d] = centers[y][d] + spec.noise * rng.gaussian();
    }

    SyntheticData out;
    out.train.split = Split::train;
    out.train.labels.assign(labels.begin(), labels.begin() + spec.n_train);
    out.train.inputs = Tensor::zeros({spec.n_train, spec.dim});
    std::copy(inputs.data.begin(), inputs.data.begin() + spec.n_train * spec.dim,
              out.train.inputs.data.begin());

    out.eval.split = Split::eval;
    out.eval.labels.assign(labels.begin() + spec.n_train, labels.end());
    out.eval.inputs = Tensor::zeros({spec.n_eval, spec.dim});
    std::copy(inputs.data.begin() + spec.n_train * spec.dim, inputs.data.end(),
              out.eval.inputs.data.begin());
    return out;
}

}  // namespace dnq
