// Minimal deterministic feed-forward engine: dense and valid-mode 2-D
// convolution layers, ReLU between layers, softmax cross-entropy loss,
// plain SGD with optional per-weight update masks.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dnq/common.hpp"
#include "dnq/dataset.hpp"
#include "dnq/tensor.hpp"

namespace dnq {

enum class LayerKind : uint8_t { dense = 0, conv2d = 1 };

inline const char* layer_kind_name(LayerKind k) { return k == LayerKind::dense ? "dense" : "conv2d"; }

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    size_t fan_in = 0;       // dense: input dim; conv2d: input channels
    size_t fan_out = 0;      // dense: units; conv2d: output channels
    size_t kernel_h = 0;     // conv2d only
    size_t kernel_w = 0;
    size_t param_count = 0;  // weight scalars only; biases tracked separately
    bool quantizable = true;

    size_t bias_count() const { return fan_out; }
    size_t expected_param_count() const {
        return kind == LayerKind::dense ? fan_in * fan_out : fan_out * fan_in * kernel_h * kernel_w;
    }
};

struct Layer {
    LayerSpec spec;
    Tensor weights;
    Tensor bias;
};

/// Spatial shape carried between layers: channels x height x width.
struct Shape3 {
    size_t c = 1, h = 1, w = 1;
    size_t flat() const { return c * h * w; }
    bool operator==(const Shape3&) const = default;
};

struct NetworkModel {
    static constexpr int kFloatBits = 32;  // storage accounting for one float weight

    Shape3 input;
    std::vector<Layer> layers;

    size_t num_classes() const { return layers.empty() ? 0 : layers.back().spec.fan_out; }

    std::vector<size_t> quantizable_indices() const {
        std::vector<size_t> idx;
        for (size_t i = 0; i < layers.size(); ++i)
            if (layers[i].spec.quantizable) idx.push_back(i);
        return idx;
    }

    size_t total_quantizable_weights() const {
        size_t n = 0;
        for (const auto& l : layers)
            if (l.spec.quantizable) n += l.spec.param_count;
        return n;
    }

    /// Input shape of each layer, plus the final output shape at the back.
    std::vector<Shape3> shape_chain() const {
        std::vector<Shape3> chain;
        Shape3 cur = input;
        for (size_t i = 0; i < layers.size(); ++i) {
            chain.push_back(cur);
            const LayerSpec& s = layers[i].spec;
            std::string where = "layer " + std::to_string(i) + " (" + layer_kind_name(s.kind) + ")";
            if (s.kind == LayerKind::conv2d) {
                require(s.fan_in == cur.c, where + ": input channels " + std::to_string(cur.c) +
                                               " != expected " + std::to_string(s.fan_in));
                require(cur.h >= s.kernel_h && cur.w >= s.kernel_w,
                        where + ": kernel larger than input " + std::to_string(cur.h) + "x" +
                            std::to_string(cur.w));
                cur = Shape3{s.fan_out, cur.h - s.kernel_h + 1, cur.w - s.kernel_w + 1};
            } else {
                require(s.fan_in == cur.flat(), where + ": input dim " + std::to_string(cur.flat()) +
                                                    " != expected " + std::to_string(s.fan_in));
                cur = Shape3{s.fan_out, 1, 1};
            }
        }
        chain.push_back(cur);
        return chain;
    }

    void validate() const {
        require(!layers.empty(), "model has no layers");
        size_t quantizable = 0;
        for (size_t i = 0; i < layers.size(); ++i) {
            const Layer& l = layers[i];
            std::string where = "layer " + std::to_string(i);
            require(l.spec.param_count == l.spec.expected_param_count(),
                    where + ": param_count does not match dimensions");
            require(l.weights.size() == l.spec.param_count, where + ": weight tensor size mismatch");
            require(l.bias.size() == l.spec.bias_count(), where + ": bias tensor size mismatch");
            if (l.spec.quantizable) ++quantizable;
        }
        require(quantizable >= 1, "model must have at least one quantizable layer");
        shape_chain();  // throws on composition errors
    }
};

// ---- construction ------------------------------------------------------

struct LayerConfig {
    LayerKind kind = LayerKind::dense;
    size_t out = 0;  // dense units or conv output channels
    size_t kernel_h = 3, kernel_w = 3;
    bool quantizable = true;
};

/// Builds a model with scaled-uniform weight init (limit 1/sqrt(fan-in),
/// fan-in counted per output unit) and zero biases. Seeded, deterministic.
inline NetworkModel make_model(Shape3 input, const std::vector<LayerConfig>& configs, uint64_t seed) {
    require(!configs.empty(), "model needs at least one layer");
    NetworkModel model;
    model.input = input;
    Rng rng(seed);
    Shape3 cur = input;
    for (const LayerConfig& cfg : configs) {
        Layer layer;
        LayerSpec& s = layer.spec;
        s.kind = cfg.kind;
        s.fan_out = cfg.out;
        s.quantizable = cfg.quantizable;
        size_t receptive = 0;
        if (cfg.kind == LayerKind::conv2d) {
            s.fan_in = cur.c;
            s.kernel_h = cfg.kernel_h;
            s.kernel_w = cfg.kernel_w;
            receptive = cur.c * cfg.kernel_h * cfg.kernel_w;
            layer.weights = Tensor::zeros({s.fan_out, s.fan_in, s.kernel_h, s.kernel_w});
            require(cur.h >= s.kernel_h && cur.w >= s.kernel_w, "conv kernel larger than input");
            cur = Shape3{s.fan_out, cur.h - s.kernel_h + 1, cur.w - s.kernel_w + 1};
        } else {
            s.fan_in = cur.flat();
            receptive = s.fan_in;
            layer.weights = Tensor::zeros({s.fan_in, s.fan_out});
            cur = Shape3{s.fan_out, 1, 1};
        }
        s.param_count = s.expected_param_count();
        layer.bias = Tensor::zeros({s.bias_count()});
        double limit = 1.0 / std::sqrt(static_cast<double>(receptive));
        for (double& w : layer.weights.data) w = rng.uniform(-limit, limit);
        model.layers.push_back(std::move(layer));
    }
    model.validate();
    return model;
}

// ---- forward / backward ------------------------------------------------

struct ForwardResult {
    Tensor logits;  // {n, num_classes}
    double loss = 0.0;
};

struct LayerGradients {
    Tensor weights;
    Tensor bias;
};

struct BackwardResult {
    double loss = 0.0;
    std::vector<LayerGradients> grads;
};

namespace detail {

struct Workspace {
    std::vector<Tensor> acts;  // acts[i] = input to layer i; acts[L] = logits
    std::vector<Tensor> pre;   // pre[i] = linear output of layer i (before ReLU)
};

inline void dense_forward(const Layer& l, const Tensor& in, Tensor& out) {
    size_t n = in.shape[0], fi = l.spec.fan_in, fo = l.spec.fan_out;
    const double* w = l.weights.data.data();
    for (size_t s = 0; s < n; ++s) {
        double* o = out.data.data() + s * fo;
        for (size_t j = 0; j < fo; ++j) o[j] = l.bias[j];
        const double* x = in.data.data() + s * fi;
        for (size_t i = 0; i < fi; ++i) {
            double xi = x[i];
            if (xi == 0.0) continue;
            const double* wrow = w + i * fo;
            for (size_t j = 0; j < fo; ++j) o[j] += xi * wrow[j];
        }
    }
}

inline void conv_forward(const Layer& l, Shape3 in_shape, Shape3 out_shape, const Tensor& in,
                         Tensor& out) {
    size_t n = in.shape[0];
    size_t ic = in_shape.c, ih = in_shape.h, iw = in_shape.w;
    size_t oc = out_shape.c, oh = out_shape.h, ow = out_shape.w;
    size_t kh = l.spec.kernel_h, kw = l.spec.kernel_w;
    const double* wts = l.weights.data.data();
    for (size_t s = 0; s < n; ++s) {
        const double* x = in.data.data() + s * ic * ih * iw;
        double* o = out.data.data() + s * oc * oh * ow;
        for (size_t f = 0; f < oc; ++f) {
            double b = l.bias[f];
            for (size_t y = 0; y < oh; ++y)
                for (size_t xo = 0; xo < ow; ++xo) {
                    double acc = b;
                    for (size_t c = 0; c < ic; ++c) {
                        const double* xc = x + c * ih * iw;
                        const double* wc = wts + ((f * ic + c) * kh) * kw;
                        for (size_t u = 0; u < kh; ++u) {
                            const double* xrow = xc + (y + u) * iw + xo;
                            const double* wrow = wc + u * kw;
                            for (size_t v = 0; v < kw; ++v) acc += xrow[v] * wrow[v];
                        }
                    }
                    o[(f * oh + y) * ow + xo] = acc;
                }
        }
    }
}

/// Runs the network over rows [begin, begin+count) of `inputs`. Activations
/// are ReLU after every layer except the last. Fills `ws` when given.
inline Tensor run_layers(const NetworkModel& model, const Tensor& inputs, size_t begin, size_t count,
                         Workspace* ws) {
    const auto chain = model.shape_chain();
    require(inputs.shape.size() == 2 && inputs.shape[1] == model.input.flat(),
            "batch input dim " + std::to_string(inputs.shape.size() == 2 ? inputs.shape[1] : 0) +
                " != model input " + std::to_string(model.input.flat()));
    require(begin + count <= inputs.shape[0], "batch range out of bounds");

    Tensor cur = Tensor::zeros({count, model.input.flat()});
    std::copy(inputs.data.begin() + begin * cur.shape[1],
              inputs.data.begin() + (begin + count) * cur.shape[1], cur.data.begin());

    if (ws) {
        ws->acts.clear();
        ws->pre.clear();
    }
    for (size_t i = 0; i < model.layers.size(); ++i) {
        const Layer& l = model.layers[i];
        Tensor out = Tensor::zeros({count, chain[i + 1].flat()});
        if (l.spec.kind == LayerKind::dense)
            dense_forward(l, cur, out);
        else
            conv_forward(l, chain[i], chain[i + 1], cur, out);
        if (ws) {
            ws->acts.push_back(std::move(cur));
            ws->pre.push_back(out);  // copy kept for ReLU derivative
        }
        bool last = (i + 1 == model.layers.size());
        if (!last)
            for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        cur = std::move(out);
    }
    if (ws) ws->acts.push_back(cur);
    return cur;
}

/// Mean softmax cross-entropy; optional per-logit gradient (already /n).
inline double cross_entropy(const Tensor& logits, const std::vector<int>& labels, size_t begin,
                            size_t count, Tensor* dlogits) {
    size_t classes = logits.shape[1];
    double total = 0.0;
    for (size_t s = 0; s < count; ++s) {
        const double* z = logits.data.data() + s * classes;
        int label = labels[begin + s];
        double zmax = z[0];
        for (size_t j = 1; j < classes; ++j) zmax = std::max(zmax, z[j]);
        double sum = 0.0;
        for (size_t j = 0; j < classes; ++j) sum += std::exp(z[j] - zmax);
        double lse = std::log(sum) + zmax;
        total += lse - z[label];
        if (dlogits) {
            double* d = dlogits->data.data() + s * classes;
            for (size_t j = 0; j < classes; ++j) {
                double p = std::exp(z[j] - zmax) / sum;
                d[j] = (p - (static_cast<int>(j) == label ? 1.0 : 0.0)) / static_cast<double>(count);
            }
        }
    }
    return total / static_cast<double>(count);
}

inline void dense_backward(const Layer& l, const Tensor& in, const Tensor& dout, LayerGradients& g,
                           Tensor& din) {
    size_t n = in.shape[0], fi = l.spec.fan_in, fo = l.spec.fan_out;
    const double* w = l.weights.data.data();
    for (size_t s = 0; s < n; ++s) {
        const double* x = in.data.data() + s * fi;
        const double* d = dout.data.data() + s * fo;
        double* dx = din.data.data() + s * fi;
        for (size_t j = 0; j < fo; ++j) g.bias[j] += d[j];
        for (size_t i = 0; i < fi; ++i) {
            double xi = x[i];
            const double* wrow = w + i * fo;
            double* gw = g.weights.data.data() + i * fo;
            double acc = 0.0;
            for (size_t j = 0; j < fo; ++j) {
                gw[j] += xi * d[j];
                acc += wrow[j] * d[j];
            }
            dx[i] = acc;
        }
    }
}

inline void conv_backward(const Layer& l, Shape3 in_shape, Shape3 out_shape, const Tensor& in,
                          const Tensor& dout, LayerGradients& g, Tensor& din) {
    size_t n = in.shape[0];
    size_t ic = in_shape.c, ih = in_shape.h, iw = in_shape.w;
    size_t oc = out_shape.c, oh = out_shape.h, ow = out_shape.w;
    size_t kh = l.spec.kernel_h, kw = l.spec.kernel_w;
    const double* wts = l.weights.data.data();
    for (size_t s = 0; s < n; ++s) {
        const double* x = in.data.data() + s * ic * ih * iw;
        const double* d = dout.data.data() + s * oc * oh * ow;
        double* dx = din.data.data() + s * ic * ih * iw;
        for (size_t f = 0; f < oc; ++f) {
            const double* df = d + f * oh * ow;
            for (size_t y = 0; y < oh; ++y)
                for (size_t xo = 0; xo < ow; ++xo) g.bias[f] += df[y * ow + xo];
            for (size_t c = 0; c < ic; ++c) {
                const double* xc = x + c * ih * iw;
                double* dxc = dx + c * ih * iw;
                const double* wc = wts + ((f * ic + c) * kh) * kw;
                double* gw = g.weights.data.data() + ((f * ic + c) * kh) * kw;
                for (size_t y = 0; y < oh; ++y)
                    for (size_t xo = 0; xo < ow; ++xo) {
                        double dv = df[y * ow + xo];
                        if (dv == 0.0) continue;
                        for (size_t u = 0; u < kh; ++u)
                            for (size_t v = 0; v < kw; ++v) {
                                gw[u * kw + v] += dv * xc[(y + u) * iw + (xo + v)];
                                dxc[(y + u) * iw + (xo + v)] += dv * wc[u * kw + v];
                            }
                    }
            }
        }
    }
}

}  // namespace detail

/// Forward pass over rows [begin, begin+count) of the batch. count == 0
/// means the whole dataset. Deterministic; the model is not mutated.
inline ForwardResult forward(const NetworkModel& model, const Dataset& batch, size_t begin = 0,
                             size_t count = 0) {
    if (count == 0) count = batch.size() - begin;
    require(count > 0, "empty batch");
    ForwardResult r;
    r.logits = detail::run_layers(model, batch.inputs, begin, count, nullptr);
    r.loss = detail::cross_entropy(r.logits, batch.labels, begin, count, nullptr);
    require(r.logits.all_finite() && std::isfinite(r.loss), "forward produced non-finite values");
    return r;
}

/// Exact analytic gradients of the mean cross-entropy over the batch range.
inline BackwardResult backward(const NetworkModel& model, const Dataset& batch, size_t begin = 0,
                               size_t count = 0) {
    if (count == 0) count = batch.size() - begin;
    require(count > 0, "empty batch");
    const auto chain = model.shape_chain();
    detail::Workspace ws;
    Tensor logits = detail::run_layers(model, batch.inputs, begin, count, &ws);

    BackwardResult r;
    Tensor dcur = Tensor::zeros(logits.shape);
    r.loss = detail::cross_entropy(logits, batch.labels, begin, count, &dcur);

    r.grads.resize(model.layers.size());
    for (size_t i = model.layers.size(); i-- > 0;) {
        const Layer& l = model.layers[i];
        LayerGradients& g = r.grads[i];
        g.weights = Tensor::zeros(l.weights.shape);
        g.bias = Tensor::zeros(l.bias.shape);
        Tensor din = Tensor::zeros({count, chain[i].flat()});
        if (l.spec.kind == LayerKind::dense)
            detail::dense_backward(l, ws.acts[i], dcur, g, din);
        else
            detail::conv_backward(l, chain[i], chain[i + 1], ws.acts[i], dcur, g, din);
        if (i > 0) {
            // Through the previous layer's ReLU.
            const Tensor& pre = ws.pre[i - 1];
            for (size_t j = 0; j < din.size(); ++j)
                if (pre[j] <= 0.0) din[j] = 0.0;
        }
        dcur = std::move(din);
        require(g.weights.all_finite() && g.bias.all_finite(), "backward produced non-finite gradients");
    }
    return r;
}

/// Plain SGD update: w <- w - lr * g * m elementwise. `weight_masks`, when
/// given, holds one {0,1} tensor per layer (weight-shaped). Masked entries
/// are skipped entirely so they stay bit-identical. A layer's bias vector
/// updates iff its mask has at least one retrainable weight; with no masks
/// everything updates.
inline void sgd_step(NetworkModel& model, const std::vector<LayerGradients>& grads, double lr,
                     const std::vector<Tensor>* weight_masks = nullptr) {
    require(lr > 0.0, "sgd_step: learning rate must be positive");
    require(grads.size() == model.layers.size(), "sgd_step: gradient count mismatch");
    if (weight_masks)
        require(weight_masks->size() == model.layers.size(), "sgd_step: mask count mismatch");

    for (size_t i = 0; i < model.layers.size(); ++i) {
        Layer& l = model.layers[i];
        const LayerGradients& g = grads[i];
        require(g.weights.same_shape(l.weights) && g.bias.same_shape(l.bias),
                "sgd_step: gradient shape mismatch at layer " + std::to_string(i));
        const Tensor* mask = nullptr;
        if (weight_masks) {
            mask = &(*weight_masks)[i];
            require(mask->same_shape(l.weights), "sgd_step: mask shape mismatch at layer " + std::to_string(i));
        }
        bool any_trainable = false;
        for (size_t j = 0; j < l.weights.size(); ++j) {
            double m = mask ? (*mask)[j] : 1.0;
            require(m == 0.0 || m == 1.0, "sgd_step: mask entries must be 0 or 1");
            if (m == 1.0) {
                l.weights[j] -= lr * g.weights[j];
                any_trainable = true;
            }
        }
        if (any_trainable)
            for (size_t j = 0; j < l.bias.size(); ++j) l.bias[j] -= lr * g.bias[j];
    }
}

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Loss and top-1 accuracy over the first `limit` samples (0 = all).
inline EvalResult evaluate(const NetworkModel& model, const Dataset& data, size_t limit = 0) {
    size_t n = data.size();
    if (limit > 0 && limit < n) n = limit;
    ForwardResult fr = forward(model, data, 0, n);
    size_t classes = model.num_classes();
    size_t correct = 0;
    for (size_t s = 0; s < n; ++s) {
        const double* z = fr.logits.data.data() + s * classes;
        size_t arg = 0;
        for (size_t j = 1; j < classes; ++j)
            if (z[j] > z[arg]) arg = j;
        if (static_cast<int>(arg) == data.labels[s]) ++correct;
    }
    return EvalResult{fr.loss, static_cast<double>(correct) / static_cast<double>(n)};
}

/// Sequential mini-batch SGD over the training set (windows cycle in order;
/// no shuffling, so runs are reproducible). Pass `cursor_io` to resume the
/// window position across calls.
inline void train_sgd(NetworkModel& model, const Dataset& train, size_t steps, size_t batch_size,
                      double lr, const std::vector<Tensor>* weight_masks = nullptr,
                      size_t* cursor_io = nullptr) {
    require(batch_size > 0, "train_sgd: batch_size must be positive");
    size_t n = train.size();
    size_t local = 0;
    size_t& cursor = cursor_io ? *cursor_io : local;
    if (cursor >= n) cursor = 0;
    for (size_t step = 0; step < steps; ++step) {
        size_t count = std::min(batch_size, n - cursor);
        BackwardResult br = backward(model, train, cursor, count);
        sgd_step(model, br.grads, lr, weight_masks);
        cursor += count;
        if (cursor >= n) cursor = 0;
    }
}

}  // namespace dnq
