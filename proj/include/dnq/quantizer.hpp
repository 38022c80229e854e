// Iterative weight quantizer. Each layer gets a k-means codebook with a
// reserved zero entry (k = 2^(b-1)+1 for bit-width b). Weights are then
// frozen onto their centroids over several iterations, highest quantization
// distance first, with masked SGD retraining the still-free weights between
// iterations. Centroids are snapped to float32 so a packed file reproduces
// them exactly.
#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "dnq/kmeans.hpp"
#include "dnq/network.hpp"

namespace dnq::quant {

inline constexpr uint32_t kNoCluster = std::numeric_limits<uint32_t>::max();

inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

struct Codebook {
    size_t layer_index = 0;
    int bits = 0;
    std::vector<double> centroids;  // strictly increasing, float32-representable, contains 0.0

    size_t k() const { return centroids.size(); }

    void validate() const {
        require(bits >= 2 && bits <= 8, "codebook: bits out of range");
        require(centroids.size() == centroid_count_for_bits(bits), "codebook: wrong centroid count");
        bool has_zero = false;
        for (size_t i = 0; i < centroids.size(); ++i) {
            require(std::isfinite(centroids[i]), "codebook: non-finite centroid");
            require(centroids[i] == to_f32(centroids[i]), "codebook: centroid not float32-exact");
            if (centroids[i] == 0.0) has_zero = true;
            if (i > 0) require(centroids[i] > centroids[i - 1], "codebook: centroids not strictly increasing");
        }
        require(has_zero, "codebook: missing zero centroid");
    }
};

// Sort, snap to float32, and separate duplicates. Lloyd output can only
// collide on empty placeholder clusters (non-empty 1-D clusters are disjoint
// intervals, so their means stay ordered), and float32 snapping can merge
// near-equal neighbours; in both cases the later entry is bumped one float32
// ulp at a time, which never moves a centroid any weight resolves to first.
inline std::vector<double> canonicalize_centroids(std::vector<double> cs) {
    for (double& c : cs) {
        c = to_f32(c);
        if (c == 0.0) c = 0.0;  // normalize -0.0
    }
    std::sort(cs.begin(), cs.end());
    for (size_t i = 1; i < cs.size(); ++i)
        while (cs[i] <= cs[i - 1]) {
            float f = static_cast<float>(cs[i - 1]);
            cs[i] = static_cast<double>(std::nextafter(f, std::numeric_limits<float>::infinity()));
        }
    return cs;
}

inline Codebook build_codebook(const std::vector<double>& values, int bits, size_t layer_index = 0) {
    require(bits >= 2 && bits <= 8, "build_codebook: bits must be in [2,8]");
    size_t k = centroid_count_for_bits(bits);
    KMeansResult km = kmeans_1d(values, k, /*pin_zero=*/true);
    Codebook cb;
    cb.layer_index = layer_index;
    cb.bits = bits;
    cb.centroids = canonicalize_centroids(std::move(km.centroids));
    cb.validate();
    return cb;
}

struct ClusterResult {
    Codebook codebook;
    std::vector<uint32_t> assignment;
};

// Fresh clustering when no frozen codebook is given; otherwise an
// assignment-only pass against the frozen centroids.
inline ClusterResult weight_cluster(const Tensor& weights, int bits,
                                    const std::optional<Codebook>& frozen = std::nullopt,
                                    size_t layer_index = 0) {
    require(weights.size() > 0, "weight_cluster: empty weight tensor");
    ClusterResult r;
    if (frozen) {
        frozen->validate();
        require(frozen->bits == bits, "weight_cluster: frozen codebook bit-width mismatch");
        r.codebook = *frozen;
    } else {
        r.codebook = build_codebook(weights.data, bits, layer_index);
    }
    r.assignment = assign_nearest(weights.data, r.codebook.centroids);
    return r;
}

struct QuantTriplet {
    double omega = 0.0;  // current weight value
    double what = 0.0;   // nearest centroid
    double d = 0.0;      // |omega - what|
};

inline std::vector<QuantTriplet> compute_distances(const std::vector<double>& weights,
                                                   const Codebook& codebook) {
    std::vector<QuantTriplet> out(weights.size());
    for (size_t i = 0; i < weights.size(); ++i) {
        uint32_t a = nearest_centroid(weights[i], codebook.centroids);
        out[i] = QuantTriplet{weights[i], codebook.centroids[a], std::abs(weights[i] - codebook.centroids[a])};
    }
    return out;
}

// Groups distance values into at most D clusters and relabels them so that
// id 0 is the cluster with the largest centroid distance.
inline std::vector<uint32_t> distance_cluster(const std::vector<double>& distances, size_t D) {
    require(D >= 1, "distance_cluster: D must be positive");
    require(!distances.empty(), "distance_cluster: nothing to cluster");
    size_t k = std::min(D, distances.size());
    KMeansResult km = kmeans_1d(distances, k, /*pin_zero=*/false);

    std::vector<uint32_t> order(k);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
        if (km.centroids[a] != km.centroids[b]) return km.centroids[a] > km.centroids[b];
        return a < b;
    });
    std::vector<uint32_t> rank(k);
    for (uint32_t i = 0; i < k; ++i) rank[order[i]] = i;

    std::vector<uint32_t> ids(distances.size());
    for (size_t i = 0; i < distances.size(); ++i) ids[i] = rank[km.assignment[i]];
    return ids;
}

struct QuantSchedule {
    size_t distance_clusters = 12;
    std::vector<size_t> counts;  // weights to freeze per iteration, non-increasing

    void validate(size_t total) const {
        require(!counts.empty(), "schedule: empty");
        size_t sum = 0;
        for (size_t i = 0; i < counts.size(); ++i) {
            require(counts[i] > 0, "schedule: zero count");
            if (i > 0) require(counts[i] <= counts[i - 1], "schedule: counts must be non-increasing");
            sum += counts[i];
        }
        require(sum == total, "schedule: counts do not sum to the weight total");
    }
};

// Turns distance-cluster sizes (largest-distance cluster first) into a
// non-increasing per-iteration count plan covering every weight. "auto"
// follows cluster boundaries where that keeps counts non-increasing and not
// wildly unbalanced, falling back to an even split of the remainder. "equal"
// ignores boundaries entirely.
inline std::vector<size_t> make_schedule_counts(const std::vector<size_t>& cluster_sizes,
                                                const std::string& mode = "auto") {
    require(!cluster_sizes.empty(), "make_schedule: no clusters");
    require(mode == "auto" || mode == "equal", "make_schedule: unknown mode '" + mode + "'");
    size_t m = cluster_sizes.size();
    size_t total = std::accumulate(cluster_sizes.begin(), cluster_sizes.end(), size_t{0});
    require(total > 0, "make_schedule: no weights");

    std::vector<size_t> bounds(m);  // cumulative cluster end positions
    std::partial_sum(cluster_sizes.begin(), cluster_sizes.end(), bounds.begin());

    std::vector<size_t> counts;
    size_t consumed = 0;
    size_t prev = std::numeric_limits<size_t>::max();
    for (size_t t = 0; consumed < total; ++t) {
        size_t remaining = total - consumed;
        size_t iters_left = (t < m) ? (m - t) : 1;
        size_t count = (remaining + iters_left - 1) / iters_left;  // balanced target
        if (mode == "auto") {
            // extend to the next cluster boundary when that stays non-increasing
            // and within 2x of the balanced size
            auto it = std::upper_bound(bounds.begin(), bounds.end(), consumed + count - 1);
            if (it != bounds.end()) {
                size_t ext = *it - consumed;
                if (ext > count && ext <= prev && ext <= 2 * count && ext <= remaining) count = ext;
            }
        }
        count = std::min({count, prev, remaining});
        counts.push_back(count);
        consumed += count;
        prev = count;
    }
    return counts;
}

struct LayerQuantState {
    size_t layer_index = 0;
    Codebook codebook;
    std::vector<uint32_t> assignment;           // per weight, index into codebook
    std::vector<uint8_t> mask;                  // 1 = still trainable, 0 = quantized
    std::vector<uint32_t> distance_cluster_id;  // kNoCluster once quantized
    bool frozen_centroids = false;
    QuantSchedule schedule;
    size_t iteration = 0;  // schedule cursor

    size_t remaining() const {
        return static_cast<size_t>(std::count(mask.begin(), mask.end(), uint8_t{1}));
    }
    bool done() const { return remaining() == 0; }
};

struct QuantizerConfig {
    size_t distance_clusters = 12;
    std::string schedule_mode = "auto";
    size_t retrain_steps = 500;
    size_t retrain_batch = 100;
    double retrain_lr = 0.01;
    int low_bit_threshold = 3;  // at or below: distance clustering per weight cluster
    bool bypass = false;        // leave the model untouched
};

// Sets up codebook, assignment, all-ones mask, and the count schedule for one
// layer. The schedule derives from a whole-layer distance clustering of the
// initial distances, regardless of the per-weight-cluster scoping used later
// at low bit-widths.
inline LayerQuantState init_layer_state(const Tensor& weights, int bits, size_t layer_index,
                                        const QuantizerConfig& qc) {
    LayerQuantState st;
    st.layer_index = layer_index;
    ClusterResult cr = weight_cluster(weights, bits, std::nullopt, layer_index);
    st.codebook = std::move(cr.codebook);
    st.assignment = std::move(cr.assignment);
    st.mask.assign(weights.size(), 1);
    st.distance_cluster_id.assign(weights.size(), kNoCluster);
    st.schedule.distance_clusters = qc.distance_clusters;

    std::vector<QuantTriplet> tr = compute_distances(weights.data, st.codebook);
    std::vector<double> d(weights.size());
    for (size_t i = 0; i < weights.size(); ++i) d[i] = tr[i].d;
    std::vector<uint32_t> ids = distance_cluster(d, qc.distance_clusters);
    size_t nclusters = *std::max_element(ids.begin(), ids.end()) + 1;
    std::vector<size_t> sizes(nclusters, 0);
    for (uint32_t id : ids) sizes[id] += 1;
    st.schedule.counts = make_schedule_counts(sizes, qc.schedule_mode);
    st.schedule.validate(weights.size());
    return st;
}

// One quantization pass over one layer: recompute assignments and distances
// for the still-free weights, cluster the distances (per weight cluster at
// low bit-widths, whole layer otherwise), and freeze this iteration's count
// of weights taking the largest-distance ones first. Within each scope the
// frozen set is always a prefix of the (distance cluster, distance desc,
// index) order; across scopes candidates interleave by rank fraction so every
// scope contributes proportionally.
inline size_t quantize_step(Tensor& weights, LayerQuantState& st, const QuantizerConfig& qc) {
    std::vector<size_t> unq;
    for (size_t i = 0; i < st.mask.size(); ++i)
        if (st.mask[i]) unq.push_back(i);
    require(!unq.empty(), "quantize_step: layer already fully quantized");
    require(st.iteration < st.schedule.counts.size(),
            "quantize_step: schedule exhausted with weights remaining");
    size_t count = std::min(st.schedule.counts[st.iteration], unq.size());

    for (size_t i : unq) st.assignment[i] = nearest_centroid(weights[i], st.codebook.centroids);

    std::vector<double> dist(weights.size(), 0.0);
    for (size_t i : unq) dist[i] = std::abs(weights[i] - st.codebook.centroids[st.assignment[i]]);

    // scope = weight cluster at low bit-widths, else the whole layer
    std::vector<std::vector<size_t>> scopes;
    if (st.codebook.bits <= qc.low_bit_threshold) {
        scopes.resize(st.codebook.k());
        for (size_t i : unq) scopes[st.assignment[i]].push_back(i);
        std::erase_if(scopes, [](const std::vector<size_t>& s) { return s.empty(); });
    } else {
        scopes.push_back(unq);
    }

    struct Candidate {
        double rank_frac;
        double d;
        size_t index;
    };
    std::vector<Candidate> cands;
    cands.reserve(unq.size());
    for (const std::vector<size_t>& scope : scopes) {
        std::vector<double> sd(scope.size());
        for (size_t j = 0; j < scope.size(); ++j) sd[j] = dist[scope[j]];
        std::vector<uint32_t> ids = distance_cluster(sd, qc.distance_clusters);
        for (size_t j = 0; j < scope.size(); ++j) st.distance_cluster_id[scope[j]] = ids[j];

        std::vector<size_t> order(scope.size());
        std::iota(order.begin(), order.end(), size_t{0});
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            if (ids[a] != ids[b]) return ids[a] < ids[b];
            if (sd[a] != sd[b]) return sd[a] > sd[b];
            return scope[a] < scope[b];
        });
        for (size_t r = 0; r < order.size(); ++r)
            cands.push_back({(static_cast<double>(r) + 0.5) / static_cast<double>(scope.size()),
                             sd[order[r]], scope[order[r]]});
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.rank_frac != b.rank_frac) return a.rank_frac < b.rank_frac;
        if (a.d != b.d) return a.d > b.d;
        return a.index < b.index;
    });

    for (size_t j = 0; j < count; ++j) {
        size_t i = cands[j].index;
        weights[i] = st.codebook.centroids[st.assignment[i]];
        st.mask[i] = 0;
        st.distance_cluster_id[i] = kNoCluster;
    }
    st.frozen_centroids = true;
    st.iteration += 1;
    return count;
}

struct RetrainReport {
    double loss_before = 0.0;
    double loss_after = 0.0;
};

// Masked recovery training; quantized weights stay bit-identical. The loss
// probe uses a fixed prefix of the training set so reports are comparable
// across iterations.
inline RetrainReport retrain(NetworkModel& model, const std::vector<Tensor>& masks,
                             const Dataset& train, size_t steps, size_t batch, double lr,
                             size_t* cursor = nullptr) {
    size_t probe = std::min<size_t>(train.size(), 256);
    RetrainReport rep;
    rep.loss_before = forward(model, train, 0, probe).loss;
    if (steps > 0) train_sgd(model, train, steps, batch, lr, &masks, cursor);
    rep.loss_after = forward(model, train, 0, probe).loss;
    return rep;
}

struct IterationMetrics {
    size_t iteration = 0;
    double quantized_fraction = 0.0;
    double train_loss = 0.0;
    double eval_accuracy = 0.0;
};

struct QuantizeResult {
    std::vector<LayerQuantState> states;    // one per quantizable layer, in model order
    std::vector<IterationMetrics> metrics;  // one row per global iteration
};

inline std::vector<Tensor> masks_as_tensors(const NetworkModel& model,
                                            const std::vector<LayerQuantState>& states,
                                            const std::vector<size_t>& qidx) {
    std::vector<Tensor> masks;
    for (const Layer& l : model.layers) masks.push_back(Tensor::full(l.weights.shape, 1.0));
    for (size_t s = 0; s < qidx.size(); ++s)
        for (size_t i = 0; i < states[s].mask.size(); ++i)
            masks[qidx[s]][i] = states[s].mask[i];
    return masks;
}

// Full loop: codebooks and schedules up front, then lock-step iterations of
// (freeze this iteration's counts in every unfinished layer, retrain the
// rest) until no free weights remain. Retraining is skipped after the final
// freeze since every mask is zero by then.
inline QuantizeResult quantize_network(NetworkModel& model, const std::vector<int>& bitwidths,
                                       const SyntheticData& data, const QuantizerConfig& qc) {
    std::vector<size_t> qidx = model.quantizable_indices();
    require(bitwidths.size() == qidx.size(),
            "quantize_network: need one bit-width per quantizable layer (" +
                std::to_string(qidx.size()) + " expected, " + std::to_string(bitwidths.size()) +
                " given)");
    QuantizeResult out;
    if (qc.bypass) return out;

    for (size_t s = 0; s < qidx.size(); ++s)
        out.states.push_back(
            init_layer_state(model.layers[qidx[s]].weights, bitwidths[s], qidx[s], qc));

    size_t total = 0, frozen = 0;
    for (const LayerQuantState& st : out.states) total += st.mask.size();

    size_t cursor = 0;
    for (size_t iter = 0; frozen < total; ++iter) {
        for (size_t s = 0; s < qidx.size(); ++s) {
            LayerQuantState& st = out.states[s];
            if (st.done()) continue;
            frozen += quantize_step(model.layers[qidx[s]].weights, st, qc);
        }
        bool all_done = (frozen == total);
        RetrainReport rep;
        if (!all_done) {
            std::vector<Tensor> masks = masks_as_tensors(model, out.states, qidx);
            rep = retrain(model, masks, data.train, qc.retrain_steps, qc.retrain_batch,
                          qc.retrain_lr, &cursor);
        } else {
            size_t probe = std::min<size_t>(data.train.size(), 256);
            rep.loss_before = rep.loss_after = forward(model, data.train, 0, probe).loss;
        }
        EvalResult ev = evaluate(model, data.eval);
        out.metrics.push_back({iter, static_cast<double>(frozen) / static_cast<double>(total),
                               rep.loss_after, ev.accuracy});
    }
    return out;
}

// Nearest-centroid snap of every quantizable layer, no retraining. This is
// the cheap quantization the controller's reward uses.
inline std::vector<Codebook> snap_quantize(NetworkModel& model, const std::vector<int>& bitwidths) {
    std::vector<size_t> qidx = model.quantizable_indices();
    require(bitwidths.size() == qidx.size(), "snap_quantize: bit-width count mismatch");
    std::vector<Codebook> books;
    for (size_t s = 0; s < qidx.size(); ++s) {
        Tensor& w = model.layers[qidx[s]].weights;
        ClusterResult cr = weight_cluster(w, bitwidths[s], std::nullopt, qidx[s]);
        for (size_t i = 0; i < w.size(); ++i) w[i] = cr.codebook.centroids[cr.assignment[i]];
        books.push_back(std::move(cr.codebook));
    }
    return books;
}

}  // namespace dnq::quant
