// Bit-width search. The policy emits one action per searchable layer
// (quantizable conv layers; dense layers ride along at a fixed bit-width).
// A sequence's reward is snap-to-codebook accuracy plus lambda times the
// compression ratio; per-step returns are Monte Carlo completions of each
// prefix, and the policy climbs the REINFORCE gradient. Accuracy and ratio
// per sequence are cached since the reward ignores everything else.
#pragma once

#include <map>
#include <mutex>
#include <optional>

#include "dnq/codec.hpp"
#include "dnq/network.hpp"
#include "dnq/policy.hpp"
#include "dnq/quantizer.hpp"

namespace dnq::ctrl {

// Conv layers are the searched ones; a model with no quantizable conv layers
// falls back to searching every quantizable layer.
inline std::vector<size_t> searchable_indices(const NetworkModel& model) {
    std::vector<size_t> conv, all;
    for (size_t i = 0; i < model.layers.size(); ++i) {
        if (!model.layers[i].spec.quantizable) continue;
        all.push_back(i);
        if (model.layers[i].spec.kind == LayerKind::conv2d) conv.push_back(i);
    }
    require(!all.empty(), "searchable_indices: no quantizable layers");
    return conv.empty() ? all : conv;
}

// Seven features per searchable layer, each scaled to [0,1]: normalized
// position, log parameter count, fan-in, fan-out, kernel area (all relative
// to the sequence maximum), and a layer-kind one-hot pair.
inline std::vector<std::vector<double>> embed_model(const NetworkModel& model) {
    std::vector<size_t> idx = searchable_indices(model);
    double max_n = 1, max_fi = 1, max_fo = 1, max_ka = 1;
    for (size_t i : idx) {
        const LayerSpec& s = model.layers[i].spec;
        max_n = std::max(max_n, static_cast<double>(s.param_count));
        max_fi = std::max(max_fi, static_cast<double>(s.fan_in));
        max_fo = std::max(max_fo, static_cast<double>(s.fan_out));
        max_ka = std::max(max_ka, static_cast<double>(std::max<size_t>(1, s.kernel_h * s.kernel_w)));
    }
    std::vector<std::vector<double>> emb;
    for (size_t p = 0; p < idx.size(); ++p) {
        const LayerSpec& s = model.layers[idx[p]].spec;
        bool conv = s.kind == LayerKind::conv2d;
        double kernel_area = conv ? static_cast<double>(s.kernel_h * s.kernel_w) : 1.0;
        emb.push_back({static_cast<double>(p + 1) / static_cast<double>(idx.size()),
                       std::log1p(static_cast<double>(s.param_count)) / std::log1p(max_n),
                       static_cast<double>(s.fan_in) / max_fi,
                       static_cast<double>(s.fan_out) / max_fo, kernel_area / max_ka,
                       conv ? 1.0 : 0.0, conv ? 0.0 : 1.0});
    }
    return emb;
}

// Expands searched bits into one bit-width per quantizable layer; layers
// outside the searched set get `fc_bits`.
inline std::vector<int> full_assignment(const NetworkModel& model, const std::vector<int>& searched,
                                        int fc_bits) {
    std::vector<size_t> sidx = searchable_indices(model);
    require(searched.size() == sidx.size(), "full_assignment: sequence length mismatch");
    std::vector<int> bits;
    size_t p = 0;
    for (size_t i : model.quantizable_indices()) {
        if (p < sidx.size() && sidx[p] == i)
            bits.push_back(searched[p++]);
        else
            bits.push_back(fc_bits);
    }
    return bits;
}

struct RewardConfig {
    double lambda = 0.05;
    size_t mc_samples = 4;     // N completions per prefix
    size_t eval_limit = 1000;  // eval-split samples used for Acc
    bool enumerate = false;    // exact expectations instead of sampling
    int fc_bits = 3;
};

struct RolloutRecord {
    std::vector<int> bits;  // searched-layer bit-widths
    double accuracy = 0.0;
    double ratio = 0.0;
    double reward = 0.0;
    std::vector<double> step_returns;
};

// Accuracy and ratio per full bit assignment; both are lambda-independent so
// one cache serves any reward weighting.
class RewardCache {
  public:
    std::optional<std::pair<double, double>> find(const std::vector<int>& key) {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = map_.find(key);
        if (it == map_.end()) return std::nullopt;
        return it->second;
    }
    void insert(const std::vector<int>& key, double acc, double ratio) {
        std::lock_guard<std::mutex> lock(mu_);
        map_.emplace(key, std::make_pair(acc, ratio));
    }
    size_t size() {
        std::lock_guard<std::mutex> lock(mu_);
        return map_.size();
    }

  private:
    std::mutex mu_;
    std::map<std::vector<int>, std::pair<double, double>> map_;
};

inline double snap_accuracy(const NetworkModel& model, const std::vector<int>& assignment,
                            const SyntheticData& data, size_t eval_limit) {
    NetworkModel copy = model;
    quant::snap_quantize(copy, assignment);
    return evaluate(copy, data.eval, eval_limit).accuracy;
}

inline double assignment_ratio(const NetworkModel& model, const std::vector<int>& assignment) {
    codec::CompressionSpec spec;
    std::vector<size_t> qidx = model.quantizable_indices();
    for (size_t s = 0; s < qidx.size(); ++s)
        spec.layers.push_back({model.layers[qidx[s]].weights.size(), assignment[s],
                               centroid_count_for_bits(assignment[s])});
    return codec::compression_ratio(spec);
}

inline RolloutRecord evaluate_reward(const NetworkModel& model, const std::vector<int>& bits,
                                     const SyntheticData& data, const RewardConfig& cfg,
                                     RewardCache* cache = nullptr) {
    for (int b : bits) require(b >= kMinBits && b <= kMaxBits, "evaluate_reward: bits out of range");
    std::vector<int> assignment = full_assignment(model, bits, cfg.fc_bits);
    RolloutRecord rec;
    rec.bits = bits;
    if (auto hit = cache ? cache->find(assignment) : std::nullopt) {
        rec.accuracy = hit->first;
        rec.ratio = hit->second;
    } else {
        rec.accuracy = snap_accuracy(model, assignment, data, cfg.eval_limit);
        rec.ratio = assignment_ratio(model, assignment);
        if (cache) cache->insert(assignment, rec.accuracy, rec.ratio);
    }
    rec.reward = rec.accuracy + cfg.lambda * rec.ratio;
    return rec;
}

namespace detail {

inline double enumerate_return(const PolicyModel& policy,
                               const std::vector<std::vector<double>>& emb,
                               const NetworkModel& model, const SyntheticData& data,
                               const RewardConfig& cfg, RewardCache* cache,
                               std::vector<int>& actions, size_t depth) {
    size_t L = emb.size();
    if (depth == L) {
        std::vector<int> bits(L);
        for (size_t t = 0; t < L; ++t) bits[t] = action_to_bits(actions[t]);
        return evaluate_reward(model, bits, data, cfg, cache).reward;
    }
    // The step-depth categorical only depends on actions before `depth`, so
    // one forced pass over the full-length buffer serves all 7 children.
    PolicyTrace tr = policy_forward(policy, emb, &actions, nullptr);
    double total = 0.0;
    for (int a = 0; a < static_cast<int>(kNumActions); ++a) {
        double p = tr.probs[depth][static_cast<size_t>(a)];
        if (p <= 0.0) continue;
        actions[depth] = a;
        total += p * enumerate_return(policy, emb, model, data, cfg, cache, actions, depth + 1);
    }
    actions[depth] = 0;
    return total;
}

}  // namespace detail

// Per-step return: the prefix b_{1:t} is completed to a full sequence N
// times by the policy and the mean full-sequence reward is returned. In
// enumerate mode the exact expectation over all completions is computed
// instead.
inline double mc_return(const PolicyModel& policy, const std::vector<std::vector<double>>& emb,
                        const NetworkModel& model, const std::vector<int>& prefix_actions,
                        const SyntheticData& data, const RewardConfig& cfg, Rng& rng,
                        RewardCache* cache = nullptr) {
    size_t L = emb.size();
    require(!prefix_actions.empty() && prefix_actions.size() <= L, "mc_return: bad prefix length");
    if (prefix_actions.size() == L) {
        std::vector<int> bits(L);
        for (size_t t = 0; t < L; ++t) bits[t] = action_to_bits(prefix_actions[t]);
        return evaluate_reward(model, bits, data, cfg, cache).reward;
    }
    if (cfg.enumerate) {
        std::vector<int> actions = prefix_actions;
        actions.resize(L);
        return detail::enumerate_return(policy, emb, model, data, cfg, cache, actions,
                                        prefix_actions.size());
    }
    require(cfg.mc_samples >= 1, "mc_return: need at least one sample");
    double sum = 0.0;
    for (size_t s = 0; s < cfg.mc_samples; ++s) {
        PolicyTrace tr = policy_forward(policy, emb, &prefix_actions, &rng);
        std::vector<int> bits(L);
        for (size_t t = 0; t < L; ++t) bits[t] = action_to_bits(tr.actions[t]);
        sum += evaluate_reward(model, bits, data, cfg, cache).reward;
    }
    return sum / static_cast<double>(cfg.mc_samples);
}

struct Rollout {
    std::vector<int> actions;
    std::vector<double> step_returns;
};

// One REINFORCE ascent step: theta += lr * mean over rollouts of
// sum_t grad log P(a_t | a_{1:t-1}) * return_t.
inline void policy_gradient_step(PolicyModel& policy,
                                 const std::vector<std::vector<double>>& emb,
                                 const std::vector<Rollout>& batch, double lr) {
    require(!batch.empty(), "policy_gradient_step: empty batch");
    PolicyModel grad = make_policy_grad(policy);
    for (const Rollout& r : batch) {
        require(r.actions.size() == emb.size() && r.step_returns.size() == r.actions.size(),
                "policy_gradient_step: misaligned rollout");
        PolicyTrace tr = policy_forward(policy, emb, &r.actions, nullptr);
        policy_backward(policy, emb, tr, r.step_returns, grad);
    }
    axpy_params(policy, grad, lr / static_cast<double>(batch.size()));
}

struct ControllerConfig {
    RewardConfig reward;
    size_t iterations = 1000;
    size_t batch = 5;
    double lr = 0.01;
    size_t proj = 8;
    size_t hidden = 32;
    uint64_t seed = 0;
    bool baseline = false;       // subtract a moving average from returns
    double baseline_beta = 0.9;  // smoothing when enabled
};

struct HistoryRow {
    size_t iteration = 0;
    double mean_reward = 0.0;
    double best_reward = 0.0;
    std::vector<int> best_bits;  // full assignment of the best sequence so far
};

struct SearchResult {
    RolloutRecord best;              // searched bits + metrics
    std::vector<int> best_full;      // expanded per-quantizable-layer bits
    std::vector<HistoryRow> history;
    size_t unique_sequences = 0;
};

// `shared_cache` lets several searches reuse accuracy/ratio evaluations;
// they are lambda-independent, so a lambda sweep pays for each sequence once.
inline SearchResult train_controller(const NetworkModel& model, const SyntheticData& data,
                                     const ControllerConfig& cc,
                                     RewardCache* shared_cache = nullptr) {
    std::vector<std::vector<double>> emb = embed_model(model);
    PolicyModel policy = make_policy(cc.proj, cc.hidden, splitmix64(cc.seed + 0x636f6e74));
    Rng rng(splitmix64(cc.seed + 0x726f6c6c));
    RewardCache local_cache;
    RewardCache& cache = shared_cache ? *shared_cache : local_cache;

    SearchResult out;
    out.best.reward = -std::numeric_limits<double>::infinity();
    double baseline = 0.0;
    bool baseline_init = false;

    for (size_t iter = 0; iter < cc.iterations; ++iter) {
        std::vector<Rollout> batch;
        double reward_sum = 0.0;
        for (size_t b = 0; b < cc.batch; ++b) {
            PolicyTrace tr = policy_forward(policy, emb, nullptr, &rng);
            std::vector<int> bits(emb.size());
            for (size_t t = 0; t < emb.size(); ++t) bits[t] = action_to_bits(tr.actions[t]);
            RolloutRecord rec = evaluate_reward(model, bits, data, cc.reward, &cache);
            reward_sum += rec.reward;
            if (rec.reward > out.best.reward) {
                rec.step_returns.clear();
                out.best = rec;
            }
            Rollout ro;
            ro.actions = tr.actions;
            for (size_t t = 1; t <= emb.size(); ++t) {
                std::vector<int> prefix(tr.actions.begin(), tr.actions.begin() + t);
                ro.step_returns.push_back(
                    mc_return(policy, emb, model, prefix, data, cc.reward, rng, &cache));
            }
            batch.push_back(std::move(ro));
        }
        double mean_reward = reward_sum / static_cast<double>(cc.batch);
        if (cc.baseline) {
            baseline = baseline_init ? cc.baseline_beta * baseline + (1.0 - cc.baseline_beta) * mean_reward
                                     : mean_reward;
            baseline_init = true;
            for (Rollout& r : batch)
                for (double& v : r.step_returns) v -= baseline;
        }
        policy_gradient_step(policy, emb, batch, cc.lr);
        out.history.push_back({iter, mean_reward, out.best.reward,
                               full_assignment(model, out.best.bits, cc.reward.fc_bits)});
    }
    out.best_full = full_assignment(model, out.best.bits, cc.reward.fc_bits);
    out.unique_sequences = cache.size();
    return out;
}

}  // namespace dnq::ctrl
