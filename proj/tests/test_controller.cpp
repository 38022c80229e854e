#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "dnq/controller.hpp"

using namespace dnq;
using namespace dnq::ctrl;

namespace {

// Small net whose two conv layers form the searched sequence (49 assignments)
// and whose dense output stays pinned at the fixed fully-connected width.
SyntheticData toy_data() {
    SyntheticSpec spec;
    spec.seed = 311;
    spec.num_classes = 3;
    spec.n_train = 400;
    spec.n_eval = 200;
    spec.dim = 36;
    spec.margin = 2.0;
    spec.noise = 0.4;
    return make_synthetic_dataset(spec);
}

NetworkModel toy_model() {
    return make_model({1, 6, 6},
                      {{LayerKind::conv2d, 4, 3, 3, true},
                       {LayerKind::conv2d, 6, 2, 2, true},
                       {LayerKind::dense, 3, 3, 3, true}},
                      2024);
}

const SyntheticData& shared_data() {
    static SyntheticData d = toy_data();
    return d;
}

const NetworkModel& trained_model() {
    static NetworkModel m = [] {
        NetworkModel model = toy_model();
        train_sgd(model, shared_data().train, 600, 32, 0.05);
        return model;
    }();
    return m;
}

// Frozen rewards for every searched assignment, injected through the cache so
// no network evaluation ever runs.  Ratio is stored as zero, which makes the
// reward equal to the stored table value whenever lambda is zero.
RewardCache& frozen_rewards(std::vector<std::vector<double>>* table = nullptr) {
    static RewardCache cache;
    static std::vector<std::vector<double>> values(7, std::vector<double>(7));
    static bool filled = [] {
        Rng tab(99);
        std::vector<int> full = full_assignment(trained_model(), {2, 2}, 3);
        for (int b0 = 2; b0 <= 8; ++b0)
            for (int b1 = 2; b1 <= 8; ++b1) {
                full[0] = b0;
                full[1] = b1;
                values[b0 - 2][b1 - 2] = tab.uniform(0.0, 1.0);
                cache.insert(full, values[b0 - 2][b1 - 2], 0.0);
            }
        return true;
    }();
    (void)filled;
    if (table) *table = values;
    return cache;
}

RewardConfig frozen_config() {
    RewardConfig rc;
    rc.lambda = 0.0;
    rc.mc_samples = 1;
    rc.eval_limit = 200;
    rc.fc_bits = 3;
    return rc;
}

}  // namespace

TEST(Reward, HandWorkedValueFromCachedMetrics) {
    const NetworkModel& model = trained_model();
    RewardCache cache;
    std::vector<int> bits = {4, 6};
    cache.insert(full_assignment(model, bits, 3), 0.8, 10.0);

    RewardConfig cfg = frozen_config();
    cfg.lambda = 0.1;
    RolloutRecord rec = evaluate_reward(model, bits, shared_data(), cfg, &cache);
    EXPECT_DOUBLE_EQ(rec.accuracy, 0.8);
    EXPECT_DOUBLE_EQ(rec.ratio, 10.0);
    EXPECT_DOUBLE_EQ(rec.reward, 0.8 + 0.1 * 10.0);
    EXPECT_NEAR(rec.reward, 1.8, 1e-15);

    cfg.lambda = 0.0;
    RolloutRecord plain = evaluate_reward(model, bits, shared_data(), cfg, &cache);
    EXPECT_DOUBLE_EQ(plain.reward, plain.accuracy);
    EXPECT_EQ(cache.size(), 1u);
}

TEST(Reward, DecompositionIsExactAndRepeatable) {
    const NetworkModel& model = trained_model();
    RewardConfig cfg;
    cfg.lambda = 0.07;
    cfg.eval_limit = 200;
    cfg.fc_bits = 3;

    RolloutRecord a = evaluate_reward(model, {3, 5}, shared_data(), cfg, nullptr);
    EXPECT_DOUBLE_EQ(a.reward, a.accuracy + cfg.lambda * a.ratio);
    EXPECT_DOUBLE_EQ(a.ratio, assignment_ratio(model, full_assignment(model, {3, 5}, 3)));
    EXPECT_GT(a.accuracy, 0.0);
    EXPECT_LE(a.accuracy, 1.0);

    RolloutRecord b = evaluate_reward(model, {3, 5}, shared_data(), cfg, nullptr);
    EXPECT_EQ(a.bits, b.bits);
    EXPECT_DOUBLE_EQ(a.accuracy, b.accuracy);
    EXPECT_DOUBLE_EQ(a.ratio, b.ratio);
    EXPECT_DOUBLE_EQ(a.reward, b.reward);

    // a warm cache changes nothing except skipping the evaluation
    RewardCache cache;
    RolloutRecord c = evaluate_reward(model, {3, 5}, shared_data(), cfg, &cache);
    RolloutRecord d = evaluate_reward(model, {3, 5}, shared_data(), cfg, &cache);
    EXPECT_DOUBLE_EQ(c.accuracy, a.accuracy);
    EXPECT_DOUBLE_EQ(d.reward, c.reward);
    EXPECT_EQ(cache.size(), 1u);

    // cached metrics are weighting-independent; only the reward moves
    cfg.lambda = 0.5;
    RolloutRecord e = evaluate_reward(model, {3, 5}, shared_data(), cfg, &cache);
    EXPECT_DOUBLE_EQ(e.accuracy, c.accuracy);
    EXPECT_DOUBLE_EQ(e.ratio, c.ratio);
    EXPECT_DOUBLE_EQ(e.reward, e.accuracy + 0.5 * e.ratio);
    EXPECT_EQ(cache.size(), 1u);
}

TEST(Reward, RatioMatchesHandAccounting) {
    // weight counts per quantizable layer: 36, 96, 162
    const NetworkModel& model = trained_model();
    ASSERT_EQ(model.layers[0].weights.size(), 36u);
    ASSERT_EQ(model.layers[1].weights.size(), 96u);
    ASSERT_EQ(model.layers[2].weights.size(), 162u);

    // 32*(36+96+162) over 36*4 + 96*3 + 162*3 + 32*(9+5+5)
    double expected = (32.0 * 294.0) / (36.0 * 4 + 96.0 * 3 + 162.0 * 3 + 32.0 * 19);
    EXPECT_DOUBLE_EQ(assignment_ratio(model, {4, 3, 3}), expected);
}

TEST(Search, EmbeddingsAndAssignmentShapes) {
    const NetworkModel& model = trained_model();
    std::vector<size_t> searched = searchable_indices(model);
    ASSERT_EQ(searched, (std::vector<size_t>{0, 1}));

    std::vector<std::vector<double>> emb = embed_model(model);
    ASSERT_EQ(emb.size(), 2u);
    for (const auto& row : emb) {
        ASSERT_EQ(row.size(), kEmbedDim);
        for (double v : row) {
            EXPECT_TRUE(std::isfinite(v));
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        EXPECT_DOUBLE_EQ(row[5], 1.0);  // conv one-hot
        EXPECT_DOUBLE_EQ(row[6], 0.0);
    }

    EXPECT_EQ(full_assignment(model, {4, 5}, 3), (std::vector<int>{4, 5, 3}));
    EXPECT_THROW(full_assignment(model, {4}, 3), Error);

    // a model with no conv layers searches every quantizable layer
    NetworkModel dense = make_model({1, 2, 2},
                                    {{LayerKind::dense, 5, 3, 3, true},
                                     {LayerKind::dense, 3, 3, 3, true}},
                                    11);
    EXPECT_EQ(searchable_indices(dense), (std::vector<size_t>{0, 1}));
    EXPECT_EQ(full_assignment(dense, {2, 7}, 3), (std::vector<int>{2, 7}));
}

TEST(Return, FullLengthPrefixEqualsSequenceReward) {
    const NetworkModel& model = trained_model();
    RewardCache& cache = frozen_rewards();
    RewardConfig cfg = frozen_config();
    PolicyModel pol = make_policy(4, 8, 555);
    std::vector<std::vector<double>> emb = embed_model(model);

    std::vector<int> prefix = {1, 5};
    Rng rng(1);
    double ret = mc_return(pol, emb, model, prefix, shared_data(), cfg, rng, &cache);
    double direct =
        evaluate_reward(model, {action_to_bits(1), action_to_bits(5)}, shared_data(), cfg, &cache)
            .reward;
    EXPECT_DOUBLE_EQ(ret, direct);
}

TEST(Return, EnumerationMatchesHandSummedExpectation) {
    const NetworkModel& model = trained_model();
    std::vector<std::vector<double>> table;
    RewardCache& cache = frozen_rewards(&table);
    RewardConfig cfg = frozen_config();
    cfg.enumerate = true;
    PolicyModel pol = make_policy(4, 8, 555);
    std::vector<std::vector<double>> emb = embed_model(model);

    std::vector<int> prefix = {2};
    Rng rng(1);
    double ret = mc_return(pol, emb, model, prefix, shared_data(), cfg, rng, &cache);

    double expected = 0.0;
    for (int a1 = 0; a1 < 7; ++a1) {
        std::vector<int> forced = {2, a1};
        PolicyTrace tr = policy_forward(pol, emb, &forced);
        expected += tr.probs[1][a1] * table[2][a1];
    }
    EXPECT_NEAR(ret, expected, 1e-12);
}

TEST(Return, MonteCarloConvergesToEnumeratedMean) {
    const NetworkModel& model = trained_model();
    std::vector<std::vector<double>> table;
    RewardCache& cache = frozen_rewards(&table);
    PolicyModel pol = make_policy(4, 8, 555);
    std::vector<std::vector<double>> emb = embed_model(model);
    std::vector<int> prefix = {2};

    std::vector<int> forced = {2, 0};
    PolicyTrace tr = policy_forward(pol, emb, &forced);
    double mu = 0.0, var = 0.0;
    for (int a1 = 0; a1 < 7; ++a1) mu += tr.probs[1][a1] * table[2][a1];
    for (int a1 = 0; a1 < 7; ++a1) {
        double d = table[2][a1] - mu;
        var += tr.probs[1][a1] * d * d;
    }

    RewardConfig cfg = frozen_config();
    cfg.mc_samples = 5000;
    Rng rng(77);
    double est = mc_return(pol, emb, model, prefix, shared_data(), cfg, rng, &cache);
    EXPECT_NEAR(est, mu, 3.0 * std::sqrt(var / 5000.0) + 1e-12);
}

TEST(Return, DeterministicPolicyCollapsesToSingleValue) {
    const NetworkModel& model = trained_model();
    RewardCache& cache = frozen_rewards();
    PolicyModel pol = make_policy(4, 8, 555);
    pol.bhead.assign(kNumActions, -50.0);
    pol.bhead[4] = 50.0;  // always picks 6 bits
    std::vector<std::vector<double>> emb = embed_model(model);
    std::vector<int> prefix = {0};

    RewardConfig one = frozen_config();
    RewardConfig eight = frozen_config();
    eight.mc_samples = 8;
    Rng r1(5), r8(6);
    double v1 = mc_return(pol, emb, model, prefix, shared_data(), one, r1, &cache);
    double v8 = mc_return(pol, emb, model, prefix, shared_data(), eight, r8, &cache);
    EXPECT_DOUBLE_EQ(v1, v8);

    double direct = evaluate_reward(model, {2, 6}, shared_data(), one, &cache).reward;
    EXPECT_DOUBLE_EQ(v1, direct);
}

TEST(Return, AveragingEightSamplesCutsVariance) {
    const NetworkModel& model = trained_model();
    RewardCache& cache = frozen_rewards();
    PolicyModel pol = make_policy(4, 8, 555);
    std::vector<std::vector<double>> emb = embed_model(model);
    std::vector<int> prefix = {3};

    auto stats = [&](size_t n, uint64_t seed) {
        RewardConfig cfg = frozen_config();
        cfg.mc_samples = n;
        Rng rng(seed);
        const int reps = 4000;
        double s = 0.0, s2 = 0.0;
        for (int i = 0; i < reps; ++i) {
            double v = mc_return(pol, emb, model, prefix, shared_data(), cfg, rng, &cache);
            s += v;
            s2 += v * v;
        }
        double mean = s / reps;
        return std::pair<double, double>(mean, s2 / reps - mean * mean);
    };
    auto [m1, v1] = stats(1, 1010);
    auto [m8, v8] = stats(8, 2020);

    // both estimate the same expectation; averaging 8 draws should cut the
    // variance roughly eightfold (a quarter is already a decisive margin)
    EXPECT_GT(v1, 0.0);
    EXPECT_LE(v8, 0.25 * v1);
    double se = std::sqrt(v1 / 4000.0 + v8 / 4000.0);
    EXPECT_NEAR(m1, m8, 4.0 * se);
}

TEST(Gradient, EstimatorIsUnbiasedOnFrozenTwoStepRewards) {
    Rng tab(4242);
    double rewards[7][7];
    for (auto& row : rewards)
        for (double& r : row) r = tab.uniform(-1.0, 1.0);

    PolicyModel pol = make_policy(2, 3, 31);
    std::vector<std::vector<double>> emb = {{0.1, 0.9, 0.4, 0.2, 0.8, 0.5, 0.3},
                                            {0.7, 0.3, 0.6, 0.9, 0.1, 0.2, 0.5}};

    // exact gradient of E[R]: sum over all 49 sequences of P(seq) * R * grad log P
    PolicyModel exact = make_policy_grad(pol);
    for (int a0 = 0; a0 < 7; ++a0)
        for (int a1 = 0; a1 < 7; ++a1) {
            std::vector<int> forced = {a0, a1};
            PolicyTrace tr = policy_forward(pol, emb, &forced);
            double pr = tr.probs[0][a0] * tr.probs[1][a1] * rewards[a0][a1];
            policy_backward(pol, emb, tr, {pr, pr}, exact);
        }
    auto exact_refs = param_refs(exact);

    const int samples = 10000;
    Rng rng(606);
    PolicyModel sum = make_policy_grad(pol);
    PolicyModel sumsq = make_policy_grad(pol);
    auto sum_refs = param_refs(sum);
    auto sq_refs = param_refs(sumsq);
    for (int s = 0; s < samples; ++s) {
        PolicyTrace tr = policy_forward(pol, emb, nullptr, &rng);
        double r = rewards[tr.actions[0]][tr.actions[1]];
        PolicyModel one = make_policy_grad(pol);
        policy_backward(pol, emb, tr, {r, r}, one);
        auto one_refs = param_refs(one);
        for (size_t i = 0; i < one_refs.size(); ++i) {
            double g = *one_refs[i];
            *sum_refs[i] += g;
            *sq_refs[i] += g * g;
        }
    }

    ASSERT_EQ(exact_refs.size(), sum_refs.size());
    for (size_t i = 0; i < exact_refs.size(); ++i) {
        double mean = *sum_refs[i] / samples;
        double var = *sq_refs[i] / samples - mean * mean;
        double se = std::sqrt(std::max(var, 0.0) / samples);
        EXPECT_NEAR(mean, *exact_refs[i], 3.0 * se + 1e-12) << "parameter " << i;
    }
}

TEST(Gradient, BanditHeadMatchesClosedForm) {
    // single step; five of the seven logits are saturated away, leaving a
    // two-action softmax bandit with an exactly computable gradient
    PolicyModel pol = make_policy(3, 4, 17);
    for (size_t a = 2; a < kNumActions; ++a) pol.bhead[a] = -30.0;
    pol.bhead[0] = 0.4;
    pol.bhead[1] = -0.1;
    std::vector<std::vector<double>> emb = {{0.3, 0.6, 0.2, 0.9, 0.5, 0.1, 0.7}};
    std::vector<double> rewards = {1.0, -1.0, 0.5, -0.5, 0.8, -0.8, 0.3};

    std::vector<int> f0 = {0};
    PolicyTrace probe = policy_forward(pol, emb, &f0);
    const std::vector<double>& pi = probe.probs[0];
    EXPECT_LT(pi[2] + pi[3] + pi[4] + pi[5] + pi[6], 1e-10);

    double er = 0.0;
    for (size_t a = 0; a < kNumActions; ++a) er += pi[a] * rewards[a];
    std::vector<double> closed(kNumActions);
    for (size_t a = 0; a < kNumActions; ++a) closed[a] = pi[a] * (rewards[a] - er);

    // head gradient of the enumerated objective agrees with pi_a (r_a - E[r])
    PolicyModel exact = make_policy_grad(pol);
    for (size_t a = 0; a < kNumActions; ++a) {
        std::vector<int> forced = {static_cast<int>(a)};
        PolicyTrace tr = policy_forward(pol, emb, &forced);
        policy_backward(pol, emb, tr, {tr.probs[0][a] * rewards[a]}, exact);
    }
    for (size_t a = 0; a < kNumActions; ++a) EXPECT_NEAR(exact.bhead[a], closed[a], 1e-12);

    // sampled estimator over 10k draws lands within 1e-2 relative on the
    // live coordinates and within noise on the saturated ones
    const int samples = 10000;
    Rng rng(808);
    std::vector<double> sum(kNumActions, 0.0), sumsq(kNumActions, 0.0);
    for (int s = 0; s < samples; ++s) {
        PolicyTrace tr = policy_forward(pol, emb, nullptr, &rng);
        PolicyModel one = make_policy_grad(pol);
        policy_backward(pol, emb, tr, {rewards[tr.actions[0]]}, one);
        for (size_t a = 0; a < kNumActions; ++a) {
            sum[a] += one.bhead[a];
            sumsq[a] += one.bhead[a] * one.bhead[a];
        }
    }
    for (size_t a = 0; a < kNumActions; ++a) {
        double mean = sum[a] / samples;
        double var = sumsq[a] / samples - mean * mean;
        double se = std::sqrt(std::max(var, 0.0) / samples);
        EXPECT_NEAR(mean, closed[a], 3.0 * se + 1e-12) << "logit " << a;
        if (a < 2) {
            EXPECT_LE(std::fabs(mean - closed[a]), 1e-2 * std::fabs(closed[a]));
        }
    }
}

TEST(Gradient, ConstantRewardHasZeroMeanUpdate) {
    PolicyModel pol = make_policy(2, 3, 31);
    std::vector<std::vector<double>> emb = {{0.1, 0.9, 0.4, 0.2, 0.8, 0.5, 0.3},
                                            {0.7, 0.3, 0.6, 0.9, 0.1, 0.2, 0.5}};
    const double reward = 0.7;

    const int samples = 10000;
    Rng rng(909);
    PolicyModel sum = make_policy_grad(pol);
    PolicyModel sumsq = make_policy_grad(pol);
    auto sum_refs = param_refs(sum);
    auto sq_refs = param_refs(sumsq);
    for (int s = 0; s < samples; ++s) {
        PolicyTrace tr = policy_forward(pol, emb, nullptr, &rng);
        PolicyModel one = make_policy_grad(pol);
        policy_backward(pol, emb, tr, {reward, reward}, one);
        auto one_refs = param_refs(one);
        for (size_t i = 0; i < one_refs.size(); ++i) {
            double g = *one_refs[i];
            *sum_refs[i] += g;
            *sq_refs[i] += g * g;
        }
    }
    for (size_t i = 0; i < sum_refs.size(); ++i) {
        double mean = *sum_refs[i] / samples;
        double var = *sq_refs[i] / samples - mean * mean;
        double se = std::sqrt(std::max(var, 0.0) / samples);
        EXPECT_NEAR(mean, 0.0, 3.0 * se + 1e-12) << "parameter " << i;
    }
}

TEST(Gradient, ZeroReturnsLeaveParametersBitIdentical) {
    PolicyModel pol = make_policy(4, 8, 123);
    PolicyModel before = pol;
    std::vector<std::vector<double>> emb = embed_model(trained_model());

    Rollout ro;
    ro.actions = {2, 5};
    ro.step_returns = {0.0, 0.0};
    policy_gradient_step(pol, emb, {ro, ro}, 0.05);

    auto now = param_refs(pol);
    auto old = param_refs(before);
    ASSERT_EQ(now.size(), old.size());
    for (size_t i = 0; i < now.size(); ++i)
        ASSERT_EQ(std::memcmp(now[i], old[i], sizeof(double)), 0) << "parameter " << i;

    Rollout bad;
    bad.actions = {2};
    bad.step_returns = {1.0};
    EXPECT_THROW(policy_gradient_step(pol, emb, {bad}, 0.05), Error);
    EXPECT_THROW(policy_gradient_step(pol, emb, {}, 0.05), Error);
}

TEST(Search, CompressionDominantRewardConvergesToMinimumBits) {
    const NetworkModel& model = trained_model();
    ControllerConfig cc;
    cc.reward.lambda = 10.0;
    cc.reward.mc_samples = 2;
    cc.reward.eval_limit = 200;
    cc.reward.fc_bits = 3;
    cc.iterations = 150;
    cc.batch = 4;
    cc.lr = 0.05;
    cc.proj = 4;
    cc.hidden = 8;
    cc.seed = 7;

    SearchResult res = train_controller(model, shared_data(), cc);
    EXPECT_EQ(res.best.bits, (std::vector<int>{2, 2}));
    EXPECT_EQ(res.best_full, (std::vector<int>{2, 2, 3}));
    EXPECT_LE(res.unique_sequences, 49u);
    ASSERT_EQ(res.history.size(), cc.iterations);

    double prev = -1e300;
    size_t first_all2 = cc.iterations;
    for (const HistoryRow& row : res.history) {
        EXPECT_GE(row.best_reward, prev);  // running max never backs off
        prev = row.best_reward;
        ASSERT_EQ(row.best_bits.size(), 3u);
        for (int b : row.best_bits) {
            EXPECT_GE(b, kMinBits);
            EXPECT_LE(b, kMaxBits);
        }
        if (first_all2 == cc.iterations && row.best_bits[0] == 2 && row.best_bits[1] == 2)
            first_all2 = row.iteration;
    }
    EXPECT_LE(first_all2, 50u);
    EXPECT_DOUBLE_EQ(res.best.reward, res.best.accuracy + 10.0 * res.best.ratio);
}

TEST(Search, AccuracyDominantRewardConvergesToMaximumBits) {
    const NetworkModel& model = trained_model();

    // frozen accuracies strictly increasing in every bit decision
    RewardCache cache;
    std::vector<int> full = full_assignment(model, {2, 2}, 3);
    for (int b0 = 2; b0 <= 8; ++b0)
        for (int b1 = 2; b1 <= 8; ++b1) {
            full[0] = b0;
            full[1] = b1;
            cache.insert(full, 0.10 * (b0 + b1), assignment_ratio(model, full));
        }

    ControllerConfig cc;
    cc.reward.lambda = 0.0;
    cc.reward.mc_samples = 2;
    cc.reward.eval_limit = 200;
    cc.reward.fc_bits = 3;
    cc.iterations = 200;
    cc.batch = 4;
    cc.lr = 0.05;
    cc.proj = 4;
    cc.hidden = 8;
    cc.seed = 7;

    SearchResult res = train_controller(model, shared_data(), cc, &cache);
    EXPECT_EQ(res.best.bits, (std::vector<int>{8, 8}));
    EXPECT_DOUBLE_EQ(res.best.reward, 0.10 * 16);
    EXPECT_EQ(cache.size(), 49u);  // no sequence escaped the preseeded table

    size_t first_all8 = cc.iterations;
    for (const HistoryRow& row : res.history)
        if (row.best_bits[0] == 8 && row.best_bits[1] == 8) {
            first_all8 = row.iteration;
            break;
        }
    EXPECT_LE(first_all8, 100u);
}

TEST(Search, WarmCacheDoesNotChangeTheTrajectory) {
    const NetworkModel& model = trained_model();
    ControllerConfig cc;
    cc.reward.lambda = 0.2;
    cc.reward.mc_samples = 2;
    cc.reward.eval_limit = 200;
    cc.reward.fc_bits = 3;
    cc.iterations = 40;
    cc.batch = 4;
    cc.lr = 0.05;
    cc.proj = 4;
    cc.hidden = 8;
    cc.seed = 21;

    RewardCache shared;
    SearchResult cold = train_controller(model, shared_data(), cc, &shared);
    SearchResult warm = train_controller(model, shared_data(), cc, &shared);

    EXPECT_EQ(cold.best.bits, warm.best.bits);
    EXPECT_DOUBLE_EQ(cold.best.reward, warm.best.reward);
    ASSERT_EQ(cold.history.size(), warm.history.size());
    for (size_t i = 0; i < cold.history.size(); ++i)
        EXPECT_DOUBLE_EQ(cold.history[i].mean_reward, warm.history[i].mean_reward);
    EXPECT_LE(shared.size(), 49u);
}
