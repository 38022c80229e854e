// Minimal end-to-end use of the library API: train a small model, search a
// bit-width sequence, quantize with retraining, pack, and compare. The CLI
// wraps exactly these calls; this file shows them without the file plumbing.
#include <cstdio>

#include "dnq/dnq.hpp"

int main() {
    using namespace dnq;

    SyntheticSpec data_spec;
    data_spec.seed = 7;
    data_spec.num_classes = 4;
    data_spec.n_train = 1500;
    data_spec.n_eval = 600;
    data_spec.dim = 64;
    SyntheticData data = make_synthetic_dataset(data_spec);

    NetworkModel model = make_model({1, 8, 8},
                                    {{LayerKind::conv2d, 8, 3, 3, true},
                                     {LayerKind::conv2d, 12, 3, 3, true},
                                     {LayerKind::dense, 4, 0, 0, true}},
                                    /*seed=*/21);
    train_sgd(model, data.train, 2000, 64, 0.05);
    double baseline = evaluate(model, data.eval).accuracy;
    std::printf("float baseline accuracy: %.4f\n", baseline);

    ctrl::ControllerConfig search_cfg;
    search_cfg.reward.lambda = 0.05;
    search_cfg.reward.eval_limit = 600;
    search_cfg.iterations = 150;
    search_cfg.hidden = 16;
    search_cfg.seed = 1;
    ctrl::SearchResult found = ctrl::train_controller(model, data, search_cfg);
    std::printf("searched bits:");
    for (int b : found.best_full) std::printf(" %d", b);
    std::printf("  (reward %.4f, snap accuracy %.4f, ratio %.2f)\n", found.best.reward,
                found.best.accuracy, found.best.ratio);

    quant::QuantizerConfig qc;
    qc.retrain_steps = 300;
    quant::QuantizeResult qr = quant::quantize_network(model, found.best_full, data, qc);
    std::printf("quantized accuracy after retraining: %.4f (%zu iterations)\n",
                evaluate(model, data.eval).accuracy, qr.metrics.size());

    codec::PackPlan plan(model.layers.size());
    for (const quant::LayerQuantState& st : qr.states) plan[st.layer_index] = st.codebook;
    std::vector<uint8_t> packed = codec::encode_packed(model, plan);
    codec::UnpackResult u = codec::decode_packed(packed);
    std::printf("packed %zu bytes, compression ratio %.2f\n", packed.size(),
                codec::compression_ratio(u.spec));
    return 0;
}
