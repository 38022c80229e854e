// Argument parsing for the dnq tool. Kept apart from the stage logic so test
// binaries can drive the exact code path the executable uses and check exit
// codes in-process.
#pragma once

#include <CLI11.hpp>

#include "dnq/pipeline.hpp"

namespace dnq::cli {

inline int run(std::vector<std::string> args) {
    CLI::App app{"dynamic per-layer bit-width quantization pipeline"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    int uniform_bits = 0;
    bool dump_layout = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration")->required();
        sub->add_option("--set", overrides,
                        "override a config value, e.g. --set controller.lambda=0.1");
    };
    CLI::App* train = app.add_subcommand("train", "train the float baseline");
    CLI::App* search = app.add_subcommand("search", "learn a per-layer bit-width sequence");
    CLI::App* quantize = app.add_subcommand("quantize", "quantize a checkpoint and pack it");
    CLI::App* eval = app.add_subcommand("eval", "evaluate a packed model");
    CLI::App* exp = app.add_subcommand("export", "inspect a packed model");
    for (CLI::App* sub : {train, search, quantize, eval, exp}) add_common(sub);
    quantize->add_option("--uniform-bits", uniform_bits,
                         "quantize every layer at this bit-width, skipping the sequence file");
    exp->add_flag("--dump-layout", dump_layout, "print per-layer bit budgets");

    // CLI11 wants argv order reversed
    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        PipelineConfig cfg = load_config(config_path, overrides);
        if (train->parsed()) return cmd_train(cfg);
        if (search->parsed()) return cmd_search(cfg);
        if (quantize->parsed()) return cmd_quantize(cfg, uniform_bits);
        if (eval->parsed()) return cmd_eval(cfg);
        if (exp->parsed()) return cmd_export(cfg, dump_layout);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace dnq::cli
