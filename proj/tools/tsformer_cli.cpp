// Command-line frontend: toy training, restoration, benchmarking, the
// sampling-strategy ablation harness and the gradient-check suite.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error (missing or
// malformed files), 3 internal-consistency failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tsformer/tsformer.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::string out;
};

tsf::RunConfig load_config(const CommonArgs& args) {
    tsf::RunConfig cfg = args.config_path.empty() ? tsf::RunConfig{} : tsf::RunConfig::from_file(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    if (!args.out.empty()) cfg.out = args.out;
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "run configuration file (key = value lines)");
    cmd->add_option("--seed", args.seed, "override the config seed");
    cmd->add_option("--out", args.out, "output path (command-specific)");
}

void echo_config(const tsf::RunConfig& cfg) {
    for (const auto& [k, v] : cfg.echo()) std::cout << "# " << k << " = " << v << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tsformer: sparse frequency-domain attention image restoration"};
    app.require_subcommand(1);

    CommonArgs train_args, restore_args, bench_args, ablate_args, grad_args;
    std::string restore_input, restore_checkpoint, restore_reference;

    CLI::App* train = app.add_subcommand("train-toy", "train a toy model on synthetic degradations");
    add_common(train, train_args);

    CLI::App* restore = app.add_subcommand("restore", "restore an image with a trained checkpoint");
    add_common(restore, restore_args);
    restore->add_option("--input", restore_input, "degraded input image (PNG or PPM)");
    restore->add_option("--checkpoint", restore_checkpoint, "checkpoint file");
    restore->add_option("--reference", restore_reference, "ground-truth image for PSNR/SSIM");

    CLI::App* bench = app.add_subcommand("bench", "dense vs sparse pipeline FLOP and timing report");
    add_common(bench, bench_args);

    CLI::App* ablate = app.add_subcommand("ablate", "compare sampling strategies (CSV output)");
    add_common(ablate, ablate_args);

    CLI::App* grad = app.add_subcommand("grad-check", "finite-difference check of every backward rule");
    add_common(grad, grad_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (train->parsed()) {
            tsf::RunConfig cfg = load_config(train_args);
            if (cfg.out.empty()) cfg.out = "toy.ckpt";
            if (cfg.loss_csv.empty()) cfg.loss_csv = cfg.out + ".loss.csv";
            echo_config(cfg);
            tsf::TrainResult result;
            tsf::TSFormer model = tsf::train_toy(cfg, &result, &std::cout);
            tsf::checkpoint_save(model, cfg.out);
            std::cout << "initial l1 " << tsf::fmt_csv(result.initial_loss) << ", final l1 "
                      << tsf::fmt_csv(result.final_loss) << "\n";
            std::cout << "checkpoint written to " << cfg.out << "\n";
            std::cout << "loss curve written to " << cfg.loss_csv << "\n";
        } else if (restore->parsed()) {
            tsf::RunConfig cfg = load_config(restore_args);
            if (!restore_input.empty()) cfg.input = restore_input;
            if (!restore_checkpoint.empty()) cfg.checkpoint = restore_checkpoint;
            if (!restore_reference.empty()) cfg.reference = restore_reference;
            if (cfg.out.empty()) cfg.out = "restored.png";
            echo_config(cfg);
            tsf::run_restore(cfg, &std::cout);
            std::cout << "restored image written to " << cfg.out << "\n";
        } else if (bench->parsed()) {
            tsf::RunConfig cfg = load_config(bench_args);
            echo_config(cfg);
            tsf::run_bench(cfg, &std::cout);
            if (!cfg.out.empty()) std::cout << "report written to " << cfg.out << "\n";
        } else if (ablate->parsed()) {
            tsf::RunConfig cfg = load_config(ablate_args);
            if (cfg.out.empty()) cfg.out = "ablate";
            echo_config(cfg);
            tsf::run_ablation(cfg, cfg.out, &std::cout);
            std::cout << "wrote " << cfg.out << "_summary.csv and " << cfg.out << "_hist.csv\n";
        } else if (grad->parsed()) {
            tsf::RunConfig cfg = load_config(grad_args);
            (void)cfg;
            if (!tsf::run_grad_check_report(std::cout)) return 3;
        }
    } catch (const tsf::InternalError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    } catch (const tsf::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
