#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tinydet/commands.hpp"
#include "tinydet/errors.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct Args {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string study = "order";
    int ablate_seeds = 5;
    int gradcheck_seeds = 100;
};

tinydet::config::RunConfig load(const Args& a) {
    tinydet::config::RunConfig cfg = tinydet::config::load_config_file(a.config_path);
    if (a.seed) {
        cfg.train.seed = *a.seed;
        cfg.scene.seed = *a.seed;
    }
    if (!a.out.empty()) {
        cfg.train.out = a.out;
        cfg.generate.out = a.out;
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale tiny-object-detection testbed"};
    app.require_subcommand(1);

    Args args;
    auto add_common = [&args](CLI::App* cmd, bool needs_config) {
        auto* opt = cmd->add_option("--config", args.config_path, "Run configuration JSON");
        if (needs_config) opt->required();
        cmd->add_option("--seed", args.seed, "Override the configured seeds");
        cmd->add_option("--out", args.out, "Override the output directory");
    };

    CLI::App* generate = app.add_subcommand("generate", "Render a synthetic scene dataset");
    add_common(generate, true);
    CLI::App* train = app.add_subcommand("train", "Train on a generated dataset");
    add_common(train, true);
    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint: AP tables + detections");
    add_common(eval, true);
    CLI::App* psnr = app.add_subcommand("psnr", "Feature-quality PSNR report for a checkpoint");
    add_common(psnr, true);
    CLI::App* ablate = app.add_subcommand("ablate", "Run an ablation study grid");
    add_common(ablate, true);
    ablate->add_option("--study", args.study, "order | lambda | tokens | components");
    ablate->add_option("--seeds", args.ablate_seeds, "Seeds per grid cell");
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    add_common(gradcheck, false);
    gradcheck->add_option("--seeds", args.gradcheck_seeds, "Random draws per check");

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) {
            tinydet::commands::run_generate(load(args));
        } else if (train->parsed()) {
            tinydet::commands::run_train(load(args));
        } else if (eval->parsed()) {
            tinydet::commands::run_eval(load(args), args.out);
        } else if (psnr->parsed()) {
            tinydet::commands::run_psnr(load(args), args.out);
        } else if (ablate->parsed()) {
            tinydet::commands::run_ablate(load(args), args.study, args.out, args.ablate_seeds);
        } else if (gradcheck->parsed()) {
            tinydet::commands::run_gradcheck(args.out, args.gradcheck_seeds);
        }
    } catch (const tinydet::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const tinydet::NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return kExitNumeric;
    } catch (const tinydet::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return kExitOk;
}
