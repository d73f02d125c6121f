#pragma once

#include <string>

#include "tinydet/config.hpp"

namespace tinydet::commands {

// Command bodies behind the CLI; each is also callable in-process. Outputs
// are deterministic in (config, inputs); wall-clock metadata goes to the
// run_meta.json sidecar only.
void run_generate(const config::RunConfig& cfg);
void run_train(const config::RunConfig& cfg);
void run_eval(const config::RunConfig& cfg, const std::string& out);
void run_psnr(const config::RunConfig& cfg, const std::string& out);
void run_ablate(const config::RunConfig& cfg, const std::string& study, const std::string& out,
                int n_seeds = 5);
// Throws NumericError when any check fails, after writing the report.
void run_gradcheck(const std::string& out, int seeds = 100);

}  // namespace tinydet::commands
