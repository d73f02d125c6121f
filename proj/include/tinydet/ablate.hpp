#pragma once

#include <map>
#include <string>
#include <vector>

#include "tinydet/config.hpp"
#include "tinydet/model.hpp"
#include "tinydet/synth.hpp"
#include "tinydet/train.hpp"

namespace tinydet::ablate {

// Trains one model on the given scenes and evaluates it on the same set with
// the deterministic eval-proposal protocol.
train::EvalSummary train_and_evaluate(const config::RunConfig& cfg,
                                      const std::vector<synth::Scene>& scenes,
                                      std::uint64_t seed);

struct CellResult {
    std::string cell;
    int seeds = 0;
    // metric -> (mean, std over seeds)
    std::map<std::string, std::pair<double, double>> metrics;
    // raw per-seed values, metric -> values, for downstream significance use
    std::map<std::string, std::vector<double>> samples;
};

// Studies: "order" ({raster,shuffle} x {1x,4x tokens}), "lambda"
// ({0,0.1,0.5,1.0}), "tokens" (oversample {1,2,4}), "components"
// (cumulative {base, +dnfpn, +mte, +tts}).
std::vector<CellResult> run_study(const config::RunConfig& base, const std::string& study,
                                  int n_seeds, int n_workers = 1);

void write_study_csv(const std::string& path, const std::vector<CellResult>& results);

}  // namespace tinydet::ablate
