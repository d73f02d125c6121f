#include "tinydet/ablate.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <thread>

#include "tinydet/errors.hpp"
#include "tinydet/io.hpp"
#include "tinydet/metrics.hpp"
#include "tinydet/optim.hpp"
#include "tinydet/train.hpp"
#include "tinydet/rng.hpp"

namespace tinydet::ablate {

train::EvalSummary train_and_evaluate(const config::RunConfig& cfg,
                                      const std::vector<synth::Scene>& scenes,
                                      std::uint64_t seed) {
    config::RunConfig run = cfg;
    run.train.seed = seed;
    model::Model m(run.model);
    m.init_params(seed);
    optim::SgdState state(run.optim);
    train::train_model(m, scenes, run, state);
    return train::summarize(m, scenes, run.proposals, derive_seed(seed, "eval"));
}

namespace {

struct Cell {
    std::string name;
    config::RunConfig cfg;
};

std::vector<Cell> study_cells(const config::RunConfig& base, const std::string& study) {
    std::vector<Cell> cells;
    if (study == "order") {
        for (const bool shuffle : {false, true}) {
            for (const int r : {1, 4}) {
                Cell c{std::string(shuffle ? "shuffle" : "raster") + "_" + std::to_string(r) +
                           "x",
                       base};
                c.cfg.model.shuffle_order = shuffle;
                c.cfg.model.unfold.oversample = r;
                cells.push_back(std::move(c));
            }
        }
    } else if (study == "lambda") {
        for (const double l : {0.0, 0.1, 0.5, 1.0}) {
            Cell c{"lambda_" + io::format_double(l), base};
            c.cfg.loss.lambda = l;
            cells.push_back(std::move(c));
        }
    } else if (study == "tokens") {
        for (const int r : {1, 2, 4}) {
            Cell c{"tokens_" + std::to_string(r) + "x", base};
            c.cfg.model.shuffle_order = true;
            c.cfg.model.unfold.oversample = r;
            cells.push_back(std::move(c));
        }
    } else if (study == "components") {
        struct Row {
            const char* name;
            bool dnfpn, mte, tts;
        };
        for (const Row row : {Row{"base", false, false, false}, Row{"dnfpn", true, false, false},
                              Row{"dnfpn_mte", true, true, false},
                              Row{"dnfpn_mte_tts", true, true, true}}) {
            Cell c{row.name, base};
            c.cfg.loss.lambda = row.dnfpn ? (base.loss.lambda > 0 ? base.loss.lambda : 0.1) : 0.0;
            c.cfg.model.use_mte = row.mte;
            c.cfg.model.use_tts = row.tts;
            cells.push_back(std::move(c));
        }
    } else {
        throw ConfigError("unknown ablation study \"" + study +
                          "\" (expected order|lambda|tokens|components)");
    }
    return cells;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, std::sqrt(var)};
}

}  // namespace

std::vector<CellResult> run_study(const config::RunConfig& base, const std::string& study,
                                  int n_seeds, int n_workers) {
    const std::vector<Cell> cells = study_cells(base, study);
    // One fixed scene set for the whole study.
    std::vector<synth::Scene> scenes;
    for (int i = 0; i < base.generate.count; ++i) {
        scenes.push_back(synth::generate_scene(base.scene, i));
    }
    std::vector<CellResult> results(cells.size());
    std::mutex next_mutex;
    std::size_t next = 0;
    auto worker = [&]() {
        while (true) {
            std::size_t idx;
            {
                std::lock_guard<std::mutex> lock(next_mutex);
                if (next >= cells.size()) return;
                idx = next++;
            }
            const Cell& cell = cells[idx];
            CellResult res;
            res.cell = cell.name;
            res.seeds = n_seeds;
            for (int s = 0; s < n_seeds; ++s) {
                const std::uint64_t seed = derive_seed(base.train.seed, cell.name) +
                                           static_cast<std::uint64_t>(s);
                const train::EvalSummary summary = train_and_evaluate(cell.cfg, scenes, seed);
                for (const auto& [k, v] : summary.as_map()) {
                    res.samples[k].push_back(v);
                }
            }
            for (const auto& [k, vs] : res.samples) {
                res.metrics[k] = mean_std(vs);
            }
            results[idx] = std::move(res);
        }
    };
    const int workers = std::max(1, std::min<int>(n_workers, static_cast<int>(cells.size())));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    std::stable_sort(results.begin(), results.end(),
                     [](const CellResult& a, const CellResult& b) { return a.cell < b.cell; });
    return results;
}

void write_study_csv(const std::string& path, const std::vector<CellResult>& results) {
    std::vector<std::vector<std::string>> rows;
    for (const CellResult& r : results) {
        for (const auto& [metric, ms] : r.metrics) {
            rows.push_back({r.cell, metric, io::format_double(ms.first),
                            io::format_double(ms.second), std::to_string(r.seeds)});
        }
    }
    io::write_csv(path, {"cell", "metric", "mean", "std", "seeds"}, rows);
}

}  // namespace tinydet::ablate
