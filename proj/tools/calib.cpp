// Scratch calibration harness used while tuning test-suite configurations.

#include <chrono>
#include <cstdio>
#include <string>

#include "tinydet/ablate.hpp"
#include "tinydet/gradcheck.hpp"
#include "tinydet/model.hpp"
#include "tinydet/optim.hpp"
#include "tinydet/rng.hpp"
#include "tinydet/train.hpp"

using namespace tinydet;

int main(int argc, char** argv) {
    const std::string mode = argc > 1 ? argv[1] : "grad";
    auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    if (mode == "grad") {
        auto rs = gradcheck::run_all(100);
        for (auto& r : rs) {
            std::printf("%-34s %.2e %s\n", r.name.c_str(), r.max_rel_err,
                        r.pass ? "ok" : "FAIL");
        }
        std::printf("run_all(100): %.1f s\n", elapsed());
    } else if (mode == "trace") {
        config::RunConfig cfg;
        cfg.scene.seed = 1;
        cfg.generate.count = 100;
        cfg.train.max_steps = std::stoi(argv[2]);
        cfg.loss.lambda = std::stod(argv[3]);
        cfg.optim.lr = std::stod(argv[4]);
        cfg.train.epochs = 1000000;
        std::vector<synth::Scene> scenes;
        for (int i = 0; i < cfg.generate.count; ++i) {
            scenes.push_back(synth::generate_scene(cfg.scene, i));
        }
        model::Model m(cfg.model);
        m.init_params(42);
        optim::SgdState state(cfg.optim);
        try {
            auto recs = train::train_model(m, scenes, cfg, state);
            const std::size_t stride = recs.size() > 40 ? 5 : 1;
            for (std::size_t i = 0; i < recs.size(); i += stride) {
                const auto& r = recs[i];
                std::printf("step %3zu  ce=%.4f sl1=%.4f geo=%.4f sem=%.4f total=%.4f\n", i,
                            r.ce, r.sl1, r.geo, r.sem, r.total);
            }
        } catch (const std::exception& e) {
            std::printf("blew up: %s\n", e.what());
        }
        std::printf("trace: %.1f s\n", elapsed());
    } else if (mode == "train") {
        config::RunConfig cfg;
        cfg.scene.seed = 1;
        cfg.generate.count = std::stoi(argv[2]);
        cfg.train.max_steps = std::stoi(argv[3]);
        cfg.loss.lambda = std::stod(argv[4]);
        cfg.model.shuffle_order = std::string(argv[5]) == "shuffle";
        cfg.model.unfold.oversample = std::stoi(argv[6]);
        if (argc > 7) cfg.optim.lr = std::stod(argv[7]);
        cfg.train.epochs = 1000000;
        std::vector<synth::Scene> scenes;
        for (int i = 0; i < cfg.generate.count; ++i) {
            scenes.push_back(synth::generate_scene(cfg.scene, i));
        }
        std::printf("scenes built: %.1f s\n", elapsed());
        auto s = ablate::train_and_evaluate(cfg, scenes, 42);
        std::printf("train+eval: %.1f s  ap50=%.4f ap50_vt=%.4f psnr=%.3f\n", elapsed(), s.ap50,
                    s.ap50_vt, s.psnr_ave);
    }
    return 0;
}
