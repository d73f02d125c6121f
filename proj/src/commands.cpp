#include "tinydet/commands.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>

#include "tinydet/ablate.hpp"
#include "tinydet/errors.hpp"
#include "tinydet/gradcheck.hpp"
#include "tinydet/io.hpp"
#include "tinydet/optim.hpp"
#include "tinydet/rng.hpp"
#include "tinydet/train.hpp"

namespace tinydet::commands {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

// Wall-clock details live in a sidecar so primary outputs stay byte-stable.
void write_meta(const std::string& dir, const std::string& command, double seconds) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    json meta;
    meta["command"] = command;
    meta["unix_time"] =
        std::chrono::duration_cast<std::chrono::seconds>(now).count();
    meta["elapsed_seconds"] = seconds;
    io::write_text((fs::path(dir) / "run_meta.json").string(), meta.dump(2) + "\n");
}

class Stopwatch {
  public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

json summary_to_json(const train::EvalSummary& s) {
    json j;
    for (const auto& [k, v] : s.as_map()) j[k] = v;
    return j;
}

}  // namespace

void run_generate(const config::RunConfig& cfg) {
    config::require_valid(cfg);
    Stopwatch watch;
    std::vector<synth::Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(cfg.generate.count));
    for (int i = 0; i < cfg.generate.count; ++i) {
        scenes.push_back(synth::generate_scene(cfg.scene, i));
    }
    const json config_json = config::to_json(cfg);
    json manifest;
    manifest["count"] = cfg.generate.count;
    manifest["config"] = config_json;
    manifest["config_hash"] = io::json_hash(config_json);
    io::save_dataset(cfg.generate.out, scenes, manifest);
    write_meta(cfg.generate.out, "generate", watch.seconds());
    std::printf("generated %d scenes into %s (config %s)\n", cfg.generate.count,
                cfg.generate.out.c_str(), manifest["config_hash"].get<std::string>().c_str());
}

void run_train(const config::RunConfig& cfg) {
    config::require_valid(cfg);
    Stopwatch watch;
    ensure_dir(cfg.train.out);
    std::vector<synth::Scene> scenes = io::load_dataset(cfg.train.dataset);
    model::Model m(cfg.model);
    m.init_params(cfg.train.seed);
    optim::SgdState state(cfg.optim);
    std::vector<train::BatchRecord> records = train::train_model(m, scenes, cfg, state);

    std::string metrics_jsonl;
    for (const auto& r : records) {
        json line = {{"epoch", r.epoch}, {"batch", r.batch},   {"ce", r.ce},
                     {"sl1", r.sl1},     {"geo", r.geo},       {"sem", r.sem},
                     {"total", r.total}};
        metrics_jsonl += line.dump() + "\n";
    }
    io::write_text((fs::path(cfg.train.out) / "metrics.jsonl").string(), metrics_jsonl);
    io::save_checkpoint((fs::path(cfg.train.out) / "checkpoint.tdcp").string(), m.params(),
                        config::to_json(cfg));
    const train::EvalSummary summary =
        train::summarize(m, scenes, cfg.proposals, derive_seed(cfg.train.seed, "eval"));
    io::write_text((fs::path(cfg.train.out) / "summary.json").string(),
                   summary_to_json(summary).dump(2) + "\n");
    write_meta(cfg.train.out, "train", watch.seconds());
    std::printf("trained %zu batches; ap50=%.4f psnr_ave=%.3f -> %s\n", records.size(),
                summary.ap50, summary.psnr_ave, cfg.train.out.c_str());
}

namespace {

model::Model load_model(const config::RunConfig& cfg) {
    model::Model m(cfg.model);
    const std::string path = (fs::path(cfg.train.out) / "checkpoint.tdcp").string();
    io::load_checkpoint(path, m.params());
    return m;
}

}  // namespace

void run_eval(const config::RunConfig& cfg, const std::string& out) {
    config::require_valid(cfg);
    Stopwatch watch;
    const std::string out_dir = out.empty() ? cfg.train.out : out;
    ensure_dir(out_dir);
    std::vector<synth::Scene> scenes = io::load_dataset(cfg.train.dataset);
    model::Model m = load_model(cfg);
    std::vector<metrics::ImageDetections> dets = train::evaluate_detections(
        m, scenes, cfg.proposals, derive_seed(cfg.train.seed, "eval"));

    std::string det_jsonl;
    for (const auto& im : dets) {
        json line;
        line["image-id"] = im.image_id;
        line["gt"] = json::array();
        for (const auto& g : im.gt) {
            line["gt"].push_back(
                {{"box", {g.box.x1, g.box.y1, g.box.x2, g.box.y2}}, {"class", g.cls}});
        }
        line["det"] = json::array();
        for (const auto& d : im.det) {
            line["det"].push_back({{"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
                                   {"class", d.cls},
                                   {"score", d.score}});
        }
        det_jsonl += line.dump() + "\n";
    }
    io::write_text((fs::path(out_dir) / "detections.jsonl").string(), det_jsonl);

    std::vector<std::vector<std::string>> rows;
    auto add = [&rows](const std::string& metric, const std::string& bucket, double v) {
        rows.push_back({metric, bucket, io::format_double(v)});
    };
    add("ap50", "all", metrics::average_precision(dets, 0.5));
    add("ap75", "all", metrics::average_precision(dets, 0.75));
    add("ap5095", "all", metrics::ap_5095(dets));
    for (const auto& b : metrics::size_buckets()) {
        add("ap50", b.name, metrics::average_precision(dets, 0.5, &b));
    }
    std::vector<double> psnrs = train::psnr_per_image(m, scenes);
    add("psnr_ave", "all", metrics::psnr_ave(psnrs));
    io::write_csv((fs::path(out_dir) / "metrics.csv").string(), {"metric", "bucket", "value"},
                  rows);
    write_meta(out_dir, "eval", watch.seconds());
    std::printf("evaluated %zu images -> %s\n", scenes.size(), out_dir.c_str());
}

void run_psnr(const config::RunConfig& cfg, const std::string& out) {
    config::require_valid(cfg);
    Stopwatch watch;
    const std::string out_dir = out.empty() ? cfg.train.out : out;
    ensure_dir(out_dir);
    ensure_dir((fs::path(out_dir) / "maps").string());
    std::vector<synth::Scene> scenes = io::load_dataset(cfg.train.dataset);
    model::Model m = load_model(cfg);

    std::vector<std::vector<std::string>> rows;
    std::vector<double> values;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const std::vector<Tensor> pyramid = m.pyramid_features(scenes[i].image);
        const Tensor target = metrics::build_target_feature(
            scenes[i].gt, scenes[i].image.dim(1), scenes[i].image.dim(2));
        const Tensor response = metrics::build_response_feature(pyramid);
        const double v = metrics::psnr(target, response);
        values.push_back(v);
        rows.push_back({std::to_string(i), io::format_double(v)});
        char name[64];
        std::snprintf(name, sizeof name, "maps/target_%06zu.tfg", i);
        io::write_float_grid((fs::path(out_dir) / name).string(), target);
        std::snprintf(name, sizeof name, "maps/response_%06zu.tfg", i);
        io::write_float_grid((fs::path(out_dir) / name).string(), response);
    }
    io::write_csv((fs::path(out_dir) / "psnr.csv").string(), {"image_id", "psnr_db"}, rows);
    io::write_csv((fs::path(out_dir) / "psnr_summary.csv").string(),
                  {"metric", "bucket", "value"},
                  {{"psnr_ave", "all", io::format_double(metrics::psnr_ave(values))}});
    write_meta(out_dir, "psnr", watch.seconds());
    std::printf("psnr_ave=%.3f dB over %zu images -> %s\n", metrics::psnr_ave(values),
                scenes.size(), out_dir.c_str());
}

void run_ablate(const config::RunConfig& cfg, const std::string& study, const std::string& out,
                int n_seeds) {
    config::require_valid(cfg);
    Stopwatch watch;
    const std::string out_dir = out.empty() ? cfg.train.out : out;
    ensure_dir(out_dir);
    std::vector<ablate::CellResult> results = ablate::run_study(cfg, study, n_seeds);
    ablate::write_study_csv((fs::path(out_dir) / ("ablate_" + study + ".csv")).string(),
                            results);
    write_meta(out_dir, "ablate", watch.seconds());
    for (const auto& r : results) {
        std::printf("%-18s", r.cell.c_str());
        for (const char* key : {"ap50", "ap50_vt", "psnr_ave"}) {
            const auto it = r.metrics.find(key);
            if (it != r.metrics.end()) {
                std::printf("  %s=%.4f±%.4f", key, it->second.first, it->second.second);
            }
        }
        std::printf("\n");
    }
}

void run_gradcheck(const std::string& out, int seeds) {
    Stopwatch watch;
    if (!out.empty()) ensure_dir(out);
    std::vector<gradcheck::CheckResult> results = gradcheck::run_all(seeds);
    json report;
    report["seeds"] = seeds;
    report["tolerance"] = gradcheck::kTolerance;
    report["step"] = gradcheck::kStep;
    report["checks"] = json::array();
    bool pass = true;
    std::string failed;
    for (const auto& r : results) {
        report["checks"].push_back(
            {{"name", r.name}, {"max_rel_err", r.max_rel_err}, {"pass", r.pass}});
        std::printf("%-32s max_rel_err=%.3e  %s\n", r.name.c_str(), r.max_rel_err,
                    r.pass ? "pass" : "FAIL");
        if (!r.pass) {
            pass = false;
            failed += (failed.empty() ? "" : ", ") + r.name;
        }
    }
    report["pass"] = pass;
    if (!out.empty()) {
        io::write_text((fs::path(out) / "gradcheck.json").string(), report.dump(2) + "\n");
        write_meta(out, "gradcheck", watch.seconds());
    }
    if (!pass) {
        throw NumericError("gradient check failed for: " + failed);
    }
    std::printf("all %zu gradient checks passed (%d seeds)\n", results.size(), seeds);
}

}  // namespace tinydet::commands
