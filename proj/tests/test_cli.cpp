#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tinydet/commands.hpp"
#include "tinydet/errors.hpp"
#include "tinydet/config.hpp"
#include "tinydet/io.hpp"
#include "tinydet/metrics.hpp"

using namespace tinydet;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const char* tag) {
    const fs::path p = fs::temp_directory_path() / (std::string("tinydet_cli_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

// Minutes-scale configs are for the acceptance suite; this one is seconds.
config::RunConfig cli_config(const std::string& root) {
    config::RunConfig cfg;
    cfg.scene.image_size = 16;
    cfg.scene.objects_min = 1;
    cfg.scene.objects_max = 2;
    cfg.scene.side_min = 3;
    cfg.scene.side_max = 6;
    cfg.model.levels = 1;
    cfg.model.backbone_channels = {4, 8};
    cfg.model.fpn_channels = 8;
    cfg.model.encoder = {2, 3, 8};
    cfg.model.unfold.model_dim = 16;
    cfg.model.unfold.oversample = 2;
    cfg.model.mte.layers = 1;
    cfg.model.mte.heads = 2;
    cfg.model.mte.model_dim = 16;
    cfg.proposals.negatives_per_positive = 1;
    cfg.generate.count = 6;
    cfg.generate.out = root + "/data";
    cfg.train.dataset = root + "/data";
    cfg.train.out = root + "/run";
    cfg.train.epochs = 1;
    return cfg;
}

std::vector<char> read_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    return std::vector<char>(std::istreambuf_iterator<char>(is), {});
}

std::string read_text(const std::string& path) {
    std::ifstream is(path);
    REQUIRE(is);
    return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("generate/train/eval/psnr pipeline produces the documented artifacts") {
    const std::string root = temp_dir("pipeline");
    config::RunConfig cfg = cli_config(root);
    commands::run_generate(cfg);
    CHECK(fs::exists(root + "/data/manifest.json"));
    CHECK(fs::exists(root + "/data/scene_000000.tfg"));
    CHECK(fs::exists(root + "/data/scene_000005.json"));

    const nlohmann::json manifest = io::load_manifest(root + "/data");
    CHECK(manifest.at("count") == 6);
    CHECK(manifest.at("config_hash") ==
          io::json_hash(nlohmann::json(manifest.at("config"))));

    commands::run_train(cfg);
    CHECK(fs::exists(root + "/run/checkpoint.tdcp"));
    CHECK(fs::exists(root + "/run/metrics.jsonl"));
    CHECK(fs::exists(root + "/run/summary.json"));

    // Metrics stream: one JSON object per batch with the loss components.
    {
        std::ifstream is(root + "/run/metrics.jsonl");
        std::string line;
        int lines = 0;
        while (std::getline(is, line)) {
            const nlohmann::json rec = nlohmann::json::parse(line);
            CHECK(rec.contains("ce"));
            CHECK(rec.contains("sl1"));
            CHECK(rec.contains("geo"));
            CHECK(rec.contains("sem"));
            CHECK(rec.contains("total"));
            ++lines;
        }
        CHECK(lines == 3);  // 6 scenes / batch 2
    }

    commands::run_eval(cfg, root + "/eval");
    CHECK(fs::exists(root + "/eval/detections.jsonl"));
    const std::string csv = read_text(root + "/eval/metrics.csv");
    CHECK(csv.rfind("metric,bucket,value\n", 0) == 0);
    CHECK(csv.find("ap50,all,") != std::string::npos);
    CHECK(csv.find("ap50,vt,") != std::string::npos);
    CHECK(csv.find("psnr_ave,all,") != std::string::npos);
    CHECK(csv.find("\r") == std::string::npos);  // LF only

    commands::run_psnr(cfg, root + "/psnr");
    CHECK(fs::exists(root + "/psnr/psnr.csv"));
    CHECK(fs::exists(root + "/psnr/maps/target_000000.tfg"));
    CHECK(fs::exists(root + "/psnr/maps/response_000000.tfg"));

    // Dumped maps round-trip and reproduce the reported PSNR values.
    const std::string psnr_csv = read_text(root + "/psnr/psnr.csv");
    std::istringstream ps(psnr_csv);
    std::string header;
    std::getline(ps, header);
    CHECK(header == "image_id,psnr_db");
    std::string row;
    int checked = 0;
    double sum = 0.0;
    int finite = 0;
    while (std::getline(ps, row)) {
        const auto comma = row.find(',');
        const int id = std::stoi(row.substr(0, comma));
        const std::string val = row.substr(comma + 1);
        char name[64];
        std::snprintf(name, sizeof name, "/psnr/maps/target_%06d.tfg", id);
        const Tensor target = io::read_float_grid(root + name);
        std::snprintf(name, sizeof name, "/psnr/maps/response_%06d.tfg", id);
        const Tensor response = io::read_float_grid(root + name);
        const double recomputed = metrics::psnr(target, response);
        if (val == "inf") {
            CHECK(std::isinf(recomputed));
        } else {
            CHECK(recomputed == doctest::Approx(std::stod(val)).epsilon(1e-9));
            sum += recomputed;
            ++finite;
        }
        ++checked;
    }
    CHECK(checked == 6);
    const std::string summary = read_text(root + "/psnr/psnr_summary.csv");
    REQUIRE(finite > 0);
    const double reported = std::stod(summary.substr(summary.rfind(',') + 1));
    CHECK(reported == doctest::Approx(sum / finite).epsilon(1e-9));
}

TEST_CASE("train is byte deterministic for identical config and seed") {
    const std::string root = temp_dir("determinism");
    config::RunConfig cfg = cli_config(root);
    commands::run_generate(cfg);

    commands::run_train(cfg);
    fs::copy_file(root + "/run/checkpoint.tdcp", root + "/first_checkpoint.tdcp");
    fs::copy_file(root + "/run/metrics.jsonl", root + "/first_metrics.jsonl");
    commands::run_train(cfg);

    CHECK(read_bytes(root + "/run/checkpoint.tdcp") ==
          read_bytes(root + "/first_checkpoint.tdcp"));
    CHECK(read_text(root + "/run/metrics.jsonl") == read_text(root + "/first_metrics.jsonl"));
    // Wall-clock metadata lives in the sidecar, not the primary outputs.
    CHECK(fs::exists(root + "/run/run_meta.json"));
}

TEST_CASE("lambda ablation wiring shows up in the metrics stream") {
    const std::string root = temp_dir("lambda");
    config::RunConfig cfg = cli_config(root);
    commands::run_generate(cfg);

    cfg.train.out = root + "/with";
    cfg.loss.lambda = 0.1;
    commands::run_train(cfg);
    cfg.train.out = root + "/without";
    cfg.loss.lambda = 0.0;
    commands::run_train(cfg);

    auto column_nonzero = [&](const std::string& path, const char* key) {
        std::ifstream is(path);
        std::string line;
        bool nonzero = false;
        while (std::getline(is, line)) {
            if (nlohmann::json::parse(line).at(key).get<double>() != 0.0) nonzero = true;
        }
        return nonzero;
    };
    CHECK(column_nonzero(root + "/with/metrics.jsonl", "geo"));
    CHECK(column_nonzero(root + "/with/metrics.jsonl", "sem"));
    CHECK(!column_nonzero(root + "/without/metrics.jsonl", "geo"));
    CHECK(!column_nonzero(root + "/without/metrics.jsonl", "sem"));
}

TEST_CASE("invalid configuration is rejected before any work") {
    const std::string root = temp_dir("invalid");
    config::RunConfig cfg = cli_config(root);
    cfg.scene.side_min = 0;
    cfg.loss.tau = -1;
    CHECK_THROWS_AS(commands::run_generate(cfg), ConfigError);
    CHECK(!fs::exists(root + "/data"));
}

#ifdef TINYDET_CLI_PATH
TEST_CASE("cli binary honors the documented exit codes") {
    const std::string root = temp_dir("exitcodes");
    config::RunConfig cfg = cli_config(root);
    io::write_text(root + "/good.json", config::to_json(cfg).dump(2));
    nlohmann::json bad = config::to_json(cfg);
    bad["loss"]["tau"] = -2.0;
    io::write_text(root + "/bad.json", bad.dump(2));

    const std::string cli = TINYDET_CLI_PATH;
    auto run = [&](const std::string& cmdline) {
        const int status = std::system(cmdline.c_str());
        return WEXITSTATUS(status);
    };
    CHECK(run(cli + " generate --config " + root + "/good.json > /dev/null 2>&1") == 0);
    CHECK(run(cli + " generate --config " + root + "/bad.json > /dev/null 2>&1") == 2);
    CHECK(run(cli + " train --config " + root + "/missing.json > /dev/null 2>&1") == 4);
    CHECK(run(cli + " --help > /dev/null 2>&1") == 0);
}
#endif
