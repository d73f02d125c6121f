#include "tinydet/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "tinydet/errors.hpp"
#include "tinydet/unfold.hpp"

namespace tinydet::config {

namespace {

using nlohmann::json;

// Pulls known keys and rejects unknown ones.
class Section {
  public:
    Section(const json& j, std::string name) : j_(&j), name_(std::move(name)) {
        if (!j.is_object()) throw ConfigError("config section " + name_ + " must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (j_->contains(key)) {
            try {
                out = j_->at(key).get<T>();
            } catch (const json::exception& e) {
                throw ConfigError("config key " + name_ + "." + key + ": " + e.what());
            }
        }
    }

    void claim(const char* key) { seen_.insert(key); }

    void finish() const {
        for (const auto& [key, value] : j_->items()) {
            if (!seen_.count(key)) {
                throw ConfigError("unknown config key " + name_ + "." + key);
            }
        }
    }

  private:
    const json* j_;
    std::string name_;
    std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_config(const json& j) {
    RunConfig cfg;
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    std::set<std::string> known = {"scene", "proposals", "model", "loss", "optim",
                                   "train", "generate"};
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw ConfigError("unknown config section " + key);
    }
    if (j.contains("scene")) {
        Section s(j["scene"], "scene");
        s.get("image_size", cfg.scene.image_size);
        s.get("objects_min", cfg.scene.objects_min);
        s.get("objects_max", cfg.scene.objects_max);
        s.get("side_min", cfg.scene.side_min);
        s.get("side_max", cfg.scene.side_max);
        s.get("class_count", cfg.scene.class_count);
        s.get("noise_std", cfg.scene.noise_std);
        s.get("seed", cfg.scene.seed);
        s.finish();
    }
    if (j.contains("proposals")) {
        Section s(j["proposals"], "proposals");
        s.get("jitter_std", cfg.proposals.jitter_std);
        s.get("negatives_per_positive", cfg.proposals.negatives_per_positive);
        s.get("positive_iou", cfg.proposals.positive_iou);
        s.get("negative_iou_max", cfg.proposals.negative_iou_max);
        s.get("max_positives", cfg.proposals.max_positives);
        s.finish();
    }
    if (j.contains("model")) {
        Section s(j["model"], "model");
        s.get("levels", cfg.model.levels);
        s.get("backbone_channels", cfg.model.backbone_channels);
        s.get("fpn_channels", cfg.model.fpn_channels);
        s.get("roi_size", cfg.model.roi_size);
        s.get("use_mte", cfg.model.use_mte);
        s.get("use_tts", cfg.model.use_tts);
        std::string order = cfg.model.shuffle_order ? "shuffle" : "raster";
        s.get("order", order);
        if (order != "shuffle" && order != "raster") {
            throw ConfigError("model.order must be \"shuffle\" or \"raster\", got " + order);
        }
        cfg.model.shuffle_order = order == "shuffle";
        if (j["model"].contains("encoder")) {
            Section e(j["model"]["encoder"], "model.encoder");
            e.get("conv1_out", cfg.model.encoder.conv1_out);
            e.get("conv2_out", cfg.model.encoder.conv2_out);
            e.get("hidden", cfg.model.encoder.hidden);
            e.finish();
        }
        s.claim("encoder");
        if (j["model"].contains("unfold")) {
            Section u(j["model"]["unfold"], "model.unfold");
            u.get("patch_size", cfg.model.unfold.patch_size);
            u.get("patch_stride", cfg.model.unfold.patch_stride);
            u.get("window", cfg.model.unfold.window);
            u.get("window_stride", cfg.model.unfold.window_stride);
            u.get("oversample", cfg.model.unfold.oversample);
            u.get("model_dim", cfg.model.unfold.model_dim);
            u.get("pad_windows", cfg.model.unfold.pad_windows);
            u.finish();
        }
        s.claim("unfold");
        if (j["model"].contains("mte")) {
            Section m(j["model"]["mte"], "model.mte");
            m.get("layers", cfg.model.mte.layers);
            m.get("heads", cfg.model.mte.heads);
            m.get("ffn_mult", cfg.model.mte.ffn_mult);
            m.finish();
        }
        s.claim("mte");
        s.finish();
        cfg.model.mte.model_dim = cfg.model.unfold.model_dim;
        cfg.model.class_count = cfg.scene.class_count;
    }
    if (j.contains("loss")) {
        Section s(j["loss"], "loss");
        s.get("lambda", cfg.loss.lambda);
        s.get("tau", cfg.loss.tau);
        s.get("normalize", cfg.loss.normalize);
        s.finish();
    }
    if (j.contains("optim")) {
        Section s(j["optim"], "optim");
        s.get("lr", cfg.optim.lr);
        s.get("weight_decay", cfg.optim.weight_decay);
        s.get("momentum", cfg.optim.momentum);
        s.finish();
    }
    if (j.contains("train")) {
        Section s(j["train"], "train");
        s.get("batch_size", cfg.train.batch_size);
        s.get("epochs", cfg.train.epochs);
        s.get("max_steps", cfg.train.max_steps);
        s.get("seed", cfg.train.seed);
        s.get("dataset", cfg.train.dataset);
        s.get("out", cfg.train.out);
        s.finish();
    }
    if (j.contains("generate")) {
        Section s(j["generate"], "generate");
        s.get("count", cfg.generate.count);
        s.get("out", cfg.generate.out);
        s.finish();
    }
    cfg.model.class_count = cfg.scene.class_count;
    cfg.loss.class_count = cfg.scene.class_count;
    cfg.model.mte.model_dim = cfg.model.unfold.model_dim;
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

nlohmann::json to_json(const RunConfig& cfg) {
    json j;
    j["scene"] = {{"image_size", cfg.scene.image_size},
                  {"objects_min", cfg.scene.objects_min},
                  {"objects_max", cfg.scene.objects_max},
                  {"side_min", cfg.scene.side_min},
                  {"side_max", cfg.scene.side_max},
                  {"class_count", cfg.scene.class_count},
                  {"noise_std", cfg.scene.noise_std},
                  {"seed", cfg.scene.seed}};
    j["proposals"] = {{"jitter_std", cfg.proposals.jitter_std},
                      {"negatives_per_positive", cfg.proposals.negatives_per_positive},
                      {"positive_iou", cfg.proposals.positive_iou},
                      {"negative_iou_max", cfg.proposals.negative_iou_max},
                      {"max_positives", cfg.proposals.max_positives}};
    j["model"] = {{"levels", cfg.model.levels},
                  {"backbone_channels", cfg.model.backbone_channels},
                  {"fpn_channels", cfg.model.fpn_channels},
                  {"roi_size", cfg.model.roi_size},
                  {"use_mte", cfg.model.use_mte},
                  {"use_tts", cfg.model.use_tts},
                  {"order", cfg.model.shuffle_order ? "shuffle" : "raster"},
                  {"encoder",
                   {{"conv1_out", cfg.model.encoder.conv1_out},
                    {"conv2_out", cfg.model.encoder.conv2_out},
                    {"hidden", cfg.model.encoder.hidden}}},
                  {"unfold",
                   {{"patch_size", cfg.model.unfold.patch_size},
                    {"patch_stride", cfg.model.unfold.patch_stride},
                    {"window", cfg.model.unfold.window},
                    {"window_stride", cfg.model.unfold.window_stride},
                    {"oversample", cfg.model.unfold.oversample},
                    {"model_dim", cfg.model.unfold.model_dim},
                    {"pad_windows", cfg.model.unfold.pad_windows}}},
                  {"mte",
                   {{"layers", cfg.model.mte.layers},
                    {"heads", cfg.model.mte.heads},
                    {"ffn_mult", cfg.model.mte.ffn_mult}}}};
    j["loss"] = {{"lambda", cfg.loss.lambda},
                 {"tau", cfg.loss.tau},
                 {"normalize", cfg.loss.normalize}};
    j["optim"] = {{"lr", cfg.optim.lr},
                  {"weight_decay", cfg.optim.weight_decay},
                  {"momentum", cfg.optim.momentum}};
    j["train"] = {{"batch_size", cfg.train.batch_size},
                  {"epochs", cfg.train.epochs},
                  {"max_steps", cfg.train.max_steps},
                  {"seed", cfg.train.seed},
                  {"dataset", cfg.train.dataset},
                  {"out", cfg.train.out}};
    j["generate"] = {{"count", cfg.generate.count}, {"out", cfg.generate.out}};
    return j;
}

std::vector<std::string> validate(const RunConfig& cfg) {
    std::vector<std::string> errs;
    auto check = [&errs](bool ok, const std::string& msg) {
        if (!ok) errs.push_back(msg);
    };
    const auto& sc = cfg.scene;
    check(sc.image_size >= 8, "scene.image_size must be at least 8");
    check(sc.image_size % (1 << cfg.model.levels) == 0,
          "scene.image_size must be divisible by 2^model.levels");
    check(sc.objects_min >= 0, "scene.objects_min must be >= 0");
    check(sc.objects_max >= sc.objects_min, "scene.objects_max must be >= objects_min");
    check(sc.side_min >= 2, "scene.side_min must be >= 2");
    check(sc.side_max >= sc.side_min, "scene.side_max must be >= side_min");
    check(sc.side_max <= sc.image_size, "scene.side_max must fit in the image");
    check(sc.class_count >= 1, "scene.class_count must be >= 1");
    check(sc.noise_std >= 0.0, "scene.noise_std must be >= 0");
    const auto& pr = cfg.proposals;
    check(pr.jitter_std >= 0.0, "proposals.jitter_std must be >= 0");
    check(pr.negatives_per_positive >= 0, "proposals.negatives_per_positive must be >= 0");
    check(pr.positive_iou > 0.0 && pr.positive_iou < 1.0,
          "proposals.positive_iou must lie in (0,1)");
    check(pr.negative_iou_max > 0.0 && pr.negative_iou_max < 1.0,
          "proposals.negative_iou_max must lie in (0,1)");
    check(pr.max_positives >= 1, "proposals.max_positives must be >= 1");
    const auto& m = cfg.model;
    check(m.levels >= 0, "model.levels must be >= 0");
    check(static_cast<int>(m.backbone_channels.size()) == m.levels + 1,
          "model.backbone_channels must list levels+1 entries");
    for (int ch : m.backbone_channels) {
        if (ch < 1) {
            errs.push_back("model.backbone_channels entries must be positive");
            break;
        }
    }
    check(m.fpn_channels >= 1, "model.fpn_channels must be >= 1");
    check(m.encoder.conv1_out >= 1 && m.encoder.conv2_out >= 1 && m.encoder.hidden >= 1,
          "model.encoder widths must be positive");
    check(m.roi_size >= 2, "model.roi_size must be >= 2");
    const auto& u = m.unfold;
    check(u.patch_size >= 1 && u.patch_stride >= 1,
          "model.unfold patch size/stride must be positive");
    if (u.patch_size >= 1 && u.patch_stride >= 1 && m.roi_size >= u.patch_size) {
        if ((m.roi_size - u.patch_size) % u.patch_stride != 0) {
            errs.push_back("model.unfold patch geometry does not divide the RoI evenly");
        } else {
            const int grid = (m.roi_size - u.patch_size) / u.patch_stride + 1;
            check(u.window >= 1 && u.window <= grid,
                  "model.unfold.window must lie in [1, token grid size]");
            std::int64_t fact = 1;
            for (int i = 2; i <= u.window * u.window && fact < (1 << 30); ++i) fact *= i;
            check(u.oversample >= 1 && u.oversample <= fact,
                  "model.unfold.oversample must lie in [1, (window^2)!]");
        }
    } else {
        errs.push_back("model.roi_size must be >= model.unfold.patch_size");
    }
    check(u.window_stride >= 1, "model.unfold.window_stride must be positive");
    check(u.model_dim >= 1, "model.unfold.model_dim must be positive");
    check(m.mte.layers >= 1, "model.mte.layers must be >= 1");
    check(m.mte.heads >= 1, "model.mte.heads must be >= 1");
    check(m.mte.heads >= 1 && u.model_dim % std::max(1, m.mte.heads) == 0,
          "model.unfold.model_dim must be divisible by model.mte.heads");
    check(m.mte.ffn_mult >= 1, "model.mte.ffn_mult must be >= 1");
    check(!(m.use_tts && !m.use_mte), "model.use_tts requires model.use_mte");
    check(cfg.loss.lambda >= 0.0, "loss.lambda must be >= 0");
    check(cfg.loss.tau > 0.0, "loss.tau must be > 0");
    check(cfg.optim.lr > 0.0, "optim.lr must be > 0");
    check(cfg.optim.weight_decay >= 0.0, "optim.weight_decay must be >= 0");
    check(cfg.optim.momentum >= 0.0 && cfg.optim.momentum < 1.0,
          "optim.momentum must lie in [0,1)");
    check(cfg.train.batch_size >= 1, "train.batch_size must be >= 1");
    check(cfg.train.epochs >= 1, "train.epochs must be >= 1");
    check(cfg.train.max_steps >= 0, "train.max_steps must be >= 0");
    check(cfg.generate.count >= 1, "generate.count must be >= 1");
    return errs;
}

void require_valid(const RunConfig& cfg) {
    const std::vector<std::string> errs = validate(cfg);
    if (errs.empty()) return;
    std::string msg = "invalid configuration (" + std::to_string(errs.size()) + " violations):";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw ConfigError(msg);
}

}  // namespace tinydet::config
