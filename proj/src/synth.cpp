#include "tinydet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tinydet/errors.hpp"
#include "tinydet/rng.hpp"

namespace tinydet::synth {

namespace {

constexpr double kBackgroundLevel = 0.15;

void paint(Tensor& image, int x, int y, double v) {
    double& cell = image.at(0, y, x);
    cell = std::max(cell, v);
}

// Per-class appearance: filled square, disc, or cross, at distinct levels.
void render_object(Tensor& image, int x0, int y0, int side, int cls) {
    const int kind = cls % 3;
    const double intensity = kind == 0 ? 0.92 : (kind == 1 ? 0.74 : 0.84);
    const double c = (side - 1) / 2.0;
    const int arm = std::max(1, side / 3);
    for (int dy = 0; dy < side; ++dy) {
        for (int dx = 0; dx < side; ++dx) {
            bool hit = false;
            switch (kind) {
                case 0:
                    hit = true;
                    break;
                case 1:
                    hit = (dx - c) * (dx - c) + (dy - c) * (dy - c) <= c * c + 0.25;
                    break;
                default:
                    hit = std::abs(dx - c) * 2 < arm || std::abs(dy - c) * 2 < arm;
                    break;
            }
            if (hit) paint(image, x0 + dx, y0 + dy, intensity);
        }
    }
}

}  // namespace

Scene generate_scene(const SceneConfig& cfg, int index) {
    if (cfg.image_size < cfg.side_max || cfg.side_min < 1 || cfg.side_min > cfg.side_max ||
        cfg.objects_min < 0 || cfg.objects_min > cfg.objects_max || cfg.class_count < 1) {
        throw ConfigError("generate_scene: invalid scene configuration");
    }
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
    const int hw = cfg.image_size;
    Scene scene;
    scene.image = Tensor({1, hw, hw});
    for (std::int64_t i = 0; i < scene.image.size(); ++i) {
        scene.image[i] =
            std::clamp(kBackgroundLevel + cfg.noise_std * rng.normal(), 0.0, 1.0);
    }
    const int count = rng.int_range(cfg.objects_min, cfg.objects_max);
    for (int k = 0; k < count; ++k) {
        const int cls = rng.int_range(0, cfg.class_count - 1);
        const double u = rng.uniform01();
        const int span = cfg.side_max - cfg.side_min + 1;
        const int side =
            cfg.side_min + std::min(span - 1, static_cast<int>(u * u * span));
        const int x0 = rng.int_range(0, hw - side);
        const int y0 = rng.int_range(0, hw - side);
        render_object(scene.image, x0, y0, side, cls);
        scene.gt.push_back({{static_cast<double>(x0), static_cast<double>(y0),
                             static_cast<double>(x0 + side), static_cast<double>(y0 + side)},
                            cls});
    }
    return scene;
}

Tensor box_deltas(const metrics::Box& proposal, const metrics::Box& gt) {
    const double pw = proposal.width(), ph = proposal.height();
    const double pcx = 0.5 * (proposal.x1 + proposal.x2);
    const double pcy = 0.5 * (proposal.y1 + proposal.y2);
    const double gcx = 0.5 * (gt.x1 + gt.x2);
    const double gcy = 0.5 * (gt.y1 + gt.y2);
    return Tensor({4}, {(gcx - pcx) / pw, (gcy - pcy) / ph, std::log(gt.width() / pw),
                        std::log(gt.height() / ph)});
}

metrics::Box apply_deltas(const metrics::Box& proposal, const Tensor& deltas) {
    const double pw = proposal.width(), ph = proposal.height();
    const double pcx = 0.5 * (proposal.x1 + proposal.x2);
    const double pcy = 0.5 * (proposal.y1 + proposal.y2);
    const double cx = pcx + deltas[0] * pw;
    const double cy = pcy + deltas[1] * ph;
    const double w = pw * std::exp(deltas[2]);
    const double h = ph * std::exp(deltas[3]);
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

namespace {

metrics::Box jitter_box(const metrics::Box& gt, double std_px, int image_size, Rng& rng) {
    const double dx = rng.normal(0.0, std_px);
    const double dy = rng.normal(0.0, std_px);
    const double sw = std::exp(rng.normal(0.0, 0.15));
    const double sh = std::exp(rng.normal(0.0, 0.15));
    const double cx = 0.5 * (gt.x1 + gt.x2) + dx;
    const double cy = 0.5 * (gt.y1 + gt.y2) + dy;
    const double w = std::max(1.5, gt.width() * sw);
    const double h = std::max(1.5, gt.height() * sh);
    metrics::Box b{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
    b.x1 = std::clamp(b.x1, 0.0, image_size - 1.0);
    b.y1 = std::clamp(b.y1, 0.0, image_size - 1.0);
    b.x2 = std::clamp(b.x2, b.x1 + 1.0, static_cast<double>(image_size));
    b.y2 = std::clamp(b.y2, b.y1 + 1.0, static_cast<double>(image_size));
    return b;
}

}  // namespace

std::vector<Proposal> sample_proposals(const Scene& scene, const ProposalConfig& cfg,
                                       int class_count, std::uint64_t seed) {
    Rng rng(seed);
    const int image_size = scene.image.dim(1);
    std::vector<Proposal> out;
    const int n_pos = std::min(static_cast<int>(scene.gt.size()), cfg.max_positives);
    for (int i = 0; i < n_pos; ++i) {
        const metrics::GtBox& gt = scene.gt[static_cast<std::size_t>(i)];
        metrics::Box box = gt.box;
        if (cfg.jitter_std > 0.0) {
            bool found = false;
            for (int attempt = 0; attempt < 20; ++attempt) {
                metrics::Box candidate = jitter_box(gt.box, cfg.jitter_std, image_size, rng);
                if (metrics::iou(candidate, gt.box) >= cfg.positive_iou) {
                    box = candidate;
                    found = true;
                    break;
                }
            }
            if (!found) box = gt.box;
        }
        out.push_back({box, gt.cls, box_deltas(box, gt.box), true});
    }
    const int n_neg = cfg.negatives_per_positive * std::max(1, n_pos);
    for (int i = 0; i < n_neg; ++i) {
        for (int attempt = 0; attempt < 50; ++attempt) {
            const double side = rng.uniform(3.0, std::min(24.0, image_size / 2.0));
            const double x0 = rng.uniform(0.0, image_size - side);
            const double y0 = rng.uniform(0.0, image_size - side);
            metrics::Box b{x0, y0, x0 + side, y0 + side};
            bool clear = true;
            for (const auto& gt : scene.gt) {
                if (metrics::iou(b, gt.box) >= cfg.negative_iou_max) {
                    clear = false;
                    break;
                }
            }
            if (clear) {
                out.push_back({b, class_count, Tensor({4}), false});
                break;
            }
        }
    }
    return out;
}

std::vector<graph::Var> toy_backbone(graph::Var image, const std::vector<graph::Var>& conv_ws,
                                     const std::vector<graph::Var>& conv_bs) {
    if (conv_ws.empty() || conv_ws.size() != conv_bs.size()) {
        throw ConfigError("toy_backbone: kernel/bias count mismatch");
    }
    const int levels = static_cast<int>(conv_ws.size());
    const int hw = image.value().dim(1);
    if (hw % (1 << (levels - 1)) != 0) {
        throw ConfigError("toy_backbone: image size " + std::to_string(hw) +
                          " is not divisible by 2^" + std::to_string(levels - 1));
    }
    std::vector<graph::Var> features;
    graph::Var x = image;
    for (int i = 0; i < levels; ++i) {
        const int stride = i == 0 ? 1 : 2;
        x = graph::gelu(graph::add_channel_bias(
            graph::conv2d(x, conv_ws[static_cast<std::size_t>(i)], stride, 1),
            conv_bs[static_cast<std::size_t>(i)]));
        features.push_back(x);
    }
    return features;
}

}  // namespace tinydet::synth
