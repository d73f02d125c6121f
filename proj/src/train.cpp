#include "tinydet/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tinydet/errors.hpp"
#include "tinydet/graph.hpp"
#include "tinydet/rng.hpp"

namespace tinydet::train {

namespace {

void check_finite(double v, const char* component, int epoch, int batch) {
    if (!std::isfinite(v)) {
        throw NumericError(std::string(component) + " loss is not finite at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(batch));
    }
}

}  // namespace

std::vector<BatchRecord> train_model(model::Model& m, const std::vector<synth::Scene>& scenes,
                                     const config::RunConfig& cfg, optim::SgdState& state,
                                     const EpochCallback& on_epoch) {
    if (scenes.empty()) throw ConfigError("train_model: empty dataset");
    std::vector<BatchRecord> records;
    int step = 0;
    bool stop = false;
    for (int epoch = 0; epoch < cfg.train.epochs && !stop; ++epoch) {
        std::vector<int> order(scenes.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(cfg.train.seed, 0x50c1a1 + static_cast<std::uint64_t>(epoch)));
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
            const int j = static_cast<int>(shuffle_rng.below(static_cast<std::uint64_t>(i + 1)));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }
        std::vector<BatchRecord> epoch_records;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.train.batch_size)) {
            if (cfg.train.max_steps > 0 && step >= cfg.train.max_steps) {
                stop = true;
                break;
            }
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.train.batch_size));
            std::vector<synth::Scene> batch;
            std::vector<std::vector<synth::Proposal>> proposals;
            for (std::size_t k = start; k < end; ++k) {
                const int idx = order[k];
                batch.push_back(scenes[static_cast<std::size_t>(idx)]);
                proposals.push_back(synth::sample_proposals(
                    scenes[static_cast<std::size_t>(idx)], cfg.proposals,
                    cfg.scene.class_count,
                    derive_seed(cfg.train.seed,
                                0x9a0b0c + static_cast<std::uint64_t>(epoch) * 1000003 +
                                    static_cast<std::uint64_t>(idx))));
            }
            model::BoundParams bound(m.params(), true);
            model::ForwardOptions opts;
            opts.unfold_seed = derive_seed(cfg.train.seed, 0xf01d + static_cast<std::uint64_t>(step));
            model::TrainForwardResult fwd =
                m.forward_train(batch, proposals, cfg.loss, bound, opts);
            const int batch_index = static_cast<int>(start / cfg.train.batch_size);
            check_finite(fwd.ce, "cross-entropy", epoch, batch_index);
            check_finite(fwd.sl1, "smooth-l1", epoch, batch_index);
            check_finite(fwd.geo, "geometric contrastive", epoch, batch_index);
            check_finite(fwd.sem, "semantic contrastive", epoch, batch_index);
            graph::backward(fwd.total);
            for (int slot = 0; slot < m.params().count(); ++slot) {
                state.step(slot, m.params().value(slot), bound.grad_of(slot));
            }
            BatchRecord rec;
            rec.epoch = epoch;
            rec.batch = batch_index;
            rec.ce = fwd.ce;
            rec.sl1 = fwd.sl1;
            rec.geo = fwd.geo;
            rec.sem = fwd.sem;
            rec.total = fwd.total.scalar_value();
            check_finite(rec.total, "total", epoch, batch_index);
            records.push_back(rec);
            epoch_records.push_back(rec);
            ++step;
        }
        if (on_epoch && !stop && !on_epoch(epoch, epoch_records)) stop = true;
    }
    return records;
}

std::vector<metrics::ImageDetections> evaluate_detections(
    model::Model& m, const std::vector<synth::Scene>& scenes,
    const synth::ProposalConfig& proposals, std::uint64_t eval_seed) {
    std::vector<metrics::ImageDetections> out;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const synth::Scene& scene = scenes[i];
        std::vector<synth::Proposal> props = synth::sample_proposals(
            scene, proposals, m.config().class_count,
            derive_seed(eval_seed, 0xe7a1 + static_cast<std::uint64_t>(i)));
        std::vector<metrics::Box> boxes;
        for (const auto& p : props) boxes.push_back(p.box);
        metrics::ImageDetections im;
        im.image_id = static_cast<int>(i);
        im.gt = scene.gt;
        im.det = m.detect(scene.image, boxes,
                          derive_seed(eval_seed, 0xdef0u + static_cast<std::uint64_t>(i)));
        out.push_back(std::move(im));
    }
    return out;
}

std::map<std::string, double> EvalSummary::as_map() const {
    return {{"ap50", ap50},     {"ap75", ap75},     {"ap5095", ap5095},
            {"ap50_vt", ap50_vt}, {"ap50_t", ap50_t}, {"ap50_s", ap50_s},
            {"ap50_m", ap50_m}, {"psnr_ave", psnr_ave}};
}

EvalSummary summarize(model::Model& m, const std::vector<synth::Scene>& scenes,
                      const synth::ProposalConfig& proposals, std::uint64_t eval_seed) {
    std::vector<metrics::ImageDetections> dets =
        evaluate_detections(m, scenes, proposals, eval_seed);
    EvalSummary s;
    s.ap50 = metrics::average_precision(dets, 0.5);
    s.ap75 = metrics::average_precision(dets, 0.75);
    s.ap5095 = metrics::ap_5095(dets);
    const auto& buckets = metrics::size_buckets();
    s.ap50_vt = metrics::average_precision(dets, 0.5, &buckets[0]);
    s.ap50_t = metrics::average_precision(dets, 0.5, &buckets[1]);
    s.ap50_s = metrics::average_precision(dets, 0.5, &buckets[2]);
    s.ap50_m = metrics::average_precision(dets, 0.5, &buckets[3]);
    s.psnr_ave = metrics::psnr_ave(psnr_per_image(m, scenes));
    return s;
}

std::vector<double> psnr_per_image(model::Model& m, const std::vector<synth::Scene>& scenes) {
    std::vector<double> out;
    for (const synth::Scene& scene : scenes) {
        const std::vector<Tensor> pyramid = m.pyramid_features(scene.image);
        const Tensor target = metrics::build_target_feature(scene.gt, scene.image.dim(1),
                                                            scene.image.dim(2));
        const Tensor response = metrics::build_response_feature(pyramid);
        out.push_back(metrics::psnr(target, response));
    }
    return out;
}

}  // namespace tinydet::train
