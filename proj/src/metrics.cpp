#include "tinydet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "tinydet/errors.hpp"

namespace tinydet::metrics {

double Box::sqrt_area() const { return std::sqrt(area()); }

double iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni <= 0.0 ? 0.0 : inter / uni;
}

const std::vector<SizeBucket>& size_buckets() {
    static const std::vector<SizeBucket> buckets = {
        {2, 8, "vt"}, {8, 16, "t"}, {16, 32, "s"}, {32, 64, "m"}};
    return buckets;
}

namespace {

struct Flagged {
    double score;
    bool tp;
};

// Precision interpolated at 101 recall points.
double interpolated_ap(std::vector<Flagged>& marks, int n_positive) {
    if (n_positive == 0) return -1.0;
    std::stable_sort(marks.begin(), marks.end(),
                     [](const Flagged& a, const Flagged& b) { return a.score > b.score; });
    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (const Flagged& m : marks) {
        (m.tp ? tp : fp)++;
        precision.push_back(static_cast<double>(tp) / (tp + fp));
        recall.push_back(static_cast<double>(tp) / n_positive);
    }
    // Precision envelope from the right.
    for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i) {
        precision[static_cast<std::size_t>(i)] =
            std::max(precision[static_cast<std::size_t>(i)],
                     precision[static_cast<std::size_t>(i) + 1]);
    }
    double ap = 0.0;
    std::size_t j = 0;
    for (int r = 0; r <= 100; ++r) {
        const double level = r / 100.0;
        while (j < recall.size() && recall[j] < level) ++j;
        ap += j < precision.size() ? precision[j] : 0.0;
    }
    return ap / 101.0;
}

double class_ap(const std::vector<ImageDetections>& images, int cls, double iou_threshold,
                const SizeBucket* bucket, bool* has_gt) {
    std::vector<Flagged> marks;
    int n_positive = 0;
    for (const ImageDetections& im : images) {
        std::vector<int> gt_idx;
        std::vector<bool> gt_in_bucket;
        for (std::size_t i = 0; i < im.gt.size(); ++i) {
            if (im.gt[i].cls != cls) continue;
            gt_idx.push_back(static_cast<int>(i));
            const bool in = !bucket || bucket->contains(im.gt[i].box.sqrt_area());
            gt_in_bucket.push_back(in);
            if (in) ++n_positive;
        }
        std::vector<Detection> dets;
        for (const Detection& d : im.det) {
            if (d.cls == cls) dets.push_back(d);
        }
        std::stable_sort(dets.begin(), dets.end(),
                         [](const Detection& a, const Detection& b) { return a.score > b.score; });
        std::vector<bool> used(gt_idx.size(), false);
        for (const Detection& d : dets) {
            int best = -1;
            double best_iou = iou_threshold;
            for (std::size_t k = 0; k < gt_idx.size(); ++k) {
                if (used[k]) continue;
                const double v = iou(d.box, im.gt[static_cast<std::size_t>(gt_idx[k])].box);
                if (v >= best_iou) {
                    best_iou = v;
                    best = static_cast<int>(k);
                }
            }
            if (best >= 0) {
                used[static_cast<std::size_t>(best)] = true;
                if (gt_in_bucket[static_cast<std::size_t>(best)]) {
                    marks.push_back({d.score, true});
                }
                // Matches to out-of-bucket GT are ignored entirely.
            } else if (!bucket || bucket->contains(d.box.sqrt_area())) {
                marks.push_back({d.score, false});
            }
        }
    }
    *has_gt = n_positive > 0;
    return interpolated_ap(marks, n_positive);
}

}  // namespace

double average_precision(const std::vector<ImageDetections>& images, double iou_threshold,
                         const SizeBucket* bucket) {
    if (iou_threshold <= 0.0 || iou_threshold >= 1.0) {
        throw ConfigError("average_precision: IoU threshold must lie in (0,1)");
    }
    std::set<int> classes;
    for (const ImageDetections& im : images) {
        for (const GtBox& g : im.gt) classes.insert(g.cls);
    }
    double sum = 0.0;
    int counted = 0;
    for (int cls : classes) {
        bool has_gt = false;
        const double ap = class_ap(images, cls, iou_threshold, bucket, &has_gt);
        if (has_gt) {
            sum += ap;
            ++counted;
        }
    }
    return counted == 0 ? 0.0 : sum / counted;
}

double ap_5095(const std::vector<ImageDetections>& images, const SizeBucket* bucket) {
    double sum = 0.0;
    int n = 0;
    for (int t = 50; t <= 95; t += 5) {
        sum += average_precision(images, t / 100.0, bucket);
        ++n;
    }
    return sum / n;
}

Tensor build_target_feature(const std::vector<GtBox>& gt, int h, int w, double sigma) {
    Tensor target({1, h, w});
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (const GtBox& g : gt) {
        const double cx = 0.5 * (g.box.x1 + g.box.x2);
        const double cy = 0.5 * (g.box.y1 + g.box.y2);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                double& cell = target.at(0, y, x);
                cell = std::max(cell, std::exp(-d2 * inv));
            }
        }
    }
    return target;
}

Tensor build_response_feature(const std::vector<Tensor>& pyramid) {
    if (pyramid.empty()) throw ShapeError("build_response_feature: empty pyramid");
    const Tensor& bottom = pyramid.front();
    const int c = bottom.dim(0), h = bottom.dim(1), w = bottom.dim(2);
    Tensor response({1, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double mx = bottom.at(0, y, x);
            for (int ch = 1; ch < c; ++ch) mx = std::max(mx, bottom.at(ch, y, x));
            response.at(0, y, x) = mx;
        }
    }
    double lo = response[0], hi = response[0];
    for (std::int64_t i = 1; i < response.size(); ++i) {
        lo = std::min(lo, response[i]);
        hi = std::max(hi, response[i]);
    }
    if (hi - lo <= 0.0) {
        response.fill(0.0);
        return response;
    }
    const double inv = 1.0 / (hi - lo);
    for (std::int64_t i = 0; i < response.size(); ++i) response[i] = (response[i] - lo) * inv;
    return response;
}

double psnr(const Tensor& target, const Tensor& response) {
    require_same_shape(target, response, "psnr");
    double mse = 0.0;
    for (std::int64_t i = 0; i < target.size(); ++i) {
        const double d = target[i] - response[i];
        mse += d * d;
    }
    mse /= static_cast<double>(target.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double psnr_ave(const std::vector<double>& values) {
    double sum = 0.0;
    int n = 0;
    for (double v : values) {
        if (std::isfinite(v)) {
            sum += v;
            ++n;
        }
    }
    if (n == 0) throw NumericError("psnr_ave: no finite PSNR entries to average");
    return sum / n;
}

}  // namespace tinydet::metrics
