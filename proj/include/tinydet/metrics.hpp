#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tinydet/tensor.hpp"

namespace tinydet::metrics {

struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    double sqrt_area() const;
};

double iou(const Box& a, const Box& b);

struct GtBox {
    Box box;
    int cls = 0;
};

struct Detection {
    Box box;
    int cls = 0;
    double score = 0.0;
};

struct ImageDetections {
    int image_id = 0;
    std::vector<GtBox> gt;
    std::vector<Detection> det;
};

// AI-TOD style buckets on sqrt(box area).
struct SizeBucket {
    double lo = 0, hi = 0;
    std::string name;
    bool contains(double sqrt_area) const { return sqrt_area > lo && sqrt_area <= hi; }
};

const std::vector<SizeBucket>& size_buckets();  // vt, t, s, m

// 101-point interpolated AP at one IoU threshold, averaged over classes that
// have ground truth (in the bucket, when given). Greedy confidence-descending
// matching; each GT matched at most once; detections matching out-of-bucket
// GT are ignored, unmatched out-of-bucket detections are ignored.
double average_precision(const std::vector<ImageDetections>& images, double iou_threshold,
                         const SizeBucket* bucket = nullptr);

// Mean over IoU thresholds 0.50:0.05:0.95.
double ap_5095(const std::vector<ImageDetections>& images, const SizeBucket* bucket = nullptr);

// Gaussian map with peak 1 at each ground-truth center; overlaps combine by
// pointwise max so the target stays in [0,1].
Tensor build_target_feature(const std::vector<GtBox>& gt, int h, int w, double sigma = 4.0);

// Channel-wise max of the bottom pyramid level, min-max normalized to [0,1];
// a constant map normalizes to all zeros.
Tensor build_response_feature(const std::vector<Tensor>& pyramid);

// 10*log10(1/MSE) with unit peak; identical inputs give the +inf sentinel.
double psnr(const Tensor& target, const Tensor& response);

// Mean of the finite entries; throws NumericError when none are finite.
double psnr_ave(const std::vector<double>& values);

}  // namespace tinydet::metrics
