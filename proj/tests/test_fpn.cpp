#include <doctest.h>

#include "test_util.hpp"
#include "tinydet/errors.hpp"
#include "tinydet/fpn.hpp"
#include "tinydet/ops.hpp"
#include "tinydet/rng.hpp"

using namespace tinydet;
using testutil::random_tensor;

namespace {

Tensor identity_kernel(int channels) {
    Tensor k({channels, channels, 1, 1});
    for (int c = 0; c < channels; ++c) k.at(c, c, 0, 0) = 1.0;
    return k;
}

}  // namespace

TEST_CASE("fuse_level without upper is the lateral conv") {
    Rng rng(3);
    const Tensor c = random_tensor({2, 4, 4}, rng);
    CHECK(max_abs_diff(fpn::fuse_level(c, nullptr, identity_kernel(2)), c) == 0.0);
}

TEST_CASE("fuse_level with zero upper adds nothing") {
    Rng rng(5);
    const Tensor c = random_tensor({2, 4, 4}, rng);
    const Tensor zeros({2, 2, 2});
    const Tensor k = random_tensor({2, 2, 1, 1}, rng);
    CHECK(max_abs_diff(fpn::fuse_level(c, &zeros, k), ops::conv2d(c, k, 1, 0)) == 0.0);
}

TEST_CASE("fuse_level matches elementwise conv-plus-upsample oracle") {
    Rng rng(7);
    const Tensor c = random_tensor({3, 6, 6}, rng);
    const Tensor upper = random_tensor({2, 3, 3}, rng);
    const Tensor k = random_tensor({2, 3, 1, 1}, rng);
    const Tensor fused = fpn::fuse_level(c, &upper, k);
    const Tensor conv = ops::conv2d(c, k, 1, 0);
    const Tensor up = ops::upsample_nearest_2x(upper);
    for (std::int64_t i = 0; i < fused.size(); ++i) {
        CHECK(fused[i] == doctest::Approx(conv[i] + up[i]).epsilon(1e-14));
    }
}

TEST_CASE("fuse_level rejects spatial mismatch") {
    Rng rng(9);
    const Tensor c = random_tensor({2, 6, 6}, rng);
    const Tensor upper = random_tensor({2, 2, 2}, rng);
    CHECK_THROWS_AS(fpn::fuse_level(c, &upper, identity_kernel(2)), ShapeError);
}

TEST_CASE("single-level pyramid is just the lateral conv") {
    Rng rng(11);
    fpn::FpnParams params;
    params.lateral_kernels.push_back(random_tensor({2, 3, 1, 1}, rng));
    const Tensor c = random_tensor({3, 4, 4}, rng);
    const auto pyramid = fpn::build_pyramid({c}, params);
    REQUIRE(pyramid.size() == 1);
    CHECK(max_abs_diff(pyramid[0], ops::conv2d(c, params.lateral_kernels[0], 1, 0)) == 0.0);
}

TEST_CASE("all-zero backbone gives an all-zero pyramid") {
    Rng rng(13);
    fpn::FpnParams params;
    params.lateral_kernels = {random_tensor({2, 2, 1, 1}, rng),
                              random_tensor({2, 3, 1, 1}, rng)};
    const auto pyramid = fpn::build_pyramid({Tensor({2, 4, 4}), Tensor({3, 2, 2})}, params);
    for (const Tensor& p : pyramid) {
        for (std::int64_t i = 0; i < p.size(); ++i) CHECK(p[i] == 0.0);
    }
}

TEST_CASE("three-level pyramid matches the unrolled recursion") {
    Rng rng(17);
    const std::vector<Tensor> backbone = {random_tensor({2, 8, 8}, rng),
                                          random_tensor({3, 4, 4}, rng),
                                          random_tensor({4, 2, 2}, rng)};
    fpn::FpnParams params;
    params.lateral_kernels = {random_tensor({2, 2, 1, 1}, rng),
                              random_tensor({2, 3, 1, 1}, rng),
                              random_tensor({2, 4, 1, 1}, rng)};
    const auto pyramid = fpn::build_pyramid(backbone, params);
    REQUIRE(pyramid.size() == 3);

    // Sequential reference: top level first, then fold downward.
    Tensor p2 = ops::conv2d(backbone[2], params.lateral_kernels[2], 1, 0);
    Tensor p1 = ops::conv2d(backbone[1], params.lateral_kernels[1], 1, 0);
    {
        const Tensor up = ops::upsample_nearest_2x(p2);
        for (std::int64_t i = 0; i < p1.size(); ++i) p1[i] += up[i];
    }
    Tensor p0 = ops::conv2d(backbone[0], params.lateral_kernels[0], 1, 0);
    {
        const Tensor up = ops::upsample_nearest_2x(p1);
        for (std::int64_t i = 0; i < p0.size(); ++i) p0[i] += up[i];
    }
    CHECK(max_abs_diff(pyramid[0], p0) == 0.0);
    CHECK(max_abs_diff(pyramid[1], p1) == 0.0);
    CHECK(max_abs_diff(pyramid[2], p2) == 0.0);

    // Output level i keeps the backbone level i spatial dims.
    for (std::size_t i = 0; i < backbone.size(); ++i) {
        CHECK(pyramid[i].dim(1) == backbone[i].dim(1));
        CHECK(pyramid[i].dim(2) == backbone[i].dim(2));
    }
}

TEST_CASE("pyramid is linear in the backbone for zero-bias kernels") {
    Rng rng(19);
    const std::vector<Tensor> backbone = {random_tensor({2, 4, 4}, rng),
                                          random_tensor({3, 2, 2}, rng)};
    fpn::FpnParams params;
    params.lateral_kernels = {random_tensor({2, 2, 1, 1}, rng),
                              random_tensor({2, 3, 1, 1}, rng)};
    const double alpha = 2.75;
    std::vector<Tensor> scaled = backbone;
    for (Tensor& t : scaled) {
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] *= alpha;
    }
    const auto base = fpn::build_pyramid(backbone, params);
    const auto big = fpn::build_pyramid(scaled, params);
    for (std::size_t l = 0; l < base.size(); ++l) {
        for (std::int64_t i = 0; i < base[l].size(); ++i) {
            CHECK(big[l][i] == doctest::Approx(alpha * base[l][i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("identity kernels with zero upper reproduce the lateral features") {
    Rng rng(23);
    const Tensor c0 = random_tensor({2, 4, 4}, rng);
    fpn::FpnParams params;
    params.lateral_kernels = {identity_kernel(2), random_tensor({2, 2, 1, 1}, rng)};
    const auto pyramid = fpn::build_pyramid({c0, Tensor({2, 2, 2})}, params);
    CHECK(max_abs_diff(pyramid[0], c0) == 0.0);
}

TEST_CASE("kernel arity must match level count") {
    fpn::FpnParams params;
    params.lateral_kernels = {identity_kernel(2)};
    CHECK_THROWS_AS(fpn::build_pyramid({Tensor({2, 4, 4}), Tensor({2, 2, 2})}, params),
                    ShapeError);
    CHECK_THROWS_AS(fpn::build_pyramid({}, fpn::FpnParams{}), ShapeError);
}
