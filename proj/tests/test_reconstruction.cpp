#include <doctest.h>

#include <limits>

#include "gradcheck.hpp"
#include "monoflow/reconstruction.hpp"

using namespace monoflow;
using namespace monoflow::nn;
using namespace monoflow::recon;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

Tensor rand_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t({3, h, w});
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data[i] = rng.uniform();
    return t;
}
}  // namespace

TEST_CASE("ssim of an image with itself is 1 everywhere") {
    Tensor img = rand_image(6, 9, 2);
    NodePtr s = ssim(constant(img), constant(img));
    CHECK((s->value.data - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("ssim is symmetric") {
    Tensor a = rand_image(5, 7, 3), b = rand_image(5, 7, 4);
    NodePtr s1 = ssim(constant(a), constant(b));
    NodePtr s2 = ssim(constant(b), constant(a));
    CHECK((s1->value.data - s2->value.data).abs().maxCoeff() < 1e-12);
}

TEST_CASE("ssim of constant images matches the closed form") {
    // a=0.2, b=0.4: ((2*0.2*0.4 + 1e-4)(0 + 9e-4)) / ((0.04+0.16+1e-4)(0+9e-4))
    Tensor a({3, 4, 5}, 0.2), b({3, 4, 5}, 0.4);
    const double expect = (2 * 0.2 * 0.4 + 1e-4) * (9e-4) / ((0.04 + 0.16 + 1e-4) * (9e-4));
    NodePtr s = ssim(constant(a), constant(b));
    CHECK((s->value.data - expect).abs().maxCoeff() < 1e-12);
}

TEST_CASE("photometric loss basics") {
    Tensor img = rand_image(4, 6, 5);
    SUBCASE("identical reconstruction gives zero") {
        auto ph = photometric_loss(constant(img), constant(img), 0.85);
        CHECK(std::abs(scalar_of(ph.scalar)) < 1e-12);
        CHECK(ph.map->value.data.abs().maxCoeff() < 1e-12);
    }
    SUBCASE("alpha=0 reduces to L1") {
        Tensor a({3, 4, 6}, 0.2), b({3, 4, 6}, 0.4);
        auto ph = photometric_loss(constant(a), constant(b), 0.0);
        CHECK(scalar_of(ph.scalar) == doctest::Approx(0.2).epsilon(1e-12));
    }
    SUBCASE("alpha outside [0,1] rejected") {
        CHECK_THROWS_AS(photometric_loss(constant(img), constant(img), 1.5), ConfigError);
    }
}

TEST_CASE("photometric loss bounds for images in [0,1]") {
    const double alpha = 0.85;
    for (std::uint64_t s = 0; s < 5; ++s) {
        Tensor a = rand_image(5, 8, 10 + s), b = rand_image(5, 8, 20 + s);
        auto ph = photometric_loss(constant(a), constant(b), alpha);
        CHECK(ph.map->value.data.minCoeff() >= 0.0);
        CHECK(ph.map->value.data.maxCoeff() <= alpha + (1 - alpha) + 1e-12);
    }
}

TEST_CASE("min_reprojection") {
    Tensor a({1, 3, 4}, 0.5), b({1, 3, 4}, 0.7);
    SUBCASE("identical maps return the same map") {
        NodePtr m = min_reprojection(constant(a), constant(a));
        CHECK((m->value.data - a.data).abs().maxCoeff() == 0.0);
    }
    SUBCASE("all-infinite map yields the other") {
        Tensor inf_map({1, 3, 4}, kInf);
        NodePtr m = min_reprojection(constant(inf_map), constant(b));
        CHECK((m->value.data - b.data).abs().maxCoeff() == 0.0);
    }
    SUBCASE("pointwise min is below both inputs") {
        Rng rng(9);
        Tensor x({1, 5, 5}), y({1, 5, 5});
        for (int i = 0; i < 25; ++i) {
            x.data[i] = rng.uniform();
            y.data[i] = rng.uniform();
        }
        NodePtr m = min_reprojection(constant(x), constant(y));
        CHECK((m->value.data <= x.data).all());
        CHECK((m->value.data <= y.data).all());
    }
}

TEST_CASE("auto_mask drops ties and is binary") {
    Tensor warped({1, 2, 3});
    Tensor identity({1, 2, 3});
    warped.data << 0.1, 0.5, 0.2, 0.3, 0.3, 0.9;
    identity.data << 0.2, 0.5, 0.1, 0.3, 0.4, 1.0;
    Tensor keep = auto_mask(warped, identity);
    // strict inequality: ties at index 1 and 3 are dropped
    CHECK(keep.data[0] == 1.0);
    CHECK(keep.data[1] == 0.0);
    CHECK(keep.data[2] == 0.0);
    CHECK(keep.data[3] == 0.0);
    CHECK(keep.data[4] == 1.0);
    CHECK(keep.data[5] == 1.0);
    for (int i = 0; i < 6; ++i) CHECK((keep.data[i] == 0.0 || keep.data[i] == 1.0));
}

TEST_CASE("auto_mask with identical source drops everything") {
    // I_s == I_t: identity error is 0, warped error can only tie or lose
    Tensor img = rand_image(4, 6, 33);
    auto id_err = photometric_loss(constant(img), constant(img), 0.85);
    Tensor warped_err({1, 4, 6}, 0.01);
    Tensor keep = auto_mask(warped_err, id_err.map->value);
    CHECK(keep.data.maxCoeff() == 0.0);
}

TEST_CASE("warp with integer-shift flow reproduces a shifted image") {
    const int H = 8, W = 12;
    Tensor src = rand_image(H, W, 7);
    const double fx = 20, fy = 20, cx = 5.5, cy = 3.5, z = 4.0;
    // sample source at (x+1, y): P maps to pixel (x+1, y)
    Tensor pts({3, H, W});
    const auto hw = static_cast<std::int64_t>(H) * W;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const std::int64_t i = static_cast<std::int64_t>(y) * W + x;
            pts.data[i] = (x + 1 - cx) / fx * z;
            pts.data[hw + i] = (y - cy) / fy * z;
            pts.data[2 * hw + i] = z;
        }
    geom::CameraIntrinsics K{fx, fy, cx, cy, W, H};
    auto out = warp(src, constant(pts), K);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x + 1 < W; ++x)
                CHECK(std::abs(out.image->value.data[out.image->value.at3(c, y, x)] -
                               src.data[src.at3(c, y, x + 1)]) < 1e-9);
    // rightmost column projects out of bounds
    for (int y = 0; y < H; ++y) CHECK(out.valid.data[static_cast<std::int64_t>(y) * W + W - 1] == 0.0);
}

TEST_CASE("gradient routing through the Eq.6 composition") {
    const int H = 6, W = 8;
    Rng rng(11);
    Tensor src = rand_image(H, W, 12);
    Tensor tgt = rand_image(H, W, 13);
    geom::CameraIntrinsics K{15, 15, 3.5, 2.5, W, H};

    Tensor fr({3, H, W}), fc({3, H, W}), pt({3, H, W});
    const auto hw = static_cast<std::int64_t>(H) * W;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const std::int64_t i = static_cast<std::int64_t>(y) * W + x;
            const double z = rng.uniform(3.0, 6.0);
            pt.data[i] = (x - K.cx) / K.fx * z;
            pt.data[hw + i] = (y - K.cy) / K.fy * z;
            pt.data[2 * hw + i] = z;
            for (int c = 0; c < 3; ++c) {
                fr.data[c * hw + i] = 0.05 * rng.normal();
                fc.data[c * hw + i] = 0.05 * rng.normal();
            }
        }

    auto recon_loss = [&](const Tensor& fr_t, const Tensor& fc_t, double mval,
                          NodePtr* grad_fr, NodePtr* grad_fc) {
        NodePtr frn = leaf(fr_t), fcn = leaf(fc_t);
        Tensor m({1, H, W}, mval);
        NodePtr indep = mul_bc(sub(fcn, frn), constant(m));
        NodePtr phat = add(add(frn, indep), constant(pt));
        auto out = warp(src, phat, K);
        auto ph = photometric_loss(constant(tgt), out.image, 0.85);
        backward(ph.scalar);
        *grad_fr = frn;
        *grad_fc = fcn;
        return scalar_of(ph.scalar);
    };

    SUBCASE("M=1: derivative w.r.t. F_R is zero") {
        NodePtr gfr, gfc;
        recon_loss(fr, fc, 1.0, &gfr, &gfc);
        CHECK(gfr->grad.data.abs().maxCoeff() < 1e-10);
        CHECK(gfc->grad.data.abs().maxCoeff() > 0.0);
        // finite differences agree: perturb one F_R entry
        Tensor fr2 = fr;
        fr2.data[hw + 5] += 1e-5;
        NodePtr a, b;
        const double l0 = recon_loss(fr, fc, 1.0, &a, &b);
        const double l1 = recon_loss(fr2, fc, 1.0, &a, &b);
        CHECK(std::abs(l1 - l0) / 1e-5 < 1e-10);
    }
    SUBCASE("M=0: derivative w.r.t. F_C is zero") {
        NodePtr gfr, gfc;
        recon_loss(fr, fc, 0.0, &gfr, &gfc);
        CHECK(gfc->grad.data.abs().maxCoeff() < 1e-10);
        CHECK(gfr->grad.data.abs().maxCoeff() > 0.0);
    }
}

TEST_CASE("warp gradient through photometric loss matches finite differences") {
    const int H = 5, W = 7;
    Tensor src = rand_image(H, W, 21);
    Tensor tgt = rand_image(H, W, 22);
    geom::CameraIntrinsics K{12, 12, 3.2, 2.2, W, H};
    Rng rng(23);
    Tensor pts({3, H, W});
    const auto hw = static_cast<std::int64_t>(H) * W;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const std::int64_t i = static_cast<std::int64_t>(y) * W + x;
            const double z = rng.uniform(2.5, 5.0);
            const double u = rng.uniform(1.2, W - 2.2), v = rng.uniform(1.2, H - 2.2);
            pts.data[i] = (u - K.cx) / K.fx * z;
            pts.data[hw + i] = (v - K.cy) / K.fy * z;
            pts.data[2 * hw + i] = z;
        }
    auto res = gradcheck::check(pts, [&](NodePtr p) {
        auto out = warp(src, p, K);
        return photometric_loss(constant(tgt), out.image, 0.85).scalar;
    }, 16, 1e-6);
    CHECK(res.max_rel_err < 1e-4);
}
