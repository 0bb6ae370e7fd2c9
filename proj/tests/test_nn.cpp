#include <doctest.h>

#include "gradcheck.hpp"
#include "monoflow/geometry.hpp"
#include "monoflow/nn/graph.hpp"
#include "monoflow/nn/layers.hpp"

using namespace monoflow;
using namespace monoflow::nn;
using gradcheck::check;
using gradcheck::random_tensor;

TEST_CASE("elementwise chain gradients") {
    Rng rng(1);
    Tensor x = random_tensor({2, 4, 5}, rng);
    auto res = check(x, [](NodePtr a) {
        return mean(mul(sigmoid(a), elu(add_scalar(mul_scalar(a, 1.7), 0.2))));
    });
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("exp/log/sqrt/reciprocal gradients") {
    Rng rng(2);
    Tensor x = random_tensor({1, 3, 4}, rng, 0.5, 2.0);
    auto res = check(x, [](NodePtr a) {
        return mean(add(log_(a), mul(sqrt_(a), reciprocal(add_scalar(a, 3.0)))));
    });
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("abs/relu/clamp gradients away from kinks") {
    Rng rng(3);
    Tensor x = random_tensor({1, 4, 4}, rng, 0.2, 0.8);
    auto res = check(x, [](NodePtr a) {
        return mean(add(abs_(add_scalar(a, 1.0)), add(relu(a), clamp(a, 0.0, 0.6))));
    });
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("div and div_by_scalar_node gradients") {
    Rng rng(4);
    Tensor x = random_tensor({2, 3, 3}, rng, 0.5, 1.5);
    auto res = check(x, [](NodePtr a) {
        NodePtr num = mul_scalar(a, 2.0);
        NodePtr den = add_scalar(a, 2.0);
        NodePtr d = div(num, den);
        return mean(div_by_scalar_node(d, mean(a)));
    });
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("reductions and broadcast gradients") {
    Rng rng(5);
    Tensor x = random_tensor({3, 4, 6}, rng);
    auto res = check(x, [](NodePtr a) {
        NodePtr m = mean_channels(a);
        NodePtr s = spatial_mean(mul_bc(a, m));
        return sum(mul(s, s));
    });
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("concat/slice/diff gradients") {
    Rng rng(6);
    Tensor x = random_tensor({2, 4, 5}, rng);
    auto res = check(x, [](NodePtr a) {
        NodePtr c = concat_ch(a, mul_scalar(a, 0.5));
        NodePtr s = slice_ch(c, 1, 3);
        return add(mean(abs_(diff_x(s))), mean(abs_(diff_y(s))));
    });
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("min_elem and masked_fill/mean_finite gradients") {
    Rng rng(7);
    Tensor x = random_tensor({1, 4, 4}, rng, 0.0, 1.0);
    Tensor mask({1, 4, 4});
    for (int i = 0; i < 16; ++i) mask.data[i] = (i % 3 == 0) ? 0.0 : 1.0;
    auto res = check(x, [mask](NodePtr a) {
        NodePtr b = add_scalar(mul_scalar(a, -1.0), 0.9);
        NodePtr m = min_elem(a, b);
        return mean_finite(masked_fill(m, mask, std::numeric_limits<double>::infinity()));
    });
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("conv2d gradients, stride 1 and 2") {
    Rng rng(8);
    for (int stride : {1, 2}) {
        Tensor x = random_tensor({2, 6, 8}, rng);
        Tensor w = random_tensor({3, 2 * 9}, rng, -0.5, 0.5);
        Tensor b = random_tensor({3}, rng, -0.1, 0.1);

        auto rx = check(x, [&](NodePtr a) {
            return mean(mul(conv2d(a, constant(w), constant(b), 3, stride, 1),
                            conv2d(a, constant(w), constant(b), 3, stride, 1)));
        });
        CHECK(rx.max_rel_err < 1e-6);

        auto rw = check(w, [&](NodePtr wn) {
            return mean(abs_(conv2d(constant(x), wn, constant(b), 3, stride, 1)));
        });
        CHECK(rw.max_rel_err < 1e-5);

        auto rb = check(b, [&](NodePtr bn) {
            NodePtr y = conv2d(constant(x), constant(w), bn, 3, stride, 1);
            return mean(mul(y, y));
        });
        CHECK(rb.max_rel_err < 1e-6);
    }
}

TEST_CASE("conv2d 1x1 gradients") {
    Rng rng(9);
    Tensor x = random_tensor({3, 4, 4}, rng);
    Tensor w = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({2}, rng);
    auto res = check(x, [&](NodePtr a) {
        NodePtr y = conv2d(a, constant(w), constant(b), 1, 1, 0);
        return mean(mul(y, y));
    });
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("upsample2x and avgpool3x3 gradients") {
    Rng rng(10);
    Tensor x = random_tensor({2, 3, 4}, rng);
    auto res = check(x, [](NodePtr a) {
        return mean(mul(avgpool3x3_reflect(upsample2x(a)), upsample2x(a)));
    });
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("so3_exp_node gradient matches finite differences") {
    Rng rng(11);
    for (double scale : {1e-8, 1e-4, 0.3, 2.0}) {
        Tensor w({3});
        for (int i = 0; i < 3; ++i) w.data[i] = scale * rng.normal();
        Tensor probe = random_tensor({9}, rng);
        auto res = check(w, [&](NodePtr a) {
            return sum(mul(so3_exp_node(a), constant(probe)));
        }, 3, 1e-7);
        CHECK(res.max_rel_err < 1e-5);
    }
}

TEST_CASE("backproject/rigid_transform gradients") {
    Rng rng(12);
    Tensor d = random_tensor({1, 3, 4}, rng, 2.0, 10.0);
    Tensor rot({9});
    {
        auto r = geom::so3_exp({0.02, -0.01, 0.05});
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) rot.data[3 * i + j] = r(i, j);
    }
    Tensor tr({3});
    tr.data << 0.1, -0.2, 0.4;

    auto rd = check(d, [&](NodePtr dn) {
        NodePtr p = backproject_node(dn, 50, 50, 2, 1.5);
        NodePtr f = rigid_transform(p, constant(rot), constant(tr));
        return mean(mul(f, f));
    });
    CHECK(rd.max_rel_err < 1e-6);

    auto rr = check(rot, [&](NodePtr rn) {
        NodePtr p = backproject_node(constant(d), 50, 50, 2, 1.5);
        NodePtr f = rigid_transform(p, rn, constant(tr));
        return mean(abs_(f));
    });
    CHECK(rr.max_rel_err < 1e-5);

    auto rt = check(tr, [&](NodePtr tn) {
        NodePtr p = backproject_node(constant(d), 50, 50, 2, 1.5);
        NodePtr f = rigid_transform(p, constant(rot), tn);
        return mean(mul(f, f));
    });
    CHECK(rt.max_rel_err < 1e-6);
}

TEST_CASE("warp_bilinear gradient w.r.t. warp points") {
    Rng rng(13);
    const int H = 6, W = 8;
    Tensor src = random_tensor({3, H, W}, rng, 0.0, 1.0);
    // warp points distributed over the interior, away from integer coords
    Tensor pts({3, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const auto i = static_cast<std::int64_t>(y) * W + x;
            const double z = rng.uniform(2.0, 6.0);
            const double u = rng.uniform(1.3, W - 2.3);
            const double v = rng.uniform(1.3, H - 2.3);
            // invert the projection so the sample lands at (u, v)
            pts.data[i] = (u - 3.5) / 20.0 * z;
            pts.data[static_cast<std::int64_t>(H) * W + i] = (v - 2.5) / 20.0 * z;
            pts.data[2 * static_cast<std::int64_t>(H) * W + i] = z;
        }
    auto res = check(pts, [&](NodePtr p) {
        auto out = warp_bilinear(src, p, 20, 20, 3.5, 2.5);
        return mean(mul(out.image, out.image));
    }, 20, 1e-6);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("warp exactness at integer alignment") {
    Rng rng(14);
    const int H = 5, W = 7;
    Tensor src = random_tensor({3, H, W}, rng, 0.0, 1.0);
    Tensor pts({3, H, W});
    // zero flow: every pixel projects exactly onto itself
    const double fx = 10, fy = 10, cx = 3, cy = 2;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const auto i = static_cast<std::int64_t>(y) * W + x;
            const double z = 4.0;
            pts.data[i] = (x - cx) / fx * z;
            pts.data[static_cast<std::int64_t>(H) * W + i] = (y - cy) / fy * z;
            pts.data[2 * static_cast<std::int64_t>(H) * W + i] = z;
        }
    auto out = warp_bilinear(src, constant(pts), fx, fy, cx, cy);
    CHECK((out.image->value.data - src.data).abs().maxCoeff() < 1e-12);
    CHECK(out.valid.data.minCoeff() == 1.0);
}

TEST_CASE("warp marks behind-camera points invalid") {
    Tensor src({3, 4, 4}, 0.5);
    Tensor pts({3, 4, 4});
    pts.data.segment(32, 16).setConstant(-1.0);  // z = -1
    auto out = warp_bilinear(src, constant(pts), 10, 10, 2, 2);
    CHECK(out.valid.data.maxCoeff() == 0.0);
    CHECK(out.image->value.data.abs().maxCoeff() == 0.0);
}

TEST_CASE("adam moves parameters and respects missing grads") {
    Tensor p({4}, 1.0);
    Tensor g({4}, 0.5);
    Adam opt(0.1);
    opt.step({{&p, &g}});
    CHECK(p.data[0] < 1.0);
    const double after_first = p.data[0];
    opt.step({{&p, nullptr}});
    CHECK(p.data[0] == after_first);
}

TEST_CASE("backward accumulates through shared leaves") {
    // the same leaf used twice must receive both contributions
    Tensor x = Tensor::scalar(3.0);
    auto xl = leaf(x);
    NodePtr y = add(mul(xl, xl), mul_scalar(xl, 2.0));  // x^2 + 2x, d/dx = 2x+2 = 8
    backward(y);
    CHECK(xl->grad.data[0] == doctest::Approx(8.0).epsilon(1e-12));
}
