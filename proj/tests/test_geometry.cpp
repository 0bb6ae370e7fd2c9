#include <doctest.h>

#include "monoflow/geometry.hpp"

using namespace monoflow;
using namespace monoflow::geom;

namespace {
CameraIntrinsics make_k(double fx = 100, double fy = 100, double cx = 96, double cy = 32,
                        int w = 192, int h = 64) {
    return {fx, fy, cx, cy, w, h};
}
}  // namespace

TEST_CASE("backproject principal ray and hand substitution") {
    auto K = make_k();
    Vec3 p = backproject({K.cx, K.cy}, 5.0, K);
    CHECK(p.isApprox(Vec3(0, 0, 5), 1e-15));

    // fx=fy=100, cx=96, cy=32, p=(196,32), d=10 -> (10,0,10)
    Vec3 q = backproject({196, 32}, 10.0, K);
    CHECK(q.isApprox(Vec3(10, 0, 10), 1e-15));

    CHECK_THROWS_AS(backproject({10, 10}, 0.0, K), ConfigError);
    CHECK_THROWS_AS(backproject({10, 10}, -1.0, K), ConfigError);
}

TEST_CASE("project basics") {
    auto K = make_k();
    Vec2 p = project({0, 0, 7}, K);
    CHECK(p.x() == doctest::Approx(K.cx).epsilon(1e-12));
    CHECK(p.y() == doctest::Approx(K.cy).epsilon(1e-12));

    CHECK(project({10, 0, 10}, K).x() == doctest::Approx(196.0).epsilon(1e-12));
    CHECK_THROWS_AS(project({0, 0, 0}, K), ConfigError);
    CHECK_THROWS_AS(project({0, 0, -3}, K), ConfigError);
}

TEST_CASE("projection round trip < 1e-9") {
    auto K = make_k(110, 95, 80.5, 30.5);
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        Vec2 p(rng.uniform(0, K.width - 1), rng.uniform(0, K.height - 1));
        const double d = rng.uniform(0.3, 80.0);
        Vec3 P = backproject(p, d, K);
        CHECK(P.z() == doctest::Approx(d).epsilon(1e-14));
        Vec2 q = project(P, K);
        CHECK(std::abs(q.x() - p.x()) < 1e-9);
        CHECK(std::abs(q.y() - p.y()) < 1e-9);
    }
}

TEST_CASE("rigid_flow identity pose is exactly zero") {
    auto K = make_k();
    DepthMap d(8, 6, 3.0);
    d.values(2, 3) = 17.0;
    FlowField3 f = rigid_flow(d, PoseSE3::identity(), K);
    for (int c = 0; c < 3; ++c) CHECK(f.ch[c].abs().maxCoeff() == 0.0);
}

TEST_CASE("rigid_flow pure translation equals t at every pixel") {
    auto K = make_k();
    DepthMap d(8, 6, 1.0);
    Rng rng(3);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 8; ++x) d.values(y, x) = rng.uniform(0.5, 50.0);
    PoseSE3 T;
    T.translation = Vec3(0.3, -0.2, 1.5);
    FlowField3 f = rigid_flow(d, T, K);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 8; ++x) CHECK((f.at(x, y) - T.translation).norm() < 1e-12);
}

TEST_CASE("rigid_flow forward translation matches the epipolar closed form") {
    // small forward step so the discrete flow approximates the instantaneous one
    auto K = make_k();
    const double dz = 1e-6;  // camera advance; Zdot = -dz
    PoseSE3 T;
    T.translation = Vec3(0, 0, -dz);

    DepthMap d(K.width, K.height, 1.0);
    Rng rng(11);
    for (int y = 0; y < K.height; ++y)
        for (int x = 0; x < K.width; ++x) d.values(y, x) = rng.uniform(5.0, 40.0);
    FlowField3 f = rigid_flow(d, T, K);

    double max_rel = 0.0;
    for (int i = 0; i < 100; ++i) {
        const int x = static_cast<int>(rng.uniform_index(K.width));
        const int y = static_cast<int>(rng.uniform_index(K.height));
        if (x == static_cast<int>(K.cx) && y == static_cast<int>(K.cy)) continue;
        const double depth = d.at(x, y);
        const Vec3 p0 = backproject({double(x), double(y)}, depth, K);
        const Vec3 p1 = p0 + f.at(x, y);
        const Vec2 flow_px = project(p1, K) - project(p0, K);

        const double xn = (x - K.cx) / K.fx;
        const double yn = (y - K.cy) / K.fy;
        const Vec2 oracle(K.fx * epipolar_flow(xn, depth, -dz),
                          K.fy * epipolar_flow(yn, depth, -dz));
        const double denom = std::max(oracle.norm(), 1e-300);
        if (oracle.norm() > 0) max_rel = std::max(max_rel, (flow_px - oracle).norm() / denom);
    }
    CHECK(max_rel < 1e-6);
}

TEST_CASE("compose_flows limits and arithmetic") {
    auto K = make_k();
    const int W = 4, H = 3;
    DepthMap d(W, H, 10.0);
    FlowField3 fr(W, H), fc(W, H);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            fr.set(x, y, {0, 0, 1});
            fc.set(x, y, {0, 0, 3});
        }

    SUBCASE("M == 0") {
        MotionMask m(W, H, 0.0);
        auto out = compose_flows(fr, fc, m, d, K);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                CHECK(out.independent.at(x, y).norm() == 0.0);
                const Vec3 pt = backproject({double(x), double(y)}, 10.0, K);
                CHECK((out.warp_points.at(x, y) - (fr.at(x, y) + pt)).norm() == 0.0);
            }
    }
    SUBCASE("M == 1") {
        MotionMask m(W, H, 1.0);
        auto out = compose_flows(fr, fc, m, d, K);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const Vec3 pt = backproject({double(x), double(y)}, 10.0, K);
                CHECK((out.warp_points.at(x, y) - (fc.at(x, y) + pt)).norm() == 0.0);
            }
    }
    SUBCASE("M == 0.5 arithmetic at the principal point") {
        MotionMask m(W, H, 0.5);
        CameraIntrinsics K2 = make_k(100, 100, 2, 1, W, H);
        auto out = compose_flows(fr, fc, m, d, K2);
        // P_t = (0,0,10) at the principal point
        CHECK((out.warp_points.at(2, 1) - Vec3(0, 0, 12)).norm() < 1e-12);
        CHECK((out.independent.at(2, 1) - Vec3(0, 0, 1)).norm() < 1e-12);
    }
}

TEST_CASE("compose_flows is affine in M") {
    auto K = make_k();
    const int W = 6, H = 5;
    Rng rng(23);
    DepthMap d(W, H, 1.0);
    FlowField3 fr(W, H), fc(W, H);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            d.values(y, x) = rng.uniform(1.0, 30.0);
            fr.set(x, y, {rng.normal(), rng.normal(), rng.normal()});
            fc.set(x, y, {rng.normal(), rng.normal(), rng.normal()});
        }
    MotionMask m0(W, H, 0.0);
    auto base = compose_flows(fr, fc, m0, d, K);
    for (double mv : {0.25, 0.5, 0.75, 1.0}) {
        MotionMask m(W, H, mv);
        auto out = compose_flows(fr, fc, m, d, K);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const Vec3 expect = base.warp_points.at(x, y) + mv * (fc.at(x, y) - fr.at(x, y));
                CHECK((out.warp_points.at(x, y) - expect).norm() < 1e-12);
            }
    }
}

TEST_CASE("epipolar_flow substitution and invariances") {
    CHECK(epipolar_flow(0.5, 10.0, -1.0) == doctest::Approx(0.05).epsilon(1e-14));
    CHECK(epipolar_flow(0.0, 3.0, -2.0) == 0.0);
    CHECK(epipolar_flow(0.7, 4.0, -0.8) ==
          doctest::Approx(epipolar_flow(0.7, 8.0, -1.6)).epsilon(1e-14));
    CHECK_THROWS_AS(epipolar_flow(0.5, 0.0, -1.0), ConfigError);
}

TEST_CASE("ambiguity_family members reproduce the observed flow") {
    const double x = 0.5, flow = 0.05, ego = -1.0;
    auto fam = ambiguity_family(x, flow, ego, 64, 1.0, 100.0);
    REQUIRE(fam.size() == 64);
    for (const auto& s : fam) {
        const double reproduced = -((ego + s.independent_depth_rate) / s.depth) * x;
        CHECK(std::abs(reproduced - flow) < 1e-9);
    }
    // (Z=10, 0) and (Z=20, -1) are members of this family
    bool found_static = false, found_deeper = false;
    for (const auto& s : fam) {
        if (std::abs(s.depth - 10.0) < 1e-6) found_static = true;
        if (std::abs(s.depth - 20.0) < 1e-6) found_deeper = true;
    }
    // exact sample positions depend on the grid; check by direct substitution instead
    (void)found_static;
    (void)found_deeper;
    const double indep_at_10 = -flow * 10.0 / x - ego;
    const double indep_at_20 = -flow * 20.0 / x - ego;
    CHECK(indep_at_10 == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(indep_at_20 == doctest::Approx(-1.0).epsilon(1e-12));

    CHECK_THROWS_AS(ambiguity_family(0.0, 0.05, -1.0, 8), ConfigError);
}

TEST_CASE("so3_exp matches Rodrigues and stays orthonormal") {
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        Vec3 w(rng.normal(), rng.normal(), rng.normal());
        w *= rng.uniform(0.0, 2.0);
        Mat3 r = so3_exp(w);
        CHECK((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(std::abs(r.determinant() - 1.0) < 1e-12);
    }
    // small z-rotation against the closed form
    const double th = 1e-4;
    Mat3 r = so3_exp(Vec3(0, 0, th));
    Mat3 expect;
    expect << std::cos(th), -std::sin(th), 0, std::sin(th), std::cos(th), 0, 0, 0, 1;
    CHECK((r - expect).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((so3_exp(Vec3::Zero()) - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pose validation") {
    PoseSE3 good;
    CHECK(good.is_valid());
    PoseSE3 bad;
    bad.rotation(0, 0) = 1.1;
    CHECK_FALSE(bad.is_valid());
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
