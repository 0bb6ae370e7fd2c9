#include <doctest.h>

#include <cmath>

#include "monoflow/evalmetrics.hpp"

using namespace monoflow;
using namespace monoflow::eval;

TEST_CASE("perfect prediction zeroes every metric") {
    Eigen::ArrayXXd gt(4, 5);
    Rng rng(1);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x) gt(y, x) = rng.uniform(1.0, 50.0);
    auto m = eigen_metrics(gt, gt, Eigen::ArrayXXd::Ones(4, 5), 1.0);
    REQUIRE(m.has_value());
    CHECK(m->abs_rel == 0.0);
    CHECK(m->sq_rel == 0.0);
    CHECK(m->rmse == 0.0);
    CHECK(m->rmse_log == 0.0);
    CHECK(m->a1 == 1.0);
    CHECK(m->a2 == 1.0);
    CHECK(m->a3 == 1.0);
}

TEST_CASE("single-pixel hand computation") {
    Eigen::ArrayXXd pred(1, 1), gt(1, 1);
    pred(0, 0) = 11.0;
    gt(0, 0) = 10.0;
    auto m = eigen_metrics(pred, gt, Eigen::ArrayXXd::Ones(1, 1), 1.0);
    REQUIRE(m.has_value());
    CHECK(m->abs_rel == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(m->sq_rel == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(m->rmse == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m->rmse_log == doctest::Approx(std::log(1.1)).epsilon(1e-12));
    CHECK(m->a1 == 1.0);  // 1.1 < 1.25
}

TEST_CASE("vectorized metrics equal the brute-force loop oracle") {
    Rng rng(2);
    const int H = 13, W = 17;
    Eigen::ArrayXXd pred(H, W), gt(H, W), mask(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            gt(y, x) = rng.uniform(0.5, 90.0);
            pred(y, x) = gt(y, x) * rng.uniform(0.5, 2.0);
            mask(y, x) = rng.uniform() < 0.8 ? 1.0 : 0.0;
        }
    const double scale = 1.3;
    auto fast = eigen_metrics(pred, gt, mask, scale);
    REQUIRE(fast.has_value());

    // independent per-pixel loop
    double abs_rel = 0, sq_rel = 0, se = 0, sel = 0, a1 = 0, a2 = 0, a3 = 0;
    std::int64_t n = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (mask(y, x) <= 0.5) continue;
            double p = pred(y, x) * scale;
            p = std::min(std::max(p, kEvalMinDepth), kEvalMaxDepth);
            const double g = gt(y, x);
            abs_rel += std::abs(p - g) / g;
            sq_rel += (p - g) * (p - g) / g;
            se += (p - g) * (p - g);
            sel += std::pow(std::log(p) - std::log(g), 2);
            const double r = std::max(p / g, g / p);
            a1 += r < 1.25;
            a2 += r < 1.25 * 1.25;
            a3 += r < 1.25 * 1.25 * 1.25;
            ++n;
        }
    CHECK(std::abs(fast->abs_rel - abs_rel / n) < 1e-9);
    CHECK(std::abs(fast->sq_rel - sq_rel / n) < 1e-9);
    CHECK(std::abs(fast->rmse - std::sqrt(se / n)) < 1e-9);
    CHECK(std::abs(fast->rmse_log - std::sqrt(sel / n)) < 1e-9);
    CHECK(std::abs(fast->a1 - a1 / n) < 1e-9);
    CHECK(std::abs(fast->a2 - a2 / n) < 1e-9);
    CHECK(std::abs(fast->a3 - a3 / n) < 1e-9);
}

TEST_CASE("median scaling makes metrics invariant to global rescaling") {
    Rng rng(3);
    const int H = 8, W = 9;
    Eigen::ArrayXXd pred(H, W), gt(H, W);
    Eigen::ArrayXXi labels = Eigen::ArrayXXi::Constant(H, W, kStaticBackground);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            gt(y, x) = rng.uniform(1.0, 60.0);
            pred(y, x) = gt(y, x) * rng.uniform(0.8, 1.2);
        }
    DepthEvaluator e1, e2;
    e1.add_image(pred, gt, Eigen::ArrayXXd::Ones(H, W), labels);
    e2.add_image(pred * 7.3, gt, Eigen::ArrayXXd::Ones(H, W), labels);
    CHECK(e1.split(kAll).mean().abs_rel ==
          doctest::Approx(e2.split(kAll).mean().abs_rel).epsilon(1e-12));
    CHECK(e1.split(kAll).mean().rmse ==
          doctest::Approx(e2.split(kAll).mean().rmse).epsilon(1e-12));
}

TEST_CASE("split partition covers all pixels exactly once") {
    Rng rng(4);
    const int H = 6, W = 10;
    Eigen::ArrayXXd pred(H, W), gt(H, W);
    Eigen::ArrayXXi labels(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            gt(y, x) = rng.uniform(1.0, 50.0);
            pred(y, x) = gt(y, x) * rng.uniform(0.9, 1.1);
            labels(y, x) = 1 + static_cast<int>(rng.uniform_index(3));
        }
    DepthEvaluator e;
    e.add_image(pred, gt, Eigen::ArrayXXd::Ones(H, W), labels);
    CHECK(e.split(kAll).pixel_count == e.split(kStaticBackground).pixel_count +
                                           e.split(kStaticObject).pixel_count +
                                           e.split(kMovingObject).pixel_count);
}

TEST_CASE("absent split reports absent, not zero") {
    Eigen::ArrayXXd pred(2, 2), gt(2, 2);
    pred.setConstant(5.0);
    gt.setConstant(5.0);
    Eigen::ArrayXXi labels = Eigen::ArrayXXi::Constant(2, 2, kStaticBackground);
    DepthEvaluator e;
    e.add_image(pred, gt, Eigen::ArrayXXd::Ones(2, 2), labels);
    CHECK_FALSE(e.split(kMovingObject).present());
    CHECK(e.to_json()["M.O."].is_null());
}

TEST_CASE("motion PR basics and brute-force agreement") {
    Rng rng(5);
    const int H = 12, W = 16;
    Eigen::ArrayXXd pred(H, W), gt(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            gt(y, x) = rng.uniform() < 0.3 ? 1.0 : 0.0;
            pred(y, x) = rng.uniform();
        }

    SUBCASE("perfect binary prediction") {
        MotionPrAccumulator acc;
        acc.add(gt, gt);
        auto c = acc.curve({0.5});
        REQUIRE(c.points.size() == 1);
        CHECK(c.points[0].precision == 1.0);
        CHECK(c.points[0].recall == 1.0);
        CHECK(c.f1_at_half == 1.0);
    }
    SUBCASE("curve equals a confusion-matrix recount and recall is monotone") {
        MotionPrAccumulator acc;
        acc.add(pred, gt);
        auto thr = MotionPrAccumulator::default_thresholds();
        auto c = acc.curve(thr);
        double prev_recall = 2.0;
        for (size_t i = 0; i < thr.size(); ++i) {
            std::int64_t tp = 0, fp = 0, fn = 0;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const bool p = pred(y, x) >= thr[i];
                    const bool g = gt(y, x) > 0.5;
                    tp += p && g;
                    fp += p && !g;
                    fn += !p && g;
                }
            if (tp + fp > 0) {
                REQUIRE(c.points[i].precision_defined);
                CHECK(c.points[i].precision == doctest::Approx(double(tp) / (tp + fp)).epsilon(1e-12));
            }
            CHECK(c.points[i].recall == doctest::Approx(double(tp) / (tp + fn)).epsilon(1e-12));
            CHECK(c.points[i].recall <= prev_recall + 1e-15);
            prev_recall = c.points[i].recall;
        }
    }
    SUBCASE("all-negative gt leaves precision defined but no positives") {
        MotionPrAccumulator acc;
        acc.add(pred, Eigen::ArrayXXd::Zero(H, W));
        CHECK_FALSE(acc.any_positive_gt());
    }
}

TEST_CASE("odometry ATE") {
    auto straight = [](int n, double step, double lateral) {
        std::vector<geom::PoseSE3> chain;
        for (int i = 0; i < n; ++i) {
            geom::PoseSE3 p;
            p.translation = geom::Vec3(lateral * i, 0, step * i);
            chain.push_back(p);
        }
        return chain;
    };

    SUBCASE("identical chains give zero") {
        auto gt = straight(12, 0.5, 0.0);
        auto r = odometry_ate(gt, gt, 5);
        REQUIRE(r.has_value());
        CHECK(r->mean == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(r->stddev == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("uniform scale is removed by alignment") {
        auto gt = straight(12, 0.5, 0.0);
        auto pred = straight(12, 1.0, 0.0);  // twice the scale
        auto r = odometry_ate(pred, gt, 5);
        REQUIRE(r.has_value());
        CHECK(r->mean < 1e-12);
    }
    SUBCASE("lateral drift matches the brute-force window computation") {
        auto gt = straight(10, 0.5, 0.0);
        auto pred = straight(10, 0.5, 0.1);
        const int w = 5;
        auto r = odometry_ate(pred, gt, w);
        REQUIRE(r.has_value());

        std::vector<double> errs;
        for (size_t s = 0; s + w <= pred.size(); ++s) {
            double dot = 0, nrm = 0;
            std::vector<geom::Vec3> a(w), b(w);
            for (int i = 0; i < w; ++i) {
                a[static_cast<size_t>(i)] = pred[s + static_cast<size_t>(i)].translation - pred[s].translation;
                b[static_cast<size_t>(i)] = gt[s + static_cast<size_t>(i)].translation - gt[s].translation;
                dot += a[static_cast<size_t>(i)].dot(b[static_cast<size_t>(i)]);
                nrm += a[static_cast<size_t>(i)].squaredNorm();
            }
            const double sc = dot / nrm;
            double se = 0;
            for (int i = 0; i < w; ++i) se += (sc * a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)]).squaredNorm();
            errs.push_back(std::sqrt(se / w));
        }
        double mean = 0;
        for (double e : errs) mean += e;
        mean /= static_cast<double>(errs.size());
        CHECK(r->mean == doctest::Approx(mean).epsilon(1e-9));
        CHECK(r->mean > 0.0);
    }
    SUBCASE("short chains are absent") {
        auto gt = straight(3, 0.5, 0.0);
        CHECK_FALSE(odometry_ate(gt, gt, 5).has_value());
    }
}

TEST_CASE("error map renders AbsRel at sparse points only") {
    Eigen::ArrayXXd pred = Eigen::ArrayXXd::Constant(4, 6, 15.0);
    SUBCASE("exact points are zero") {
        auto m = error_map(pred, {{2, 1, 15.0}});
        CHECK(m(1, 2) == 0.0);
    }
    SUBCASE("pred 15 against gt 10 gives 0.5") {
        auto m = error_map(pred, {{3, 2, 10.0}});
        CHECK(m(2, 3) == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("non-gt pixels stay exactly zero") {
        auto m = error_map(pred, {{0, 0, 10.0}});
        int nonzero = 0;
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 6; ++x) nonzero += m(y, x) != 0.0;
        CHECK(nonzero == 1);
    }
}

TEST_CASE("flow EPE counts only valid pixels") {
    geom::FlowField3 a(4, 3), b(4, 3);
    Eigen::ArrayXXd valid = Eigen::ArrayXXd::Zero(3, 4);
    a.set(1, 1, {1, 0, 0});
    valid(1, 1) = 1.0;
    valid(2, 2) = 1.0;
    CHECK(flow_epe(a, b, valid) == doctest::Approx(0.5).epsilon(1e-12));
}
