#pragma once

// Evaluation: Eigen depth metrics with per-image median scaling and semantic
// splits, pixel-level motion segmentation PR, scale-aligned odometry ATE,
// flow endpoint error, and AbsRel error maps.

#include <optional>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "monoflow/geometry.hpp"

namespace monoflow::eval {

constexpr double kEvalMinDepth = 0.1;
constexpr double kEvalMaxDepth = 80.0;

// per-pixel split labels
enum SplitId : int { kAll = 0, kStaticBackground = 1, kStaticObject = 2, kMovingObject = 3 };

struct EigenMetrics {
    double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
    double a1 = 0, a2 = 0, a3 = 0;  // delta < 1.25, 1.25^2, 1.25^3
};

struct SplitAccum {
    EigenMetrics sum;
    int image_count = 0;
    std::int64_t pixel_count = 0;

    bool present() const { return image_count > 0; }
    EigenMetrics mean() const;
};

class DepthEvaluator {
public:
    // labels: 1/2/3 per pixel (SB/SO/MO); valid: usable gt pixels
    void add_image(const Eigen::ArrayXXd& pred, const Eigen::ArrayXXd& gt,
                   const Eigen::ArrayXXd& valid, const Eigen::ArrayXXi& labels);
    const SplitAccum& split(int id) const { return splits_.at(static_cast<size_t>(id)); }
    nlohmann::json to_json() const;

private:
    std::array<SplitAccum, 4> splits_{};
};

// single-image metrics over an explicit pixel set, median-scaled and capped;
// exposed for the brute-force oracle tests
std::optional<EigenMetrics> eigen_metrics(const Eigen::ArrayXXd& pred, const Eigen::ArrayXXd& gt,
                                          const Eigen::ArrayXXd& mask, double scale);
double median_scale(const Eigen::ArrayXXd& pred, const Eigen::ArrayXXd& gt,
                    const Eigen::ArrayXXd& mask);

struct PRPoint {
    double threshold, precision, recall;
    bool precision_defined;
};

struct PRCurve {
    std::vector<PRPoint> points;
    double f1_best = 0, f1_best_threshold = 0.5, f1_at_half = 0;
    nlohmann::json to_json() const;
};

class MotionPrAccumulator {
public:
    void add(const Eigen::ArrayXXd& pred, const Eigen::ArrayXXd& gt_binary);
    PRCurve curve(const std::vector<double>& thresholds) const;
    static std::vector<double> default_thresholds();
    bool any_positive_gt() const { return total_pos_ > 0; }

private:
    std::vector<std::pair<float, bool>> samples_;  // (score, gt)
    std::int64_t total_pos_ = 0;
};

struct AteResult {
    double mean = 0, stddev = 0;
    int window_count = 0;
};

// scale-aligned RMS translation error over overlapping windows
std::optional<AteResult> odometry_ate(const std::vector<geom::PoseSE3>& pred_cam_to_world,
                                      const std::vector<geom::PoseSE3>& gt_cam_to_world,
                                      int window);

struct SparseDepthPoint {
    int x, y;
    double gt_depth;
};

// AbsRel at sample points on a black background, clipped to [0,1]
Eigen::ArrayXXd error_map(const Eigen::ArrayXXd& pred, const std::vector<SparseDepthPoint>& points);

// mean 3D endpoint error over valid pixels
double flow_epe(const geom::FlowField3& pred, const geom::FlowField3& gt,
                const Eigen::ArrayXXd& valid);

}  // namespace monoflow::eval
