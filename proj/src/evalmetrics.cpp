#include "monoflow/evalmetrics.hpp"

#include <algorithm>
#include <cmath>

namespace monoflow::eval {

EigenMetrics SplitAccum::mean() const {
    EigenMetrics m = sum;
    if (image_count == 0) return m;
    const double inv = 1.0 / image_count;
    m.abs_rel *= inv; m.sq_rel *= inv; m.rmse *= inv; m.rmse_log *= inv;
    m.a1 *= inv; m.a2 *= inv; m.a3 *= inv;
    return m;
}

double median_scale(const Eigen::ArrayXXd& pred, const Eigen::ArrayXXd& gt,
                    const Eigen::ArrayXXd& mask) {
    std::vector<double> ps, gs;
    for (int y = 0; y < pred.rows(); ++y)
        for (int x = 0; x < pred.cols(); ++x)
            if (mask(y, x) > 0.5) {
                ps.push_back(pred(y, x));
                gs.push_back(gt(y, x));
            }
    if (ps.empty()) return 1.0;
    auto median = [](std::vector<double>& v) {
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
        return v[v.size() / 2];
    };
    const double mp = median(ps);
    const double mg = median(gs);
    return mp > 0 ? mg / mp : 1.0;
}

std::optional<EigenMetrics> eigen_metrics(const Eigen::ArrayXXd& pred, const Eigen::ArrayXXd& gt,
                                          const Eigen::ArrayXXd& mask, double scale) {
    const auto m = (mask > 0.5);
    const std::int64_t n = m.count();
    if (n == 0) return std::nullopt;

    Eigen::ArrayXXd p = (pred * scale).max(kEvalMinDepth).min(kEvalMaxDepth);
    const Eigen::ArrayXXd zero = Eigen::ArrayXXd::Zero(pred.rows(), pred.cols());
    const Eigen::ArrayXXd one = Eigen::ArrayXXd::Ones(pred.rows(), pred.cols());
    const Eigen::ArrayXXd gsafe = m.select(gt, one);  // avoid /0 outside the mask
    const Eigen::ArrayXXd psafe = m.select(p, one);
    const Eigen::ArrayXXd diff = psafe - gsafe;

    EigenMetrics out;
    const double inv = 1.0 / static_cast<double>(n);
    out.abs_rel = (m.select(diff.abs() / gsafe, zero)).sum() * inv;
    out.sq_rel = (m.select(diff.square() / gsafe, zero)).sum() * inv;
    out.rmse = std::sqrt((m.select(diff.square(), zero)).sum() * inv);
    const Eigen::ArrayXXd dlog = psafe.log() - gsafe.log();
    out.rmse_log = std::sqrt((m.select(dlog.square(), zero)).sum() * inv);
    const Eigen::ArrayXXd ratio = (psafe / gsafe).max(gsafe / psafe);
    out.a1 = (m.select((ratio < 1.25).cast<double>(), zero)).sum() * inv;
    out.a2 = (m.select((ratio < 1.25 * 1.25).cast<double>(), zero)).sum() * inv;
    out.a3 = (m.select((ratio < 1.25 * 1.25 * 1.25).cast<double>(), zero)).sum() * inv;
    return out;
}

void DepthEvaluator::add_image(const Eigen::ArrayXXd& pred, const Eigen::ArrayXXd& gt,
                               const Eigen::ArrayXXd& valid, const Eigen::ArrayXXi& labels) {
    Eigen::ArrayXXd usable =
        ((valid > 0.5) && (gt > kEvalMinDepth) && (gt <= kEvalMaxDepth)).cast<double>();
    const double scale = median_scale(pred, gt, usable);

    for (int split = 0; split < 4; ++split) {
        Eigen::ArrayXXd mask = usable;
        if (split != kAll) mask = ((usable > 0.5) && (labels == split)).cast<double>();
        if (auto m = eigen_metrics(pred, gt, mask, scale)) {
            auto& acc = splits_[static_cast<size_t>(split)];
            acc.sum.abs_rel += m->abs_rel;
            acc.sum.sq_rel += m->sq_rel;
            acc.sum.rmse += m->rmse;
            acc.sum.rmse_log += m->rmse_log;
            acc.sum.a1 += m->a1;
            acc.sum.a2 += m->a2;
            acc.sum.a3 += m->a3;
            acc.image_count += 1;
            acc.pixel_count += (mask > 0.5).count();
        }
    }
}

nlohmann::json DepthEvaluator::to_json() const {
    static const char* names[4] = {"All", "S.B.", "S.O.", "M.O."};
    nlohmann::json j;
    for (int s = 0; s < 4; ++s) {
        const auto& acc = splits_[static_cast<size_t>(s)];
        if (!acc.present()) {
            j[names[s]] = nullptr;  // absent, not zero
            continue;
        }
        const EigenMetrics m = acc.mean();
        j[names[s]] = {{"abs_rel", m.abs_rel},   {"sq_rel", m.sq_rel},
                       {"rmse", m.rmse},         {"rmse_log", m.rmse_log},
                       {"a1", m.a1},             {"a2", m.a2},
                       {"a3", m.a3},             {"pixels", acc.pixel_count},
                       {"images", acc.image_count}};
    }
    return j;
}

// ---------------------------------------------------------------------------

void MotionPrAccumulator::add(const Eigen::ArrayXXd& pred, const Eigen::ArrayXXd& gt_binary) {
    if (pred.rows() != gt_binary.rows() || pred.cols() != gt_binary.cols())
        throw ConfigError("motion_pr: mask shapes disagree");
    samples_.reserve(samples_.size() + static_cast<size_t>(pred.size()));
    for (int y = 0; y < pred.rows(); ++y)
        for (int x = 0; x < pred.cols(); ++x) {
            const bool pos = gt_binary(y, x) > 0.5;
            samples_.emplace_back(static_cast<float>(pred(y, x)), pos);
            if (pos) ++total_pos_;
        }
}

std::vector<double> MotionPrAccumulator::default_thresholds() {
    std::vector<double> t;
    for (int i = 0; i <= 50; ++i) t.push_back(i / 50.0);
    return t;
}

PRCurve MotionPrAccumulator::curve(const std::vector<double>& thresholds) const {
    PRCurve out;
    for (double thr : thresholds) {
        std::int64_t tp = 0, fp = 0;
        for (const auto& [score, pos] : samples_) {
            if (score >= thr) (pos ? tp : fp) += 1;
        }
        const std::int64_t fn = total_pos_ - tp;
        PRPoint pt{thr, 0.0, 0.0, tp + fp > 0};
        if (pt.precision_defined) pt.precision = double(tp) / double(tp + fp);
        pt.recall = total_pos_ > 0 ? double(tp) / double(tp + fn) : 0.0;
        out.points.push_back(pt);

        if (pt.precision_defined && pt.precision + pt.recall > 0) {
            const double f1 = 2.0 * pt.precision * pt.recall / (pt.precision + pt.recall);
            if (f1 > out.f1_best) {
                out.f1_best = f1;
                out.f1_best_threshold = thr;
            }
            if (thr == 0.5) out.f1_at_half = f1;
        }
    }
    return out;
}

nlohmann::json PRCurve::to_json() const {
    nlohmann::json j;
    auto pts = nlohmann::json::array();
    for (const auto& p : points)
        pts.push_back({{"threshold", p.threshold},
                       {"precision", p.precision_defined ? nlohmann::json(p.precision)
                                                         : nlohmann::json(nullptr)},
                       {"recall", p.recall}});
    j["points"] = pts;
    j["f1_best"] = f1_best;
    j["f1_best_threshold"] = f1_best_threshold;
    j["f1_at_0.5"] = f1_at_half;
    return j;
}

// ---------------------------------------------------------------------------

std::optional<AteResult> odometry_ate(const std::vector<geom::PoseSE3>& pred,
                                      const std::vector<geom::PoseSE3>& gt, int window) {
    if (window < 2 || pred.size() != gt.size()) throw ConfigError("odometry_ate: bad inputs");
    if (static_cast<int>(pred.size()) < window) return std::nullopt;

    std::vector<double> errs;
    const auto w = static_cast<size_t>(window);
    for (size_t start = 0; start + w <= pred.size(); ++start) {
        // positions relative to the window's first frame, in its coordinates
        const geom::Mat3 rp0 = pred[start].rotation.transpose();
        const geom::Mat3 rg0 = gt[start].rotation.transpose();
        double dot = 0, norm = 0;
        std::vector<geom::Vec3> a(w), b(w);
        for (size_t i = 0; i < w; ++i) {
            a[i] = rp0 * (pred[start + i].translation - pred[start].translation);
            b[i] = rg0 * (gt[start + i].translation - gt[start].translation);
            dot += a[i].dot(b[i]);
            norm += a[i].squaredNorm();
        }
        const double s = norm > 1e-18 ? dot / norm : 1.0;
        double se = 0;
        for (size_t i = 0; i < w; ++i) se += (s * a[i] - b[i]).squaredNorm();
        errs.push_back(std::sqrt(se / static_cast<double>(w)));
    }

    AteResult r;
    r.window_count = static_cast<int>(errs.size());
    for (double e : errs) r.mean += e;
    r.mean /= static_cast<double>(errs.size());
    for (double e : errs) r.stddev += (e - r.mean) * (e - r.mean);
    r.stddev = std::sqrt(r.stddev / static_cast<double>(errs.size()));
    return r;
}

Eigen::ArrayXXd error_map(const Eigen::ArrayXXd& pred,
                          const std::vector<SparseDepthPoint>& points) {
    Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(pred.rows(), pred.cols());
    for (const auto& p : points) {
        if (p.x < 0 || p.x >= pred.cols() || p.y < 0 || p.y >= pred.rows()) continue;
        if (!(p.gt_depth > 0)) continue;
        const double e = std::abs(pred(p.y, p.x) - p.gt_depth) / p.gt_depth;
        out(p.y, p.x) = std::min(e, 1.0);  // fixed display range
    }
    return out;
}

double flow_epe(const geom::FlowField3& pred, const geom::FlowField3& gt,
                const Eigen::ArrayXXd& valid) {
    if (pred.width != gt.width || pred.height != gt.height)
        throw ConfigError("flow_epe: field shapes disagree");
    double sum = 0;
    std::int64_t n = 0;
    for (int y = 0; y < pred.height; ++y)
        for (int x = 0; x < pred.width; ++x) {
            if (valid(y, x) <= 0.5) continue;
            sum += (pred.at(x, y) - gt.at(x, y)).norm();
            ++n;
        }
    return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace monoflow::eval
