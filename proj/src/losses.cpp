#include "monoflow/losses.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace monoflow::loss {

NodePtr edge_aware_smoothness(NodePtr z, NodePtr image) {
    using namespace nn;
    if (z->value.shape[1] != image->value.shape[1] || z->value.shape[2] != image->value.shape[2])
        throw ConfigError("edge_aware_smoothness: z and image misaligned");
    NodePtr wx = exp_(neg(mean_channels(abs_(diff_x(image)))));
    NodePtr wy = exp_(neg(mean_channels(abs_(diff_y(image)))));
    NodePtr tx = mean(mul_bc(abs_(diff_x(z)), wx));
    NodePtr ty = mean(mul_bc(abs_(diff_y(z)), wy));
    return add(tx, ty);
}

std::pair<NodePtr, NodePtr> normalized_inverse_depth_with_mean(NodePtr depth) {
    using namespace nn;
    NodePtr inv = reciprocal(std::move(depth));
    NodePtr m = mean(inv);
    return {div_by_scalar_node(inv, m), m};
}

NodePtr mean_normalized_inverse_depth(NodePtr depth) {
    return normalized_inverse_depth_with_mean(std::move(depth)).first;
}

NodePtr smoothness_total(NodePtr d_star, NodePtr flow_c, NodePtr mask, NodePtr image,
                         const LossWeights& w, double cm_ramp) {
    using namespace nn;
    NodePtr total;
    auto accumulate = [&](NodePtr term) {
        total = total ? add(total, term) : term;
    };
    if (d_star && w.gamma_sd > 0)
        accumulate(mul_scalar(edge_aware_smoothness(d_star, image), w.gamma_sd));
    if (flow_c && w.gamma_sc > 0 && cm_ramp > 0)
        accumulate(mul_scalar(edge_aware_smoothness(flow_c, image), w.gamma_sc * cm_ramp));
    if (mask && w.gamma_sm > 0 && cm_ramp > 0)
        accumulate(mul_scalar(edge_aware_smoothness(mask, image), w.gamma_sm * cm_ramp));
    return total ? total : constant(Tensor::scalar(0.0));
}

NodePtr motion_consistency(NodePtr flow_c, NodePtr flow_r, NodePtr mask) {
    using namespace nn;
    NodePtr fd = mul_scalar(mean_channels(abs_(sub(flow_c, flow_r))), 3.0);
    return mean(mul(fd, add_scalar(neg(mask), 1.0)));
}

Tensor flow_discrepancy(const Tensor& flow_c, const Tensor& flow_r) {
    if (flow_c.shape != flow_r.shape || flow_c.shape.size() != 3 || flow_c.shape[0] != 3)
        throw ConfigError("flow_discrepancy: expects matching {3,H,W}");
    const auto hw = static_cast<std::int64_t>(flow_c.shape[1]) * flow_c.shape[2];
    Tensor fd({1, flow_c.shape[1], flow_c.shape[2]});
    for (int c = 0; c < 3; ++c)
        fd.data += (flow_c.data.segment(c * hw, hw) - flow_r.data.segment(c * hw, hw)).abs();
    return fd;
}

NodePtr motion_sparsity(const Tensor& flow_disc, NodePtr mask) {
    using namespace nn;
    if (flow_disc.shape != mask->value.shape)
        throw ConfigError("motion_sparsity: selector/mask shape mismatch");
    // the mean rule guarantees a nonempty selection in exact arithmetic; the
    // floor at the minimum keeps that true when rounding dips the mean below it
    const double fd_mean = std::max(flow_disc.data.mean(), flow_disc.data.minCoeff());
    Tensor sel(flow_disc.shape);
    sel.data = (flow_disc.data <= fd_mean).cast<double>();
    const double count = sel.data.sum();

    // clamp only against M -> 1; the lower end is already safe for -ln(1-M)
    NodePtr m = clamp(mask, 0.0, 1.0 - 1e-6);
    NodePtr bce = neg(log_(add_scalar(neg(m), 1.0)));
    return mul_scalar(sum(mul(bce, constant(sel))), 1.0 / count);
}

namespace detail {

std::optional<std::pair<geom::Vec3, double>> fit_plane(const std::vector<geom::Vec3>& pts) {
    if (pts.size() < 3) return std::nullopt;
    geom::Vec3 centroid = geom::Vec3::Zero();
    for (const auto& p : pts) centroid += p;
    centroid /= static_cast<double>(pts.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& p : pts) {
        const geom::Vec3 d = p - centroid;
        cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    // collinear (or coincident) samples leave two near-zero eigenvalues
    const double scale = es.eigenvalues()[2];
    if (!(scale > 0) || es.eigenvalues()[1] <= 1e-12 * scale) return std::nullopt;
    geom::Vec3 n = es.eigenvectors().col(0);
    double offset = n.dot(centroid);
    if (offset < 0) {
        n = -n;
        offset = -offset;
    }
    return std::make_pair(n, offset);
}

}  // namespace detail

std::optional<GroundPlane> fit_ground_plane(const Tensor& depth, const geom::CameraIntrinsics& K,
                                            Rng& rng) {
    if (depth.shape.size() != 3 || depth.shape[0] != 1)
        throw ConfigError("fit_ground_plane: depth must be {1,H,W}");
    const int H = depth.shape[1], W = depth.shape[2];

    // back-project the bottom half, subsampled for speed
    std::vector<geom::Vec3> pts;
    std::vector<double> depths;
    const int stride = std::max(1, (H / 2) * W / 4000);
    int k = 0;
    for (int y = H / 2; y < H; ++y)
        for (int x = 0; x < W; ++x, ++k) {
            if (k % stride) continue;
            const double d = depth.data[static_cast<std::int64_t>(y) * W + x];
            if (!(d > 0) || !std::isfinite(d)) continue;
            pts.push_back(geom::backproject({double(x), double(y)}, d, K));
            depths.push_back(d);
        }
    if (pts.size() < 5) return std::nullopt;

    std::vector<double> sorted = depths;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double tau = 0.05 * sorted[sorted.size() / 2];

    constexpr int kIterations = 100;
    constexpr int kSamplePoints = 5;
    geom::Vec3 best_n = geom::Vec3::Zero();
    double best_o = 0.0;
    int best_inliers = -1;
    std::vector<geom::Vec3> sample(kSamplePoints);
    for (int it = 0; it < kIterations; ++it) {
        for (int j = 0; j < kSamplePoints; ++j)
            sample[j] = pts[rng.uniform_index(pts.size())];
        auto hyp = detail::fit_plane(sample);
        if (!hyp) continue;
        int inl = 0;
        for (const auto& p : pts)
            if (std::abs(hyp->first.dot(p) - hyp->second) < tau) ++inl;
        if (inl > best_inliers) {
            best_inliers = inl;
            best_n = hyp->first;
            best_o = hyp->second;
        }
    }
    if (best_inliers < 5) return std::nullopt;

    std::vector<geom::Vec3> inlier_pts;
    inlier_pts.reserve(static_cast<size_t>(best_inliers));
    for (const auto& p : pts)
        if (std::abs(best_n.dot(p) - best_o) < tau) inlier_pts.push_back(p);
    if (auto refined = detail::fit_plane(inlier_pts)) {
        best_n = refined->first;
        best_o = refined->second;
    }

    GroundPlane plane;
    plane.normal = best_n;
    plane.offset = best_o;
    plane.inlier_count = static_cast<int>(inlier_pts.size());
    plane.inv_depth = Tensor({1, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const geom::Vec3 ray((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
            const double ndotr = best_n.dot(ray);
            // ray hits the plane in front of the camera iff offset/n.r > 0
            const double inv = best_o > 0 ? ndotr / best_o : 0.0;
            plane.inv_depth.data[static_cast<std::int64_t>(y) * W + x] = inv > 0 ? inv : 0.0;
        }
    return plane;
}

NodePtr above_ground(NodePtr d_star, NodePtr mean_inv_depth, const GroundPlane& plane) {
    using namespace nn;
    NodePtr dg = div_by_scalar_node(constant(plane.inv_depth), std::move(mean_inv_depth));
    return mean(relu(sub(dg, d_star)));
}

TotalLoss total_loss(NodePtr recon, NodePtr smooth, NodePtr consistency, NodePtr sparsity,
                     NodePtr ground, const LossWeights& w, double cm_ramp) {
    using namespace nn;
    w.validate();
    auto check = [](const NodePtr& n, const char* name) -> double {
        if (!n) return 0.0;
        const double v = scalar_of(n);
        if (!std::isfinite(v))
            throw NumericalFault(std::string("total_loss: non-finite component '") + name + "'");
        return v;
    };

    TotalLoss out;
    out.values.recon = check(recon, "recon");
    out.values.smooth = check(smooth, "smooth");
    out.values.consistency = check(consistency, "consistency");
    out.values.sparsity = check(sparsity, "sparsity");
    out.values.ground = check(ground, "ground");

    NodePtr total = recon ? recon : constant(Tensor::scalar(0.0));
    if (smooth) total = add(total, smooth);
    if (consistency) total = add(total, mul_scalar(consistency, w.gamma_c * cm_ramp));
    if (sparsity) total = add(total, mul_scalar(sparsity, w.gamma_m * cm_ramp));
    if (ground) total = add(total, mul_scalar(ground, w.gamma_g));
    out.total = total;
    out.values.total = scalar_of(total);
    return out;
}

}  // namespace monoflow::loss
