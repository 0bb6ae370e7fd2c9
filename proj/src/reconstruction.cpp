#include "monoflow/reconstruction.hpp"

#include <limits>

namespace monoflow::recon {

namespace {
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

ReconResult warp(const Tensor& source, NodePtr warp_points, const geom::CameraIntrinsics& K) {
    auto [image, valid] = nn::warp_bilinear(source, std::move(warp_points), K.fx, K.fy, K.cx, K.cy);
    return {image, valid};
}

NodePtr ssim(NodePtr a, NodePtr b) {
    using namespace nn;
    NodePtr mu_a = avgpool3x3_reflect(a);
    NodePtr mu_b = avgpool3x3_reflect(b);
    NodePtr sig_a = sub(avgpool3x3_reflect(mul(a, a)), mul(mu_a, mu_a));
    NodePtr sig_b = sub(avgpool3x3_reflect(mul(b, b)), mul(mu_b, mu_b));
    NodePtr sig_ab = sub(avgpool3x3_reflect(mul(a, b)), mul(mu_a, mu_b));

    NodePtr num = mul(add_scalar(mul_scalar(mul(mu_a, mu_b), 2.0), kC1),
                      add_scalar(mul_scalar(sig_ab, 2.0), kC2));
    NodePtr den = mul(add_scalar(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), kC1),
                      add_scalar(add(sig_a, sig_b), kC2));
    return mean_channels(div(num, den));
}

Photometric photometric_loss(NodePtr target, NodePtr recon, double alpha,
                             const Tensor* valid) {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("photometric_loss: alpha outside [0,1]");
    using namespace nn;
    NodePtr l1 = mean_channels(abs_(sub(target, recon)));
    NodePtr map;
    if (alpha == 0.0) {
        map = l1;
    } else {
        NodePtr s = ssim(target, recon);
        NodePtr ssim_term = mul_scalar(add_scalar(neg(s), 1.0), alpha / 2.0);
        map = alpha == 1.0 ? ssim_term : add(ssim_term, mul_scalar(l1, 1.0 - alpha));
    }
    Photometric out;
    out.map = map;
    if (valid) {
        out.scalar = mean_finite(masked_fill(map, *valid, kInf));
    } else {
        out.scalar = mean(map);
    }
    return out;
}

NodePtr min_reprojection(NodePtr err_prev, NodePtr err_next) {
    return nn::min_elem(std::move(err_prev), std::move(err_next));
}

Tensor auto_mask(const Tensor& min_warped_err, const Tensor& min_identity_err) {
    if (min_warped_err.shape != min_identity_err.shape)
        throw ConfigError("auto_mask: shape mismatch");
    Tensor keep(min_warped_err.shape);
    keep.data = (min_warped_err.data < min_identity_err.data).cast<double>();
    return keep;
}

}  // namespace monoflow::recon
