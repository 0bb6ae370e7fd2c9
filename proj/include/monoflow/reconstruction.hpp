#pragma once

// Differentiable view synthesis: sample the source frame at projected warp
// coordinates, score the reconstruction with SSIM + L1, rectify two source
// frames by per-pixel minimum, and auto-mask against the unwarped error.

#include "monoflow/geometry.hpp"
#include "monoflow/nn/graph.hpp"

namespace monoflow::recon {

using nn::NodePtr;
using nn::Tensor;

struct ReconResult {
    NodePtr image;  // {3,H,W}, zeros where no sample was taken
    Tensor valid;   // {1,H,W} 0/1; 0 where the projection left the source or z <= 0
};

// warp_points is P_hat_s {3,H,W}; source is data (no gradient into it).
ReconResult warp(const Tensor& source, NodePtr warp_points, const geom::CameraIntrinsics& K);

// SSIM with 3x3 mean pooling, C1=0.01^2, C2=0.03^2, channels averaged -> {1,H,W}.
NodePtr ssim(NodePtr a, NodePtr b);

struct Photometric {
    NodePtr map;     // {1,H,W} per-pixel error, alpha/2*(1-SSIM) + (1-alpha)*L1
    NodePtr scalar;  // mean over pixels that are valid (finite after masking)
};

// valid == nullptr means every pixel counts.
Photometric photometric_loss(NodePtr target, NodePtr recon, double alpha,
                             const Tensor* valid = nullptr);

// elementwise minimum of the two per-source error maps
NodePtr min_reprojection(NodePtr err_prev, NodePtr err_next);

// keep(p)=1 iff min warped error < min identity (unwarped) error, strictly
Tensor auto_mask(const Tensor& min_warped_err, const Tensor& min_identity_err);

}  // namespace monoflow::recon
