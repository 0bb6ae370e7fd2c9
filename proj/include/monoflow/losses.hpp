#pragma once

// Regularizers around the photometric objective: edge-aware smoothness,
// motion consistency, motion sparsity, RANSAC ground plane with the
// above-ground penalty, and the weighted total.

#include <map>
#include <optional>
#include <string>

#include "monoflow/geometry.hpp"
#include "monoflow/nn/graph.hpp"

namespace monoflow::loss {

using nn::NodePtr;
using nn::Tensor;

struct LossWeights {
    double alpha = 0.85;
    double gamma_sd = 0.001;
    double gamma_sc = 0.001;
    double gamma_sm = 0.1;
    double gamma_c = 5.0;
    double gamma_m = 0.04;
    double gamma_g = 0.1;

    void validate() const {
        for (double v : {alpha, gamma_sd, gamma_sc, gamma_sm, gamma_c, gamma_m, gamma_g})
            if (!(v >= 0.0)) throw ConfigError("loss weights must be >= 0");
        if (alpha > 1.0) throw ConfigError("alpha must lie in [0,1]");
    }
};

// mean over pixels of |dx z| e^{-|dx I|} + |dy z| e^{-|dy I|};
// z channels averaged, image gradient magnitude averaged over channels
NodePtr edge_aware_smoothness(NodePtr z, NodePtr image);

// inverse depth divided by its spatial mean
NodePtr mean_normalized_inverse_depth(NodePtr depth);
// same, plus the mean itself (the ground loss shares the normalizer)
std::pair<NodePtr, NodePtr> normalized_inverse_depth_with_mean(NodePtr depth);

// gamma_sd*l_s(d*) + gamma_sc*l_s(F_C) + gamma_sm*l_s(M); null terms skipped.
// cm_ramp scales the F_C and M terms.
NodePtr smoothness_total(NodePtr d_star, NodePtr flow_c, NodePtr mask, NodePtr image,
                         const LossWeights& w, double cm_ramp = 1.0);

// (1/HW) sum (1-M) * ||F_C - F_R||_1
NodePtr motion_consistency(NodePtr flow_c, NodePtr flow_r, NodePtr mask);

// ||F_C - F_R||_1 per pixel as plain data (the sparsity selector must not
// backpropagate into the flows)
Tensor flow_discrepancy(const Tensor& flow_c, const Tensor& flow_r);

// BCE of M against 0 over pixels with F_D <= mean(F_D)
NodePtr motion_sparsity(const Tensor& flow_disc, NodePtr mask);

struct GroundPlane {
    geom::Vec3 normal;       // unit
    double offset = 0.0;     // n . X = offset, offset >= 0
    int inlier_count = 0;
    Tensor inv_depth;        // {1,H,W} raw (unnormalized) plane inverse depth, 0 above horizon
};

// RANSAC over back-projected bottom-half pixels: 100 iterations, 5-point
// least-squares hypotheses, inlier threshold 0.05 x median bottom-half depth.
std::optional<GroundPlane> fit_ground_plane(const Tensor& depth, const geom::CameraIntrinsics& K,
                                            Rng& rng);

// (1/HW) sum ReLU(d_g - d*) with d_g normalized by the shared mean inverse depth
NodePtr above_ground(NodePtr d_star, NodePtr mean_inv_depth, const GroundPlane& plane);

struct LossBreakdown {
    double recon = 0, smooth = 0, consistency = 0, sparsity = 0, ground = 0, total = 0;
};

struct TotalLoss {
    NodePtr total;
    LossBreakdown values;
};

// L = L_recon + L_s + gamma_c L_c + gamma_m L_m + gamma_g L_g; null terms are
// treated as zero. Throws NumericalFault naming the offending term if any
// component is non-finite.
TotalLoss total_loss(NodePtr recon, NodePtr smooth, NodePtr consistency, NodePtr sparsity,
                     NodePtr ground, const LossWeights& w, double cm_ramp = 1.0);

namespace detail {
// least-squares plane through >= 3 points; nullopt when degenerate (collinear)
std::optional<std::pair<geom::Vec3, double>> fit_plane(const std::vector<geom::Vec3>& pts);
}  // namespace detail

}  // namespace monoflow::loss
