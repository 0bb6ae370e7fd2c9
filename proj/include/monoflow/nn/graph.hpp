#pragma once

// Reverse-mode autodiff over Tensor. Graphs are built eagerly per sample and
// discarded after the optimizer step; parameters enter as leaf nodes.

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "monoflow/nn/tensor.hpp"

namespace monoflow::nn {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on demand, same shape as value
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;  // scatter this->grad into parents

    void ensure_grad() {
        if (!grad_ready) {
            grad = Tensor(value.shape);
            grad_ready = true;
        }
    }
};

NodePtr constant(Tensor v);
NodePtr leaf(Tensor v);  // trainable: requires_grad = true

// Backpropagate from a scalar root (seeds d root = 1).
void backward(const NodePtr& root);

// ---- elementwise ----
NodePtr add(NodePtr a, NodePtr b);
NodePtr sub(NodePtr a, NodePtr b);
NodePtr mul(NodePtr a, NodePtr b);
NodePtr div(NodePtr a, NodePtr b);
NodePtr neg(NodePtr a);
NodePtr add_scalar(NodePtr a, double s);
NodePtr mul_scalar(NodePtr a, double s);
NodePtr reciprocal(NodePtr a);
NodePtr abs_(NodePtr a);
NodePtr exp_(NodePtr a);
NodePtr log_(NodePtr a);
NodePtr sqrt_(NodePtr a);
NodePtr relu(NodePtr a);
NodePtr elu(NodePtr a);
NodePtr sigmoid(NodePtr a);
NodePtr clamp(NodePtr a, double lo, double hi);
NodePtr detach(NodePtr a);

// multiply {C,H,W} by {1,H,W}, broadcast over channels
NodePtr mul_bc(NodePtr a, NodePtr m);
// elementwise minimum, gradient routed to the smaller input (ties -> a)
NodePtr min_elem(NodePtr a, NodePtr b);
// out = mask ? a : fill   (mask is data, 0/1; no gradient where filled)
NodePtr masked_fill(NodePtr a, const Tensor& mask, double fill);

// ---- reductions / shape ----
NodePtr sum(NodePtr a);
NodePtr mean(NodePtr a);
NodePtr mean_finite(NodePtr a);           // mean over finite entries; 0 if none
NodePtr mean_channels(NodePtr a);         // {C,H,W} -> {1,H,W}
NodePtr spatial_mean(NodePtr a);          // {C,H,W} -> {C}
NodePtr div_by_scalar_node(NodePtr a, NodePtr s);
NodePtr concat_ch(NodePtr a, NodePtr b);
NodePtr slice_ch(NodePtr a, int c0, int c1);  // channels [c0, c1)
NodePtr slice_vec(NodePtr a, int i0, int i1); // 1-D slice [i0, i1)
NodePtr diff_x(NodePtr a);                // {C,H,W} -> {C,H,W-1}
NodePtr diff_y(NodePtr a);                // {C,H,W} -> {C,H-1,W}

// ---- structured ----
NodePtr conv2d(NodePtr x, NodePtr w, NodePtr b, int ksize, int stride, int pad);
NodePtr upsample2x(NodePtr a);
NodePtr avgpool3x3_reflect(NodePtr a);

// ---- geometry bridges ----
// axis-angle {3} -> rotation matrix {9} (row-major), exact at the identity
NodePtr so3_exp_node(NodePtr w);
// depth {1,H,W} -> camera points {3,H,W}; rays fixed by intrinsics
NodePtr backproject_node(NodePtr depth, double fx, double fy, double cx, double cy);
// out(p) = R*P(p) + t - P(p)
NodePtr rigid_transform(NodePtr points, NodePtr rot9, NodePtr trans3);

// Project warp points and bilinearly sample the source image (constant).
// validity: 1 where z > z_eps and the projection lands in bounds.
struct WarpOut {
    NodePtr image;   // {C,H,W}
    Tensor valid;    // {1,H,W}, 0/1
};
WarpOut warp_bilinear(const Tensor& source, NodePtr warp_points,
                      double fx, double fy, double cx, double cy);

// convenience for finite-difference tests
double scalar_of(const NodePtr& n);

}  // namespace monoflow::nn
