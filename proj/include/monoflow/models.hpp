#pragma once

// The four learnable functions: depth D (image -> depth), pose P (pair -> 6DoF),
// complete flow C (pair -> 3D field), motion mask M (pair -> logits). C and M
// read one shared encoder; D's output is squashed into [0.1, 100] m; pose and
// flow raw outputs are scaled by 0.01.

#include <string>
#include <vector>

#include "monoflow/nn/layers.hpp"

namespace monoflow::models {

using nn::NodePtr;
using nn::ParamGroup;
using nn::Tape;
using nn::Tensor;

constexpr double kMinDepth = 0.1;
constexpr double kMaxDepth = 100.0;

struct PoseOut {
    NodePtr rot9;    // {9} row-major rotation
    NodePtr trans3;  // {3}
    NodePtr axis_angle;  // {3}, pre-exp-map (scaled)
};

class NetworkBundle {
public:
    static NetworkBundle create(std::uint64_t seed);

    // freeze flags; frozen networks take no gradient and never change
    bool freeze_depth = false;
    bool freeze_pose = false;
    bool freeze_flow = false;
    bool freeze_mask = false;

    NodePtr depth_forward(Tape& tape, const Tensor& image) const;       // {1,H,W}
    PoseOut pose_forward(Tape& tape, const Tensor& img_t, const Tensor& img_s) const;
    // single shared-encoder pass; {3,H,W} flow and {1,H,W} mask in (0,1)
    std::pair<NodePtr, NodePtr> flow_mask_forward(Tape& tape, const Tensor& img_t,
                                                  const Tensor& img_s) const;
    NodePtr flow_forward(Tape& tape, const Tensor& img_t, const Tensor& img_s) const;
    NodePtr mask_forward(Tape& tape, const Tensor& img_t, const Tensor& img_s) const;

    // groups: depth, pose, cm_encoder, flow_decoder, mask_decoder
    std::vector<ParamGroup> param_groups();
    std::vector<Tensor*> all_params();

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

    // cm encoder exposed so tests can poke shared parameters
    nn::Encoder& cm_encoder() { return cm_enc_; }

private:
    nn::Encoder depth_enc_, pose_enc_, cm_enc_;
    nn::Decoder depth_dec_, flow_dec_, mask_dec_;
    nn::PoseHead pose_head_;

    static Tensor pair_input(const Tensor& a, const Tensor& b);
};

}  // namespace monoflow::models
