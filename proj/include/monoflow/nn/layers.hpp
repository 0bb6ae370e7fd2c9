#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "monoflow/nn/graph.hpp"

namespace monoflow::nn {

// Per-sample build context. Parameters enter the graph as cached leaves so a
// module applied twice (e.g. the pose net on two source frames) accumulates
// into one gradient buffer.
class Tape {
public:
    explicit Tape(bool train_mode = true) : train_(train_mode) {}

    NodePtr param(Tensor& t, bool frozen) {
        auto it = leaves_.find(&t);
        if (it != leaves_.end()) return it->second;
        NodePtr n = (train_ && !frozen) ? leaf(t) : constant(t);
        leaves_.emplace(&t, n);
        return n;
    }

    // gradient accumulated for a parameter, or nullptr if absent/frozen
    const Tensor* gradient_of(const Tensor& t) const {
        auto it = leaves_.find(&t);
        if (it == leaves_.end() || !it->second->grad_ready) return nullptr;
        return &it->second->grad;
    }

private:
    bool train_;
    std::unordered_map<const Tensor*, NodePtr> leaves_;
};

struct Conv {
    Tensor w;  // {Cout, Cin*k*k}
    Tensor b;  // {Cout}
    int ksize = 3, stride = 1, pad = 1;

    void init(int cin, int cout, int k, int s, int p, Rng& rng);
    NodePtr apply(Tape& tape, NodePtr x, bool frozen) const;
    // parameters are mutated by the optimizer
    std::vector<Tensor*> params() { return {&w, &b}; }
};

struct EncoderFeatures {
    NodePtr e0, e1, e2, e3;  // strides 2, 4, 8, 16
};

// Four stride-2 conv+ELU stages.
struct Encoder {
    Conv c0, c1, c2, c3;

    void init(int cin, const std::array<int, 4>& chans, Rng& rng);
    EncoderFeatures forward(Tape& tape, NodePtr x, bool frozen) const;
    std::vector<Tensor*> params();
};

// Nearest-upsample + conv decoder with skip connections; the head runs at
// half resolution and is upsampled to full.
struct Decoder {
    Conv d3, d2, d1, head;
    int out_channels = 1;

    void init(const std::array<int, 4>& enc_chans, const std::array<int, 3>& dec_chans,
              int out_ch, Rng& rng);
    NodePtr forward(Tape& tape, const EncoderFeatures& f, bool frozen) const;
    std::vector<Tensor*> params();
};

// conv3x3 + ELU, conv1x1 to 6, global mean, x0.01 -> {6}
struct PoseHead {
    Conv reduce, out;

    void init(int cin, Rng& rng);
    NodePtr forward(Tape& tape, NodePtr bottleneck, bool frozen) const;
    std::vector<Tensor*> params();
};

// ---------------------------------------------------------------------------

struct ParamGroup {
    std::string name;
    std::vector<Tensor*> tensors;
    bool frozen = false;
};

class Adam {
public:
    Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    // one update over (param, grad) pairs; advances the shared step count
    void step(const std::vector<std::pair<Tensor*, const Tensor*>>& grads);

private:
    struct State {
        Eigen::ArrayXd m, v;
    };
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::unordered_map<const Tensor*, State> state_;
};

}  // namespace monoflow::nn
