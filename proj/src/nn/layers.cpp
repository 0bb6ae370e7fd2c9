#include "monoflow/nn/layers.hpp"

#include <cmath>

namespace monoflow::nn {

void Conv::init(int cin, int cout, int k, int s, int p, Rng& rng) {
    ksize = k;
    stride = s;
    pad = p;
    w = Tensor({cout, cin * k * k});
    b = Tensor({cout});
    const double std_dev = std::sqrt(2.0 / (cin * k * k));
    for (std::int64_t i = 0; i < w.numel(); ++i) w.data[i] = std_dev * rng.normal();
}

NodePtr Conv::apply(Tape& tape, NodePtr x, bool frozen) const {
    auto& self = const_cast<Conv&>(*this);
    return conv2d(std::move(x), tape.param(self.w, frozen), tape.param(self.b, frozen),
                  ksize, stride, pad);
}

void Encoder::init(int cin, const std::array<int, 4>& ch, Rng& rng) {
    c0.init(cin, ch[0], 3, 2, 1, rng);
    c1.init(ch[0], ch[1], 3, 2, 1, rng);
    c2.init(ch[1], ch[2], 3, 2, 1, rng);
    c3.init(ch[2], ch[3], 3, 2, 1, rng);
}

EncoderFeatures Encoder::forward(Tape& tape, NodePtr x, bool frozen) const {
    EncoderFeatures f;
    f.e0 = elu(c0.apply(tape, std::move(x), frozen));
    f.e1 = elu(c1.apply(tape, f.e0, frozen));
    f.e2 = elu(c2.apply(tape, f.e1, frozen));
    f.e3 = elu(c3.apply(tape, f.e2, frozen));
    return f;
}

std::vector<Tensor*> Encoder::params() {
    std::vector<Tensor*> out;
    for (Conv* c : {&c0, &c1, &c2, &c3})
        for (Tensor* t : c->params()) out.push_back(t);
    return out;
}

void Decoder::init(const std::array<int, 4>& ec, const std::array<int, 3>& dc, int out_ch,
                   Rng& rng) {
    out_channels = out_ch;
    d3.init(ec[3] + ec[2], dc[0], 3, 1, 1, rng);
    d2.init(dc[0] + ec[1], dc[1], 3, 1, 1, rng);
    d1.init(dc[1] + ec[0], dc[2], 3, 1, 1, rng);
    head.init(dc[2], out_ch, 3, 1, 1, rng);
}

NodePtr Decoder::forward(Tape& tape, const EncoderFeatures& f, bool frozen) const {
    NodePtr x = elu(d3.apply(tape, concat_ch(upsample2x(f.e3), f.e2), frozen));
    x = elu(d2.apply(tape, concat_ch(upsample2x(x), f.e1), frozen));
    x = elu(d1.apply(tape, concat_ch(upsample2x(x), f.e0), frozen));
    return upsample2x(head.apply(tape, x, frozen));
}

std::vector<Tensor*> Decoder::params() {
    std::vector<Tensor*> out;
    for (Conv* c : {&d3, &d2, &d1, &head})
        for (Tensor* t : c->params()) out.push_back(t);
    return out;
}

void PoseHead::init(int cin, Rng& rng) {
    reduce.init(cin, 32, 3, 1, 1, rng);
    out.init(32, 6, 1, 1, 0, rng);
}

NodePtr PoseHead::forward(Tape& tape, NodePtr bottleneck, bool frozen) const {
    NodePtr x = elu(reduce.apply(tape, std::move(bottleneck), frozen));
    x = out.apply(tape, x, frozen);
    return mul_scalar(spatial_mean(x), 0.01);
}

std::vector<Tensor*> PoseHead::params() {
    std::vector<Tensor*> outp;
    for (Conv* c : {&reduce, &out})
        for (Tensor* t : c->params()) outp.push_back(t);
    return outp;
}

void Adam::step(const std::vector<std::pair<Tensor*, const Tensor*>>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [param, grad] : grads) {
        if (!grad) continue;
        auto& st = state_[param];
        if (st.m.size() == 0) {
            st.m = Eigen::ArrayXd::Zero(param->numel());
            st.v = Eigen::ArrayXd::Zero(param->numel());
        }
        st.m = beta1_ * st.m + (1.0 - beta1_) * grad->data;
        st.v = beta2_ * st.v + (1.0 - beta2_) * grad->data.square();
        param->data -= lr_ * (st.m / bc1) / ((st.v / bc2).sqrt() + eps_);
    }
}

}  // namespace monoflow::nn
