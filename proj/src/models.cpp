#include "monoflow/models.hpp"

#include <cstdio>
#include <cstring>

#include <nlohmann/json.hpp>

#include "monoflow/array_io.hpp"
#include "monoflow/common.hpp"

namespace monoflow::models {

namespace {
constexpr std::array<int, 4> kEncCh = {12, 24, 48, 64};
constexpr std::array<int, 3> kDecCh = {48, 24, 16};
constexpr double kOutputScale = 0.01;
}  // namespace

NetworkBundle NetworkBundle::create(std::uint64_t seed) {
    NetworkBundle b;
    Rng root(seed);
    Rng r0 = root.fork(1), r1 = root.fork(2), r2 = root.fork(3), r3 = root.fork(4),
        r4 = root.fork(5), r5 = root.fork(6), r6 = root.fork(7);
    b.depth_enc_.init(3, kEncCh, r0);
    b.depth_dec_.init(kEncCh, kDecCh, 1, r1);
    b.pose_enc_.init(6, kEncCh, r2);
    b.pose_head_.init(kEncCh[3], r3);
    b.cm_enc_.init(6, kEncCh, r4);
    b.flow_dec_.init(kEncCh, kDecCh, 3, r5);
    b.mask_dec_.init(kEncCh, kDecCh, 1, r6);
    return b;
}

Tensor NetworkBundle::pair_input(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape || a.shape.size() != 3)
        throw ConfigError("pair_input: images must share {3,H,W}");
    Tensor out({a.shape[0] + b.shape[0], a.shape[1], a.shape[2]});
    out.data.head(a.numel()) = a.data;
    out.data.tail(b.numel()) = b.data;
    return out;
}

NodePtr NetworkBundle::depth_forward(Tape& tape, const Tensor& image) const {
    if (image.shape.size() != 3 || image.shape[0] != 3)
        throw ConfigError("depth_forward: image must be {3,H,W}");
    auto feats = depth_enc_.forward(tape, nn::constant(image), freeze_depth);
    NodePtr logits = depth_dec_.forward(tape, feats, freeze_depth);
    // inverse depth = a*sigmoid + b spans [1/max, 1/min]
    const double b = 1.0 / kMaxDepth;
    const double a = 1.0 / kMinDepth - b;
    NodePtr disp = add_scalar(mul_scalar(sigmoid(logits), a), b);
    NodePtr depth = reciprocal(disp);
    if (!depth->value.data.isFinite().all())
        throw NumericalFault("depth_forward: non-finite activations");
    return depth;
}

PoseOut NetworkBundle::pose_forward(Tape& tape, const Tensor& img_t, const Tensor& img_s) const {
    auto feats = pose_enc_.forward(tape, nn::constant(pair_input(img_t, img_s)), freeze_pose);
    NodePtr six = pose_head_.forward(tape, feats.e3, freeze_pose);
    PoseOut out;
    out.axis_angle = nn::slice_vec(six, 0, 3);
    out.trans3 = nn::slice_vec(six, 3, 6);
    out.rot9 = nn::so3_exp_node(out.axis_angle);
    return out;
}

std::pair<NodePtr, NodePtr> NetworkBundle::flow_mask_forward(Tape& tape, const Tensor& img_t,
                                                             const Tensor& img_s) const {
    const bool enc_frozen = freeze_flow && freeze_mask;
    auto feats = cm_enc_.forward(tape, nn::constant(pair_input(img_t, img_s)), enc_frozen);
    NodePtr flow = mul_scalar(flow_dec_.forward(tape, feats, freeze_flow), kOutputScale);
    NodePtr mask = sigmoid(mask_dec_.forward(tape, feats, freeze_mask));
    return {flow, mask};
}

NodePtr NetworkBundle::flow_forward(Tape& tape, const Tensor& img_t, const Tensor& img_s) const {
    const bool enc_frozen = freeze_flow && freeze_mask;
    auto feats = cm_enc_.forward(tape, nn::constant(pair_input(img_t, img_s)), enc_frozen);
    return mul_scalar(flow_dec_.forward(tape, feats, freeze_flow), kOutputScale);
}

NodePtr NetworkBundle::mask_forward(Tape& tape, const Tensor& img_t, const Tensor& img_s) const {
    const bool enc_frozen = freeze_flow && freeze_mask;
    auto feats = cm_enc_.forward(tape, nn::constant(pair_input(img_t, img_s)), enc_frozen);
    return sigmoid(mask_dec_.forward(tape, feats, freeze_mask));
}

std::vector<ParamGroup> NetworkBundle::param_groups() {
    std::vector<ParamGroup> g(5);
    g[0].name = "depth";
    g[0].tensors = depth_enc_.params();
    for (Tensor* t : depth_dec_.params()) g[0].tensors.push_back(t);
    g[0].frozen = freeze_depth;
    g[1].name = "pose";
    g[1].tensors = pose_enc_.params();
    for (Tensor* t : pose_head_.params()) g[1].tensors.push_back(t);
    g[1].frozen = freeze_pose;
    g[2].name = "cm_encoder";
    g[2].tensors = cm_enc_.params();
    g[2].frozen = freeze_flow && freeze_mask;
    g[3].name = "flow_decoder";
    g[3].tensors = flow_dec_.params();
    g[3].frozen = freeze_flow;
    g[4].name = "mask_decoder";
    g[4].tensors = mask_dec_.params();
    g[4].frozen = freeze_mask;
    return g;
}

std::vector<Tensor*> NetworkBundle::all_params() {
    std::vector<Tensor*> out;
    for (auto& g : param_groups())
        for (Tensor* t : g.tensors) out.push_back(t);
    return out;
}

void NetworkBundle::save_checkpoint(const std::string& path) const {
    auto& self = const_cast<NetworkBundle&>(*this);
    auto params = self.all_params();
    nlohmann::json hdr;
    hdr["magic"] = "monoflow-ckpt-1";
    auto shapes = nlohmann::json::array();
    for (Tensor* t : params) shapes.push_back(t->shape);
    hdr["shapes"] = shapes;
    const std::string line = hdr.dump() + "\n";

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open for write: " + path);
    bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size();
    for (Tensor* t : params)
        ok = ok && std::fwrite(t->data.data(), sizeof(double),
                               static_cast<size_t>(t->numel()), f) == static_cast<size_t>(t->numel());
    ok = std::fclose(f) == 0 && ok;
    if (!ok) throw IoError("short checkpoint write: " + path);
}

void NetworkBundle::load_checkpoint(const std::string& path) {
    io::notify_read(path);
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open: " + path);
    std::string line;
    int c;
    while ((c = std::fgetc(f)) != EOF && c != '\n') line.push_back(static_cast<char>(c));
    auto params = all_params();
    try {
        auto hdr = nlohmann::json::parse(line);
        if (hdr.at("magic").get<std::string>() != "monoflow-ckpt-1")
            throw IoError("not a checkpoint: " + path);
        auto shapes = hdr.at("shapes");
        if (shapes.size() != params.size()) throw IoError("checkpoint layout mismatch: " + path);
        for (size_t i = 0; i < params.size(); ++i)
            if (shapes[i].get<std::vector<int>>() != params[i]->shape)
                throw IoError("checkpoint shape mismatch: " + path);
    } catch (const nlohmann::json::exception& e) {
        std::fclose(f);
        throw IoError("bad checkpoint header: " + path + ": " + e.what());
    }
    for (Tensor* t : params) {
        if (std::fread(t->data.data(), sizeof(double), static_cast<size_t>(t->numel()), f) !=
            static_cast<size_t>(t->numel())) {
            std::fclose(f);
            throw IoError("truncated checkpoint: " + path);
        }
    }
    std::fclose(f);
}

}  // namespace monoflow::models
