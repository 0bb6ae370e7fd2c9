#include "monoflow/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <thread>

#include "monoflow/array_io.hpp"
#include "monoflow/reconstruction.hpp"

namespace fs = std::filesystem;

namespace monoflow::train {

// ---------------------------------------------------------------------------
// schedules / config

TrainSchedule TrainSchedule::desk() {
    TrainSchedule s;
    s.epoch_size = 250;
    s.batch_size = 4;
    s.ramp_iterations = 300;
    // auto-masking stays on through flow-init, off from motion-init onward
    s.stages = {
        {"depth-init", 2, true, true, false, false, true, false, -1.0},
        {"flow-init", 1, false, false, true, false, true, true, 1.0},
        {"motion-init", 5, false, false, true, true, false, true, -1.0},
        {"joint", 20, true, true, true, true, false, true, -1.0},
    };
    return s;
}

TrainSchedule TrainSchedule::paper() {
    TrainSchedule s = desk();
    s.epoch_size = 8000;
    s.batch_size = 12;
    s.ramp_iterations = 2666;
    s.stages[0].epochs = 1;  // ImageNet-pretrained regime
    return s;
}

void TrainSchedule::validate() const {
    if (stages.empty()) throw ConfigError("schedule: no stages");
    for (const auto& st : stages)
        if (st.epochs < 1) throw ConfigError("schedule: every stage needs >= 1 epoch");
    if (epoch_size < 1 || batch_size < 1) throw ConfigError("schedule: bad sizes");
    if (!(lr_initial > 0) || !(lr_after_drop > 0)) throw ConfigError("schedule: bad lr");
}

nlohmann::json TrainSchedule::to_json() const {
    nlohmann::json j;
    auto stg = nlohmann::json::array();
    for (const auto& s : stages)
        stg.push_back({{"name", s.name},
                       {"epochs", s.epochs},
                       {"train_depth", s.train_depth},
                       {"train_pose", s.train_pose},
                       {"train_flow", s.train_flow},
                       {"train_mask", s.train_mask},
                       {"auto_mask", s.auto_mask},
                       {"use_flow_mask", s.use_flow_mask},
                       {"force_mask", s.force_mask}});
    j["stages"] = stg;
    j["epoch_size"] = epoch_size;
    j["batch_size"] = batch_size;
    j["lr_initial"] = lr_initial;
    j["lr_after_drop"] = lr_after_drop;
    j["lr_drop_after_joint_epochs"] = lr_drop_after_joint_epochs;
    j["ramp_iterations"] = ramp_iterations;
    return j;
}

TrainSchedule TrainSchedule::from_json(const nlohmann::json& j) {
    TrainSchedule s;
    s.stages.clear();
    for (const auto& sj : j.at("stages")) {
        StageDef st;
        st.name = sj.at("name").get<std::string>();
        st.epochs = sj.at("epochs").get<int>();
        st.train_depth = sj.at("train_depth").get<bool>();
        st.train_pose = sj.at("train_pose").get<bool>();
        st.train_flow = sj.at("train_flow").get<bool>();
        st.train_mask = sj.at("train_mask").get<bool>();
        st.auto_mask = sj.at("auto_mask").get<bool>();
        st.use_flow_mask = sj.at("use_flow_mask").get<bool>();
        st.force_mask = sj.at("force_mask").get<double>();
        s.stages.push_back(st);
    }
    s.epoch_size = j.at("epoch_size").get<int>();
    s.batch_size = j.at("batch_size").get<int>();
    s.lr_initial = j.at("lr_initial").get<double>();
    s.lr_after_drop = j.at("lr_after_drop").get<double>();
    s.lr_drop_after_joint_epochs = j.at("lr_drop_after_joint_epochs").get<int>();
    s.ramp_iterations = j.at("ramp_iterations").get<int>();
    s.validate();
    return s;
}

void RunConfig::apply_preset() {
    if (!schedule.stages.empty()) return;
    if (preset == "desk") schedule = TrainSchedule::desk();
    else if (preset == "paper") schedule = TrainSchedule::paper();
    else throw ConfigError("preset: must be 'desk' or 'paper'");

    if (ablation.static_baseline) {
        // static-scene constraint: depth-init then joint depth/pose only,
        // mask pinned to zero, auto-masking kept on throughout
        int total = 0;
        for (const auto& s : schedule.stages) total += s.epochs;
        StageDef init = schedule.stages[0];
        StageDef joint{"joint", total - init.epochs, true, true, false, false, true, false, 0.0};
        schedule.stages = {init, joint};
    } else if (ablation.disable_motion_init) {
        // drop flow-init and motion-init; spend the same budget jointly
        int total = 0;
        for (const auto& s : schedule.stages) total += s.epochs;
        StageDef init = schedule.stages[0];
        StageDef joint = schedule.stages.back();
        joint.epochs = total - init.epochs;
        schedule.stages = {init, joint};
    }
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    c.dataset = j.at("dataset").get<std::string>();
    c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("preset")) c.preset = j.at("preset").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        auto get = [&](const char* k, double& dst) {
            if (w.contains(k)) dst = w.at(k).get<double>();
        };
        get("alpha", c.weights.alpha);
        get("gamma_sd", c.weights.gamma_sd);
        get("gamma_sc", c.weights.gamma_sc);
        get("gamma_sm", c.weights.gamma_sm);
        get("gamma_c", c.weights.gamma_c);
        get("gamma_m", c.weights.gamma_m);
        get("gamma_g", c.weights.gamma_g);
    }
    c.weights.validate();
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        auto get = [&](const char* k, bool& dst) {
            if (a.contains(k)) dst = a.at(k).get<bool>();
        };
        get("disable_consistency", c.ablation.disable_consistency);
        get("disable_motion_init", c.ablation.disable_motion_init);
        get("disable_ground", c.ablation.disable_ground);
        get("static_baseline", c.ablation.static_baseline);
    }
    if (j.contains("schedule")) c.schedule = TrainSchedule::from_json(j.at("schedule"));
    if (j.contains("freeze_pose_in_init"))
        c.freeze_pose_in_init = j.at("freeze_pose_in_init").get<bool>();
    if (j.contains("eval_stride")) c.eval_stride = j.at("eval_stride").get<int>();
    if (j.contains("monitor_every")) c.monitor_every = j.at("monitor_every").get<int>();
    if (j.contains("threads")) c.threads = j.at("threads").get<int>();
    c.apply_preset();
    return c;
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["dataset"] = dataset;
    j["out_dir"] = out_dir;
    j["preset"] = preset;
    j["seed"] = seed;
    j["weights"] = {{"alpha", weights.alpha},     {"gamma_sd", weights.gamma_sd},
                    {"gamma_sc", weights.gamma_sc}, {"gamma_sm", weights.gamma_sm},
                    {"gamma_c", weights.gamma_c}, {"gamma_m", weights.gamma_m},
                    {"gamma_g", weights.gamma_g}};
    j["ablation"] = {{"disable_consistency", ablation.disable_consistency},
                     {"disable_motion_init", ablation.disable_motion_init},
                     {"disable_ground", ablation.disable_ground},
                     {"static_baseline", ablation.static_baseline}};
    j["schedule"] = schedule.to_json();
    j["freeze_pose_in_init"] = freeze_pose_in_init;
    j["eval_stride"] = eval_stride;
    j["monitor_every"] = monitor_every;
    j["threads"] = threads;
    return j;
}

// ---------------------------------------------------------------------------
// dataset views

namespace {
nlohmann::json load_json_file(const std::string& path) {
    io::notify_read(path);
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    nlohmann::json j;
    f >> j;
    return j;
}

std::string frame_tag(int v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", v);
    return buf;
}

Eigen::ArrayXXd array_to_map(const io::ArrayF& a) {
    if (a.shape.size() != 2) throw IoError("expected a {H,W} array");
    Eigen::ArrayXXd out(a.shape[0], a.shape[1]);
    for (int y = 0; y < a.shape[0]; ++y)
        for (int x = 0; x < a.shape[1]; ++x)
            out(y, x) = a.data[static_cast<size_t>(y) * a.shape[1] + x];
    return out;
}
}  // namespace

Dataset::Dataset(const std::string& root) : root_(root) {
    const auto manifest = load_json_file(root + "/manifest.json");
    width_ = manifest.at("width").get<int>();
    height_ = manifest.at("height").get<int>();
    const auto& ij = manifest.at("intrinsics");
    intrinsics_ = {ij.at("fx").get<double>(), ij.at("fy").get<double>(),
                   ij.at("cx").get<double>(), ij.at("cy").get<double>(), width_, height_};
    intrinsics_.validate();

    for (const auto& sj : manifest.at("sequences"))
        seq_ranges_.push_back({sj.at("first").get<int>(), sj.at("count").get<int>()});

    const auto& frames = manifest.at("frames");
    cache_.reserve(frames.size());
    frame_seq_.reserve(frames.size());
    for (const auto& fj : frames) {
        cache_.push_back(io::read_png(root + "/" + fj.at("png").get<std::string>()));
        frame_seq_.push_back(fj.at("sequence").get<int>());
        if (cache_.back().width != width_ || cache_.back().height != height_)
            throw IoError("frame size mismatch in " + root);
    }
    for (const auto& r : seq_ranges_)
        for (int t = r.first + 1; t < r.first + r.count - 1; ++t) triplet_targets_.push_back(t);
    if (triplet_targets_.empty()) throw ConfigError("dataset has no triplets: " + root);
}

nn::Tensor Dataset::frame(int index) const {
    const auto& img = cache_.at(static_cast<size_t>(index));
    nn::Tensor t({3, height_, width_});
    const auto hw = static_cast<std::int64_t>(height_) * width_;
    for (int y = 0; y < height_; ++y)
        for (int x = 0; x < width_; ++x) {
            const std::uint8_t* px = img.at(x, y);
            const std::int64_t i = static_cast<std::int64_t>(y) * width_ + x;
            t.data[i] = px[0] / 255.0;
            t.data[hw + i] = px[1] / 255.0;
            t.data[2 * hw + i] = px[2] / 255.0;
        }
    return t;
}

Dataset::Triplet Dataset::triplet(int triplet_index) const {
    const int target = triplet_targets_.at(static_cast<size_t>(triplet_index));
    return {frame(target - 1), frame(target), frame(target + 1), target};
}

GroundTruth::GroundTruth(const std::string& root) : root_(root) {
    const auto manifest = load_json_file(root + "/manifest.json");
    width_ = manifest.at("width").get<int>();
    height_ = manifest.at("height").get<int>();
    for (const auto& fj : manifest.at("frames"))
        frame_seq_.push_back(fj.at("sequence").get<int>());

    for (const auto& sj : manifest.at("spec").at("sequences")) {
        std::vector<std::pair<bool, bool>> table(2, {false, false});  // ground, backdrop
        for (const auto& oj : sj.at("objects")) {
            const int id = oj.at("id").get<int>();
            if (id >= static_cast<int>(table.size()))
                table.resize(static_cast<size_t>(id) + 1, {false, false});
            const auto v = oj.at("velocity");
            const bool moving = std::abs(v[0].get<double>()) + std::abs(v[1].get<double>()) +
                                    std::abs(v[2].get<double>()) > 0;
            table[static_cast<size_t>(id)] = {oj.at("movable_class").get<bool>(), moving};
        }
        id_table_.push_back(std::move(table));
    }
}

Eigen::ArrayXXd GroundTruth::depth(int frame) const {
    return array_to_map(io::read_array(root_ + "/gt/depth_" + frame_tag(frame) + ".f32"));
}

Eigen::ArrayXXd GroundTruth::motion(int frame) const {
    return array_to_map(io::read_array(root_ + "/gt/motion_" + frame_tag(frame) + ".f32"));
}

Eigen::ArrayXXi GroundTruth::instance(int frame) const {
    return array_to_map(io::read_array(root_ + "/gt/instance_" + frame_tag(frame) + ".f32"))
        .cast<int>();
}

Eigen::ArrayXXi GroundTruth::split_labels(int frame) const {
    const Eigen::ArrayXXi inst = instance(frame);
    const auto& table = id_table_.at(static_cast<size_t>(frame_seq_.at(static_cast<size_t>(frame))));
    Eigen::ArrayXXi out(inst.rows(), inst.cols());
    for (int y = 0; y < inst.rows(); ++y)
        for (int x = 0; x < inst.cols(); ++x) {
            const auto id = static_cast<size_t>(inst(y, x));
            const auto [movable, moving] = id < table.size() ? table[id] : std::make_pair(false, false);
            out(y, x) = moving ? eval::kMovingObject
                               : (movable ? eval::kStaticObject : eval::kStaticBackground);
        }
    return out;
}

geom::FlowField3 GroundTruth::flow(int frame) const {
    const auto a = io::read_array(root_ + "/gt/flow_" + frame_tag(frame) + ".f32");
    if (a.shape.size() != 3 || a.shape[2] != 3) throw IoError("bad flow file shape");
    geom::FlowField3 f(a.shape[1], a.shape[0]);
    for (int y = 0; y < a.shape[0]; ++y)
        for (int x = 0; x < a.shape[1]; ++x)
            for (int c = 0; c < 3; ++c)
                f.ch[static_cast<size_t>(c)](y, x) =
                    a.data[(static_cast<size_t>(y) * a.shape[1] + x) * 3 + static_cast<size_t>(c)];
    return f;
}

Eigen::ArrayXXd GroundTruth::flow_valid(int frame) const {
    return array_to_map(io::read_array(root_ + "/gt/flow_valid_" + frame_tag(frame) + ".f32"));
}

std::vector<geom::PoseSE3> GroundTruth::poses() const {
    const auto pj = load_json_file(root_ + "/gt/poses.json");
    std::vector<geom::PoseSE3> out;
    for (const auto& p : pj) {
        geom::PoseSE3 pose;
        const auto& r = p.at("rotation");
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                pose.rotation(i, j) = r[static_cast<size_t>(3 * i + j)].get<double>();
        const auto& t = p.at("translation");
        pose.translation = {t[0].get<double>(), t[1].get<double>(), t[2].get<double>()};
        out.push_back(pose);
    }
    return out;
}

// ---------------------------------------------------------------------------
// step graph

nn::NodePtr warp_points_for_source(nn::NodePtr rigid_flow_s, nn::NodePtr indep_flow, double sign,
                                   nn::NodePtr cam_points) {
    using namespace nn;
    NodePtr flow = sign >= 0 ? std::move(indep_flow) : neg(std::move(indep_flow));
    return add(add(std::move(rigid_flow_s), std::move(flow)), std::move(cam_points));
}

StepGraph build_step(models::NetworkBundle& nets, nn::Tape& tape, const Dataset::Triplet& trip,
                     const geom::CameraIntrinsics& K, const loss::LossWeights& weights,
                     const StepFlags& flags, Rng& ransac_rng) {
    using namespace nn;
    constexpr double kInf = std::numeric_limits<double>::infinity();

    StepGraph g;
    g.depth = nets.depth_forward(tape, trip.target);
    auto pose_prev = nets.pose_forward(tape, trip.target, trip.prev);
    auto pose_next = nets.pose_forward(tape, trip.target, trip.next);
    {
        const auto& r = pose_next.rot9->value.data;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) g.pose_next.rotation(i, j) = r[3 * i + j];
        const auto& t = pose_next.trans3->value.data;
        g.pose_next.translation = {t[0], t[1], t[2]};
    }

    NodePtr cam_points = backproject_node(g.depth, K.fx, K.fy, K.cx, K.cy);
    NodePtr rigid_prev = rigid_transform(cam_points, pose_prev.rot9, pose_prev.trans3);
    NodePtr rigid_next = rigid_transform(cam_points, pose_next.rot9, pose_next.trans3);
    g.rigid_prev = rigid_prev;
    g.rigid_next = rigid_next;

    NodePtr warp_prev, warp_next;
    if (flags.use_flow_mask) {
        NodePtr flow_c, mask;
        if (flags.force_mask >= 0.0) {
            flow_c = nets.flow_forward(tape, trip.target, trip.next);
            mask = constant(Tensor({1, K.height, K.width}, flags.force_mask));
        } else {
            auto fm = nets.flow_mask_forward(tape, trip.target, trip.next);
            flow_c = fm.first;
            mask = fm.second;
            g.mask = mask;
        }
        g.flow = flow_c;
        NodePtr indep = mul_bc(sub(flow_c, rigid_next), mask);  // F_I = M (F_C - F_R)
        warp_next = warp_points_for_source(rigid_next, indep, +1.0, cam_points);
        warp_prev = warp_points_for_source(rigid_prev, indep, -1.0, cam_points);
    } else {
        warp_next = add(rigid_next, cam_points);
        warp_prev = add(rigid_prev, cam_points);
    }

    auto recon_prev = recon::warp(trip.prev, warp_prev, K);
    auto recon_next = recon::warp(trip.next, warp_next, K);
    NodePtr tgt = constant(trip.target);
    auto ph_prev = recon::photometric_loss(tgt, recon_prev.image, weights.alpha);
    auto ph_next = recon::photometric_loss(tgt, recon_next.image, weights.alpha);
    NodePtr map_prev = masked_fill(ph_prev.map, recon_prev.valid, kInf);
    NodePtr map_next = masked_fill(ph_next.map, recon_next.valid, kInf);
    NodePtr min_map = recon::min_reprojection(map_prev, map_next);
    g.photometric_map = min_map;

    Tensor keep({1, K.height, K.width}, 1.0);
    if (flags.auto_mask_on) {
        auto id_prev = recon::photometric_loss(tgt, constant(trip.prev), weights.alpha);
        auto id_next = recon::photometric_loss(tgt, constant(trip.next), weights.alpha);
        Tensor min_identity({1, K.height, K.width});
        min_identity.data = id_prev.map->value.data.min(id_next.map->value.data);
        keep = recon::auto_mask(min_map->value, min_identity);
    }
    {
        g.loss_pixels = Tensor({1, K.height, K.width});
        g.loss_pixels.data = keep.data * min_map->value.data.isFinite().cast<double>();
    }
    NodePtr l_recon = mean_finite(flags.auto_mask_on ? masked_fill(min_map, keep, kInf) : min_map);

    auto [d_star, mean_inv] = loss::normalized_inverse_depth_with_mean(g.depth);
    NodePtr smooth = loss::smoothness_total(flags.smooth_depth ? d_star : nullptr,
                                            flags.smooth_flow ? g.flow : nullptr,
                                            flags.smooth_mask ? g.mask : nullptr, tgt, weights,
                                            flags.cm_ramp);

    NodePtr l_c, l_m, l_g;
    if (flags.enable_consistency && g.flow && g.mask)
        l_c = loss::motion_consistency(g.flow, rigid_next, g.mask);
    if (flags.enable_sparsity && g.flow && g.mask) {
        Tensor fd = loss::flow_discrepancy(g.flow->value, rigid_next->value);
        l_m = loss::motion_sparsity(fd, g.mask);
    }
    if (flags.enable_ground) {
        if (flags.fixed_plane) {
            l_g = loss::above_ground(d_star, mean_inv, *flags.fixed_plane);
        } else if (auto plane = loss::fit_ground_plane(g.depth->value, K, ransac_rng)) {
            l_g = loss::above_ground(d_star, mean_inv, *plane);
        }
    }

    auto total = loss::total_loss(l_recon, smooth, l_c, l_m, l_g, weights, flags.cm_ramp);
    g.total = total.total;
    g.losses = total.values;
    return g;
}

// ---------------------------------------------------------------------------
// trainer

Trainer::Trainer(RunConfig cfg)
    : cfg_(std::move(cfg)),
      data_(cfg_.dataset),
      nets_(models::NetworkBundle::create(cfg_.seed)),
      batch_rng_(Rng(cfg_.seed).fork(101)),
      ransac_rng_(Rng(cfg_.seed).fork(102)) {
    cfg_.schedule.validate();
    if (cfg_.monitor_every > 0) {
        io::AuditScope scope("monitor");
        gt_.emplace(cfg_.dataset);
        // one probe frame per sequence, up to 8 sequences
        for (size_t s = 0; s < data_.sequences().size() && probe_frames_.size() < 8; ++s)
            probe_frames_.push_back(data_.sequences()[s].first + data_.sequences()[s].count / 2);
    }
    auto groups = nets_.param_groups();
    optimizers_.assign(groups.size(), nn::Adam(cfg_.schedule.lr_initial));
}

void Trainer::set_freezes(const StageDef& stage) {
    nets_.freeze_depth = !stage.train_depth;
    nets_.freeze_pose = !stage.train_pose;
    nets_.freeze_flow = !stage.train_flow;
    nets_.freeze_mask = !stage.train_mask;
}

StepFlags Trainer::flags_for(const StageDef& stage, int stage_iter) const {
    StepFlags f;
    f.use_flow_mask = stage.use_flow_mask;
    f.force_mask = stage.force_mask;
    f.auto_mask_on = stage.auto_mask;
    f.smooth_depth = true;
    const bool network_mask = f.use_flow_mask && f.force_mask < 0.0;
    f.smooth_flow = f.use_flow_mask;
    f.smooth_mask = network_mask;
    f.enable_consistency = network_mask && !cfg_.ablation.disable_consistency;
    f.enable_sparsity = network_mask;
    f.enable_ground = !cfg_.ablation.disable_ground && stage.train_depth;
    const int ramp_len = std::max(1, cfg_.schedule.ramp_iterations);
    f.cm_ramp = f.use_flow_mask ? std::min(1.0, double(stage_iter + 1) / ramp_len) : 1.0;
    return f;
}

loss::LossBreakdown Trainer::train_step(const std::vector<int>& triplet_indices,
                                        const StageDef& stage, int stage_iter) {
    set_freezes(stage);
    const StepFlags flags = flags_for(stage, stage_iter);
    const int n = static_cast<int>(triplet_indices.size());

    struct ItemResult {
        nn::Tape tape;
        loss::LossBreakdown losses;
        std::string fault;
    };
    std::vector<ItemResult> items(static_cast<size_t>(n));
    std::vector<Rng> item_rngs;
    item_rngs.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) item_rngs.push_back(ransac_rng_.fork(static_cast<std::uint64_t>(i)));
    ransac_rng_.next_u64();  // advance the parent stream once per step

    auto work = [&](int i) {
        io::AuditScope scope("train-step");
        try {
            auto trip = data_.triplet(triplet_indices[static_cast<size_t>(i)]);
            auto g = build_step(nets_, items[static_cast<size_t>(i)].tape, trip,
                                data_.intrinsics(), cfg_.weights, flags,
                                item_rngs[static_cast<size_t>(i)]);
            items[static_cast<size_t>(i)].losses = g.losses;
            nn::backward(g.total);
        } catch (const std::exception& e) {
            items[static_cast<size_t>(i)].fault = e.what();
        }
    };

    const int workers = std::max(1, std::min(cfg_.threads, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) work(i);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (int i = w; i < n; i += workers) work(i);
            });
        for (auto& t : pool) t.join();
    }
    for (const auto& it : items)
        if (!it.fault.empty()) throw NumericalFault("train step item failed: " + it.fault);

    // deterministic accumulation in item order, then one Adam step per group
    auto groups = nets_.param_groups();
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        if (groups[gi].frozen) continue;
        std::vector<std::pair<nn::Tensor*, const nn::Tensor*>> updates;
        std::vector<nn::Tensor> summed;
        summed.reserve(groups[gi].tensors.size());
        for (nn::Tensor* param : groups[gi].tensors) {
            nn::Tensor acc(param->shape);
            bool any = false;
            for (const auto& it : items) {
                if (const nn::Tensor* grad = it.tape.gradient_of(*param)) {
                    acc.data += grad->data;
                    any = true;
                }
            }
            if (any) acc.data /= double(n);
            summed.push_back(std::move(acc));
            updates.emplace_back(param, any ? &summed.back() : nullptr);
        }
        optimizers_[gi].step(updates);
    }

    loss::LossBreakdown avg;
    for (const auto& it : items) {
        avg.recon += it.losses.recon / n;
        avg.smooth += it.losses.smooth / n;
        avg.consistency += it.losses.consistency / n;
        avg.sparsity += it.losses.sparsity / n;
        avg.ground += it.losses.ground / n;
        avg.total += it.losses.total / n;
    }
    return avg;
}

void Trainer::log_line(const nlohmann::json& j) {
    if (log_) {
        (*log_) << j.dump() << "\n";
        log_->flush();
    }
}

void Trainer::monitor(int global_iter, const StageDef& stage, int stage_iter) {
    if (!gt_ || probe_frames_.empty()) return;
    io::AuditScope scope("monitor");

    const StepFlags flags = flags_for(stage, stage_iter);
    double photo_static = 0, photo_moving = 0, absrel_static = 0, absrel_moving = 0;
    double depth_static = 0, depth_moving = 0;
    std::int64_t n_static = 0, n_moving = 0, nd_static = 0, nd_moving = 0;

    for (int frame : probe_frames_) {
        nn::Tape tape(false);
        Dataset::Triplet trip{data_.frame(frame - 1), data_.frame(frame), data_.frame(frame + 1),
                              frame};
        Rng rng = ransac_rng_.fork(777);
        auto g = build_step(nets_, tape, trip, data_.intrinsics(), cfg_.weights, flags, rng);

        const Eigen::ArrayXXd gt_motion = gt_->motion(frame);
        const Eigen::ArrayXXd gt_depth = gt_->depth(frame);
        const int W = data_.width(), H = data_.height();

        Eigen::ArrayXXd pred_depth(H, W);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                pred_depth(y, x) = g.depth->value.data[static_cast<std::int64_t>(y) * W + x];
        Eigen::ArrayXXd usable = ((gt_depth > eval::kEvalMinDepth) &&
                                  (gt_depth <= eval::kEvalMaxDepth)).cast<double>();
        const double scale = eval::median_scale(pred_depth, gt_depth, usable);

        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const std::int64_t i = static_cast<std::int64_t>(y) * W + x;
                const bool moving = gt_motion(y, x) > 0.5;
                if (g.loss_pixels.data[i] > 0.5) {
                    const double e = g.photometric_map->value.data[i];
                    if (std::isfinite(e)) {
                        (moving ? photo_moving : photo_static) += e;
                        (moving ? n_moving : n_static) += 1;
                    }
                }
                if (usable(y, x) > 0.5) {
                    const double p = std::clamp(pred_depth(y, x) * scale, eval::kEvalMinDepth,
                                                eval::kEvalMaxDepth);
                    (moving ? absrel_moving : absrel_static) +=
                        std::abs(p - gt_depth(y, x)) / gt_depth(y, x);
                    (moving ? depth_moving : depth_static) += pred_depth(y, x);
                    (moving ? nd_moving : nd_static) += 1;
                }
            }
    }

    nlohmann::json j;
    j["type"] = "diag";
    j["iter"] = global_iter;
    j["stage"] = stage.name;
    j["static"] = {{"photo", n_static ? photo_static / n_static : 0.0},
                   {"abs_rel", nd_static ? absrel_static / nd_static : 0.0},
                   {"mean_depth", nd_static ? depth_static / nd_static : 0.0}};
    j["moving"] = {{"photo", n_moving ? photo_moving / n_moving : 0.0},
                   {"abs_rel", nd_moving ? absrel_moving / nd_moving : 0.0},
                   {"mean_depth", nd_moving ? depth_moving / nd_moving : 0.0}};
    log_line(j);
}

void Trainer::run() {
    fs::create_directories(cfg_.out_dir);
    {
        std::ofstream cf(cfg_.out_dir + "/config.json");
        cf << cfg_.to_json().dump(1) << "\n";
    }
    log_ = std::make_unique<std::ofstream>(cfg_.out_dir + "/log.jsonl");

    int global_iter = 0;
    int joint_epochs_done = 0;
    for (const auto& stage : cfg_.schedule.stages) {
        set_freezes(stage);
        for (int epoch = 0; epoch < stage.epochs; ++epoch) {
            const double lr = (stage.name == "joint" &&
                               joint_epochs_done >= cfg_.schedule.lr_drop_after_joint_epochs)
                                  ? cfg_.schedule.lr_after_drop
                                  : cfg_.schedule.lr_initial;
            for (auto& opt : optimizers_) opt.set_lr(lr);

            for (int b = 0; b < cfg_.schedule.epoch_size; ++b, ++global_iter) {
                const int stage_iter = epoch * cfg_.schedule.epoch_size + b;
                std::vector<int> batch;
                {
                    io::AuditScope scope("train-step");
                    for (int i = 0; i < cfg_.schedule.batch_size; ++i)
                        batch.push_back(static_cast<int>(
                            batch_rng_.uniform_index(static_cast<std::uint64_t>(data_.triplet_count()))));
                }
                loss::LossBreakdown losses;
                try {
                    losses = train_step(batch, stage, stage_iter);
                } catch (const NumericalFault& e) {
                    throw NumericalFault("stage '" + stage.name + "' iter " +
                                         std::to_string(global_iter) + ": " + e.what());
                }
                nlohmann::json j;
                j["type"] = "step";
                j["stage"] = stage.name;
                j["iter"] = global_iter;
                j["epoch"] = epoch;
                j["lr"] = lr;
                j["loss"] = {{"recon", losses.recon},      {"smooth", losses.smooth},
                             {"consistency", losses.consistency}, {"sparsity", losses.sparsity},
                             {"ground", losses.ground},    {"total", losses.total}};
                log_line(j);

                if (cfg_.monitor_every > 0 && global_iter % cfg_.monitor_every == 0)
                    monitor(global_iter, stage, stage_iter);
            }
            if (stage.name == "joint") ++joint_epochs_done;
            nets_.save_checkpoint(cfg_.out_dir + "/ckpt_" + stage.name + "_" +
                                  std::to_string(epoch + 1));
        }
    }
    nets_.save_checkpoint(cfg_.out_dir + "/ckpt_final");

    {
        io::AuditScope scope("eval");
        GroundTruth gt(cfg_.dataset);
        const auto metrics = run_evaluation(nets_, data_, gt, cfg_.eval_stride);
        std::ofstream mf(cfg_.out_dir + "/metrics.json");
        mf << metrics.dump(1) << "\n";
    }
    log_.reset();
}

// ---------------------------------------------------------------------------
// evaluation

nlohmann::json run_evaluation(models::NetworkBundle& nets, const Dataset& data,
                              const GroundTruth& gt, int eval_stride) {
    io::AuditScope scope("eval");
    eval::DepthEvaluator depth_eval;
    eval::MotionPrAccumulator pr;
    double epe_sum = 0;
    int epe_count = 0;

    const int W = data.width(), H = data.height();
    for (const auto& seq : data.sequences()) {
        for (int f = seq.first; f < seq.first + seq.count; f += eval_stride) {
            nn::Tape tape(false);
            auto depth_node = nets.depth_forward(tape, data.frame(f));
            Eigen::ArrayXXd pred(H, W);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    pred(y, x) = depth_node->value.data[static_cast<std::int64_t>(y) * W + x];

            const Eigen::ArrayXXd gt_depth = gt.depth(f);
            const Eigen::ArrayXXd valid = Eigen::ArrayXXd::Ones(H, W);
            depth_eval.add_image(pred, gt_depth, valid, gt.split_labels(f));

            if (f + 1 < seq.first + seq.count) {
                nn::Tape t2(false);
                auto [flow_node, mask_node] =
                    nets.flow_mask_forward(t2, data.frame(f), data.frame(f + 1));
                Eigen::ArrayXXd pred_mask(H, W);
                geom::FlowField3 pred_flow(W, H);
                const auto hw = static_cast<std::int64_t>(H) * W;
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) {
                        const std::int64_t i = static_cast<std::int64_t>(y) * W + x;
                        pred_mask(y, x) = mask_node->value.data[i];
                        pred_flow.set(x, y,
                                      {flow_node->value.data[i], flow_node->value.data[hw + i],
                                       flow_node->value.data[2 * hw + i]});
                    }
                pr.add(pred_mask, gt.motion(f));
                epe_sum += eval::flow_epe(pred_flow, gt.flow(f), gt.flow_valid(f));
                ++epe_count;
            }
        }
    }

    // odometry over full sequences
    const auto gt_poses = gt.poses();
    nlohmann::json ate_json;
    {
        const int long_window = 30;
        std::vector<double> w5_all, wl_all;
        for (const auto& seq : data.sequences()) {
            std::vector<geom::PoseSE3> pred_chain, gt_chain;
            geom::PoseSE3 cur;  // identity
            pred_chain.push_back(cur);
            for (int f = seq.first; f + 1 < seq.first + seq.count; ++f) {
                nn::Tape tape(false);
                auto pose = nets.pose_forward(tape, data.frame(f), data.frame(f + 1));
                geom::PoseSE3 rel;
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j)
                        rel.rotation(i, j) = pose.rot9->value.data[3 * i + j];
                rel.translation = {pose.trans3->value.data[0], pose.trans3->value.data[1],
                                   pose.trans3->value.data[2]};
                cur = cur.compose(rel.inverse());
                pred_chain.push_back(cur);
            }
            for (int f = seq.first; f < seq.first + seq.count; ++f)
                gt_chain.push_back(gt_poses.at(static_cast<size_t>(f)));

            if (auto r = eval::odometry_ate(pred_chain, gt_chain, 5)) w5_all.push_back(r->mean);
            if (auto r = eval::odometry_ate(pred_chain, gt_chain, long_window))
                wl_all.push_back(r->mean);
        }
        auto summarize = [](const std::vector<double>& v) {
            nlohmann::json j;
            if (v.empty()) return nlohmann::json(nullptr);
            double mean = 0, sd = 0;
            for (double e : v) mean += e;
            mean /= static_cast<double>(v.size());
            for (double e : v) sd += (e - mean) * (e - mean);
            sd = std::sqrt(sd / static_cast<double>(v.size()));
            j["mean"] = mean;
            j["std"] = sd;
            j["count"] = v.size();
            return j;
        };
        ate_json["w5"] = summarize(w5_all);
        ate_json["w30"] = summarize(wl_all);
    }

    nlohmann::json out;
    out["splits"] = depth_eval.to_json();
    const auto curve = pr.curve(eval::MotionPrAccumulator::default_thresholds());
    out["motion_segmentation"] = curve.to_json();
    out["ate"] = ate_json;
    out["flow_epe"] = epe_count ? epe_sum / epe_count : 0.0;
    return out;
}

nlohmann::json overfit_probe(const std::string& run_dir) {
    std::ifstream f(run_dir + "/log.jsonl");
    if (!f) throw IoError("missing log: " + run_dir + "/log.jsonl");
    struct Diag {
        int iter;
        double photo_moving, absrel_moving, photo_static, absrel_static;
    };
    std::vector<Diag> diags;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("type") || j["type"] != "diag") continue;
        diags.push_back({j.at("iter").get<int>(), j.at("moving").at("photo").get<double>(),
                         j.at("moving").at("abs_rel").get<double>(),
                         j.at("static").at("photo").get<double>(),
                         j.at("static").at("abs_rel").get<double>()});
    }

    nlohmann::json out;
    out["diag_count"] = diags.size();
    if (diags.size() < 6) {
        out["conclusive"] = false;
        return out;
    }
    const size_t third = diags.size() / 3;
    auto avg = [&](size_t lo, size_t hi, auto field) {
        double s = 0;
        for (size_t i = lo; i < hi; ++i) s += field(diags[i]);
        return s / static_cast<double>(hi - lo);
    };
    const double pm_early = avg(0, third, [](const Diag& d) { return d.photo_moving; });
    const double pm_late = avg(diags.size() - third, diags.size(),
                               [](const Diag& d) { return d.photo_moving; });
    const double am_early = avg(0, third, [](const Diag& d) { return d.absrel_moving; });
    const double am_late = avg(diags.size() - third, diags.size(),
                               [](const Diag& d) { return d.absrel_moving; });
    const double as_late = avg(diags.size() - third, diags.size(),
                               [](const Diag& d) { return d.absrel_static; });

    out["conclusive"] = true;
    out["moving_photo_early"] = pm_early;
    out["moving_photo_late"] = pm_late;
    out["moving_abs_rel_early"] = am_early;
    out["moving_abs_rel_late"] = am_late;
    out["static_abs_rel_late"] = as_late;
    // the overfitting signature: reconstruction of movers improves while
    // their depth error fails to improve along with it
    out["signature_detected"] = pm_late < pm_early && am_late > 0.9 * am_early;
    out["moving_over_static_abs_rel"] = as_late > 0 ? am_late / as_late : 0.0;
    return out;
}

}  // namespace monoflow::train
