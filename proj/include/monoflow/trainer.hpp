#pragma once

// Staged training: depth-init -> flow-init -> motion-init -> joint, with
// two source frames rectified by minimal reprojection, one sign-flipped
// independent flow for both sources, per-stage linear weight ramps for the
// flow/mask terms, and freeze flags that keep early networks untouched.

#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "monoflow/evalmetrics.hpp"
#include "monoflow/geometry.hpp"
#include "monoflow/image.hpp"
#include "monoflow/losses.hpp"
#include "monoflow/models.hpp"

namespace monoflow::train {

struct StageDef {
    std::string name;
    int epochs = 1;
    bool train_depth = false, train_pose = false, train_flow = false, train_mask = false;
    bool auto_mask = false;
    bool use_flow_mask = false;   // run the C/M subgraph at all
    double force_mask = -1.0;     // <0: network mask; else constant (0 or 1)
};

struct TrainSchedule {
    std::vector<StageDef> stages;
    int epoch_size = 250;   // batches per epoch
    int batch_size = 4;
    double lr_initial = 5e-5;
    double lr_after_drop = 2.5e-5;
    int lr_drop_after_joint_epochs = 10;
    int ramp_iterations = 300;

    static TrainSchedule desk();
    static TrainSchedule paper();
    void validate() const;
    nlohmann::json to_json() const;
    static TrainSchedule from_json(const nlohmann::json& j);
};

struct AblationSwitches {
    bool disable_consistency = false;  // drop L_c
    bool disable_motion_init = false;  // skip flow-init and motion-init stages
    bool disable_ground = false;       // drop L_g
    bool static_baseline = false;      // M forced to 0, gamma_c = gamma_m = 0
};

struct RunConfig {
    std::string dataset;
    std::string out_dir;
    std::string preset = "desk";  // desk | paper
    std::uint64_t seed = 1;
    loss::LossWeights weights;
    TrainSchedule schedule;
    AblationSwitches ablation;
    bool freeze_pose_in_init = true;  // freeze P alongside D during flow/motion init
    int eval_stride = 10;
    int monitor_every = 50;  // 0 disables diagnostics
    int threads = 2;

    static RunConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void apply_preset();  // fills schedule from the preset name if stages empty
};

// ---------------------------------------------------------------------------
// dataset views

// Training-side view: manifest + RGB frames only. There is deliberately no
// code path here that can open anything under gt/.
class Dataset {
public:
    explicit Dataset(const std::string& root);

    int frame_count() const { return static_cast<int>(cache_.size()); }
    int triplet_count() const { return static_cast<int>(triplet_targets_.size()); }
    const std::vector<int>& triplet_targets() const { return triplet_targets_; }
    int sequence_of(int frame) const { return frame_seq_.at(static_cast<size_t>(frame)); }
    const geom::CameraIntrinsics& intrinsics() const { return intrinsics_; }
    int width() const { return width_; }
    int height() const { return height_; }
    const std::string& root() const { return root_; }

    nn::Tensor frame(int index) const;  // {3,H,W} in [0,1]
    struct Triplet {
        nn::Tensor prev, target, next;
        int target_frame = 0;
    };
    Triplet triplet(int triplet_index) const;

    // sequence layout for odometry evaluation
    struct SeqRange { int first, count; };
    const std::vector<SeqRange>& sequences() const { return seq_ranges_; }

private:
    std::string root_;
    int width_ = 0, height_ = 0;
    geom::CameraIntrinsics intrinsics_;
    std::vector<io::Image8> cache_;
    std::vector<int> frame_seq_;
    std::vector<int> triplet_targets_;
    std::vector<SeqRange> seq_ranges_;
};

// Evaluation-side view over gt/; separate from Dataset so training cannot
// reach it by construction.
class GroundTruth {
public:
    explicit GroundTruth(const std::string& root);

    Eigen::ArrayXXd depth(int frame) const;
    Eigen::ArrayXXd motion(int frame) const;
    Eigen::ArrayXXi instance(int frame) const;
    Eigen::ArrayXXi split_labels(int frame) const;  // SB/SO/MO per pixel
    geom::FlowField3 flow(int frame) const;         // frame -> frame+1
    Eigen::ArrayXXd flow_valid(int frame) const;
    std::vector<geom::PoseSE3> poses() const;       // camera-to-world per frame

private:
    std::string root_;
    int width_ = 0, height_ = 0;
    // per sequence: instance id -> (movable_class, moving)
    std::vector<std::vector<std::pair<bool, bool>>> id_table_;
    std::vector<int> frame_seq_;
};

// ---------------------------------------------------------------------------
// one optimization step (exposed for oracle tests)

struct StepFlags {
    bool use_flow_mask = false;
    double force_mask = -1.0;
    bool auto_mask_on = false;
    bool smooth_depth = true;
    bool smooth_flow = false;
    bool smooth_mask = false;
    bool enable_consistency = false;
    bool enable_sparsity = false;
    bool enable_ground = false;
    double cm_ramp = 1.0;
    // test hook: pin the (detached) plane so finite differences see a fixed one
    const loss::GroundPlane* fixed_plane = nullptr;
};

struct StepGraph {
    nn::NodePtr total;
    loss::LossBreakdown losses;
    nn::NodePtr photometric_map;  // min-reprojection map {1,H,W}
    nn::Tensor loss_pixels;       // 1 where the pixel entered the photometric mean
    nn::NodePtr depth;
    nn::NodePtr mask;             // null unless the mask network ran
    nn::NodePtr flow;             // null unless the flow network ran
    nn::NodePtr rigid_prev;       // F_R toward each source (for routing checks)
    nn::NodePtr rigid_next;
    geom::PoseSE3 pose_next;      // predicted T_{t->t+1}
};

// P_hat for one source: rigid + sign * F_I + P_t
nn::NodePtr warp_points_for_source(nn::NodePtr rigid_flow_s, nn::NodePtr indep_flow,
                                   double sign, nn::NodePtr cam_points);

StepGraph build_step(models::NetworkBundle& nets, nn::Tape& tape, const Dataset::Triplet& trip,
                     const geom::CameraIntrinsics& K, const loss::LossWeights& weights,
                     const StepFlags& flags, Rng& ransac_rng);

// ---------------------------------------------------------------------------

class Trainer {
public:
    Trainer(RunConfig cfg);

    void run();  // full schedule; writes config.json, log.jsonl, checkpoints, metrics.json

    // test hooks
    models::NetworkBundle& networks() { return nets_; }
    loss::LossBreakdown train_step(const std::vector<int>& triplet_indices,
                                   const StageDef& stage, int stage_iter);
    StepFlags flags_for(const StageDef& stage, int stage_iter) const;
    const Dataset& dataset() const { return data_; }
    const RunConfig& config() const { return cfg_; }

private:
    void set_freezes(const StageDef& stage);
    void log_line(const nlohmann::json& j);
    void monitor(int global_iter, const StageDef& stage, int stage_iter);

    RunConfig cfg_;
    Dataset data_;
    std::optional<GroundTruth> gt_;  // only touched by the monitor
    models::NetworkBundle nets_;
    std::vector<nn::Adam> optimizers_;  // parallel to param groups
    Rng batch_rng_;
    Rng ransac_rng_;
    std::vector<int> probe_frames_;
    std::unique_ptr<std::ofstream> log_;
};

// full evaluation of a network bundle against a dataset with ground truth
nlohmann::json run_evaluation(models::NetworkBundle& nets, const Dataset& data,
                              const GroundTruth& gt, int eval_stride);

// parse a run's log.jsonl diagnostics into the overfitting report
nlohmann::json overfit_probe(const std::string& run_dir);

}  // namespace monoflow::train
