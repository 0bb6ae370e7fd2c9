#pragma once

// Deterministic synthetic driving scenes: a textured ground plane, textured
// axis-aligned boxes (some moving collinear to the camera axis), and a far
// backdrop. Renders video triplets with dense ground truth.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "monoflow/geometry.hpp"
#include "monoflow/image.hpp"

namespace monoflow::synth {

enum class SurfaceClass : int {
    Ground = 0,
    Backdrop = 1,
    CarWarm = 2,
    CarCool = 3,
    Building = 4,
};

struct BoxObject {
    int id = 0;  // instance id; 0 = ground, 1 = backdrop, boxes from 2
    geom::Vec3 extent;    // full side lengths
    geom::Vec3 center0;   // world center at frame 0
    geom::Vec3 velocity;  // meters per frame, world frame
    std::uint64_t texture_seed = 0;
    SurfaceClass cls = SurfaceClass::CarCool;
    bool movable_class = false;  // counts toward the S.O./M.O. split

    geom::Vec3 center_at(int frame) const { return center0 + velocity * double(frame); }
    bool moving() const { return velocity.squaredNorm() > 0.0; }
};

struct SequenceSpec {
    std::vector<geom::PoseSE3> camera;  // camera-to-world, one per frame
    std::vector<BoxObject> objects;    // excludes ground/backdrop
    double backdrop_z = 100.0;         // world z of the far wall
};

struct SceneSpec {
    std::string preset = "ambiguous";  // ambiguous | static
    int width = 192, height = 64;
    geom::CameraIntrinsics intrinsics;
    int frame_count = 60;
    int sequence_count = 35;
    double ground_height = 1.4;   // world y of the plane (+y is down; camera path at y=0)
    double camera_speed = 0.5;    // m/frame along +z
    double texture_richness = 0.8;
    std::uint64_t seed = 0;
    nlohmann::json generator;     // expansion knobs, echoed to the manifest

    std::vector<SequenceSpec> sequences;  // filled by expand()

    static SceneSpec from_json(const nlohmann::json& j);  // throws ConfigError with field path
    nlohmann::json to_json() const;
    void expand();    // deterministic sequence/object synthesis from the seed
    void validate() const;
};

struct RenderOut {
    io::Image8 image;
    Eigen::ArrayXXd depth;        // camera z per pixel
    Eigen::ArrayXXi instance;     // instance id per pixel
    std::vector<Eigen::ArrayXXd> world;  // hit point, 3 planes (x,y,z)
};

// z-buffer ray cast of ground + backdrop + boxes at `frame`
RenderOut render_frame(const SequenceSpec& seq, const SceneSpec& spec, int frame);

struct SceneFlowOut {
    geom::FlowField3 flow;        // P_s(material point) - P_t, per target pixel
    Eigen::ArrayXXd valid;        // 1 where the point stays visible in the source frame
};

// true scene flow from frame -> frame+1 given the two rendered states
SceneFlowOut true_scene_flow(const SequenceSpec& seq, const SceneSpec& spec, int frame,
                             const RenderOut& state_t, const RenderOut& state_next);

// writes frames/%06d.png + gt/* + manifest.json; byte-identical per (spec, seed)
void generate(const SceneSpec& spec, const std::string& out_dir);

}  // namespace monoflow::synth
