#pragma once

// Pinhole camera math and 3D flow synthesis, double precision throughout.
//
// Conventions (fixed for the whole project): camera looks down +Z, +X right,
// +Y down, pixel origin at the top-left. A relative pose T maps target-frame
// points into the source frame, rotation applied before translation.

#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "monoflow/common.hpp"

namespace monoflow::geom {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct CameraIntrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const {
        if (!(fx > 0) || !(fy > 0)) throw ConfigError("intrinsics: focal lengths must be > 0");
        if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
            throw ConfigError("intrinsics: principal point outside image");
    }
    Mat3 matrix() const {
        Mat3 k = Mat3::Identity();
        k(0, 0) = fx; k(1, 1) = fy; k(0, 2) = cx; k(1, 2) = cy;
        return k;
    }
};

struct PoseSE3 {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static PoseSE3 identity() { return {}; }

    bool is_valid(double tol = 1e-9) const {
        return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
               std::abs(rotation.determinant() - 1.0) <= tol;
    }
    void validate(double tol = 1e-9) const {
        if (!is_valid(tol)) throw ConfigError("pose: rotation is not a proper rotation matrix");
    }

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    PoseSE3 inverse() const {
        PoseSE3 out;
        out.rotation = rotation.transpose();
        out.translation = -(rotation.transpose() * translation);
        return out;
    }
    PoseSE3 compose(const PoseSE3& rhs) const {  // this ∘ rhs
        PoseSE3 out;
        out.rotation = rotation * rhs.rotation;
        out.translation = rotation * rhs.translation + translation;
        return out;
    }
};

// Dense per-pixel fields. Row-major storage, index (y, x).
struct DepthMap {
    int width = 0, height = 0;
    Eigen::ArrayXXd values;  // height x width

    DepthMap() = default;
    DepthMap(int w, int h, double fill = 1.0)
        : width(w), height(h), values(Eigen::ArrayXXd::Constant(h, w, fill)) {}

    double at(int x, int y) const { return values(y, x); }
    double& at(int x, int y) { return values(y, x); }

    bool is_valid() const { return values.isFinite().all() && (values > 0.0).all(); }
    void validate() const {
        if (!is_valid()) throw ConfigError("depth map: values must be finite and > 0");
    }
};

struct FlowField3 {
    int width = 0, height = 0;
    std::array<Eigen::ArrayXXd, 3> ch;  // x, y, z components, each height x width

    FlowField3() = default;
    FlowField3(int w, int h) : width(w), height(h) {
        for (auto& c : ch) c = Eigen::ArrayXXd::Zero(h, w);
    }

    Vec3 at(int x, int y) const { return {ch[0](y, x), ch[1](y, x), ch[2](y, x)}; }
    void set(int x, int y, const Vec3& v) {
        ch[0](y, x) = v.x(); ch[1](y, x) = v.y(); ch[2](y, x) = v.z();
    }
    bool is_finite() const {
        return ch[0].isFinite().all() && ch[1].isFinite().all() && ch[2].isFinite().all();
    }
};

struct MotionMask {
    int width = 0, height = 0;
    Eigen::ArrayXXd values;  // height x width, in [0,1]

    MotionMask() = default;
    MotionMask(int w, int h, double fill = 0.0)
        : width(w), height(h), values(Eigen::ArrayXXd::Constant(h, w, fill)) {}

    void validate() const {
        if (!((values >= 0.0).all() && (values <= 1.0).all()))
            throw ConfigError("motion mask: values must lie in [0,1]");
    }
};

// ---------------------------------------------------------------------------
// Operations

// P = d * K^{-1} * (px, py, 1); P_z == d by construction.
Vec3 backproject(const Vec2& pixel, double depth, const CameraIntrinsics& K);

// (fx Px/Pz + cx, fy Py/Pz + cy). Throws if P_z <= 0; may land out of bounds.
Vec2 project(const Vec3& point, const CameraIntrinsics& K);

// Per-pixel F_R(p) = T*P(p) - P(p) with P backprojected from the depth map.
FlowField3 rigid_flow(const DepthMap& depth, const PoseSE3& pose, const CameraIntrinsics& K);

struct ComposedFlow {
    FlowField3 independent;   // F_I = M * (F_C - F_R)
    FlowField3 warp_points;   // P_hat_s = M*F_C + (1-M)*F_R + P_t
};

ComposedFlow compose_flows(const FlowField3& rigid, const FlowField3& complete,
                           const MotionMask& mask, const DepthMap& depth,
                           const CameraIntrinsics& K);

// Instantaneous flow of a point at normalized coordinate x under pure forward
// camera motion: xdot = -(Zdot/Z) * x.
double epipolar_flow(double x_norm, double depth, double depth_rate);

struct AmbiguousSolution {
    double depth;
    double independent_depth_rate;
};

// The one-parameter family of (depth, independent depth-rate) pairs that all
// reproduce the observed flow at x_norm given the ego-induced depth rate.
// Depths are sampled log-uniformly over [z_min, z_max].
std::vector<AmbiguousSolution> ambiguity_family(double x_norm, double flow,
                                                double ego_depth_rate, int samples,
                                                double z_min = 1.0, double z_max = 100.0);

// Rodrigues exponential map, exact at the identity.
Mat3 so3_exp(const Vec3& axis_angle);

}  // namespace monoflow::geom
