#include "monoflow/geometry.hpp"

#include <cmath>

namespace monoflow::geom {

Vec3 backproject(const Vec2& pixel, double depth, const CameraIntrinsics& K) {
    if (!(depth > 0.0)) throw ConfigError("backproject: depth must be > 0");
    return {depth * (pixel.x() - K.cx) / K.fx, depth * (pixel.y() - K.cy) / K.fy, depth};
}

Vec2 project(const Vec3& point, const CameraIntrinsics& K) {
    if (!(point.z() > 0.0)) throw ConfigError("project: point behind camera (P_z <= 0)");
    return {K.fx * point.x() / point.z() + K.cx, K.fy * point.y() / point.z() + K.cy};
}

FlowField3 rigid_flow(const DepthMap& depth, const PoseSE3& pose, const CameraIntrinsics& K) {
    depth.validate();
    pose.validate();
    FlowField3 out(depth.width, depth.height);
    for (int y = 0; y < depth.height; ++y) {
        for (int x = 0; x < depth.width; ++x) {
            const Vec3 p = backproject({double(x), double(y)}, depth.at(x, y), K);
            out.set(x, y, pose.apply(p) - p);
        }
    }
    return out;
}

ComposedFlow compose_flows(const FlowField3& rigid, const FlowField3& complete,
                           const MotionMask& mask, const DepthMap& depth,
                           const CameraIntrinsics& K) {
    if (rigid.width != complete.width || rigid.width != mask.width ||
        rigid.width != depth.width || rigid.height != complete.height ||
        rigid.height != mask.height || rigid.height != depth.height)
        throw ConfigError("compose_flows: field shapes disagree");

    ComposedFlow out{FlowField3(rigid.width, rigid.height), FlowField3(rigid.width, rigid.height)};
    for (int y = 0; y < rigid.height; ++y) {
        for (int x = 0; x < rigid.width; ++x) {
            const double m = mask.values(y, x);
            const Vec3 fr = rigid.at(x, y);
            const Vec3 fc = complete.at(x, y);
            const Vec3 pt = backproject({double(x), double(y)}, depth.at(x, y), K);
            out.independent.set(x, y, m * (fc - fr));
            out.warp_points.set(x, y, m * fc + (1.0 - m) * fr + pt);
        }
    }
    return out;
}

double epipolar_flow(double x_norm, double depth, double depth_rate) {
    if (!(depth > 0.0)) throw ConfigError("epipolar_flow: depth must be > 0");
    return -(depth_rate / depth) * x_norm;
}

std::vector<AmbiguousSolution> ambiguity_family(double x_norm, double flow,
                                                double ego_depth_rate, int samples,
                                                double z_min, double z_max) {
    if (x_norm == 0.0)
        throw ConfigError("ambiguity_family: x = 0 lies on the optical axis (degenerate)");
    if (!std::isfinite(flow)) throw ConfigError("ambiguity_family: flow must be finite");
    if (samples < 1 || !(z_min > 0.0) || !(z_max > z_min))
        throw ConfigError("ambiguity_family: bad sampling range");

    std::vector<AmbiguousSolution> family;
    family.reserve(static_cast<size_t>(samples));
    const double log_lo = std::log(z_min), log_hi = std::log(z_max);
    for (int i = 0; i < samples; ++i) {
        const double t = samples == 1 ? 0.5 : double(i) / double(samples - 1);
        const double z = std::exp(log_lo + t * (log_hi - log_lo));
        // -( (ego + indep) / z ) * x = flow  =>  indep = -flow*z/x - ego
        family.push_back({z, -flow * z / x_norm - ego_depth_rate});
    }
    return family;
}

Mat3 so3_exp(const Vec3& w) {
    const double theta2 = w.squaredNorm();
    const double theta = std::sqrt(theta2);
    Mat3 wx;
    wx << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
    double a, b;  // sin(t)/t and (1-cos(t))/t^2, series-expanded near zero
    if (theta < 1e-5) {
        a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0;
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
    } else {
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / theta2;
    }
    return Mat3::Identity() + a * wx + b * (wx * wx);
}

}  // namespace monoflow::geom
