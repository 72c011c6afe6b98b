#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "camdiff/rng.hpp"

namespace camdiff {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;
inline double deg2rad(double d) { return d * kPi / 180.0; }

// World-to-camera pose plus pinhole intrinsics. Conventions fixed repo-wide:
// right-handed world with up = (0,-1,0), camera looks down +z in its own
// frame, image y grows downward. Camera center C = -R^T t.
struct CameraPose {
    Mat3 R = Mat3::Identity();   // world-to-camera rotation
    Vec3 t = Vec3::Zero();       // world-to-camera translation, meters
    double fx = 64.0, fy = 64.0;
    double cx = 32.0, cy = 32.0;
    int width = 64, height = 64;

    Vec3 center() const { return -R.transpose() * t; }

    bool valid(double tol = 1e-6) const {
        if (!(fx > 0.0 && fy > 0.0)) return false;
        if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) return false;
        Mat3 err = R * R.transpose() - Mat3::Identity();
        return err.cwiseAbs().maxCoeff() <= tol && std::abs(R.determinant() - 1.0) <= tol;
    }
};

struct Trajectory {
    std::vector<CameraPose> poses;
    bool shared_intrinsics = true;

    int frames() const { return static_cast<int>(poses.size()); }

    void refresh_shared_intrinsics() {
        shared_intrinsics = true;
        for (const auto& p : poses) {
            const auto& f = poses.front();
            if (p.fx != f.fx || p.fy != f.fy || p.cx != f.cx || p.cy != f.cy ||
                p.width != f.width || p.height != f.height) {
                shared_intrinsics = false;
                return;
            }
        }
    }
};

// Per-pixel ray encoding: channels 0-2 unit direction d, channels 3-5
// moment m = C x d. Stored [t][i][j][c], float32.
struct PluckerMap {
    int frames = 0, height = 0, width = 0;
    std::vector<float> values;  // frames*height*width*6

    float* at(int t, int i, int j) {
        return values.data() + (((static_cast<std::size_t>(t) * height + i) * width) + j) * 6;
    }
    const float* at(int t, int i, int j) const {
        return values.data() + (((static_cast<std::size_t>(t) * height + i) * width) + j) * 6;
    }
};

struct PoseErrors {
    double trans_err = 0.0;  // normalized translation L2, dimensionless
    double rot_err = 0.0;    // mean geodesic distance, radians
    bool degenerate_translation = false;
};

struct TrajectoryConfig {
    int frames = 16;
    double r_min = 2.0;   // meters
    double r_max = 10.0;  // meters
    double azimuth_range = 360.0;    // total width, degrees, centered on +z
    double elevation_range = 50.0;   // total width, degrees, centered on 0
    double elevation_center = 15.0;  // degrees above the horizontal
    Vec3 look_at = Vec3::Zero();
    bool static_camera = false;
    int width = 64, height = 64;
    double fov_deg = 50.0;  // horizontal field of view
};

// Rotation that aims the camera at `target` from center `c`, zero roll,
// up-vector (0,-1,0) disambiguation via Gram-Schmidt.
inline Mat3 look_at_rotation(const Vec3& c, const Vec3& target) {
    Vec3 fwd = target - c;
    double n = fwd.norm();
    if (n < 1e-6) throw std::invalid_argument("look_at_rotation: degenerate direction");
    fwd /= n;
    const Vec3 down(0.0, 1.0, 0.0);  // world up is (0,-1,0); image y points down
    Vec3 ycam = down - down.dot(fwd) * fwd;
    double yn = ycam.norm();
    if (yn < 1e-9) throw std::invalid_argument("look_at_rotation: view parallel to up axis");
    ycam /= yn;
    Vec3 xcam = ycam.cross(fwd);
    Mat3 R;
    R.row(0) = xcam.transpose();
    R.row(1) = ycam.transpose();
    R.row(2) = fwd.transpose();
    return R;
}

inline CameraPose pose_from_center(const Vec3& c, const Vec3& target, const TrajectoryConfig& cfg) {
    CameraPose p;
    p.R = look_at_rotation(c, target);
    p.t = -p.R * c;
    p.width = cfg.width;
    p.height = cfg.height;
    p.fx = 0.5 * cfg.width / std::tan(0.5 * deg2rad(cfg.fov_deg));
    p.fy = p.fx;
    p.cx = 0.5 * cfg.width;
    p.cy = 0.5 * cfg.height;
    return p;
}

// Start/end centers drawn uniformly over the spherical shell [r_min, r_max]
// restricted to the azimuth/elevation window, then linear interpolation of
// centers with a fresh look-at rotation per frame.
inline Trajectory sample_trajectory(std::uint64_t rng_seed, const TrajectoryConfig& cfg) {
    if (cfg.frames < 1) throw std::invalid_argument("sample_trajectory: frames must be >= 1");
    if (!(cfg.r_min > 0.0 && cfg.r_min <= cfg.r_max))
        throw std::invalid_argument("sample_trajectory: need 0 < r_min <= r_max");

    Rng rng(rng_seed);
    auto sample_center = [&]() {
        // Shell-uniform radius, area-uniform direction within the window.
        double u = rng.uniform();
        double r3 = cfg.r_min * cfg.r_min * cfg.r_min;
        double R3 = cfg.r_max * cfg.r_max * cfg.r_max;
        double r = std::cbrt(u * (R3 - r3) + r3);
        double half_az = 0.5 * deg2rad(cfg.azimuth_range);
        double az = rng.uniform(-half_az, half_az);
        double el_lo = deg2rad(cfg.elevation_center - 0.5 * cfg.elevation_range);
        double el_hi = deg2rad(cfg.elevation_center + 0.5 * cfg.elevation_range);
        double sin_el = rng.uniform(std::sin(el_lo), std::sin(el_hi));
        double el = std::asin(sin_el);
        // Azimuth 0 is the frontal +z axis; elevation is toward world up (-y).
        Vec3 dir(std::cos(el) * std::sin(az), -std::sin(el), std::cos(el) * std::cos(az));
        return (cfg.look_at + r * dir).eval();
    };

    for (int attempt = 0; attempt < 16; ++attempt) {
        Vec3 start = sample_center();
        Vec3 end = cfg.static_camera ? start : sample_center();
        try {
            Trajectory traj;
            traj.poses.reserve(cfg.frames);
            if (cfg.static_camera) {
                CameraPose pose = pose_from_center(start, cfg.look_at, cfg);
                traj.poses.assign(cfg.frames, pose);
            } else {
                for (int k = 0; k < cfg.frames; ++k) {
                    double a = (cfg.frames > 1) ? static_cast<double>(k) / (cfg.frames - 1) : 0.0;
                    Vec3 c = (1.0 - a) * start + a * end;
                    traj.poses.push_back(pose_from_center(c, cfg.look_at, cfg));
                }
            }
            traj.refresh_shared_intrinsics();
            return traj;
        } catch (const std::invalid_argument&) {
            continue;  // degenerate look-at; resample
        }
    }
    throw std::runtime_error("sample_trajectory: no valid pose after 16 attempts");
}

// Rays through pixel centers: d = normalize(R^T K^{-1} (j+0.5, i+0.5, 1)),
// m = C x d. Intrinsics are rescaled proportionally to the output size.
inline PluckerMap plucker_embed(const Trajectory& traj, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("plucker_embed: bad output size");
    PluckerMap map;
    map.frames = traj.frames();
    map.height = out_h;
    map.width = out_w;
    map.values.resize(static_cast<std::size_t>(map.frames) * out_h * out_w * 6);
    for (int t = 0; t < map.frames; ++t) {
        const CameraPose& p = traj.poses[t];
        const double sx = static_cast<double>(out_w) / p.width;
        const double sy = static_cast<double>(out_h) / p.height;
        const double fx = p.fx * sx, fy = p.fy * sy, cx = p.cx * sx, cy = p.cy * sy;
        const Mat3 Rt = p.R.transpose();
        const Vec3 C = p.center();
        for (int i = 0; i < out_h; ++i) {
            for (int j = 0; j < out_w; ++j) {
                Vec3 ray_cam((j + 0.5 - cx) / fx, (i + 0.5 - cy) / fy, 1.0);
                Vec3 d = (Rt * ray_cam).normalized();
                Vec3 m = C.cross(d);
                float* v = map.at(t, i, j);
                for (int c = 0; c < 3; ++c) v[c] = static_cast<float>(d[c]);
                for (int c = 0; c < 3; ++c) v[3 + c] = static_cast<float>(m[c]);
            }
        }
    }
    return map;
}

// Angle of the relative rotation, arccos((trace - 1)/2), evaluated via
// atan2 of the skew/trace parts so it stays accurate near 0 and pi.
inline double geodesic_distance(const Mat3& Ra, const Mat3& Rb) {
    Mat3 M = Ra * Rb.transpose();
    double cos_term = 0.5 * (M.trace() - 1.0);
    Vec3 skew(M(2, 1) - M(1, 2), M(0, 2) - M(2, 0), M(1, 0) - M(0, 1));
    double sin_term = 0.5 * skew.norm();
    return std::atan2(sin_term, std::max(-1.0, std::min(1.0, cos_term)));
}

// Both trajectories are re-expressed relative to their own first frame, the
// reference relative translations are scaled to max norm 1 (same scale on
// the estimate), and errors are averaged over the non-first frames.
inline PoseErrors pose_error(const Trajectory& estimated, const Trajectory& reference) {
    const int n = reference.frames();
    if (estimated.frames() != n || n < 2)
        throw std::invalid_argument("pose_error: need equal lengths >= 2");

    auto relative = [](const Trajectory& tr) {
        std::vector<std::pair<Mat3, Vec3>> rel;
        const Mat3 R0t = tr.poses[0].R.transpose();
        const Vec3& t0 = tr.poses[0].t;
        rel.reserve(tr.poses.size());
        for (const auto& p : tr.poses) {
            Mat3 Rr = p.R * R0t;
            rel.emplace_back(Rr, p.t - Rr * t0);
        }
        return rel;
    };
    auto rel_est = relative(estimated);
    auto rel_ref = relative(reference);

    double max_norm = 0.0, pose_scale = 1.0;
    for (int k = 1; k < n; ++k) max_norm = std::max(max_norm, rel_ref[k].second.norm());
    for (const auto& p : reference.poses) pose_scale = std::max(pose_scale, p.t.norm());

    PoseErrors err;
    double scale = 1.0;
    if (max_norm > 1e-9 * pose_scale) {
        scale = 1.0 / max_norm;
    } else {
        err.degenerate_translation = true;  // static reference: report unscaled errors
    }

    double trans_sum = 0.0, rot_sum = 0.0;
    for (int k = 1; k < n; ++k) {
        trans_sum += (scale * rel_est[k].second - scale * rel_ref[k].second).norm();
        rot_sum += geodesic_distance(rel_est[k].first, rel_ref[k].first);
    }
    err.trans_err = trans_sum / (n - 1);
    err.rot_err = rot_sum / (n - 1);
    return err;
}

// ---- JSON serialization -------------------------------------------------

inline nlohmann::json pose_to_json(const CameraPose& p) {
    nlohmann::json j;
    std::vector<double> r(9);
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) r[a * 3 + b] = p.R(a, b);
    j["R"] = r;
    j["t"] = {p.t.x(), p.t.y(), p.t.z()};
    j["fx"] = p.fx;
    j["fy"] = p.fy;
    j["cx"] = p.cx;
    j["cy"] = p.cy;
    j["width"] = p.width;
    j["height"] = p.height;
    return j;
}

inline CameraPose pose_from_json(const nlohmann::json& j) {
    CameraPose p;
    auto r = j.at("R").get<std::vector<double>>();
    if (r.size() != 9) throw std::runtime_error("pose_from_json: R must have 9 entries");
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) p.R(a, b) = r[a * 3 + b];
    auto t = j.at("t").get<std::vector<double>>();
    if (t.size() != 3) throw std::runtime_error("pose_from_json: t must have 3 entries");
    p.t = Vec3(t[0], t[1], t[2]);
    p.fx = j.at("fx").get<double>();
    p.fy = j.at("fy").get<double>();
    p.cx = j.at("cx").get<double>();
    p.cy = j.at("cy").get<double>();
    p.width = j.at("width").get<int>();
    p.height = j.at("height").get<int>();
    return p;
}

inline nlohmann::json trajectory_to_json(const Trajectory& traj) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto& p : traj.poses) frames.push_back(pose_to_json(p));
    return nlohmann::json{{"frames", frames}};
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
    Trajectory traj;
    for (const auto& f : j.at("frames")) traj.poses.push_back(pose_from_json(f));
    traj.refresh_shared_intrinsics();
    return traj;
}

inline void save_trajectory(const std::string& path, const Trajectory& traj) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_trajectory: cannot open " + path);
    f << trajectory_to_json(traj).dump(1) << "\n";
}

inline Trajectory load_trajectory(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_trajectory: cannot open " + path);
    nlohmann::json j;
    f >> j;
    return trajectory_from_json(j);
}

}  // namespace camdiff
