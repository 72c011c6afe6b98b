#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "camdiff/camera.hpp"

namespace camdiff {

using Quat = Eigen::Quaterniond;

// Time-varying Gaussian primitive. The center track is one point (static),
// two points (endpoints interpolated over the clip) or one point per frame.
struct Gaussian4D {
    std::vector<Vec3> center_track;
    Vec3 scale = Vec3(0.1, 0.1, 0.1);      // meters, per-axis std dev
    Quat rotation = Quat::Identity();       // unit quaternion
    Vec3 color = Vec3(0.5, 0.5, 0.5);       // RGB in [0,1]
    double opacity = 1.0;                   // [0,1]
    int subject_id = 0;                     // 0 = background, k >= 1 = subject k

    Vec3 center_at(int time, int clip_frames) const {
        if (center_track.empty()) throw std::logic_error("Gaussian4D: empty center track");
        if (center_track.size() == 1) return center_track[0];
        if (center_track.size() == 2) {
            double a = (clip_frames > 1) ? static_cast<double>(time) / (clip_frames - 1) : 0.0;
            return (1.0 - a) * center_track[0] + a * center_track[1];
        }
        if (time < 0 || time >= static_cast<int>(center_track.size()))
            throw std::out_of_range("Gaussian4D: time outside center track");
        return center_track[time];
    }

    Mat3 covariance() const {
        Mat3 Rq = rotation.toRotationMatrix();
        return Rq * scale.cwiseProduct(scale).asDiagonal() * Rq.transpose();
    }
};

struct LightingParams {
    double gain = 1.0;                      // > 0
    Vec3 tint = Vec3(1.0, 1.0, 1.0);        // per-channel multipliers > 0
    Vec3 key_direction = Vec3(0.0, -1.0, 0.0);  // unit
    double key_strength = 0.0;              // >= 0; Lambert-style factor

    bool is_identity() const {
        return gain == 1.0 && tint == Vec3(1.0, 1.0, 1.0) && key_strength == 0.0;
    }
};

struct SubjectInfo {
    std::uint64_t identity_seed = 0;
    std::string token;  // identity token bound to this subject, e.g. "SUBJ_1"
};

struct Scene {
    std::vector<Gaussian4D> gaussians;
    Vec3 background_color = Vec3(0.0, 0.0, 0.0);
    LightingParams lighting;
    std::map<int, SubjectInfo> subject_registry;  // subject_id -> identity
    int clip_frames = 16;
};

// ---- JSON serialization -------------------------------------------------

inline nlohmann::json scene_to_json(const Scene& s) {
    nlohmann::json gs = nlohmann::json::array();
    for (const auto& g : s.gaussians) {
        nlohmann::json track = nlohmann::json::array();
        for (const auto& c : g.center_track) track.push_back({c.x(), c.y(), c.z()});
        gs.push_back({{"center_track", track},
                      {"scale", {g.scale.x(), g.scale.y(), g.scale.z()}},
                      {"rotation", {g.rotation.w(), g.rotation.x(), g.rotation.y(), g.rotation.z()}},
                      {"color", {g.color.x(), g.color.y(), g.color.z()}},
                      {"opacity", g.opacity},
                      {"subject_id", g.subject_id}});
    }
    nlohmann::json reg = nlohmann::json::object();
    for (const auto& [id, info] : s.subject_registry)
        reg[std::to_string(id)] = {{"identity_seed", info.identity_seed}, {"token", info.token}};
    return nlohmann::json{
        {"gaussians", gs},
        {"background_color", {s.background_color.x(), s.background_color.y(), s.background_color.z()}},
        {"lighting",
         {{"gain", s.lighting.gain},
          {"tint", {s.lighting.tint.x(), s.lighting.tint.y(), s.lighting.tint.z()}},
          {"key_direction",
           {s.lighting.key_direction.x(), s.lighting.key_direction.y(), s.lighting.key_direction.z()}},
          {"key_strength", s.lighting.key_strength}}},
        {"subject_registry", reg},
        {"clip_frames", s.clip_frames}};
}

inline Scene scene_from_json(const nlohmann::json& j) {
    Scene s;
    for (const auto& gj : j.at("gaussians")) {
        Gaussian4D g;
        for (const auto& c : gj.at("center_track"))
            g.center_track.emplace_back(c[0].get<double>(), c[1].get<double>(), c[2].get<double>());
        auto sc = gj.at("scale");
        g.scale = Vec3(sc[0], sc[1], sc[2]);
        auto q = gj.at("rotation");
        g.rotation = Quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
        auto col = gj.at("color");
        g.color = Vec3(col[0], col[1], col[2]);
        g.opacity = gj.at("opacity").get<double>();
        g.subject_id = gj.at("subject_id").get<int>();
        s.gaussians.push_back(std::move(g));
    }
    auto bg = j.at("background_color");
    s.background_color = Vec3(bg[0], bg[1], bg[2]);
    const auto& lj = j.at("lighting");
    s.lighting.gain = lj.at("gain").get<double>();
    auto tint = lj.at("tint");
    s.lighting.tint = Vec3(tint[0], tint[1], tint[2]);
    auto kd = lj.at("key_direction");
    s.lighting.key_direction = Vec3(kd[0], kd[1], kd[2]);
    s.lighting.key_strength = lj.at("key_strength").get<double>();
    for (const auto& [key, val] : j.at("subject_registry").items()) {
        SubjectInfo info;
        info.identity_seed = val.at("identity_seed").get<std::uint64_t>();
        info.token = val.at("token").get<std::string>();
        s.subject_registry[std::stoi(key)] = info;
    }
    s.clip_frames = j.at("clip_frames").get<int>();
    return s;
}

inline void save_scene(const std::string& path, const Scene& s) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_scene: cannot open " + path);
    f << scene_to_json(s).dump(1) << "\n";
}

inline Scene load_scene(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_scene: cannot open " + path);
    nlohmann::json j;
    f >> j;
    return scene_from_json(j);
}

}  // namespace camdiff
