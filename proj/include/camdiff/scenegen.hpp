#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "camdiff/config_io.hpp"
#include "camdiff/scene.hpp"
#include "camdiff/splat.hpp"
#include "camdiff/video.hpp"
#include "camdiff/vocab.hpp"

namespace camdiff {

inline Vec3 hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    double r = std::abs(h * 6.0 - 3.0) - 1.0;
    double g = 2.0 - std::abs(h * 6.0 - 2.0);
    double b = 2.0 - std::abs(h * 6.0 - 4.0);
    Vec3 rgb(std::clamp(r, 0.0, 1.0), std::clamp(g, 0.0, 1.0), std::clamp(b, 0.0, 1.0));
    return ((rgb.array() - 1.0) * s + 1.0).matrix() * v;
}

// Derived appearance parameters that make a subject distinctive and
// view-dependent: the front and back patches carry different hues, so a
// subject seen from behind does not look like itself seen from the front.
struct SubjectSignature {
    int body_count = 0, head_count = 0, patch_count = 0, limb_count = 0, limbs = 0;
    Vec3 body_radii = Vec3::Zero();
    double head_radius = 0.0;
    double limb_length = 0.0;
    Vec3 body_color, head_color, front_color, back_color, limb_color;
};

struct IdentityDescriptor {
    std::uint64_t seed = 0;
    SubjectSignature signature;

    static IdentityDescriptor from_seed(std::uint64_t seed) {
        Rng rng(splitmix64(seed ^ 0x1DE7717Aull));
        IdentityDescriptor d;
        d.seed = seed;
        SubjectSignature& s = d.signature;
        s.body_count = rng.uniform_int(45, 70);
        s.head_count = rng.uniform_int(14, 24);
        s.patch_count = rng.uniform_int(8, 12);
        s.limbs = rng.uniform_int(2, 4);
        s.limb_count = rng.uniform_int(6, 10);
        s.body_radii = Vec3(rng.uniform(0.35, 0.55), rng.uniform(0.5, 0.8), rng.uniform(0.28, 0.45));
        s.head_radius = rng.uniform(0.18, 0.30);
        s.limb_length = rng.uniform(0.45, 0.7);
        double base_hue = rng.uniform();
        s.body_color = hsv_to_rgb(base_hue, rng.uniform(0.75, 0.95), rng.uniform(0.7, 0.95));
        s.head_color = hsv_to_rgb(base_hue + 0.35, rng.uniform(0.7, 0.95), rng.uniform(0.7, 0.95));
        s.front_color = hsv_to_rgb(base_hue + 0.18, 0.95, 0.95);
        s.back_color = hsv_to_rgb(base_hue + 0.62, 0.95, 0.9);
        s.limb_color = hsv_to_rgb(base_hue + 0.8, rng.uniform(0.6, 0.9), rng.uniform(0.55, 0.9));
        return d;
    }
};

// Articulated blob with periodic bobbing/turning. The local frame has the
// ground at y = 0 with the body extending toward negative y (world up is
// -y); the front patch faces +z. Deterministic in (identity, motion_seed).
inline std::vector<Gaussian4D> make_subject(const IdentityDescriptor& identity,
                                            std::uint64_t motion_seed, int frames) {
    if (frames < 1) throw std::invalid_argument("make_subject: frames must be >= 1");
    const SubjectSignature& sig = identity.signature;
    Rng shape_rng(splitmix64(identity.seed ^ 0x5AB5ull));
    Rng motion_rng(splitmix64(motion_seed ^ 0xB0Bull));

    const double bob_amp = motion_rng.uniform(0.04, 0.12);
    const int bob_freq = motion_rng.uniform_int(1, 2);
    const double yaw_amp = deg2rad(motion_rng.uniform(20.0, 70.0));
    const int yaw_freq = motion_rng.uniform_int(1, 2);
    const double yaw_phase = motion_rng.uniform(0.0, 2.0 * kPi);
    const double swing_amp = motion_rng.uniform(0.08, 0.2);

    struct Part {
        Vec3 local;
        Vec3 scale;
        Quat rot;
        Vec3 color;
        double opacity;
        int limb = -1;     // swing group, -1 for none
        double head = 0.0; // counter-phase bob factor
    };
    std::vector<Part> parts;

    auto rand_quat = [&](Rng& rng) {
        Vec3 axis(rng.normal(), rng.normal(), rng.normal());
        axis.normalize();
        return Quat(Eigen::AngleAxisd(rng.uniform(0.0, kPi), axis));
    };

    const double body_cy = -(sig.limb_length + sig.body_radii.y());
    for (int k = 0; k < sig.body_count; ++k) {
        Vec3 dir(shape_rng.normal(), shape_rng.normal(), shape_rng.normal());
        dir.normalize();
        double rad = std::cbrt(shape_rng.uniform());
        Part p;
        p.local = Vec3(0, body_cy, 0) + rad * dir.cwiseProduct(sig.body_radii);
        double sc = shape_rng.uniform(0.07, 0.15);
        p.scale = Vec3(sc, sc * shape_rng.uniform(0.7, 1.4), sc);
        p.rot = rand_quat(shape_rng);
        p.color = sig.body_color;
        p.opacity = shape_rng.uniform(0.8, 1.0);
        parts.push_back(p);
    }
    const double head_cy = body_cy - sig.body_radii.y() - sig.head_radius * 0.9;
    for (int k = 0; k < sig.head_count; ++k) {
        Vec3 dir(shape_rng.normal(), shape_rng.normal(), shape_rng.normal());
        dir.normalize();
        Part p;
        p.local = Vec3(0, head_cy, 0) + std::cbrt(shape_rng.uniform()) * sig.head_radius * dir;
        double sc = shape_rng.uniform(0.05, 0.1);
        p.scale = Vec3(sc, sc, sc);
        p.rot = rand_quat(shape_rng);
        p.color = sig.head_color;
        p.opacity = shape_rng.uniform(0.85, 1.0);
        p.head = 1.0;
        parts.push_back(p);
    }
    for (int side = 0; side < 2; ++side) {  // front (+z) and back (-z) patches
        for (int k = 0; k < sig.patch_count; ++k) {
            Part p;
            double z = (side == 0 ? 1.0 : -1.0) * sig.body_radii.z() * 1.02;
            p.local = Vec3(shape_rng.uniform(-0.6, 0.6) * sig.body_radii.x(),
                           body_cy + shape_rng.uniform(-0.6, 0.6) * sig.body_radii.y(), z);
            double sc = shape_rng.uniform(0.06, 0.11);
            p.scale = Vec3(sc, sc, sc * 0.5);
            p.rot = Quat::Identity();
            p.color = side == 0 ? sig.front_color : sig.back_color;
            p.opacity = shape_rng.uniform(0.9, 1.0);
            parts.push_back(p);
        }
    }
    for (int limb = 0; limb < sig.limbs; ++limb) {
        double angle = 2.0 * kPi * limb / sig.limbs + 0.4;
        Vec3 shoulder(std::cos(angle) * sig.body_radii.x() * 1.05, body_cy,
                      std::sin(angle) * sig.body_radii.z() * 1.05);
        for (int k = 0; k < sig.limb_count; ++k) {
            double a = (k + 0.5) / sig.limb_count;
            Part p;
            p.local = shoulder + Vec3(0, a * sig.limb_length, 0);
            double sc = shape_rng.uniform(0.05, 0.09);
            p.scale = Vec3(sc, sc * 1.5, sc);
            p.rot = rand_quat(shape_rng);
            p.color = sig.limb_color;
            p.opacity = shape_rng.uniform(0.85, 1.0);
            p.limb = limb;
            parts.push_back(p);
        }
    }

    std::vector<Gaussian4D> out;
    out.reserve(parts.size());
    for (const auto& part : parts) {
        Gaussian4D g;
        g.scale = part.scale;
        g.rotation = part.rot;
        g.color = part.color;
        g.opacity = part.opacity;
        g.subject_id = 1;
        g.center_track.reserve(frames);
        for (int t = 0; t < frames; ++t) {
            double tau = frames > 1 ? static_cast<double>(t) / frames : 0.0;
            double yaw = yaw_amp * std::sin(2.0 * kPi * yaw_freq * tau + yaw_phase);
            double bob = bob_amp * std::sin(2.0 * kPi * bob_freq * tau);
            Vec3 local = part.local;
            if (part.limb >= 0)
                local.z() += swing_amp * (local.y() - body_cy) *
                             std::sin(2.0 * kPi * bob_freq * tau + kPi * part.limb);
            local.y() += bob * (1.0 - 0.5 * part.head) - 0.5 * bob * part.head;
            double c = std::cos(yaw), s = std::sin(yaw);
            g.center_track.push_back(Vec3(c * local.x() + s * local.z(), local.y(),
                                          -s * local.x() + c * local.z()));
        }
        out.push_back(std::move(g));
    }
    return out;
}

struct SubjectSpec {
    IdentityDescriptor identity;
    std::uint64_t motion_seed = 0;
};

// Assembles subjects plus a procedural background (textured ground and
// landmark pillars). Subjects are lane-placed with centers at least 0.5 m
// apart; background Gaussians carry subject_id 0.
inline Scene make_scene(const std::vector<SubjectSpec>& subjects, std::uint64_t background_seed,
                        const LightingParams& lighting, int frames) {
    Rng rng(splitmix64(background_seed ^ 0xBA5Eull));
    Scene scene;
    scene.clip_frames = frames;
    scene.lighting = lighting;
    scene.background_color = hsv_to_rgb(rng.uniform(), rng.uniform(0.08, 0.3), rng.uniform(0.25, 0.55));

    const int n = static_cast<int>(subjects.size());
    const double spacing = 1.6;
    for (int k = 0; k < n; ++k) {
        auto cluster = make_subject(subjects[k].identity, subjects[k].motion_seed, frames);
        Vec3 offset((k - 0.5 * (n - 1)) * spacing + rng.uniform(-0.3, 0.3), 0.0,
                    rng.uniform(-0.4, 0.4));
        for (auto& g : cluster) {
            g.subject_id = k + 1;
            for (auto& c : g.center_track) c += offset;
            scene.gaussians.push_back(std::move(g));
        }
        scene.subject_registry[k + 1] = {subjects[k].identity.seed, subject_token(k + 1)};
    }

    // Ground tiles.
    for (int gy = -4; gy < 4; ++gy)
        for (int gx = -4; gx < 4; ++gx) {
            Gaussian4D g;
            g.center_track = {Vec3(gx * 1.7 + rng.uniform(-0.3, 0.3) + 0.85, 0.12,
                                   gy * 1.7 + rng.uniform(-0.3, 0.3) + 0.85)};
            g.scale = Vec3(0.7, 0.05, 0.7);
            g.color = hsv_to_rgb(rng.uniform(), rng.uniform(0.15, 0.5), rng.uniform(0.25, 0.7));
            g.opacity = rng.uniform(0.75, 1.0);
            g.subject_id = 0;
            scene.gaussians.push_back(std::move(g));
        }
    // Landmark pillars give the background parallax and pose-fitting texture.
    int landmarks = rng.uniform_int(5, 9);
    for (int k = 0; k < landmarks; ++k) {
        double az = rng.uniform(0.0, 2.0 * kPi);
        double rad = rng.uniform(3.0, 7.0);
        Gaussian4D g;
        g.center_track = {Vec3(rad * std::sin(az), rng.uniform(-1.5, -0.3), rad * std::cos(az))};
        g.scale = Vec3(rng.uniform(0.2, 0.5), rng.uniform(0.5, 1.2), rng.uniform(0.2, 0.5));
        g.color = hsv_to_rgb(rng.uniform(), rng.uniform(0.7, 1.0), rng.uniform(0.6, 1.0));
        g.opacity = rng.uniform(0.85, 1.0);
        g.subject_id = 0;
        scene.gaussians.push_back(std::move(g));
    }
    return scene;
}

// Moves a subject to a different id slot (gaussian labels, registry, token).
inline void relabel_subject(Scene& scene, int from, int to) {
    if (from == to) return;
    if (scene.subject_registry.count(to))
        throw std::invalid_argument("relabel_subject: target id occupied");
    for (auto& g : scene.gaussians)
        if (g.subject_id == from) g.subject_id = to;
    auto node = scene.subject_registry.extract(from);
    if (!node.empty()) {
        node.key() = to;
        node.mapped().token = subject_token(to);
        scene.subject_registry.insert(std::move(node));
    }
}

// Procedural stand-in for HDR-based relighting: draws a fresh lighting
// without touching geometry.
inline Scene relight_augment(const Scene& scene, std::uint64_t light_seed) {
    Rng rng(splitmix64(light_seed ^ 0x11647ull));
    Scene out = scene;
    out.lighting.gain = rng.uniform(0.4, 1.6);
    out.lighting.tint = Vec3(rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3));
    Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    out.lighting.key_direction = dir.normalized();
    out.lighting.key_strength = rng.uniform(0.0, 0.8);
    return out;
}

inline std::string lighting_word(const LightingParams& light) {
    if (light.is_identity()) return "flat";
    if (light.gain >= 1.15) return "bright";
    if (light.gain <= 0.85) return "dim";
    if (light.tint.x() - light.tint.z() >= 0.15) return "warm";
    if (light.tint.z() - light.tint.x() >= 0.15) return "cool";
    return "keylit";
}

inline std::string scene_word(std::uint64_t background_seed) {
    static const char* words[] = {"studio", "meadow", "plaza", "arena", "harbor", "atrium"};
    return words[splitmix64(background_seed ^ 0x5CE9Eull) % 6];
}

inline std::string motion_word(std::uint64_t motion_seed) {
    static const char* words[] = {"bobbing", "turning", "swaying", "drifting"};
    return words[splitmix64(motion_seed ^ 0x307105ull) % 4];
}

// ---- Dataset manifest ----------------------------------------------------

struct ManifestEntry {
    std::string video_dir;    // relative to the manifest root
    std::string camera_file;
    std::string mask_dir;     // empty when masks were not rendered
    std::vector<std::string> prompt_tokens;
    std::vector<int> subject_ids;
    std::string lighting_tag = "default";
    std::string split = "train";
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::map<int, std::string> reference_dirs;   // subject id -> still-image dir
    std::map<int, std::uint64_t> subject_seeds;  // subject id -> identity seed
    std::string scene_token;                     // set for scene-customization sets
    std::uint64_t scene_seed = 0;
    int frames = 16;
    int resolution = 64;
    std::string root;  // absolute location, filled on load; not serialized
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : m.entries)
        entries.push_back({{"video_dir", e.video_dir},
                           {"camera_file", e.camera_file},
                           {"mask_dir", e.mask_dir},
                           {"prompt_tokens", e.prompt_tokens},
                           {"subject_ids", e.subject_ids},
                           {"lighting_tag", e.lighting_tag},
                           {"split", e.split}});
    nlohmann::json refs = nlohmann::json::object(), seeds = nlohmann::json::object();
    for (const auto& [id, dir] : m.reference_dirs) refs[std::to_string(id)] = dir;
    for (const auto& [id, seed] : m.subject_seeds) seeds[std::to_string(id)] = seed;
    return nlohmann::json{{"entries", entries},     {"references", refs},
                          {"subject_seeds", seeds}, {"scene_token", m.scene_token},
                          {"scene_seed", m.scene_seed},
                          {"frames", m.frames},     {"resolution", m.resolution}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest m;
    for (const auto& ej : j.at("entries")) {
        ManifestEntry e;
        e.video_dir = ej.at("video_dir").get<std::string>();
        e.camera_file = ej.at("camera_file").get<std::string>();
        e.mask_dir = ej.at("mask_dir").get<std::string>();
        e.prompt_tokens = ej.at("prompt_tokens").get<std::vector<std::string>>();
        e.subject_ids = ej.at("subject_ids").get<std::vector<int>>();
        e.lighting_tag = ej.at("lighting_tag").get<std::string>();
        e.split = ej.at("split").get<std::string>();
        m.entries.push_back(std::move(e));
    }
    for (const auto& [k, v] : j.at("references").items())
        m.reference_dirs[std::stoi(k)] = v.get<std::string>();
    for (const auto& [k, v] : j.at("subject_seeds").items())
        m.subject_seeds[std::stoi(k)] = v.get<std::uint64_t>();
    m.scene_token = j.at("scene_token").get<std::string>();
    m.scene_seed = j.at("scene_seed").get<std::uint64_t>();
    m.frames = j.at("frames").get<int>();
    m.resolution = j.at("resolution").get<int>();
    return m;
}

inline void save_manifest(const std::string& dir, const DatasetManifest& m) {
    std::ofstream f(dir + "/manifest.json");
    if (!f) throw std::runtime_error("save_manifest: cannot open " + dir + "/manifest.json");
    f << manifest_to_json(m).dump(1) << "\n";
}

inline DatasetManifest load_manifest(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json");
    if (!f) throw std::runtime_error("load_manifest: cannot open " + dir + "/manifest.json");
    nlohmann::json j;
    f >> j;
    DatasetManifest m = manifest_from_json(j);
    m.root = std::filesystem::absolute(dir).string();
    return m;
}

// Checks the manifest invariants: referenced paths exist and each entry's
// prompt carries exactly the identity tokens of the subjects present.
inline void validate_manifest(const DatasetManifest& m) {
    namespace fs = std::filesystem;
    for (const auto& e : m.entries) {
        if (!fs::exists(fs::path(m.root) / e.video_dir))
            throw std::runtime_error("manifest: missing video dir " + e.video_dir);
        if (!fs::exists(fs::path(m.root) / e.camera_file))
            throw std::runtime_error("manifest: missing camera file " + e.camera_file);
        if (!e.mask_dir.empty() && !fs::exists(fs::path(m.root) / e.mask_dir))
            throw std::runtime_error("manifest: missing mask dir " + e.mask_dir);
        for (int sid : e.subject_ids) {
            std::string tok = subject_token(sid);
            if (std::find(e.prompt_tokens.begin(), e.prompt_tokens.end(), tok) ==
                e.prompt_tokens.end())
                throw std::runtime_error("manifest: " + e.video_dir + " misses token " + tok);
        }
        for (const auto& w : e.prompt_tokens) {
            if (w.rfind("SUBJ_", 0) == 0) {
                int sid = std::stoi(w.substr(5));
                if (std::find(e.subject_ids.begin(), e.subject_ids.end(), sid) ==
                    e.subject_ids.end())
                    throw std::runtime_error("manifest: " + e.video_dir + " has stray token " + w);
            }
            if (w.rfind("SCENE_", 0) == 0 && w != m.scene_token)
                throw std::runtime_error("manifest: " + e.video_dir + " has stray token " + w);
        }
    }
    for (const auto& [id, dir] : m.reference_dirs)
        if (!fs::exists(fs::path(m.root) / dir))
            throw std::runtime_error("manifest: missing reference dir " + dir);
}

// ---- Dataset writers -----------------------------------------------------

namespace scenegen_detail {

inline std::string frame_name(int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%05d.png", t);
    return buf;
}

inline void write_video_dir(const std::string& dir, const VideoTensor& video) {
    std::filesystem::create_directories(dir);
    for (int t = 0; t < video.frames; ++t) {
        ImageD img = frame_of(video, t);
        png::write_file(dir + "/" + frame_name(t), image_to_u8(img));
    }
}

inline void write_mask_dir(const std::string& dir, const MaskVideo& masks) {
    std::filesystem::create_directories(dir);
    for (const auto& [id, plane] : masks.weights) {
        if (id == 0) continue;  // background is the residual, not stored
        for (int t = 0; t < masks.frames; ++t) {
            png::ImageU8 img;
            img.width = masks.width;
            img.height = masks.height;
            img.channels = 1;
            img.pixels.resize(static_cast<std::size_t>(masks.width) * masks.height);
            for (int i = 0; i < masks.height; ++i)
                for (int j = 0; j < masks.width; ++j)
                    img.pixels[i * masks.width + j] =
                        quantize8(plane[masks.plane_index(t, i, j)]);
            char buf[48];
            std::snprintf(buf, sizeof(buf), "s%02d_frame_%05d.png", id, t);
            png::write_file(dir + "/" + buf, img);
        }
    }
}

struct EntryRequest {
    std::string name;
    Scene scene;
    Trajectory traj;
    ManifestEntry entry;
    bool write_masks = true;
};

inline void render_entry(const std::string& root, EntryRequest& req, DatasetManifest& manifest) {
    auto [video, masks] = render_video(req.scene, req.traj);
    req.entry.video_dir = "videos/" + req.name;
    req.entry.camera_file = "cameras/" + req.name + ".json";
    req.entry.mask_dir = req.write_masks ? "masks/" + req.name : "";
    write_video_dir(root + "/" + req.entry.video_dir, video);
    if (req.write_masks) write_mask_dir(root + "/" + req.entry.mask_dir, masks);
    std::filesystem::create_directories(root + "/cameras");
    save_trajectory(root + "/" + req.entry.camera_file, req.traj);
    manifest.entries.push_back(req.entry);
}

}  // namespace scenegen_detail

// Canonical reference viewpoints: azimuths uniform in [-180, 180) at fixed
// elevation and radius, frontal through profile through back views.
inline std::vector<CameraPose> reference_viewpoints(int count, int resolution,
                                                    const Vec3& look_at) {
    TrajectoryConfig cfg;
    cfg.width = cfg.height = resolution;
    std::vector<CameraPose> out;
    for (int k = 0; k < count; ++k) {
        double az = deg2rad(-180.0 + 360.0 * k / count);
        double el = deg2rad(12.0);
        double r = 3.5;
        Vec3 c = look_at + r * Vec3(std::cos(el) * std::sin(az), -std::sin(el),
                                    std::cos(el) * std::cos(az));
        out.push_back(pose_from_center(c, look_at, cfg));
    }
    return out;
}

inline Vec3 dataset_look_at() { return Vec3(0.0, -0.9, 0.0); }  // subject mid-body

// Builds the per-subject customization dataset: standard videos over sampled
// trajectories, relit variants, joint-subject videos, plus reference stills
// per subject. Deterministic in (subjects, config, master_seed).
inline DatasetManifest build_dataset(const std::vector<IdentityDescriptor>& subjects,
                                     const DataConfig& config, std::uint64_t master_seed,
                                     const std::string& out_dir) {
    if (subjects.empty()) throw std::invalid_argument("build_dataset: need at least one subject");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    try {
        DatasetManifest manifest;
        manifest.frames = config.frames;
        manifest.resolution = config.resolution;

        TrajectoryConfig tcfg;
        tcfg.frames = config.frames;
        tcfg.width = tcfg.height = config.resolution;
        tcfg.look_at = dataset_look_at();
        if (config.frontal_only) tcfg.azimuth_range = 60.0;  // +/- 30 degrees
        tcfg.static_camera = config.static_cameras;

        const int num_subjects = static_cast<int>(subjects.size());
        for (int s = 0; s < num_subjects; ++s) {
            const int sid = s + 1;
            manifest.subject_seeds[sid] = subjects[s].seed;
            std::vector<std::uint64_t> motion_seeds;
            for (int q = 0; q < config.sequences_per_subject; ++q)
                motion_seeds.push_back(derive_seed(master_seed, "motion", sid * 1000 + q));

            auto make_entry = [&](int index, bool relit) {
                std::uint64_t motion = motion_seeds[index % motion_seeds.size()];
                std::uint64_t bg = derive_seed(master_seed, relit ? "bg_relit" : "bg",
                                               sid * 100000 + index);
                LightingParams light;
                Scene scene = make_scene({{subjects[s], motion}}, bg, light, config.frames);
                // Single-subject data keeps the canonical SUBJ slot of the
                // identity, not the scene-local id.
                relabel_subject(scene, 1, sid);
                if (relit)
                    scene = relight_augment(scene,
                                            derive_seed(master_seed, "light", sid * 100000 + index));
                std::uint64_t tseed = derive_seed(master_seed, relit ? "traj_relit" : "traj",
                                                  sid * 100000 + index);
                scenegen_detail::EntryRequest req;
                req.scene = std::move(scene);
                req.traj = sample_trajectory(tseed, tcfg);
                char buf[64];
                std::snprintf(buf, sizeof(buf), "subj%02d_%s%03d", sid, relit ? "relit" : "vid",
                              index);
                req.name = buf;
                req.entry.prompt_tokens = {subject_token(sid), motion_word(motion), scene_word(bg),
                                           lighting_word(req.scene.lighting)};
                req.entry.subject_ids = {sid};
                req.entry.lighting_tag = relit ? "relit" : "default";
                scenegen_detail::render_entry(out_dir, req, manifest);
            };

            for (int k = 0; k < config.videos_per_subject; ++k) make_entry(k, false);
            for (int k = 0; k < config.relit_per_subject; ++k) make_entry(k, true);

            // Reference stills from canonical viewpoints, subject alone on a
            // neutral dark background (held out from the training views).
            auto cluster = make_subject(subjects[s], motion_seeds.front(), 1);
            Scene ref_scene;
            ref_scene.clip_frames = 1;
            ref_scene.background_color = Vec3(0.12, 0.12, 0.14);
            for (auto& g : cluster) ref_scene.gaussians.push_back(g);
            std::string ref_dir = "references/subj" + std::string(sid < 10 ? "0" : "") +
                                  std::to_string(sid);
            fs::create_directories(fs::path(out_dir) / ref_dir);
            auto views = reference_viewpoints(config.reference_images, config.resolution,
                                              dataset_look_at());
            for (int k = 0; k < static_cast<int>(views.size()); ++k) {
                ImageD img = render_frame(ref_scene, views[k], 0);
                char buf[32];
                std::snprintf(buf, sizeof(buf), "/ref_%02d.png", k);
                png::write_file((fs::path(out_dir) / (ref_dir + buf)).string(), image_to_u8(img));
            }
            manifest.reference_dirs[sid] = ref_dir;
        }

        if (num_subjects >= 2) {
            for (int k = 0; k < config.joint_videos; ++k) {
                std::uint64_t bg = derive_seed(master_seed, "joint_bg", k);
                std::uint64_t m1 = derive_seed(master_seed, "joint_motion", 2 * k);
                std::uint64_t m2 = derive_seed(master_seed, "joint_motion", 2 * k + 1);
                Scene scene = make_scene({{subjects[0], m1}, {subjects[1], m2}}, bg, {},
                                         config.frames);
                scenegen_detail::EntryRequest req;
                req.scene = std::move(scene);
                req.traj = sample_trajectory(derive_seed(master_seed, "joint_traj", k), tcfg);
                char buf[32];
                std::snprintf(buf, sizeof(buf), "joint%03d", k);
                req.name = buf;
                req.entry.prompt_tokens = {subject_token(1), subject_token(2), "pair",
                                           scene_word(bg)};
                req.entry.subject_ids = {1, 2};
                scenegen_detail::render_entry(out_dir, req, manifest);
            }
        }

        save_manifest(out_dir, manifest);
        manifest.root = fs::absolute(out_dir).string();
        validate_manifest(manifest);
        return manifest;
    } catch (...) {
        std::error_code ec;
        fs::remove_all(out_dir, ec);  // partial-output cleanup
        throw;
    }
}

// General multi-scene dataset for camera pretraining: varied backgrounds,
// zero to two anonymous subjects, no identity tokens in the prompts.
inline DatasetManifest build_general_dataset(const DataConfig& config, std::uint64_t master_seed,
                                             const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    try {
        DatasetManifest manifest;
        manifest.frames = config.frames;
        manifest.resolution = config.resolution;

        TrajectoryConfig tcfg;
        tcfg.frames = config.frames;
        tcfg.width = tcfg.height = config.resolution;
        tcfg.look_at = dataset_look_at();

        for (int k = 0; k < config.general_videos; ++k) {
            Rng pick(derive_seed(master_seed, "gen_pick", k));
            int n_subj = pick.uniform_int(0, 2);
            std::vector<SubjectSpec> specs;
            for (int s = 0; s < n_subj; ++s)
                specs.push_back({IdentityDescriptor::from_seed(
                                     derive_seed(master_seed, "gen_identity", k * 4 + s)),
                                 derive_seed(master_seed, "gen_motion", k * 4 + s)});
            std::uint64_t bg = derive_seed(master_seed, "gen_bg", k);
            Scene scene = make_scene(specs, bg, {}, config.frames);
            scene.subject_registry.clear();  // anonymous content, no identity supervision
            if (pick.uniform() < 0.4)
                scene = relight_augment(scene, derive_seed(master_seed, "gen_light", k));

            scenegen_detail::EntryRequest req;
            req.scene = std::move(scene);
            req.traj = sample_trajectory(derive_seed(master_seed, "gen_traj", k), tcfg);
            char buf[32];
            std::snprintf(buf, sizeof(buf), "general%04d", k);
            req.name = buf;
            req.write_masks = false;
            const char* presence = n_subj == 0 ? "empty" : (n_subj == 1 ? "figure" : "pair");
            req.entry.prompt_tokens = {scene_word(bg), presence,
                                       lighting_word(req.scene.lighting), "orbit"};
            req.entry.lighting_tag = lighting_word(req.scene.lighting);
            scenegen_detail::render_entry(out_dir, req, manifest);
        }
        save_manifest(out_dir, manifest);
        manifest.root = fs::absolute(out_dir).string();
        validate_manifest(manifest);
        return manifest;
    } catch (...) {
        std::error_code ec;
        fs::remove_all(out_dir, ec);
        throw;
    }
}

// Scene-customization dataset: one fixed background scene observed along
// many trajectories, bound to a scene identity token (the probe-scene
// protocol for camera metrics relies on this).
inline DatasetManifest build_scene_dataset(std::uint64_t scene_seed, int videos,
                                           const DataConfig& config, std::uint64_t master_seed,
                                           const std::string& out_dir,
                                           const std::string& token = "SCENE_1") {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    try {
        DatasetManifest manifest;
        manifest.frames = config.frames;
        manifest.resolution = config.resolution;
        manifest.scene_token = token;
        manifest.scene_seed = scene_seed;

        TrajectoryConfig tcfg;
        tcfg.frames = config.frames;
        tcfg.width = tcfg.height = config.resolution;
        tcfg.look_at = dataset_look_at();

        for (int k = 0; k < videos; ++k) {
            Scene scene = make_scene({}, scene_seed, {}, config.frames);
            scenegen_detail::EntryRequest req;
            req.scene = std::move(scene);
            req.traj = sample_trajectory(derive_seed(master_seed, "scene_traj", k), tcfg);
            char buf[32];
            std::snprintf(buf, sizeof(buf), "scene%03d", k);
            req.name = buf;
            req.write_masks = false;
            req.entry.prompt_tokens = {token, scene_word(scene_seed), "orbit", "flat"};
            scenegen_detail::render_entry(out_dir, req, manifest);
        }
        save_manifest(out_dir, manifest);
        manifest.root = fs::absolute(out_dir).string();
        validate_manifest(manifest);
        return manifest;
    } catch (...) {
        std::error_code ec;
        fs::remove_all(out_dir, ec);
        throw;
    }
}

// ---- Dataset loading -----------------------------------------------------

struct LoadedItem {
    VideoTensor video;  // pixel space [0,1]
    Trajectory traj;
    std::vector<std::string> prompt_words;
    std::vector<int> subject_ids;
};

inline VideoTensor load_video_dir(const std::string& dir, int frames) {
    VideoTensor video;
    for (int t = 0; t < frames; ++t) {
        png::ImageU8 u8 = png::read_file(dir + "/" + scenegen_detail::frame_name(t));
        if (t == 0) video = VideoTensor(frames, u8.height, u8.width);
        ImageD img = image_from_u8(u8);
        set_frame(video, t, img);
    }
    return video;
}

inline std::vector<LoadedItem> load_dataset(const DatasetManifest& m) {
    std::vector<LoadedItem> items;
    items.reserve(m.entries.size());
    for (const auto& e : m.entries) {
        LoadedItem item;
        item.video = load_video_dir(m.root + "/" + e.video_dir, m.frames);
        item.traj = load_trajectory(m.root + "/" + e.camera_file);
        item.prompt_words = e.prompt_tokens;
        item.subject_ids = e.subject_ids;
        items.push_back(std::move(item));
    }
    return items;
}

inline MaskVideo load_mask_video(const std::string& dir, int frames,
                                 const std::vector<int>& subject_ids) {
    MaskVideo masks;
    masks.frames = frames;
    for (int sid : subject_ids) {
        for (int t = 0; t < frames; ++t) {
            char buf[48];
            std::snprintf(buf, sizeof(buf), "/s%02d_frame_%05d.png", sid, t);
            png::ImageU8 u8 = png::read_file(dir + buf);
            if (masks.height == 0) {
                masks.height = u8.height;
                masks.width = u8.width;
                masks.weights[0].assign(static_cast<std::size_t>(frames) * u8.height * u8.width,
                                        1.0f);
            }
            auto& plane = masks.weights[sid];
            if (plane.empty())
                plane.assign(static_cast<std::size_t>(frames) * u8.height * u8.width, 0.0f);
            for (int i = 0; i < u8.height; ++i)
                for (int j = 0; j < u8.width; ++j) {
                    float w = u8.pixels[i * u8.width + j] / 255.0f;
                    plane[masks.plane_index(t, i, j)] = w;
                    masks.weights[0][masks.plane_index(t, i, j)] -= w;
                }
        }
    }
    return masks;
}

inline std::vector<ImageD> load_reference_images(const DatasetManifest& m, int subject_id) {
    std::vector<ImageD> refs;
    auto it = m.reference_dirs.find(subject_id);
    if (it == m.reference_dirs.end())
        throw std::runtime_error("load_reference_images: no references for subject");
    for (int k = 0;; ++k) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "/ref_%02d.png", k);
        std::string path = m.root + "/" + it->second + buf;
        if (!std::filesystem::exists(path)) break;
        refs.push_back(image_from_u8(png::read_file(path)));
    }
    return refs;
}

}  // namespace camdiff
