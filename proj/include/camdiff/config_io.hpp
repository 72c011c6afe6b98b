#pragma once

#include <cstdlib>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "camdiff/rng.hpp"

namespace camdiff {

// Thrown for schema violations; the CLI maps it to exit code 2.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataConfig {
    std::string mode = "custom";  // "custom" (subject datasets) or "general"
    int num_subjects = 2;
    int videos_per_subject = 32;    // paper-scale protocol uses 256
    int sequences_per_subject = 4;  // paper-scale 8
    int relit_per_subject = 8;      // paper-scale 128
    int joint_videos = 4;           // paper-scale 27
    int general_videos = 48;
    int reference_images = 10;
    bool frontal_only = false;
    bool static_cameras = false;
    int frames = 16;
    int resolution = 64;
};

struct ModelConfig {
    int blocks = 8;   // L, must be >= 4 except in tiny test configs
    int width = 128;
    int heads = 4;
    int frames = 16;
    int height = 64;
    int width_px = 64;
    int sampler_steps = 50;
    // spatial patch 4 and temporal patch 2 are fixed by the architecture
    static constexpr int spatial_patch = 4;
    static constexpr int temporal_patch = 2;

    void validate() const {
        if (blocks < 1 || width < 4 || heads < 1 || width % heads != 0)
            throw ValidationError("model: bad blocks/width/heads");
        if (frames % temporal_patch != 0 || height % spatial_patch != 0 ||
            width_px % spatial_patch != 0)
            throw ValidationError("model: resolution not divisible by patch size");
    }
    int token_frames() const { return frames / temporal_patch; }
    int token_height() const { return height / spatial_patch; }
    int token_width() const { return width_px / spatial_patch; }
    int video_tokens() const { return token_frames() * token_height() * token_width(); }
    int control_blocks() const { return (blocks + 3) / 4; }  // ceil(0.25 L)
};

struct CameraPretrainConfig {
    int base_steps = 400;      // unconditioned backbone training
    int steps = 300;           // control-branch training
    int batch = 2;
    double base_lr = 3e-4;
    double lr = 3e-4;
    double gate_fraction = 0.4;
    bool sample_active_noise_only = true;  // draw s inside the active gate window
};

struct CustomizeConfig {
    int steps = 240;
    int batch = 2;
    double lr = 4e-4;
    double reg_mix = 0.5;
    int rank = 4;
    double alpha = 1.0;
    bool train_branch = false;  // branch frozen in stage two
};

struct BlendConfig {
    double warmup_fraction = 0.10;
};

struct EvalConfig {
    int trajectories = 16;
    int heldout_prompts = 16;
    int sampler_steps = 20;
    int pose_fit_iters = 40;
};

struct RunConfig {
    std::uint64_t master_seed = 0;
    std::string output_root = "out";
    std::string stage;  // free-form stage tag recorded in artifacts
    DataConfig data;
    ModelConfig model;
    CameraPretrainConfig camera_pretrain;
    CustomizeConfig customize;
    BlendConfig blend;
    EvalConfig eval;
};

namespace config_detail {

class SectionReader {
public:
    SectionReader(const nlohmann::json& j, std::string prefix)
        : j_(j), prefix_(std::move(prefix)) {
        if (!j.is_object()) throw ValidationError(prefix_ + ": expected an object");
    }

    template <typename T>
    void read(const char* key, T& out) {
        known_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ValidationError(prefix_ + "." + key + ": wrong type");
        }
    }

    const nlohmann::json* subsection(const char* key) {
        known_.insert(key);
        if (!j_.contains(key)) return nullptr;
        return &j_.at(key);
    }

    void finish() const {
        for (const auto& [key, _] : j_.items())
            if (!known_.count(key))
                throw ValidationError("unknown key '" + prefix_ + "." + key + "'");
    }

private:
    const nlohmann::json& j_;
    std::string prefix_;
    std::set<std::string> known_;
};

}  // namespace config_detail

inline RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    config_detail::SectionReader root(j, "config");
    root.read("master_seed", cfg.master_seed);
    root.read("output_root", cfg.output_root);
    root.read("stage", cfg.stage);

    if (const auto* sj = root.subsection("data")) {
        config_detail::SectionReader s(*sj, "data");
        s.read("mode", cfg.data.mode);
        s.read("num_subjects", cfg.data.num_subjects);
        s.read("videos_per_subject", cfg.data.videos_per_subject);
        s.read("sequences_per_subject", cfg.data.sequences_per_subject);
        s.read("relit_per_subject", cfg.data.relit_per_subject);
        s.read("joint_videos", cfg.data.joint_videos);
        s.read("general_videos", cfg.data.general_videos);
        s.read("reference_images", cfg.data.reference_images);
        s.read("frontal_only", cfg.data.frontal_only);
        s.read("static_cameras", cfg.data.static_cameras);
        s.read("frames", cfg.data.frames);
        s.read("resolution", cfg.data.resolution);
        s.finish();
        if (cfg.data.mode != "custom" && cfg.data.mode != "general")
            throw ValidationError("data.mode: must be 'custom' or 'general'");
    }
    if (const auto* sj = root.subsection("model")) {
        config_detail::SectionReader s(*sj, "model");
        s.read("blocks", cfg.model.blocks);
        s.read("width", cfg.model.width);
        s.read("heads", cfg.model.heads);
        s.read("frames", cfg.model.frames);
        s.read("height", cfg.model.height);
        s.read("width_px", cfg.model.width_px);
        s.read("sampler_steps", cfg.model.sampler_steps);
        s.finish();
        cfg.model.validate();
    }
    if (const auto* sj = root.subsection("camera_pretrain")) {
        config_detail::SectionReader s(*sj, "camera_pretrain");
        s.read("base_steps", cfg.camera_pretrain.base_steps);
        s.read("steps", cfg.camera_pretrain.steps);
        s.read("batch", cfg.camera_pretrain.batch);
        s.read("base_lr", cfg.camera_pretrain.base_lr);
        s.read("lr", cfg.camera_pretrain.lr);
        s.read("gate_fraction", cfg.camera_pretrain.gate_fraction);
        s.read("sample_active_noise_only", cfg.camera_pretrain.sample_active_noise_only);
        s.finish();
        if (cfg.camera_pretrain.gate_fraction <= 0.0 || cfg.camera_pretrain.gate_fraction > 1.0)
            throw ValidationError("camera_pretrain.gate_fraction: must be in (0,1]");
    }
    if (const auto* sj = root.subsection("customize")) {
        config_detail::SectionReader s(*sj, "customize");
        s.read("steps", cfg.customize.steps);
        s.read("batch", cfg.customize.batch);
        s.read("lr", cfg.customize.lr);
        s.read("reg_mix", cfg.customize.reg_mix);
        s.read("rank", cfg.customize.rank);
        s.read("alpha", cfg.customize.alpha);
        s.read("train_branch", cfg.customize.train_branch);
        s.finish();
        if (cfg.customize.reg_mix < 0.0 || cfg.customize.reg_mix > 1.0)
            throw ValidationError("customize.reg_mix: must be in [0,1]");
    }
    if (const auto* sj = root.subsection("blend")) {
        config_detail::SectionReader s(*sj, "blend");
        s.read("warmup_fraction", cfg.blend.warmup_fraction);
        s.finish();
        if (cfg.blend.warmup_fraction < 0.0 || cfg.blend.warmup_fraction >= 1.0)
            throw ValidationError("blend.warmup_fraction: must be in [0,1)");
    }
    if (const auto* sj = root.subsection("eval")) {
        config_detail::SectionReader s(*sj, "eval");
        s.read("trajectories", cfg.eval.trajectories);
        s.read("heldout_prompts", cfg.eval.heldout_prompts);
        s.read("sampler_steps", cfg.eval.sampler_steps);
        s.read("pose_fit_iters", cfg.eval.pose_fit_iters);
        s.finish();
    }
    root.finish();

    if (const char* env = std::getenv("CAMCTRL_OUT")) cfg.output_root = env;
    return cfg;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
    return nlohmann::json{
        {"master_seed", c.master_seed},
        {"output_root", c.output_root},
        {"stage", c.stage},
        {"data",
         {{"mode", c.data.mode},
          {"num_subjects", c.data.num_subjects},
          {"videos_per_subject", c.data.videos_per_subject},
          {"sequences_per_subject", c.data.sequences_per_subject},
          {"relit_per_subject", c.data.relit_per_subject},
          {"joint_videos", c.data.joint_videos},
          {"general_videos", c.data.general_videos},
          {"reference_images", c.data.reference_images},
          {"frontal_only", c.data.frontal_only},
          {"static_cameras", c.data.static_cameras},
          {"frames", c.data.frames},
          {"resolution", c.data.resolution}}},
        {"model",
         {{"blocks", c.model.blocks},
          {"width", c.model.width},
          {"heads", c.model.heads},
          {"frames", c.model.frames},
          {"height", c.model.height},
          {"width_px", c.model.width_px},
          {"sampler_steps", c.model.sampler_steps}}},
        {"camera_pretrain",
         {{"base_steps", c.camera_pretrain.base_steps},
          {"steps", c.camera_pretrain.steps},
          {"batch", c.camera_pretrain.batch},
          {"base_lr", c.camera_pretrain.base_lr},
          {"lr", c.camera_pretrain.lr},
          {"gate_fraction", c.camera_pretrain.gate_fraction},
          {"sample_active_noise_only", c.camera_pretrain.sample_active_noise_only}}},
        {"customize",
         {{"steps", c.customize.steps},
          {"batch", c.customize.batch},
          {"lr", c.customize.lr},
          {"reg_mix", c.customize.reg_mix},
          {"rank", c.customize.rank},
          {"alpha", c.customize.alpha},
          {"train_branch", c.customize.train_branch}}},
        {"blend", {{"warmup_fraction", c.blend.warmup_fraction}}},
        {"eval",
         {{"trajectories", c.eval.trajectories},
          {"heldout_prompts", c.eval.heldout_prompts},
          {"sampler_steps", c.eval.sampler_steps},
          {"pose_fit_iters", c.eval.pose_fit_iters}}}};
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("load_config: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("load_config: parse error in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

inline void save_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_config: cannot open " + path);
    f << config_to_json(cfg).dump(1) << "\n";
}

// Stateless splittable seed derivation: distinct (label, index) pairs give
// distinct streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stage_label,
                                 std::uint64_t index) {
    std::uint64_t x = master ^ fnv1a64(stage_label);
    x = splitmix64(x + 0x9E3779B97F4A7C15ull * (index + 1));
    return splitmix64(x ^ (index << 1 | 1));
}

}  // namespace camdiff
