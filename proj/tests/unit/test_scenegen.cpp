#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "camdiff/scenegen.hpp"

using namespace camdiff;
namespace fs = std::filesystem;

namespace {

Vec3 cluster_centroid(const std::vector<Gaussian4D>& gs, int time, int frames) {
    Vec3 c = Vec3::Zero();
    for (const auto& g : gs) c += g.center_at(time, frames);
    return c / static_cast<double>(gs.size());
}

Vec3 mean_color(const std::vector<Gaussian4D>& gs) {
    Vec3 c = Vec3::Zero();
    for (const auto& g : gs) c += g.color;
    return c / static_cast<double>(gs.size());
}

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("camdiff_scenegen_" + tag);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("make_subject is deterministic and within the primitive budget") {
    auto id = IdentityDescriptor::from_seed(42);
    auto a = make_subject(id, 7, 16);
    auto b = make_subject(id, 7, 16);
    REQUIRE(a.size() == b.size());
    REQUIRE(a.size() >= 50);
    REQUIRE(a.size() <= 200);
    for (std::size_t k = 0; k < a.size(); ++k) {
        REQUIRE(a[k].center_track == b[k].center_track);
        REQUIRE(a[k].color == b[k].color);
        REQUIRE(a[k].scale == b[k].scale);
        REQUIRE(a[k].opacity == b[k].opacity);
    }
    for (const auto& g : a) {
        REQUIRE(g.opacity >= 0.0);
        REQUIRE(g.opacity <= 1.0);
        REQUIRE(g.scale.minCoeff() >= 1e-4);
        REQUIRE(g.scale.maxCoeff() <= 10.0);
        REQUIRE(std::abs(g.rotation.norm() - 1.0) < 1e-6);
    }
}

TEST_CASE("different identities have distinct color signatures") {
    for (auto [sa, sb] : {std::pair<int, int>{1, 2}, {3, 9}, {10, 55}}) {
        auto a = make_subject(IdentityDescriptor::from_seed(sa), 5, 4);
        auto b = make_subject(IdentityDescriptor::from_seed(sb), 5, 4);
        REQUIRE((mean_color(a) - mean_color(b)).norm() >= 0.1);
    }
    auto da = IdentityDescriptor::from_seed(1), db = IdentityDescriptor::from_seed(2);
    bool differs = da.signature.body_count != db.signature.body_count ||
                   (da.signature.body_color - db.signature.body_color).norm() > 0 ||
                   (da.signature.body_radii - db.signature.body_radii).norm() > 0;
    REQUIRE(differs);
}

TEST_CASE("single-frame subjects are static") {
    auto gs = make_subject(IdentityDescriptor::from_seed(3), 11, 1);
    for (const auto& g : gs) REQUIRE(g.center_track.size() == 1);
}

TEST_CASE("subjects move periodically across frames") {
    auto gs = make_subject(IdentityDescriptor::from_seed(3), 11, 16);
    double max_move = 0.0;
    for (const auto& g : gs)
        for (int t = 1; t < 16; ++t)
            max_move = std::max(max_move, (g.center_track[t] - g.center_track[0]).norm());
    REQUIRE(max_move > 0.05);
}

TEST_CASE("make_scene registers subjects and separates them") {
    std::vector<SubjectSpec> specs = {{IdentityDescriptor::from_seed(1), 10},
                                      {IdentityDescriptor::from_seed(2), 20}};
    Scene scene = make_scene(specs, 77, {}, 8);
    REQUIRE(scene.subject_registry.size() == 2);
    REQUIRE(scene.subject_registry.count(1) == 1);
    REQUIRE(scene.subject_registry.count(2) == 1);
    REQUIRE(scene.subject_registry.at(1).token == "SUBJ_1");

    Scene empty_scene = make_scene({}, 77, {}, 4);
    REQUIRE(empty_scene.subject_registry.empty());
    TrajectoryConfig tc;
    tc.frames = 4;
    auto [video, masks] = render_video(empty_scene, sample_trajectory(5, tc));
    REQUIRE(masks.weights.size() == 1);
    for (float w : masks.weights.at(0)) REQUIRE(w == 1.0f);
}

TEST_CASE("subject placement keeps pairwise distance over random scenes", "[property]") {
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<SubjectSpec> specs = {{IdentityDescriptor::from_seed(trial), 1},
                                          {IdentityDescriptor::from_seed(trial + 500), 2},
                                          {IdentityDescriptor::from_seed(trial + 900), 3}};
        Scene scene = make_scene(specs, 1000 + trial, {}, 2);
        std::map<int, std::vector<Gaussian4D>> by_id;
        for (const auto& g : scene.gaussians)
            if (g.subject_id > 0) by_id[g.subject_id].push_back(g);
        std::vector<Vec3> centers;
        for (auto& [id, gs] : by_id) centers.push_back(cluster_centroid(gs, 0, 2));
        REQUIRE(centers.size() == 3);
        for (std::size_t a = 0; a < centers.size(); ++a)
            for (std::size_t b = a + 1; b < centers.size(); ++b)
                REQUIRE((centers[a] - centers[b]).norm() >= 0.5);
    }
}

TEST_CASE("identity lighting renders bitwise equal to the original") {
    Scene scene = make_scene({{IdentityDescriptor::from_seed(4), 3}}, 9, {}, 2);
    Scene copy = scene;
    copy.lighting = LightingParams{};  // gain 1, unit tint, no key
    REQUIRE(copy.lighting.is_identity());
    TrajectoryConfig tc;
    tc.frames = 2;
    Trajectory traj = sample_trajectory(8, tc);
    REQUIRE(render_frame(scene, traj.poses[0], 0).values ==
            render_frame(copy, traj.poses[0], 0).values);
}

TEST_CASE("halving the gain halves mean luminance on an unsaturated scene") {
    Scene scene = make_scene({{IdentityDescriptor::from_seed(6), 2}}, 31, {}, 2);
    scene.background_color = Vec3::Zero();
    for (auto& g : scene.gaussians) g.color *= 0.5;  // keep colors far from the clamp

    Scene dim = scene;
    dim.lighting.gain = 0.5;
    TrajectoryConfig tc;
    tc.frames = 2;
    tc.r_max = 5.0;
    CameraPose pose = sample_trajectory(3, tc).poses[0];
    double lum_full = mean_luminance(render_frame(scene, pose, 0));
    double lum_dim = mean_luminance(render_frame(dim, pose, 0));
    REQUIRE(lum_dim == Catch::Approx(0.5 * lum_full).epsilon(0.01));
}

TEST_CASE("relight_augment samples within bounds and keeps geometry") {
    Scene scene = make_scene({{IdentityDescriptor::from_seed(8), 1}}, 3, {}, 4);
    Scene out = relight_augment(scene, 99);
    REQUIRE(out.lighting.gain >= 0.4);
    REQUIRE(out.lighting.gain <= 1.6);
    for (int c = 0; c < 3; ++c) {
        REQUIRE(out.lighting.tint[c] >= 0.7);
        REQUIRE(out.lighting.tint[c] <= 1.3);
    }
    REQUIRE(std::abs(out.lighting.key_direction.norm() - 1.0) < 1e-12);
    REQUIRE(out.lighting.key_strength >= 0.0);
    REQUIRE(out.lighting.key_strength <= 0.8);
    REQUIRE(out.gaussians.size() == scene.gaussians.size());
    for (std::size_t k = 0; k < out.gaussians.size(); ++k) {
        REQUIRE(out.gaussians[k].center_track == scene.gaussians[k].center_track);
        REQUIRE(out.gaussians[k].color == scene.gaussians[k].color);
        REQUIRE(out.gaussians[k].scale == scene.gaussians[k].scale);
    }
}

TEST_CASE("build_dataset writes the expected entry count and valid manifest") {
    DataConfig cfg;  // desk defaults: 32 videos, 8 relit, 4 joint
    cfg.frames = 2;
    cfg.resolution = 24;
    auto out = temp_dir("count");
    std::vector<IdentityDescriptor> subjects = {IdentityDescriptor::from_seed(101),
                                                IdentityDescriptor::from_seed(202)};
    DatasetManifest m = build_dataset(subjects, cfg, 7, out.string());
    REQUIRE(m.entries.size() == 2 * (32 + 8) + 4);
    REQUIRE(m.reference_dirs.size() == 2);
    REQUIRE_NOTHROW(validate_manifest(m));

    // Reload from disk and spot-check a 10% sample for the splat invariants.
    DatasetManifest loaded = load_manifest(out.string());
    REQUIRE(loaded.entries.size() == m.entries.size());
    for (std::size_t k = 0; k < loaded.entries.size(); k += 10) {
        const auto& e = loaded.entries[k];
        VideoTensor v = load_video_dir(loaded.root + "/" + e.video_dir, loaded.frames);
        for (float x : v.values) {
            REQUIRE(x >= 0.0f);
            REQUIRE(x <= 1.0f);
        }
        if (!e.mask_dir.empty()) {
            MaskVideo masks =
                load_mask_video(loaded.root + "/" + e.mask_dir, loaded.frames, e.subject_ids);
            for (int t = 0; t < masks.frames; ++t)
                for (int i = 0; i < masks.height; i += 5)
                    for (int j = 0; j < masks.width; j += 5) {
                        double sum = 0.0;
                        for (const auto& [id, w] : masks.weights)
                            sum += w[masks.plane_index(t, i, j)];
                        REQUIRE(sum == Catch::Approx(1.0).margin(1e-5));
                    }
        }
    }

    auto refs = load_reference_images(m, 1);
    REQUIRE(refs.size() == 10);
    fs::remove_all(out);
}

TEST_CASE("frontal-only datasets restrict azimuths; static datasets freeze poses") {
    DataConfig cfg;
    cfg.videos_per_subject = 4;
    cfg.relit_per_subject = 1;
    cfg.joint_videos = 0;
    cfg.frames = 2;
    cfg.resolution = 16;

    DataConfig frontal = cfg;
    frontal.frontal_only = true;
    auto out1 = temp_dir("frontal");
    DatasetManifest mf =
        build_dataset({IdentityDescriptor::from_seed(9)}, frontal, 3, out1.string());
    for (const auto& e : mf.entries) {
        Trajectory traj = load_trajectory(mf.root + "/" + e.camera_file);
        for (const auto& p : traj.poses) {
            Vec3 d = p.center() - dataset_look_at();
            REQUIRE(std::abs(std::atan2(d.x(), d.z())) <= deg2rad(30.0) + 1e-9);
        }
    }
    fs::remove_all(out1);

    DataConfig stat = cfg;
    stat.static_cameras = true;
    auto out2 = temp_dir("static");
    DatasetManifest ms = build_dataset({IdentityDescriptor::from_seed(9)}, stat, 3, out2.string());
    for (const auto& e : ms.entries) {
        Trajectory traj = load_trajectory(ms.root + "/" + e.camera_file);
        for (const auto& p : traj.poses) {
            REQUIRE(p.R == traj.poses.front().R);
            REQUIRE(p.t == traj.poses.front().t);
        }
    }
    fs::remove_all(out2);
}

TEST_CASE("dataset builds are bitwise deterministic in the master seed") {
    DataConfig cfg;
    cfg.videos_per_subject = 2;
    cfg.relit_per_subject = 1;
    cfg.joint_videos = 0;
    cfg.frames = 2;
    cfg.resolution = 16;
    auto out1 = temp_dir("det1"), out2 = temp_dir("det2");
    build_dataset({IdentityDescriptor::from_seed(5)}, cfg, 11, out1.string());
    build_dataset({IdentityDescriptor::from_seed(5)}, cfg, 11, out2.string());

    std::ifstream m1(out1 / "manifest.json"), m2(out2 / "manifest.json");
    std::string s1((std::istreambuf_iterator<char>(m1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(m2)), std::istreambuf_iterator<char>());
    REQUIRE(s1 == s2);

    auto bytes = [](const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    REQUIRE(bytes(out1 / "videos/subj01_vid000/frame_00001.png") ==
            bytes(out2 / "videos/subj01_vid000/frame_00001.png"));
    fs::remove_all(out1);
    fs::remove_all(out2);
}

TEST_CASE("general dataset has no identity tokens") {
    DataConfig cfg;
    cfg.general_videos = 6;
    cfg.frames = 2;
    cfg.resolution = 16;
    auto out = temp_dir("general");
    DatasetManifest m = build_general_dataset(cfg, 13, out.string());
    REQUIRE(m.entries.size() == 6);
    for (const auto& e : m.entries) {
        REQUIRE(e.subject_ids.empty());
        for (const auto& w : e.prompt_tokens) REQUIRE_FALSE(is_identity_token(w));
    }
    fs::remove_all(out);
}

TEST_CASE("scene dataset binds the scene token") {
    DataConfig cfg;
    cfg.frames = 2;
    cfg.resolution = 16;
    auto out = temp_dir("scene");
    DatasetManifest m = build_scene_dataset(400, 5, cfg, 17, out.string());
    REQUIRE(m.entries.size() == 5);
    REQUIRE(m.scene_token == "SCENE_1");
    for (const auto& e : m.entries) {
        REQUIRE(std::find(e.prompt_tokens.begin(), e.prompt_tokens.end(), "SCENE_1") !=
                e.prompt_tokens.end());
    }
    fs::remove_all(out);
}

TEST_CASE("prompt tokens respect the identity token rules") {
    PromptTokens p = PromptTokens::from_words({"SUBJ_1", "bobbing", "studio"});
    REQUIRE(p.ids.size() == 3);
    REQUIRE(p.has_identity_token());
    REQUIRE_THROWS_AS(PromptTokens::from_words({"SUBJ_1", "SUBJ_1"}), std::invalid_argument);
    REQUIRE_THROWS_AS(PromptTokens::from_words({"no_such_word"}), std::invalid_argument);
    std::vector<std::string> too_many(17, "studio");
    REQUIRE_THROWS_AS(PromptTokens::from_words(too_many), std::invalid_argument);
}
