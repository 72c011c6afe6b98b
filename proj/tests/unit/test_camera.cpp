#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Geometry>
#include <cmath>

#include "camdiff/camera.hpp"

using namespace camdiff;

namespace {

CameraPose make_pose(const Mat3& R, const Vec3& C, double fx = 64.0, double cx = 32.0,
                     double cy = 32.0, int w = 64, int h = 64) {
    CameraPose p;
    p.R = R;
    p.t = -R * C;
    p.fx = p.fy = fx;
    p.cx = cx;
    p.cy = cy;
    p.width = w;
    p.height = h;
    return p;
}

Trajectory random_trajectory(std::uint64_t seed, int frames = 5) {
    TrajectoryConfig cfg;
    cfg.frames = frames;
    return sample_trajectory(seed, cfg);
}

bool poses_identical(const CameraPose& a, const CameraPose& b) {
    return a.R == b.R && a.t == b.t && a.fx == b.fx && a.fy == b.fy && a.cx == b.cx &&
           a.cy == b.cy && a.width == b.width && a.height == b.height;
}

}  // namespace

TEST_CASE("sampled trajectory centers stay in the radial shell") {
    TrajectoryConfig cfg;
    cfg.frames = 16;
    cfg.look_at = Vec3(0.3, -0.2, 0.5);
    for (std::uint64_t seed : {1ull, 2ull, 42ull, 999ull}) {
        Trajectory traj = sample_trajectory(seed, cfg);
        REQUIRE(traj.frames() == 16);
        for (const auto& p : traj.poses) {
            double r = (p.center() - cfg.look_at).norm();
            REQUIRE(r >= 2.0 - 1e-9);
            REQUIRE(r <= 10.0 + 1e-9);
            REQUIRE(p.valid());
        }
    }
}

TEST_CASE("static trajectory repeats the first pose bitwise") {
    TrajectoryConfig cfg;
    cfg.frames = 8;
    cfg.static_camera = true;
    Trajectory traj = sample_trajectory(7, cfg);
    for (const auto& p : traj.poses) REQUIRE(poses_identical(p, traj.poses.front()));
}

TEST_CASE("three-frame trajectory interpolates the midpoint exactly") {
    TrajectoryConfig cfg;
    cfg.frames = 3;
    Trajectory traj = sample_trajectory(11, cfg);
    Vec3 mid = 0.5 * (traj.poses[0].center() + traj.poses[2].center());
    REQUIRE((traj.poses[1].center() - mid).norm() < 1e-9);
}

TEST_CASE("trajectory sampling is deterministic per seed and varies across seeds") {
    Trajectory a = random_trajectory(123), b = random_trajectory(123), c = random_trajectory(124);
    for (int k = 0; k < a.frames(); ++k) REQUIRE(poses_identical(a.poses[k], b.poses[k]));
    bool any_diff = false;
    for (int k = 0; k < a.frames(); ++k) any_diff |= !poses_identical(a.poses[k], c.poses[k]);
    REQUIRE(any_diff);
}

TEST_CASE("azimuth window restricts sampled viewpoints") {
    TrajectoryConfig cfg;
    cfg.frames = 4;
    cfg.azimuth_range = 60.0;  // +/- 30 degrees around +z
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Trajectory traj = sample_trajectory(seed, cfg);
        for (const auto& p : traj.poses) {
            Vec3 d = p.center() - cfg.look_at;
            double az = std::atan2(d.x(), d.z());
            REQUIRE(std::abs(az) <= deg2rad(30.0) + 1e-9);
        }
    }
}

TEST_CASE("rays through the origin have zero moment") {
    CameraPose p = make_pose(Mat3::Identity(), Vec3::Zero());
    Trajectory traj;
    traj.poses = {p};
    PluckerMap map = plucker_embed(traj, 16, 16);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
            const float* v = map.at(0, i, j);
            REQUIRE(std::abs(v[3]) < 1e-7f);
            REQUIRE(std::abs(v[4]) < 1e-7f);
            REQUIRE(std::abs(v[5]) < 1e-7f);
        }
}

TEST_CASE("principal point ray with identity rotation points down +z") {
    CameraPose p = make_pose(Mat3::Identity(), Vec3::Zero(), 64.0, 32.5, 32.5);
    Trajectory traj;
    traj.poses = {p};
    PluckerMap map = plucker_embed(traj, 64, 64);
    const float* v = map.at(0, 32, 32);  // pixel center (32.5, 32.5) == principal point
    REQUIRE(v[0] == Catch::Approx(0.0).margin(1e-7));
    REQUIRE(v[1] == Catch::Approx(0.0).margin(1e-7));
    REQUIRE(v[2] == Catch::Approx(1.0).margin(1e-7));
}

TEST_CASE("hand-computed moment for an off-axis camera") {
    // C = (1,0,0), identity R, ray through principal point -> d = (0,0,1),
    // m = C x d = (0,-1,0).
    CameraPose p = make_pose(Mat3::Identity(), Vec3(1, 0, 0), 64.0, 32.5, 32.5);
    Trajectory traj;
    traj.poses = {p};
    PluckerMap map = plucker_embed(traj, 64, 64);
    const float* v = map.at(0, 32, 32);
    float expect[6] = {0, 0, 1, 0, -1, 0};
    for (int c = 0; c < 6; ++c) REQUIRE(v[c] == Catch::Approx(expect[c]).margin(1e-6));
}

TEST_CASE("plucker invariants over random poses", "[property]") {
    Rng rng(2024);
    int checked = 0;
    for (int trial = 0; trial < 25; ++trial) {
        Trajectory traj = random_trajectory(1000 + trial, 2);
        PluckerMap map = plucker_embed(traj, 32, 32);
        Vec3 C = traj.poses[0].center();
        for (int rep = 0; rep < 25; ++rep) {
            int i = static_cast<int>(rng.uniform_index(32));
            int j = static_cast<int>(rng.uniform_index(32));
            const float* v = map.at(0, i, j);
            Vec3 d(v[0], v[1], v[2]), m(v[3], v[4], v[5]);
            REQUIRE(std::abs(d.norm() - 1.0) < 1e-5);
            REQUIRE(std::abs(d.dot(m)) < 1e-5);
            // The line reconstructed from (d, m) passes through the center.
            Vec3 recon = d.cross(m) + d.dot(C) * d;
            REQUIRE((recon - C).norm() < 1e-5 * std::max(1.0, C.norm()));
            ++checked;
        }
    }
    REQUIRE(checked >= 600);
}

TEST_CASE("pose error of identical trajectories is zero") {
    Trajectory traj = random_trajectory(5);
    PoseErrors e = pose_error(traj, traj);
    REQUIRE(e.trans_err == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(e.rot_err == Catch::Approx(0.0).margin(1e-12));
    REQUIRE_FALSE(e.degenerate_translation);
}

TEST_CASE("ninety degree relative rotation gives pi/2 exactly") {
    Trajectory ref = random_trajectory(17, 6);
    Mat3 Rz = Eigen::AngleAxisd(kPi / 2.0, Vec3::UnitZ()).toRotationMatrix();

    Trajectory est = ref;
    const Mat3 R0t = ref.poses[0].R.transpose();
    const Vec3 t0 = ref.poses[0].t;
    for (int k = 1; k < ref.frames(); ++k) {
        Mat3 R_rel = ref.poses[k].R * R0t;
        Vec3 t_rel = ref.poses[k].t - R_rel * t0;
        est.poses[k].R = Rz * R_rel * ref.poses[0].R;
        est.poses[k].t = t_rel + (Rz * R_rel) * t0;
    }
    PoseErrors e = pose_error(est, ref);
    REQUIRE(e.rot_err == Catch::Approx(kPi / 2.0).margin(1e-9));
    REQUIRE(e.trans_err == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("rotation error matches a quaternion axis-angle oracle") {
    Rng rng(99);
    Trajectory ref = random_trajectory(31, 8);
    Trajectory est = ref;
    for (int k = 1; k < ref.frames(); ++k) {
        Vec3 axis(rng.normal(), rng.normal(), rng.normal());
        axis.normalize();
        double angle = 0.05 * rng.uniform();
        est.poses[k].R = Eigen::AngleAxisd(angle, axis).toRotationMatrix() * ref.poses[k].R;
    }
    PoseErrors e = pose_error(est, ref);

    // Independent oracle: quaternion relative rotation, angle via atan2.
    double oracle = 0.0;
    const Mat3 R0t_e = est.poses[0].R.transpose(), R0t_r = ref.poses[0].R.transpose();
    for (int k = 1; k < ref.frames(); ++k) {
        Eigen::Quaterniond qe(est.poses[k].R * R0t_e), qr(ref.poses[k].R * R0t_r);
        Eigen::Quaterniond rel = qe * qr.conjugate();
        double angle = 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
        oracle += angle;
    }
    oracle /= (ref.frames() - 1);
    REQUIRE(e.rot_err == Catch::Approx(oracle).margin(1e-6));
}

TEST_CASE("pose error is invariant to global rigid transforms and track scaling", "[property]") {
    Rng rng(7);
    Trajectory ref = random_trajectory(2, 6), est = random_trajectory(3, 6);
    PoseErrors base = pose_error(est, ref);

    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    Mat3 Rg = Eigen::AngleAxisd(1.1, axis).toRotationMatrix();
    Vec3 tg(rng.normal(), rng.normal(), rng.normal());
    auto transform = [&](Trajectory t) {
        for (auto& p : t.poses) {
            Mat3 Rn = p.R * Rg.transpose();
            p.t = p.t - Rn * tg;
            p.R = Rn;
        }
        return t;
    };
    PoseErrors moved = pose_error(transform(est), transform(ref));
    REQUIRE(moved.trans_err == Catch::Approx(base.trans_err).margin(1e-9));
    REQUIRE(moved.rot_err == Catch::Approx(base.rot_err).margin(1e-9));

    auto scale_track = [](Trajectory t, double s) {
        for (auto& p : t.poses) p.t *= s;
        return t;
    };
    PoseErrors scaled = pose_error(scale_track(est, 3.7), scale_track(ref, 3.7));
    REQUIRE(scaled.trans_err == Catch::Approx(base.trans_err).margin(1e-9));
    REQUIRE(scaled.rot_err == Catch::Approx(base.rot_err).margin(1e-9));
}

TEST_CASE("all-static reference sets the degenerate translation flag") {
    TrajectoryConfig cfg;
    cfg.frames = 4;
    cfg.static_camera = true;
    Trajectory ref = sample_trajectory(3, cfg);
    Trajectory est = ref;
    est.poses[2].t += Vec3(0.1, 0, 0);
    PoseErrors e = pose_error(est, ref);
    REQUIRE(e.degenerate_translation);
    REQUIRE(e.trans_err > 0.0);
}

TEST_CASE("trajectory json round-trips") {
    Trajectory traj = random_trajectory(55, 4);
    nlohmann::json j = trajectory_to_json(traj);
    Trajectory back = trajectory_from_json(j);
    REQUIRE(back.frames() == traj.frames());
    for (int k = 0; k < traj.frames(); ++k) {
        REQUIRE((back.poses[k].R - traj.poses[k].R).cwiseAbs().maxCoeff() < 1e-15);
        REQUIRE((back.poses[k].t - traj.poses[k].t).norm() < 1e-15);
        REQUIRE(back.poses[k].fx == traj.poses[k].fx);
        REQUIRE(back.poses[k].width == traj.poses[k].width);
    }
}

TEST_CASE("degenerate look-at raises after resampling") {
    TrajectoryConfig cfg;
    cfg.frames = 2;
    cfg.r_min = cfg.r_max = 1e-9;  // force centers onto the look-at point
    cfg.look_at = Vec3::Zero();
    bool threw = false;
    try {
        sample_trajectory(1, cfg);
    } catch (const std::exception&) {
        threw = true;
    }
    REQUIRE(threw);
}
