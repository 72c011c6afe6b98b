#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "camdiff/camera.hpp"
#include "camdiff/jet.hpp"
#include "camdiff/scene.hpp"
#include "camdiff/video.hpp"

namespace camdiff {

inline constexpr double kNearPlane = 0.05;       // meters; closer Gaussians are culled
inline constexpr double kFootprintSigma = 3.5;   // Gaussian support truncation

namespace splat_detail {

// Per-Gaussian screen-space quantities, templated so the same math runs in
// plain double and in Jet<6> mode (pose gradient).
template <typename S>
struct Projected {
    S u, v;               // projected center, continuous pixel coords
    S inv_a, inv_b, inv_c;  // inverse 2D covariance [[a,b],[b,c]]^-1 entries
    double depth = 0.0;
    double radius = 0.0;  // footprint radius in pixels
    Vec3 color;           // shaded color
    double opacity = 0.0;
    int subject_id = 0;
};

inline Vec3 shaded_color(const Gaussian4D& g, const LightingParams& light) {
    Vec3 n = g.rotation.toRotationMatrix().col(2);
    double lambert = std::max(0.0, n.dot(light.key_direction));
    double shade = 1.0 - light.key_strength + light.key_strength * lambert;
    Vec3 c = g.color * light.gain * shade;
    c = c.cwiseProduct(light.tint);
    return c.cwiseMax(0.0).cwiseMin(1.0);
}

// exp(skew(w)) for the perturbation; evaluated at w = 0 in jet mode, so the
// truncated series is exact to first order there and accurate to ~1e-8 for
// the small steps the optimizer takes.
template <typename S>
Eigen::Matrix<S, 3, 3> so3_exp_series(const Eigen::Matrix<S, 3, 1>& w) {
    Eigen::Matrix<S, 3, 3> W;
    W(0, 0) = S(0.0); W(0, 1) = -w[2]; W(0, 2) = w[1];
    W(1, 0) = w[2];   W(1, 1) = S(0.0); W(1, 2) = -w[0];
    W(2, 0) = -w[1];  W(2, 1) = w[0];  W(2, 2) = S(0.0);
    S t2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    S A = S(1.0) - t2 * S(1.0 / 6.0) + t2 * t2 * S(1.0 / 120.0);
    S B = S(0.5) - t2 * S(1.0 / 24.0) + t2 * t2 * S(1.0 / 720.0);
    Eigen::Matrix<S, 3, 3> W2 = W * W;
    Eigen::Matrix<S, 3, 3> E;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            E(i, j) = S(i == j ? 1.0 : 0.0) + A * W(i, j) + B * W2(i, j);
    return E;
}

// Projects every visible Gaussian for one frame. `xi` is the se(3)
// perturbation (omega, nu) applied on the left of the world-to-camera
// transform; pass zeros (or jet seeds) to evaluate at the current pose.
template <typename S>
std::vector<Projected<S>> project_gaussians(const Scene& scene, const CameraPose& pose,
                                            int time, const Eigen::Matrix<S, 6, 1>& xi) {
    Eigen::Matrix<S, 3, 1> omega(xi[0], xi[1], xi[2]);
    Eigen::Matrix<S, 3, 1> nu(xi[3], xi[4], xi[5]);
    Eigen::Matrix<S, 3, 3> E = so3_exp_series<S>(omega);

    Eigen::Matrix<S, 3, 3> Rp;  // perturbed rotation E * R
    Eigen::Matrix<S, 3, 1> tp;  // perturbed translation E * t + nu
    for (int i = 0; i < 3; ++i) {
        tp[i] = nu[i];
        for (int j = 0; j < 3; ++j) {
            Rp(i, j) = S(0.0);
            for (int k = 0; k < 3; ++k) Rp(i, j) += E(i, k) * S(pose.R(k, j));
            tp[i] += E(i, j) * S(pose.t[j]);
        }
    }

    std::vector<Projected<S>> out;
    out.reserve(scene.gaussians.size());
    for (const auto& g : scene.gaussians) {
        Vec3 mu_w = g.center_at(time, scene.clip_frames);
        Eigen::Matrix<S, 3, 1> mu;
        for (int i = 0; i < 3; ++i) {
            mu[i] = tp[i];
            for (int j = 0; j < 3; ++j) mu[i] += Rp(i, j) * S(mu_w[j]);
        }
        if (value_of(mu[2]) <= kNearPlane) continue;  // behind the near plane

        Mat3 cov_w = g.covariance();
        Eigen::Matrix<S, 3, 3> cov_cam;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                S acc = S(0.0);
                for (int a = 0; a < 3; ++a)
                    for (int b = 0; b < 3; ++b) acc += Rp(i, a) * S(cov_w(a, b)) * Rp(j, b);
                cov_cam(i, j) = acc;
            }

        S z_inv = S(1.0) / mu[2];
        S x_zi = mu[0] * z_inv, y_zi = mu[1] * z_inv;
        S j00 = S(pose.fx) * z_inv, j02 = -S(pose.fx) * x_zi * z_inv;
        S j11 = S(pose.fy) * z_inv, j12 = -S(pose.fy) * y_zi * z_inv;

        // Sigma2d = J cov_cam J^T with J = [[j00,0,j02],[0,j11,j12]]
        S a = j00 * (j00 * cov_cam(0, 0) + j02 * cov_cam(2, 0)) +
              j02 * (j00 * cov_cam(0, 2) + j02 * cov_cam(2, 2));
        S b = j00 * (j11 * cov_cam(0, 1) + j12 * cov_cam(0, 2)) +
              j02 * (j11 * cov_cam(2, 1) + j12 * cov_cam(2, 2));
        S c = j11 * (j11 * cov_cam(1, 1) + j12 * cov_cam(2, 1)) +
              j12 * (j11 * cov_cam(1, 2) + j12 * cov_cam(2, 2));

        S det = a * c - b * b;
        if (value_of(det) <= 1e-12) continue;
        S inv_det = S(1.0) / det;

        Projected<S> p;
        p.u = S(pose.fx) * x_zi + S(pose.cx);
        p.v = S(pose.fy) * y_zi + S(pose.cy);
        p.inv_a = c * inv_det;
        p.inv_b = -b * inv_det;
        p.inv_c = a * inv_det;
        p.depth = value_of(mu[2]);
        double eig_max = 0.5 * (value_of(a) + value_of(c)) +
                         std::sqrt(std::max(0.0, 0.25 * (value_of(a) - value_of(c)) *
                                                     (value_of(a) - value_of(c)) +
                                                 value_of(b) * value_of(b)));
        p.radius = kFootprintSigma * std::sqrt(std::max(eig_max, 1e-12));
        p.color = shaded_color(g, scene.lighting);
        p.opacity = g.opacity;
        p.subject_id = g.subject_id;
        out.push_back(std::move(p));
    }
    // Back-to-front: farthest first.
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& l, const auto& r) { return l.depth > r.depth; });
    return out;
}

template <typename S>
S gaussian_alpha(const Projected<S>& p, double px, double py, bool& inside) {
    S dx = S(px) - p.u;
    S dy = S(py) - p.v;
    S q = p.inv_a * dx * dx + S(2.0) * p.inv_b * dx * dy + p.inv_c * dy * dy;
    if (value_of(q) > kFootprintSigma * kFootprintSigma) {
        inside = false;
        return S(0.0);
    }
    inside = true;
    using std::exp;  // enables ADL for Jet overloads
    return S(p.opacity) * exp(S(-0.5) * q);
}

// Row-binned splat lists so per-pixel loops only visit overlapping
// footprints; lists preserve the global back-to-front order.
template <typename S>
std::vector<std::vector<int>> bin_rows(const std::vector<Projected<S>>& ps, int height, int width) {
    std::vector<std::vector<int>> rows(height);
    for (int gi = 0; gi < static_cast<int>(ps.size()); ++gi) {
        const auto& p = ps[gi];
        double u = value_of(p.u), v = value_of(p.v);
        if (u + p.radius < 0 || u - p.radius > width || v + p.radius < 0 || v - p.radius > height)
            continue;
        int r0 = std::max(0, static_cast<int>(std::floor(v - p.radius - 0.5)));
        int r1 = std::min(height - 1, static_cast<int>(std::ceil(v + p.radius - 0.5)));
        for (int r = r0; r <= r1; ++r) rows[r].push_back(gi);
    }
    return rows;
}

}  // namespace splat_detail

// Renders one frame: perspective projection, 2D covariance via the
// projection Jacobian, depth-sorted back-to-front alpha compositing over the
// background color, per-Gaussian lighting multiplier. Deterministic.
inline ImageD render_frame(const Scene& scene, const CameraPose& pose, int time) {
    using splat_detail::gaussian_alpha;
    Eigen::Matrix<double, 6, 1> zero = Eigen::Matrix<double, 6, 1>::Zero();
    auto ps = splat_detail::project_gaussians<double>(scene, pose, time, zero);
    auto rows = splat_detail::bin_rows(ps, pose.height, pose.width);

    ImageD img(pose.height, pose.width);
    for (int i = 0; i < pose.height; ++i) {
        const double py = i + 0.5;
        for (int j = 0; j < pose.width; ++j) {
            const double px = j + 0.5;
            double out[3] = {scene.background_color[0], scene.background_color[1],
                             scene.background_color[2]};
            for (int gi : rows[i]) {
                const auto& p = ps[gi];
                if (std::abs(px - p.u) > p.radius) continue;
                bool inside = false;
                double alpha = gaussian_alpha(p, px, py, inside);
                if (!inside || alpha <= 0.0) continue;
                for (int c = 0; c < 3; ++c) out[c] = alpha * p.color[c] + (1.0 - alpha) * out[c];
            }
            double* dst = img.px(i, j);
            for (int c = 0; c < 3; ++c) dst[c] = clamp01(out[c]);
        }
    }
    return img;
}

// Renders the whole clip along the trajectory and composites per-subject
// alpha weights. Per pixel the subject weights plus the background residual
// sum to exactly 1.
inline std::pair<VideoTensor, MaskVideo> render_video(const Scene& scene, const Trajectory& traj) {
    if (traj.frames() != scene.clip_frames)
        throw std::invalid_argument("render_video: trajectory length must equal clip length");
    const int T = traj.frames();
    const int H = traj.poses.front().height, W = traj.poses.front().width;

    VideoTensor video(T, H, W);
    MaskVideo masks;
    masks.frames = T;
    masks.height = H;
    masks.width = W;
    masks.weights[0] = std::vector<float>(static_cast<std::size_t>(T) * H * W, 0.0f);
    for (const auto& [id, info] : scene.subject_registry)
        masks.weights[id] = std::vector<float>(static_cast<std::size_t>(T) * H * W, 0.0f);

    Eigen::Matrix<double, 6, 1> zero = Eigen::Matrix<double, 6, 1>::Zero();
    for (int t = 0; t < T; ++t) {
        ImageD frame = render_frame(scene, traj.poses[t], t);
        set_frame(video, t, frame);

        // Front-to-back transmittance pass for the mask weights.
        auto ps = splat_detail::project_gaussians<double>(scene, traj.poses[t], t, zero);
        auto rows = splat_detail::bin_rows(ps, H, W);
        for (int i = 0; i < H; ++i) {
            const double py = i + 0.5;
            for (int j = 0; j < W; ++j) {
                const double px = j + 0.5;
                double transmittance = 1.0;
                std::map<int, double> subj_weight;
                for (auto it = rows[i].rbegin(); it != rows[i].rend(); ++it) {  // near to far
                    const auto& p = ps[*it];
                    if (std::abs(px - p.u) > p.radius) continue;
                    bool inside = false;
                    double alpha = splat_detail::gaussian_alpha(p, px, py, inside);
                    if (!inside || alpha <= 0.0) continue;
                    subj_weight[p.subject_id] += alpha * transmittance;
                    transmittance *= (1.0 - alpha);
                }
                const std::size_t idx = masks.plane_index(t, i, j);
                double subj_total = 0.0;
                for (auto& [id, w] : subj_weight) {
                    if (id == 0) continue;
                    auto found = masks.weights.find(id);
                    if (found != masks.weights.end()) {
                        found->second[idx] = static_cast<float>(w);
                        subj_total += w;
                    }
                }
                // Background takes the residual so the per-pixel sum is 1.
                masks.weights[0][idx] = static_cast<float>(1.0 - subj_total);
            }
        }
    }
    return {std::move(video), std::move(masks)};
}

struct PoseGradient {
    Eigen::Matrix<double, 6, 1> grad = Eigen::Matrix<double, 6, 1>::Zero();
    Eigen::Matrix<double, 6, 6> gauss_newton = Eigen::Matrix<double, 6, 6>::Zero();
    double loss = 0.0;
};

// Gradient of the mean squared pixel error w.r.t. an exponential-coordinates
// perturbation (omega, nu) of the world-to-camera pose, computed by running
// the render math in forward mode with Jet<6> scalars. The per-pixel
// jacobians also yield the Gauss-Newton matrix used to precondition the
// pose descent.
inline PoseGradient render_gradients(const Scene& scene, const CameraPose& pose, int time,
                                     const ImageD& loss_pixels) {
    if (loss_pixels.height != pose.height || loss_pixels.width != pose.width)
        throw std::invalid_argument("render_gradients: target size mismatch");
    using J6 = Jet<6>;
    Eigen::Matrix<J6, 6, 1> xi;
    for (int k = 0; k < 6; ++k) xi[k] = J6(0.0, k);

    auto ps = splat_detail::project_gaussians<J6>(scene, pose, time, xi);
    auto rows = splat_detail::bin_rows(ps, pose.height, pose.width);

    PoseGradient g;
    for (int i = 0; i < pose.height; ++i) {
        const double py = i + 0.5;
        for (int j = 0; j < pose.width; ++j) {
            const double px = j + 0.5;
            J6 out[3] = {J6(scene.background_color[0]), J6(scene.background_color[1]),
                         J6(scene.background_color[2])};
            for (int gi : rows[i]) {
                const auto& p = ps[gi];
                if (std::abs(px - value_of(p.u)) > p.radius) continue;
                bool inside = false;
                J6 alpha = splat_detail::gaussian_alpha(p, px, py, inside);
                if (!inside) continue;
                for (int c = 0; c < 3; ++c)
                    out[c] = alpha * J6(p.color[c]) + (J6(1.0) - alpha) * out[c];
            }
            const double* target = loss_pixels.px(i, j);
            for (int c = 0; c < 3; ++c) {
                J6 v = clamp01(out[c]);
                const double r = v.a - target[c];
                g.loss += r * r;
                g.grad += 2.0 * r * v.v;
                g.gauss_newton += 2.0 * v.v * v.v.transpose();
            }
        }
    }
    const double inv_n = 1.0 / (static_cast<double>(pose.height) * pose.width * 3.0);
    g.loss *= inv_n;
    g.grad *= inv_n;
    g.gauss_newton *= inv_n;
    return g;
}

inline double photometric_loss(const Scene& scene, const CameraPose& pose, int time,
                               const ImageD& target) {
    ImageD r = render_frame(scene, pose, time);
    double acc = 0.0;
    for (std::size_t k = 0; k < r.values.size(); ++k) {
        double d = r.values[k] - target.values[k];
        acc += d * d;
    }
    return acc / static_cast<double>(r.values.size());
}

inline CameraPose apply_se3(const Eigen::Matrix<double, 6, 1>& xi, const CameraPose& pose) {
    Vec3 omega = xi.head<3>(), nu = xi.tail<3>();
    double theta = omega.norm();
    Mat3 E;
    if (theta < 1e-9) {
        E = splat_detail::so3_exp_series<double>(omega);
    } else {
        E = Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
    }
    CameraPose out = pose;
    out.R = E * pose.R;
    out.t = E * pose.t + nu;
    // Re-orthonormalize to hold the det/orthogonality invariant over many steps.
    Quat q(out.R);
    out.R = q.normalized().toRotationMatrix();
    return out;
}

struct PoseFitOptions {
    int max_iters = 80;
    double lr = 1.0;  // initial line-search step along the preconditioned direction
    double tol = 1e-6;
};

struct PoseFitResult {
    CameraPose pose;
    double final_loss = 0.0;
    bool converged = false;
};

// Photometric pose refinement: descent in exponential coordinates,
// re-linearized at each accepted pose, with step-halving line search. The
// raw gradient direction is preconditioned by the damped Gauss-Newton
// metric; rotation and translation axes otherwise differ in curvature by
// orders of magnitude and plain descent crawls along the coupled valley.
// The accepted-loss sequence is monotone non-increasing.
inline PoseFitResult estimate_pose(const ImageD& target, const Scene& scene, int time,
                                   const CameraPose& init, const PoseFitOptions& opts = {}) {
    PoseFitResult res;
    res.pose = init;
    if (scene.gaussians.empty()) {
        res.final_loss = photometric_loss(scene, init, time, target);
        res.converged = false;
        return res;
    }

    double loss = photometric_loss(scene, init, time, target);
    for (int iter = 0; iter < opts.max_iters && loss > opts.tol; ++iter) {
        PoseGradient g = render_gradients(scene, res.pose, time, target);
        if (g.grad.norm() < 1e-14) break;

        Eigen::Matrix<double, 6, 6> metric = g.gauss_newton;
        const double damping = std::max(1e-12, 1e-3 * metric.trace() / 6.0);
        metric.diagonal().array() += damping;
        Eigen::Matrix<double, 6, 1> dir = metric.ldlt().solve(g.grad);
        if (!dir.allFinite() || dir.norm() < 1e-16) break;

        bool accepted = false;
        double step = opts.lr;
        for (int half = 0; half < 30; ++half) {
            CameraPose cand = apply_se3((-step * dir).eval(), res.pose);
            double cand_loss = photometric_loss(scene, cand, time, target);
            if (cand_loss < loss) {
                res.pose = cand;
                loss = cand_loss;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
    }
    res.final_loss = loss;
    res.converged = loss <= opts.tol;
    return res;
}

}  // namespace camdiff
