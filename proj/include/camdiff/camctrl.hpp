#pragma once

#include <optional>
#include <string>
#include <vector>

#include "camdiff/camera.hpp"
#include "camdiff/dit.hpp"
#include "camdiff/nn.hpp"

namespace camdiff {

// Camera conditioning is applied only during the first 40% of denoising:
// active iff s > 1 - fraction, with the boundary assigned to inactive. The
// same gate is used for the training-loss contribution and for sampling.
struct GateSchedule {
    double fraction = 0.4;
    bool active(double s) const { return s > 1.0 - fraction; }
};

inline bool apply_schedule(double s, double fraction = 0.4) {
    return GateSchedule{fraction}.active(s);
}

// The camera ControlNet branch: a fully convolutional Plucker encoder whose
// output matches the video token grid, copies of the first ceil(0.25 L) main
// DiT blocks (initialized from the pretrained weights), and one
// zero-initialized output projection per block producing the injected
// residual; zero init makes a fresh branch an exact no-op.
class ControlBranch {
public:
    ModelConfig cfg;
    GateSchedule gate;
    nn::ParamStore params;

    ControlBranch(const DiT& base, std::uint64_t seed, double gate_fraction = 0.4)
        : cfg(base.cfg), gate{gate_fraction} {
        Rng rng(splitmix64(seed ^ 0xC7B7ull));
        const int w = cfg.width;
        auto mk = [&](const std::string& name, int r, int c, double stddev) {
            params.create(name, stddev == 0.0 ? nn::Tensor::zeros(r, c)
                                              : nn::Tensor::randn(r, c, rng, stddev));
        };
        mk("enc1.W", 48, 3 * 3 * 3 * 6, 1.0 / std::sqrt(3.0 * 3 * 3 * 6));
        mk("enc1.b", 1, 48, 0.0);
        mk("enc2.W", 96, 3 * 3 * 3 * 48, 1.0 / std::sqrt(3.0 * 3 * 3 * 48));
        mk("enc2.b", 1, 96, 0.0);
        mk("enc3.W", w, 96, 1.0 / std::sqrt(96.0));
        mk("enc3.b", 1, w, 0.0);
        mk("in_proj.W", w, 2 * w, 1.0 / std::sqrt(2.0 * w));
        mk("in_proj.b", 1, w, 0.0);

        // Control blocks start as copies of the pretrained main blocks.
        for (int i = 0; i < cfg.control_blocks(); ++i) {
            const std::string p = DiT::block_prefix(i);
            for (const auto* bp : base.params.all())
                if (bp->name.rfind(p + ".", 0) == 0)
                    params.create(bp->name, bp->value);
            mk("out_proj" + std::to_string(i) + ".W", w, w, 0.0);
            mk("out_proj" + std::to_string(i) + ".b", 1, w, 0.0);
        }
    }

    // Strided convolutions downsample T x H x W x 6 by the patch factors so
    // the camera token count equals the video token count.
    nn::Var encode_plucker(ForwardCtx& ctx, const PluckerMap& pmap) {
        if (pmap.frames != cfg.frames || pmap.height != cfg.height || pmap.width != cfg.width_px)
            throw std::invalid_argument("encode_plucker: resolution mismatch");
        nn::Tensor input(pmap.frames * pmap.height * pmap.width, 6);
        std::copy(pmap.values.begin(), pmap.values.end(), input.data.begin());

        nn::ConvSpec s1;
        s1.t = pmap.frames, s1.h = pmap.height, s1.w = pmap.width;
        s1.c_in = 6, s1.c_out = 48;
        s1.st = 1, s1.sh = 2, s1.sw = 2;
        nn::ConvSpec s2;
        s2.t = s1.out_t(), s2.h = s1.out_h(), s2.w = s1.out_w();
        s2.c_in = 48, s2.c_out = 96;
        s2.st = 2, s2.sh = 2, s2.sw = 2;
        nn::ConvSpec s3;
        s3.t = s2.out_t(), s3.h = s2.out_h(), s3.w = s2.out_w();
        s3.c_in = 96, s3.c_out = cfg.width;
        s3.kt = s3.kh = s3.kw = 1;
        s3.pad_t = s3.pad_h = s3.pad_w = 0;
        if (s3.t != cfg.token_frames() || s3.h != cfg.token_height() || s3.w != cfg.token_width())
            throw std::logic_error("encode_plucker: grid mismatch after striding");

        nn::Var h = nn::conv3d(nn::constant(std::move(input)),
                               ctx.binding.bind(params.at("enc1.W")),
                               ctx.binding.bind(params.at("enc1.b")), s1);
        h = nn::gelu(h);
        h = nn::conv3d(h, ctx.binding.bind(params.at("enc2.W")),
                       ctx.binding.bind(params.at("enc2.b")), s2);
        h = nn::gelu(h);
        return nn::conv3d(h, ctx.binding.bind(params.at("enc3.W")),
                          ctx.binding.bind(params.at("enc3.b")), s3);
    }

    nn::Var plain_linear(ForwardCtx& ctx, const std::string& layer, const nn::Var& x) {
        return nn::linear(x, ctx.binding.bind(params.at(layer + ".W")),
                          ctx.binding.bind(params.at(layer + ".b")));
    }

    // Block copies run on video tokens only (no text rows, no adapters).
    nn::Var block_forward(ForwardCtx& ctx, DiT& base, nn::Var x, int i) {
        const std::string p = DiT::block_prefix(i);
        auto ln = [&](const nn::Var& in, const std::string& name) {
            return nn::layernorm(in, ctx.binding.bind(params.at(p + name + ".g")),
                                 ctx.binding.bind(params.at(p + name + ".b")));
        };
        nn::Var h = plain_linear(ctx, p + ".attn_s.qkv", ln(x, ".ln1"));
        h = nn::grouped_attention(h, cfg.heads, base.spatial_pattern(0));
        x = nn::add(x, plain_linear(ctx, p + ".attn_s.proj", h));

        h = plain_linear(ctx, p + ".attn_t.qkv", ln(x, ".ln2"));
        h = nn::grouped_attention(h, cfg.heads, base.temporal_pattern(0));
        x = nn::add(x, plain_linear(ctx, p + ".attn_t.proj", h));

        h = nn::gelu(plain_linear(ctx, p + ".mlp.fc1", ln(x, ".ln3")));
        x = nn::add(x, plain_linear(ctx, p + ".mlp.fc2", h));
        return x;
    }
};

// Camera tokens are concatenated feature-wise with the main DiT's video
// tokens, width-restored, and passed through the control blocks; each
// block's output maps through its zero-init projection to the residual that
// the main DiT adds token-wise before the corresponding block. Returns
// nullopt when the gate is closed.
inline std::optional<std::vector<nn::Var>> control_forward(DiT& base, ControlBranch& branch,
                                                           ForwardCtx& ctx,
                                                           const nn::Var& video_tokens,
                                                           const nn::Var& camera_tokens,
                                                           double s) {
    if (!branch.gate.active(s)) return std::nullopt;
    if (video_tokens->value.rows != camera_tokens->value.rows ||
        video_tokens->value.cols != camera_tokens->value.cols)
        throw std::invalid_argument("control_forward: token grid mismatch");

    nn::Var h = nn::concat_features(video_tokens, camera_tokens);
    h = branch.plain_linear(ctx, "in_proj", h);
    std::vector<nn::Var> residuals;
    residuals.reserve(branch.cfg.control_blocks());
    for (int i = 0; i < branch.cfg.control_blocks(); ++i) {
        h = branch.block_forward(ctx, base, h, i);
        residuals.push_back(branch.plain_linear(ctx, "out_proj" + std::to_string(i), h));
    }
    return residuals;
}

}  // namespace camdiff
