#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "camdiff/adapters.hpp"
#include "camdiff/camera.hpp"
#include "camdiff/config_io.hpp"
#include "camdiff/nn.hpp"
#include "camdiff/video.hpp"
#include "camdiff/vocab.hpp"

namespace camdiff {

struct TrainingDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Noisy video in model space plus the noise time; s = 1 is pure noise and
// s = 0 is clean. The video lives in patch layout (rows = video tokens).
struct DiffusionState {
    nn::Tensor z_patches;
    double s = 1.0;
};

inline int patch_dim(const ModelConfig& cfg) {
    return ModelConfig::temporal_patch * ModelConfig::spatial_patch * ModelConfig::spatial_patch * 3;
}

// Rearranges a model-space video [T,H,W,3] into patch vectors [Nv x 96].
// Token index = (tt * th + y) * tw + x; within a patch the order is
// (dt, dy, dx, channel). assemble_patches inverts it exactly.
inline nn::Tensor extract_patches(const VideoTensor& v, const ModelConfig& cfg) {
    if (v.frames != cfg.frames || v.height != cfg.height || v.width != cfg.width_px)
        throw std::invalid_argument("extract_patches: video does not match config");
    const int pt = ModelConfig::temporal_patch, ps = ModelConfig::spatial_patch;
    const int tf = cfg.token_frames(), th = cfg.token_height(), tw = cfg.token_width();
    nn::Tensor out(cfg.video_tokens(), patch_dim(cfg));
    int row = 0;
    for (int tt = 0; tt < tf; ++tt)
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x, ++row) {
                float* dst = &out.data[static_cast<std::size_t>(row) * out.cols];
                int k = 0;
                for (int dt = 0; dt < pt; ++dt)
                    for (int dy = 0; dy < ps; ++dy)
                        for (int dx = 0; dx < ps; ++dx) {
                            const float* px = v.px(tt * pt + dt, y * ps + dy, x * ps + dx);
                            dst[k++] = px[0];
                            dst[k++] = px[1];
                            dst[k++] = px[2];
                        }
            }
    return out;
}

inline VideoTensor assemble_patches(const nn::Tensor& patches, const ModelConfig& cfg) {
    if (patches.rows != cfg.video_tokens() || patches.cols != patch_dim(cfg))
        throw std::invalid_argument("assemble_patches: tensor does not match config");
    const int pt = ModelConfig::temporal_patch, ps = ModelConfig::spatial_patch;
    const int tf = cfg.token_frames(), th = cfg.token_height(), tw = cfg.token_width();
    VideoTensor v(cfg.frames, cfg.height, cfg.width_px);
    int row = 0;
    for (int tt = 0; tt < tf; ++tt)
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x, ++row) {
                const float* src = &patches.data[static_cast<std::size_t>(row) * patches.cols];
                int k = 0;
                for (int dt = 0; dt < pt; ++dt)
                    for (int dy = 0; dy < ps; ++dy)
                        for (int dx = 0; dx < ps; ++dx) {
                            float* px = v.px(tt * pt + dt, y * ps + dy, x * ps + dx);
                            px[0] = src[k++];
                            px[1] = src[k++];
                            px[2] = src[k++];
                        }
            }
    return v;
}

namespace dit_detail {

// Factorized sinusoidal positions: disjoint channel blocks per axis, so two
// tokens with any differing coordinate differ in the encoding.
inline void fill_axis_sinusoids(nn::Tensor& pos, int row, int col0, int block, int coord) {
    const int pairs = block / 2;
    for (int p = 0; p < pairs; ++p) {
        double freq = std::pow(10000.0, -static_cast<double>(p) / pairs);
        pos.at(row, col0 + 2 * p) = static_cast<float>(std::sin(coord * freq));
        pos.at(row, col0 + 2 * p + 1) = static_cast<float>(std::cos(coord * freq));
    }
}

inline nn::Tensor video_positional(const ModelConfig& cfg) {
    const int tf = cfg.token_frames(), th = cfg.token_height(), tw = cfg.token_width();
    const int bt = 2 * (cfg.width / 6);
    const int by = bt;
    const int bx = cfg.width - bt - by;
    nn::Tensor pos(cfg.video_tokens(), cfg.width);
    int row = 0;
    for (int tt = 0; tt < tf; ++tt)
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x, ++row) {
                fill_axis_sinusoids(pos, row, 0, bt, tt);
                fill_axis_sinusoids(pos, row, bt, by, y);
                fill_axis_sinusoids(pos, row, bt + by, bx, x);
            }
    return pos;
}

inline nn::Tensor text_positional(const ModelConfig& cfg) {
    nn::Tensor pos(kMaxPromptTokens, cfg.width);
    for (int r = 0; r < kMaxPromptTokens; ++r) fill_axis_sinusoids(pos, r, 0, cfg.width, r);
    return pos;
}

inline nn::Tensor time_features(const ModelConfig& cfg, double s) {
    nn::Tensor f(1, cfg.width);
    const int pairs = cfg.width / 2;
    for (int p = 0; p < pairs; ++p) {
        double freq = std::exp(std::log(1000.0) * p / std::max(1, pairs - 1));
        f.at(0, 2 * p) = static_cast<float>(std::sin(s * freq));
        f.at(0, 2 * p + 1) = static_cast<float>(std::cos(s * freq));
    }
    return f;
}

}  // namespace dit_detail

// Forward context: one graph binding per step plus the active adapter sets.
struct ForwardCtx {
    nn::GraphBinding binding;
    std::vector<const AdapterSet*> adapters;
};

// The video diffusion backbone: a small transformer with factorized
// spatial/temporal attention over video patch tokens, prompt tokens
// prepended in-context, additive noise-time embedding, and a rectified-flow
// objective. Single-threaded per instance.
class DiT {
public:
    ModelConfig cfg;
    nn::ParamStore params;

    DiT(const ModelConfig& config, std::uint64_t seed) : cfg(config) {
        cfg.validate();
        Rng rng(splitmix64(seed ^ 0xD17ull));
        const int w = cfg.width, vocab = static_cast<int>(vocabulary().size());
        auto mk = [&](const std::string& name, int r, int c, double stddev) {
            params.create(name, stddev == 0.0 ? nn::Tensor::zeros(r, c)
                                              : nn::Tensor::randn(r, c, rng, stddev));
        };
        mk("token_emb", vocab, w, 0.3);
        mk("patch_embed.W", w, patch_dim(cfg), 1.0 / std::sqrt(patch_dim(cfg)));
        mk("patch_embed.b", 1, w, 0.0);
        mk("time_mlp.W1", w, w, 1.0 / std::sqrt(w));
        mk("time_mlp.b1", 1, w, 0.0);
        mk("time_mlp.W2", w, w, 1.0 / std::sqrt(w));
        mk("time_mlp.b2", 1, w, 0.0);
        for (int i = 0; i < cfg.blocks; ++i) init_block_params(block_prefix(i), rng);
        mk("final_ln.g", 1, w, 0.0);
        for (auto& v : params.at("final_ln.g").value.data) v = 1.0f;
        mk("final_ln.b", 1, w, 0.0);
        mk("unembed.W", patch_dim(cfg), w, 0.0);  // zero-init output head
        mk("unembed.b", 1, patch_dim(cfg), 0.0);

        video_pos_ = dit_detail::video_positional(cfg);
        text_pos_ = dit_detail::text_positional(cfg);
    }

    static std::string block_prefix(int i) { return "block" + std::to_string(i); }

    // Layer names that accept low-rank adapters (attention + MLP linears).
    std::vector<std::string> adapter_layer_names() const {
        std::vector<std::string> out;
        for (int i = 0; i < cfg.blocks; ++i) {
            const std::string p = block_prefix(i);
            for (const char* tail : {".attn_s.qkv", ".attn_s.proj", ".attn_t.qkv",
                                     ".attn_t.proj", ".mlp.fc1", ".mlp.fc2"})
                out.push_back(p + tail);
        }
        return out;
    }

    int adapter_layer_in_dim(const std::string& layer) const {
        return params.at(layer + ".W").value.cols;
    }
    int adapter_layer_out_dim(const std::string& layer) const {
        return params.at(layer + ".W").value.rows;
    }

    // The exact video-token tensor fed to block 0 (patch embed + factorized
    // positions + noise-time embedding); the control branch consumes it too.
    nn::Var video_tokens(ForwardCtx& ctx, const nn::Tensor& z_patches, double s) {
        nn::Var vt = nn::linear(nn::constant(z_patches), ctx.binding.bind(params.at("patch_embed.W")),
                                ctx.binding.bind(params.at("patch_embed.b")));
        vt = nn::add(vt, nn::constant(video_pos_));
        return nn::add_rowvector(vt, time_embedding(ctx, s));
    }

    // Velocity prediction in patch layout. `control`, when present, must
    // hold exactly ceil(0.25 L) residuals that are added token-wise to the
    // video rows before each of the first blocks.
    nn::Var denoiser_forward(ForwardCtx& ctx, const nn::Tensor& z_patches, double s,
                             const PromptTokens& prompt,
                             const std::vector<nn::Var>* control = nullptr,
                             nn::Var video_tokens_var = nullptr) {
        if (control && static_cast<int>(control->size()) != cfg.control_blocks())
            throw std::invalid_argument("denoiser_forward: control residual count mismatch");
        const int ntxt = static_cast<int>(prompt.ids.size());

        nn::Var vt = video_tokens_var ? video_tokens_var : video_tokens(ctx, z_patches, s);
        nn::Var x = vt;
        if (ntxt > 0) {
            nn::Var tt = prompt_tokens_var(ctx, prompt);
            tt = nn::add_rowvector(tt, time_embedding(ctx, s));
            x = nn::concat_rows(tt, vt);
        }

        for (int i = 0; i < cfg.blocks; ++i) {
            if (control && i < cfg.control_blocks())
                x = nn::add_to_rows(x, (*control)[i], ntxt);
            x = block_forward(ctx, x, i, ntxt);
        }
        x = nn::layernorm(x, ctx.binding.bind(params.at("final_ln.g")),
                          ctx.binding.bind(params.at("final_ln.b")));
        nn::Var vout = ntxt > 0 ? nn::slice_rows(x, ntxt, cfg.video_tokens()) : x;
        return adapted_linear(ctx, "unembed", vout, /*adaptable=*/false);
    }

    nn::Var prompt_tokens_var(ForwardCtx& ctx, const PromptTokens& prompt) {
        if (prompt.ids.empty()) throw std::invalid_argument("prompt_tokens_var: empty prompt");
        nn::Var emb = nn::embedding_rows(ctx.binding.bind(params.at("token_emb")), prompt.ids);
        for (const AdapterSet* a : ctx.adapters) {
            if (!a || a->token_delta_rows.empty()) continue;
            std::vector<int> rows(prompt.ids.size(), -1);
            bool any = false;
            for (std::size_t k = 0; k < prompt.ids.size(); ++k) {
                auto it = a->token_delta_rows.find(prompt.ids[k]);
                if (it != a->token_delta_rows.end()) {
                    rows[k] = it->second;
                    any = true;
                }
            }
            if (any) {
                auto& self = const_cast<AdapterSet&>(*a);
                emb = nn::add(emb, nn::gather_rows_or_zero(
                                       ctx.binding.bind(self.params.at("token_delta")), rows));
            }
        }
        nn::Tensor pos(static_cast<int>(prompt.ids.size()), cfg.width);
        for (int r = 0; r < pos.rows; ++r)
            for (int c = 0; c < cfg.width; ++c) pos.at(r, c) = text_pos_.at(r, c);
        return nn::add(emb, nn::constant(pos));
    }

    nn::Var time_embedding(ForwardCtx& ctx, double s) {
        nn::Var f = nn::constant(dit_detail::time_features(cfg, s));
        nn::Var h = nn::gelu(nn::linear(f, ctx.binding.bind(params.at("time_mlp.W1")),
                                        ctx.binding.bind(params.at("time_mlp.b1"))));
        return nn::linear(h, ctx.binding.bind(params.at("time_mlp.W2")),
                          ctx.binding.bind(params.at("time_mlp.b2")));
    }

    nn::Var block_forward(ForwardCtx& ctx, nn::Var x, int i, int ntxt) {
        const std::string p = block_prefix(i);
        auto ln = [&](const nn::Var& in, const std::string& name) {
            return nn::layernorm(in, ctx.binding.bind(params.at(p + name + ".g")),
                                 ctx.binding.bind(params.at(p + name + ".b")));
        };
        nn::Var h = ln(x, ".ln1");
        h = adapted_linear(ctx, p + ".attn_s.qkv", h);
        h = nn::grouped_attention(h, cfg.heads, spatial_pattern(ntxt));
        x = nn::add(x, adapted_linear(ctx, p + ".attn_s.proj", h));

        h = ln(x, ".ln2");
        h = adapted_linear(ctx, p + ".attn_t.qkv", h);
        h = nn::grouped_attention(h, cfg.heads, temporal_pattern(ntxt));
        x = nn::add(x, adapted_linear(ctx, p + ".attn_t.proj", h));

        h = ln(x, ".ln3");
        h = nn::gelu(adapted_linear(ctx, p + ".mlp.fc1", h));
        x = nn::add(x, adapted_linear(ctx, p + ".mlp.fc2", h));
        return x;
    }

    nn::Var adapted_linear(ForwardCtx& ctx, const std::string& layer, const nn::Var& x,
                           bool adaptable = true) {
        nn::Var y = nn::linear(x, ctx.binding.bind(params.at(layer + ".W")),
                               ctx.binding.bind(params.at(layer + ".b")));
        if (adaptable)
            for (const AdapterSet* a : ctx.adapters)
                if (a) y = a->apply(ctx.binding, layer, x, y);
        return y;
    }

    std::shared_ptr<const nn::AttentionPattern> spatial_pattern(int ntxt) {
        auto it = spatial_cache_.find(ntxt);
        if (it != spatial_cache_.end()) return it->second;
        auto pat = std::make_shared<nn::AttentionPattern>();
        const int tf = cfg.token_frames(), th = cfg.token_height(), tw = cfg.token_width();
        pat->sequence_rows = ntxt + cfg.video_tokens();
        if (ntxt > 0) {
            nn::AttentionGroup text;
            for (int k = 0; k < ntxt; ++k) text.q_idx.push_back(k);
            text.kv_idx = text.q_idx;
            pat->groups.push_back(std::move(text));
        }
        for (int tt = 0; tt < tf; ++tt) {
            nn::AttentionGroup g;
            for (int k = 0; k < ntxt; ++k) g.kv_idx.push_back(k);
            for (int y = 0; y < th; ++y)
                for (int x = 0; x < tw; ++x) {
                    int idx = ntxt + (tt * th + y) * tw + x;
                    g.q_idx.push_back(idx);
                    g.kv_idx.push_back(idx);
                }
            pat->groups.push_back(std::move(g));
        }
        spatial_cache_[ntxt] = pat;
        return pat;
    }

    std::shared_ptr<const nn::AttentionPattern> temporal_pattern(int ntxt) {
        auto it = temporal_cache_.find(ntxt);
        if (it != temporal_cache_.end()) return it->second;
        auto pat = std::make_shared<nn::AttentionPattern>();
        const int tf = cfg.token_frames(), th = cfg.token_height(), tw = cfg.token_width();
        pat->sequence_rows = ntxt + cfg.video_tokens();
        if (ntxt > 0) {
            nn::AttentionGroup text;
            for (int k = 0; k < ntxt; ++k) text.q_idx.push_back(k);
            text.kv_idx = text.q_idx;
            pat->groups.push_back(std::move(text));
        }
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x) {
                nn::AttentionGroup g;
                for (int k = 0; k < ntxt; ++k) g.kv_idx.push_back(k);
                for (int tt = 0; tt < tf; ++tt) {
                    int idx = ntxt + (tt * th + y) * tw + x;
                    g.q_idx.push_back(idx);
                    g.kv_idx.push_back(idx);
                }
                pat->groups.push_back(std::move(g));
            }
        temporal_cache_[ntxt] = pat;
        return pat;
    }

    const nn::Tensor& video_positional_encoding() const { return video_pos_; }

private:
    void init_block_params(const std::string& p, Rng& rng) {
        const int w = cfg.width;
        auto mk = [&](const std::string& name, int r, int c, double stddev) {
            params.create(p + name, stddev == 0.0 ? nn::Tensor::zeros(r, c)
                                                  : nn::Tensor::randn(r, c, rng, stddev));
        };
        for (const char* lnname : {".ln1", ".ln2", ".ln3"}) {
            mk(std::string(lnname) + ".g", 1, w, 0.0);
            for (auto& v : params.at(p + lnname + ".g").value.data) v = 1.0f;
            mk(std::string(lnname) + ".b", 1, w, 0.0);
        }
        const double ws = 1.0 / std::sqrt(w);
        mk(".attn_s.qkv.W", 3 * w, w, ws);
        mk(".attn_s.qkv.b", 1, 3 * w, 0.0);
        mk(".attn_s.proj.W", w, w, ws / std::sqrt(2.0 * cfg.blocks));
        mk(".attn_s.proj.b", 1, w, 0.0);
        mk(".attn_t.qkv.W", 3 * w, w, ws);
        mk(".attn_t.qkv.b", 1, 3 * w, 0.0);
        mk(".attn_t.proj.W", w, w, ws / std::sqrt(2.0 * cfg.blocks));
        mk(".attn_t.proj.b", 1, w, 0.0);
        mk(".mlp.fc1.W", 4 * w, w, ws);
        mk(".mlp.fc1.b", 1, 4 * w, 0.0);
        mk(".mlp.fc2.W", w, 4 * w, 0.5 / std::sqrt(w) / std::sqrt(2.0 * cfg.blocks));
        mk(".mlp.fc2.b", 1, w, 0.0);
    }

    nn::Tensor video_pos_, text_pos_;
    std::map<int, std::shared_ptr<const nn::AttentionPattern>> spatial_cache_, temporal_cache_;
};

// ---- Rectified-flow training ------------------------------------------------

struct TrainItem {
    nn::Tensor x_patches;  // clean video, model space, patch layout
    PromptTokens prompt;
    std::optional<PluckerMap> plucker;   // present when camera-conditioned
    const nn::Tensor* loss_mask = nullptr;  // optional element mask (i2v)
};

// z_s = (1-s) x + s eps, velocity target eps - x.
inline nn::Tensor flow_interpolate(const nn::Tensor& x, const nn::Tensor& eps, double s) {
    nn::Tensor z(x.rows, x.cols);
    const float fs = static_cast<float>(s), fo = static_cast<float>(1.0 - s);
    for (std::size_t k = 0; k < z.data.size(); ++k)
        z.data[k] = fo * x.data[k] + fs * eps.data[k];
    return z;
}

inline nn::Tensor gaussian_patches(const ModelConfig& cfg, Rng& rng) {
    nn::Tensor t(cfg.video_tokens(), patch_dim(cfg));
    for (auto& v : t.data) v = static_cast<float>(rng.normal());
    return t;
}

// ---- Sampling -----------------------------------------------------------------

// Euler integration of the velocity field from s=1 to s=0 over N uniform
// steps. The callable sees (z, s, step index) and returns the velocity.
template <typename VelocityFn>
nn::Tensor euler_integrate(nn::Tensor z, int steps, VelocityFn&& velocity,
                           const std::function<void(nn::Tensor&, int)>& post_step = nullptr) {
    if (steps < 1) throw std::invalid_argument("euler_integrate: steps must be >= 1");
    const float h = 1.0f / static_cast<float>(steps);
    for (int i = 0; i < steps; ++i) {
        const double s = 1.0 - static_cast<double>(i) / steps;
        nn::Tensor v = velocity(z, s, i);
        if (v.rows != z.rows || v.cols != z.cols)
            throw std::runtime_error("euler_integrate: velocity shape mismatch");
        for (std::size_t k = 0; k < z.data.size(); ++k) z.data[k] -= h * v.data[k];
        if (post_step) post_step(z, i);
    }
    return z;
}

inline int warmup_steps(double warmup_fraction, int steps) {
    return static_cast<int>(std::ceil(warmup_fraction * steps));
}

}  // namespace camdiff
