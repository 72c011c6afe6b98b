#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "camdiff/camctrl.hpp"
#include "camdiff/dit.hpp"
#include "camdiff/scenegen.hpp"

namespace camdiff {

struct TrainStepOptions {
    std::vector<const AdapterSet*> adapters;
    double gate_fraction = 0.4;
    // Restrict s to the active gate window (used when the branch trains).
    bool sample_active_noise_only = false;
};

// One rectified-flow step over a batch: z_s = (1-s) x + s eps, target
// velocity eps - x, mean squared error. Gradients reach only parameters the
// caller left trainable. Throws TrainingDivergence on a non-finite loss.
inline double train_step(DiT& model, ControlBranch* branch, const std::vector<TrainItem>& batch,
                         Rng& rng, nn::Adam& opt, const TrainStepOptions& topt = {}) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    ForwardCtx ctx;
    ctx.adapters = topt.adapters;

    nn::Var total;
    for (const TrainItem& item : batch) {
        double s = rng.uniform();
        if (topt.sample_active_noise_only && branch && item.plucker)
            s = 1.0 - topt.gate_fraction * rng.uniform();
        nn::Tensor eps = gaussian_patches(model.cfg, rng);
        nn::Tensor z = flow_interpolate(item.x_patches, eps, s);
        nn::Tensor target(eps.rows, eps.cols);
        for (std::size_t k = 0; k < target.data.size(); ++k)
            target.data[k] = eps.data[k] - item.x_patches.data[k];

        nn::Var vt = model.video_tokens(ctx, z, s);
        std::optional<std::vector<nn::Var>> residuals;
        if (branch && item.plucker) {
            nn::Var cam = branch->encode_plucker(ctx, *item.plucker);
            residuals = control_forward(model, *branch, ctx, vt, cam, s);
        }
        nn::Var out = model.denoiser_forward(ctx, z, s, item.prompt,
                                             residuals ? &*residuals : nullptr, vt);
        nn::Var item_loss = nn::mse_masked(out, target, item.loss_mask);
        total = total ? nn::add(total, item_loss) : item_loss;
    }
    nn::Var loss = batch.size() > 1 ? nn::scale(total, 1.0f / batch.size()) : total;

    const double loss_value = loss->value.data[0];
    if (!std::isfinite(loss_value))
        throw TrainingDivergence("train_step: non-finite loss (batch size " +
                                 std::to_string(batch.size()) + ")");
    nn::backward(loss);
    opt.step(ctx.binding);
    return loss_value;
}

// ---- Stage data preparation -------------------------------------------------

struct PreparedItem {
    nn::Tensor x_patches;  // model space
    PromptTokens prompt;
    std::optional<PluckerMap> plucker;
};

inline std::vector<PreparedItem> prepare_items(const std::vector<LoadedItem>& items,
                                               const ModelConfig& cfg, bool with_plucker) {
    std::vector<PreparedItem> out;
    out.reserve(items.size());
    for (const auto& item : items) {
        PreparedItem p;
        p.x_patches = extract_patches(to_model_space(item.video), cfg);
        p.prompt = PromptTokens::from_words(item.prompt_words);
        if (with_plucker) p.plucker = plucker_embed(item.traj, cfg.height, cfg.width_px);
        out.push_back(std::move(p));
    }
    return out;
}

inline std::vector<TrainItem> draw_batch(const std::vector<PreparedItem>& items, int batch,
                                         Rng& rng) {
    std::vector<TrainItem> out;
    out.reserve(batch);
    for (int k = 0; k < batch; ++k) {
        const PreparedItem& p = items[rng.uniform_index(items.size())];
        TrainItem t;
        t.x_patches = p.x_patches;
        t.prompt = p.prompt;
        if (p.plucker) t.plucker = p.plucker;
        out.push_back(std::move(t));
    }
    return out;
}

struct StageLog {
    std::vector<double> losses;
};

// Shared divergence watchdog: abort when the loss exceeds 10x the initial
// value for 100 consecutive steps.
class DivergenceWatch {
public:
    void observe(double loss) {
        if (initial_ < 0.0) initial_ = loss;
        run_ = (loss > 10.0 * initial_) ? run_ + 1 : 0;
        if (run_ >= 100) throw TrainingDivergence("training diverged (loss > 10x initial)");
    }

private:
    double initial_ = -1.0;
    int run_ = 0;
};

// Stage-one part A: the unconditioned backbone trained on the general set.
// No pretrained model exists at this scale, so the freeze contract of the
// camera stage is preserved by training the main DiT first and freezing it
// afterwards.
inline StageLog pretrain_base(DiT& model, const std::vector<PreparedItem>& items, int steps,
                              int batch, double lr, std::uint64_t seed) {
    model.params.set_trainable(true);
    nn::Adam opt(nn::AdamOptions{.lr = lr});
    Rng rng(derive_seed(seed, "pretrain_base", 0));
    StageLog log;
    DivergenceWatch watch;
    for (int step = 0; step < steps; ++step) {
        auto b = draw_batch(items, batch, rng);
        for (auto& item : b) item.plucker.reset();  // unconditioned stage
        double loss = train_step(model, nullptr, b, rng, opt);
        watch.observe(loss);
        log.losses.push_back(loss);
    }
    return log;
}

// Stage-one part B: freeze the main DiT, train only the ControlNet branch.
inline StageLog pretrain_camera(DiT& model, ControlBranch& branch,
                                const std::vector<PreparedItem>& items,
                                const CameraPretrainConfig& cfg, std::uint64_t seed) {
    model.params.set_trainable(false);
    branch.params.set_trainable(true);
    nn::Adam opt(nn::AdamOptions{.lr = cfg.lr});
    Rng rng(derive_seed(seed, "pretrain_camera", 0));
    TrainStepOptions topt;
    topt.gate_fraction = cfg.gate_fraction;
    topt.sample_active_noise_only = cfg.sample_active_noise_only;
    StageLog log;
    DivergenceWatch watch;
    for (int step = 0; step < cfg.steps; ++step) {
        auto batch = draw_batch(items, cfg.batch, rng);
        double loss = train_step(model, &branch, batch, rng, opt, topt);
        watch.observe(loss);
        log.losses.push_back(loss);
    }
    return log;
}

// ---- Checkpoints --------------------------------------------------------------

inline nlohmann::json model_config_to_json(const ModelConfig& m) {
    return {{"blocks", m.blocks},   {"width", m.width},
            {"heads", m.heads},     {"frames", m.frames},
            {"height", m.height},   {"width_px", m.width_px},
            {"sampler_steps", m.sampler_steps}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig m;
    m.blocks = j.at("blocks").get<int>();
    m.width = j.at("width").get<int>();
    m.heads = j.at("heads").get<int>();
    m.frames = j.at("frames").get<int>();
    m.height = j.at("height").get<int>();
    m.width_px = j.at("width_px").get<int>();
    m.sampler_steps = j.at("sampler_steps").get<int>();
    m.validate();
    return m;
}

// Checkpoint = binary float32 blob(s) plus a JSON sidecar carrying the
// config, vocabulary, training stage and seed lineage.
inline void save_checkpoint(const std::string& prefix, const DiT& model,
                            const ControlBranch* branch, const std::string& stage,
                            const nlohmann::json& seed_lineage) {
    nlohmann::json sidecar;
    sidecar["format"] = "camdiff-checkpoint-v1";
    sidecar["config"] = model_config_to_json(model.cfg);
    sidecar["vocabulary"] = vocabulary();
    sidecar["stage"] = stage;
    sidecar["seed_lineage"] = seed_lineage;
    sidecar["has_branch"] = branch != nullptr;
    if (branch) sidecar["gate_fraction"] = branch->gate.fraction;
    nn::save_param_blob(prefix + ".bin", model.params, sidecar);
    if (branch) {
        nlohmann::json bj;
        nn::save_param_blob(prefix + "_branch.bin", branch->params, bj);
        sidecar["branch_tensors"] = bj;
    }
    std::ofstream f(prefix + ".json");
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + prefix + ".json");
    f << sidecar.dump(1) << "\n";
}

struct Checkpoint {
    std::unique_ptr<DiT> model;
    std::unique_ptr<ControlBranch> branch;  // null when the stage had none
    nlohmann::json sidecar;
};

inline Checkpoint load_checkpoint(const std::string& prefix) {
    std::ifstream f(prefix + ".json");
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + prefix + ".json");
    Checkpoint ck;
    f >> ck.sidecar;
    if (ck.sidecar.at("vocabulary").get<std::vector<std::string>>() != vocabulary())
        throw std::runtime_error("load_checkpoint: vocabulary mismatch");
    ModelConfig cfg = model_config_from_json(ck.sidecar.at("config"));
    ck.model = std::make_unique<DiT>(cfg, 0);
    nn::load_param_blob(prefix + ".bin", ck.sidecar, ck.model->params);
    if (ck.sidecar.value("has_branch", false)) {
        double fraction = ck.sidecar.value("gate_fraction", 0.4);
        ck.branch = std::make_unique<ControlBranch>(*ck.model, 0, fraction);
        nn::load_param_blob(prefix + "_branch.bin", ck.sidecar.at("branch_tensors"),
                            ck.branch->params);
    }
    return ck;
}

}  // namespace camdiff
