#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mcn/tensor.hpp"

namespace mcn {

// DDPM variance schedule. Linear betas; defaults reach near-total noising at
// T=200 (the canonical 1e-4..0.02 endpoints assume T=1000, so the end value
// scales with 1000/T to keep alpha_bar(T-1) ~ 1e-5).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    static NoiseSchedule linear(int T = 200, double beta_start = 1e-4, double beta_end = 0.1);
};

// One training batch: targets plus optional conditioning.
struct Batch {
    Tensor x0;                                  // [N,1,H,W]
    std::optional<Tensor> control;              // [N,1,H,W]
    std::optional<std::vector<int>> class_ids;  // [N]
    std::vector<int> ids;                       // dataset indices, for budget accounting
    std::string task;

    int size() const { return x0.defined() ? x0.dim(0) : 0; }
};

// Denoiser interface shared by the bare U-Net and the control model.
using ModelFn = std::function<Tensor(const Tensor& x_t, const std::vector<int>& t,
                                     const Tensor* control, const std::vector<int>* class_ids)>;

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

// The (t, eps) realization of one stochastic loss evaluation. Inner and outer
// FO-MAML passes over the same batch must share one draw so that both see the
// same loss function.
struct NoiseDraw {
    std::vector<int> t;
    Tensor eps;
};

NoiseDraw draw_noise(const Batch& batch, const NoiseSchedule& sched, Rng& rng);
Tensor diffusion_loss(const ModelFn& model, const Batch& batch, const NoiseDraw& draw,
                      const NoiseSchedule& sched);
// Draws (t, eps) internally; mean over the batch of ||eps - eps_hat||^2.
Tensor training_loss(const ModelFn& model, const Batch& batch, const NoiseSchedule& sched,
                     Rng& rng);

// Full ancestral sampler (steps must equal sched.T). Deterministic given
// seed; output clamped to [-1, 1].
Tensor sample(const ModelFn& model, const Tensor* control, const std::vector<int>* class_ids,
              const NoiseSchedule& sched, int steps, int n, int image_size, uint64_t seed,
              DType dt = DType::F32);

}  // namespace mcn
