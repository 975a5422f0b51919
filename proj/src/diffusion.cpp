#include "mcn/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace mcn {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
    if (T < 2) throw ShapeError("schedule: T must be >= 2");
    if (!(beta_start > 0) || !(beta_end < 1) || !(beta_start < beta_end))
        throw ShapeError("schedule: need 0 < beta_start < beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<size_t>(T));
    s.alpha.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        double b = beta_start + (beta_end - beta_start) * t / (T - 1);
        s.beta[static_cast<size_t>(t)] = b;
        s.alpha[static_cast<size_t>(t)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<size_t>(t)] = prod;
    }
    return s;
}

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    if (t < 0 || t >= sched.T)
        throw ShapeError("forward_noise: t=" + std::to_string(t) + " outside [0," +
                         std::to_string(sched.T) + ")");
    double ab = sched.alpha_bar[static_cast<size_t>(t)];
    return add(scale(x0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

NoiseDraw draw_noise(const Batch& batch, const NoiseSchedule& sched, Rng& rng) {
    if (batch.size() == 0) throw DataError("draw_noise: empty batch");
    NoiseDraw d;
    d.t.resize(static_cast<size_t>(batch.size()));
    for (int i = 0; i < batch.size(); ++i)
        d.t[static_cast<size_t>(i)] = static_cast<int>(rng.next_below(static_cast<uint64_t>(sched.T)));
    d.eps = Tensor::randn(batch.x0.shape(), rng, batch.x0.dtype());
    return d;
}

Tensor diffusion_loss(const ModelFn& model, const Batch& batch, const NoiseDraw& draw,
                      const NoiseSchedule& sched) {
    const int n = batch.size();
    const int64_t per = batch.x0.numel() / n;
    // x_t is a constant input: gradients flow only through the model.
    Tensor x_t = Tensor::zeros(batch.x0.shape(), batch.x0.dtype());
    for (int i = 0; i < n; ++i) {
        double ab = sched.alpha_bar[static_cast<size_t>(draw.t[static_cast<size_t>(i)])];
        double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        for (int64_t k = 0; k < per; ++k) {
            int64_t idx = static_cast<int64_t>(i) * per + k;
            x_t.set(idx, sa * batch.x0.get(idx) + sb * draw.eps.get(idx));
        }
    }
    Tensor eps_hat = model(x_t, draw.t, batch.control ? &*batch.control : nullptr,
                           batch.class_ids ? &*batch.class_ids : nullptr);
    Tensor loss = mse_loss(eps_hat, draw.eps);
    if (!std::isfinite(loss.item())) {
        int bad = 0;
        for (int i = 0; i < n; ++i)
            for (int64_t k = 0; k < per; ++k)
                if (!std::isfinite(eps_hat.get(static_cast<int64_t>(i) * per + k))) {
                    bad = i;
                    i = n;
                    break;
                }
        throw NumericError("training loss non-finite at batch index " + std::to_string(bad));
    }
    return loss;
}

Tensor training_loss(const ModelFn& model, const Batch& batch, const NoiseSchedule& sched,
                     Rng& rng) {
    NoiseDraw draw = draw_noise(batch, sched, rng);
    return diffusion_loss(model, batch, draw, sched);
}

Tensor sample(const ModelFn& model, const Tensor* control, const std::vector<int>* class_ids,
              const NoiseSchedule& sched, int steps, int n, int image_size, uint64_t seed,
              DType dt) {
    if (steps != sched.T)
        throw ShapeError("sample: steps must equal schedule T (" + std::to_string(sched.T) + ")");
    Rng rng(seed);
    Tensor x = Tensor::randn({n, 1, image_size, image_size}, rng, dt);
    const int64_t total = x.numel();
    std::vector<int> tvec(static_cast<size_t>(n));
    for (int t = sched.T - 1; t >= 0; --t) {
        std::fill(tvec.begin(), tvec.end(), t);
        Tensor eps_hat = model(x, tvec, control, class_ids);
        double ab = sched.alpha_bar[static_cast<size_t>(t)];
        double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        if (t > 0) {
            double ab_prev = sched.alpha_bar[static_cast<size_t>(t - 1)];
            double beta = sched.beta[static_cast<size_t>(t)];
            double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
            double c1 = std::sqrt(sched.alpha[static_cast<size_t>(t)]) * (1.0 - ab_prev) / (1.0 - ab);
            double sigma = std::sqrt((1.0 - ab_prev) / (1.0 - ab) * beta);
            Tensor z = Tensor::randn(x.shape(), rng, dt);
            Tensor next = Tensor::zeros(x.shape(), dt);
            for (int64_t i = 0; i < total; ++i) {
                double x0_hat = (x.get(i) - sb * eps_hat.get(i)) / sa;
                x0_hat = std::clamp(x0_hat, -1.0, 1.0);
                next.set(i, c0 * x0_hat + c1 * x.get(i) + sigma * z.get(i));
            }
            x = next;
        } else {
            Tensor next = Tensor::zeros(x.shape(), dt);
            for (int64_t i = 0; i < total; ++i) {
                double x0_hat = (x.get(i) - sb * eps_hat.get(i)) / sa;
                next.set(i, std::clamp(x0_hat, -1.0, 1.0));
            }
            x = next;
        }
    }
    return x;
}

}  // namespace mcn
