#include "mcn/meta.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace mcn {

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

void check_finite(const ParamSet& grads, const std::string& tag) {
    for (const auto& [path, g] : grads)
        if (!g.allfinite())
            throw NumericError(tag + ": non-finite gradient at '" + path + "'");
}

void scale_inplace(ParamSet& p, double c) {
    for (const auto& [path, t] : p) {
        Tensor tt = t;
        for (int64_t i = 0; i < tt.numel(); ++i) tt.set(i, tt.get(i) * c);
    }
}

void accumulate_into(ParamSet& acc, const ParamSet& g) {
    if (acc.empty()) {
        for (const auto& [path, t] : g) acc.insert(path, t.clone());
        return;
    }
    for (const auto& [path, t] : g) {
        Tensor dst = acc.at(path);
        add_into(dst, t);
    }
}

double param_norm(const ParamSet& p) {
    double s = 0;
    for (const auto& [path, t] : p)
        for (int64_t i = 0; i < t.numel(); ++i) {
            double v = t.get(i);
            s += v * v;
        }
    return std::sqrt(s);
}

double group_norm_of(const ParamSet& grads, const std::string& prefix) {
    double s = 0;
    for (const auto& [path, t] : grads) {
        if (path.rfind(prefix, 0) != 0) continue;
        for (int64_t i = 0; i < t.numel(); ++i) {
            double v = t.get(i);
            s += v * v;
        }
    }
    return std::sqrt(s);
}

}  // namespace

GradEval eval_gradient(const TaskLoss& loss, const ParamSet& theta, const std::string& tag) {
    for (const auto& [path, t] : theta) {
        Tensor tt = t;
        tt.set_requires_grad(true);
    }
    GradTape tape;
    double loss_value = 0;
    {
        TapeScope scope(tape);
        Tensor l = loss(theta);
        if (l.ndim() != 0) throw ShapeError(tag + ": loss must be 0-d");
        loss_value = l.item();
        if (!std::isfinite(loss_value)) throw NumericError(tag + ": non-finite loss");
        tape.backward(l);
    }
    GradEval out;
    out.loss = loss_value;
    for (const auto& [path, t] : theta) out.grads.insert(path, tape.grad(t));
    check_finite(out.grads, tag);
    return out;
}

ParamSet sgd_step(const ParamSet& theta, const ParamSet& grads, double alpha,
                  const FreezeMask& mask) {
    ParamSet out;
    for (const auto& [path, p] : theta) {
        if (mask.frozen(path)) {
            out.insert(path, p);
            continue;
        }
        const Tensor& g = grads.at(path);
        Tensor next = Tensor::zeros(p.shape(), p.dtype());
        for (int64_t i = 0; i < p.numel(); ++i) next.set(i, p.get(i) - alpha * g.get(i));
        out.insert(path, next);
    }
    return out;
}

ParamSet inner_step(const ParamSet& theta, const TaskLoss& loss, double alpha,
                    const FreezeMask& mask, const std::string& task) {
    GradEval ev = eval_gradient(loss, theta, "inner step (" + task + ")");
    return sgd_step(theta, ev.grads, alpha, mask);
}

ParamSet meta_gradient(const std::vector<TaskEval>& tasks, std::vector<double>* task_norms,
                       std::vector<double>* task_losses) {
    if (tasks.empty()) throw DataError("meta_gradient: task list is empty");
    std::vector<size_t> order(tasks.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return tasks[a].task < tasks[b].task; });

    if (task_norms) task_norms->assign(tasks.size(), 0.0);
    if (task_losses) task_losses->assign(tasks.size(), 0.0);

    ParamSet acc;
    for (size_t idx : order) {
        const TaskEval& te = tasks[idx];
        GradEval ev = eval_gradient(te.loss, te.theta_task, "meta gradient (" + te.task + ")");
        if (task_norms) (*task_norms)[idx] = param_norm(ev.grads);
        if (task_losses) (*task_losses)[idx] = ev.loss;
        accumulate_into(acc, ev.grads);
    }
    scale_inplace(acc, 1.0 / static_cast<double>(tasks.size()));
    return acc;
}

ParamSet outer_step(const ParamSet& theta, const ParamSet& grad, double alpha,
                    const FreezeMask& mask, const std::string& optimizer, AdamState* state) {
    for (const auto& [path, g] : grad)
        if (!g.allfinite()) throw NumericError("outer step: non-finite update at '" + path + "'");

    if (optimizer == "sgd") return sgd_step(theta, grad, alpha, mask);
    if (optimizer != "adam") throw ConfigError("unknown optimizer '" + optimizer + "'");
    if (!state) throw ConfigError("adam optimizer requires persistent moment state");

    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (!state->initialized()) {
        for (const auto& [path, p] : theta) {
            state->m.insert(path, Tensor::zeros(p.shape(), p.dtype()));
            state->v.insert(path, Tensor::zeros(p.shape(), p.dtype()));
        }
    }
    state->t += 1;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state->t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state->t));
    ParamSet out;
    for (const auto& [path, p] : theta) {
        if (mask.frozen(path)) {
            out.insert(path, p);
            continue;
        }
        const Tensor& g = grad.at(path);
        Tensor m = state->m.at(path);
        Tensor v = state->v.at(path);
        Tensor next = Tensor::zeros(p.shape(), p.dtype());
        for (int64_t i = 0; i < p.numel(); ++i) {
            double gi = g.get(i);
            double mi = b1 * m.get(i) + (1.0 - b1) * gi;
            double vi = b2 * v.get(i) + (1.0 - b2) * gi * gi;
            m.set(i, mi);
            v.set(i, vi);
            next.set(i, p.get(i) - alpha * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
        }
        out.insert(path, next);
    }
    return out;
}

namespace {

TaskLoss bind_loss(const ControlModel& model, const Batch& batch, const NoiseDraw& draw,
                   const NoiseSchedule& sched) {
    return [&model, batch, draw, &sched](const ParamSet& theta) {
        return diffusion_loss(control_model_fn(model, theta), batch, draw, sched);
    };
}

struct StepAccumulator {
    std::map<std::string, double> loss_sum;
    std::map<std::string, double> norm_sum;
    int rounds = 0;

    void add(const std::vector<std::string>& names, const std::vector<double>& losses,
             const std::vector<double>& norms) {
        for (size_t i = 0; i < names.size(); ++i) {
            loss_sum[names[i]] += losses[i];
            norm_sum[names[i]] += norms[i];
        }
        rounds += 1;
    }

    void emit(int step, double wall_ms, std::vector<StepLog>& log) const {
        for (const auto& [task, s] : loss_sum) {
            StepLog row;
            row.step = step;
            row.task = task;
            row.loss = s / rounds;
            row.grad_norm = norm_sum.at(task) / rounds;
            row.wall_ms = wall_ms;
            log.push_back(row);
        }
    }
};

void track_zc(const ParamSet& grad, int step, std::vector<GroupNormLog>& zc_log) {
    for (const char* group : {"zc.enc1", "zc.enc2", "zc.enc3", "zc.enc4", "zc.mid"})
        zc_log.push_back({step, group, group_norm_of(grad, group)});
}

}  // namespace

TrainResult meta_train(const ControlModel& model, const ParamSet& theta0,
                       const NoiseSchedule& sched, const MetaConfig& cfg,
                       BatchProvider& batches) {
    if (cfg.inner_steps != 1) throw ConfigError("meta_train: inner_steps is fixed to 1");
    if (cfg.grad_accum < 1) throw ConfigError("meta_train: grad_accum must be >= 1");
    FreezeMask mask = freeze_mask_for(cfg.freeze);
    ParamSet theta = theta0.clone();
    Rng rng = Rng(cfg.seed).fork("training");
    AdamState opt;
    TrainResult result;

    for (int step = 1; step <= cfg.steps; ++step) {
        double t0 = now_ms();
        ParamSet accum;
        StepAccumulator agg;
        for (int r = 0; r < cfg.grad_accum; ++r) {
            std::vector<Batch> round = batches.next_round();
            std::vector<TaskEval> evals;
            std::vector<std::string> names;
            std::vector<double> inner_losses;
            evals.reserve(round.size());
            for (const Batch& b : round) {
                NoiseDraw draw = draw_noise(b, sched, rng);
                TaskLoss loss = bind_loss(model, b, draw, sched);
                GradEval ev = eval_gradient(loss, theta, "inner step (" + b.task + ")");
                ParamSet theta_task = sgd_step(theta, ev.grads, cfg.inner_alpha, mask);
                evals.push_back(TaskEval{b.task, std::move(theta_task), loss});
                names.push_back(b.task);
                inner_losses.push_back(ev.loss);
            }
            std::vector<double> norms;
            ParamSet meta_g = meta_gradient(evals, &norms, nullptr);
            agg.add(names, inner_losses, norms);
            accumulate_into(accum, meta_g);
        }
        if (cfg.grad_accum > 1) scale_inplace(accum, 1.0 / cfg.grad_accum);
        if (cfg.track_zc_groups) track_zc(accum, step, result.zc_log);
        theta = outer_step(theta, accum, cfg.outer_alpha, mask, cfg.optimizer, &opt);
        agg.emit(step, now_ms() - t0, result.log);
    }

    result.theta = std::move(theta);
    result.opt = std::move(opt);
    result.rng_state = rng.state();
    result.images_consumed = batches.images_consumed();
    return result;
}

TrainResult adapt(const ControlModel& model, const ParamSet& theta0, const NoiseSchedule& sched,
                  const AdaptConfig& cfg, BatchProvider& batches) {
    if (cfg.shots == 0 && cfg.steps > 0)
        throw ConfigError("adapt: steps > 0 requires at least one shot");
    FreezeMask mask = FreezeMask::none();
    ParamSet theta = theta0.clone();
    Rng rng = Rng(cfg.seed).fork("training");
    AdamState opt;
    TrainResult result;

    for (int step = 1; step <= cfg.steps; ++step) {
        double t0 = now_ms();
        ParamSet accum;
        StepAccumulator agg;
        for (int r = 0; r < cfg.grad_accum; ++r) {
            std::vector<Batch> round = batches.next_round();
            if (round.size() != 1) throw DataError("adapt: provider must yield a single task");
            const Batch& b = round.front();
            NoiseDraw draw = draw_noise(b, sched, rng);
            GradEval ev =
                eval_gradient(bind_loss(model, b, draw, sched), theta, "adapt (" + b.task + ")");
            agg.add({b.task}, {ev.loss}, {param_norm(ev.grads)});
            accumulate_into(accum, ev.grads);
        }
        if (cfg.grad_accum > 1) scale_inplace(accum, 1.0 / cfg.grad_accum);
        theta = outer_step(theta, accum, cfg.alpha, mask, cfg.optimizer, &opt);
        agg.emit(step, now_ms() - t0, result.log);
    }

    result.theta = std::move(theta);
    result.opt = std::move(opt);
    result.rng_state = rng.state();
    result.images_consumed = batches.images_consumed();
    return result;
}

TrainResult baseline_joint_train(const ControlModel& model, const ParamSet& theta0,
                                 const NoiseSchedule& sched, const MetaConfig& cfg,
                                 BatchProvider& batches) {
    if (cfg.grad_accum < 1) throw ConfigError("joint_train: grad_accum must be >= 1");
    FreezeMask mask = freeze_mask_for(cfg.freeze);
    ParamSet theta = theta0.clone();
    Rng rng = Rng(cfg.seed).fork("training");
    AdamState opt;
    TrainResult result;

    for (int step = 1; step <= cfg.steps; ++step) {
        double t0 = now_ms();
        ParamSet accum;
        StepAccumulator agg;
        for (int r = 0; r < cfg.grad_accum; ++r) {
            std::vector<Batch> round = batches.next_round();
            ParamSet round_acc;
            std::vector<std::string> names;
            std::vector<double> losses, norms;
            for (const Batch& b : round) {
                NoiseDraw draw = draw_noise(b, sched, rng);
                GradEval ev = eval_gradient(bind_loss(model, b, draw, sched), theta,
                                            "joint train (" + b.task + ")");
                names.push_back(b.task);
                losses.push_back(ev.loss);
                norms.push_back(param_norm(ev.grads));
                accumulate_into(round_acc, ev.grads);
            }
            scale_inplace(round_acc, 1.0 / static_cast<double>(round.size()));
            agg.add(names, losses, norms);
            accumulate_into(accum, round_acc);
        }
        if (cfg.grad_accum > 1) scale_inplace(accum, 1.0 / cfg.grad_accum);
        if (cfg.track_zc_groups) track_zc(accum, step, result.zc_log);
        theta = outer_step(theta, accum, cfg.outer_alpha, mask, cfg.optimizer, &opt);
        agg.emit(step, now_ms() - t0, result.log);
    }

    result.theta = std::move(theta);
    result.opt = std::move(opt);
    result.rng_state = rng.state();
    result.images_consumed = batches.images_consumed();
    return result;
}

TrainResult train_base(const UNetConfig& ucfg, const ParamSet& base0, const NoiseSchedule& sched,
                       int steps, double alpha, const std::string& optimizer, int grad_accum,
                       uint64_t seed, BatchProvider& batches) {
    if (grad_accum < 1) throw ConfigError("train_base: grad_accum must be >= 1");
    FreezeMask mask = FreezeMask::none();
    ParamSet theta = base0.clone();
    Rng rng = Rng(seed).fork("training");
    AdamState opt;
    TrainResult result;

    for (int step = 1; step <= steps; ++step) {
        double t0 = now_ms();
        ParamSet accum;
        StepAccumulator agg;
        for (int r = 0; r < grad_accum; ++r) {
            std::vector<Batch> round = batches.next_round();
            if (round.size() != 1) throw DataError("train_base: provider must yield one batch");
            const Batch& b = round.front();
            NoiseDraw draw = draw_noise(b, sched, rng);
            TaskLoss loss = [&ucfg, b, draw, &sched](const ParamSet& p) {
                return diffusion_loss(base_model_fn(ucfg, p), b, draw, sched);
            };
            GradEval ev = eval_gradient(loss, theta, "base train");
            agg.add({b.task}, {ev.loss}, {param_norm(ev.grads)});
            accumulate_into(accum, ev.grads);
        }
        if (grad_accum > 1) scale_inplace(accum, 1.0 / grad_accum);
        theta = outer_step(theta, accum, alpha, mask, optimizer, &opt);
        agg.emit(step, now_ms() - t0, result.log);
    }

    result.theta = std::move(theta);
    result.opt = std::move(opt);
    result.rng_state = rng.state();
    result.images_consumed = batches.images_consumed();
    return result;
}

void write_loss_log_csv(const std::string& path, const std::vector<StepLog>& log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write loss log '" + path + "'");
    out << "step,task,loss,grad_norm,wall_ms\n";
    char buf[160];
    for (const StepLog& row : log) {
        std::snprintf(buf, sizeof(buf), "%d,%s,%.9g,%.9g,%.3f\n", row.step, row.task.c_str(),
                      row.loss, row.grad_norm, row.wall_ms);
        out << buf;
    }
}

void write_group_norm_csv(const std::string& path, const std::vector<GroupNormLog>& log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write group norm log '" + path + "'");
    out << "step,group,grad_norm\n";
    char buf[120];
    for (const GroupNormLog& row : log) {
        std::snprintf(buf, sizeof(buf), "%d,%s,%.9g\n", row.step, row.group.c_str(), row.grad_norm);
        out << buf;
    }
}

}  // namespace mcn
