#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mcn/control.hpp"
#include "mcn/diffusion.hpp"
#include "mcn/params.hpp"

namespace mcn {

// Scalar loss over a parameter set, evaluated under an active tape by the
// gradient helpers. The stochastic realization (batch, noise draw) is bound
// inside the closure so inner and outer passes see the same function.
using TaskLoss = std::function<Tensor(const ParamSet& theta)>;

struct MetaConfig {
    double inner_alpha = 1e-3;
    double outer_alpha = 1e-3;
    int total_batch = 24;     // split evenly across tasks
    int grad_accum = 1;
    int steps = 300;
    int inner_steps = 1;      // single inner update in v1
    FreezePolicy freeze = FreezePolicy::Enc4Mid;
    std::string optimizer = "adam";  // "adam" | "sgd"
    uint64_t seed = 0;
    bool track_zc_groups = false;  // per-step zero-link gradient norms (ablations)
};

// Adaptation trains every ctrl parameter: no freeze mask, no meta loop.
struct AdaptConfig {
    int steps = 100;
    int grad_accum = 2;  // doubled relative to the meta default for stability
    int shots = 16;      // distinct finetuning images
    int batch = 8;
    double alpha = 1e-3;
    std::string optimizer = "adam";
    uint64_t seed = 0;
};

struct AdamState {
    ParamSet m;
    ParamSet v;
    int64_t t = 0;
    bool initialized() const { return !m.empty(); }
};

struct StepLog {
    int step = 0;
    std::string task;
    double loss = 0;
    double grad_norm = 0;
    double wall_ms = 0;
};

struct GroupNormLog {
    int step = 0;
    std::string group;
    double grad_norm = 0;
};

struct TrainResult {
    ParamSet theta;
    AdamState opt;
    uint64_t rng_state = 0;  // training stream state at exit
    std::vector<StepLog> log;
    std::vector<GroupNormLog> zc_log;
    int64_t images_consumed = 0;
};

// Per-task batches for one accumulation round, ordered by task name.
class BatchProvider {
  public:
    virtual ~BatchProvider() = default;
    virtual std::vector<Batch> next_round() = 0;
    virtual int64_t images_consumed() const = 0;
};

struct GradEval {
    ParamSet grads;  // same paths as theta
    double loss = 0;
};

// Tape gradient of `loss` at theta. Throws NumericError (tagged with `tag`)
// on non-finite loss or gradients.
GradEval eval_gradient(const TaskLoss& loss, const ParamSet& theta, const std::string& tag);

// theta' = theta - alpha * grad on unfrozen paths; frozen paths keep the
// identical tensor. theta itself is untouched.
ParamSet sgd_step(const ParamSet& theta, const ParamSet& grads, double alpha,
                  const FreezeMask& mask);

ParamSet inner_step(const ParamSet& theta, const TaskLoss& loss, double alpha,
                    const FreezeMask& mask, const std::string& task);

struct TaskEval {
    std::string task;
    ParamSet theta_task;
    TaskLoss loss;
};

// Mean over tasks of the gradient at each task's finetuned parameters.
// First-order: nothing differentiates through the inner step. Accumulation
// is fixed to sorted task order so permuting inputs is bitwise invisible.
ParamSet meta_gradient(const std::vector<TaskEval>& tasks, std::vector<double>* task_norms = nullptr,
                       std::vector<double>* task_losses = nullptr);

ParamSet outer_step(const ParamSet& theta, const ParamSet& grad, double alpha,
                    const FreezeMask& mask, const std::string& optimizer, AdamState* state);

TrainResult meta_train(const ControlModel& model, const ParamSet& theta0,
                       const NoiseSchedule& sched, const MetaConfig& cfg,
                       BatchProvider& batches);

TrainResult adapt(const ControlModel& model, const ParamSet& theta0, const NoiseSchedule& sched,
                  const AdaptConfig& cfg, BatchProvider& batches);

// Single-loop multi-task SGD on the same per-round batches; the comparison
// baseline against meta_train at matched compute.
TrainResult baseline_joint_train(const ControlModel& model, const ParamSet& theta0,
                                 const NoiseSchedule& sched, const MetaConfig& cfg,
                                 BatchProvider& batches);

// Unconditional pretraining of the bare U-Net (the frozen prior every
// control experiment starts from).
TrainResult train_base(const UNetConfig& cfg, const ParamSet& base0, const NoiseSchedule& sched,
                       int steps, double alpha, const std::string& optimizer, int grad_accum,
                       uint64_t seed, BatchProvider& batches);

void write_loss_log_csv(const std::string& path, const std::vector<StepLog>& log);
void write_group_norm_csv(const std::string& path, const std::vector<GroupNormLog>& log);

}  // namespace mcn
