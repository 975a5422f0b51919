#pragma once

#include <string>
#include <vector>

#include "mcn/diffusion.hpp"
#include "mcn/meta.hpp"

namespace mcn {

// Control-map families. The three meta-train kinds mirror boundary, region
// and depth style conditioning; canny and orientation are held-out edge
// tasks; the skeleton pair provides the sparse-line few-shot tasks in both
// directions (skeleton-inverse generates the skeleton from the shape).
enum class TaskKind {
    EdgeSobel,
    SegQuantize,
    DepthDistance,
    EdgeCanny,
    NormalOrientation,
    Skeleton,
    SkeletonInverse,
};

enum class TaskRole { MetaTrain, ZeroShot, FewShot };

struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::EdgeSobel;
    TaskRole role = TaskRole::MetaTrain;
};

const std::vector<TaskSpec>& task_registry();
const TaskSpec& task_by_name(const std::string& name);
std::vector<TaskSpec> meta_train_tasks();

struct ShapeObject {
    int kind = 0;  // 0 circle, 1 rectangle, 2 triangle
    double cx = 0, cy = 0;
    double r = 0;            // circle/triangle radius
    double ax = 0, ay = 0;   // rectangle half extents
    double angle = 0;
    double value = 1.0;      // foreground intensity in [0.4, 1]
    bool contains(double x, double y) const;
};

struct ShapeImage {
    Tensor pixels;  // [1,H,W], values on the 8-bit grid of [-1,1], background -1
    int class_id = 0;  // 0 circle, 1 rectangle, 2 triangle, 3 multi-object
    int id = 0;
    std::vector<ShapeObject> objects;  // generator parameters (empty after reload)

    double foreground_fraction() const;
};

struct Dataset {
    std::vector<ShapeImage> images;
    int size = 0;
    uint64_t seed = 0;

    int count() const { return static_cast<int>(images.size()); }
    // Fixed 90/10 split by index; classes interleave mod 4 so both halves
    // stay balanced.
    int train_count() const { return count() - test_count(); }
    int test_count() const { return std::max(1, count() / 10); }
};

Dataset gen_dataset(int n, int size, uint64_t seed);

Tensor control_map(const ShapeImage& image, TaskKind kind);

// Target/control pair of one image under a task; for SkeletonInverse the
// skeleton render is the generation target and the shape is the control.
struct TaskPair {
    Tensor target;   // [1,H,W]
    Tensor control;  // [1,H,W]
};
TaskPair task_pair(const ShapeImage& image, TaskKind kind);

Batch assemble_batch(const Dataset& ds, const std::vector<int>& indices, const TaskSpec& task,
                     bool with_class_ids = false);

// Draws total_batch train images without replacement per round, partitions
// them evenly across tasks in sorted-name order, and reshuffles per epoch.
class BatchSource : public BatchProvider {
  public:
    BatchSource(const Dataset& ds, std::vector<TaskSpec> tasks, int total_batch, uint64_t seed,
                bool with_class_ids = false);
    // Target-only batches (no control), task label "base".
    static BatchSource plain(const Dataset& ds, int batch, uint64_t seed,
                             bool with_class_ids = false);
    // Few-shot source restricted to the first `shots` train images of one task.
    static BatchSource few_shot(const Dataset& ds, const TaskSpec& task, int shots, int batch,
                                uint64_t seed, bool with_class_ids = false);

    std::vector<Batch> next_round() override;
    int64_t images_consumed() const override { return consumed_; }
    const std::vector<TaskSpec>& tasks() const { return tasks_; }

  private:
    BatchSource() = default;
    const Dataset* ds_ = nullptr;
    std::vector<TaskSpec> tasks_;  // sorted by name; empty in plain mode
    std::vector<int> pool_;        // candidate indices
    std::vector<int> order_;       // current epoch permutation
    size_t cursor_ = 0;
    int total_batch_ = 0;
    Rng rng_;
    bool with_class_ids_ = false;
    bool plain_ = false;
    int64_t consumed_ = 0;

    void reshuffle();
    std::vector<int> draw(int n);
};

void save_dataset(const Dataset& ds, const std::string& dir, bool force);
Dataset load_dataset(const std::string& dir);

}  // namespace mcn
