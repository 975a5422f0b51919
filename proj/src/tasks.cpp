#include "mcn/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mcn/image_io.hpp"

namespace fs = std::filesystem;

namespace mcn {

namespace {

constexpr double kPi = 3.14159265358979323846;

// 8-bit grid shared with the PGM files so in-memory and reloaded datasets
// are bitwise identical.
float byte_to_unit(int b) { return static_cast<float>(b / 127.5 - 1.0); }
int unit_to_byte(double v) { return static_cast<int>(std::lround((v + 1.0) * 127.5)); }

}  // namespace

const std::vector<TaskSpec>& task_registry() {
    static const std::vector<TaskSpec> reg = {
        {"edge-sobel", TaskKind::EdgeSobel, TaskRole::MetaTrain},
        {"seg-quantize", TaskKind::SegQuantize, TaskRole::MetaTrain},
        {"depth-distance", TaskKind::DepthDistance, TaskRole::MetaTrain},
        {"edge-canny", TaskKind::EdgeCanny, TaskRole::ZeroShot},
        {"normal-orientation", TaskKind::NormalOrientation, TaskRole::ZeroShot},
        {"skeleton", TaskKind::Skeleton, TaskRole::FewShot},
        {"skeleton-inverse", TaskKind::SkeletonInverse, TaskRole::FewShot},
    };
    return reg;
}

const TaskSpec& task_by_name(const std::string& name) {
    for (const TaskSpec& t : task_registry())
        if (t.name == name) return t;
    throw ConfigError("unknown task '" + name + "'");
}

std::vector<TaskSpec> meta_train_tasks() {
    std::vector<TaskSpec> out;
    for (const TaskSpec& t : task_registry())
        if (t.role == TaskRole::MetaTrain) out.push_back(t);
    return out;
}

// ---- shape rasterization -----------------------------------------------------

bool ShapeObject::contains(double x, double y) const {
    double dx = x - cx, dy = y - cy;
    switch (kind) {
        case 0:
            return dx * dx + dy * dy <= r * r;
        case 1: {
            double c = std::cos(angle), s = std::sin(angle);
            double u = c * dx + s * dy;
            double v = -s * dx + c * dy;
            return std::abs(u) <= ax && std::abs(v) <= ay;
        }
        case 2: {
            double vx[3], vy[3];
            for (int k = 0; k < 3; ++k) {
                double a = angle + 2.0 * kPi * k / 3.0;
                vx[k] = cx + r * std::cos(a);
                vy[k] = cy + r * std::sin(a);
            }
            double d0 = (vx[1] - vx[0]) * (y - vy[0]) - (vy[1] - vy[0]) * (x - vx[0]);
            double d1 = (vx[2] - vx[1]) * (y - vy[1]) - (vy[2] - vy[1]) * (x - vx[1]);
            double d2 = (vx[0] - vx[2]) * (y - vy[2]) - (vy[0] - vy[2]) * (x - vx[2]);
            bool neg = d0 < 0 || d1 < 0 || d2 < 0;
            bool pos = d0 > 0 || d1 > 0 || d2 > 0;
            return !(neg && pos);
        }
        default:
            return false;
    }
}

double ShapeImage::foreground_fraction() const {
    int64_t fg = 0;
    for (int64_t i = 0; i < pixels.numel(); ++i)
        if (pixels.get(i) > -0.999) ++fg;
    return static_cast<double>(fg) / static_cast<double>(pixels.numel());
}

namespace {

ShapeObject sample_object(int kind, int size, Rng& rng, double scale) {
    ShapeObject o;
    o.kind = kind;
    o.value = byte_to_unit(unit_to_byte(rng.uniform(0.4, 1.0)));
    double s = static_cast<double>(size);
    switch (kind) {
        case 0:
            o.r = s * scale * rng.uniform(0.14, 0.26);
            o.cx = s * rng.uniform(0.30, 0.70);
            o.cy = s * rng.uniform(0.30, 0.70);
            break;
        case 1:
            o.ax = s * scale * rng.uniform(0.12, 0.28);
            o.ay = s * scale * rng.uniform(0.12, 0.28);
            o.cx = s * rng.uniform(0.35, 0.65);
            o.cy = s * rng.uniform(0.35, 0.65);
            o.angle = rng.uniform(0.0, kPi);
            break;
        default:
            o.kind = 2;
            o.r = s * scale * rng.uniform(0.20, 0.34);
            o.cx = s * rng.uniform(0.35, 0.65);
            o.cy = s * rng.uniform(0.35, 0.65);
            o.angle = rng.uniform(0.0, 2.0 * kPi);
            break;
    }
    return o;
}

Tensor rasterize(const std::vector<ShapeObject>& objects, int size) {
    Tensor px = Tensor::full({1, size, size}, -1.0, DType::F32);
    for (const ShapeObject& o : objects) {
        float v = byte_to_unit(unit_to_byte(o.value));
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                if (o.contains(x + 0.5, y + 0.5))
                    px.set(static_cast<int64_t>(y) * size + x, v);
    }
    return px;
}

ShapeImage generate_image(int id, int class_id, int size, Rng rng) {
    ShapeImage img;
    img.id = id;
    img.class_id = class_id;
    for (int attempt = 0; attempt < 64; ++attempt) {
        img.objects.clear();
        if (class_id < 3) {
            img.objects.push_back(sample_object(class_id, size, rng, 1.0));
        } else {
            int k = rng.uniform_int(2, 3);
            for (int i = 0; i < k; ++i)
                img.objects.push_back(sample_object(rng.uniform_int(0, 2), size, rng, 0.55));
        }
        img.pixels = rasterize(img.objects, size);
        double f = img.foreground_fraction();
        if (f >= 0.05 && f <= 0.6) return img;
    }
    throw DataError("shape generator failed to hit the foreground-fraction band (image " +
                    std::to_string(id) + ")");
}

}  // namespace

Dataset gen_dataset(int n, int size, uint64_t seed) {
    if (n < 1) throw ConfigError("gen_dataset: n must be >= 1");
    if (size < 16 || size % 16 != 0)
        throw ConfigError("gen_dataset: size must be a positive multiple of 16, got " +
                          std::to_string(size));
    Dataset ds;
    ds.size = size;
    ds.seed = seed;
    Rng root = Rng(seed).fork("data");
    ds.images.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        ds.images.push_back(generate_image(i, i % 4, size, root.fork(static_cast<uint64_t>(i))));
    return ds;
}

// ---- control maps ------------------------------------------------------------

namespace {

struct Grid {
    int h = 0, w = 0;
    std::vector<double> v;
    double at(int y, int x) const {  // replicate border
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return v[static_cast<size_t>(y) * w + x];
    }
};

Grid to_grid(const Tensor& px) {
    Grid g;
    g.h = px.dim(px.ndim() - 2);
    g.w = px.dim(px.ndim() - 1);
    g.v.resize(static_cast<size_t>(g.h) * g.w);
    for (size_t i = 0; i < g.v.size(); ++i) g.v[i] = px.get(static_cast<int64_t>(i));
    return g;
}

Tensor map_from(const std::vector<float>& v, int h, int w) {
    Tensor t = Tensor::zeros({1, h, w}, DType::F32);
    for (size_t i = 0; i < v.size(); ++i) t.set(static_cast<int64_t>(i), v[i]);
    return t;
}

Grid gauss3(const Grid& g) {
    static const double k[3] = {0.25, 0.5, 0.25};
    Grid tmp = g, out = g;
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
            tmp.v[static_cast<size_t>(y) * g.w + x] =
                k[0] * g.at(y, x - 1) + k[1] * g.at(y, x) + k[2] * g.at(y, x + 1);
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
            out.v[static_cast<size_t>(y) * g.w + x] =
                k[0] * tmp.at(y - 1, x) + k[1] * tmp.at(y, x) + k[2] * tmp.at(y + 1, x);
    return out;
}

void sobel(const Grid& g, std::vector<double>& gx, std::vector<double>& gy) {
    gx.assign(static_cast<size_t>(g.h) * g.w, 0.0);
    gy.assign(static_cast<size_t>(g.h) * g.w, 0.0);
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) {
            double a = g.at(y - 1, x - 1), b = g.at(y - 1, x), c = g.at(y - 1, x + 1);
            double d = g.at(y, x - 1), f = g.at(y, x + 1);
            double p = g.at(y + 1, x - 1), q = g.at(y + 1, x), r = g.at(y + 1, x + 1);
            gx[static_cast<size_t>(y) * g.w + x] = (c + 2 * f + r) - (a + 2 * d + p);
            gy[static_cast<size_t>(y) * g.w + x] = (p + 2 * q + r) - (a + 2 * b + c);
        }
}

constexpr double kSobelThreshold = 1.0;
constexpr double kCannyHigh = 1.6;
constexpr double kCannyLow = 0.6;

std::vector<bool> fg_mask(const Grid& g) {
    std::vector<bool> m(g.v.size());
    for (size_t i = 0; i < g.v.size(); ++i) m[i] = g.v[i] > -0.5;
    return m;
}

Tensor edge_sobel_map(const Grid& g) {
    std::vector<double> gx, gy;
    sobel(g, gx, gy);
    std::vector<float> out(g.v.size(), -1.0f);
    for (size_t i = 0; i < out.size(); ++i)
        if (std::hypot(gx[i], gy[i]) > kSobelThreshold) out[i] = 1.0f;
    return map_from(out, g.h, g.w);
}

Tensor edge_canny_map(const Grid& g) {
    Grid sm = gauss3(g);
    std::vector<double> gx, gy;
    sobel(sm, gx, gy);
    const int h = g.h, w = g.w;
    std::vector<double> mag(gx.size());
    for (size_t i = 0; i < mag.size(); ++i) mag[i] = std::hypot(gx[i], gy[i]);

    // Non-maximum suppression along one of four quantized directions.
    std::vector<double> nms(mag.size(), 0.0);
    auto m_at = [&](int y, int x) -> double {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
        return mag[static_cast<size_t>(y) * w + x];
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            size_t i = static_cast<size_t>(y) * w + x;
            if (mag[i] <= 0) continue;
            double ang = std::atan2(gy[i], gx[i]);
            if (ang < 0) ang += kPi;
            int dy1, dx1;
            if (ang < kPi / 8 || ang >= 7 * kPi / 8) {
                dy1 = 0; dx1 = 1;
            } else if (ang < 3 * kPi / 8) {
                dy1 = 1; dx1 = 1;
            } else if (ang < 5 * kPi / 8) {
                dy1 = 1; dx1 = 0;
            } else {
                dy1 = 1; dx1 = -1;
            }
            if (mag[i] >= m_at(y + dy1, x + dx1) && mag[i] >= m_at(y - dy1, x - dx1)) nms[i] = mag[i];
        }

    // Double threshold with hysteresis over 8-connectivity.
    std::vector<uint8_t> state(mag.size(), 0);  // 0 none, 1 weak, 2 strong
    std::deque<int> queue;
    for (size_t i = 0; i < nms.size(); ++i) {
        if (nms[i] > kCannyHigh) {
            state[i] = 2;
            queue.push_back(static_cast<int>(i));
        } else if (nms[i] > kCannyLow) {
            state[i] = 1;
        }
    }
    while (!queue.empty()) {
        int i = queue.front();
        queue.pop_front();
        int y = i / w, x = i % w;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                int ny = y + dy, nx = x + dx;
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                size_t j = static_cast<size_t>(ny) * w + nx;
                if (state[j] == 1) {
                    state[j] = 2;
                    queue.push_back(static_cast<int>(j));
                }
            }
    }
    std::vector<float> out(mag.size(), -1.0f);
    for (size_t i = 0; i < out.size(); ++i)
        if (state[i] == 2) out[i] = 1.0f;
    return map_from(out, h, w);
}

Tensor depth_distance_map(const Grid& g) {
    const int h = g.h, w = g.w;
    std::vector<bool> fg = fg_mask(g);
    // Exact Euclidean distance to the nearest background pixel; the frame
    // outside the image counts as background.
    std::vector<int> bgy, bgx;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (!fg[static_cast<size_t>(y) * w + x]) {
                bgy.push_back(y);
                bgx.push_back(x);
            }
    std::vector<double> dist(fg.size(), 0.0);
    double dmax = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            size_t i = static_cast<size_t>(y) * w + x;
            if (!fg[i]) continue;
            double border = static_cast<double>(
                1 + std::min(std::min(y, h - 1 - y), std::min(x, w - 1 - x)));
            double best = border * border;
            for (size_t k = 0; k < bgy.size(); ++k) {
                double dy = y - bgy[k], dx = x - bgx[k];
                double d2 = dy * dy + dx * dx;
                if (d2 < best) best = d2;
            }
            dist[i] = std::sqrt(best);
            dmax = std::max(dmax, dist[i]);
        }
    std::vector<float> out(fg.size(), -1.0f);
    double denom = std::max(dmax, 1.0);
    for (size_t i = 0; i < out.size(); ++i)
        if (fg[i]) out[i] = static_cast<float>(2.0 * dist[i] / denom - 1.0);
    return map_from(out, h, w);
}

Tensor seg_quantize_map(const Grid& g) {
    // Label quantization: 4 intensity bins over [-1,1]; constant-intensity
    // objects get constant labels, background stays at the lowest bin.
    constexpr int kLevels = 4;
    std::vector<float> out(g.v.size());
    for (size_t i = 0; i < out.size(); ++i) {
        int b = static_cast<int>(std::floor((g.v[i] + 1.0) / 2.0 * kLevels));
        b = std::clamp(b, 0, kLevels - 1);
        out[i] = static_cast<float>(-1.0 + 2.0 * b / (kLevels - 1));
    }
    return map_from(out, g.h, g.w);
}

Tensor normal_orientation_map(const Grid& g) {
    Grid sm = gauss3(g);
    std::vector<double> gx, gy;
    sobel(sm, gx, gy);
    std::vector<float> out(g.v.size(), -1.0f);
    for (size_t i = 0; i < out.size(); ++i) {
        if (std::hypot(gx[i], gy[i]) <= kSobelThreshold) continue;
        double t = std::atan2(gy[i], gx[i]) / kPi;  // (-1, 1]
        out[i] = static_cast<float>(std::max(t, -0.999));
    }
    return map_from(out, g.h, g.w);
}

// Zhang-Suen thinning.
std::vector<bool> thin_mask(std::vector<bool> m, int h, int w) {
    auto at = [&](int y, int x) -> int {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0;
        return m[static_cast<size_t>(y) * w + x] ? 1 : 0;
    };
    bool changed = true;
    while (changed) {
        changed = false;
        for (int pass = 0; pass < 2; ++pass) {
            std::vector<size_t> kill;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    size_t i = static_cast<size_t>(y) * w + x;
                    if (!m[i]) continue;
                    int p2 = at(y - 1, x), p3 = at(y - 1, x + 1), p4 = at(y, x + 1);
                    int p5 = at(y + 1, x + 1), p6 = at(y + 1, x), p7 = at(y + 1, x - 1);
                    int p8 = at(y, x - 1), p9 = at(y - 1, x - 1);
                    int bsum = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9;
                    if (bsum < 2 || bsum > 6) continue;
                    int seq[9] = {p2, p3, p4, p5, p6, p7, p8, p9, p2};
                    int trans = 0;
                    for (int k = 0; k < 8; ++k)
                        if (seq[k] == 0 && seq[k + 1] == 1) ++trans;
                    if (trans != 1) continue;
                    if (pass == 0) {
                        if (p2 * p4 * p6 != 0 || p4 * p6 * p8 != 0) continue;
                    } else {
                        if (p2 * p4 * p8 != 0 || p2 * p6 * p8 != 0) continue;
                    }
                    kill.push_back(i);
                }
            for (size_t i : kill) m[i] = false;
            if (!kill.empty()) changed = true;
        }
    }
    return m;
}

Tensor skeleton_map(const Grid& g) {
    std::vector<bool> fg = fg_mask(g);
    bool any = false;
    for (bool b : fg) any = any || b;
    if (!any) throw DataError("skeleton: all-background image");
    std::vector<bool> sk = thin_mask(fg, g.h, g.w);
    std::vector<float> out(fg.size(), -1.0f);
    for (size_t i = 0; i < out.size(); ++i)
        if (sk[i]) out[i] = 1.0f;
    return map_from(out, g.h, g.w);
}

}  // namespace

Tensor control_map(const ShapeImage& image, TaskKind kind) {
    Grid g = to_grid(image.pixels);
    switch (kind) {
        case TaskKind::EdgeSobel: return edge_sobel_map(g);
        case TaskKind::SegQuantize: return seg_quantize_map(g);
        case TaskKind::DepthDistance: return depth_distance_map(g);
        case TaskKind::EdgeCanny: return edge_canny_map(g);
        case TaskKind::NormalOrientation: return normal_orientation_map(g);
        case TaskKind::Skeleton: return skeleton_map(g);
        case TaskKind::SkeletonInverse: {
            // The shape itself is the control; callers pair it with the
            // skeleton as the generation target.
            skeleton_map(g);  // still reject all-background inputs
            return image.pixels.clone();
        }
    }
    throw ConfigError("control_map: bad task kind");
}

TaskPair task_pair(const ShapeImage& image, TaskKind kind) {
    TaskPair p;
    if (kind == TaskKind::SkeletonInverse) {
        p.target = control_map(image, TaskKind::Skeleton);
        p.control = image.pixels.clone();
    } else {
        p.target = image.pixels.clone();
        p.control = control_map(image, kind);
    }
    return p;
}

Batch assemble_batch(const Dataset& ds, const std::vector<int>& indices, const TaskSpec& task,
                     bool with_class_ids) {
    if (indices.empty()) throw DataError("assemble_batch: empty index list");
    const int n = static_cast<int>(indices.size());
    const int s = ds.size;
    Batch b;
    b.task = task.name;
    b.ids = indices;
    b.x0 = Tensor::zeros({n, 1, s, s}, DType::F32);
    Tensor ctrl = Tensor::zeros({n, 1, s, s}, DType::F32);
    std::vector<int> cls(static_cast<size_t>(n));
    const int64_t per = static_cast<int64_t>(s) * s;
    for (int i = 0; i < n; ++i) {
        const ShapeImage& img = ds.images.at(static_cast<size_t>(indices[static_cast<size_t>(i)]));
        TaskPair pair = task_pair(img, task.kind);
        for (int64_t k = 0; k < per; ++k) {
            b.x0.set(i * per + k, pair.target.get(k));
            ctrl.set(i * per + k, pair.control.get(k));
        }
        cls[static_cast<size_t>(i)] = img.class_id;
    }
    b.control = ctrl;
    if (with_class_ids) b.class_ids = cls;
    return b;
}

// ---- batch source --------------------------------------------------------------

BatchSource::BatchSource(const Dataset& ds, std::vector<TaskSpec> tasks, int total_batch,
                         uint64_t seed, bool with_class_ids) {
    if (tasks.empty()) throw ConfigError("batch source: no tasks");
    std::sort(tasks.begin(), tasks.end(),
              [](const TaskSpec& a, const TaskSpec& b) { return a.name < b.name; });
    if (total_batch % static_cast<int>(tasks.size()) != 0)
        throw ConfigError("batch source: total batch " + std::to_string(total_batch) +
                          " not divisible by " + std::to_string(tasks.size()) + " tasks");
    if (total_batch > ds.train_count())
        throw DataError("batch source: total batch " + std::to_string(total_batch) +
                        " exceeds train split of " + std::to_string(ds.train_count()));
    ds_ = &ds;
    tasks_ = std::move(tasks);
    total_batch_ = total_batch;
    rng_ = Rng(seed).fork("batches");
    with_class_ids_ = with_class_ids;
    pool_.resize(static_cast<size_t>(ds.train_count()));
    for (int i = 0; i < ds.train_count(); ++i) pool_[static_cast<size_t>(i)] = i;
    reshuffle();
}

BatchSource BatchSource::plain(const Dataset& ds, int batch, uint64_t seed, bool with_class_ids) {
    BatchSource src;
    if (batch < 1) throw ConfigError("batch source: batch must be >= 1");
    if (batch > ds.train_count()) throw DataError("batch source: batch exceeds train split");
    src.ds_ = &ds;
    src.plain_ = true;
    src.total_batch_ = batch;
    src.rng_ = Rng(seed).fork("batches");
    src.with_class_ids_ = with_class_ids;
    src.pool_.resize(static_cast<size_t>(ds.train_count()));
    for (int i = 0; i < ds.train_count(); ++i) src.pool_[static_cast<size_t>(i)] = i;
    src.reshuffle();
    return src;
}

BatchSource BatchSource::few_shot(const Dataset& ds, const TaskSpec& task, int shots, int batch,
                                  uint64_t seed, bool with_class_ids) {
    if (shots < 1) throw ConfigError("batch source: shots must be >= 1");
    if (shots > ds.train_count()) throw DataError("batch source: shots exceed train split");
    BatchSource src;
    src.ds_ = &ds;
    src.tasks_ = {task};
    src.total_batch_ = std::min(batch, shots);
    src.rng_ = Rng(seed).fork("batches");
    src.with_class_ids_ = with_class_ids;
    src.pool_.resize(static_cast<size_t>(shots));
    for (int i = 0; i < shots; ++i) src.pool_[static_cast<size_t>(i)] = i;
    src.reshuffle();
    return src;
}

void BatchSource::reshuffle() {
    order_ = pool_;
    for (size_t i = order_.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng_.next_below(i));
        std::swap(order_[i - 1], order_[j]);
    }
    cursor_ = 0;
}

std::vector<int> BatchSource::draw(int n) {
    if (cursor_ + static_cast<size_t>(n) > order_.size()) reshuffle();
    std::vector<int> out(order_.begin() + static_cast<long>(cursor_),
                         order_.begin() + static_cast<long>(cursor_) + n);
    cursor_ += static_cast<size_t>(n);
    consumed_ += n;
    return out;
}

std::vector<Batch> BatchSource::next_round() {
    std::vector<int> ids = draw(total_batch_);
    std::vector<Batch> round;
    if (plain_) {
        Batch b;
        b.task = "base";
        b.ids = ids;
        const int s = ds_->size;
        const int64_t per = static_cast<int64_t>(s) * s;
        b.x0 = Tensor::zeros({total_batch_, 1, s, s}, DType::F32);
        std::vector<int> cls(ids.size());
        for (size_t i = 0; i < ids.size(); ++i) {
            const ShapeImage& img = ds_->images.at(static_cast<size_t>(ids[i]));
            for (int64_t k = 0; k < per; ++k)
                b.x0.set(static_cast<int64_t>(i) * per + k, img.pixels.get(k));
            cls[i] = img.class_id;
        }
        if (with_class_ids_) b.class_ids = cls;
        round.push_back(std::move(b));
        return round;
    }
    const int per_task = total_batch_ / static_cast<int>(tasks_.size());
    for (size_t t = 0; t < tasks_.size(); ++t) {
        std::vector<int> sub(ids.begin() + static_cast<long>(t) * per_task,
                             ids.begin() + static_cast<long>(t + 1) * per_task);
        round.push_back(assemble_batch(*ds_, sub, tasks_[t], with_class_ids_));
    }
    return round;
}

// ---- persistence ----------------------------------------------------------------

void save_dataset(const Dataset& ds, const std::string& dir, bool force) {
    fs::path root(dir);
    if (fs::exists(root) && !fs::is_empty(root)) {
        if (!force)
            throw DataError("output directory '" + dir + "' is not empty (use --force)");
        fs::remove_all(root);
    }
    fs::create_directories(root);
    std::ofstream manifest(root / "manifest.csv", std::ios::binary);
    if (!manifest) throw DataError("cannot write manifest in '" + dir + "'");
    manifest << "id,class,file,seed\n";
    char name[32];
    for (const ShapeImage& img : ds.images) {
        std::snprintf(name, sizeof(name), "img_%06d.pgm", img.id);
        write_pgm((root / name).string(), img.pixels);
        manifest << img.id << "," << img.class_id << "," << name << "," << ds.seed << "\n";
    }
}

Dataset load_dataset(const std::string& dir) {
    fs::path root(dir);
    std::ifstream manifest(root / "manifest.csv");
    if (!manifest) throw DataError("no manifest.csv in '" + dir + "'");
    std::string line;
    std::getline(manifest, line);
    if (line != "id,class,file,seed")
        throw DataError("manifest in '" + dir + "' has unexpected header '" + line + "'");
    Dataset ds;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string id_s, class_s, file_s, seed_s;
        if (!std::getline(ss, id_s, ',') || !std::getline(ss, class_s, ',') ||
            !std::getline(ss, file_s, ',') || !std::getline(ss, seed_s))
            throw DataError("bad manifest row '" + line + "'");
        ShapeImage img;
        img.id = std::stoi(id_s);
        img.class_id = std::stoi(class_s);
        img.pixels = read_pgm((root / file_s).string());
        ds.seed = std::stoull(seed_s);
        ds.images.push_back(std::move(img));
    }
    if (ds.images.empty()) throw DataError("dataset in '" + dir + "' is empty");
    ds.size = ds.images.front().pixels.dim(2);
    for (const ShapeImage& img : ds.images)
        if (img.pixels.dim(1) != ds.size || img.pixels.dim(2) != ds.size)
            throw DataError("dataset in '" + dir + "' has inconsistent image sizes");
    return ds;
}

}  // namespace mcn
