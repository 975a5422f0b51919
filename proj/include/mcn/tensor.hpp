#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mcn/errors.hpp"
#include "mcn/rng.hpp"

namespace mcn {

enum class DType : uint8_t { F32 = 0, F64 = 1 };

inline const char* dtype_name(DType dt) { return dt == DType::F32 ? "float32" : "float64"; }

// Dense row-major n-d array. The handle has shared-buffer semantics: copies
// alias the same storage, clone() deep-copies. Buffers are treated as
// immutable once a tensor has entered an op; gradients live on the tape, not
// on the tensor, so independent tapes over the same leaves cannot collide.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, DType dt = DType::F32);
    static Tensor full(std::vector<int> shape, double value, DType dt = DType::F32);
    static Tensor scalar(double value, DType dt = DType::F32);  // shape {} (0-d)
    static Tensor from_f32(std::vector<int> shape, std::vector<float> data);
    static Tensor from_f64(std::vector<int> shape, std::vector<double> data);
    static Tensor randn(std::vector<int> shape, Rng& rng, DType dt = DType::F32);
    static Tensor uniform(std::vector<int> shape, Rng& rng, double lo, double hi,
                          DType dt = DType::F32);

    bool defined() const { return d_ != nullptr; }
    const std::vector<int>& shape() const { return d_->shape; }
    int ndim() const { return static_cast<int>(d_->shape.size()); }
    int dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return d_->numel; }
    DType dtype() const { return d_->dtype; }
    uint64_t id() const { return d_->id; }

    bool requires_grad() const { return d_ && d_->requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        d_->requires_grad = rg;
        return *this;
    }

    const float* f32() const { return d_->f32.data(); }
    float* f32_mut() { return d_->f32.data(); }
    const double* f64() const { return d_->f64.data(); }
    double* f64_mut() { return d_->f64.data(); }

    // dtype-generic element access; slow path for tests, IO and small math.
    double get(int64_t i) const {
        return d_->dtype == DType::F32 ? static_cast<double>(d_->f32[static_cast<size_t>(i)])
                                       : d_->f64[static_cast<size_t>(i)];
    }
    void set(int64_t i, double v) {
        if (d_->dtype == DType::F32)
            d_->f32[static_cast<size_t>(i)] = static_cast<float>(v);
        else
            d_->f64[static_cast<size_t>(i)] = v;
    }
    double item() const;  // numel()==1 required

    Tensor clone() const;            // deep copy, fresh id, same requires_grad
    Tensor detached() const;         // shares storage, requires_grad off, fresh id
    Tensor astype(DType dt) const;   // deep conversion
    Tensor reshaped(std::vector<int> shape) const;  // shares storage, same numel

    bool same_storage(const Tensor& o) const { return d_ == o.d_; }
    bool allfinite() const;
    const void* raw_bytes() const;
    size_t byte_size() const;

  private:
    struct Data {
        std::vector<int> shape;
        int64_t numel = 0;
        DType dtype = DType::F32;
        std::vector<float> f32;
        std::vector<double> f64;
        bool requires_grad = false;
        uint64_t id = 0;
    };
    std::shared_ptr<Data> d_;

    static std::shared_ptr<Data> alloc(std::vector<int> shape, DType dt);
    friend class GradTape;
};

// Records the forward pass; replaying entries in reverse visits ops in
// reverse topological order because inputs always predate their consumers.
class GradTape {
  public:
    using BackwardRule = std::function<void(GradTape&)>;

    void record(BackwardRule rule) { entries_.push_back(std::move(rule)); }

    // loss must be 0-d; a tape may be consumed once.
    void backward(const Tensor& loss);

    bool consumed() const { return consumed_; }
    size_t op_count() const { return entries_.size(); }

    // Zero tensor of matching shape when t never received a gradient
    // (unreachable leaves included).
    Tensor grad(const Tensor& t) const;
    bool has_grad(const Tensor& t) const { return grads_.count(t.id()) != 0; }

    // Accumulation target used by backward rules; zero-initialized on first use.
    Tensor& grad_slot(const Tensor& t);
    const Tensor* find_grad(const Tensor& t) const;

  private:
    std::vector<BackwardRule> entries_;
    std::unordered_map<uint64_t, Tensor> grads_;
    bool consumed_ = false;
};

// RAII scope installing a thread-local active tape. Ops record themselves
// only while a tape is active and some input requires grad; sampling and
// evaluation run tape-free.
class TapeScope {
  public:
    explicit TapeScope(GradTape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    GradTape* prev_;
};

GradTape* active_tape();

// ---- differentiable ops ----------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor silu(const Tensor& a);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x[N,Di] w[Do,Di] b[Do]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);
Tensor concat_channel(const Tensor& a, const Tensor& b);  // along dim 1 of NCHW
Tensor upsample2x_nearest(const Tensor& x);
Tensor avgpool2x(const Tensor& x);
// Per-channel normalization over the spatial extent of each (n, c) slice,
// followed by a learned affine: gain[C], shift[C].
Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                    double eps = 1e-5);
// x[N,C,H,W] + v[N,C] broadcast over H, W.
Tensor add_channel_vec(const Tensor& x, const Tensor& v);
Tensor embedding(const Tensor& table, const std::vector<int>& ids);  // table[K,D] -> [n,D]
Tensor mean_all(const Tensor& x);                                    // -> 0-d
Tensor mse_loss(const Tensor& pred, const Tensor& target);           // -> 0-d

// Non-recorded helpers.
void add_into(Tensor& dst, const Tensor& src);  // dst += src (grad accumulation)
double l2_norm(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace mcn
