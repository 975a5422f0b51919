#include "mcn/tensor.hpp"

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

namespace mcn {

namespace {

std::atomic<uint64_t> g_next_id{1};

thread_local GradTape* g_active_tape = nullptr;

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + std::to_string(d));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    if (a.dtype() != b.dtype())
        throw ShapeError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                         dtype_name(b.dtype()));
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!g_active_tape) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
const T* data_of(const Tensor& t);
template <>
const float* data_of<float>(const Tensor& t) {
    return t.f32();
}
template <>
const double* data_of<double>(const Tensor& t) {
    return t.f64();
}

template <typename T>
T* mut_of(Tensor& t);
template <>
float* mut_of<float>(Tensor& t) {
    return t.f32_mut();
}
template <>
double* mut_of<double>(Tensor& t) {
    return t.f64_mut();
}

template <typename F>
void dispatch(DType dt, F&& f) {
    if (dt == DType::F32)
        f(float{});
    else
        f(double{});
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

std::shared_ptr<Tensor::Data> Tensor::alloc(std::vector<int> shape, DType dt) {
    auto d = std::make_shared<Data>();
    d->numel = shape_numel(shape);
    d->shape = std::move(shape);
    d->dtype = dt;
    if (dt == DType::F32)
        d->f32.assign(static_cast<size_t>(d->numel), 0.0f);
    else
        d->f64.assign(static_cast<size_t>(d->numel), 0.0);
    d->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return d;
}

Tensor Tensor::zeros(std::vector<int> shape, DType dt) {
    Tensor t;
    t.d_ = alloc(std::move(shape), dt);
    return t;
}

Tensor Tensor::full(std::vector<int> shape, double value, DType dt) {
    Tensor t = zeros(std::move(shape), dt);
    for (int64_t i = 0; i < t.numel(); ++i) t.set(i, value);
    return t;
}

Tensor Tensor::scalar(double value, DType dt) { return full({}, value, dt); }

Tensor Tensor::from_f32(std::vector<int> shape, std::vector<float> data) {
    Tensor t;
    t.d_ = alloc(std::move(shape), DType::F32);
    if (static_cast<int64_t>(data.size()) != t.numel())
        throw ShapeError("from_f32: data length " + std::to_string(data.size()) +
                         " != numel " + std::to_string(t.numel()));
    t.d_->f32 = std::move(data);
    return t;
}

Tensor Tensor::from_f64(std::vector<int> shape, std::vector<double> data) {
    Tensor t;
    t.d_ = alloc(std::move(shape), DType::F64);
    if (static_cast<int64_t>(data.size()) != t.numel())
        throw ShapeError("from_f64: data length " + std::to_string(data.size()) +
                         " != numel " + std::to_string(t.numel()));
    t.d_->f64 = std::move(data);
    return t;
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, DType dt) {
    Tensor t = zeros(std::move(shape), dt);
    for (int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.normal());
    return t;
}

Tensor Tensor::uniform(std::vector<int> shape, Rng& rng, double lo, double hi, DType dt) {
    Tensor t = zeros(std::move(shape), dt);
    for (int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(lo, hi));
    return t;
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item(): tensor has " + std::to_string(numel()) + " elements");
    return get(0);
}

Tensor Tensor::clone() const {
    Tensor t;
    t.d_ = std::make_shared<Data>(*d_);
    t.d_->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return t;
}

Tensor Tensor::detached() const {
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = d_->shape;
    t.d_->numel = d_->numel;
    t.d_->dtype = d_->dtype;
    t.d_->f32 = d_->f32;  // shares values by copy-on-construct; cheap enough at toy scale
    t.d_->f64 = d_->f64;
    t.d_->requires_grad = false;
    t.d_->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return t;
}

Tensor Tensor::astype(DType dt) const {
    if (dt == dtype()) return clone();
    Tensor t = zeros(shape(), dt);
    for (int64_t i = 0; i < numel(); ++i) t.set(i, get(i));
    return t;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (shape_numel(shape) != numel())
        throw ShapeError("reshaped: numel mismatch " + shape_str(shape) + " vs " +
                         std::to_string(numel()) + " elements");
    Tensor t = *this;
    t.d_ = std::make_shared<Data>(*d_);
    t.d_->shape = std::move(shape);
    t.d_->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return t;
}

bool Tensor::allfinite() const {
    for (int64_t i = 0; i < numel(); ++i)
        if (!std::isfinite(get(i))) return false;
    return true;
}

const void* Tensor::raw_bytes() const {
    return dtype() == DType::F32 ? static_cast<const void*>(d_->f32.data())
                                 : static_cast<const void*>(d_->f64.data());
}

size_t Tensor::byte_size() const {
    return static_cast<size_t>(numel()) * (dtype() == DType::F32 ? 4 : 8);
}

// ---- GradTape --------------------------------------------------------------

void GradTape::backward(const Tensor& loss) {
    if (consumed_) throw NumericError("backward called twice on the same tape");
    if (loss.ndim() != 0)
        throw ShapeError("backward: loss must be 0-d, got shape with " +
                         std::to_string(loss.ndim()) + " dims");
    consumed_ = true;
    grads_[loss.id()] = Tensor::full({}, 1.0, loss.dtype());
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)(*this);
}

Tensor GradTape::grad(const Tensor& t) const {
    auto it = grads_.find(t.id());
    if (it != grads_.end()) return it->second;
    return Tensor::zeros(t.shape(), t.dtype());
}

Tensor& GradTape::grad_slot(const Tensor& t) {
    auto it = grads_.find(t.id());
    if (it == grads_.end())
        it = grads_.emplace(t.id(), Tensor::zeros(t.shape(), t.dtype())).first;
    return it->second;
}

const Tensor* GradTape::find_grad(const Tensor& t) const {
    auto it = grads_.find(t.id());
    return it == grads_.end() ? nullptr : &it->second;
}

TapeScope::TapeScope(GradTape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

GradTape* active_tape() { return g_active_tape; }

// ---- elementwise ops -------------------------------------------------------

namespace {

template <typename T>
void axpy(T* dst, const T* src, int64_t n, T a = T(1)) {
    for (int64_t i = 0; i < n; ++i) dst[i] += a * src[i];
}

void accumulate(GradTape& tp, const Tensor& target, const Tensor& contrib, double coeff = 1.0) {
    Tensor& slot = tp.grad_slot(target);
    dispatch(target.dtype(), [&](auto tag) {
        using T = decltype(tag);
        axpy(mut_of<T>(slot), data_of<T>(contrib), target.numel(), static_cast<T>(coeff));
    });
}

}  // namespace

void add_into(Tensor& dst, const Tensor& src) {
    require_same_shape(dst, src, "add_into");
    dispatch(dst.dtype(), [&](auto tag) {
        using T = decltype(tag);
        axpy(mut_of<T>(dst), data_of<T>(src), dst.numel());
    });
}

double l2_norm(const Tensor& t) {
    double s = 0;
    for (int64_t i = 0; i < t.numel(); ++i) {
        double v = t.get(i);
        s += v * v;
    }
    return std::sqrt(s);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.get(i) - b.get(i)));
    return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
    return std::memcmp(a.raw_bytes(), b.raw_bytes(), a.byte_size()) == 0;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = data_of<T>(a);
        const T* pb = data_of<T>(b);
        T* po = mut_of<T>(out);
        for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
    });
    if (should_record({&a, &b})) {
        out.set_requires_grad(true);
        active_tape()->record([a, b, out](GradTape& tp) {
            const Tensor* og = tp.find_grad(out);
            if (!og) return;
            if (a.requires_grad()) accumulate(tp, a, *og);
            if (b.requires_grad()) accumulate(tp, b, *og);
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = data_of<T>(a);
        const T* pb = data_of<T>(b);
        T* po = mut_of<T>(out);
        for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] - pb[i];
    });
    if (should_record({&a, &b})) {
        out.set_requires_grad(true);
        active_tape()->record([a, b, out](GradTape& tp) {
            const Tensor* og = tp.find_grad(out);
            if (!og) return;
            if (a.requires_grad()) accumulate(tp, a, *og);
            if (b.requires_grad()) accumulate(tp, b, *og, -1.0);
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = data_of<T>(a);
        const T* pb = data_of<T>(b);
        T* po = mut_of<T>(out);
        for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
    });
    if (should_record({&a, &b})) {
        out.set_requires_grad(true);
        active_tape()->record([a, b, out](GradTape& tp) {
            const Tensor* og = tp.find_grad(out);
            if (!og) return;
            dispatch(a.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* g = data_of<T>(*og);
                if (a.requires_grad()) {
                    Tensor& ga = tp.grad_slot(a);
                    T* p = mut_of<T>(ga);
                    const T* pb = data_of<T>(b);
                    for (int64_t i = 0; i < a.numel(); ++i) p[i] += g[i] * pb[i];
                }
                if (b.requires_grad()) {
                    Tensor& gb = tp.grad_slot(b);
                    T* p = mut_of<T>(gb);
                    const T* pa = data_of<T>(a);
                    for (int64_t i = 0; i < b.numel(); ++i) p[i] += g[i] * pa[i];
                }
            });
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = data_of<T>(a);
        T* po = mut_of<T>(out);
        const T cc = static_cast<T>(c);
        for (int64_t i = 0; i < a.numel(); ++i) po[i] = cc * pa[i];
    });
    if (should_record({&a})) {
        out.set_requires_grad(true);
        active_tape()->record([a, out, c](GradTape& tp) {
            const Tensor* og = tp.find_grad(out);
            if (!og) return;
            accumulate(tp, a, *og, c);
        });
    }
    return out;
}

Tensor silu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = data_of<T>(a);
        T* po = mut_of<T>(out);
        for (int64_t i = 0; i < a.numel(); ++i) {
            T s = T(1) / (T(1) + std::exp(-pa[i]));
            po[i] = pa[i] * s;
        }
    });
    if (should_record({&a})) {
        out.set_requires_grad(true);
        active_tape()->record([a, out](GradTape& tp) {
            const Tensor* og = tp.find_grad(out);
            if (!og) return;
            dispatch(a.dtype(), [&](auto tag) {
                using T = decltype(tag);
                Tensor& ga = tp.grad_slot(a);
                T* p = mut_of<T>(ga);
                const T* g = data_of<T>(*og);
                const T* pa = data_of<T>(a);
                for (int64_t i = 0; i < a.numel(); ++i) {
                    T s = T(1) / (T(1) + std::exp(-pa[i]));
                    p[i] += g[i] * (s * (T(1) + pa[i] * (T(1) - s)));
                }
            });
        });
    }
    return out;
}

// ---- linear ----------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1)
        throw ShapeError("linear: expected x[N,Di], w[Do,Di], b[Do]");
    if (x.dim(1) != w.dim(1))
        throw ShapeError("linear: input features " + std::to_string(x.dim(1)) +
                         " != weight in-features " + std::to_string(w.dim(1)));
    if (w.dim(0) != b.dim(0))
        throw ShapeError("linear: weight out-features " + std::to_string(w.dim(0)) +
                         " != bias length " + std::to_string(b.dim(0)));
    const int n = x.dim(0), di = x.dim(1), dout = w.dim(0);
    Tensor out = Tensor::zeros({n, dout}, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        ConstMatMap<T> X(data_of<T>(x), n, di);
        ConstMatMap<T> W(data_of<T>(w), dout, di);
        MatMap<T> Y(mut_of<T>(out), n, dout);
        Y.noalias() = X * W.transpose();
        const T* pb = data_of<T>(b);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < dout; ++j) mut_of<T>(out)[static_cast<int64_t>(i) * dout + j] += pb[j];
    });
    if (should_record({&x, &w, &b})) {
        out.set_requires_grad(true);
        active_tape()->record([x, w, b, out, n, di, dout](GradTape& tp) {
            const Tensor* og = tp.find_grad(out);
            if (!og) return;
            dispatch(x.dtype(), [&](auto tag) {
                using T = decltype(tag);
                ConstMatMap<T> G(data_of<T>(*og), n, dout);
                if (x.requires_grad()) {
                    ConstMatMap<T> W(data_of<T>(w), dout, di);
                    MatMap<T> GX(mut_of<T>(tp.grad_slot(x)), n, di);
                    GX.noalias() += G * W;
                }
                if (w.requires_grad()) {
                    ConstMatMap<T> X(data_of<T>(x), n, di);
                    MatMap<T> GW(mut_of<T>(tp.grad_slot(w)), dout, di);
                    GW.noalias() += G.transpose() * X;
                }
                if (b.requires_grad()) {
                    T* gb = mut_of<T>(tp.grad_slot(b));
                    const T* g = data_of<T>(*og);
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < dout; ++j) gb[j] += g[static_cast<int64_t>(i) * dout + j];
                }
            });
        });
    }
    return out;
}

// ---- conv2d ----------------------------------------------------------------

namespace {

struct ConvDims {
    int n, cin, h, w, cout, kh, kw, ho, wo, stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
    if (x.ndim() != 4) throw ShapeError("conv2d: input must be 4-d NCHW, got " + std::to_string(x.ndim()) + "-d");
    if (w.ndim() != 4) throw ShapeError("conv2d: weight must be 4-d [Cout,Cin,kH,kW]");
    if (b.ndim() != 1) throw ShapeError("conv2d: bias must be 1-d");
    ConvDims d;
    d.n = x.dim(0);
    d.cin = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.cout = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.stride = stride;
    d.pad = padding;
    if (w.dim(1) != d.cin)
        throw ShapeError("conv2d: input channels (" + std::to_string(d.cin) +
                         ") != weight in-channels (" + std::to_string(w.dim(1)) + ")");
    if (b.dim(0) != d.cout)
        throw ShapeError("conv2d: bias length (" + std::to_string(b.dim(0)) +
                         ") != out-channels (" + std::to_string(d.cout) + ")");
    if (d.kh % 2 == 0 || d.kw % 2 == 0)
        throw ShapeError("conv2d: kernel dims must be odd, got " + std::to_string(d.kh) + "x" +
                         std::to_string(d.kw));
    if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    int hnum = d.h + 2 * padding - d.kh;
    int wnum = d.w + 2 * padding - d.kw;
    if (hnum < 0 || wnum < 0 || hnum % stride != 0 || wnum % stride != 0)
        throw ShapeError("conv2d: output height/width not integral for input " +
                         std::to_string(d.h) + "x" + std::to_string(d.w) + ", kernel " +
                         std::to_string(d.kh) + "x" + std::to_string(d.kw) + ", stride " +
                         std::to_string(stride) + ", pad " + std::to_string(padding));
    d.ho = hnum / stride + 1;
    d.wo = wnum / stride + 1;
    return d;
}

// cols[Cin*kh*kw, Ho*Wo] for one sample.
template <typename T>
void im2col(const T* x, const ConvDims& d, T* cols) {
    const int L = d.ho * d.wo;
    for (int c = 0; c < d.cin; ++c) {
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                T* row = cols + (static_cast<int64_t>(c) * d.kh * d.kw + ky * d.kw + kx) * L;
                for (int oy = 0; oy < d.ho; ++oy) {
                    int iy = oy * d.stride - d.pad + ky;
                    if (iy < 0 || iy >= d.h) {
                        for (int ox = 0; ox < d.wo; ++ox) row[oy * d.wo + ox] = T(0);
                        continue;
                    }
                    const T* xr = x + (static_cast<int64_t>(c) * d.h + iy) * d.w;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        int ix = ox * d.stride - d.pad + kx;
                        row[oy * d.wo + ox] = (ix >= 0 && ix < d.w) ? xr[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, const ConvDims& d, T* dx) {
    const int L = d.ho * d.wo;
    for (int c = 0; c < d.cin; ++c) {
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                const T* row = cols + (static_cast<int64_t>(c) * d.kh * d.kw + ky * d.kw + kx) * L;
                for (int oy = 0; oy < d.ho; ++oy) {
                    int iy = oy * d.stride - d.pad + ky;
                    if (iy < 0 || iy >= d.h) continue;
                    T* xr = dx + (static_cast<int64_t>(c) * d.h + iy) * d.w;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        int ix = ox * d.stride - d.pad + kx;
                        if (ix >= 0 && ix < d.w) xr[ix] += row[oy * d.wo + ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, const ConvDims& d,
                  Tensor& out) {
    const int K = d.cin * d.kh * d.kw;
    const int L = d.ho * d.wo;
    std::vector<T> cols(static_cast<size_t>(K) * L);
    const T* px = data_of<T>(x);
    const T* pb = data_of<T>(b);
    T* po = mut_of<T>(out);
    ConstMatMap<T> W(data_of<T>(w), d.cout, K);
    for (int n = 0; n < d.n; ++n) {
        im2col(px + static_cast<int64_t>(n) * d.cin * d.h * d.w, d, cols.data());
        ConstMatMap<T> C(cols.data(), K, L);
        MatMap<T> Y(po + static_cast<int64_t>(n) * d.cout * L, d.cout, L);
        Y.noalias() = W * C;
        for (int c = 0; c < d.cout; ++c) {
            T* row = po + (static_cast<int64_t>(n) * d.cout + c) * L;
            for (int i = 0; i < L; ++i) row[i] += pb[c];
        }
    }
}

template <typename T>
void conv_backward(const Tensor& x, const Tensor& w, const Tensor& b, const Tensor& og,
                   const ConvDims& d, GradTape& tp) {
    const int K = d.cin * d.kh * d.kw;
    const int L = d.ho * d.wo;
    std::vector<T> cols(static_cast<size_t>(K) * L);
    std::vector<T> dcols;
    const T* px = data_of<T>(x);
    const T* pg = data_of<T>(og);
    const bool need_x = x.requires_grad();
    const bool need_w = w.requires_grad();
    const bool need_b = b.requires_grad();
    T* gx = need_x ? mut_of<T>(tp.grad_slot(x)) : nullptr;
    T* gw = need_w ? mut_of<T>(tp.grad_slot(w)) : nullptr;
    T* gb = need_b ? mut_of<T>(tp.grad_slot(b)) : nullptr;
    if (need_x) dcols.resize(static_cast<size_t>(K) * L);
    ConstMatMap<T> W(data_of<T>(w), d.cout, K);
    for (int n = 0; n < d.n; ++n) {
        ConstMatMap<T> G(pg + static_cast<int64_t>(n) * d.cout * L, d.cout, L);
        if (need_w || need_x) {
            if (need_w) {
                im2col(px + static_cast<int64_t>(n) * d.cin * d.h * d.w, d, cols.data());
                ConstMatMap<T> C(cols.data(), K, L);
                MatMap<T> GW(gw, d.cout, K);
                GW.noalias() += G * C.transpose();
            }
            if (need_x) {
                MatMap<T> DC(dcols.data(), K, L);
                DC.noalias() = W.transpose() * G;
                col2im_add(dcols.data(), d, gx + static_cast<int64_t>(n) * d.cin * d.h * d.w);
            }
        }
        if (need_b) {
            for (int c = 0; c < d.cout; ++c) {
                const T* row = pg + (static_cast<int64_t>(n) * d.cout + c) * L;
                T s = T(0);
                for (int i = 0; i < L; ++i) s += row[i];
                gb[c] += s;
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
    ConvDims d = conv_dims(x, w, b, stride, padding);
    Tensor out = Tensor::zeros({d.n, d.cout, d.ho, d.wo}, x.dtype());
    if (x.dtype() != w.dtype() || x.dtype() != b.dtype())
        throw ShapeError("conv2d: mixed dtypes");
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        conv_forward<T>(x, w, b, d, out);
    });
    if (should_record({&x, &w, &b})) {
        out.set_requires_grad(true);
        active_tape()->record([x, w, b, out, d](GradTape& tp) {
            const Tensor* og = tp.find_grad(out);
            if (!og) return;
            dispatch(x.dtype(), [&](auto tag) {
                using T = decltype(tag);
                conv_backward<T>(x, w, b, *og, d, tp);
            });
        });
    }
    return out;
}

// ---- structural ops --------------------------------------------------------

Tensor concat_channel(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 4 || b.ndim() != 4) throw ShapeError("concat_channel: inputs must be 4-d NCHW");
    if (a.dtype() != b.dtype()) throw ShapeError("concat_channel: dtype mismatch");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ShapeError("concat_channel: non-channel dims differ: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    const int64_t hw = static_cast<int64_t>(h) * w;
    Tensor out = Tensor::zeros({n, ca + cb, h, w}, a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = data_of<T>(a);
        const T* pb = data_of<T>(b);
        T* po = mut_of<T>(out);
        for (int i = 0; i < n; ++i) {
            std::memcpy(po + (static_cast<int64_t>(i) * (ca + cb)) * hw,
                        pa + static_cast<int64_t>(i) * ca * hw, sizeof(T) * ca * hw);
            std::memcpy(po + (static_cast<int64_t>(i) * (ca + cb) + ca) * hw,
                        pb + static_cast<int64_t>(i) * cb * hw, sizeof(T) * cb * hw);
        }
    });
    if (should_record({&a, &b})) {
        out.set_requires_grad(true);
        active_tape()->record([a, b, out, n, ca, cb, hw](GradTape& tp) {
            const Tensor* og = tp.find_grad(out);
            if (!og) return;
            dispatch(a.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* g = data_of<T>(*og);
                if (a.requires_grad()) {
                    T* p = mut_of<T>(tp.grad_slot(a));
                    for (int i = 0; i < n; ++i)
                        axpy(p + static_cast<int64_t>(i) * ca * hw,
                             g + (static_cast<int64_t>(i) * (ca + cb)) * hw, ca * hw);
                }
                if (b.requires_grad()) {
                    T* p = mut_of<T>(tp.grad_slot(b));
                    for (int i = 0; i < n; ++i)
                        axpy(p + static_cast<int64_t>(i) * cb * hw,
                             g + (static_cast<int64_t>(i) * (ca + cb) + ca) * hw, cb * hw);
                }
            });
        });
    }
    return out;
}

Tensor upsample2x_nearest(const Tensor& x) {
    if (x.ndim() != 4) throw ShapeError("upsample2x_nearest: input must be 4-d NCHW");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor out = Tensor::zeros({n, c, 2 * h, 2 * w}, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = data_of<T>(x);
        T* po = mut_of<T>(out);
        for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
            const T* src = px + nc * h * w;
            T* dst = po + nc * 4 * h * w;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    T v = src[y * w + xx];
                    T* q = dst + (2 * y) * (2 * w) + 2 * xx;
                    q[0] = v;
                    q[1] = v;
                    q[2 * w] = v;
                    q[2 * w + 1] = v;
                }
        }
    });
    if (should_record({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([x, out, n, c, h, w](GradTape& tp) {
            const Tensor* og = tp.find_grad(out);
            if (!og) return;
            dispatch(x.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* g = data_of<T>(*og);
                T* p = mut_of<T>(tp.grad_slot(x));
                for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
                    const T* gq = g + nc * 4 * h * w;
                    T* dst = p + nc * h * w;
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx) {
                            const T* q = gq + (2 * y) * (2 * w) + 2 * xx;
                            dst[y * w + xx] += q[0] + q[1] + q[2 * w] + q[2 * w + 1];
                        }
                }
            });
        });
    }
    return out;
}

Tensor avgpool2x(const Tensor& x) {
    if (x.ndim() != 4) throw ShapeError("avgpool2x: input must be 4-d NCHW");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("avgpool2x: spatial dims must be even, got " + std::to_string(h) + "x" +
                         std::to_string(w));
    Tensor out = Tensor::zeros({n, c, h / 2, w / 2}, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = data_of<T>(x);
        T* po = mut_of<T>(out);
        for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
            const T* src = px + nc * h * w;
            T* dst = po + nc * (h / 2) * (w / 2);
            for (int y = 0; y < h / 2; ++y)
                for (int xx = 0; xx < w / 2; ++xx) {
                    const T* q = src + (2 * y) * w + 2 * xx;
                    dst[y * (w / 2) + xx] = (q[0] + q[1] + q[w] + q[w + 1]) * T(0.25);
                }
        }
    });
    if (should_record({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([x, out, n, c, h, w](GradTape& tp) {
            const Tensor* og = tp.find_grad(out);
            if (!og) return;
            dispatch(x.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* g = data_of<T>(*og);
                T* p = mut_of<T>(tp.grad_slot(x));
                for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
                    const T* gq = g + nc * (h / 2) * (w / 2);
                    T* dst = p + nc * h * w;
                    for (int y = 0; y < h / 2; ++y)
                        for (int xx = 0; xx < w / 2; ++xx) {
                            T v = gq[y * (w / 2) + xx] * T(0.25);
                            T* q = dst + (2 * y) * w + 2 * xx;
                            q[0] += v;
                            q[1] += v;
                            q[w] += v;
                            q[w + 1] += v;
                        }
                }
            });
        });
    }
    return out;
}

Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
    if (x.ndim() != 4) throw ShapeError("channel_norm: input must be 4-d NCHW");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gain.ndim() != 1 || gain.dim(0) != c)
        throw ShapeError("channel_norm: gain length != channels (" + std::to_string(c) + ")");
    if (shift.ndim() != 1 || shift.dim(0) != c)
        throw ShapeError("channel_norm: shift length != channels (" + std::to_string(c) + ")");
    const int64_t hw = static_cast<int64_t>(h) * w;
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = data_of<T>(x);
        const T* pg = data_of<T>(gain);
        const T* ps = data_of<T>(shift);
        T* po = mut_of<T>(out);
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                const T* src = px + (static_cast<int64_t>(i) * c + ch) * hw;
                T* dst = po + (static_cast<int64_t>(i) * c + ch) * hw;
                T mu = T(0);
                for (int64_t k = 0; k < hw; ++k) mu += src[k];
                mu /= static_cast<T>(hw);
                T var = T(0);
                for (int64_t k = 0; k < hw; ++k) {
                    T dv = src[k] - mu;
                    var += dv * dv;
                }
                var /= static_cast<T>(hw);
                T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
                for (int64_t k = 0; k < hw; ++k)
                    dst[k] = (src[k] - mu) * inv * pg[ch] + ps[ch];
            }
    });
    if (should_record({&x, &gain, &shift})) {
        out.set_requires_grad(true);
        active_tape()->record([x, gain, shift, out, n, c, hw, eps](GradTape& tp) {
            const Tensor* og = tp.find_grad(out);
            if (!og) return;
            dispatch(x.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* px = data_of<T>(x);
                const T* pg = data_of<T>(gain);
                const T* g = data_of<T>(*og);
                T* gx = x.requires_grad() ? mut_of<T>(tp.grad_slot(x)) : nullptr;
                T* gg = gain.requires_grad() ? mut_of<T>(tp.grad_slot(gain)) : nullptr;
                T* gs = shift.requires_grad() ? mut_of<T>(tp.grad_slot(shift)) : nullptr;
                for (int i = 0; i < n; ++i)
                    for (int ch = 0; ch < c; ++ch) {
                        const T* src = px + (static_cast<int64_t>(i) * c + ch) * hw;
                        const T* go = g + (static_cast<int64_t>(i) * c + ch) * hw;
                        T mu = T(0);
                        for (int64_t k = 0; k < hw; ++k) mu += src[k];
                        mu /= static_cast<T>(hw);
                        T var = T(0);
                        for (int64_t k = 0; k < hw; ++k) {
                            T dv = src[k] - mu;
                            var += dv * dv;
                        }
                        var /= static_cast<T>(hw);
                        T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
                        T gsum = T(0), gxsum = T(0);
                        for (int64_t k = 0; k < hw; ++k) {
                            gsum += go[k];
                            gxsum += go[k] * (src[k] - mu) * inv;
                        }
                        if (gg) gg[ch] += gxsum;
                        if (gs) gs[ch] += gsum;
                        if (gx) {
                            T* dst = gx + (static_cast<int64_t>(i) * c + ch) * hw;
                            T mgs = gsum / static_cast<T>(hw);
                            T mgx = gxsum / static_cast<T>(hw);
                            for (int64_t k = 0; k < hw; ++k) {
                                T xhat = (src[k] - mu) * inv;
                                dst[k] += pg[ch] * inv * (go[k] - mgs - xhat * mgx);
                            }
                        }
                    }
            });
        });
    }
    return out;
}

Tensor add_channel_vec(const Tensor& x, const Tensor& v) {
    if (x.ndim() != 4 || v.ndim() != 2)
        throw ShapeError("add_channel_vec: expected x[N,C,H,W], v[N,C]");
    if (x.dim(0) != v.dim(0) || x.dim(1) != v.dim(1))
        throw ShapeError("add_channel_vec: N,C mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(v.shape()));
    const int n = x.dim(0), c = x.dim(1);
    const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = data_of<T>(x);
        const T* pv = data_of<T>(v);
        T* po = mut_of<T>(out);
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                T add_v = pv[static_cast<int64_t>(i) * c + ch];
                const T* src = px + (static_cast<int64_t>(i) * c + ch) * hw;
                T* dst = po + (static_cast<int64_t>(i) * c + ch) * hw;
                for (int64_t k = 0; k < hw; ++k) dst[k] = src[k] + add_v;
            }
    });
    if (should_record({&x, &v})) {
        out.set_requires_grad(true);
        active_tape()->record([x, v, out, n, c, hw](GradTape& tp) {
            const Tensor* og = tp.find_grad(out);
            if (!og) return;
            dispatch(x.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* g = data_of<T>(*og);
                if (x.requires_grad()) {
                    T* p = mut_of<T>(tp.grad_slot(x));
                    axpy(p, g, x.numel());
                }
                if (v.requires_grad()) {
                    T* p = mut_of<T>(tp.grad_slot(v));
                    for (int i = 0; i < n; ++i)
                        for (int ch = 0; ch < c; ++ch) {
                            const T* go = g + (static_cast<int64_t>(i) * c + ch) * hw;
                            T s = T(0);
                            for (int64_t k = 0; k < hw; ++k) s += go[k];
                            p[static_cast<int64_t>(i) * c + ch] += s;
                        }
                }
            });
        });
    }
    return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) throw ShapeError("embedding: table must be 2-d [K,D]");
    const int k = table.dim(0), d = table.dim(1);
    const int n = static_cast<int>(ids.size());
    for (int id : ids)
        if (id < 0 || id >= k)
            throw ShapeError("embedding: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(k) + ")");
    Tensor out = Tensor::zeros({n, d}, table.dtype());
    dispatch(table.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pt = data_of<T>(table);
        T* po = mut_of<T>(out);
        for (int i = 0; i < n; ++i)
            std::memcpy(po + static_cast<int64_t>(i) * d, pt + static_cast<int64_t>(ids[i]) * d,
                        sizeof(T) * d);
    });
    if (should_record({&table})) {
        out.set_requires_grad(true);
        active_tape()->record([table, out, ids, d](GradTape& tp) {
            const Tensor* og = tp.find_grad(out);
            if (!og) return;
            dispatch(table.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* g = data_of<T>(*og);
                T* p = mut_of<T>(tp.grad_slot(table));
                for (size_t i = 0; i < ids.size(); ++i)
                    axpy(p + static_cast<int64_t>(ids[i]) * d, g + static_cast<int64_t>(i) * d, d);
            });
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x) {
    Tensor out = Tensor::zeros({}, x.dtype());
    double s = 0;
    for (int64_t i = 0; i < x.numel(); ++i) s += x.get(i);
    out.set(0, s / static_cast<double>(x.numel()));
    if (should_record({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([x, out](GradTape& tp) {
            const Tensor* og = tp.find_grad(out);
            if (!og) return;
            double g = og->get(0) / static_cast<double>(x.numel());
            dispatch(x.dtype(), [&](auto tag) {
                using T = decltype(tag);
                T* p = mut_of<T>(tp.grad_slot(x));
                for (int64_t i = 0; i < x.numel(); ++i) p[i] += static_cast<T>(g);
            });
        });
    }
    return out;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse_loss");
    Tensor out = Tensor::zeros({}, pred.dtype());
    dispatch(pred.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = data_of<T>(pred);
        const T* pb = data_of<T>(target);
        T s = T(0);
        for (int64_t i = 0; i < pred.numel(); ++i) {
            T dv = pa[i] - pb[i];
            s += dv * dv;
        }
        out.set(0, static_cast<double>(s) / static_cast<double>(pred.numel()));
    });
    if (should_record({&pred, &target})) {
        out.set_requires_grad(true);
        active_tape()->record([pred, target, out](GradTape& tp) {
            const Tensor* og = tp.find_grad(out);
            if (!og) return;
            double g = 2.0 * og->get(0) / static_cast<double>(pred.numel());
            dispatch(pred.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* pa = data_of<T>(pred);
                const T* pb = data_of<T>(target);
                const T gc = static_cast<T>(g);
                if (pred.requires_grad()) {
                    T* p = mut_of<T>(tp.grad_slot(pred));
                    for (int64_t i = 0; i < pred.numel(); ++i) p[i] += gc * (pa[i] - pb[i]);
                }
                if (target.requires_grad()) {
                    T* p = mut_of<T>(tp.grad_slot(target));
                    for (int64_t i = 0; i < pred.numel(); ++i) p[i] -= gc * (pa[i] - pb[i]);
                }
            });
        });
    }
    return out;
}

}  // namespace mcn
