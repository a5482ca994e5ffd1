#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#endif

#include "eigenlen/rng.hpp"

namespace eigenlen::ndiff {

// ---------------------------------------------------------------------------
// Pooled storage: activation buffers recycle through a thread-local free list
// so the training loop never churns large allocations.
// ---------------------------------------------------------------------------

namespace detail {

inline std::unordered_map<std::size_t, std::vector<double*>>& buffer_pool() {
    thread_local std::unordered_map<std::size_t, std::vector<double*>> pool;
    return pool;
}

}  // namespace detail

template <typename T>
struct PoolAllocator {
    using value_type = T;

    PoolAllocator() = default;
    template <typename U>
    PoolAllocator(const PoolAllocator<U>&) {}

    T* allocate(std::size_t n) {
        auto& bucket = detail::buffer_pool()[n];
        if (!bucket.empty()) {
            T* p = reinterpret_cast<T*>(bucket.back());
            bucket.pop_back();
            return p;
        }
        return static_cast<T*>(::operator new(n * sizeof(T)));
    }
    void deallocate(T* p, std::size_t n) noexcept {
        detail::buffer_pool()[n].push_back(reinterpret_cast<double*>(p));
    }
    // default-inits stay cheap: vector(n) leaves doubles indeterminate, while
    // vector(n, 0.0) still zero-fills
    template <typename U>
    void construct(U* p) noexcept {
        ::new (static_cast<void*>(p)) U;
    }
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
    bool operator==(const PoolAllocator&) const { return true; }
    bool operator!=(const PoolAllocator&) const { return false; }
};

using DataVec = std::vector<double, PoolAllocator<double>>;

// ---------------------------------------------------------------------------
// Matrix: row-major f64 storage. Kernels keep the hot inner loop contiguous
// and alias-free; this is the entire performance story of the library.
// ---------------------------------------------------------------------------

struct Matrix {
    int rows = 0, cols = 0;
    DataVec d;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), d(static_cast<std::size_t>(r) * c, 0.0) {}

    // storage for outputs that every code path fully assigns
    static Matrix uninitialized(int r, int c) {
        Matrix m;
        m.rows = r;
        m.cols = c;
        m.d = DataVec(static_cast<std::size_t>(r) * c);
        return m;
    }

    double& operator()(int r, int c) { return d[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return d[static_cast<std::size_t>(r) * cols + c]; }
    double* row(int r) { return d.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(int r) const { return d.data() + static_cast<std::size_t>(r) * cols; }
    std::size_t size() const { return d.size(); }

    bool all_finite() const {
        for (double v : d)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void check_shape(const Matrix& m, int rows, int cols, const char* where) {
    if (m.rows != rows || m.cols != cols)
        throw std::invalid_argument(std::string(where) + ": expected " + std::to_string(rows) +
                                    "x" + std::to_string(cols) + ", got " +
                                    std::to_string(m.rows) + "x" + std::to_string(m.cols));
}

namespace detail {

// Reference kernel: C = seed_row (or 0) + A(RxK) * B(KxC); the first pass
// assigns, so C needs no zeroing.
inline void matmul_rows(const double* __restrict__ a, const double* __restrict__ b,
                        double* __restrict__ c, int row_begin, int row_end, int inner,
                        int cols, const double* __restrict__ seed_row) {
    const std::size_t kk = static_cast<std::size_t>(inner);
    const std::size_t cc = static_cast<std::size_t>(cols);
    for (int i = row_begin; i < row_end; ++i) {
        const double* __restrict__ ai = a + static_cast<std::size_t>(i) * kk;
        double* __restrict__ ci = c + static_cast<std::size_t>(i) * cc;
        {
            const double av = ai[0];
            const double* __restrict__ bk = b;
            if (seed_row) {
                for (int j = 0; j < cols; ++j) ci[j] = seed_row[j] + av * bk[j];
            } else {
                for (int j = 0; j < cols; ++j) ci[j] = av * bk[j];
            }
        }
        for (int k = 1; k < inner; ++k) {
            const double av = ai[k];
            const double* __restrict__ bk = b + static_cast<std::size_t>(k) * cc;
            for (int j = 0; j < cols; ++j) ci[j] += av * bk[j];
        }
    }
}

#if defined(__AVX2__) && defined(__FMA__)

// 4x8 register tile held across the whole K loop; rows and columns that do
// not fill a tile fall back to the reference kernel.
inline void matmul_into(const double* __restrict__ a, const double* __restrict__ b,
                        double* __restrict__ c, int rows, int inner, int cols,
                        const double* __restrict__ seed_row = nullptr) {
    if (inner == 0) return;
    const std::size_t kk = static_cast<std::size_t>(inner);
    const std::size_t cc = static_cast<std::size_t>(cols);
    int i = 0;
    for (; i + 4 <= rows; i += 4) {
        const double* a0 = a + (static_cast<std::size_t>(i) + 0) * kk;
        const double* a1 = a + (static_cast<std::size_t>(i) + 1) * kk;
        const double* a2 = a + (static_cast<std::size_t>(i) + 2) * kk;
        const double* a3 = a + (static_cast<std::size_t>(i) + 3) * kk;
        int j = 0;
        for (; j + 8 <= cols; j += 8) {
            __m256d seed0 = _mm256_setzero_pd(), seed1 = _mm256_setzero_pd();
            if (seed_row) {
                seed0 = _mm256_loadu_pd(seed_row + j);
                seed1 = _mm256_loadu_pd(seed_row + j + 4);
            }
            __m256d c00 = seed0, c01 = seed1;
            __m256d c10 = seed0, c11 = seed1;
            __m256d c20 = seed0, c21 = seed1;
            __m256d c30 = seed0, c31 = seed1;
            const double* bj = b + j;
            for (int k = 0; k < inner; ++k) {
                const __m256d b0 = _mm256_loadu_pd(bj + static_cast<std::size_t>(k) * cc);
                const __m256d b1 = _mm256_loadu_pd(bj + static_cast<std::size_t>(k) * cc + 4);
                __m256d av = _mm256_set1_pd(a0[k]);
                c00 = _mm256_fmadd_pd(av, b0, c00);
                c01 = _mm256_fmadd_pd(av, b1, c01);
                av = _mm256_set1_pd(a1[k]);
                c10 = _mm256_fmadd_pd(av, b0, c10);
                c11 = _mm256_fmadd_pd(av, b1, c11);
                av = _mm256_set1_pd(a2[k]);
                c20 = _mm256_fmadd_pd(av, b0, c20);
                c21 = _mm256_fmadd_pd(av, b1, c21);
                av = _mm256_set1_pd(a3[k]);
                c30 = _mm256_fmadd_pd(av, b0, c30);
                c31 = _mm256_fmadd_pd(av, b1, c31);
            }
            double* ci = c + static_cast<std::size_t>(i) * cc + j;
            _mm256_storeu_pd(ci, c00);
            _mm256_storeu_pd(ci + 4, c01);
            _mm256_storeu_pd(ci + cc, c10);
            _mm256_storeu_pd(ci + cc + 4, c11);
            _mm256_storeu_pd(ci + 2 * cc, c20);
            _mm256_storeu_pd(ci + 2 * cc + 4, c21);
            _mm256_storeu_pd(ci + 3 * cc, c30);
            _mm256_storeu_pd(ci + 3 * cc + 4, c31);
        }
        for (; j < cols; ++j) {
            const double seed = seed_row ? seed_row[j] : 0.0;
            double s0 = seed, s1 = seed, s2 = seed, s3 = seed;
            for (int k = 0; k < inner; ++k) {
                const double w = b[static_cast<std::size_t>(k) * cc + j];
                s0 += a0[k] * w;
                s1 += a1[k] * w;
                s2 += a2[k] * w;
                s3 += a3[k] * w;
            }
            c[(static_cast<std::size_t>(i) + 0) * cc + j] = s0;
            c[(static_cast<std::size_t>(i) + 1) * cc + j] = s1;
            c[(static_cast<std::size_t>(i) + 2) * cc + j] = s2;
            c[(static_cast<std::size_t>(i) + 3) * cc + j] = s3;
        }
    }
    matmul_rows(a, b, c, i, rows, inner, cols, seed_row);
}

#else

inline void matmul_into(const double* __restrict__ a, const double* __restrict__ b,
                        double* __restrict__ c, int rows, int inner, int cols,
                        const double* __restrict__ seed_row = nullptr) {
    if (inner == 0) return;
    matmul_rows(a, b, c, 0, rows, inner, cols, seed_row);
}

#endif

}  // namespace detail

// C = A(RxK) * B(KxC)
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dims differ");
    if (a.cols == 0) return Matrix(a.rows, b.cols);
    Matrix c = Matrix::uninitialized(a.rows, b.cols);
    detail::matmul_into(a.d.data(), b.d.data(), c.d.data(), a.rows, a.cols, b.cols);
    return c;
}

// C = A * B + bias, with the bias row folded into the kernel's seed pass.
inline Matrix matmul_bias(const Matrix& a, const Matrix& b, const Matrix& bias) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul_bias: inner dims differ");
    if (bias.cols != b.cols) throw std::invalid_argument("matmul_bias: bias width mismatch");
    Matrix c = Matrix::uninitialized(a.rows, b.cols);
    if (a.cols == 0) {
        for (int i = 0; i < c.rows; ++i)
            for (int j = 0; j < c.cols; ++j) c(i, j) = bias.d[static_cast<std::size_t>(j)];
        return c;
    }
    detail::matmul_into(a.d.data(), b.d.data(), c.d.data(), a.rows, a.cols, b.cols,
                        bias.d.data());
    return c;
}

// C = A(RxC) * B(KxC)^T -> RxK; B is transposed once so the kernel streams.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dims differ");
    if (a.cols == 0) return Matrix(a.rows, b.rows);
    Matrix bt = Matrix::uninitialized(b.cols, b.rows);
    for (int i = 0; i < b.rows; ++i) {
        const double* bi = b.row(i);
        for (int j = 0; j < b.cols; ++j) bt(j, i) = bi[j];
    }
    Matrix c = Matrix::uninitialized(a.rows, b.rows);
    detail::matmul_into(a.d.data(), bt.d.data(), c.d.data(), a.rows, a.cols, b.rows);
    return c;
}

// C = A(RxK)^T * B(RxC) -> KxC. Four input rows per pass keep the C panel in
// cache while A and B stream through once.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: inner dims differ");
    Matrix c(a.cols, b.cols);
    double* __restrict__ cd = c.d.data();
    const std::size_t cc = static_cast<std::size_t>(b.cols);
    int i = 0;
    for (; i + 4 <= a.rows; i += 4) {
        const double* __restrict__ a0 = a.row(i);
        const double* __restrict__ a1 = a.row(i + 1);
        const double* __restrict__ a2 = a.row(i + 2);
        const double* __restrict__ a3 = a.row(i + 3);
        const double* __restrict__ b0 = b.row(i);
        const double* __restrict__ b1 = b.row(i + 1);
        const double* __restrict__ b2 = b.row(i + 2);
        const double* __restrict__ b3 = b.row(i + 3);
        for (int k = 0; k < a.cols; ++k) {
            const double v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
            double* __restrict__ ck = cd + static_cast<std::size_t>(k) * cc;
            for (int j = 0; j < b.cols; ++j)
                ck[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
        }
    }
    for (; i < a.rows; ++i) {
        const double* __restrict__ ai = a.row(i);
        const double* __restrict__ bi = b.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double av = ai[k];
            double* __restrict__ ck = cd + static_cast<std::size_t>(k) * cc;
            for (int j = 0; j < b.cols; ++j) ck[j] += av * bi[j];
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// Parameters and the optimizer
// ---------------------------------------------------------------------------

struct Param {
    Matrix value, grad, adam_m, adam_v;
    std::int64_t step = 0;

    explicit Param(int rows = 0, int cols = 0)
        : value(rows, cols), grad(rows, cols), adam_m(rows, cols), adam_v(rows, cols) {}

    void resize(int rows, int cols) {
        value = Matrix(rows, cols);
        grad = Matrix(rows, cols);
        adam_m = Matrix(rows, cols);
        adam_v = Matrix(rows, cols);
        step = 0;
    }
};

// Bias-corrected Adam update; grads are zeroed afterwards.
inline void adam_step(const std::vector<Param*>& params, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
    for (Param* p : params) {
        p->step += 1;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(p->step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(p->step));
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad.d[i];
            p->adam_m.d[i] = beta1 * p->adam_m.d[i] + (1.0 - beta1) * g;
            p->adam_v.d[i] = beta2 * p->adam_v.d[i] + (1.0 - beta2) * g * g;
            const double mhat = p->adam_m.d[i] / c1;
            const double vhat = p->adam_v.d[i] / c2;
            p->value.d[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            p->grad.d[i] = 0.0;
        }
    }
}

// ---------------------------------------------------------------------------
// Layers. Each layer owns its parameters and the cache from its last forward;
// training is single-threaded by contract, so the internal cache is fine.
// Activations move through the chain, never copy.
// ---------------------------------------------------------------------------

enum class Mode { Train, Eval };

struct Linear {
    Param w, b;
    Matrix cache_x;
    bool has_cache = false;

    Linear(int in, int out, Rng& rng) : w(in, out), b(1, out) {
        const double bound = std::sqrt(6.0 / (in + out));
        for (auto& v : w.value.d) v = rng.uniform(-bound, bound);
    }

    Matrix forward(Matrix x, Mode) {
        if (x.cols != w.value.rows)
            throw std::invalid_argument("Linear: input cols " + std::to_string(x.cols) +
                                        " != in features " + std::to_string(w.value.rows));
        cache_x = std::move(x);
        has_cache = true;
        return matmul_bias(cache_x, w.value, b.value);
    }

    Matrix backward(const Matrix& dy) {
        if (!has_cache) throw std::logic_error("Linear: backward without forward");
        has_cache = false;
        const Matrix dw = matmul_tn(cache_x, dy);
        for (std::size_t i = 0; i < dw.size(); ++i) w.grad.d[i] += dw.d[i];
        for (int i = 0; i < dy.rows; ++i) {
            const double* di = dy.row(i);
            for (int j = 0; j < dy.cols; ++j) b.grad.d[static_cast<std::size_t>(j)] += di[j];
        }
        return matmul_nt(dy, w.value);
    }
};

struct LeakyRelu {
    double slope = 0.01;
    std::vector<unsigned char> cache_positive;
    bool has_cache = false;

    Matrix forward(Matrix x, Mode) {
        cache_positive.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double v = x.d[i];
            cache_positive[i] = v > 0.0;
            x.d[i] = std::max(v, 0.0) + slope * std::min(v, 0.0);
        }
        has_cache = true;
        return x;
    }
    Matrix backward(Matrix dy) {
        if (!has_cache) throw std::logic_error("LeakyRelu: backward without forward");
        has_cache = false;
        for (std::size_t i = 0; i < dy.size(); ++i)
            dy.d[i] *= cache_positive[i] ? 1.0 : slope;
        return dy;
    }
};

struct BatchNorm {
    Param gamma, beta;
    Matrix running_mean, running_var;
    double momentum = 0.1, eps = 1e-5;

    Matrix cache_xhat, cache_inv_std;
    Mode cache_mode = Mode::Train;
    bool has_cache = false;

    explicit BatchNorm(int features)
        : gamma(1, features), beta(1, features), running_mean(1, features),
          running_var(1, features) {
        for (auto& v : gamma.value.d) v = 1.0;
        for (auto& v : running_var.d) v = 1.0;
    }

    Matrix forward(Matrix x, Mode mode, LeakyRelu* fused_act = nullptr) {
        const int f = gamma.value.cols;
        if (x.cols != f)
            throw std::invalid_argument("BatchNorm: input cols " + std::to_string(x.cols) +
                                        " != features " + std::to_string(f));
        cache_mode = mode;
        has_cache = true;
        const std::size_t fs = static_cast<std::size_t>(f);
        cache_inv_std = Matrix(1, f);
        std::vector<double> mean(fs, 0.0);
        if (mode == Mode::Train) {
            if (x.rows < 2) throw std::invalid_argument("BatchNorm: train mode needs batch >= 2");
            const double inv_n = 1.0 / x.rows;
            std::vector<double> var(fs, 0.0);
            for (int i = 0; i < x.rows; ++i) {
                const double* __restrict__ xi = x.row(i);
                for (int j = 0; j < f; ++j) mean[static_cast<std::size_t>(j)] += xi[j];
            }
            for (auto& m : mean) m *= inv_n;
            for (int i = 0; i < x.rows; ++i) {
                const double* __restrict__ xi = x.row(i);
                for (int j = 0; j < f; ++j) {
                    const double dlt = xi[j] - mean[static_cast<std::size_t>(j)];
                    var[static_cast<std::size_t>(j)] += dlt * dlt;
                }
            }
            for (auto& v : var) v *= inv_n;
            for (int j = 0; j < f; ++j)
                cache_inv_std.d[static_cast<std::size_t>(j)] =
                    1.0 / std::sqrt(var[static_cast<std::size_t>(j)] + eps);
            // unbiased variance feeds the running estimate
            const double unbias = x.rows > 1 ? static_cast<double>(x.rows) / (x.rows - 1) : 1.0;
            for (int j = 0; j < f; ++j) {
                const std::size_t jj = static_cast<std::size_t>(j);
                running_mean.d[jj] = (1.0 - momentum) * running_mean.d[jj] + momentum * mean[jj];
                running_var.d[jj] =
                    (1.0 - momentum) * running_var.d[jj] + momentum * var[jj] * unbias;
            }
        } else {
            for (int j = 0; j < f; ++j) {
                mean[static_cast<std::size_t>(j)] = running_mean.d[static_cast<std::size_t>(j)];
                cache_inv_std.d[static_cast<std::size_t>(j)] =
                    1.0 / std::sqrt(running_var.d[static_cast<std::size_t>(j)] + eps);
            }
        }
        // x becomes xhat in place; the output is a fresh affine image, with
        // a following LeakyReLU folded into the same pass when requested
        Matrix y = Matrix::uninitialized(x.rows, f);
        const double* __restrict__ gam = gamma.value.d.data();
        const double* __restrict__ bet = beta.value.d.data();
        const double* __restrict__ istd = cache_inv_std.d.data();
        const double* __restrict__ mu = mean.data();
        if (fused_act) {
            fused_act->cache_positive.resize(x.size());
            fused_act->has_cache = true;
            const double slope = fused_act->slope;
            unsigned char* __restrict__ mask = fused_act->cache_positive.data();
            for (int i = 0; i < x.rows; ++i) {
                double* __restrict__ xh = x.row(i);
                double* __restrict__ yi = y.row(i);
                unsigned char* __restrict__ mi = mask + static_cast<std::size_t>(i) * f;
                for (int j = 0; j < f; ++j) {
                    xh[j] = (xh[j] - mu[j]) * istd[j];
                    const double yv = gam[j] * xh[j] + bet[j];
                    mi[j] = yv > 0.0;
                    yi[j] = std::max(yv, 0.0) + slope * std::min(yv, 0.0);
                }
            }
        } else {
            for (int i = 0; i < x.rows; ++i) {
                double* __restrict__ xh = x.row(i);
                double* __restrict__ yi = y.row(i);
                for (int j = 0; j < f; ++j) {
                    xh[j] = (xh[j] - mu[j]) * istd[j];
                    yi[j] = gam[j] * xh[j] + bet[j];
                }
            }
        }
        cache_xhat = std::move(x);
        return y;
    }

    // Backward through the batch norm, optionally preceded by the fused
    // activation's mask (dy is the gradient at the activation output).
    Matrix backward(const Matrix& dy, LeakyRelu* fused_act = nullptr) {
        if (!has_cache) throw std::logic_error("BatchNorm: backward without forward");
        has_cache = false;
        const int f = gamma.value.cols;
        const int n = dy.rows;
        const unsigned char* __restrict__ mask =
            fused_act ? fused_act->cache_positive.data() : nullptr;
        const double slope = fused_act ? fused_act->slope : 1.0;
        if (fused_act) fused_act->has_cache = false;

        Matrix dx = Matrix::uninitialized(n, f);
        std::vector<double> sum_dy(static_cast<std::size_t>(f), 0.0);
        std::vector<double> sum_dy_xhat(static_cast<std::size_t>(f), 0.0);
        for (int i = 0; i < n; ++i) {
            const double* __restrict__ di = dy.row(i);
            const double* __restrict__ xh = cache_xhat.row(i);
            if (mask) {
                const unsigned char* __restrict__ mi = mask + static_cast<std::size_t>(i) * f;
                for (int j = 0; j < f; ++j) {
                    const double v = di[j] * (mi[j] ? 1.0 : slope);
                    sum_dy[static_cast<std::size_t>(j)] += v;
                    sum_dy_xhat[static_cast<std::size_t>(j)] += v * xh[j];
                }
            } else {
                for (int j = 0; j < f; ++j) {
                    sum_dy[static_cast<std::size_t>(j)] += di[j];
                    sum_dy_xhat[static_cast<std::size_t>(j)] += di[j] * xh[j];
                }
            }
        }
        for (int j = 0; j < f; ++j) {
            const std::size_t jj = static_cast<std::size_t>(j);
            gamma.grad.d[jj] += sum_dy_xhat[jj];
            beta.grad.d[jj] += sum_dy[jj];
        }
        const double* __restrict__ gam = gamma.value.d.data();
        const double* __restrict__ istd = cache_inv_std.d.data();
        if (cache_mode == Mode::Train) {
            const double inv_n = 1.0 / n;
            const double* __restrict__ sdy = sum_dy.data();
            const double* __restrict__ sdyx = sum_dy_xhat.data();
            for (int i = 0; i < n; ++i) {
                const double* __restrict__ di = dy.row(i);
                const double* __restrict__ xh = cache_xhat.row(i);
                double* __restrict__ dxi = dx.row(i);
                if (mask) {
                    const unsigned char* __restrict__ mi =
                        mask + static_cast<std::size_t>(i) * f;
                    for (int j = 0; j < f; ++j) {
                        const double v = di[j] * (mi[j] ? 1.0 : slope);
                        dxi[j] = gam[j] * istd[j] *
                                 (v - inv_n * sdy[j] - inv_n * xh[j] * sdyx[j]);
                    }
                } else {
                    for (int j = 0; j < f; ++j)
                        dxi[j] = gam[j] * istd[j] *
                                 (di[j] - inv_n * sdy[j] - inv_n * xh[j] * sdyx[j]);
                }
            }
        } else {  // eval mode is a fixed affine map
            for (int i = 0; i < n; ++i) {
                const double* __restrict__ di = dy.row(i);
                double* __restrict__ dxi = dx.row(i);
                if (mask) {
                    const unsigned char* __restrict__ mi =
                        mask + static_cast<std::size_t>(i) * f;
                    for (int j = 0; j < f; ++j)
                        dxi[j] = di[j] * (mi[j] ? 1.0 : slope) * gam[j] * istd[j];
                } else {
                    for (int j = 0; j < f; ++j) dxi[j] = di[j] * gam[j] * istd[j];
                }
            }
        }
        return dx;
    }
};

inline double stable_sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

struct Sigmoid {
    Matrix cache_y;
    bool has_cache = false;

    Matrix forward(Matrix x, Mode) {
        for (auto& v : x.d) v = stable_sigmoid(v);
        cache_y = x;
        has_cache = true;
        return x;
    }
    Matrix backward(Matrix dy) {
        if (!has_cache) throw std::logic_error("Sigmoid: backward without forward");
        has_cache = false;
        for (std::size_t i = 0; i < dy.size(); ++i)
            dy.d[i] *= cache_y.d[i] * (1.0 - cache_y.d[i]);
        return dy;
    }
};

// Softmax across each cloud's points. Input is (B*N)xF; rows are grouped into
// clouds of N consecutive rows and normalized per column within each group.
struct SoftmaxOverPoints {
    int group_size;
    Matrix cache_y;
    bool has_cache = false;

    explicit SoftmaxOverPoints(int n) : group_size(n) {}

    Matrix forward(Matrix x, Mode) {
        if (x.rows % group_size != 0)
            throw std::invalid_argument("SoftmaxOverPoints: rows not a multiple of group size");
        const int groups = x.rows / group_size;
        for (int g = 0; g < groups; ++g) {
            const int base = g * group_size;
            for (int j = 0; j < x.cols; ++j) {
                double mx = -1e300;
                for (int i = 0; i < group_size; ++i) mx = std::max(mx, x(base + i, j));
                double sum = 0.0;
                for (int i = 0; i < group_size; ++i) {
                    const double e = std::exp(x(base + i, j) - mx);
                    x(base + i, j) = e;
                    sum += e;
                }
                for (int i = 0; i < group_size; ++i) x(base + i, j) /= sum;
            }
        }
        cache_y = x;
        has_cache = true;
        return x;
    }

    Matrix backward(const Matrix& dy) {
        if (!has_cache) throw std::logic_error("SoftmaxOverPoints: backward without forward");
        has_cache = false;
        Matrix dx(dy.rows, dy.cols);
        const int groups = dy.rows / group_size;
        for (int g = 0; g < groups; ++g) {
            const int base = g * group_size;
            for (int j = 0; j < dy.cols; ++j) {
                double dot = 0.0;
                for (int i = 0; i < group_size; ++i)
                    dot += dy(base + i, j) * cache_y(base + i, j);
                for (int i = 0; i < group_size; ++i)
                    dx(base + i, j) = cache_y(base + i, j) * (dy(base + i, j) - dot);
            }
        }
        return dx;
    }
};

// Per-feature max across each cloud's points: (B*N)xF -> BxF. Ties break to
// the lowest point index, which fixes the subgradient routing.
struct MaxPoolOverPoints {
    int group_size;
    std::vector<int> cache_argmax;
    int cache_in_rows = 0;
    bool has_cache = false;

    explicit MaxPoolOverPoints(int n) : group_size(n) {}

    Matrix forward(const Matrix& x, Mode) {
        if (x.rows % group_size != 0)
            throw std::invalid_argument("MaxPoolOverPoints: rows not a multiple of group size");
        const int groups = x.rows / group_size;
        Matrix y(groups, x.cols);
        cache_argmax.assign(static_cast<std::size_t>(groups) * x.cols, 0);
        cache_in_rows = x.rows;
        for (int g = 0; g < groups; ++g) {
            const int base = g * group_size;
            for (int j = 0; j < x.cols; ++j) {
                double best = x(base, j);
                int best_i = base;
                for (int i = 1; i < group_size; ++i) {
                    const double v = x(base + i, j);
                    if (v > best) {
                        best = v;
                        best_i = base + i;
                    }
                }
                y(g, j) = best;
                cache_argmax[static_cast<std::size_t>(g) * x.cols + j] = best_i;
            }
        }
        has_cache = true;
        return y;
    }

    Matrix backward(const Matrix& dy) {
        if (!has_cache) throw std::logic_error("MaxPoolOverPoints: backward without forward");
        has_cache = false;
        Matrix dx(cache_in_rows, dy.cols);
        for (int g = 0; g < dy.rows; ++g)
            for (int j = 0; j < dy.cols; ++j)
                dx(cache_argmax[static_cast<std::size_t>(g) * dy.cols + j], j) += dy(g, j);
        return dx;
    }
};

// ---------------------------------------------------------------------------
// MLP: Linear blocks with BatchNorm + LeakyReLU after every layer except the
// last (plain Linear output).
// ---------------------------------------------------------------------------

struct Mlp {
    std::vector<Linear> linears;
    std::vector<BatchNorm> norms;  // one per non-final layer
    std::vector<LeakyRelu> relus;

    Mlp() = default;
    Mlp(const std::vector<int>& widths, Rng& rng, bool norm_hidden = true) {
        if (widths.size() < 2) throw std::invalid_argument("Mlp: need at least two widths");
        for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
            linears.emplace_back(widths[i], widths[i + 1], rng);
            if (i + 2 < widths.size() && norm_hidden) {
                norms.emplace_back(widths[i + 1]);
                relus.emplace_back();
            }
        }
    }

    Matrix forward(Matrix x, Mode mode) {
        Matrix h = std::move(x);
        for (std::size_t i = 0; i < linears.size(); ++i) {
            h = linears[i].forward(std::move(h), mode);
            if (i < norms.size()) h = norms[i].forward(std::move(h), mode, &relus[i]);
        }
        return h;
    }

    Matrix backward(Matrix dy) {
        Matrix g = std::move(dy);
        for (std::size_t i = linears.size(); i-- > 0;) {
            if (i < norms.size()) g = norms[i].backward(g, &relus[i]);
            g = linears[i].backward(g);
        }
        return g;
    }

    void collect_params(std::vector<Param*>& out) {
        for (auto& l : linears) {
            out.push_back(&l.w);
            out.push_back(&l.b);
        }
        for (auto& n : norms) {
            out.push_back(&n.gamma);
            out.push_back(&n.beta);
        }
    }
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checker
// ---------------------------------------------------------------------------

// Compares analytic gradients against central differences over every
// coordinate of every parameter. `loss` must evaluate the scalar objective at
// the current parameter values without touching gradients; `grad` must run
// the matching forward/backward once, leaving gradients populated.
inline double grad_check(const std::function<double()>& loss,
                         const std::function<void()>& grad,
                         const std::vector<Param*>& params, double h = 1e-5) {
    for (Param* p : params)
        for (auto& g : p->grad.d) g = 0.0;
    grad();
    std::vector<DataVec> analytic;
    analytic.reserve(params.size());
    for (Param* p : params) analytic.push_back(p->grad.d);

    double max_err = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param* p = params[pi];
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value.d[i];
            p->value.d[i] = saved + h;
            const double lp = loss();
            p->value.d[i] = saved - h;
            const double lm = loss();
            p->value.d[i] = saved;
            const double numeric = (lp - lm) / (2.0 * h);
            const double a = analytic[pi][i];
            const double diff = std::abs(a - numeric);
            if (diff < 1e-7) continue;  // absolute floor
            max_err = std::max(max_err, diff / std::max(std::abs(a), std::abs(numeric)));
        }
    }
    for (Param* p : params)
        for (auto& g : p->grad.d) g = 0.0;
    return max_err;
}

}  // namespace eigenlen::ndiff
