#pragma once

// Small-row dense kernels. Batch size one means nearly every product in the
// model has 1-6 rows on the left, where general GEMM packing dominates; these
// loops stream the right-hand matrix once, row by row, instead.
//
// All matrices are row-major and contiguous.

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <vector>

namespace ccl::kernels {

using Index = Eigen::Index;

inline constexpr Index kMaxRows = 8;

// A pending rank-r term left^T * right; left is r x K, right is r x N.
struct Term {
    const double* left;
    const double* right;
    Index rows;
};

namespace detail {

#if defined(__GNUC__)

#if defined(__AVX512F__)
inline constexpr Index kLanes = 8;
#elif defined(__AVX__)
inline constexpr Index kLanes = 4;
#else
inline constexpr Index kLanes = 2;
#endif
typedef double vec __attribute__((vector_size(kLanes * sizeof(double))));
typedef double vec_u __attribute__((vector_size(kLanes * sizeof(double)), aligned(8), may_alias));

inline vec load(const double* p) { return *reinterpret_cast<const vec_u*>(p); }
inline void store(double* p, vec v) { *reinterpret_cast<vec_u*>(p) = v; }

// Rows k..k+KB-1 of w (plus pending terms, written back) are folded into the
// M x N accumulator y, which stays in L1 while w streams past once in order.
template <int M, int KB>
inline void product_block(const double* x, Index K, double* w, Index N, double* y, Index k, const Term* terms,
                          std::size_t nterms) {
    double xs[M][KB];
    for (int m = 0; m < M; ++m)
        for (int j = 0; j < KB; ++j) xs[m][j] = x[m * K + k + j];
    double* wr = w + k * N;
    const Index nv = N - N % kLanes;
    for (Index n = 0; n < nv; n += kLanes) {
        vec wv[KB];
        for (int j = 0; j < KB; ++j) wv[j] = load(wr + j * N + n);
        if (nterms != 0) {
            for (std::size_t t = 0; t < nterms; ++t) {
                const Term& term = terms[t];
                for (Index r = 0; r < term.rows; ++r) {
                    const vec rv = load(term.right + r * N + n);
                    for (int j = 0; j < KB; ++j) wv[j] += term.left[r * K + k + j] * rv;
                }
            }
            for (int j = 0; j < KB; ++j) store(wr + j * N + n, wv[j]);
        }
#pragma GCC unroll 8
        for (int m = 0; m < M; ++m) {
            vec acc = load(y + m * N + n);
            for (int j = 0; j < KB; ++j) acc += xs[m][j] * wv[j];
            store(y + m * N + n, acc);
        }
    }
    for (Index n = nv; n < N; ++n) {
        for (int j = 0; j < KB; ++j) {
            double wk = wr[j * N + n];
            if (nterms != 0) {
                for (std::size_t t = 0; t < nterms; ++t) {
                    for (Index r = 0; r < terms[t].rows; ++r) wk += terms[t].left[r * K + k + j] * terms[t].right[r * N + n];
                }
                wr[j * N + n] = wk;
            }
            for (int m = 0; m < M; ++m) y[m * N + n] += xs[m][j] * wk;
        }
    }
}

template <int M>
inline void product_rows(const double* x, Index K, double* w, Index N, double* y, const Term* terms,
                         std::size_t nterms) {
    std::fill(y, y + M * N, 0.0);
    Index k = 0;
    for (; k + 4 <= K; k += 4) product_block<M, 4>(x, K, w, N, y, k, terms, nterms);
    for (; k < K; ++k) product_block<M, 1>(x, K, w, N, y, k, terms, nterms);
}

// dx (M x K) += g (M x N) * w^T, two rows of w at a time.
template <int M>
inline void product_nt_rows(const double* g, Index N, const double* w, Index K, double* dx) {
    const Index nv = N - N % kLanes;
    Index k = 0;
    for (; k + 2 <= K; k += 2) {
        const double* w0 = w + k * N;
        const double* w1 = w0 + N;
        vec a0[M], a1[M];
        for (int m = 0; m < M; ++m) a0[m] = a1[m] = vec{};
        for (Index n = 0; n < nv; n += kLanes) {
            const vec x0 = load(w0 + n);
            const vec x1 = load(w1 + n);
#pragma GCC unroll 8
            for (int m = 0; m < M; ++m) {
                const vec gv = load(g + m * N + n);
                a0[m] += gv * x0;
                a1[m] += gv * x1;
            }
        }
        for (int m = 0; m < M; ++m) {
            double s0 = 0.0, s1 = 0.0;
            for (Index j = 0; j < kLanes; ++j) {
                s0 += a0[m][j];
                s1 += a1[m][j];
            }
            for (Index n = nv; n < N; ++n) {
                s0 += g[m * N + n] * w0[n];
                s1 += g[m * N + n] * w1[n];
            }
            dx[m * K + k] += s0;
            dx[m * K + k + 1] += s1;
        }
    }
    for (; k < K; ++k) {
        const double* w0 = w + k * N;
        for (int m = 0; m < M; ++m) {
            double s = 0.0;
            for (Index n = 0; n < N; ++n) s += g[m * N + n] * w0[n];
            dx[m * K + k] += s;
        }
    }
}

#endif

template <int M>
inline void dispatch_product(const double* x, Index K, double* w, Index N, double* y, const Term* terms,
                             std::size_t nterms) {
#if defined(__GNUC__)
    product_rows<M>(x, K, w, N, y, terms, nterms);
#else
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<RowMat> wm(w, K, N);
    for (std::size_t t = 0; t < nterms; ++t) {
        wm.noalias() += Eigen::Map<const RowMat>(terms[t].left, terms[t].rows, K).transpose() *
                        Eigen::Map<const RowMat>(terms[t].right, terms[t].rows, N);
    }
    Eigen::Map<RowMat>(y, M, N).noalias() = Eigen::Map<const RowMat>(x, M, K) * wm;
#endif
}

template <int M>
inline void dispatch_product_nt(const double* g, Index N, const double* w, Index K, double* dx) {
#if defined(__GNUC__)
    product_nt_rows<M>(g, N, w, K, dx);
#else
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<RowMat>(dx, M, K).noalias() +=
        Eigen::Map<const RowMat>(g, M, N) * Eigen::Map<const RowMat>(w, K, N).transpose();
#endif
}

}  // namespace detail

// y = x w for an M x K x with M <= kMaxRows. Pending terms are first added
// into w in the same pass.
inline void product(const double* x, Index M, Index K, double* w, Index N, double* y,
                    const std::vector<Term>& terms = {}) {
    const Term* t = terms.data();
    const std::size_t nt = terms.size();
    switch (M) {
        case 1: return detail::dispatch_product<1>(x, K, w, N, y, t, nt);
        case 2: return detail::dispatch_product<2>(x, K, w, N, y, t, nt);
        case 3: return detail::dispatch_product<3>(x, K, w, N, y, t, nt);
        case 4: return detail::dispatch_product<4>(x, K, w, N, y, t, nt);
        case 5: return detail::dispatch_product<5>(x, K, w, N, y, t, nt);
        case 6: return detail::dispatch_product<6>(x, K, w, N, y, t, nt);
        case 7: return detail::dispatch_product<7>(x, K, w, N, y, t, nt);
        case 8: return detail::dispatch_product<8>(x, K, w, N, y, t, nt);
        default: break;
    }
}

// dx += g w^T for an M x N g with M <= kMaxRows; w is K x N.
inline void product_nt(const double* g, Index M, Index N, const double* w, Index K, double* dx) {
    switch (M) {
        case 1: return detail::dispatch_product_nt<1>(g, N, w, K, dx);
        case 2: return detail::dispatch_product_nt<2>(g, N, w, K, dx);
        case 3: return detail::dispatch_product_nt<3>(g, N, w, K, dx);
        case 4: return detail::dispatch_product_nt<4>(g, N, w, K, dx);
        case 5: return detail::dispatch_product_nt<5>(g, N, w, K, dx);
        case 6: return detail::dispatch_product_nt<6>(g, N, w, K, dx);
        case 7: return detail::dispatch_product_nt<7>(g, N, w, K, dx);
        case 8: return detail::dispatch_product_nt<8>(g, N, w, K, dx);
        default: break;
    }
}

// w (K x N) += scale * left^T right, left r x K, right r x N.
inline void rank_update(double* w, Index K, Index N, const double* left, const double* right, Index r,
                        double scale = 1.0) {
#if defined(__GNUC__)
    using detail::kLanes;
    const Index nv = N - N % kLanes;
    std::vector<double> c(static_cast<std::size_t>(r));
    for (Index k = 0; k < K; ++k) {
        for (Index m = 0; m < r; ++m) c[static_cast<std::size_t>(m)] = scale * left[m * K + k];
        double* wr = w + k * N;
        for (Index n = 0; n < nv; n += kLanes) {
            detail::vec s = detail::load(wr + n);
            for (Index m = 0; m < r; ++m) s += c[static_cast<std::size_t>(m)] * detail::load(right + m * N + n);
            detail::store(wr + n, s);
        }
        for (Index n = nv; n < N; ++n) {
            double s = wr[n];
            for (Index m = 0; m < r; ++m) s += c[static_cast<std::size_t>(m)] * right[m * N + n];
            wr[n] = s;
        }
    }
#else
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<RowMat>(w, K, N).noalias() +=
        (scale * Eigen::Map<const RowMat>(left, r, K).transpose()) * Eigen::Map<const RowMat>(right, r, N);
#endif
}

}  // namespace ccl::kernels
