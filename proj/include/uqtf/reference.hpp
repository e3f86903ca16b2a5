#pragma once

// Serial reference kernels: straightforward loop nests with no parallelism
// and no layout tricks. Tests compare the OpenMP kernels against these, and
// the benchmark tool reports the speedup between the two.

#include <cstdint>

namespace uqtf::ref {

template <typename S>
void matmul(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            S acc = S(0);
            for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
    }
}

template <typename S>
void channel_map(const S* x, const S* w, const S* bias, S* y, int64_t B, int64_t Ci, int64_t Co,
                 int64_t TV) {
    for (int64_t b = 0; b < B; ++b)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t i = 0; i < TV; ++i) {
                S acc = bias ? bias[co] : S(0);
                for (int64_t ci = 0; ci < Ci; ++ci)
                    acc += w[co * Ci + ci] * x[(b * Ci + ci) * TV + i];
                y[(b * Co + co) * TV + i] = acc;
            }
}

template <typename S>
void temporal_conv(const S* x, const S* w, const S* bias, S* y, int64_t B, int64_t Ci, int64_t Co,
                   int64_t T, int64_t V, int64_t K, int64_t stride, int64_t pad, int64_t To) {
    for (int64_t b = 0; b < B; ++b)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t to = 0; to < To; ++to)
                for (int64_t v = 0; v < V; ++v) {
                    S acc = bias ? bias[co] : S(0);
                    for (int64_t ci = 0; ci < Ci; ++ci)
                        for (int64_t k = 0; k < K; ++k) {
                            const int64_t t = to * stride + k - pad;
                            if (t >= 0 && t < T)
                                acc += w[(co * Ci + ci) * K + k] * x[((b * Ci + ci) * T + t) * V + v];
                        }
                    y[((b * Co + co) * To + to) * V + v] = acc;
                }
}

template <typename S>
void depthwise_temporal_conv(const S* x, const S* w, const S* bias, S* y, int64_t B, int64_t C,
                             int64_t T, int64_t V, int64_t K, int64_t stride, int64_t pad,
                             int64_t To) {
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t to = 0; to < To; ++to)
                for (int64_t v = 0; v < V; ++v) {
                    S acc = bias ? bias[c] : S(0);
                    for (int64_t k = 0; k < K; ++k) {
                        const int64_t t = to * stride + k - pad;
                        if (t >= 0 && t < T) acc += w[c * K + k] * x[((b * C + c) * T + t) * V + v];
                    }
                    y[((b * C + c) * To + to) * V + v] = acc;
                }
}

template <typename S>
void node_mix(const S* x, const S* m, S* y, int64_t B, int64_t C, int64_t T, int64_t V) {
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t t = 0; t < T; ++t)
                for (int64_t v = 0; v < V; ++v) {
                    S acc = S(0);
                    for (int64_t u = 0; u < V; ++u)
                        acc += x[((b * C + c) * T + t) * V + u] * m[(b * V + u) * V + v];
                    y[((b * C + c) * T + t) * V + v] = acc;
                }
}

template <typename S>
void node_gram(const S* p, S* g, int64_t B, int64_t C, int64_t V) {
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < V; ++i)
            for (int64_t j = 0; j < V; ++j) {
                S acc = S(0);
                for (int64_t c = 0; c < C; ++c)
                    acc += p[(b * C + c) * V + i] * p[(b * C + c) * V + j];
                g[(b * V + i) * V + j] = acc;
            }
}

}  // namespace uqtf::ref
