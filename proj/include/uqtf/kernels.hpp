#pragma once

// Dense kernels for the model's data-parallel inner loops. Every kernel is
// parallelized over independent output elements, so results are bitwise
// identical for any thread count. Serial reference implementations live in
// reference.hpp and are compared against these in tests and in the benchmark
// tool.

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace uqtf::kern {

// C[m x n] = A[m x k] * B[k x n]
template <typename S>
void matmul(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for
    for (int64_t i = 0; i < m; ++i) {
        S* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) crow[j] = S(0);
        for (int64_t p = 0; p < k; ++p) {
            const S aip = a[i * k + p];
            const S* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// C[m x k] = A[m x n] * B[k x n]^T
template <typename S>
void matmul_nt(const S* a, const S* b, S* c, int64_t m, int64_t n, int64_t k) {
#pragma omp parallel for
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < k; ++j) {
            S acc = S(0);
            const S* arow = a + i * n;
            const S* brow = b + j * n;
            for (int64_t p = 0; p < n; ++p) acc += arow[p] * brow[p];
            c[i * k + j] = acc;
        }
    }
}

// C[k x n] = A[m x k]^T * B[m x n]
template <typename S>
void matmul_tn(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for
    for (int64_t i = 0; i < k; ++i) {
        S* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) crow[j] = S(0);
        for (int64_t p = 0; p < m; ++p) {
            const S api = a[p * k + i];
            const S* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += api * brow[j];
        }
    }
}

// 1x1 convolution over channels: y[b,co,t,v] = sum_ci w[co,ci] x[b,ci,t,v] + bias[co]
template <typename S>
void channel_map(const S* x, const S* w, const S* bias, S* y, int64_t B, int64_t Ci, int64_t Co,
                 int64_t TV) {
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t co = 0; co < Co; ++co) {
            S* yrow = y + (b * Co + co) * TV;
            const S bv = bias ? bias[co] : S(0);
            for (int64_t i = 0; i < TV; ++i) yrow[i] = bv;
            const S* wrow = w + co * Ci;
            for (int64_t ci = 0; ci < Ci; ++ci) {
                const S wv = wrow[ci];
                const S* xrow = x + (b * Ci + ci) * TV;
                for (int64_t i = 0; i < TV; ++i) yrow[i] += wv * xrow[i];
            }
        }
    }
}

// dx[b,ci,t,v] = sum_co w[co,ci] dy[b,co,t,v]
template <typename S>
void channel_map_dx(const S* dy, const S* w, S* dx, int64_t B, int64_t Ci, int64_t Co, int64_t TV) {
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t ci = 0; ci < Ci; ++ci) {
            S* drow = dx + (b * Ci + ci) * TV;
            for (int64_t i = 0; i < TV; ++i) drow[i] = S(0);
            for (int64_t co = 0; co < Co; ++co) {
                const S wv = w[co * Ci + ci];
                const S* gy = dy + (b * Co + co) * TV;
                for (int64_t i = 0; i < TV; ++i) drow[i] += wv * gy[i];
            }
        }
    }
}

// dw[co,ci] = sum_{b,t,v} dy[b,co,t,v] x[b,ci,t,v];  db[co] = sum dy
template <typename S>
void channel_map_dw(const S* dy, const S* x, S* dw, S* db, int64_t B, int64_t Ci, int64_t Co,
                    int64_t TV) {
#pragma omp parallel for
    for (int64_t co = 0; co < Co; ++co) {
        for (int64_t ci = 0; ci < Ci; ++ci) {
            S acc = S(0);
            for (int64_t b = 0; b < B; ++b) {
                const S* gy = dy + (b * Co + co) * TV;
                const S* xr = x + (b * Ci + ci) * TV;
                for (int64_t i = 0; i < TV; ++i) acc += gy[i] * xr[i];
            }
            dw[co * Ci + ci] = acc;
        }
        if (db) {
            S acc = S(0);
            for (int64_t b = 0; b < B; ++b) {
                const S* gy = dy + (b * Co + co) * TV;
                for (int64_t i = 0; i < TV; ++i) acc += gy[i];
            }
            db[co] = acc;
        }
    }
}

// Convolution along the frame axis, applied per node.
// y[b,co,t',v] = sum_{ci,k} w[co,ci,k] x[b,ci,t'*stride+k-pad,v] + bias[co]
template <typename S>
void temporal_conv(const S* x, const S* w, const S* bias, S* y, int64_t B, int64_t Ci, int64_t Co,
                   int64_t T, int64_t V, int64_t K, int64_t stride, int64_t pad, int64_t To) {
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t co = 0; co < Co; ++co) {
            for (int64_t to = 0; to < To; ++to) {
                S* yrow = y + ((b * Co + co) * To + to) * V;
                const S bv = bias ? bias[co] : S(0);
                for (int64_t v = 0; v < V; ++v) yrow[v] = bv;
                for (int64_t ci = 0; ci < Ci; ++ci) {
                    const S* wrow = w + (co * Ci + ci) * K;
                    for (int64_t k = 0; k < K; ++k) {
                        const int64_t t = to * stride + k - pad;
                        if (t < 0 || t >= T) continue;
                        const S wv = wrow[k];
                        const S* xrow = x + ((b * Ci + ci) * T + t) * V;
                        for (int64_t v = 0; v < V; ++v) yrow[v] += wv * xrow[v];
                    }
                }
            }
        }
    }
}

template <typename S>
void temporal_conv_dx(const S* dy, const S* w, S* dx, int64_t B, int64_t Ci, int64_t Co, int64_t T,
                      int64_t V, int64_t K, int64_t stride, int64_t pad, int64_t To) {
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t ci = 0; ci < Ci; ++ci) {
            for (int64_t t = 0; t < T; ++t) {
                S* drow = dx + ((b * Ci + ci) * T + t) * V;
                for (int64_t v = 0; v < V; ++v) drow[v] = S(0);
                // all (to, k) with to*stride + k - pad == t
                for (int64_t k = 0; k < K; ++k) {
                    const int64_t num = t + pad - k;
                    if (num < 0 || num % stride) continue;
                    const int64_t to = num / stride;
                    if (to < 0 || to >= To) continue;
                    for (int64_t co = 0; co < Co; ++co) {
                        const S wv = w[(co * Ci + ci) * K + k];
                        const S* gy = dy + ((b * Co + co) * To + to) * V;
                        for (int64_t v = 0; v < V; ++v) drow[v] += wv * gy[v];
                    }
                }
            }
        }
    }
}

template <typename S>
void temporal_conv_dw(const S* dy, const S* x, S* dw, S* db, int64_t B, int64_t Ci, int64_t Co,
                      int64_t T, int64_t V, int64_t K, int64_t stride, int64_t pad, int64_t To) {
#pragma omp parallel for collapse(2)
    for (int64_t co = 0; co < Co; ++co) {
        for (int64_t ci = 0; ci < Ci; ++ci) {
            for (int64_t k = 0; k < K; ++k) {
                S acc = S(0);
                for (int64_t b = 0; b < B; ++b) {
                    for (int64_t to = 0; to < To; ++to) {
                        const int64_t t = to * stride + k - pad;
                        if (t < 0 || t >= T) continue;
                        const S* gy = dy + ((b * Co + co) * To + to) * V;
                        const S* xr = x + ((b * Ci + ci) * T + t) * V;
                        for (int64_t v = 0; v < V; ++v) acc += gy[v] * xr[v];
                    }
                }
                dw[(co * Ci + ci) * K + k] = acc;
            }
        }
    }
    if (db) {
#pragma omp parallel for
        for (int64_t co = 0; co < Co; ++co) {
            S acc = S(0);
            for (int64_t b = 0; b < B; ++b) {
                const S* gy = dy + (b * Co + co) * To * V;
                for (int64_t i = 0; i < To * V; ++i) acc += gy[i];
            }
            db[co] = acc;
        }
    }
}

// Per-channel (depthwise) temporal convolution. w is [C x K].
template <typename S>
void depthwise_temporal_conv(const S* x, const S* w, const S* bias, S* y, int64_t B, int64_t C,
                             int64_t T, int64_t V, int64_t K, int64_t stride, int64_t pad,
                             int64_t To) {
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            const S* wrow = w + c * K;
            for (int64_t to = 0; to < To; ++to) {
                S* yrow = y + ((b * C + c) * To + to) * V;
                const S bv = bias ? bias[c] : S(0);
                for (int64_t v = 0; v < V; ++v) yrow[v] = bv;
                for (int64_t k = 0; k < K; ++k) {
                    const int64_t t = to * stride + k - pad;
                    if (t < 0 || t >= T) continue;
                    const S wv = wrow[k];
                    const S* xrow = x + ((b * C + c) * T + t) * V;
                    for (int64_t v = 0; v < V; ++v) yrow[v] += wv * xrow[v];
                }
            }
        }
    }
}

template <typename S>
void depthwise_temporal_conv_dx(const S* dy, const S* w, S* dx, int64_t B, int64_t C, int64_t T,
                                int64_t V, int64_t K, int64_t stride, int64_t pad, int64_t To) {
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            const S* wrow = w + c * K;
            for (int64_t t = 0; t < T; ++t) {
                S* drow = dx + ((b * C + c) * T + t) * V;
                for (int64_t v = 0; v < V; ++v) drow[v] = S(0);
                for (int64_t k = 0; k < K; ++k) {
                    const int64_t num = t + pad - k;
                    if (num < 0 || num % stride) continue;
                    const int64_t to = num / stride;
                    if (to < 0 || to >= To) continue;
                    const S wv = wrow[k];
                    const S* gy = dy + ((b * C + c) * To + to) * V;
                    for (int64_t v = 0; v < V; ++v) drow[v] += wv * gy[v];
                }
            }
        }
    }
}

template <typename S>
void depthwise_temporal_conv_dw(const S* dy, const S* x, S* dw, S* db, int64_t B, int64_t C,
                                int64_t T, int64_t V, int64_t K, int64_t stride, int64_t pad,
                                int64_t To) {
#pragma omp parallel for
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t k = 0; k < K; ++k) {
            S acc = S(0);
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t to = 0; to < To; ++to) {
                    const int64_t t = to * stride + k - pad;
                    if (t < 0 || t >= T) continue;
                    const S* gy = dy + ((b * C + c) * To + to) * V;
                    const S* xr = x + ((b * C + c) * T + t) * V;
                    for (int64_t v = 0; v < V; ++v) acc += gy[v] * xr[v];
                }
            }
            dw[c * K + k] = acc;
        }
        if (db) {
            S acc = S(0);
            for (int64_t b = 0; b < B; ++b) {
                const S* gy = dy + (b * C + c) * To * V;
                for (int64_t i = 0; i < To * V; ++i) acc += gy[i];
            }
            db[c] = acc;
        }
    }
}

// Node-axis mixing with a per-record matrix: y[b,c,t,v] = sum_u x[b,c,t,u] m[b,u,v]
template <typename S>
void node_mix(const S* x, const S* m, S* y, int64_t B, int64_t C, int64_t T, int64_t V) {
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            const S* mb = m + b * V * V;
            for (int64_t t = 0; t < T; ++t) {
                const S* xrow = x + ((b * C + c) * T + t) * V;
                S* yrow = y + ((b * C + c) * T + t) * V;
                for (int64_t v = 0; v < V; ++v) {
                    S acc = S(0);
                    for (int64_t u = 0; u < V; ++u) acc += xrow[u] * mb[u * V + v];
                    yrow[v] = acc;
                }
            }
        }
    }
}

template <typename S>
void node_mix_dx(const S* dy, const S* m, S* dx, int64_t B, int64_t C, int64_t T, int64_t V) {
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            const S* mb = m + b * V * V;
            for (int64_t t = 0; t < T; ++t) {
                const S* gy = dy + ((b * C + c) * T + t) * V;
                S* drow = dx + ((b * C + c) * T + t) * V;
                for (int64_t u = 0; u < V; ++u) {
                    S acc = S(0);
                    const S* mrow = mb + u * V;
                    for (int64_t v = 0; v < V; ++v) acc += gy[v] * mrow[v];
                    drow[u] = acc;
                }
            }
        }
    }
}

// dm[b,u,v] = sum_{c,t} x[b,c,t,u] dy[b,c,t,v]
template <typename S>
void node_mix_dm(const S* dy, const S* x, S* dm, int64_t B, int64_t C, int64_t T, int64_t V) {
#pragma omp parallel for
    for (int64_t b = 0; b < B; ++b) {
        S* dmb = dm + b * V * V;
        for (int64_t i = 0; i < V * V; ++i) dmb[i] = S(0);
        for (int64_t c = 0; c < C; ++c) {
            for (int64_t t = 0; t < T; ++t) {
                const S* xrow = x + ((b * C + c) * T + t) * V;
                const S* gy = dy + ((b * C + c) * T + t) * V;
                for (int64_t u = 0; u < V; ++u) {
                    const S xv = xrow[u];
                    S* drow = dmb + u * V;
                    for (int64_t v = 0; v < V; ++v) drow[v] += xv * gy[v];
                }
            }
        }
    }
}

// Node gram matrix of pooled features: g[b,i,j] = sum_c p[b,c,i] p[b,c,j]
template <typename S>
void node_gram(const S* p, S* g, int64_t B, int64_t C, int64_t V) {
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t i = 0; i < V; ++i) {
            for (int64_t j = 0; j < V; ++j) {
                S acc = S(0);
                for (int64_t c = 0; c < C; ++c)
                    acc += p[(b * C + c) * V + i] * p[(b * C + c) * V + j];
                g[(b * V + i) * V + j] = acc;
            }
        }
    }
}

template <typename S>
void node_gram_dp(const S* dg, const S* p, S* dp, int64_t B, int64_t C, int64_t V) {
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            const S* gb = dg + b * V * V;
            for (int64_t i = 0; i < V; ++i) {
                S acc = S(0);
                for (int64_t j = 0; j < V; ++j)
                    acc += (gb[i * V + j] + gb[j * V + i]) * p[(b * C + c) * V + j];
                dp[(b * C + c) * V + i] = acc;
            }
        }
    }
}

// Depthwise convolution along the node axis, no padding. w is [C x Kv].
template <typename S>
void depthwise_node_conv(const S* x, const S* w, const S* bias, S* y, int64_t B, int64_t C,
                         int64_t T, int64_t V, int64_t Kv, int64_t stride, int64_t Vo) {
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            const S* wrow = w + c * Kv;
            const S bv = bias ? bias[c] : S(0);
            for (int64_t t = 0; t < T; ++t) {
                const S* xrow = x + ((b * C + c) * T + t) * V;
                S* yrow = y + ((b * C + c) * T + t) * Vo;
                for (int64_t vo = 0; vo < Vo; ++vo) {
                    S acc = bv;
                    for (int64_t k = 0; k < Kv; ++k) acc += wrow[k] * xrow[vo * stride + k];
                    yrow[vo] = acc;
                }
            }
        }
    }
}

template <typename S>
void depthwise_node_conv_dx(const S* dy, const S* w, S* dx, int64_t B, int64_t C, int64_t T,
                            int64_t V, int64_t Kv, int64_t stride, int64_t Vo) {
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            const S* wrow = w + c * Kv;
            for (int64_t t = 0; t < T; ++t) {
                const S* gy = dy + ((b * C + c) * T + t) * Vo;
                S* drow = dx + ((b * C + c) * T + t) * V;
                for (int64_t v = 0; v < V; ++v) drow[v] = S(0);
                for (int64_t vo = 0; vo < Vo; ++vo) {
                    const S g = gy[vo];
                    for (int64_t k = 0; k < Kv; ++k) drow[vo * stride + k] += wrow[k] * g;
                }
            }
        }
    }
}

template <typename S>
void depthwise_node_conv_dw(const S* dy, const S* x, S* dw, S* db, int64_t B, int64_t C, int64_t T,
                            int64_t V, int64_t Kv, int64_t stride, int64_t Vo) {
#pragma omp parallel for
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t k = 0; k < Kv; ++k) {
            S acc = S(0);
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t t = 0; t < T; ++t) {
                    const S* gy = dy + ((b * C + c) * T + t) * Vo;
                    const S* xr = x + ((b * C + c) * T + t) * V;
                    for (int64_t vo = 0; vo < Vo; ++vo) acc += gy[vo] * xr[vo * stride + k];
                }
            }
            dw[c * Kv + k] = acc;
        }
        if (db) {
            S acc = S(0);
            for (int64_t b = 0; b < B; ++b) {
                const S* gy = dy + (b * C + c) * T * Vo;
                for (int64_t i = 0; i < T * Vo; ++i) acc += gy[i];
            }
            db[c] = acc;
        }
    }
}

}  // namespace uqtf::kern
