#include "lgap/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "lgap/error.hpp"

namespace lgap::nn {

namespace kernels {

namespace {
using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const MatRM>;
using MMap = Eigen::Map<MatRM>;

template <class A, class B>
void assign_product(MMap& c, const A& a, const B& b, float beta) {
    if (beta == 0.0f) {
        c.noalias() = a * b;
    } else {
        if (beta != 1.0f) c *= beta;
        c.noalias() += a * b;
    }
}
}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
          float beta, float* c) {
    const auto M = static_cast<Eigen::Index>(m);
    const auto N = static_cast<Eigen::Index>(n);
    const auto K = static_cast<Eigen::Index>(k);
    MMap cm(c, M, N);
    if (!trans_a && !trans_b) {
        assign_product(cm, CMap(a, M, K), CMap(b, K, N), beta);
    } else if (!trans_a && trans_b) {
        assign_product(cm, CMap(a, M, K), CMap(b, N, K).transpose(), beta);
    } else if (trans_a && !trans_b) {
        assign_product(cm, CMap(a, K, M).transpose(), CMap(b, K, N), beta);
    } else {
        assign_product(cm, CMap(a, K, M).transpose(), CMap(b, N, K).transpose(), beta);
    }
}

Tensor film_forward(const Tensor& x, const Tensor& gb) {
    require_shape(x.rank() == 4, "film expects NCHW features, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    require_shape(gb.rank() == 2 && gb.dim(0) == n && gb.dim(1) == 2 * c,
                  "film modulation must be [N, 2C] = [" + std::to_string(n) + ", " + std::to_string(2 * c) +
                      "], got " + shape_str(gb.shape()));
    Tensor out(x.shape());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const float g = 1.0f + gb[i * 2 * c + ch];
            const float b = gb[i * 2 * c + c + ch];
            const float* src = x.data() + (i * c + ch) * plane;
            float* dst = out.data() + (i * c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] * g + b;
        }
    }
    return out;
}

}  // namespace kernels

using kernels::gemm;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require_shape(a.shape() == b.shape(),
                  std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

struct ConvGeometry {
    std::size_t n, c, h, w, o, k, stride, pad, ho, wo;
    std::size_t rows() const { return c * k * k; }
    std::size_t plane() const { return ho * wo; }
    std::size_t cols() const { return n * plane(); }
};

void im2col(const float* x, const ConvGeometry& g, float* cols) {
    const std::size_t P = g.plane(), NP = g.cols();
    for (std::size_t ch = 0; ch < g.c; ++ch) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                float* row = cols + ((ch * g.k + ky) * g.k + kx) * NP;
                for (std::size_t s = 0; s < g.n; ++s) {
                    const float* plane = x + (s * g.c + ch) * g.h * g.w;
                    float* dst = row + s * P;
                    for (std::size_t oy = 0; oy < g.ho; ++oy) {
                        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                        float* drow = dst + oy * g.wo;
                        if (iy < 0 || iy >= static_cast<long>(g.h)) {
                            std::fill(drow, drow + g.wo, 0.0f);
                            continue;
                        }
                        const float* srow = plane + static_cast<std::size_t>(iy) * g.w;
                        for (std::size_t ox = 0; ox < g.wo; ++ox) {
                            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                            drow[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0f : srow[ix];
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const float* cols, const ConvGeometry& g, float* dx) {
    const std::size_t P = g.plane(), NP = g.cols();
    for (std::size_t ch = 0; ch < g.c; ++ch) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const float* row = cols + ((ch * g.k + ky) * g.k + kx) * NP;
                for (std::size_t s = 0; s < g.n; ++s) {
                    float* plane = dx + (s * g.c + ch) * g.h * g.w;
                    const float* src = row + s * P;
                    for (std::size_t oy = 0; oy < g.ho; ++oy) {
                        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                        if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                        float* drow = plane + static_cast<std::size_t>(iy) * g.w;
                        const float* srow = src + oy * g.wo;
                        for (std::size_t ox = 0; ox < g.wo; ++ox) {
                            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                            if (ix >= 0 && ix < static_cast<long>(g.w)) drow[ix] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Variable add(const Variable& a, const Variable& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    out += b.value();
    return Variable::from_op(std::move(out), {a, b}, [](const Tensor& g, std::vector<Variable>& in) {
        in[0].accumulate_grad(g);
        in[1].accumulate_grad(g);
    });
}

Variable scale(const Variable& a, float factor) {
    Tensor out = a.value();
    for (auto& v : out.values()) v *= factor;
    return Variable::from_op(std::move(out), {a}, [factor](const Tensor& g, std::vector<Variable>& in) {
        if (!in[0].requires_grad()) return;
        Tensor& dx = in[0].grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += factor * g[i];
    });
}

Variable linear(const Variable& x, const Variable& w, const Variable& b) {
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    require_shape(X.rank() == 2 && W.rank() == 2 && X.dim(1) == W.dim(1),
                  "linear: input " + shape_str(X.shape()) + " incompatible with weight " + shape_str(W.shape()));
    const std::size_t n = X.dim(0), in = X.dim(1), out_dim = W.dim(0);
    Tensor out({n, out_dim});
    gemm(false, true, n, out_dim, in, X.data(), W.data(), 0.0f, out.data());
    if (b.defined()) {
        require_shape(b.value().numel() == out_dim, "linear: bias size mismatch");
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < out_dim; ++j) out[i * out_dim + j] += b.value()[j];
    }
    std::vector<Variable> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    return Variable::from_op(std::move(out), std::move(inputs),
                             [n, in, out_dim](const Tensor& g, std::vector<Variable>& vs) {
                                 const Tensor& X = vs[0].value();
                                 const Tensor& W = vs[1].value();
                                 if (vs[0].requires_grad())
                                     gemm(false, false, n, in, out_dim, g.data(), W.data(), 1.0f,
                                          vs[0].grad_buffer().data());
                                 if (vs[1].requires_grad())
                                     gemm(true, false, out_dim, in, n, g.data(), X.data(), 1.0f,
                                          vs[1].grad_buffer().data());
                                 if (vs.size() > 2 && vs[2].requires_grad()) {
                                     Tensor& db = vs[2].grad_buffer();
                                     for (std::size_t i = 0; i < n; ++i)
                                         for (std::size_t j = 0; j < out_dim; ++j) db[j] += g[i * out_dim + j];
                                 }
                             });
}

Variable conv2d(const Variable& x, const Variable& w, const Variable& b, std::size_t stride, std::size_t pad) {
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    require_shape(X.rank() == 4 && W.rank() == 4 && W.dim(1) == X.dim(1) && W.dim(2) == W.dim(3),
                  "conv2d: input " + shape_str(X.shape()) + " incompatible with weight " + shape_str(W.shape()));
    require(stride >= 1, "conv2d: stride must be positive");
    ConvGeometry g{X.dim(0), X.dim(1), X.dim(2), X.dim(3), W.dim(0), W.dim(2), stride, pad, 0, 0};
    require_shape(g.h + 2 * pad >= g.k && g.w + 2 * pad >= g.k, "conv2d: kernel larger than padded input");
    g.ho = (g.h + 2 * pad - g.k) / stride + 1;
    g.wo = (g.w + 2 * pad - g.k) / stride + 1;

    Tensor cols({g.rows(), g.cols()});
    im2col(X.data(), g, cols.data());
    Tensor outm({g.o, g.cols()});
    gemm(false, false, g.o, g.cols(), g.rows(), W.data(), cols.data(), 0.0f, outm.data());

    Tensor out({g.n, g.o, g.ho, g.wo});
    const std::size_t P = g.plane();
    for (std::size_t s = 0; s < g.n; ++s) {
        for (std::size_t o = 0; o < g.o; ++o) {
            const float bias = b.defined() ? b.value()[o] : 0.0f;
            const float* src = outm.data() + o * g.cols() + s * P;
            float* dst = out.data() + (s * g.o + o) * P;
            for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + bias;
        }
    }
    if (b.defined()) require_shape(b.value().numel() == g.o, "conv2d: bias size mismatch");

    std::vector<Variable> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    if (!GradMode::enabled()) return Variable(std::move(out));
    return Variable::from_op(
        std::move(out), std::move(inputs), [g, cols = std::move(cols)](const Tensor& grad, std::vector<Variable>& vs) {
            const std::size_t P = g.plane(), NP = g.cols();
            Tensor doutm({g.o, NP});
            for (std::size_t s = 0; s < g.n; ++s)
                for (std::size_t o = 0; o < g.o; ++o)
                    std::copy_n(grad.data() + (s * g.o + o) * P, P, doutm.data() + o * NP + s * P);
            if (vs[1].requires_grad())
                gemm(false, true, g.o, g.rows(), NP, doutm.data(), cols.data(), 1.0f, vs[1].grad_buffer().data());
            if (vs.size() > 2 && vs[2].requires_grad()) {
                Tensor& db = vs[2].grad_buffer();
                for (std::size_t o = 0; o < g.o; ++o) {
                    double acc = 0.0;
                    const float* row = doutm.data() + o * NP;
                    for (std::size_t i = 0; i < NP; ++i) acc += row[i];
                    db[o] += static_cast<float>(acc);
                }
            }
            if (vs[0].requires_grad()) {
                Tensor dcols({g.rows(), NP});
                gemm(true, false, g.rows(), NP, g.o, vs[1].value().data(), doutm.data(), 0.0f, dcols.data());
                col2im_add(dcols.data(), g, vs[0].grad_buffer().data());
            }
        });
}

Variable depthwise_conv2d(const Variable& x, const Variable& w, const Variable& b, std::size_t pad) {
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    require_shape(X.rank() == 4 && W.rank() == 3 && W.dim(0) == X.dim(1) && W.dim(1) == W.dim(2),
                  "depthwise_conv2d: input " + shape_str(X.shape()) + " incompatible with weight " +
                      shape_str(W.shape()));
    const std::size_t n = X.dim(0), c = X.dim(1), h = X.dim(2), wd = X.dim(3), k = W.dim(1);
    require_shape(2 * pad + 1 == k, "depthwise_conv2d: only same-size output is supported");
    const long P = static_cast<long>(pad);
    const long H = static_cast<long>(h), Wd = static_cast<long>(wd);
    Tensor out(X.shape());
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const float* in = X.data() + (s * c + ch) * h * wd;
            float* dst = out.data() + (s * c + ch) * h * wd;
            std::fill(dst, dst + h * wd, b.defined() ? b.value()[ch] : 0.0f);
            for (long ky = 0; ky < static_cast<long>(k); ++ky) {
                const long dy = ky - P;
                const long y0 = std::max(0L, -dy), y1 = std::min(H, H - dy);
                for (long kx = 0; kx < static_cast<long>(k); ++kx) {
                    const long dx = kx - P;
                    const long x0 = std::max(0L, -dx), x1 = std::min(Wd, Wd - dx);
                    const float wv = W[(ch * k + static_cast<std::size_t>(ky)) * k + static_cast<std::size_t>(kx)];
                    for (long y = y0; y < y1; ++y) {
                        float* drow = dst + y * Wd;
                        const float* srow = in + (y + dy) * Wd + dx;
                        for (long xx = x0; xx < x1; ++xx) drow[xx] += wv * srow[xx];
                    }
                }
            }
        }
    }
    std::vector<Variable> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    return Variable::from_op(std::move(out), std::move(inputs), [=](const Tensor& g, std::vector<Variable>& vs) {
        const Tensor& X = vs[0].value();
        const Tensor& W = vs[1].value();
        float* dX = vs[0].requires_grad() ? vs[0].grad_buffer().data() : nullptr;
        float* dW = vs[1].requires_grad() ? vs[1].grad_buffer().data() : nullptr;
        float* dB = (vs.size() > 2 && vs[2].requires_grad()) ? vs[2].grad_buffer().data() : nullptr;
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const float* in = X.data() + (s * c + ch) * h * wd;
                const float* go = g.data() + (s * c + ch) * h * wd;
                float* gi = dX ? dX + (s * c + ch) * h * wd : nullptr;
                if (dB) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < h * wd; ++i) acc += go[i];
                    dB[ch] += static_cast<float>(acc);
                }
                for (long ky = 0; ky < static_cast<long>(k); ++ky) {
                    const long dy = ky - P;
                    const long y0 = std::max(0L, -dy), y1 = std::min(H, H - dy);
                    for (long kx = 0; kx < static_cast<long>(k); ++kx) {
                        const long dx = kx - P;
                        const long x0 = std::max(0L, -dx), x1 = std::min(Wd, Wd - dx);
                        const std::size_t widx = (ch * k + static_cast<std::size_t>(ky)) * k + static_cast<std::size_t>(kx);
                        const float wv = W[widx];
                        float acc = 0.0f;
                        for (long y = y0; y < y1; ++y) {
                            const float* grow = go + y * Wd;
                            const float* srow = in + (y + dy) * Wd + dx;
                            float* irow = gi ? gi + (y + dy) * Wd + dx : nullptr;
                            for (long xx = x0; xx < x1; ++xx) {
                                acc += grow[xx] * srow[xx];
                                if (irow) irow[xx] += wv * grow[xx];
                            }
                        }
                        if (dW) dW[widx] += acc;
                    }
                }
            }
        }
    });
}

Variable layer_norm_channels(const Variable& x, const Variable& gamma, const Variable& beta, float eps) {
    const Tensor& X = x.value();
    require_shape(X.rank() == 4, "layer_norm_channels expects NCHW, got " + shape_str(X.shape()));
    const std::size_t n = X.dim(0), c = X.dim(1), P = X.dim(2) * X.dim(3);
    require_shape(gamma.value().numel() == c && beta.value().numel() == c, "layer_norm_channels: affine size mismatch");
    Tensor xhat(X.shape());
    Tensor rstd({n, P});
    Tensor out(X.shape());
    std::vector<float> mu(P), var(P);
    for (std::size_t s = 0; s < n; ++s) {
        const float* in = X.data() + s * c * P;
        std::fill(mu.begin(), mu.end(), 0.0f);
        std::fill(var.begin(), var.end(), 0.0f);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < P; ++p) mu[p] += in[ch * P + p];
        for (std::size_t p = 0; p < P; ++p) mu[p] /= static_cast<float>(c);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < P; ++p) {
                const float d = in[ch * P + p] - mu[p];
                var[p] += d * d;
            }
        float* rs = rstd.data() + s * P;
        for (std::size_t p = 0; p < P; ++p) rs[p] = 1.0f / std::sqrt(var[p] / static_cast<float>(c) + eps);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const float gm = gamma.value()[ch], bt = beta.value()[ch];
            for (std::size_t p = 0; p < P; ++p) {
                const std::size_t i = s * c * P + ch * P + p;
                xhat[i] = (in[ch * P + p] - mu[p]) * rs[p];
                out[i] = xhat[i] * gm + bt;
            }
        }
    }
    if (!GradMode::enabled()) return Variable(std::move(out));
    return Variable::from_op(
        std::move(out), {x, gamma, beta},
        [n, c, P, xhat = std::move(xhat), rstd = std::move(rstd)](const Tensor& g, std::vector<Variable>& vs) {
            const Tensor& G = vs[1].value();
            float* dG = vs[1].requires_grad() ? vs[1].grad_buffer().data() : nullptr;
            float* dB = vs[2].requires_grad() ? vs[2].grad_buffer().data() : nullptr;
            float* dX = vs[0].requires_grad() ? vs[0].grad_buffer().data() : nullptr;
            std::vector<float> s1(P), s2(P);
            for (std::size_t s = 0; s < n; ++s) {
                const std::size_t base = s * c * P;
                std::fill(s1.begin(), s1.end(), 0.0f);
                std::fill(s2.begin(), s2.end(), 0.0f);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const float gm = G[ch];
                    float ag = 0.0f, ab = 0.0f;
                    for (std::size_t p = 0; p < P; ++p) {
                        const float gy = g[base + ch * P + p];
                        const float xh = xhat[base + ch * P + p];
                        ag += gy * xh;
                        ab += gy;
                        const float gx = gy * gm;
                        s1[p] += gx;
                        s2[p] += gx * xh;
                    }
                    if (dG) dG[ch] += ag;
                    if (dB) dB[ch] += ab;
                }
                if (!dX) continue;
                const float inv_c = 1.0f / static_cast<float>(c);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const float gm = G[ch];
                    for (std::size_t p = 0; p < P; ++p) {
                        const std::size_t i = base + ch * P + p;
                        dX[i] += rstd[s * P + p] * (g[i] * gm - s1[p] * inv_c - xhat[i] * s2[p] * inv_c);
                    }
                }
            }
        });
}

Variable gelu(const Variable& x) {
    Tensor out(x.shape());
    const Tensor& X = x.value();
    constexpr float kInvSqrt2 = 0.70710678118654752f;
    for (std::size_t i = 0; i < X.numel(); ++i) out[i] = 0.5f * X[i] * (1.0f + std::erf(X[i] * kInvSqrt2));
    return Variable::from_op(std::move(out), {x}, [](const Tensor& g, std::vector<Variable>& vs) {
        const Tensor& X = vs[0].value();
        Tensor& dx = vs[0].grad_buffer();
        constexpr float kInvSqrt2 = 0.70710678118654752f;
        const float kInvSqrt2Pi = static_cast<float>(1.0 / std::sqrt(2.0 * std::numbers::pi));
        for (std::size_t i = 0; i < X.numel(); ++i) {
            const float v = X[i];
            const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
            const float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
            dx[i] += g[i] * (cdf + v * pdf);
        }
    });
}

Variable silu(const Variable& x) {
    Tensor out(x.shape());
    const Tensor& X = x.value();
    for (std::size_t i = 0; i < X.numel(); ++i) out[i] = X[i] / (1.0f + std::exp(-X[i]));
    return Variable::from_op(std::move(out), {x}, [](const Tensor& g, std::vector<Variable>& vs) {
        const Tensor& X = vs[0].value();
        Tensor& dx = vs[0].grad_buffer();
        for (std::size_t i = 0; i < X.numel(); ++i) {
            const float s = 1.0f / (1.0f + std::exp(-X[i]));
            dx[i] += g[i] * s * (1.0f + X[i] * (1.0f - s));
        }
    });
}

Variable global_avg_pool(const Variable& x) {
    const Tensor& X = x.value();
    require_shape(X.rank() == 4, "global_avg_pool expects NCHW");
    const std::size_t n = X.dim(0), c = X.dim(1), P = X.dim(2) * X.dim(3);
    Tensor out({n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
        double acc = 0.0;
        for (std::size_t p = 0; p < P; ++p) acc += X[i * P + p];
        out[i] = static_cast<float>(acc / static_cast<double>(P));
    }
    return Variable::from_op(std::move(out), {x}, [n, c, P](const Tensor& g, std::vector<Variable>& vs) {
        Tensor& dx = vs[0].grad_buffer();
        const float inv = 1.0f / static_cast<float>(P);
        for (std::size_t i = 0; i < n * c; ++i)
            for (std::size_t p = 0; p < P; ++p) dx[i * P + p] += g[i] * inv;
    });
}

Variable upsample_nearest2(const Variable& x) {
    const Tensor& X = x.value();
    require_shape(X.rank() == 4, "upsample_nearest2 expects NCHW");
    const std::size_t nc = X.dim(0) * X.dim(1), h = X.dim(2), w = X.dim(3);
    Tensor out({X.dim(0), X.dim(1), 2 * h, 2 * w});
    for (std::size_t i = 0; i < nc; ++i)
        for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t xx = 0; xx < 2 * w; ++xx)
                out[(i * 2 * h + y) * 2 * w + xx] = X[(i * h + y / 2) * w + xx / 2];
    return Variable::from_op(std::move(out), {x}, [nc, h, w](const Tensor& g, std::vector<Variable>& vs) {
        Tensor& dx = vs[0].grad_buffer();
        for (std::size_t i = 0; i < nc; ++i)
            for (std::size_t y = 0; y < 2 * h; ++y)
                for (std::size_t xx = 0; xx < 2 * w; ++xx)
                    dx[(i * h + y / 2) * w + xx / 2] += g[(i * 2 * h + y) * 2 * w + xx];
    });
}

Variable film(const Variable& x, const Variable& gb) {
    Tensor out = kernels::film_forward(x.value(), gb.value());
    return Variable::from_op(std::move(out), {x, gb}, [](const Tensor& g, std::vector<Variable>& vs) {
        const Tensor& X = vs[0].value();
        const Tensor& GB = vs[1].value();
        const std::size_t n = X.dim(0), c = X.dim(1), P = X.dim(2) * X.dim(3);
        float* dX = vs[0].requires_grad() ? vs[0].grad_buffer().data() : nullptr;
        float* dGB = vs[1].requires_grad() ? vs[1].grad_buffer().data() : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const float scale = 1.0f + GB[i * 2 * c + ch];
                const float* xp = X.data() + (i * c + ch) * P;
                const float* gp = g.data() + (i * c + ch) * P;
                double dgam = 0.0, dbet = 0.0;
                for (std::size_t p = 0; p < P; ++p) {
                    dgam += static_cast<double>(gp[p]) * xp[p];
                    dbet += gp[p];
                    if (dX) dX[(i * c + ch) * P + p] += gp[p] * scale;
                }
                if (dGB) {
                    dGB[i * 2 * c + ch] += static_cast<float>(dgam);
                    dGB[i * 2 * c + c + ch] += static_cast<float>(dbet);
                }
            }
        }
    });
}

Variable mse_loss(const Variable& x, const Tensor& target) {
    require_same_shape(x.value(), target, "mse_loss");
    const Tensor& X = x.value();
    double acc = 0.0;
    for (std::size_t i = 0; i < X.numel(); ++i) {
        const double d = static_cast<double>(X[i]) - target[i];
        acc += d * d;
    }
    const double count = static_cast<double>(X.numel());
    Tensor out({1}, {static_cast<float>(acc / count)});
    return Variable::from_op(std::move(out), {x}, [target, count](const Tensor& g, std::vector<Variable>& vs) {
        const Tensor& X = vs[0].value();
        Tensor& dx = vs[0].grad_buffer();
        const float f = static_cast<float>(2.0 / count) * g[0];
        for (std::size_t i = 0; i < X.numel(); ++i) dx[i] += f * (X[i] - target[i]);
    });
}

Variable mean(const Variable& x) {
    const Tensor& X = x.value();
    double acc = 0.0;
    for (float v : X.values()) acc += v;
    const double count = static_cast<double>(X.numel());
    Tensor out({1}, {static_cast<float>(acc / count)});
    return Variable::from_op(std::move(out), {x}, [count](const Tensor& g, std::vector<Variable>& vs) {
        Tensor& dx = vs[0].grad_buffer();
        const float f = g[0] / static_cast<float>(count);
        for (auto& v : dx.values()) v += f;
    });
}

Variable normalize_rows(const Variable& x, float eps) {
    const Tensor& X = x.value();
    require_shape(X.rank() == 2, "normalize_rows expects a 2-D tensor");
    const std::size_t n = X.dim(0), d = X.dim(1);
    Tensor out(X.shape());
    std::vector<float> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += static_cast<double>(X[i * d + j]) * X[i * d + j];
        norms[i] = std::max(static_cast<float>(std::sqrt(acc)), eps);
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = X[i * d + j] / norms[i];
    }
    Tensor y = out;
    return Variable::from_op(std::move(out), {x},
                             [n, d, norms = std::move(norms), y = std::move(y)](const Tensor& g, std::vector<Variable>& vs) {
                                 Tensor& dx = vs[0].grad_buffer();
                                 for (std::size_t i = 0; i < n; ++i) {
                                     double dot = 0.0;
                                     for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(y[i * d + j]) * g[i * d + j];
                                     for (std::size_t j = 0; j < d; ++j)
                                         dx[i * d + j] +=
                                             (g[i * d + j] - static_cast<float>(dot) * y[i * d + j]) / norms[i];
                                 }
                             });
}

}  // namespace lgap::nn
