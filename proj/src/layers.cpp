#include "ckd/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

namespace ckd {

namespace {

void require_rank(const Tensor& t, int rank, const char* what) {
    if (t.rank() != rank) {
        throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) +
                                    " tensor, got shape " + t.shape_str());
    }
}

// Convolution geometry shared by conv2d, transposed_conv2d and their
// backward passes. All four data movements reduce to an im2col/col2im pair
// plus two small matrix products, which keeps the inner loops long enough to
// vectorize even on 6x6 feature maps and makes transposed_conv2d the exact
// adjoint of conv2d.
struct ConvGeom {
    int C_in, H, W;    // conv input
    int kh, kw;
    int stride, pad;
    int OH, OW;        // conv output
    int ck() const { return C_in * kh * kw; }
    int n() const { return OH * OW; }
};

// Valid output-column range [ox0, ox1] such that ix = ox*stride - pad + kx
// stays inside [0, W).
inline void ox_range(int W, int OW, int stride, int pad, int kx, int& ox0, int& ox1) {
    int lo = pad - kx;
    ox0 = lo <= 0 ? 0 : (lo + stride - 1) / stride;
    int hi = W - 1 + pad - kx;
    ox1 = hi < 0 ? -1 : std::min(OW - 1, hi / stride);
}

// B[(ci*kh+ky)*kw+kx][oy*OW+ox] = x[ci][oy*s-p+ky][ox*s-p+kx], zero outside.
void im2col(const ConvGeom& g, const double* x, double* B) {
    std::memset(B, 0, sizeof(double) * static_cast<std::size_t>(g.ck()) * g.n());
    for (int ci = 0; ci < g.C_in; ++ci) {
        const double* x_c = x + static_cast<std::size_t>(ci) * g.H * g.W;
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                double* Brow = B + (static_cast<std::size_t>(ci) * g.kh * g.kw + ky * g.kw + kx) * g.n();
                int ox0, ox1;
                ox_range(g.W, g.OW, g.stride, g.pad, kx, ox0, ox1);
                if (ox1 < ox0) continue;
                for (int oy = 0; oy < g.OH; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.H) continue;
                    const double* xrow = x_c + static_cast<std::size_t>(iy) * g.W - g.pad + kx;
                    double* brow = Brow + static_cast<std::size_t>(oy) * g.OW;
                    if (g.stride == 1) {
                        std::memcpy(brow + ox0, xrow + ox0,
                                    sizeof(double) * static_cast<std::size_t>(ox1 - ox0 + 1));
                    } else {
                        for (int ox = ox0; ox <= ox1; ++ox) brow[ox] = xrow[ox * g.stride];
                    }
                }
            }
        }
    }
}

// x[ci][oy*s-p+ky][ox*s-p+kx] += B[...][oy*OW+ox]; adjoint of im2col.
void col2im_accum(const ConvGeom& g, const double* B, double* x) {
    for (int ci = 0; ci < g.C_in; ++ci) {
        double* x_c = x + static_cast<std::size_t>(ci) * g.H * g.W;
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                const double* Brow =
                    B + (static_cast<std::size_t>(ci) * g.kh * g.kw + ky * g.kw + kx) * g.n();
                int ox0, ox1;
                ox_range(g.W, g.OW, g.stride, g.pad, kx, ox0, ox1);
                if (ox1 < ox0) continue;
                for (int oy = 0; oy < g.OH; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.H) continue;
                    double* xrow = x_c + static_cast<std::size_t>(iy) * g.W - g.pad + kx;
                    const double* brow = Brow + static_cast<std::size_t>(oy) * g.OW;
                    if (g.stride == 1) {
                        for (int ox = ox0; ox <= ox1; ++ox) xrow[ox] += brow[ox];
                    } else {
                        for (int ox = ox0; ox <= ox1; ++ox) xrow[ox * g.stride] += brow[ox];
                    }
                }
            }
        }
    }
}

// C[M][N] += A[M][K] * B[K][N], rank-1-update order (inner loop over N).
void gemm_accum(int M, int K, int N, const double* A, const double* B, double* C) {
    for (int m = 0; m < M; ++m) {
        double* crow = C + static_cast<std::size_t>(m) * N;
        const double* arow = A + static_cast<std::size_t>(m) * K;
        for (int k = 0; k < K; ++k) {
            const double a = arow[k];
            if (a == 0.0) continue;
            const double* brow = B + static_cast<std::size_t>(k) * N;
            for (int n = 0; n < N; ++n) crow[n] += a * brow[n];
        }
    }
}

// C[M][K] += A[M][N] * B[K][N]^T (dot products over N).
void gemm_abt_accum(int M, int K, int N, const double* A, const double* B, double* C) {
    for (int m = 0; m < M; ++m) {
        const double* arow = A + static_cast<std::size_t>(m) * N;
        double* crow = C + static_cast<std::size_t>(m) * K;
        for (int k = 0; k < K; ++k) {
            const double* brow = B + static_cast<std::size_t>(k) * N;
            double acc = 0.0;
            for (int n = 0; n < N; ++n) acc += arow[n] * brow[n];
            crow[k] += acc;
        }
    }
}

// C[K][N] += A[M][K]^T * B[M][N].
void gemm_atb_accum(int M, int K, int N, const double* A, const double* B, double* C) {
    for (int m = 0; m < M; ++m) {
        const double* arow = A + static_cast<std::size_t>(m) * K;
        const double* brow = B + static_cast<std::size_t>(m) * N;
        for (int k = 0; k < K; ++k) {
            const double a = arow[k];
            if (a == 0.0) continue;
            double* crow = C + static_cast<std::size_t>(k) * N;
            for (int n = 0; n < N; ++n) crow[n] += a * brow[n];
        }
    }
}

ConvGeom conv_geom(const Tensor& input, const Tensor& kernel, int stride, int pad,
                   const char* what) {
    require_rank(input, 3, what);
    require_rank(kernel, 4, what);
    if (stride < 1) throw std::invalid_argument(std::string(what) + ": stride must be >= 1");
    if (pad < 0) throw std::invalid_argument(std::string(what) + ": pad must be >= 0");
    ConvGeom g;
    g.C_in = input.dim(0);
    g.H = input.dim(1);
    g.W = input.dim(2);
    g.kh = kernel.dim(2);
    g.kw = kernel.dim(3);
    g.stride = stride;
    g.pad = pad;
    if (g.kh > g.H + 2 * pad || g.kw > g.W + 2 * pad) {
        throw std::invalid_argument(std::string(what) + ": kernel " + kernel.shape_str() +
                                    " larger than padded input " + input.shape_str());
    }
    g.OH = (g.H + 2 * pad - g.kh) / stride + 1;
    g.OW = (g.W + 2 * pad - g.kw) / stride + 1;
    return g;
}

} // namespace

// -- convolution ----------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
    ConvGeom g = conv_geom(input, kernel, stride, pad, "conv2d");
    const int C_out = kernel.dim(0);
    if (kernel.dim(1) != g.C_in) {
        throw std::invalid_argument("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                                    " input channels, input has " + std::to_string(g.C_in));
    }
    std::vector<double> B(static_cast<std::size_t>(g.ck()) * g.n());
    im2col(g, input.data(), B.data());
    Tensor out({C_out, g.OH, g.OW});
    gemm_accum(C_out, g.ck(), g.n(), kernel.data(), B.data(), out.data());
    return out;
}

void conv2d_backward(const Tensor& input, const Tensor& kernel, int stride, int pad,
                     const Tensor& d_output, Tensor* d_input, Tensor* d_kernel) {
    ConvGeom g = conv_geom(input, kernel, stride, pad, "conv2d_backward");
    const int C_out = kernel.dim(0);
    if (d_output.dim(0) != C_out || d_output.dim(1) != g.OH || d_output.dim(2) != g.OW) {
        throw std::invalid_argument("conv2d_backward: d_output shape " + d_output.shape_str() +
                                    " does not match conv output");
    }
    if (d_kernel) {
        std::vector<double> B(static_cast<std::size_t>(g.ck()) * g.n());
        im2col(g, input.data(), B.data());
        gemm_abt_accum(C_out, g.ck(), g.n(), d_output.data(), B.data(), d_kernel->data());
    }
    if (d_input) {
        std::vector<double> dB(static_cast<std::size_t>(g.ck()) * g.n(), 0.0);
        gemm_atb_accum(C_out, g.ck(), g.n(), kernel.data(), d_output.data(), dB.data());
        col2im_accum(g, dB.data(), d_input->data());
    }
}

// -- transposed convolution ------------------------------------------------

// Transposed convolution is the adjoint of the convolution that maps the
// (C_b,OH,OW) output grid back to the (C_a,H,W) input grid with the same
// kernel memory viewed as (C_a, C_b*kh*kw).

Tensor transposed_conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad,
                         int out_h, int out_w) {
    require_rank(input, 3, "transposed_conv2d input");
    require_rank(kernel, 4, "transposed_conv2d kernel");
    if (stride < 1) throw std::invalid_argument("transposed_conv2d: stride must be >= 1");
    if (pad < 0) throw std::invalid_argument("transposed_conv2d: pad must be >= 0");
    const int C_a = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int C_b = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(0) != C_a) {
        throw std::invalid_argument("transposed_conv2d: kernel expects " +
                                    std::to_string(kernel.dim(0)) + " input channels, input has " +
                                    std::to_string(C_a));
    }
    const int OH = out_h > 0 ? out_h : (H - 1) * stride - 2 * pad + kh;
    const int OW = out_w > 0 ? out_w : (W - 1) * stride - 2 * pad + kw;
    if (OH <= 0 || OW <= 0) {
        throw std::invalid_argument("transposed_conv2d: non-positive output size for input " +
                                    input.shape_str() + ", kernel " + kernel.shape_str());
    }

    ConvGeom g;
    g.C_in = C_b;
    g.H = OH;
    g.W = OW;
    g.kh = kh;
    g.kw = kw;
    g.stride = stride;
    g.pad = pad;
    g.OH = H;
    g.OW = W;

    Tensor out({C_b, OH, OW});
    std::vector<double> dB(static_cast<std::size_t>(g.ck()) * g.n(), 0.0);
    gemm_atb_accum(C_a, g.ck(), g.n(), kernel.data(), input.data(), dB.data());
    col2im_accum(g, dB.data(), out.data());
    return out;
}

void transposed_conv2d_backward(const Tensor& input, const Tensor& kernel, int stride, int pad,
                                const Tensor& d_output, Tensor* d_input, Tensor* d_kernel) {
    const int C_a = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int C_b = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    const int OH = d_output.dim(1), OW = d_output.dim(2);
    if (d_output.dim(0) != C_b) {
        throw std::invalid_argument("transposed_conv2d_backward: d_output channel mismatch");
    }

    ConvGeom g;
    g.C_in = C_b;
    g.H = OH;
    g.W = OW;
    g.kh = kh;
    g.kw = kw;
    g.stride = stride;
    g.pad = pad;
    g.OH = H;
    g.OW = W;

    std::vector<double> B(static_cast<std::size_t>(g.ck()) * g.n());
    im2col(g, d_output.data(), B.data());
    if (d_input) {
        gemm_accum(C_a, g.ck(), g.n(), kernel.data(), B.data(), d_input->data());
    }
    if (d_kernel) {
        gemm_abt_accum(C_a, g.ck(), g.n(), input.data(), B.data(), d_kernel->data());
    }
}

// -- batch normalization -----------------------------------------------------

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, bool train, bool update_running,
                   double eps, double momentum, BatchNormCache* cache) {
    require_rank(input, 3, "batchnorm2d input");
    if (eps <= 0.0) throw std::invalid_argument("batchnorm2d: eps must be > 0");
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    if (gamma.size() != C || beta.size() != C || running_mean.size() != C || running_var.size() != C) {
        throw std::invalid_argument("batchnorm2d: per-channel parameter size mismatch for input " +
                                    input.shape_str());
    }
    const int n = H * W;
    Tensor out({C, H, W});
    if (cache) {
        cache->train = train;
        cache->x_hat = Tensor({C, H, W});
        cache->inv_std.assign(static_cast<std::size_t>(C), 0.0);
    }

    for (int c = 0; c < C; ++c) {
        const double* x = input.data() + static_cast<std::size_t>(c) * n;
        double* y = out.data() + static_cast<std::size_t>(c) * n;
        double mean, var;
        if (train) {
            mean = 0.0;
            for (int i = 0; i < n; ++i) mean += x[i];
            mean /= n;
            var = 0.0;
            for (int i = 0; i < n; ++i) {
                const double d = x[i] - mean;
                var += d * d;
            }
            var /= n;
            if (update_running) {
                running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean;
                running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var;
            }
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const double inv_std = 1.0 / std::sqrt(var + eps);
        const double g = gamma[c], b = beta[c];
        if (cache) {
            double* xh = cache->x_hat.data() + static_cast<std::size_t>(c) * n;
            cache->inv_std[static_cast<std::size_t>(c)] = inv_std;
            for (int i = 0; i < n; ++i) {
                xh[i] = (x[i] - mean) * inv_std;
                y[i] = g * xh[i] + b;
            }
        } else {
            for (int i = 0; i < n; ++i) y[i] = g * (x[i] - mean) * inv_std + b;
        }
    }
    return out;
}

void batchnorm2d_backward(const Tensor& gamma, const Tensor& running_var, double eps,
                          const BatchNormCache& cache, const Tensor& d_output,
                          Tensor* d_input, Tensor* d_gamma, Tensor* d_beta) {
    (void)running_var;
    (void)eps;
    if (cache.x_hat.empty()) {
        throw std::logic_error("batchnorm2d_backward: forward pass was not cached");
    }
    const int C = d_output.dim(0), H = d_output.dim(1), W = d_output.dim(2);
    const int n = H * W;

    for (int c = 0; c < C; ++c) {
        const double* dy = d_output.data() + static_cast<std::size_t>(c) * n;
        const double* xh = cache.x_hat.data() + static_cast<std::size_t>(c) * n;
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (int i = 0; i < n; ++i) {
            sum_dy += dy[i];
            sum_dy_xh += dy[i] * xh[i];
        }
        if (d_gamma) (*d_gamma)[c] += sum_dy_xh;
        if (d_beta) (*d_beta)[c] += sum_dy;
        if (d_input) {
            const double scale = gamma[c] * cache.inv_std[static_cast<std::size_t>(c)];
            double* dx = d_input->data() + static_cast<std::size_t>(c) * n;
            if (cache.train) {
                // Batch statistics depend on x: subtract the mean terms.
                const double mean_dy = sum_dy / n;
                const double mean_dy_xh = sum_dy_xh / n;
                for (int i = 0; i < n; ++i) {
                    dx[i] += scale * (dy[i] - mean_dy - xh[i] * mean_dy_xh);
                }
            } else {
                // Running statistics are constants: the map is affine in x.
                for (int i = 0; i < n; ++i) dx[i] += scale * dy[i];
            }
        }
    }
}

// -- pointwise / shape ops ----------------------------------------------------

Tensor relu(const Tensor& input) {
    Tensor out = input;
    double* x = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
    return out;
}

void relu_backward(const Tensor& input, const Tensor& d_output, Tensor* d_input) {
    const double* x = input.data();
    const double* dy = d_output.data();
    double* dx = d_input->data();
    for (std::int64_t i = 0; i < input.size(); ++i) {
        if (x[i] > 0.0) dx[i] += dy[i];
    }
}

Tensor interpolate_nearest(const Tensor& input, int target_h, int target_w) {
    require_rank(input, 3, "interpolate_nearest input");
    if (target_h < 1 || target_w < 1) {
        throw std::invalid_argument("interpolate_nearest: target dims must be >= 1");
    }
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    Tensor out({C, target_h, target_w});
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < target_h; ++y) {
            const int sy = static_cast<int>(static_cast<std::int64_t>(y) * H / target_h);
            for (int x = 0; x < target_w; ++x) {
                const int sx = static_cast<int>(static_cast<std::int64_t>(x) * W / target_w);
                out.at(c, y, x) = input.at(c, sy, sx);
            }
        }
    }
    return out;
}

void interpolate_nearest_backward(const Tensor& input, int target_h, int target_w,
                                  const Tensor& d_output, Tensor* d_input) {
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < target_h; ++y) {
            const int sy = static_cast<int>(static_cast<std::int64_t>(y) * H / target_h);
            for (int x = 0; x < target_w; ++x) {
                const int sx = static_cast<int>(static_cast<std::int64_t>(x) * W / target_w);
                d_input->at(c, sy, sx) += d_output.at(c, y, x);
            }
        }
    }
}

Tensor affine(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(weight, 2, "affine weight");
    const int N_out = weight.dim(0), N_in = weight.dim(1);
    if (input.size() != N_in) {
        throw std::invalid_argument("affine: input size " + std::to_string(input.size()) +
                                    " does not match weight inner dim " + std::to_string(N_in));
    }
    if (bias.size() != N_out) {
        throw std::invalid_argument("affine: bias size mismatch");
    }
    Tensor out({N_out});
    const double* x = input.data();
    for (int o = 0; o < N_out; ++o) {
        const double* wrow = weight.data() + static_cast<std::size_t>(o) * N_in;
        double acc = bias[o];
        for (int i = 0; i < N_in; ++i) acc += wrow[i] * x[i];
        out[o] = acc;
    }
    return out;
}

void affine_backward(const Tensor& input, const Tensor& weight, const Tensor& d_output,
                     Tensor* d_input, Tensor* d_weight, Tensor* d_bias) {
    const int N_out = weight.dim(0), N_in = weight.dim(1);
    const double* x = input.data();
    const double* dy = d_output.data();
    for (int o = 0; o < N_out; ++o) {
        const double g = dy[o];
        if (d_bias) (*d_bias)[o] += g;
        const double* wrow = weight.data() + static_cast<std::size_t>(o) * N_in;
        double* dwrow = d_weight ? d_weight->data() + static_cast<std::size_t>(o) * N_in : nullptr;
        double* dx = d_input ? d_input->data() : nullptr;
        if (g == 0.0 && !dx) continue;
        for (int i = 0; i < N_in; ++i) {
            if (dwrow) dwrow[i] += g * x[i];
            if (dx) dx[i] += g * wrow[i];
        }
    }
}

Tensor global_avg_pool(const Tensor& input) {
    require_rank(input, 3, "global_avg_pool input");
    const int C = input.dim(0), n = input.dim(1) * input.dim(2);
    Tensor out({C});
    for (int c = 0; c < C; ++c) {
        const double* x = input.data() + static_cast<std::size_t>(c) * n;
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += x[i];
        out[c] = s / n;
    }
    return out;
}

void global_avg_pool_backward(const Tensor& input, const Tensor& d_output, Tensor* d_input) {
    const int C = input.dim(0), n = input.dim(1) * input.dim(2);
    for (int c = 0; c < C; ++c) {
        const double g = d_output[c] / n;
        double* dx = d_input->data() + static_cast<std::size_t>(c) * n;
        for (int i = 0; i < n; ++i) dx[i] += g;
    }
}

} // namespace ckd
