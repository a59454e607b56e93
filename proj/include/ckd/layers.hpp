#pragma once

#include "ckd/tensor.hpp"

namespace ckd {

/// Forward and backward kernels for every layer type the networks need.
/// Inputs are single samples: activations are (C,H,W), convolution kernels
/// are (C_out,C_in,kh,kw), transposed-convolution kernels are
/// (C_in,C_out,kh,kw). All kernels are deterministic and single-threaded.

// -- convolution --------------------------------------------------------

/// Output spatial size: H' = floor((H + 2*pad - kh) / stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad);

/// Accumulates into d_input/d_kernel when non-null; both must be pre-shaped.
void conv2d_backward(const Tensor& input, const Tensor& kernel, int stride, int pad,
                     const Tensor& d_output, Tensor* d_input, Tensor* d_kernel);

// -- transposed convolution ---------------------------------------------

/// Output spatial size: H' = (H - 1)*stride - 2*pad + kh, unless an explicit
/// out_h/out_w is given (used when recovering a conv input gradient whose
/// forward pass discarded a stride remainder).
Tensor transposed_conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad,
                         int out_h = -1, int out_w = -1);

void transposed_conv2d_backward(const Tensor& input, const Tensor& kernel, int stride, int pad,
                                const Tensor& d_output, Tensor* d_input, Tensor* d_kernel);

// -- batch normalization -------------------------------------------------

struct BatchNormCache {
    Tensor x_hat;                 // normalized pre-affine values, train mode
    std::vector<double> inv_std;  // per channel
    bool train = false;
};

/// Per-channel standardization over H*W. In train mode batch statistics are
/// used and running stats are updated in place with `momentum` when
/// update_running is set; in eval mode running stats are used.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, bool train, bool update_running,
                   double eps, double momentum, BatchNormCache* cache);

void batchnorm2d_backward(const Tensor& gamma, const Tensor& running_var, double eps,
                          const BatchNormCache& cache, const Tensor& d_output,
                          Tensor* d_input, Tensor* d_gamma, Tensor* d_beta);

// -- pointwise / shape ops ------------------------------------------------

Tensor relu(const Tensor& input);
void relu_backward(const Tensor& input, const Tensor& d_output, Tensor* d_input);

/// Nearest-neighbor resize: source index floor(i*H/target_h).
Tensor interpolate_nearest(const Tensor& input, int target_h, int target_w);
void interpolate_nearest_backward(const Tensor& input, int target_h, int target_w,
                                  const Tensor& d_output, Tensor* d_input);

/// weight (N_out,N_in) * flattened input + bias (N_out).
Tensor affine(const Tensor& input, const Tensor& weight, const Tensor& bias);
void affine_backward(const Tensor& input, const Tensor& weight, const Tensor& d_output,
                     Tensor* d_input, Tensor* d_weight, Tensor* d_bias);

/// (C,H,W) -> (C,) mean over the spatial grid.
Tensor global_avg_pool(const Tensor& input);
void global_avg_pool_backward(const Tensor& input, const Tensor& d_output, Tensor* d_input);

} // namespace ckd
