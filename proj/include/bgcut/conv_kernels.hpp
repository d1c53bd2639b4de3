#pragma once

// Convolution kernels: im2col plus a GEMM, with the matching backward
// passes. Transposed convolution reuses the same column machinery since its
// forward is exactly the data-backward of a convolution.

#include "bgcut/tensor.hpp"

namespace bgcut {

struct Conv2dSpec {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

inline int conv_out_extent(int in, int k, const Conv2dSpec& s) {
  return (in + 2 * s.pad - s.dilation * (k - 1) - 1) / s.stride + 1;
}

inline int conv_transpose_out_extent(int in, int k, int stride, int pad) {
  return (in - 1) * stride - 2 * pad + k;
}

// x: [N,Cin,H,W], w: [Cout,Cin,kh,kw], bias: Cout values or null.
template <class T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const T* bias,
                          const Conv2dSpec& spec);

// Accumulates (+=) into the gradient buffers.
template <class T>
void conv2d_backward_data(const TensorT<T>& w, const TensorT<T>& gout,
                          const Conv2dSpec& spec, TensorT<T>& gx);
template <class T>
void conv2d_backward_weights(const TensorT<T>& x, const TensorT<T>& gout,
                             const Conv2dSpec& spec, TensorT<T>& gw);
template <class T>
void conv2d_backward_bias(const TensorT<T>& gout, TensorT<T>& gb);

// x: [N,Cin,H,W], w: [Cin,Cout,kh,kw]. Output [N,Cout,(H-1)s-2p+kh,...].
template <class T>
TensorT<T> conv2d_transpose_forward(const TensorT<T>& x, const TensorT<T>& w,
                                    const T* bias, int stride, int pad);

template <class T>
void conv2d_transpose_backward_data(const TensorT<T>& w, const TensorT<T>& gout,
                                    int stride, int pad, TensorT<T>& gx);
template <class T>
void conv2d_transpose_backward_weights(const TensorT<T>& x, const TensorT<T>& gout,
                                       int stride, int pad, TensorT<T>& gw);

}  // namespace bgcut
