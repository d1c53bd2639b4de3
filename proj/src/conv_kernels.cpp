#include "bgcut/conv_kernels.hpp"

#include <Eigen/Core>

#include "bgcut/runtime.hpp"

namespace bgcut {
namespace {

template <class T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Expands one sample into columns: cols[(c*kh+i)*kw+j][ho*Wo+wo] = x[c][...].
template <class T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, const Conv2dSpec& s,
            int Ho, int Wo, T* cols) {
  const std::int64_t plane = static_cast<std::int64_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        T* dst = cols + (static_cast<std::int64_t>(c) * kh * kw + i * kw + j) * plane;
        const int ih0 = i * s.dilation - s.pad;
        const int iw0 = j * s.dilation - s.pad;
        for (int ho = 0; ho < Ho; ++ho) {
          const int ih = ih0 + ho * s.stride;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + Wo, T(0));
            dst += Wo;
            continue;
          }
          const T* src = x + (static_cast<std::int64_t>(c) * H + ih) * W;
          int wo = 0;
          int iw = iw0;
          for (; wo < Wo; ++wo, iw += s.stride) {
            dst[wo] = (iw >= 0 && iw < W) ? src[iw] : T(0);
          }
          dst += Wo;
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back into the image.
template <class T>
void col2im_add(const T* cols, int C, int H, int W, int kh, int kw, const Conv2dSpec& s,
                int Ho, int Wo, T* x) {
  const std::int64_t plane = static_cast<std::int64_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const T* src = cols + (static_cast<std::int64_t>(c) * kh * kw + i * kw + j) * plane;
        const int ih0 = i * s.dilation - s.pad;
        const int iw0 = j * s.dilation - s.pad;
        for (int ho = 0; ho < Ho; ++ho) {
          const int ih = ih0 + ho * s.stride;
          if (ih < 0 || ih >= H) {
            src += Wo;
            continue;
          }
          T* dst = x + (static_cast<std::int64_t>(c) * H + ih) * W;
          int iw = iw0;
          for (int wo = 0; wo < Wo; ++wo, iw += s.stride) {
            if (iw >= 0 && iw < W) dst[iw] += src[wo];
          }
          src += Wo;
        }
      }
    }
  }
}

template <class T>
void check_conv_args(const TensorT<T>& x, const TensorT<T>& w, const Conv2dSpec& s) {
  require(x.rank() == 4 && w.rank() == 4, Errc::shape_mismatch, "conv2d expects rank-4 tensors");
  require(w.dim(2) >= 1 && w.dim(3) >= 1 && s.pad >= 0 && s.stride >= 1 && s.dilation >= 1,
          Errc::invalid_argument, "conv2d: bad kernel/stride/pad/dilation");
  require(x.dim(1) == w.dim(1), Errc::shape_mismatch, "conv2d: input channel count disagrees with kernel");
}

}  // namespace

template <class T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const T* bias,
                          const Conv2dSpec& spec) {
  check_conv_args(x, w, spec);
  const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int Ho = conv_out_extent(H, kh, spec);
  const int Wo = conv_out_extent(W, kw, spec);
  require(Ho >= 1 && Wo >= 1, Errc::invalid_argument, "conv2d: zero-sized output");

  TensorT<T> out({N, Cout, Ho, Wo});
  const std::int64_t K = static_cast<std::int64_t>(Cin) * kh * kw;
  const std::int64_t P = static_cast<std::int64_t>(Ho) * Wo;
  ConstMatMap<T> wmat(w.data(), Cout, K);

  parallel_for(N, [&](std::int64_t n0, std::int64_t n1) {
    std::vector<T> cols(static_cast<std::size_t>(K * P));
    for (std::int64_t n = n0; n < n1; ++n) {
      im2col(x.data() + n * Cin * H * W, Cin, H, W, kh, kw, spec, Ho, Wo, cols.data());
      ConstMatMap<T> cmat(cols.data(), K, P);
      MatMap<T> omat(out.data() + n * Cout * P, Cout, P);
      omat.noalias() = wmat * cmat;
      if (bias != nullptr) {
        for (int co = 0; co < Cout; ++co) omat.row(co).array() += bias[co];
      }
    }
  });
  return out;
}

template <class T>
void conv2d_backward_data(const TensorT<T>& w, const TensorT<T>& gout,
                          const Conv2dSpec& spec, TensorT<T>& gx) {
  const int N = gx.dim(0), Cin = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
  const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int Ho = gout.dim(2), Wo = gout.dim(3);
  const std::int64_t K = static_cast<std::int64_t>(Cin) * kh * kw;
  const std::int64_t P = static_cast<std::int64_t>(Ho) * Wo;
  ConstMatMap<T> wmat(w.data(), Cout, K);

  std::vector<T> cols(static_cast<std::size_t>(K * P));
  for (int n = 0; n < N; ++n) {
    ConstMatMap<T> gmat(gout.data() + static_cast<std::int64_t>(n) * Cout * P, Cout, P);
    MatMap<T> cmat(cols.data(), K, P);
    cmat.noalias() = wmat.transpose() * gmat;
    col2im_add(cols.data(), Cin, H, W, kh, kw, spec, Ho, Wo,
               gx.data() + static_cast<std::int64_t>(n) * Cin * H * W);
  }
}

template <class T>
void conv2d_backward_weights(const TensorT<T>& x, const TensorT<T>& gout,
                             const Conv2dSpec& spec, TensorT<T>& gw) {
  const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = gw.dim(0), kh = gw.dim(2), kw = gw.dim(3);
  const int Ho = gout.dim(2), Wo = gout.dim(3);
  const std::int64_t K = static_cast<std::int64_t>(Cin) * kh * kw;
  const std::int64_t P = static_cast<std::int64_t>(Ho) * Wo;
  MatMap<T> wmat(gw.data(), Cout, K);

  std::vector<T> cols(static_cast<std::size_t>(K * P));
  for (int n = 0; n < N; ++n) {
    im2col(x.data() + static_cast<std::int64_t>(n) * Cin * H * W, Cin, H, W, kh, kw, spec, Ho,
           Wo, cols.data());
    ConstMatMap<T> cmat(cols.data(), K, P);
    ConstMatMap<T> gmat(gout.data() + static_cast<std::int64_t>(n) * Cout * P, Cout, P);
    wmat.noalias() += gmat * cmat.transpose();
  }
}

template <class T>
void conv2d_backward_bias(const TensorT<T>& gout, TensorT<T>& gb) {
  const int N = gout.dim(0), Cout = gout.dim(1);
  const std::int64_t P = static_cast<std::int64_t>(gout.dim(2)) * gout.dim(3);
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Cout; ++co) {
      const T* p = gout.data() + (static_cast<std::int64_t>(n) * Cout + co) * P;
      T s = T(0);
      for (std::int64_t i = 0; i < P; ++i) s += p[i];
      gb[co] += s;
    }
  }
}

template <class T>
TensorT<T> conv2d_transpose_forward(const TensorT<T>& x, const TensorT<T>& w,
                                    const T* bias, int stride, int pad) {
  require(x.rank() == 4 && w.rank() == 4, Errc::shape_mismatch,
          "conv2d_transpose expects rank-4 tensors");
  require(stride >= 1 && pad >= 0, Errc::invalid_argument, "conv2d_transpose: bad stride/pad");
  require(x.dim(1) == w.dim(0), Errc::shape_mismatch,
          "conv2d_transpose: input channels disagree with kernel");
  const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int Ho = conv_transpose_out_extent(H, kh, stride, pad);
  const int Wo = conv_transpose_out_extent(W, kw, stride, pad);
  require(Ho >= 1 && Wo >= 1, Errc::invalid_argument, "conv2d_transpose: non-positive output extent");

  // Forward of the transpose is the data-backward of a conv whose weight is
  // w viewed as [Cin, Cout*kh*kw], mapping the Ho x Wo grid back to H x W.
  TensorT<T> out({N, Cout, Ho, Wo});
  const Conv2dSpec spec{stride, pad, 1};
  const std::int64_t K = static_cast<std::int64_t>(Cout) * kh * kw;
  const std::int64_t P = static_cast<std::int64_t>(H) * W;
  ConstMatMap<T> wmat(w.data(), Cin, K);

  std::vector<T> cols(static_cast<std::size_t>(K * P));
  for (int n = 0; n < N; ++n) {
    ConstMatMap<T> xmat(x.data() + static_cast<std::int64_t>(n) * Cin * P, Cin, P);
    MatMap<T> cmat(cols.data(), K, P);
    cmat.noalias() = wmat.transpose() * xmat;
    col2im_add(cols.data(), Cout, Ho, Wo, kh, kw, spec, H, W,
               out.data() + static_cast<std::int64_t>(n) * Cout * Ho * Wo);
    if (bias != nullptr) {
      T* op = out.data() + static_cast<std::int64_t>(n) * Cout * Ho * Wo;
      const std::int64_t plane = static_cast<std::int64_t>(Ho) * Wo;
      for (int co = 0; co < Cout; ++co) {
        for (std::int64_t i = 0; i < plane; ++i) op[co * plane + i] += bias[co];
      }
    }
  }
  return out;
}

template <class T>
void conv2d_transpose_backward_data(const TensorT<T>& w, const TensorT<T>& gout,
                                    int stride, int pad, TensorT<T>& gx) {
  // d x of the transpose is a plain convolution of gout with the same kernel.
  const Conv2dSpec spec{stride, pad, 1};
  TensorT<T> g = conv2d_forward(gout, w, static_cast<const T*>(nullptr), spec);
  // conv2d_forward wants weight layout [Cout,Cin,kh,kw]; w is [Cin,Cout,kh,kw]
  // which is exactly the conv weight mapping gout's Cout channels to Cin.
  axpy(T(1), g, gx);
}

template <class T>
void conv2d_transpose_backward_weights(const TensorT<T>& x, const TensorT<T>& gout,
                                       int stride, int pad, TensorT<T>& gw) {
  // Same contraction as the conv weight gradient with input and output-grad
  // roles swapped: gw[ci,co,:,:] pairs x (coarse grid) with gout (fine grid).
  const Conv2dSpec spec{stride, pad, 1};
  conv2d_backward_weights(gout, x, spec, gw);
}

template TensorT<float> conv2d_forward(const TensorT<float>&, const TensorT<float>&,
                                       const float*, const Conv2dSpec&);
template TensorT<double> conv2d_forward(const TensorT<double>&, const TensorT<double>&,
                                        const double*, const Conv2dSpec&);
template void conv2d_backward_data(const TensorT<float>&, const TensorT<float>&,
                                   const Conv2dSpec&, TensorT<float>&);
template void conv2d_backward_data(const TensorT<double>&, const TensorT<double>&,
                                   const Conv2dSpec&, TensorT<double>&);
template void conv2d_backward_weights(const TensorT<float>&, const TensorT<float>&,
                                      const Conv2dSpec&, TensorT<float>&);
template void conv2d_backward_weights(const TensorT<double>&, const TensorT<double>&,
                                      const Conv2dSpec&, TensorT<double>&);
template void conv2d_backward_bias(const TensorT<float>&, TensorT<float>&);
template void conv2d_backward_bias(const TensorT<double>&, TensorT<double>&);
template TensorT<float> conv2d_transpose_forward(const TensorT<float>&, const TensorT<float>&,
                                                 const float*, int, int);
template TensorT<double> conv2d_transpose_forward(const TensorT<double>&, const TensorT<double>&,
                                                  const double*, int, int);
template void conv2d_transpose_backward_data(const TensorT<float>&, const TensorT<float>&, int,
                                             int, TensorT<float>&);
template void conv2d_transpose_backward_data(const TensorT<double>&, const TensorT<double>&,
                                             int, int, TensorT<double>&);
template void conv2d_transpose_backward_weights(const TensorT<float>&, const TensorT<float>&,
                                                int, int, TensorT<float>&);
template void conv2d_transpose_backward_weights(const TensorT<double>&, const TensorT<double>&,
                                                int, int, TensorT<double>&);

}  // namespace bgcut
