#include "bgcut/tape.hpp"

#include <cmath>

namespace bgcut {

template <class T>
int TapeT<T>::push(Shape shape) {
  nodes_.push_back(Node{std::move(shape), TensorT<T>{}, nullptr});
  return static_cast<int>(nodes_.size()) - 1;
}

template <class T>
ValueT<T> TapeT<T>::finish(TensorT<T> out, int node) {
  if (check_finite_) {
    require(out.all_finite(), Errc::numeric, "op produced a non-finite value");
  }
  return Value{std::move(out), node};
}

template <class T>
TensorT<T>& TapeT<T>::grad_buffer(int node) {
  Node& nd = nodes_.at(static_cast<std::size_t>(node));
  if (!nd.grad.defined()) nd.grad = TensorT<T>(nd.shape);
  return nd.grad;
}

template <class T>
const TensorT<T>* TapeT<T>::grad_of(int node) const {
  const Node& nd = nodes_.at(static_cast<std::size_t>(node));
  return nd.grad.defined() ? &nd.grad : nullptr;
}

template <class T>
void TapeT<T>::accumulate(int node, const TensorT<T>& g) {
  if (node < 0) return;
  axpy(T(1), g, grad_buffer(node));
}

template <class T>
void TapeT<T>::backward(const Value& root) {
  require(root.node >= 0, Errc::invalid_argument, "backward: root is not recorded on this tape");
  TensorT<T>& seed = grad_buffer(root.node);
  fill_value(seed, T(1));
  for (int i = root.node; i >= 0; --i) {
    Node& nd = nodes_[static_cast<std::size_t>(i)];
    if (nd.grad.defined() && nd.back) nd.back(*this);
  }
}

template <class T>
ValueT<T> TapeT<T>::leaf(VariableT<T>& var) {
  if (!recording_) return Value{var.value, -1};
  const int id = push(var.value.shape());
  VariableT<T>* vp = &var;
  nodes_[static_cast<std::size_t>(id)].back = [id, vp](TapeT& tp) {
    if (vp->requires_grad) axpy(T(1), *tp.grad_of(id), vp->grad);
  };
  return Value{var.value, id};
}

template <class T>
ValueT<T> TapeT<T>::conv2d(const Value& x, const Value& w, const Value& b,
                           const Conv2dSpec& spec) {
  const T* bias = b.tensor.defined() ? b.tensor.data() : nullptr;
  if (bias != nullptr) {
    require(b.tensor.size() == w.tensor.dim(0), Errc::shape_mismatch,
            "conv2d: bias length must equal output channels");
  }
  TensorT<T> out = conv2d_forward(x.tensor, w.tensor, bias, spec);
  const bool rec = recording_ && (x.node >= 0 || w.node >= 0 || b.node >= 0);
  if (!rec) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, x, w, b, spec](TapeT& tp) {
    const TensorT<T>& g = *tp.grad_of(id);
    if (x.node >= 0) conv2d_backward_data(w.tensor, g, spec, tp.grad_buffer(x.node));
    if (w.node >= 0) conv2d_backward_weights(x.tensor, g, spec, tp.grad_buffer(w.node));
    if (b.node >= 0) conv2d_backward_bias(g, tp.grad_buffer(b.node));
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::conv2d_transpose(const Value& x, const Value& w, const Value& b,
                                     int stride, int pad) {
  const T* bias = b.tensor.defined() ? b.tensor.data() : nullptr;
  TensorT<T> out = conv2d_transpose_forward(x.tensor, w.tensor, bias, stride, pad);
  const bool rec = recording_ && (x.node >= 0 || w.node >= 0 || b.node >= 0);
  if (!rec) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, x, w, b, stride, pad](TapeT& tp) {
    const TensorT<T>& g = *tp.grad_of(id);
    if (x.node >= 0) conv2d_transpose_backward_data(w.tensor, g, stride, pad, tp.grad_buffer(x.node));
    if (w.node >= 0) conv2d_transpose_backward_weights(x.tensor, g, stride, pad, tp.grad_buffer(w.node));
    if (b.node >= 0) {
      TensorT<T>& gb = tp.grad_buffer(b.node);
      const int Cout = g.dim(1);
      const std::int64_t plane = static_cast<std::int64_t>(g.dim(2)) * g.dim(3);
      for (int n = 0; n < g.dim(0); ++n) {
        for (int c = 0; c < Cout; ++c) {
          const T* p = g.data() + (static_cast<std::int64_t>(n) * Cout + c) * plane;
          T s = T(0);
          for (std::int64_t i = 0; i < plane; ++i) s += p[i];
          gb[c] += s;
        }
      }
    }
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::relu(const Value& x) {
  TensorT<T> out = TensorT<T>::zeros_like(x.tensor);
  const T* xp = x.tensor.data();
  T* op = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) op[i] = xp[i] > T(0) ? xp[i] : T(0);
  if (!recording_ || x.node < 0) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, x](TapeT& tp) {
    const TensorT<T>& g = *tp.grad_of(id);
    TensorT<T>& gx = tp.grad_buffer(x.node);
    const T* xp2 = x.tensor.data();
    for (std::int64_t i = 0; i < g.size(); ++i) {
      if (xp2[i] > T(0)) gx[i] += g[i];
    }
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::add(const Value& a, const Value& b) {
  require(a.tensor.same_shape(b.tensor), Errc::shape_mismatch, "add: shapes must match");
  TensorT<T> out = a.tensor.clone();
  axpy(T(1), b.tensor, out);
  const bool rec = recording_ && (a.node >= 0 || b.node >= 0);
  if (!rec) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, an = a.node, bn = b.node](TapeT& tp) {
    const TensorT<T>& g = *tp.grad_of(id);
    tp.accumulate(an, g);
    tp.accumulate(bn, g);
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::mul(const Value& a, const Value& b) {
  require(a.tensor.same_shape(b.tensor), Errc::shape_mismatch, "mul: shapes must match");
  TensorT<T> out = TensorT<T>::zeros_like(a.tensor);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a.tensor[i] * b.tensor[i];
  const bool rec = recording_ && (a.node >= 0 || b.node >= 0);
  if (!rec) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, a, b](TapeT& tp) {
    const TensorT<T>& g = *tp.grad_of(id);
    if (a.node >= 0) {
      TensorT<T>& ga = tp.grad_buffer(a.node);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.tensor[i];
    }
    if (b.node >= 0) {
      TensorT<T>& gb = tp.grad_buffer(b.node);
      for (std::int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.tensor[i];
    }
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::scale(const Value& a, T alpha) {
  TensorT<T> out = a.tensor.clone();
  scale_inplace(out, alpha);
  if (!recording_ || a.node < 0) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, an = a.node, alpha](TapeT& tp) {
    const TensorT<T>& g = *tp.grad_of(id);
    TensorT<T>& ga = tp.grad_buffer(an);
    for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += alpha * g[i];
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::concat_channels(const std::vector<Value>& xs) {
  require(!xs.empty(), Errc::empty_input, "concat_channels: empty input list");
  const int N = xs[0].tensor.dim(0), H = xs[0].tensor.dim(2), W = xs[0].tensor.dim(3);
  int C = 0;
  bool any = false;
  for (const Value& v : xs) {
    require(v.tensor.rank() == 4, Errc::shape_mismatch, "concat_channels: rank-4 expected");
    require(v.tensor.dim(0) == N && v.tensor.dim(2) == H && v.tensor.dim(3) == W,
            Errc::shape_mismatch, "concat_channels: N,H,W must agree");
    C += v.tensor.dim(1);
    any = any || v.node >= 0;
  }
  TensorT<T> out({N, C, H, W});
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    std::int64_t co = 0;
    for (const Value& v : xs) {
      const int ci = v.tensor.dim(1);
      std::memcpy(out.data() + (static_cast<std::int64_t>(n) * C + co) * plane,
                  v.tensor.data() + static_cast<std::int64_t>(n) * ci * plane,
                  sizeof(T) * static_cast<std::size_t>(ci * plane));
      co += ci;
    }
  }
  if (!recording_ || !any) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, xs, C, plane](TapeT& tp) {
    const TensorT<T>& g = *tp.grad_of(id);
    const int N2 = g.dim(0);
    for (int n = 0; n < N2; ++n) {
      std::int64_t co = 0;
      for (const Value& v : xs) {
        const int ci = v.tensor.dim(1);
        if (v.node >= 0) {
          TensorT<T>& gx = tp.grad_buffer(v.node);
          const T* gp = g.data() + (static_cast<std::int64_t>(n) * C + co) * plane;
          T* xp = gx.data() + static_cast<std::int64_t>(n) * ci * plane;
          for (std::int64_t i = 0; i < ci * plane; ++i) xp[i] += gp[i];
        }
        co += ci;
      }
    }
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::reshape(const Value& x, Shape shape) {
  TensorT<T> out = x.tensor.reshaped(std::move(shape));
  if (!recording_ || x.node < 0) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, xn = x.node, xshape = x.tensor.shape()](TapeT& tp) {
    tp.accumulate(xn, tp.grad_of(id)->reshaped(xshape));
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::repeat_batch(const Value& x, int k) {
  require(k >= 1, Errc::invalid_argument, "repeat_batch: k must be >= 1");
  const int N = x.tensor.dim(0);
  const std::int64_t row = x.tensor.size() / N;
  Shape oshape = x.tensor.shape();
  oshape[0] = N * k;
  TensorT<T> out(oshape);
  for (int n = 0; n < N; ++n) {
    for (int j = 0; j < k; ++j) {
      std::memcpy(out.data() + (static_cast<std::int64_t>(n) * k + j) * row,
                  x.tensor.data() + n * row, sizeof(T) * static_cast<std::size_t>(row));
    }
  }
  if (!recording_ || x.node < 0) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, xn = x.node, N, k, row](TapeT& tp) {
    const TensorT<T>& g = *tp.grad_of(id);
    TensorT<T>& gx = tp.grad_buffer(xn);
    for (int n = 0; n < N; ++n) {
      T* dst = gx.data() + n * row;
      for (int j = 0; j < k; ++j) {
        const T* src = g.data() + (static_cast<std::int64_t>(n) * k + j) * row;
        for (std::int64_t i = 0; i < row; ++i) dst[i] += src[i];
      }
    }
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::batch_norm(const Value& x, VariableT<T>& gamma, VariableT<T>& beta,
                               TensorT<T>& running_mean, TensorT<T>& running_var,
                               bool training, T momentum, T eps) {
  require(x.tensor.rank() == 4, Errc::shape_mismatch, "batch_norm: rank-4 expected");
  const int N = x.tensor.dim(0), C = x.tensor.dim(1), H = x.tensor.dim(2), W = x.tensor.dim(3);
  require(gamma.value.size() == C && beta.value.size() == C && running_mean.size() == C &&
              running_var.size() == C,
          Errc::shape_mismatch, "batch_norm: per-channel parameter size mismatch");
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  const std::int64_t M = static_cast<std::int64_t>(N) * plane;

  TensorT<T> mean({C}), invstd({C});
  if (training) {
    for (int c = 0; c < C; ++c) {
      T s = T(0);
      for (int n = 0; n < N; ++n) {
        const T* p = x.tensor.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) s += p[i];
      }
      mean[c] = s / static_cast<T>(M);
    }
    for (int c = 0; c < C; ++c) {
      T s = T(0);
      for (int n = 0; n < N; ++n) {
        const T* p = x.tensor.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const T d = p[i] - mean[c];
          s += d * d;
        }
      }
      const T var = s / static_cast<T>(M);
      invstd[c] = T(1) / std::sqrt(var + eps);
      running_mean[c] = momentum * running_mean[c] + (T(1) - momentum) * mean[c];
      running_var[c] = momentum * running_var[c] + (T(1) - momentum) * var;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      invstd[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }

  TensorT<T> xhat({N, C, H, W});
  TensorT<T> out({N, C, H, W});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* p = x.tensor.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
      T* xh = xhat.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
      T* op = out.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
      const T m = mean[c], s = invstd[c], gm = gamma.value[c], bt = beta.value[c];
      for (std::int64_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - m) * s;
        op[i] = gm * xh[i] + bt;
      }
    }
  }
  if (!recording_) return finish(std::move(out), -1);

  const int id = push(out.shape());
  VariableT<T>* gp = &gamma;
  VariableT<T>* bp = &beta;
  nodes_[static_cast<std::size_t>(id)].back = [id, x, gp, bp, xhat, invstd, training, N, C,
                                               plane, M](TapeT& tp) {
    const TensorT<T>& g = *tp.grad_of(id);
    // Per-channel reductions shared by all gradients.
    TensorT<T> sum_g({C}), sum_gx({C});
    for (int c = 0; c < C; ++c) {
      T sg = T(0), sgx = T(0);
      for (int n = 0; n < N; ++n) {
        const T* gg = g.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
        const T* xh = xhat.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          sg += gg[i];
          sgx += gg[i] * xh[i];
        }
      }
      sum_g[c] = sg;
      sum_gx[c] = sgx;
    }
    if (gp->requires_grad) {
      for (int c = 0; c < C; ++c) gp->grad[c] += sum_gx[c];
    }
    if (bp->requires_grad) {
      for (int c = 0; c < C; ++c) bp->grad[c] += sum_g[c];
    }
    if (x.node >= 0) {
      TensorT<T>& gx = tp.grad_buffer(x.node);
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
          const T* gg = g.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
          const T* xh = xhat.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
          T* gxp = gx.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
          const T gm = gp->value[c], s = invstd[c];
          if (training) {
            const T mg = sum_g[c] / static_cast<T>(M);
            const T mgx = sum_gx[c] / static_cast<T>(M);
            for (std::int64_t i = 0; i < plane; ++i) {
              gxp[i] += gm * s * (gg[i] - mg - xh[i] * mgx);
            }
          } else {
            for (std::int64_t i = 0; i < plane; ++i) gxp[i] += gm * s * gg[i];
          }
        }
      }
    }
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::global_avg_pool(const Value& x) {
  require(x.tensor.rank() == 4, Errc::shape_mismatch, "global_avg_pool: rank-4 expected");
  const int N = x.tensor.dim(0), C = x.tensor.dim(1), H = x.tensor.dim(2), W = x.tensor.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  TensorT<T> out({N, C, 1, 1});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* p = x.tensor.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
      T s = T(0);
      for (std::int64_t i = 0; i < plane; ++i) s += p[i];
      out.at(n, c, 0, 0) = s / static_cast<T>(plane);
    }
  }
  if (!recording_ || x.node < 0) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, xn = x.node, N, C, plane](TapeT& tp) {
    const TensorT<T>& g = *tp.grad_of(id);
    TensorT<T>& gx = tp.grad_buffer(xn);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        const T gv = g.at(n, c, 0, 0) / static_cast<T>(plane);
        T* p = gx.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) p[i] += gv;
      }
    }
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::upsample_tile(const Value& x, int th, int tw) {
  require(x.tensor.rank() == 4, Errc::shape_mismatch, "upsample_tile: rank-4 expected");
  require(x.tensor.dim(2) == 1 && x.tensor.dim(3) == 1, Errc::invalid_argument,
          "upsample_tile: source must be 1x1");
  require(th >= 1 && tw >= 1, Errc::invalid_argument, "upsample_tile: bad target size");
  const int N = x.tensor.dim(0), C = x.tensor.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(th) * tw;
  TensorT<T> out({N, C, th, tw});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T v = x.tensor.at(n, c, 0, 0);
      T* p = out.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
      std::fill(p, p + plane, v);
    }
  }
  if (!recording_ || x.node < 0) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, xn = x.node, N, C, plane](TapeT& tp) {
    const TensorT<T>& g = *tp.grad_of(id);
    TensorT<T>& gx = tp.grad_buffer(xn);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        const T* p = g.data() + (static_cast<std::int64_t>(n) * C + c) * plane;
        T s = T(0);
        for (std::int64_t i = 0; i < plane; ++i) s += p[i];
        gx.at(n, c, 0, 0) += s;
      }
    }
  };
  return finish(std::move(out), id);
}

namespace {

// align-corners-false source coordinate mapping with edge clamping.
template <class T>
void bilinear_axis(int in, int out, std::vector<int>& i0, std::vector<int>& i1,
                   std::vector<T>& w0, std::vector<T>& w1) {
  i0.resize(out);
  i1.resize(out);
  w0.resize(out);
  w1.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double src = (d + 0.5) * scale - 0.5;
    int lo = static_cast<int>(std::floor(src));
    double frac = src - lo;
    if (lo < 0) {
      lo = 0;
      frac = 0.0;
    }
    int hi = lo + 1;
    if (hi > in - 1) {
      hi = in - 1;
      frac = 0.0;
    }
    i0[d] = lo;
    i1[d] = hi;
    w0[d] = static_cast<T>(1.0 - frac);
    w1[d] = static_cast<T>(frac);
  }
}

}  // namespace

template <class T>
ValueT<T> TapeT<T>::upsample_bilinear(const Value& x, int th, int tw) {
  require(x.tensor.rank() == 4, Errc::shape_mismatch, "upsample_bilinear: rank-4 expected");
  const int N = x.tensor.dim(0), C = x.tensor.dim(1), H = x.tensor.dim(2), W = x.tensor.dim(3);
  require(th >= H && tw >= W, Errc::invalid_argument,
          "upsample_bilinear: downscaling request");

  std::vector<int> hy0, hy1, wx0, wx1;
  std::vector<T> why0, why1, wwx0, wwx1;
  bilinear_axis<T>(H, th, hy0, hy1, why0, why1);
  bilinear_axis<T>(W, tw, wx0, wx1, wwx0, wwx1);

  TensorT<T> out({N, C, th, tw});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* src = x.tensor.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
      T* dst = out.data() + (static_cast<std::int64_t>(n) * C + c) * th * tw;
      for (int y = 0; y < th; ++y) {
        const T* r0 = src + static_cast<std::int64_t>(hy0[y]) * W;
        const T* r1 = src + static_cast<std::int64_t>(hy1[y]) * W;
        for (int xo = 0; xo < tw; ++xo) {
          const T top = why0[y] * r0[wx0[xo]] * wwx0[xo] + why0[y] * r0[wx1[xo]] * wwx1[xo];
          const T bot = why1[y] * r1[wx0[xo]] * wwx0[xo] + why1[y] * r1[wx1[xo]] * wwx1[xo];
          dst[static_cast<std::int64_t>(y) * tw + xo] = top + bot;
        }
      }
    }
  }
  if (!recording_ || x.node < 0) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, xn = x.node, N, C, H, W, th, tw, hy0, hy1,
                                               wx0, wx1, why0, why1, wwx0, wwx1](TapeT& tp) {
    const TensorT<T>& g = *tp.grad_of(id);
    TensorT<T>& gx = tp.grad_buffer(xn);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        T* dst = gx.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
        const T* src = g.data() + (static_cast<std::int64_t>(n) * C + c) * th * tw;
        for (int y = 0; y < th; ++y) {
          for (int xo = 0; xo < tw; ++xo) {
            const T gv = src[static_cast<std::int64_t>(y) * tw + xo];
            dst[static_cast<std::int64_t>(hy0[y]) * W + wx0[xo]] += why0[y] * wwx0[xo] * gv;
            dst[static_cast<std::int64_t>(hy0[y]) * W + wx1[xo]] += why0[y] * wwx1[xo] * gv;
            dst[static_cast<std::int64_t>(hy1[y]) * W + wx0[xo]] += why1[y] * wwx0[xo] * gv;
            dst[static_cast<std::int64_t>(hy1[y]) * W + wx1[xo]] += why1[y] * wwx1[xo] * gv;
          }
        }
      }
    }
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::softmax_channel(const Value& x) {
  require(x.tensor.rank() == 4, Errc::shape_mismatch, "softmax_channel: rank-4 expected");
  const int N = x.tensor.dim(0), C = x.tensor.dim(1), H = x.tensor.dim(2), W = x.tensor.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  TensorT<T> out({N, C, H, W});
  for (int n = 0; n < N; ++n) {
    for (std::int64_t i = 0; i < plane; ++i) {
      T mx = x.tensor.data()[(static_cast<std::int64_t>(n) * C) * plane + i];
      for (int c = 1; c < C; ++c) {
        mx = std::max(mx, x.tensor.data()[(static_cast<std::int64_t>(n) * C + c) * plane + i]);
      }
      T denom = T(0);
      for (int c = 0; c < C; ++c) {
        const T e = std::exp(x.tensor.data()[(static_cast<std::int64_t>(n) * C + c) * plane + i] - mx);
        out.data()[(static_cast<std::int64_t>(n) * C + c) * plane + i] = e;
        denom += e;
      }
      for (int c = 0; c < C; ++c) {
        out.data()[(static_cast<std::int64_t>(n) * C + c) * plane + i] /= denom;
      }
    }
  }
  if (!recording_ || x.node < 0) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, xn = x.node, out, N, C, plane](TapeT& tp) {
    const TensorT<T>& g = *tp.grad_of(id);
    TensorT<T>& gx = tp.grad_buffer(xn);
    for (int n = 0; n < N; ++n) {
      for (std::int64_t i = 0; i < plane; ++i) {
        T dot = T(0);
        for (int c = 0; c < C; ++c) {
          const std::int64_t k = (static_cast<std::int64_t>(n) * C + c) * plane + i;
          dot += g[k] * out[k];
        }
        for (int c = 0; c < C; ++c) {
          const std::int64_t k = (static_cast<std::int64_t>(n) * C + c) * plane + i;
          gx[k] += out[k] * (g[k] - dot);
        }
      }
    }
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::softmax_ce_loss(const Value& scores, const TensorT<int>& labels,
                                    int ignore_label) {
  require(scores.tensor.rank() == 4, Errc::shape_mismatch, "softmax_ce_loss: rank-4 scores");
  const int N = scores.tensor.dim(0), C = scores.tensor.dim(1);
  const int H = scores.tensor.dim(2), W = scores.tensor.dim(3);
  require(labels.rank() == 3 && labels.dim(0) == N && labels.dim(1) == H && labels.dim(2) == W,
          Errc::shape_mismatch, "softmax_ce_loss: label shape must be [N,H,W]");
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;

  // Stable per-pixel softmax; probabilities kept for the backward pass.
  TensorT<T> probs({N, C, H, W});
  std::int64_t valid = 0;
  double loss = 0.0;
  for (int n = 0; n < N; ++n) {
    for (std::int64_t i = 0; i < plane; ++i) {
      T mx = scores.tensor.data()[(static_cast<std::int64_t>(n) * C) * plane + i];
      for (int c = 1; c < C; ++c) {
        mx = std::max(mx, scores.tensor.data()[(static_cast<std::int64_t>(n) * C + c) * plane + i]);
      }
      T denom = T(0);
      for (int c = 0; c < C; ++c) {
        const T e = std::exp(scores.tensor.data()[(static_cast<std::int64_t>(n) * C + c) * plane + i] - mx);
        probs.data()[(static_cast<std::int64_t>(n) * C + c) * plane + i] = e;
        denom += e;
      }
      for (int c = 0; c < C; ++c) {
        probs.data()[(static_cast<std::int64_t>(n) * C + c) * plane + i] /= denom;
      }
      const int lab = labels.data()[static_cast<std::int64_t>(n) * plane + i];
      if (lab == ignore_label) continue;
      require(lab >= 0 && lab < C, Errc::invalid_argument, "softmax_ce_loss: label out of range");
      ++valid;
      loss -= std::log(static_cast<double>(
          probs.data()[(static_cast<std::int64_t>(n) * C + lab) * plane + i]));
    }
  }
  require(valid > 0, Errc::empty_input, "softmax_ce_loss: all pixels ignored");
  TensorT<T> out = TensorT<T>::full({1}, static_cast<T>(loss / static_cast<double>(valid)));
  if (!recording_ || scores.node < 0) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, sn = scores.node, probs, labels, ignore_label,
                                               N, C, plane, valid](TapeT& tp) {
    const T gy = (*tp.grad_of(id))[0];
    TensorT<T>& gx = tp.grad_buffer(sn);
    const T inv = gy / static_cast<T>(valid);
    for (int n = 0; n < N; ++n) {
      for (std::int64_t i = 0; i < plane; ++i) {
        const int lab = labels.data()[static_cast<std::int64_t>(n) * plane + i];
        if (lab == ignore_label) continue;
        for (int c = 0; c < C; ++c) {
          const std::int64_t k = (static_cast<std::int64_t>(n) * C + c) * plane + i;
          const T onehot = (c == lab) ? T(1) : T(0);
          gx[k] += inv * (probs[k] - onehot);
        }
      }
    }
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::l2_loss(const Value& pred, const TensorT<T>& target) {
  require(pred.tensor.same_shape(target), Errc::shape_mismatch, "l2_loss: shapes must match");
  const std::int64_t count = pred.tensor.size();
  double s = 0.0;
  for (std::int64_t i = 0; i < count; ++i) {
    const double d = static_cast<double>(pred.tensor[i]) - static_cast<double>(target[i]);
    s += d * d;
  }
  TensorT<T> out = TensorT<T>::full({1}, static_cast<T>(s / static_cast<double>(count)));
  if (!recording_ || pred.node < 0) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, pred, target, count](TapeT& tp) {
    const T gy = (*tp.grad_of(id))[0];
    TensorT<T>& gx = tp.grad_buffer(pred.node);
    const T k = T(2) * gy / static_cast<T>(count);
    for (std::int64_t i = 0; i < count; ++i) gx[i] += k * (pred.tensor[i] - target[i]);
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::sum_all(const Value& x) {
  T s = T(0);
  for (std::int64_t i = 0; i < x.tensor.size(); ++i) s += x.tensor[i];
  TensorT<T> out = TensorT<T>::full({1}, s);
  if (!recording_ || x.node < 0) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, xn = x.node](TapeT& tp) {
    const T gy = (*tp.grad_of(id))[0];
    TensorT<T>& gx = tp.grad_buffer(xn);
    for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += gy;
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::weighted_sum(const Value& x, const TensorT<T>& weights) {
  require(x.tensor.same_shape(weights), Errc::shape_mismatch, "weighted_sum: shapes must match");
  T s = T(0);
  for (std::int64_t i = 0; i < x.tensor.size(); ++i) s += x.tensor[i] * weights[i];
  TensorT<T> out = TensorT<T>::full({1}, s);
  if (!recording_ || x.node < 0) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, xn = x.node, weights](TapeT& tp) {
    const T gy = (*tp.grad_of(id))[0];
    TensorT<T>& gx = tp.grad_buffer(xn);
    for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += gy * weights[i];
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::zero_pad2d(const Value& x, int top, int bottom, int left, int right) {
  require(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, Errc::invalid_argument,
          "zero_pad2d: negative padding");
  const int N = x.tensor.dim(0), C = x.tensor.dim(1), H = x.tensor.dim(2), W = x.tensor.dim(3);
  const int Ho = H + top + bottom, Wo = W + left + right;
  TensorT<T> out({N, C, Ho, Wo});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      for (int h = 0; h < H; ++h) {
        std::memcpy(&out.at(n, c, h + top, left), &x.tensor.at(n, c, h, 0),
                    sizeof(T) * static_cast<std::size_t>(W));
      }
    }
  }
  if (!recording_ || x.node < 0) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, xn = x.node, N, C, H, W, top, left](TapeT& tp) {
    const TensorT<T>& g = *tp.grad_of(id);
    TensorT<T>& gx = tp.grad_buffer(xn);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        for (int h = 0; h < H; ++h) {
          const T* src = &g.at(n, c, h + top, left);
          T* dst = &gx.at(n, c, h, 0);
          for (int w = 0; w < W; ++w) dst[w] += src[w];
        }
      }
    }
  };
  return finish(std::move(out), id);
}

template <class T>
ValueT<T> TapeT<T>::crop2d(const Value& x, int top, int left, int h, int w) {
  const int N = x.tensor.dim(0), C = x.tensor.dim(1), H = x.tensor.dim(2), W = x.tensor.dim(3);
  require(top >= 0 && left >= 0 && h >= 1 && w >= 1 && top + h <= H && left + w <= W,
          Errc::invalid_argument, "crop2d: window out of bounds");
  TensorT<T> out({N, C, h, w});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      for (int y = 0; y < h; ++y) {
        std::memcpy(&out.at(n, c, y, 0), &x.tensor.at(n, c, y + top, left),
                    sizeof(T) * static_cast<std::size_t>(w));
      }
    }
  }
  if (!recording_ || x.node < 0) return finish(std::move(out), -1);

  const int id = push(out.shape());
  nodes_[static_cast<std::size_t>(id)].back = [id, xn = x.node, N, C, h, w, top, left](TapeT& tp) {
    const TensorT<T>& g = *tp.grad_of(id);
    TensorT<T>& gx = tp.grad_buffer(xn);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        for (int y = 0; y < h; ++y) {
          const T* src = &g.at(n, c, y, 0);
          T* dst = &gx.at(n, c, y + top, left);
          for (int xo = 0; xo < w; ++xo) dst[xo] += src[xo];
        }
      }
    }
  };
  return finish(std::move(out), id);
}

template class TapeT<float>;
template class TapeT<double>;

}  // namespace bgcut
