// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dmx/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dmx/error.hpp"
#include "dmx/simd/kernels.hpp"

namespace dmx::ad {
namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void require_rank(const Tensor& x, std::size_t rank, const char* op, const char* name) {
  if (x.rank() != rank)
    throw ShapeError(std::string(op) + ": " + name + " must have rank " + std::to_string(rank) +
                     ", got " + shape_str(x.shape()));
}

void accumulate(Node& parent, const float* g, std::size_t n, float factor = 1.0f) {
  float* d = parent.grad_buffer();
  if (d == nullptr) return;
  if (factor == 1.0f) {
    for (std::size_t i = 0; i < n; ++i) d[i] += g[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) d[i] += factor * g[i];
  }
}

inline float sigmoidf(float x) {
  return x >= 0 ? 1.0f / (1.0f + std::exp(-x)) : std::exp(x) / (1.0f + std::exp(x));
}

// (outer, axis, inner) factorization of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1, len = 0, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) throw ShapeError(std::string(op) + ": axis out of range for " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// col[(c*K + k) * Tout + t] = x[c * T + t*stride + k - pad], zero outside.
void im2col_1d(const float* x, std::size_t cin, std::size_t t_in, std::size_t k, std::size_t stride,
               std::size_t pad, std::size_t t_out, float* col) {
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t kk = 0; kk < k; ++kk) {
      float* row = col + (c * k + kk) * t_out;
      const float* xc = x + c * t_in;
      for (std::size_t t = 0; t < t_out; ++t) {
        const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(t * stride + kk) - static_cast<std::ptrdiff_t>(pad);
        row[t] = (i >= 0 && i < static_cast<std::ptrdiff_t>(t_in)) ? xc[i] : 0.0f;
      }
    }
}

void col2im_1d(const float* col, std::size_t cin, std::size_t t_in, std::size_t k, std::size_t stride,
               std::size_t pad, std::size_t t_out, float* x) {
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const float* row = col + (c * k + kk) * t_out;
      float* xc = x + c * t_in;
      for (std::size_t t = 0; t < t_out; ++t) {
        const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(t * stride + kk) - static_cast<std::ptrdiff_t>(pad);
        if (i >= 0 && i < static_cast<std::ptrdiff_t>(t_in)) xc[i] += row[t];
      }
    }
}

void im2col_2d(const float* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh,
               std::size_t kw, std::size_t ph, std::size_t pw, std::size_t oh, std::size_t ow, float* col) {
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t a = 0; a < kh; ++a)
      for (std::size_t b = 0; b < kw; ++b) {
        float* row = col + ((c * kh + a) * kw + b) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + a) - static_cast<std::ptrdiff_t>(ph);
          float* dst = row + y * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + ow, 0.0f);
            continue;
          }
          const float* src = x + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo + b) - static_cast<std::ptrdiff_t>(pw);
            dst[xo] = (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) ? src[ix] : 0.0f;
          }
        }
      }
}

void col2im_2d(const float* col, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh,
               std::size_t kw, std::size_t ph, std::size_t pw, std::size_t oh, std::size_t ow, float* x) {
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t a = 0; a < kh; ++a)
      for (std::size_t b = 0; b < kw; ++b) {
        const float* row = col + ((c * kh + a) * kw + b) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + a) - static_cast<std::ptrdiff_t>(ph);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          float* dst = x + (c * h + static_cast<std::size_t>(iy)) * w;
          const float* src = row + y * ow;
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo + b) - static_cast<std::ptrdiff_t>(pw);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[xo];
          }
        }
      }
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    accumulate(*self.parents[0], self.grad.data(), self.grad.size());
    accumulate(*self.parents[1], self.grad.data(), self.grad.size());
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    accumulate(*self.parents[0], self.grad.data(), self.grad.size());
    accumulate(*self.parents[1], self.grad.data(), self.grad.size(), -1.0f);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::size_t n = self.grad.size();
    if (float* da = pa.grad_buffer())
      for (std::size_t i = 0; i < n; ++i) da[i] += self.grad[i] * pb.value[i];
    if (float* db = pb.grad_buffer())
      for (std::size_t i = 0; i < n; ++i) db[i] += self.grad[i] * pa.value[i];
  });
}

Tensor scale(const Tensor& x, float s) {
  std::vector<float> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * x.values()[i];
  return make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
    accumulate(*self.parents[0], self.grad.data(), self.grad.size(), s);
  });
}

Tensor relu(const Tensor& x) {
  std::vector<float> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > 0.0f ? x.values()[i] : 0.0f;
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    Node& p = *self.parents[0];
    if (float* d = p.grad_buffer())
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (p.value[i] > 0.0f) d[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<float> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoidf(x.values()[i]);
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    if (float* d = self.parents[0]->grad_buffer())
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const float y = self.value[i];
        d[i] += self.grad[i] * y * (1.0f - y);
      }
  });
}

Tensor tanh(const Tensor& x) {
  std::vector<float> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.values()[i]);
  return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    if (float* d = self.parents[0]->grad_buffer())
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const float y = self.value[i];
        d[i] += self.grad[i] * (1.0f - y * y);
      }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (float v : x.values()) s += v;
  return make_result({1}, {static_cast<float>(s)}, {x}, [](Node& self) {
    if (float* d = self.parents[0]->grad_buffer()) {
      const float g = self.grad[0];
      for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) d[i] += g;
    }
  });
}

Tensor mean(const Tensor& x) {
  const std::size_t n = x.numel();
  if (n == 0) throw ShapeError("mean of empty tensor");
  double s = 0.0;
  for (float v : x.values()) s += v;
  return make_result({1}, {static_cast<float>(s / n)}, {x}, [n](Node& self) {
    if (float* d = self.parents[0]->grad_buffer()) {
      const float g = self.grad[0] / static_cast<float>(n);
      for (std::size_t i = 0; i < n; ++i) d[i] += g;
    }
  });
}

// --------------------------------------------------------------------- layout

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return make_result(std::move(shape), x.values(), {x}, [](Node& self) {
    accumulate(*self.parents[0], self.grad.data(), self.grad.size());
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  if (perm.size() != r) throw ShapeError("permute: rank mismatch");
  std::vector<bool> used(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (perm[i] >= r || used[perm[i]]) throw ShapeError("permute: invalid permutation");
    used[perm[i]] = true;
    out_shape[i] = in[perm[i]];
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];

  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < r; ++i) s += idx[i] * in_stride[perm[i]];
    src[o] = s;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<float> out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = x.values()[src[o]];
  return make_result(std::move(out_shape), std::move(out), {x}, [src = std::move(src)](Node& self) {
    if (float* d = self.parents[0]->grad_buffer())
      for (std::size_t o = 0; o < src.size(); ++o) d[src[o]] += self.grad[o];
  });
}

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  if (a.rank() != b.rank()) throw ShapeError("concat: rank mismatch");
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (i != axis && a.dim(i) != b.dim(i))
      throw ShapeError("concat: " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                       " differ off the concat axis");
  const AxisSplit sa = split_axis(a.shape(), axis, "concat");
  const AxisSplit sb = split_axis(b.shape(), axis, "concat");
  Shape shape = a.shape();
  shape[axis] = sa.len + sb.len;
  const std::size_t ra = sa.len * sa.inner, rb = sb.len * sb.inner;
  std::vector<float> out(numel(shape));
  for (std::size_t o = 0; o < sa.outer; ++o) {
    std::copy_n(a.values().data() + o * ra, ra, out.data() + o * (ra + rb));
    std::copy_n(b.values().data() + o * rb, rb, out.data() + o * (ra + rb) + ra);
  }
  return make_result(std::move(shape), std::move(out), {a, b}, [outer = sa.outer, ra, rb](Node& self) {
    float* da = self.parents[0]->grad_buffer();
    float* db = self.parents[1]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      const float* g = self.grad.data() + o * (ra + rb);
      if (da)
        for (std::size_t i = 0; i < ra; ++i) da[o * ra + i] += g[i];
      if (db)
        for (std::size_t i = 0; i < rb; ++i) db[o * rb + i] += g[ra + i];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = split_axis(x.shape(), axis, "slice");
  if (start + length > s.len) throw ShapeError("slice: range out of bounds for " + shape_str(x.shape()));
  Shape shape = x.shape();
  shape[axis] = length;
  std::vector<float> out(numel(shape));
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(x.values().data() + (o * s.len + start) * s.inner, length * s.inner,
                out.data() + o * length * s.inner);
  return make_result(std::move(shape), std::move(out), {x}, [s, start, length](Node& self) {
    if (float* d = self.parents[0]->grad_buffer())
      for (std::size_t o = 0; o < s.outer; ++o) {
        float* dst = d + (o * s.len + start) * s.inner;
        const float* g = self.grad.data() + o * length * s.inner;
        for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += g[i];
      }
  });
}

Tensor pad(const Tensor& x, std::size_t axis, std::size_t left, std::size_t right) {
  const AxisSplit s = split_axis(x.shape(), axis, "pad");
  Shape shape = x.shape();
  const std::size_t len = s.len + left + right;
  shape[axis] = len;
  std::vector<float> out(numel(shape), 0.0f);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(x.values().data() + o * s.len * s.inner, s.len * s.inner,
                out.data() + (o * len + left) * s.inner);
  return make_result(std::move(shape), std::move(out), {x}, [s, left, len](Node& self) {
    if (float* d = self.parents[0]->grad_buffer())
      for (std::size_t o = 0; o < s.outer; ++o) {
        const float* g = self.grad.data() + (o * len + left) * s.inner;
        float* dst = d + o * s.len * s.inner;
        for (std::size_t i = 0; i < s.len * s.inner; ++i) dst[i] += g[i];
      }
  });
}

Tensor glu(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "glu");
  if (s.len % 2 != 0) throw ShapeError("glu: odd extent " + std::to_string(s.len) + " on the split axis");
  const std::size_t half = s.len / 2;
  Shape shape = x.shape();
  shape[axis] = half;
  std::vector<float> out(numel(shape));
  std::vector<float> gate(out.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < half * s.inner; ++i) {
      const float a = x.values()[o * s.len * s.inner + i];
      const float g = sigmoidf(x.values()[o * s.len * s.inner + half * s.inner + i]);
      gate[o * half * s.inner + i] = g;
      out[o * half * s.inner + i] = a * g;
    }
  return make_result(std::move(shape), std::move(out), {x}, [s, half, gate = std::move(gate)](Node& self) {
    Node& p = *self.parents[0];
    float* d = p.grad_buffer();
    if (d == nullptr) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < half * s.inner; ++i) {
        const std::size_t oi = o * half * s.inner + i;
        const std::size_t ai = o * s.len * s.inner + i;
        const std::size_t bi = ai + half * s.inner;
        const float g = gate[oi];
        d[ai] += self.grad[oi] * g;
        d[bi] += self.grad[oi] * p.value[ai] * g * (1.0f - g);
      }
  });
}

// --------------------------------------------------------------- convolution

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t padding) {
  require_rank(x, 3, "conv1d", "input");
  require_rank(w, 3, "conv1d", "weight");
  const std::size_t batch = x.dim(0), cin = x.dim(1), t_in = x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin)
    throw ShapeError("conv1d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  if (b.numel() != cout) throw ShapeError("conv1d: bias size mismatch");
  if (stride == 0) throw ShapeError("conv1d: stride must be positive");
  if (t_in + 2 * padding < k)
    throw ShapeError("conv1d: input length " + std::to_string(t_in) + " shorter than kernel " + std::to_string(k));
  const std::size_t t_out = (t_in + 2 * padding - k) / stride + 1;
  const bool pointwise = k == 1 && stride == 1 && padding == 0;
  const std::size_t ck = cin * k;

  std::vector<float> out(batch * cout * t_out);
  std::vector<float> col(pointwise ? 0 : ck * t_out);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    float* y = out.data() + bi * cout * t_out;
    for (std::size_t o = 0; o < cout; ++o) std::fill(y + o * t_out, y + (o + 1) * t_out, b.values()[o]);
    const float* xb = x.values().data() + bi * cin * t_in;
    const float* src = xb;
    if (!pointwise) {
      im2col_1d(xb, cin, t_in, k, stride, padding, t_out, col.data());
      src = col.data();
    }
    simd::gemm_nn(cout, t_out, ck, w.values().data(), src, y);
  }

  return make_result({batch, cout, t_out}, std::move(out), {x, w, b},
                     [=](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pw = *self.parents[1];
                       Node& pb = *self.parents[2];
                       float* dx = px.grad_buffer();
                       float* dw = pw.grad_buffer();
                       float* db = pb.grad_buffer();
                       std::vector<float> colb(pointwise ? 0 : ck * t_out);
                       std::vector<float> dcol(ck * t_out);
                       for (std::size_t bi = 0; bi < batch; ++bi) {
                         const float* g = self.grad.data() + bi * cout * t_out;
                         const float* xb = px.value.data() + bi * cin * t_in;
                         if (db)
                           for (std::size_t o = 0; o < cout; ++o) {
                             double s = 0.0;
                             for (std::size_t t = 0; t < t_out; ++t) s += g[o * t_out + t];
                             db[o] += static_cast<float>(s);
                           }
                         if (dw) {
                           const float* src = xb;
                           if (!pointwise) {
                             im2col_1d(xb, cin, t_in, k, stride, padding, t_out, colb.data());
                             src = colb.data();
                           }
                           simd::gemm_nt(cout, ck, t_out, g, src, dw);
                         }
                         if (dx) {
                           if (pointwise) {
                             simd::gemm_tn(ck, t_out, cout, pw.value.data(), g, dx + bi * cin * t_in);
                           } else {
                             std::fill(dcol.begin(), dcol.end(), 0.0f);
                             simd::gemm_tn(ck, t_out, cout, pw.value.data(), g, dcol.data());
                             col2im_1d(dcol.data(), cin, t_in, k, stride, padding, t_out, dx + bi * cin * t_in);
                           }
                         }
                       }
                     });
}

Tensor conv_transpose1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride) {
  require_rank(x, 3, "conv_transpose1d", "input");
  require_rank(w, 3, "conv_transpose1d", "weight");
  const std::size_t batch = x.dim(0), cin = x.dim(1), t_in = x.dim(2);
  const std::size_t cout = w.dim(1), k = w.dim(2);
  if (w.dim(0) != cin) throw ShapeError("conv_transpose1d: weight/input channel mismatch");
  if (b.numel() != cout) throw ShapeError("conv_transpose1d: bias size mismatch");
  if (t_in < 1 || stride == 0) throw ShapeError("conv_transpose1d: empty input or zero stride");
  const std::size_t t_out = (t_in - 1) * stride + k;
  const std::size_t ck = cout * k;

  std::vector<float> out(batch * cout * t_out);
  std::vector<float> col(ck * t_in);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    std::fill(col.begin(), col.end(), 0.0f);
    simd::gemm_tn(ck, t_in, cin, w.values().data(), x.values().data() + bi * cin * t_in, col.data());
    float* y = out.data() + bi * cout * t_out;
    for (std::size_t o = 0; o < cout; ++o) std::fill(y + o * t_out, y + (o + 1) * t_out, b.values()[o]);
    col2im_1d(col.data(), cout, t_out, k, stride, 0, t_in, y);
  }

  return make_result({batch, cout, t_out}, std::move(out), {x, w, b}, [=](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    float* dx = px.grad_buffer();
    float* dw = pw.grad_buffer();
    float* db = pb.grad_buffer();
    std::vector<float> dcol(ck * t_in);
    for (std::size_t bi = 0; bi < batch; ++bi) {
      const float* g = self.grad.data() + bi * cout * t_out;
      if (db)
        for (std::size_t o = 0; o < cout; ++o) {
          double s = 0.0;
          for (std::size_t t = 0; t < t_out; ++t) s += g[o * t_out + t];
          db[o] += static_cast<float>(s);
        }
      im2col_1d(g, cout, t_out, k, stride, 0, t_in, dcol.data());
      if (dx) simd::gemm_nn(cin, t_in, ck, pw.value.data(), dcol.data(), dx + bi * cin * t_in);
      if (dw) simd::gemm_nt(cin, ck, t_in, px.value.data() + bi * cin * t_in, dcol.data(), dw);
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t pad_h, std::size_t pad_w) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "weight");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin)
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  if (b.numel() != cout) throw ShapeError("conv2d: bias size mismatch");
  if (h + 2 * pad_h < kh || wd + 2 * pad_w < kw)
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " smaller than kernel");
  const std::size_t oh = h + 2 * pad_h - kh + 1, ow = wd + 2 * pad_w - kw + 1;
  const std::size_t ckk = cin * kh * kw, plane = oh * ow;
  const bool pointwise = kh == 1 && kw == 1 && pad_h == 0 && pad_w == 0;

  std::vector<float> out(batch * cout * plane);
  std::vector<float> col(pointwise ? 0 : ckk * plane);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    float* y = out.data() + bi * cout * plane;
    for (std::size_t o = 0; o < cout; ++o) std::fill(y + o * plane, y + (o + 1) * plane, b.values()[o]);
    const float* xb = x.values().data() + bi * cin * h * wd;
    const float* src = xb;
    if (!pointwise) {
      im2col_2d(xb, cin, h, wd, kh, kw, pad_h, pad_w, oh, ow, col.data());
      src = col.data();
    }
    simd::gemm_nn(cout, plane, ckk, w.values().data(), src, y);
  }

  return make_result({batch, cout, oh, ow}, std::move(out), {x, w, b}, [=](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    float* dx = px.grad_buffer();
    float* dw = pw.grad_buffer();
    float* db = pb.grad_buffer();
    std::vector<float> colb(pointwise ? 0 : ckk * plane);
    std::vector<float> dcol(pointwise ? 0 : ckk * plane);
    for (std::size_t bi = 0; bi < batch; ++bi) {
      const float* g = self.grad.data() + bi * cout * plane;
      const float* xb = px.value.data() + bi * cin * h * wd;
      if (db)
        for (std::size_t o = 0; o < cout; ++o) {
          double s = 0.0;
          for (std::size_t t = 0; t < plane; ++t) s += g[o * plane + t];
          db[o] += static_cast<float>(s);
        }
      if (dw) {
        const float* src = xb;
        if (!pointwise) {
          im2col_2d(xb, cin, h, wd, kh, kw, pad_h, pad_w, oh, ow, colb.data());
          src = colb.data();
        }
        simd::gemm_nt(cout, ckk, plane, g, src, dw);
      }
      if (dx) {
        if (pointwise) {
          simd::gemm_tn(ckk, plane, cout, pw.value.data(), g, dx + bi * cin * h * wd);
        } else {
          std::fill(dcol.begin(), dcol.end(), 0.0f);
          simd::gemm_tn(ckk, plane, cout, pw.value.data(), g, dcol.data());
          col2im_2d(dcol.data(), cin, h, wd, kh, kw, pad_h, pad_w, oh, ow, dx + bi * cin * h * wd);
        }
      }
    }
  });
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank(x, 4, "max_pool2d", "input");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < kernel || w < kernel)
    throw ShapeError("max_pool2d: input " + shape_str(x.shape()) + " smaller than kernel " + std::to_string(kernel));
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  std::vector<float> out(planes * oh * ow);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        std::size_t best = p * h * w + (y * stride) * w + xo * stride;
        for (std::size_t a = 0; a < kernel; ++a)
          for (std::size_t c = 0; c < kernel; ++c) {
            const std::size_t i = p * h * w + (y * stride + a) * w + xo * stride + c;
            if (x.values()[i] > x.values()[best]) best = i;
          }
        const std::size_t o = (p * oh + y) * ow + xo;
        out[o] = x.values()[best];
        arg[o] = best;
      }
  return make_result({x.dim(0), x.dim(1), oh, ow}, std::move(out), {x}, [arg = std::move(arg)](Node& self) {
    if (float* d = self.parents[0]->grad_buffer())
      for (std::size_t o = 0; o < arg.size(); ++o) d[arg[o]] += self.grad[o];
  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training) {
  if (x.rank() < 2) throw ShapeError("batch_norm: input needs a channel axis");
  const std::size_t batch = x.dim(0), ch = x.dim(1);
  const std::size_t spatial = x.numel() / (batch * ch);
  if (gamma.numel() != ch || beta.numel() != ch || state.running_mean.numel() != ch ||
      state.running_var.numel() != ch)
    throw ShapeError("batch_norm: parameter size mismatch for " + std::to_string(ch) + " channels");
  const std::size_t count = batch * spatial;
  if (training && count < 2) throw ShapeError("batch_norm: need at least 2 values per channel in training");

  std::vector<float> mu(ch), inv_std(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    if (training) {
      double s = 0.0, s2 = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const float* p = x.values().data() + (b * ch + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) s += p[i];
      }
      const double m = s / count;
      for (std::size_t b = 0; b < batch; ++b) {
        const float* p = x.values().data() + (b * ch + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) s2 += (p[i] - m) * (p[i] - m);
      }
      const double var = s2 / count;
      mu[c] = static_cast<float>(m);
      inv_std[c] = static_cast<float>(1.0 / std::sqrt(var + state.eps));
      const double unbiased = s2 / (count - 1);
      float& rm = state.running_mean.values()[c];
      float& rv = state.running_var.values()[c];
      rm = static_cast<float>((1.0 - state.momentum) * rm + state.momentum * m);
      rv = static_cast<float>((1.0 - state.momentum) * rv + state.momentum * unbiased);
    } else {
      mu[c] = state.running_mean.values()[c];
      inv_std[c] = 1.0f / std::sqrt(state.running_var.values()[c] + state.eps);
    }
  }

  std::vector<float> out(x.numel());
  std::vector<float> xhat(x.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (b * ch + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        const float xh = (x.values()[base + i] - mu[c]) * inv_std[c];
        xhat[base + i] = xh;
        out[base + i] = gamma.values()[c] * xh + beta.values()[c];
      }
    }

  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pb = *self.parents[2];
                       float* dx = px.grad_buffer();
                       float* dg = pg.grad_buffer();
                       float* dbeta = pb.grad_buffer();
                       for (std::size_t c = 0; c < ch; ++c) {
                         double sg = 0.0, sgx = 0.0;
                         for (std::size_t b = 0; b < batch; ++b) {
                           const std::size_t base = (b * ch + c) * spatial;
                           for (std::size_t i = 0; i < spatial; ++i) {
                             sg += self.grad[base + i];
                             sgx += self.grad[base + i] * xhat[base + i];
                           }
                         }
                         if (dg) dg[c] += static_cast<float>(sgx);
                         if (dbeta) dbeta[c] += static_cast<float>(sg);
                         if (!dx) continue;
                         const float k = pg.value[c] * inv_std[c];
                         const float mg = training ? static_cast<float>(sg / count) : 0.0f;
                         const float mgx = training ? static_cast<float>(sgx / count) : 0.0f;
                         for (std::size_t b = 0; b < batch; ++b) {
                           const std::size_t base = (b * ch + c) * spatial;
                           for (std::size_t i = 0; i < spatial; ++i)
                             dx[base + i] += k * (self.grad[base + i] - mg - xhat[base + i] * mgx);
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, float p, Rng& rng, bool training) {
  if (!training || p <= 0.0f) return x;
  if (p >= 1.0f) throw ContractError("dropout probability must be < 1");
  const float keep = 1.0f / (1.0f - p);
  std::vector<float> mask(x.numel());
  std::vector<float> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0f : keep;
    out[i] = x.values()[i] * mask[i];
  }
  return make_result(x.shape(), std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    if (float* d = self.parents[0]->grad_buffer())
      for (std::size_t i = 0; i < mask.size(); ++i) d[i] += self.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------------- LSTM

Tensor lstm(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh, const Tensor& bias, bool reverse) {
  require_rank(x, 3, "lstm", "input");
  const std::size_t steps = x.dim(0), batch = x.dim(1), in = x.dim(2);
  require_rank(w_hh, 2, "lstm", "w_hh");
  const std::size_t hid = w_hh.dim(1), g4 = 4 * hid;
  if (w_ih.shape() != Shape{g4, in} || w_hh.dim(0) != g4 || bias.numel() != g4)
    throw ShapeError("lstm: weights " + shape_str(w_ih.shape()) + "/" + shape_str(w_hh.shape()) +
                     " do not match input " + shape_str(x.shape()));

  const std::size_t rows = steps * batch;
  // Pre-activations of every step; the input projection is one GEMM.
  std::vector<float> acts(rows * g4);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(bias.values().data(), g4, acts.data() + r * g4);
  simd::gemm_nt(rows, g4, in, x.values().data(), w_ih.values().data(), acts.data());

  std::vector<float> cells(rows * hid);
  std::vector<float> out(rows * hid);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    float* a = acts.data() + t * batch * g4;
    if (s > 0) {
      const std::size_t tp = reverse ? t + 1 : t - 1;
      simd::gemm_nt(batch, g4, hid, out.data() + tp * batch * hid, w_hh.values().data(), a);
    }
    for (std::size_t b = 0; b < batch; ++b) {
      float* ab = a + b * g4;
      float* cb = cells.data() + (t * batch + b) * hid;
      float* hb = out.data() + (t * batch + b) * hid;
      const float* cprev = nullptr;
      if (s > 0) cprev = cells.data() + ((reverse ? t + 1 : t - 1) * batch + b) * hid;
      for (std::size_t j = 0; j < hid; ++j) {
        const float ig = sigmoidf(ab[j]);
        const float fg = sigmoidf(ab[hid + j]);
        const float gg = std::tanh(ab[2 * hid + j]);
        const float og = sigmoidf(ab[3 * hid + j]);
        ab[j] = ig;
        ab[hid + j] = fg;
        ab[2 * hid + j] = gg;
        ab[3 * hid + j] = og;
        const float c = fg * (cprev ? cprev[j] : 0.0f) + ig * gg;
        cb[j] = c;
        hb[j] = og * std::tanh(c);
      }
    }
  }

  return make_result({steps, batch, hid}, std::move(out), {x, w_ih, w_hh, bias},
                     [=, acts = std::move(acts), cells = std::move(cells)](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pih = *self.parents[1];
                       Node& phh = *self.parents[2];
                       Node& pb = *self.parents[3];
                       std::vector<float> dpre(rows * g4, 0.0f);
                       std::vector<float> dh_next(batch * hid, 0.0f);
                       std::vector<float> dc_next(batch * hid, 0.0f);
                       float* dwhh = phh.grad_buffer();
                       for (std::size_t s = steps; s-- > 0;) {
                         const std::size_t t = reverse ? steps - 1 - s : s;
                         const bool has_prev = s > 0;
                         const std::size_t tp = reverse ? t + 1 : t - 1;
                         float* da = dpre.data() + t * batch * g4;
                         for (std::size_t b = 0; b < batch; ++b) {
                           const float* ab = acts.data() + (t * batch + b) * g4;
                           const float* cb = cells.data() + (t * batch + b) * hid;
                           const float* cprev = has_prev ? cells.data() + (tp * batch + b) * hid : nullptr;
                           const float* gout = self.grad.data() + (t * batch + b) * hid;
                           float* dab = da + b * g4;
                           for (std::size_t j = 0; j < hid; ++j) {
                             const float ig = ab[j], fg = ab[hid + j], gg = ab[2 * hid + j], og = ab[3 * hid + j];
                             const float tc = std::tanh(cb[j]);
                             const float dh = gout[j] + dh_next[b * hid + j];
                             const float dout = dh * tc;
                             const float dc = dh * og * (1.0f - tc * tc) + dc_next[b * hid + j];
                             const float cp = cprev ? cprev[j] : 0.0f;
                             dab[j] = dc * gg * ig * (1.0f - ig);
                             dab[hid + j] = dc * cp * fg * (1.0f - fg);
                             dab[2 * hid + j] = dc * ig * (1.0f - gg * gg);
                             dab[3 * hid + j] = dout * og * (1.0f - og);
                             dc_next[b * hid + j] = dc * fg;
                           }
                         }
                         std::fill(dh_next.begin(), dh_next.end(), 0.0f);
                         if (has_prev) {
                           simd::gemm_nn(batch, hid, g4, da, phh.value.data(), dh_next.data());
                           if (dwhh) simd::gemm_tn(g4, hid, batch, da, self.value.data() + tp * batch * hid, dwhh);
                         }
                       }
                       if (float* dwih = pih.grad_buffer()) simd::gemm_tn(g4, in, rows, dpre.data(), px.value.data(), dwih);
                       if (float* dx = px.grad_buffer()) simd::gemm_nn(rows, in, g4, dpre.data(), pih.value.data(), dx);
                       if (float* db = pb.grad_buffer())
                         for (std::size_t j = 0; j < g4; ++j) {
                           double s = 0.0;
                           for (std::size_t r = 0; r < rows; ++r) s += dpre[r * g4 + j];
                           db[j] += static_cast<float>(s);
                         }
                     });
}

Tensor bilstm(const Tensor& x, const std::vector<std::pair<LstmWeights, LstmWeights>>& layers) {
  Tensor h = x;
  for (const auto& [fwd, bwd] : layers) {
    Tensor f = lstm(h, fwd.w_ih, fwd.w_hh, fwd.bias, false);
    Tensor b = lstm(h, bwd.w_ih, bwd.w_hh, bwd.bias, true);
    h = concat(f, b, 2);
  }
  return h;
}

// -------------------------------------------------------------------- losses

Tensor l1_loss(const Tensor& est, const Tensor& ref) {
  require_same(est, ref, "l1_loss");
  const std::size_t n = est.numel();
  if (n == 0) throw ShapeError("l1_loss of empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(static_cast<double>(est.values()[i]) - ref.values()[i]);
  return make_result({1}, {static_cast<float>(s / n)}, {est, ref}, [n](Node& self) {
    Node& pe = *self.parents[0];
    Node& pr = *self.parents[1];
    const float g = self.grad[0] / static_cast<float>(n);
    float* de = pe.grad_buffer();
    float* dr = pr.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      const float d = pe.value[i] - pr.value[i];
      const float sg = d > 0.0f ? g : (d < 0.0f ? -g : 0.0f);
      if (de) de[i] += sg;
      if (dr) dr[i] -= sg;
    }
  });
}

Tensor mse_loss(const Tensor& est, const Tensor& ref) {
  require_same(est, ref, "mse_loss");
  const std::size_t n = est.numel();
  if (n == 0) throw ShapeError("mse_loss of empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(est.values()[i]) - ref.values()[i];
    s += d * d;
  }
  return make_result({1}, {static_cast<float>(s / n)}, {est, ref}, [n](Node& self) {
    Node& pe = *self.parents[0];
    Node& pr = *self.parents[1];
    const float g = 2.0f * self.grad[0] / static_cast<float>(n);
    float* de = pe.grad_buffer();
    float* dr = pr.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      const float d = g * (pe.value[i] - pr.value[i]);
      if (de) de[i] += d;
      if (dr) dr[i] -= d;
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  require_same(logits, targets, "bce_with_logits");
  const std::size_t n = logits.numel();
  if (n == 0) throw ShapeError("bce_with_logits of empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits.values()[i], y = targets.values()[i];
    s += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  return make_result({1}, {static_cast<float>(s / n)}, {logits, targets}, [n](Node& self) {
    Node& pz = *self.parents[0];
    Node& py = *self.parents[1];
    const float g = self.grad[0] / static_cast<float>(n);
    float* dz = pz.grad_buffer();
    float* dy = py.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      if (dz) dz[i] += g * (sigmoidf(pz.value[i]) - py.value[i]);
      if (dy) dy[i] -= g * pz.value[i];
    }
  });
}

}  // namespace dmx::ad
