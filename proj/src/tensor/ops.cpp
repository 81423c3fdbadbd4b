// Copyright (c) 2026 The CFT Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cft/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "cft/error.hpp"
#include "cft/tensor/tape.hpp"

namespace cft::ops {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require(t.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                to_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

void require_bias(const std::optional<Tensor>& bias, std::size_t n, const char* op) {
  if (!bias) return;
  require(bias->rank() == 1 && bias->dim(0) == n,
          std::string(op) + ": bias must be [" + std::to_string(n) + "], got " + to_string(bias->shape()));
}

std::vector<Tensor> inputs_with_bias(std::vector<Tensor> in, const std::optional<Tensor>& bias) {
  if (bias) in.push_back(*bias);
  return in;
}

std::size_t product(const Shape& s, std::size_t begin, std::size_t end) {
  std::size_t n = 1;
  for (std::size_t i = begin; i < end; ++i) n *= s[i];
  return n;
}

template <typename F, typename DF>
Tensor unary(const char* name, const Tensor& x, F f, DF df) {
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  return record_op(name, x.shape(), std::move(out), {x},
                   [x, df](const std::vector<double>& g, const GradRefs& gin) {
                     const auto xs = x.data();
                     auto& gx = *gin[0];
                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xs[i]);
                   });
}

struct ResizeTap {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<ResizeTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<ResizeTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double w1 = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - w1, w1};
  }
  return taps;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() >= 2 && b.rank() >= 2, "matmul: operands need rank >= 2, got " + to_string(a.shape()) + " and " +
                                              to_string(b.shape()));
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as[as.size() - 1];
  const std::size_t kb = bs[bs.size() - 2];
  const std::size_t n = bs[bs.size() - 1];
  require(k == kb, "matmul: inner extents differ " + to_string(as) + " x " + to_string(bs));
  const bool shared_b = bs.size() == 2;
  if (!shared_b) {
    require(as.size() == bs.size() && std::equal(as.begin(), as.end() - 2, bs.begin()),
            "matmul: batch extents differ " + to_string(as) + " x " + to_string(bs));
  }
  const std::size_t batch = product(as, 0, as.size() - 2);
  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<double> out(batch * m * n, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t t = 0; t < batch; ++t) {
    const double* A = ad.data() + t * m * k;
    const double* B = bd.data() + (shared_b ? 0 : t * k * n);
    double* C = out.data() + t * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        const double* brow = B + p * n;
        double* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }
  MacCounter::add(static_cast<std::uint64_t>(batch) * m * k * n);

  return record_op("matmul", std::move(out_shape), std::move(out), {a, b},
                   [a, b, batch, m, k, n, shared_b](const std::vector<double>& g, const GradRefs& gin) {
                     const auto ad = a.data();
                     const auto bd = b.data();
                     for (std::size_t t = 0; t < batch; ++t) {
                       const double* A = ad.data() + t * m * k;
                       const double* B = bd.data() + (shared_b ? 0 : t * k * n);
                       const double* G = g.data() + t * m * n;
                       if (gin[0]) {
                         double* GA = gin[0]->data() + t * m * k;
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t p = 0; p < k; ++p) {
                             double s = 0.0;
                             for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
                             GA[i * k + p] += s;
                           }
                         }
                       }
                       if (gin[1]) {
                         double* GB = gin[1]->data() + (shared_b ? 0 : t * k * n);
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t p = 0; p < k; ++p) {
                             const double aip = A[i * k + p];
                             for (std::size_t j = 0; j < n; ++j) GB[p * n + j] += aip * G[i * n + j];
                           }
                         }
                       }
                     }
                   });
}

Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias) {
  require(x.rank() >= 1, "linear: input must have rank >= 1");
  require_rank(weight, 2, "linear weight");
  const std::size_t in = weight.dim(1);
  const std::size_t out_f = weight.dim(0);
  require(x.shape().back() == in,
          "linear: input " + to_string(x.shape()) + " does not match weight " + to_string(weight.shape()));
  require_bias(bias, out_f, "linear");
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;

  std::vector<double> out(rows * out_f);
  const auto xd = x.data();
  const auto wd = weight.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * in;
    for (std::size_t o = 0; o < out_f; ++o) {
      const double* wo = wd.data() + o * in;
      double s = 0.0;
      for (std::size_t c = 0; c < in; ++c) s += xr[c] * wo[c];
      out[r * out_f + o] = bias ? s + bias->data()[o] : s;
    }
  }
  MacCounter::add(static_cast<std::uint64_t>(rows) * in * out_f);

  return record_op("linear", std::move(out_shape), std::move(out), inputs_with_bias({x, weight}, bias),
                   [x, weight, rows, in, out_f](const std::vector<double>& g, const GradRefs& gin) {
                     const auto xd = x.data();
                     const auto wd = weight.data();
                     if (gin[0]) {
                       auto& gx = *gin[0];
                       for (std::size_t r = 0; r < rows; ++r) {
                         double* gxr = gx.data() + r * in;
                         for (std::size_t o = 0; o < out_f; ++o) {
                           const double gro = g[r * out_f + o];
                           const double* wo = wd.data() + o * in;
                           for (std::size_t c = 0; c < in; ++c) gxr[c] += gro * wo[c];
                         }
                       }
                     }
                     if (gin[1]) {
                       auto& gw = *gin[1];
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* xr = xd.data() + r * in;
                         for (std::size_t o = 0; o < out_f; ++o) {
                           const double gro = g[r * out_f + o];
                           double* gwo = gw.data() + o * in;
                           for (std::size_t c = 0; c < in; ++c) gwo[c] += gro * xr[c];
                         }
                       }
                     }
                     if (gin.size() > 2 && gin[2]) {
                       auto& gb = *gin[2];
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t o = 0; o < out_f; ++o) gb[o] += g[r * out_f + o];
                     }
                   });
}

Tensor conv1x1(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias) {
  require_rank(x, 4, "conv1x1 input");
  require_rank(weight, 2, "conv1x1 weight");
  const std::size_t B = x.dim(0), cin = x.dim(1), P = x.dim(2) * x.dim(3);
  const std::size_t cout = weight.dim(0);
  require(weight.dim(1) == cin,
          "conv1x1: weight " + to_string(weight.shape()) + " does not match input " + to_string(x.shape()));
  require_bias(bias, cout, "conv1x1");

  std::vector<double> out(B * cout * P, 0.0);
  const auto xd = x.data();
  const auto wd = weight.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* y = out.data() + (b * cout + o) * P;
      for (std::size_t c = 0; c < cin; ++c) {
        const double w = wd[o * cin + c];
        const double* xc = xd.data() + (b * cin + c) * P;
        for (std::size_t p = 0; p < P; ++p) y[p] += xc[p] * w;
      }
      // Bias last so every output rounds exactly like linear() on token rows.
      if (bias)
        for (std::size_t p = 0; p < P; ++p) y[p] += bias->data()[o];
    }
  }
  MacCounter::add(static_cast<std::uint64_t>(B) * P * cin * cout);

  return record_op("conv1x1", {B, cout, x.dim(2), x.dim(3)}, std::move(out), inputs_with_bias({x, weight}, bias),
                   [x, weight, B, cin, cout, P](const std::vector<double>& g, const GradRefs& gin) {
                     const auto xd = x.data();
                     const auto wd = weight.data();
                     for (std::size_t b = 0; b < B; ++b) {
                       for (std::size_t o = 0; o < cout; ++o) {
                         const double* gy = g.data() + (b * cout + o) * P;
                         for (std::size_t c = 0; c < cin; ++c) {
                           if (gin[0]) {
                             const double w = wd[o * cin + c];
                             double* gx = gin[0]->data() + (b * cin + c) * P;
                             for (std::size_t p = 0; p < P; ++p) gx[p] += w * gy[p];
                           }
                           if (gin[1]) {
                             const double* xc = xd.data() + (b * cin + c) * P;
                             double s = 0.0;
                             for (std::size_t p = 0; p < P; ++p) s += gy[p] * xc[p];
                             (*gin[1])[o * cin + c] += s;
                           }
                         }
                         if (gin.size() > 2 && gin[2]) {
                           double s = 0.0;
                           for (std::size_t p = 0; p < P; ++p) s += gy[p];
                           (*gin[2])[o] += s;
                         }
                       }
                     }
                   });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(x, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  require(stride >= 1, "conv2d: stride must be >= 1");
  const std::size_t B = x.dim(0), cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t cout = weight.dim(0), K = weight.dim(2);
  require(weight.dim(1) == cin && weight.dim(3) == K,
          "conv2d: weight " + to_string(weight.shape()) + " does not match input " + to_string(x.shape()));
  require(H + 2 * padding >= K && W + 2 * padding >= K, "conv2d: kernel larger than padded input");
  require_bias(bias, cout, "conv2d");
  const std::size_t Ho = (H + 2 * padding - K) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - K) / stride + 1;

  // Valid output range along one axis for kernel tap k: in = o*stride + k - padding in [0, n).
  auto valid = [stride, padding](std::size_t k, std::size_t n, std::size_t out_n) {
    std::size_t lo = 0;
    while (lo < out_n && lo * stride + k < padding) ++lo;
    std::size_t hi = lo;
    while (hi < out_n && hi * stride + k - padding < n) ++hi;
    return std::pair<std::size_t, std::size_t>{lo, hi};
  };

  std::vector<double> out(B * cout * Ho * Wo, 0.0);
  const auto xd = x.data();
  const auto wd = weight.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* y = out.data() + (b * cout + o) * Ho * Wo;
      if (bias) std::fill(y, y + Ho * Wo, bias->data()[o]);
      for (std::size_t c = 0; c < cin; ++c) {
        const double* xc = xd.data() + (b * cin + c) * H * W;
        for (std::size_t ky = 0; ky < K; ++ky) {
          const auto [oy0, oy1] = valid(ky, H, Ho);
          for (std::size_t kx = 0; kx < K; ++kx) {
            const auto [ox0, ox1] = valid(kx, W, Wo);
            const double w = wd[((o * cin + c) * K + ky) * K + kx];
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const double* xrow = xc + (oy * stride + ky - padding) * W;
              double* yrow = y + oy * Wo;
              for (std::size_t ox = ox0; ox < ox1; ++ox) yrow[ox] += w * xrow[ox * stride + kx - padding];
            }
          }
        }
      }
    }
  }
  MacCounter::add(static_cast<std::uint64_t>(B) * Ho * Wo * cout * cin * K * K);

  return record_op(
      "conv2d", {B, cout, Ho, Wo}, std::move(out), inputs_with_bias({x, weight}, bias),
      [x, weight, B, cin, cout, H, W, K, Ho, Wo, stride, padding, valid](const std::vector<double>& g,
                                                                         const GradRefs& gin) {
        const auto xd = x.data();
        const auto wd = weight.data();
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t o = 0; o < cout; ++o) {
            const double* gy = g.data() + (b * cout + o) * Ho * Wo;
            for (std::size_t c = 0; c < cin; ++c) {
              const double* xc = xd.data() + (b * cin + c) * H * W;
              double* gxc = gin[0] ? gin[0]->data() + (b * cin + c) * H * W : nullptr;
              for (std::size_t ky = 0; ky < K; ++ky) {
                const auto [oy0, oy1] = valid(ky, H, Ho);
                for (std::size_t kx = 0; kx < K; ++kx) {
                  const auto [ox0, ox1] = valid(kx, W, Wo);
                  const std::size_t widx = ((o * cin + c) * K + ky) * K + kx;
                  const double w = wd[widx];
                  double gw = 0.0;
                  for (std::size_t oy = oy0; oy < oy1; ++oy) {
                    const std::size_t row = (oy * stride + ky - padding) * W;
                    for (std::size_t ox = ox0; ox < ox1; ++ox) {
                      const std::size_t xi = row + ox * stride + kx - padding;
                      const double gv = gy[oy * Wo + ox];
                      if (gxc) gxc[xi] += w * gv;
                      gw += gv * xc[xi];
                    }
                  }
                  if (gin[1]) (*gin[1])[widx] += gw;
                }
              }
            }
            if (gin.size() > 2 && gin[2]) {
              double s = 0.0;
              for (std::size_t p = 0; p < Ho * Wo; ++p) s += gy[p];
              (*gin[2])[o] += s;
            }
          }
        }
      });
}

Tensor depthwise_conv3x3(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias) {
  require_rank(x, 4, "depthwise_conv3x3 input");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(weight.rank() == 3 && weight.dim(0) == C && weight.dim(1) == 3 && weight.dim(2) == 3,
          "depthwise_conv3x3: weight must be [" + std::to_string(C) + "x3x3], got " + to_string(weight.shape()));
  require_bias(bias, C, "depthwise_conv3x3");

  std::vector<double> out(B * C * H * W, 0.0);
  const auto xd = x.data();
  const auto wd = weight.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* xc = xd.data() + (b * C + c) * H * W;
      double* y = out.data() + (b * C + c) * H * W;
      if (bias) std::fill(y, y + H * W, bias->data()[c]);
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const double w = wd[(c * 3 + ky) * 3 + kx];
          // input row = oy + ky - 1, input col = ox + kx - 1
          const std::size_t oy0 = ky == 0 ? 1 : 0, oy1 = ky == 2 ? H - 1 : H;
          const std::size_t ox0 = kx == 0 ? 1 : 0, ox1 = kx == 2 ? W - 1 : W;
          for (std::size_t oy = oy0; oy < oy1 && oy1 <= H; ++oy) {
            const double* xrow = xc + (oy + ky - 1) * W;
            double* yrow = y + oy * W;
            for (std::size_t ox = ox0; ox < ox1 && ox1 <= W; ++ox) yrow[ox] += w * xrow[ox + kx - 1];
          }
        }
      }
    }
  }
  MacCounter::add(static_cast<std::uint64_t>(B) * C * H * W * 9);

  return record_op("depthwise_conv3x3", x.shape(), std::move(out), inputs_with_bias({x, weight}, bias),
                   [x, weight, B, C, H, W](const std::vector<double>& g, const GradRefs& gin) {
                     const auto xd = x.data();
                     const auto wd = weight.data();
                     for (std::size_t b = 0; b < B; ++b) {
                       for (std::size_t c = 0; c < C; ++c) {
                         const double* xc = xd.data() + (b * C + c) * H * W;
                         const double* gy = g.data() + (b * C + c) * H * W;
                         double* gxc = gin[0] ? gin[0]->data() + (b * C + c) * H * W : nullptr;
                         for (std::size_t ky = 0; ky < 3; ++ky) {
                           for (std::size_t kx = 0; kx < 3; ++kx) {
                             const std::size_t widx = (c * 3 + ky) * 3 + kx;
                             const double w = wd[widx];
                             const std::size_t oy0 = ky == 0 ? 1 : 0, oy1 = ky == 2 ? H - 1 : H;
                             const std::size_t ox0 = kx == 0 ? 1 : 0, ox1 = kx == 2 ? W - 1 : W;
                             double gw = 0.0;
                             for (std::size_t oy = oy0; oy < oy1 && oy1 <= H; ++oy) {
                               for (std::size_t ox = ox0; ox < ox1 && ox1 <= W; ++ox) {
                                 const std::size_t xi = (oy + ky - 1) * W + ox + kx - 1;
                                 const double gv = gy[oy * W + ox];
                                 if (gxc) gxc[xi] += w * gv;
                                 gw += gv * xc[xi];
                               }
                             }
                             if (gin[1]) (*gin[1])[widx] += gw;
                           }
                         }
                         if (gin.size() > 2 && gin[2]) {
                           double s = 0.0;
                           for (std::size_t p = 0; p < H * W; ++p) s += gy[p];
                           (*gin[2])[c] += s;
                         }
                       }
                     }
                   });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require(axis < x.rank(), "softmax: axis " + std::to_string(axis) + " out of range for " + to_string(x.shape()));
  const Shape& s = x.shape();
  const std::size_t outer = product(s, 0, axis);
  const std::size_t len = s[axis];
  const std::size_t inner = product(s, axis + 1, s.size());
  const auto xd = x.data();
  auto out = std::make_shared<std::vector<double>>(xd.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xd[base + j * inner] - mx);
        (*out)[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) (*out)[base + j * inner] /= total;
    }
  }
  std::vector<double> result = *out;
  return record_op("softmax", s, std::move(result), {x},
                   [y = out, outer, len, inner](const std::vector<double>& g, const GradRefs& gin) {
                     auto& gx = *gin[0];
                     for (std::size_t o = 0; o < outer; ++o) {
                       for (std::size_t i = 0; i < inner; ++i) {
                         const std::size_t base = o * len * inner + i;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * (*y)[base + j * inner];
                         for (std::size_t j = 0; j < len; ++j) {
                           const std::size_t k = base + j * inner;
                           gx[k] += (*y)[k] * (g[k] - dot);
                         }
                       }
                     }
                   });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require(x.rank() >= 1, "layer_norm: input must have rank >= 1");
  const std::size_t C = x.shape().back();
  require(gamma.rank() == 1 && gamma.dim(0) == C && beta.rank() == 1 && beta.dim(0) == C,
          "layer_norm: affine parameters must be [" + std::to_string(C) + "]");
  const std::size_t rows = x.numel() / C;
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  auto xhat = std::make_shared<std::vector<double>>(xd.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * C;
    double mu = 0.0;
    for (std::size_t c = 0; c < C; ++c) mu += xr[c];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(C);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < C; ++c) {
      const double h = (xr[c] - mu) * rs;
      (*xhat)[r * C + c] = h;
      out[r * C + c] = h * gd[c] + bd[c];
    }
  }
  return record_op("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                   [xhat, rstd, gamma, rows, C](const std::vector<double>& g, const GradRefs& gin) {
                     const auto gd = gamma.data();
                     const double inv_c = 1.0 / static_cast<double>(C);
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* gr = g.data() + r * C;
                       const double* hr = xhat->data() + r * C;
                       if (gin[0]) {
                         double mean_d = 0.0, mean_dh = 0.0;
                         for (std::size_t c = 0; c < C; ++c) {
                           const double d = gr[c] * gd[c];
                           mean_d += d;
                           mean_dh += d * hr[c];
                         }
                         mean_d *= inv_c;
                         mean_dh *= inv_c;
                         double* gx = gin[0]->data() + r * C;
                         for (std::size_t c = 0; c < C; ++c)
                           gx[c] += (*rstd)[r] * (gr[c] * gd[c] - mean_d - hr[c] * mean_dh);
                       }
                       if (gin[1])
                         for (std::size_t c = 0; c < C; ++c) (*gin[1])[c] += gr[c] * hr[c];
                       if (gin[2])
                         for (std::size_t c = 0; c < C; ++c) (*gin[2])[c] += gr[c];
                     }
                   });
}

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 4, "bilinear_resize input");
  require(out_h >= 1 && out_w >= 1, "bilinear_resize: output extents must be >= 1");
  const std::size_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto ty = bilinear_taps(H, out_h);
  const auto tx = bilinear_taps(W, out_w);
  const auto xd = x.data();
  std::vector<double> out(planes * out_h * out_w);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* xp = xd.data() + p * H * W;
    double* yp = out.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const ResizeTap& a = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const ResizeTap& b = tx[ox];
        yp[oy * out_w + ox] = a.w0 * (b.w0 * xp[a.i0 * W + b.i0] + b.w1 * xp[a.i0 * W + b.i1]) +
                              a.w1 * (b.w0 * xp[a.i1 * W + b.i0] + b.w1 * xp[a.i1 * W + b.i1]);
      }
    }
  }
  return record_op("bilinear_resize", {x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {x},
                   [ty, tx, planes, H, W, out_h, out_w](const std::vector<double>& g, const GradRefs& gin) {
                     auto& gx = *gin[0];
                     for (std::size_t p = 0; p < planes; ++p) {
                       double* gxp = gx.data() + p * H * W;
                       const double* gp = g.data() + p * out_h * out_w;
                       for (std::size_t oy = 0; oy < out_h; ++oy) {
                         const ResizeTap& a = ty[oy];
                         for (std::size_t ox = 0; ox < out_w; ++ox) {
                           const ResizeTap& b = tx[ox];
                           const double v = gp[oy * out_w + ox];
                           gxp[a.i0 * W + b.i0] += a.w0 * b.w0 * v;
                           gxp[a.i0 * W + b.i1] += a.w0 * b.w1 * v;
                           gxp[a.i1 * W + b.i0] += a.w1 * b.w0 * v;
                           gxp[a.i1 * W + b.i1] += a.w1 * b.w1 * v;
                         }
                       }
                     }
                   });
}

Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 4, "adaptive_avg_pool input");
  const std::size_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  require(out_h >= 1 && out_w >= 1 && out_h <= H && out_w <= W,
          "adaptive_avg_pool: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
              " must not exceed input " + to_string(x.shape()));
  auto window = [](std::size_t i, std::size_t in, std::size_t out) {
    return std::pair<std::size_t, std::size_t>{i * in / out, ((i + 1) * in + out - 1) / out};
  };
  const auto xd = x.data();
  std::vector<double> out(planes * out_h * out_w);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* xp = xd.data() + p * H * W;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto [y0, y1] = window(oy, H, out_h);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto [x0, x1] = window(ox, W, out_w);
        double s = 0.0;
        for (std::size_t yy = y0; yy < y1; ++yy)
          for (std::size_t xx = x0; xx < x1; ++xx) s += xp[yy * W + xx];
        out[(p * out_h + oy) * out_w + ox] = s / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return record_op("adaptive_avg_pool", {x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {x},
                   [window, planes, H, W, out_h, out_w](const std::vector<double>& g, const GradRefs& gin) {
                     auto& gx = *gin[0];
                     for (std::size_t p = 0; p < planes; ++p) {
                       for (std::size_t oy = 0; oy < out_h; ++oy) {
                         const auto [y0, y1] = window(oy, H, out_h);
                         for (std::size_t ox = 0; ox < out_w; ++ox) {
                           const auto [x0, x1] = window(ox, W, out_w);
                           const double v =
                               g[(p * out_h + oy) * out_w + ox] / static_cast<double>((y1 - y0) * (x1 - x0));
                           for (std::size_t yy = y0; yy < y1; ++yy)
                             for (std::size_t xx = x0; xx < x1; ++xx) gx[p * H * W + yy * W + xx] += v;
                         }
                       }
                     }
                   });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  return record_op("add", a.shape(), std::move(out), {a, b}, [](const std::vector<double>& g, const GradRefs& gin) {
    for (auto* gi : gin)
      if (gi)
        for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  return record_op("sub", a.shape(), std::move(out), {a, b}, [](const std::vector<double>& g, const GradRefs& gin) {
    if (gin[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
    if (gin[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return record_op("mul", a.shape(), std::move(out), {a, b},
                   [a, b](const std::vector<double>& g, const GradRefs& gin) {
                     const auto ad = a.data();
                     const auto bd = b.data();
                     if (gin[0])
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * bd[i];
                     if (gin[1])
                       for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * ad[i];
                   });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Tensor gelu(const Tensor& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  return unary(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v))); },
      [](double v) {
        const double t = std::tanh(k * (v + c * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * k * (1.0 + 3.0 * c * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  auto f = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary("sigmoid", x, f, [f](double v) {
    const double s = f(v);
    return s * (1.0 - s);
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  require(axis < s0.size(), "concat: axis out of range for " + to_string(s0));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    require(s.size() == s0.size(), "concat: rank mismatch " + to_string(s) + " vs " + to_string(s0));
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis) require(s[d] == s0[d], "concat: extent mismatch " + to_string(s) + " vs " + to_string(s0));
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = product(s0, 0, axis);
  const std::size_t inner = product(s0, axis + 1, s0.size());
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    const std::size_t row = p.dim(axis) * inner;
    const auto pd = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(pd.begin() + o * row, pd.begin() + (o + 1) * row, out.begin() + o * out_row + off);
    off += row;
  }
  std::vector<std::size_t> rows;
  for (const Tensor& p : parts) rows.push_back(p.dim(axis) * inner);
  return record_op("concat", std::move(out_shape), std::move(out), parts,
                   [offsets, rows, outer, out_row](const std::vector<double>& g, const GradRefs& gin) {
                     for (std::size_t k = 0; k < gin.size(); ++k) {
                       if (!gin[k]) continue;
                       auto& gk = *gin[k];
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t i = 0; i < rows[k]; ++i) gk[o * rows[k] + i] += g[o * out_row + offsets[k] + i];
                     }
                   });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  require(axis < s.size(), "slice: axis out of range for " + to_string(s));
  require(start + length <= s[axis] && length > 0, "slice: range out of bounds for " + to_string(s));
  const std::size_t outer = product(s, 0, axis);
  const std::size_t inner = product(s, axis + 1, s.size());
  const std::size_t in_row = s[axis] * inner;
  const std::size_t out_row = length * inner;
  const std::size_t off = start * inner;
  Shape out_shape = s;
  out_shape[axis] = length;
  const auto xd = x.data();
  std::vector<double> out(outer * out_row);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(xd.begin() + o * in_row + off, xd.begin() + o * in_row + off + out_row, out.begin() + o * out_row);
  return record_op("slice", std::move(out_shape), std::move(out), {x},
                   [outer, in_row, out_row, off](const std::vector<double>& g, const GradRefs& gin) {
                     auto& gx = *gin[0];
                     for (std::size_t o = 0; o < outer; ++o)
                       for (std::size_t i = 0; i < out_row; ++i) gx[o * in_row + off + i] += g[o * out_row + i];
                   });
}

Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b) {
  const Shape& s = x.shape();
  require(axis_a < s.size() && axis_b < s.size(), "transpose: axis out of range for " + to_string(s));
  if (axis_a == axis_b) return reshape(x, s);
  if (axis_a > axis_b) std::swap(axis_a, axis_b);
  // View as [A, X, M, Y, N] -> [A, Y, M, X, N].
  const std::size_t A = product(s, 0, axis_a);
  const std::size_t X = s[axis_a];
  const std::size_t M = product(s, axis_a + 1, axis_b);
  const std::size_t Y = s[axis_b];
  const std::size_t N = product(s, axis_b + 1, s.size());
  Shape out_shape = s;
  std::swap(out_shape[axis_a], out_shape[axis_b]);
  auto permute = [A, X, M, Y, N](const double* src, double* dst, bool forward) {
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t y = 0; y < Y; ++y)
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t xx = 0; xx < X; ++xx) {
            const std::size_t o = (((a * Y + y) * M + m) * X + xx) * N;
            const std::size_t i = (((a * X + xx) * M + m) * Y + y) * N;
            for (std::size_t n = 0; n < N; ++n) {
              if (forward)
                dst[o + n] = src[i + n];
              else
                dst[i + n] += src[o + n];
            }
          }
  };
  std::vector<double> out(x.numel());
  permute(x.data().data(), out.data(), true);
  return record_op("transpose", std::move(out_shape), std::move(out), {x},
                   [permute](const std::vector<double>& g, const GradRefs& gin) {
                     permute(g.data(), gin[0]->data(), false);
                   });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  require(numel(shape) == x.numel(), "reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  const auto xd = x.data();
  return record_op("reshape", shape, std::vector<double>(xd.begin(), xd.end()), {x},
                   [](const std::vector<double>& g, const GradRefs& gin) {
                     for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                   });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return record_op("sum", {}, {s}, {x}, [](const std::vector<double>& g, const GradRefs& gin) {
    for (double& v : *gin[0]) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.data()) s += v;
  return record_op("mean", {}, {s / n}, {x}, [n](const std::vector<double>& g, const GradRefs& gin) {
    for (double& v : *gin[0]) v += g[0] / n;
  });
}

Tensor to_tokens(const Tensor& x) {
  require_rank(x, 4, "to_tokens");
  return transpose(reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}), 1, 2);
}

Tensor from_tokens(const Tensor& tokens, std::size_t h, std::size_t w) {
  require_rank(tokens, 3, "from_tokens");
  require(tokens.dim(1) == h * w, "from_tokens: token count " + std::to_string(tokens.dim(1)) + " is not " +
                                      std::to_string(h) + "x" + std::to_string(w));
  return reshape(transpose(tokens, 1, 2), {tokens.dim(0), tokens.dim(2), h, w});
}

}  // namespace cft::ops
