#pragma once

#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>

#include "scpgan/common.hpp"

// Minimal reverse-mode autodiff over dense double tensors: a dynamic tape of
// backward closures, enough ops for small conv nets plus the framing/DFT ops
// the spectral loss paths need.

namespace scpgan::autonn {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily by ensure_grad
  bool requires_grad = false;

  std::size_t numel() const { return value.size(); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeMismatch("tensor: non-positive dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline TensorPtr make_tensor(std::vector<int> shape, bool requires_grad = false) {
  auto t = std::make_shared<Tensor>();
  t->value.assign(shape_numel(shape), 0.0);
  t->shape = std::move(shape);
  t->requires_grad = requires_grad;
  return t;
}

inline TensorPtr make_const(std::vector<int> shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) throw ShapeMismatch("make_const: size mismatch");
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->value = std::move(data);
  return t;
}

inline TensorPtr make_scalar(double v, bool requires_grad = false) {
  auto t = make_tensor({1}, requires_grad);
  t->value[0] = v;
  return t;
}

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

inline void check_finite(const Tensor& t, const char* op) {
  if (!all_finite(t.value)) throw NonFinite(std::string(op) + ": non-finite value");
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

class Tape {
 public:
  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients
  // accumulate, so parameter grads must be zeroed by the caller between
  // unrelated passes.
  void backward(const TensorPtr& loss) {
    if (loss->numel() != 1) throw NotScalar("backward: loss is not a scalar");
    loss->ensure_grad();
    loss->grad[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void clear() { ops_.clear(); }
  std::size_t size() const { return ops_.size(); }

 private:
  std::vector<std::function<void()>> ops_;
};

namespace detail {

inline bool want_grad(const Tape* tape, std::initializer_list<const TensorPtr*> ins) {
  if (!tape) return false;
  for (const TensorPtr* p : ins)
    if ((*p)->requires_grad) return true;
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (!same_shape(*a, *b)) throw ShapeMismatch("add: shapes differ");
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] + b->value[i];
  check_finite(*out, "add");
  if (detail::want_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < out->numel(); ++i) b->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

inline TensorPtr sub(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (!same_shape(*a, *b)) throw ShapeMismatch("sub: shapes differ");
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] - b->value[i];
  check_finite(*out, "sub");
  if (detail::want_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < out->numel(); ++i) b->grad[i] -= out->grad[i];
      }
    });
  }
  return out;
}

inline TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (!same_shape(*a, *b)) throw ShapeMismatch("mul: shapes differ");
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] * b->value[i];
  check_finite(*out, "mul");
  if (detail::want_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i] * b->value[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < out->numel(); ++i) b->grad[i] += out->grad[i] * a->value[i];
      }
    });
  }
  return out;
}

inline TensorPtr scale(Tape* tape, const TensorPtr& a, double c) {
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] * c;
  check_finite(*out, "scale");
  if (detail::want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out, c] {
      a->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i] * c;
    });
  }
  return out;
}

inline TensorPtr add_scalar(Tape* tape, const TensorPtr& a, double c) {
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] + c;
  check_finite(*out, "add_scalar");
  if (detail::want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out] {
      a->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i];
    });
  }
  return out;
}

inline TensorPtr square(Tape* tape, const TensorPtr& a) {
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] * a->value[i];
  check_finite(*out, "square");
  if (detail::want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out] {
      a->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += 2.0 * a->value[i] * out->grad[i];
    });
  }
  return out;
}

// sqrt(x + eps); the offset keeps the derivative bounded at x = 0
inline TensorPtr sqrt_eps(Tape* tape, const TensorPtr& a, double eps = 1e-12) {
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->numel(); ++i) out->value[i] = std::sqrt(a->value[i] + eps);
  check_finite(*out, "sqrt_eps");
  if (detail::want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out] {
      a->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i)
        a->grad[i] += out->grad[i] * 0.5 / out->value[i];
    });
  }
  return out;
}

// (x + eps)^c for x >= 0
inline TensorPtr powc(Tape* tape, const TensorPtr& a, double c, double eps = 1e-12) {
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->numel(); ++i) out->value[i] = std::pow(a->value[i] + eps, c);
  check_finite(*out, "powc");
  if (detail::want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out, c, eps] {
      a->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i)
        a->grad[i] += out->grad[i] * c * out->value[i] / (a->value[i] + eps);
    });
  }
  return out;
}

inline TensorPtr abs_val(Tape* tape, const TensorPtr& a) {
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->numel(); ++i) out->value[i] = std::abs(a->value[i]);
  check_finite(*out, "abs");
  if (detail::want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out] {
      a->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i)
        a->grad[i] += out->grad[i] * (a->value[i] > 0.0 ? 1.0 : (a->value[i] < 0.0 ? -1.0 : 0.0));
    });
  }
  return out;
}

inline TensorPtr relu(Tape* tape, const TensorPtr& a) {
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
  check_finite(*out, "relu");
  if (detail::want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out] {
      a->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i)
        if (a->value[i] > 0.0) a->grad[i] += out->grad[i];
    });
  }
  return out;
}

inline TensorPtr sigmoid(Tape* tape, const TensorPtr& a) {
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->numel(); ++i) {
    const double x = a->value[i];
    if (x >= 0.0) {
      const double e = std::exp(-x);
      out->value[i] = 1.0 / (1.0 + e);
    } else {
      const double e = std::exp(x);
      out->value[i] = e / (1.0 + e);
    }
  }
  check_finite(*out, "sigmoid");
  if (detail::want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out] {
      a->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i) {
        const double s = out->value[i];
        a->grad[i] += out->grad[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

// elementwise multiply by a fixed coefficient vector (windows, envelopes)
inline TensorPtr mul_coeff(Tape* tape, const TensorPtr& a,
                           std::shared_ptr<const std::vector<double>> coeff) {
  if (a->numel() != coeff->size()) throw ShapeMismatch("mul_coeff: size mismatch");
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] * (*coeff)[i];
  check_finite(*out, "mul_coeff");
  if (detail::want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out, coeff] {
      a->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i] * (*coeff)[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline TensorPtr mean(Tape* tape, const TensorPtr& a) {
  auto out = make_tensor({1});
  double s = 0.0;
  for (double v : a->value) s += v;
  out->value[0] = s / static_cast<double>(a->numel());
  check_finite(*out, "mean");
  if (detail::want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out] {
      a->ensure_grad();
      const double g = out->grad[0] / static_cast<double>(a->numel());
      for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += g;
    });
  }
  return out;
}

inline TensorPtr sum(Tape* tape, const TensorPtr& a) {
  auto out = make_tensor({1});
  double s = 0.0;
  for (double v : a->value) s += v;
  out->value[0] = s;
  check_finite(*out, "sum");
  if (detail::want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out] {
      a->ensure_grad();
      for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[0];
    });
  }
  return out;
}

// [C,H,W] -> [C], mean over each channel plane
inline TensorPtr global_mean_channels(Tape* tape, const TensorPtr& a) {
  if (a->shape.size() != 3) throw ShapeMismatch("global_mean_channels: want [C,H,W]");
  const int c = a->shape[0];
  const std::size_t plane = a->numel() / static_cast<std::size_t>(c);
  auto out = make_tensor({c});
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    const double* p = a->value.data() + plane * static_cast<std::size_t>(ch);
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    out->value[static_cast<std::size_t>(ch)] = s / static_cast<double>(plane);
  }
  check_finite(*out, "global_mean_channels");
  if (detail::want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out, c, plane] {
      a->ensure_grad();
      for (int ch = 0; ch < c; ++ch) {
        const double g = out->grad[static_cast<std::size_t>(ch)] / static_cast<double>(plane);
        double* p = a->grad.data() + plane * static_cast<std::size_t>(ch);
        for (std::size_t i = 0; i < plane; ++i) p[i] += g;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

inline TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
    throw ShapeMismatch("matmul: incompatible shapes");
  const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
  auto out = make_tensor({m, n});
  const double* pa = a->value.data();
  const double* pb = b->value.data();
  double* pc = out->value.data();
  parallel_for(static_cast<std::size_t>(m), [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      double* crow = pc + i * static_cast<std::size_t>(n);
      for (int l = 0; l < k; ++l) {
        const double av = pa[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(l)];
        const double* brow = pb + static_cast<std::size_t>(l) * static_cast<std::size_t>(n);
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }, 4);
  check_finite(*out, "matmul");
  if (detail::want_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out, m, k, n] {
      const double* pdc = out->grad.data();
      if (a->requires_grad) {
        a->ensure_grad();
        double* pda = a->grad.data();
        const double* pb2 = b->value.data();
        parallel_for(static_cast<std::size_t>(m), [&](std::size_t i0, std::size_t i1) {
          for (std::size_t i = i0; i < i1; ++i)
            for (int l = 0; l < k; ++l) {
              const double* brow = pb2 + static_cast<std::size_t>(l) * static_cast<std::size_t>(n);
              const double* dcrow = pdc + i * static_cast<std::size_t>(n);
              double s = 0.0;
              for (int j = 0; j < n; ++j) s += dcrow[j] * brow[j];
              pda[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(l)] += s;
            }
        }, 4);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        double* pdb = b->grad.data();
        const double* pa2 = a->value.data();
        parallel_for(static_cast<std::size_t>(k), [&](std::size_t l0, std::size_t l1) {
          for (std::size_t l = l0; l < l1; ++l) {
            double* dbrow = pdb + l * static_cast<std::size_t>(n);
            for (int i = 0; i < m; ++i) {
              const double av = pa2[static_cast<std::size_t>(i) * static_cast<std::size_t>(k) + l];
              const double* dcrow = pdc + static_cast<std::size_t>(i) * static_cast<std::size_t>(n);
              for (int j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
            }
          }
        }, 4);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d, same padding, odd kernels
// ---------------------------------------------------------------------------

namespace detail {

// valid output range for ix = x*stride + off to land in [0, w)
inline void conv_x_range(int stride, int off, int w, int w_out, int& x0, int& x1) {
  x0 = off < 0 ? (-off + stride - 1) / stride : 0;
  const int lim = w - off;
  x1 = lim <= 0 ? 0 : std::min(w_out, (lim + stride - 1) / stride);
  if (x1 < x0) x1 = x0;
}

}  // namespace detail

inline TensorPtr conv2d(Tape* tape, const TensorPtr& x, const TensorPtr& w,
                        const TensorPtr& b, int stride = 1) {
  if (x->shape.size() != 3 || w->shape.size() != 4 || b->shape.size() != 1)
    throw ShapeMismatch("conv2d: want x[C,H,W], w[F,C,kh,kw], b[F]");
  const int ci = x->shape[0], h = x->shape[1], wd = x->shape[2];
  const int f = w->shape[0], kh = w->shape[2], kw = w->shape[3];
  if (w->shape[1] != ci || b->shape[0] != f) throw ShapeMismatch("conv2d: channel mismatch");
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeMismatch("conv2d: kernels must be odd");
  const int ph = kh / 2, pw = kw / 2;
  const int ho = (h - 1) / stride + 1, wo = (wd - 1) / stride + 1;

  auto out = make_tensor({f, ho, wo});
  const std::size_t in_plane = static_cast<std::size_t>(h) * wd;
  const std::size_t out_plane = static_cast<std::size_t>(ho) * wo;
  const std::size_t ker = static_cast<std::size_t>(kh) * kw;

  parallel_for(static_cast<std::size_t>(f), [&](std::size_t f0, std::size_t f1) {
    for (std::size_t fc = f0; fc < f1; ++fc) {
      double* op = out->value.data() + fc * out_plane;
      const double bias = b->value[fc];
      for (std::size_t i = 0; i < out_plane; ++i) op[i] = bias;
      for (int c = 0; c < ci; ++c) {
        const double* ip = x->value.data() + static_cast<std::size_t>(c) * in_plane;
        for (int ki = 0; ki < kh; ++ki)
          for (int kj = 0; kj < kw; ++kj) {
            const double wv = w->value[fc * static_cast<std::size_t>(ci) * ker +
                                       static_cast<std::size_t>(c) * ker +
                                       static_cast<std::size_t>(ki * kw + kj)];
            int x0, x1;
            detail::conv_x_range(stride, kj - pw, wd, wo, x0, x1);
            for (int y = 0; y < ho; ++y) {
              const int iy = y * stride + ki - ph;
              if (iy < 0 || iy >= h) continue;
              double* orow = op + static_cast<std::size_t>(y) * wo;
              const double* irow = ip + static_cast<std::size_t>(iy) * wd;
              if (stride == 1) {
                const int shift = kj - pw;
                for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * irow[xx + shift];
              } else {
                for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * irow[xx * stride + kj - pw];
              }
            }
          }
      }
    }
  }, 1);
  check_finite(*out, "conv2d");

  if (detail::want_grad(tape, {&x, &w, &b})) {
    out->requires_grad = true;
    tape->record([x, w, b, out, stride, ci, h, wd, f, kh, kw, ph, pw, ho, wo, in_plane, out_plane, ker] {
      if (b->requires_grad) {
        b->ensure_grad();
        for (int fc = 0; fc < f; ++fc) {
          const double* dorow = out->grad.data() + static_cast<std::size_t>(fc) * out_plane;
          double s = 0.0;
          for (std::size_t i = 0; i < out_plane; ++i) s += dorow[i];
          b->grad[static_cast<std::size_t>(fc)] += s;
        }
      }
      if (w->requires_grad) {
        w->ensure_grad();
        parallel_for(static_cast<std::size_t>(f), [&](std::size_t f0, std::size_t f1) {
          for (std::size_t fc = f0; fc < f1; ++fc) {
            const double* dop = out->grad.data() + fc * out_plane;
            for (int c = 0; c < ci; ++c) {
              const double* ip = x->value.data() + static_cast<std::size_t>(c) * in_plane;
              for (int ki = 0; ki < kh; ++ki)
                for (int kj = 0; kj < kw; ++kj) {
                  int x0, x1;
                  detail::conv_x_range(stride, kj - pw, wd, wo, x0, x1);
                  double s = 0.0;
                  for (int y = 0; y < ho; ++y) {
                    const int iy = y * stride + ki - ph;
                    if (iy < 0 || iy >= h) continue;
                    const double* dorow = dop + static_cast<std::size_t>(y) * wo;
                    const double* irow = ip + static_cast<std::size_t>(iy) * wd;
                    if (stride == 1) {
                      const int shift = kj - pw;
                      for (int xx = x0; xx < x1; ++xx) s += dorow[xx] * irow[xx + shift];
                    } else {
                      for (int xx = x0; xx < x1; ++xx) s += dorow[xx] * irow[xx * stride + kj - pw];
                    }
                  }
                  w->grad[fc * static_cast<std::size_t>(ci) * ker + static_cast<std::size_t>(c) * ker +
                          static_cast<std::size_t>(ki * kw + kj)] += s;
                }
            }
          }
        }, 1);
      }
      if (x->requires_grad) {
        x->ensure_grad();
        parallel_for(static_cast<std::size_t>(ci), [&](std::size_t c0, std::size_t c1) {
          for (std::size_t c = c0; c < c1; ++c) {
            double* dip = x->grad.data() + c * in_plane;
            for (int fc = 0; fc < f; ++fc) {
              const double* dop = out->grad.data() + static_cast<std::size_t>(fc) * out_plane;
              for (int ki = 0; ki < kh; ++ki)
                for (int kj = 0; kj < kw; ++kj) {
                  const double wv = w->value[static_cast<std::size_t>(fc) * ci * ker + c * ker +
                                             static_cast<std::size_t>(ki * kw + kj)];
                  int x0, x1;
                  detail::conv_x_range(stride, kj - pw, wd, wo, x0, x1);
                  for (int y = 0; y < ho; ++y) {
                    const int iy = y * stride + ki - ph;
                    if (iy < 0 || iy >= h) continue;
                    const double* dorow = dop + static_cast<std::size_t>(y) * wo;
                    double* dirow = dip + static_cast<std::size_t>(iy) * wd;
                    if (stride == 1) {
                      const int shift = kj - pw;
                      for (int xx = x0; xx < x1; ++xx) dirow[xx + shift] += wv * dorow[xx];
                    } else {
                      for (int xx = x0; xx < x1; ++xx) dirow[xx * stride + kj - pw] += wv * dorow[xx];
                    }
                  }
                }
            }
          }
        }, 1);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// dense (affine) and concat
// ---------------------------------------------------------------------------

inline TensorPtr dense(Tape* tape, const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  if (x->shape.size() != 1 || w->shape.size() != 2 || b->shape.size() != 1 ||
      w->shape[1] != x->shape[0] || w->shape[0] != b->shape[0])
    throw ShapeMismatch("dense: want x[n], w[m,n], b[m]");
  const int m = w->shape[0], n = w->shape[1];
  auto out = make_tensor({m});
  for (int j = 0; j < m; ++j) {
    double s = b->value[static_cast<std::size_t>(j)];
    const double* wrow = w->value.data() + static_cast<std::size_t>(j) * n;
    for (int i = 0; i < n; ++i) s += wrow[i] * x->value[static_cast<std::size_t>(i)];
    out->value[static_cast<std::size_t>(j)] = s;
  }
  check_finite(*out, "dense");
  if (detail::want_grad(tape, {&x, &w, &b})) {
    out->requires_grad = true;
    tape->record([x, w, b, out, m, n] {
      for (int j = 0; j < m; ++j) {
        const double g = out->grad[static_cast<std::size_t>(j)];
        if (b->requires_grad) {
          b->ensure_grad();
          b->grad[static_cast<std::size_t>(j)] += g;
        }
        if (w->requires_grad) {
          w->ensure_grad();
          double* dwrow = w->grad.data() + static_cast<std::size_t>(j) * n;
          for (int i = 0; i < n; ++i) dwrow[i] += g * x->value[static_cast<std::size_t>(i)];
        }
        if (x->requires_grad) {
          x->ensure_grad();
          const double* wrow = w->value.data() + static_cast<std::size_t>(j) * n;
          for (int i = 0; i < n; ++i) x->grad[static_cast<std::size_t>(i)] += g * wrow[i];
        }
      }
    });
  }
  return out;
}

inline TensorPtr concat_channels(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->shape.size() != 3 || b->shape.size() != 3 || a->shape[1] != b->shape[1] ||
      a->shape[2] != b->shape[2])
    throw ShapeMismatch("concat_channels: plane shapes differ");
  auto out = make_tensor({a->shape[0] + b->shape[0], a->shape[1], a->shape[2]});
  std::copy(a->value.begin(), a->value.end(), out->value.begin());
  std::copy(b->value.begin(), b->value.end(), out->value.begin() + static_cast<std::ptrdiff_t>(a->numel()));
  if (detail::want_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        const std::size_t off = a->numel();
        for (std::size_t i = 0; i < b->numel(); ++i) b->grad[i] += out->grad[off + i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Index ops: take (gather) and scatter_add; adjoints of each other. These
// carry framing plans, padding and trimming for the spectral ops.
// ---------------------------------------------------------------------------

using IndexPlan = std::shared_ptr<const std::vector<int>>;

inline TensorPtr take(Tape* tape, const TensorPtr& x, const IndexPlan& idx,
                      std::vector<int> out_shape) {
  if (shape_numel(out_shape) != idx->size()) throw ShapeMismatch("take: plan size mismatch");
  auto out = make_tensor(std::move(out_shape));
  const std::size_t n = x->numel();
  for (std::size_t i = 0; i < idx->size(); ++i) {
    const std::size_t j = static_cast<std::size_t>((*idx)[i]);
    if (j >= n) throw ShapeMismatch("take: index out of range");
    out->value[i] = x->value[j];
  }
  if (detail::want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, idx] {
      x->ensure_grad();
      for (std::size_t i = 0; i < idx->size(); ++i)
        x->grad[static_cast<std::size_t>((*idx)[i])] += out->grad[i];
    });
  }
  return out;
}

inline TensorPtr scatter_add(Tape* tape, const TensorPtr& x, const IndexPlan& idx, int out_len) {
  if (x->numel() != idx->size()) throw ShapeMismatch("scatter_add: plan size mismatch");
  auto out = make_tensor({out_len});
  for (std::size_t i = 0; i < idx->size(); ++i) {
    const std::size_t j = static_cast<std::size_t>((*idx)[i]);
    if (j >= out->numel()) throw ShapeMismatch("scatter_add: index out of range");
    out->value[j] += x->value[i];
  }
  check_finite(*out, "scatter_add");
  if (detail::want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, idx] {
      x->ensure_grad();
      for (std::size_t i = 0; i < idx->size(); ++i)
        x->grad[i] += out->grad[static_cast<std::size_t>((*idx)[i])];
    });
  }
  return out;
}

inline TensorPtr reshape(Tape* tape, const TensorPtr& a, std::vector<int> shape) {
  if (shape_numel(shape) != a->numel()) throw ShapeMismatch("reshape: size mismatch");
  auto out = make_tensor(std::move(shape));
  out->value = a->value;
  if (detail::want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out] {
      a->ensure_grad();
      for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// ParamSet: named parameters in fixed registration order
// ---------------------------------------------------------------------------

class ParamSet {
 public:
  void add(const std::string& name, const TensorPtr& t) {
    for (const auto& [n, _] : items_)
      if (n == name) throw Error("ParamSet: duplicate name " + name);
    t->requires_grad = true;
    items_.emplace_back(name, t);
  }

  const std::vector<std::pair<std::string, TensorPtr>>& items() const { return items_; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items_) n += t->numel();
    return n;
  }

  void zero_grads() {
    for (auto& [_, t] : items_) {
      t->ensure_grad();
      std::fill(t->grad.begin(), t->grad.end(), 0.0);
    }
  }

  std::vector<double> flatten_grads() const {
    std::vector<double> out;
    out.reserve(total_size());
    for (const auto& [name, t] : items_) {
      if (t->grad.size() != t->value.size())
        throw MissingGrad("flatten_grads: no grad for " + name);
      out.insert(out.end(), t->grad.begin(), t->grad.end());
    }
    return out;
  }

  std::vector<double> flatten_values() const {
    std::vector<double> out;
    out.reserve(total_size());
    for (const auto& [_, t] : items_) out.insert(out.end(), t->value.begin(), t->value.end());
    return out;
  }

  void set_flat_values(const std::vector<double>& v) {
    if (v.size() != total_size()) throw LengthMismatch("set_flat_values: size mismatch");
    std::size_t off = 0;
    for (auto& [_, t] : items_) {
      std::copy(v.begin() + static_cast<std::ptrdiff_t>(off),
                v.begin() + static_cast<std::ptrdiff_t>(off + t->numel()), t->value.begin());
      off += t->numel();
    }
  }

  // inverse of flatten_grads, for round-trip checks and synthetic injection
  void set_flat_grads(const std::vector<double>& v) {
    if (v.size() != total_size()) throw LengthMismatch("set_flat_grads: size mismatch");
    std::size_t off = 0;
    for (auto& [_, t] : items_) {
      t->ensure_grad();
      std::copy(v.begin() + static_cast<std::ptrdiff_t>(off),
                v.begin() + static_cast<std::ptrdiff_t>(off + t->numel()), t->grad.begin());
      off += t->numel();
    }
  }

 private:
  std::vector<std::pair<std::string, TensorPtr>> items_;
};

// ---------------------------------------------------------------------------
// Adam. The update is applied against a supplied direction vector, which the
// self-correcting schemes use to feed combined directions instead of raw
// gradients.
// ---------------------------------------------------------------------------

struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;

  void init(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    step = 0;
  }
};

inline void adam_step(ParamSet& params, const std::vector<double>& direction, AdamState& st) {
  const std::size_t n = params.total_size();
  if (direction.size() != n) throw LengthMismatch("adam_step: direction length mismatch");
  if (st.m.size() != n) st.init(n);
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  std::size_t off = 0;
  for (const auto& [_, t] : params.items()) {
    for (std::size_t i = 0; i < t->numel(); ++i, ++off) {
      const double g = direction[off];
      st.m[off] = st.beta1 * st.m[off] + (1.0 - st.beta1) * g;
      st.v[off] = st.beta2 * st.v[off] + (1.0 - st.beta2) * g * g;
      const double mhat = st.m[off] / bc1;
      const double vhat = st.v[off] / bc2;
      t->value[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
}

}  // namespace scpgan::autonn
