#include "mmnas/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include <Eigen/Core>

namespace mmnas {

namespace {

thread_local bool g_grad_enabled = true;

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using MatMap = Eigen::Map<RowMat<T>>;

template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i]))
      throw NonFiniteError(std::string(op) + ": non-finite value at element " + std::to_string(i));
  }
}

// Wraps a freshly computed value as a tape node. When no input needs a
// gradient (or recording is off) the node is a plain constant.
template <class T>
Var<T> record(const char* op, Tensor<T> value, std::vector<NodePtr<T>> inputs,
              std::function<void(Node<T>&)> fn) {
  check_finite(value, op);
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || (in && in->requires_grad);
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(fn);
  }
  return Var<T>(std::move(node));
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  require(s.size() == rank, std::string(op) + ": " + what + " must be rank " +
                                std::to_string(rank) + ", got " + shape_str(s));
}

struct ConvGeometry {
  int n, c, h, w;     // input
  int k, stride, pad;
  int ho, wo;
};

ConvGeometry geometry(const Shape& in, int k, int stride, int pad, const char* op) {
  require_rank(in, 4, op, "input");
  require(stride >= 1 && pad >= 0 && k >= 1, std::string(op) + ": invalid kernel/stride/padding");
  ConvGeometry g{static_cast<int>(in[0]), static_cast<int>(in[1]), static_cast<int>(in[2]),
                 static_cast<int>(in[3]), k, stride, pad, 0, 0};
  const int hs = g.h + 2 * pad - k;
  const int ws = g.w + 2 * pad - k;
  require(hs >= 0 && ws >= 0, std::string(op) + ": kernel " + std::to_string(k) +
                                  " larger than padded input " + shape_str(in));
  g.ho = hs / stride + 1;
  g.wo = ws / stride + 1;
  return g;
}

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const int plane = g.ho * g.wo;
  for (int c = 0; c < g.c; ++c) {
    for (int kh = 0; kh < g.k; ++kh) {
      for (int kw = 0; kw < g.k; ++kw) {
        T* row = cols + static_cast<std::ptrdiff_t>((c * g.k + kh) * g.k + kw) * plane;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + kh;
          T* dst = row + oh * g.wo;
          if (ih < 0 || ih >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::ptrdiff_t>(c) * g.h + ih) * g.w;
          for (int ow = 0; ow < g.wo; ++ow) {
            const int iw = ow * g.stride - g.pad + kw;
            dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* dx) {
  const int plane = g.ho * g.wo;
  for (int c = 0; c < g.c; ++c) {
    for (int kh = 0; kh < g.k; ++kh) {
      for (int kw = 0; kw < g.k; ++kw) {
        const T* row = cols + static_cast<std::ptrdiff_t>((c * g.k + kh) * g.k + kw) * plane;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.h) continue;
          T* dst = dx + (static_cast<std::ptrdiff_t>(c) * g.h + ih) * g.w;
          const T* src = row + oh * g.wo;
          for (int ow = 0; ow < g.wo; ++ow) {
            const int iw = ow * g.stride - g.pad + kw;
            if (iw >= 0 && iw < g.w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

template <class T>
Var<T> unary(const char* op, const Var<T>& x, T (*f)(T), T (*df)(T /*x*/, T /*y*/)) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return record<T>(op, std::move(out), {x.node()}, [df](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& gi = in.grad_buffer();
    for (std::size_t i = 0; i < gi.size(); ++i)
      gi[i] += self.grad[i] * df(in.value[i], self.value[i]);
  });
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

template <class T>
void backward(const Var<T>& root) {
  if (!root) throw std::invalid_argument("backward: empty root");
  if (root.value().size() != 1)
    throw ShapeError("backward: root must be a scalar, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->backward) continue;
    node->grad_buffer();
    node->backward(*node);
  }
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const std::array<Var<T>, 2> terms{a, b};
  return add_n<T>(terms);
}

template <class T>
Var<T> add_n(std::span<const Var<T>> terms) {
  require(!terms.empty(), "add: no operands");
  if (terms.size() == 1) return terms[0];
  Tensor<T> out = terms[0].value();
  std::vector<NodePtr<T>> inputs{terms[0].node()};
  for (std::size_t t = 1; t < terms.size(); ++t) {
    const auto& v = terms[t].value();
    require(v.shape() == out.shape(), "add: shape mismatch " + shape_str(out.shape()) + " vs " +
                                          shape_str(v.shape()));
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += v[i];
    inputs.push_back(terms[t].node());
  }
  return record<T>("add", std::move(out), std::move(inputs), [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, int stride,
              int padding) {
  const auto& ws = weight.shape();
  require_rank(ws, 4, "conv2d", "weight");
  require(ws[2] == ws[3], "conv2d: non-square kernel " + shape_str(ws));
  const auto g = geometry(input.shape(), static_cast<int>(ws[2]), stride, padding, "conv2d");
  require(ws[1] == static_cast<std::size_t>(g.c),
          "conv2d: input has " + std::to_string(g.c) + " channels, weight " + shape_str(ws) +
              " expects " + std::to_string(ws[1]));
  const int cout = static_cast<int>(ws[0]);
  if (bias)
    require(bias.value().size() == static_cast<std::size_t>(cout),
            "conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                std::to_string(cout) + " output channels");

  const int ck = g.c * g.k * g.k;
  const int plane = g.ho * g.wo;
  const bool pointwise = g.k == 1 && g.stride == 1 && g.pad == 0;
  Tensor<T> out({static_cast<std::size_t>(g.n), static_cast<std::size_t>(cout),
                 static_cast<std::size_t>(g.ho), static_cast<std::size_t>(g.wo)});
  std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(ck) * plane);
  ConstMatMap<T> wm(weight.value().ptr(), cout, ck);
  for (int n = 0; n < g.n; ++n) {
    const T* xn = input.value().ptr() + static_cast<std::ptrdiff_t>(n) * g.c * g.h * g.w;
    const T* colp = xn;
    if (!pointwise) {
      im2col(xn, g, cols.data());
      colp = cols.data();
    }
    MatMap<T> om(out.ptr() + static_cast<std::ptrdiff_t>(n) * cout * plane, cout, plane);
    om.noalias() = wm * ConstMatMap<T>(colp, ck, plane);
    if (bias) {
      for (int co = 0; co < cout; ++co) om.row(co).array() += bias.value()[co];
    }
  }

  return record<T>(
      "conv2d", std::move(out), {input.node(), weight.node(), bias ? bias.node() : nullptr},
      [g, cout, ck, plane, pointwise](Node<T>& self) {
        auto& x = *self.inputs[0];
        auto& w = *self.inputs[1];
        Node<T>* b = self.inputs[2].get();
        std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(ck) * plane);
        ConstMatMap<T> wm(w.value.ptr(), cout, ck);
        for (int n = 0; n < g.n; ++n) {
          ConstMatMap<T> gy(self.grad.ptr() + static_cast<std::ptrdiff_t>(n) * cout * plane, cout,
                            plane);
          const T* xn = x.value.ptr() + static_cast<std::ptrdiff_t>(n) * g.c * g.h * g.w;
          if (w.requires_grad) {
            const T* colp = xn;
            if (!pointwise) {
              im2col(xn, g, cols.data());
              colp = cols.data();
            }
            MatMap<T> gw(w.grad_buffer().ptr(), cout, ck);
            gw.noalias() += gy * ConstMatMap<T>(colp, ck, plane).transpose();
          }
          if (b && b->requires_grad) {
            auto& gb = b->grad_buffer();
            for (int co = 0; co < cout; ++co) gb[co] += gy.row(co).sum();
          }
          if (x.requires_grad) {
            T* dxn = x.grad_buffer().ptr() + static_cast<std::ptrdiff_t>(n) * g.c * g.h * g.w;
            if (pointwise) {
              MatMap<T>(dxn, ck, plane).noalias() += wm.transpose() * gy;
            } else {
              MatMap<T> dcols(cols.data(), ck, plane);
              dcols.noalias() = wm.transpose() * gy;
              col2im(cols.data(), g, dxn);
            }
          }
        }
      });
}

template <class T>
Var<T> depthwise_conv2d(const Var<T>& input, const Var<T>& weight, int stride, int padding) {
  const auto& ws = weight.shape();
  require_rank(ws, 4, "depthwise_conv2d", "weight");
  require(ws[1] == 1 && ws[2] == ws[3],
          "depthwise_conv2d: weight must be C x 1 x k x k, got " + shape_str(ws));
  const auto g = geometry(input.shape(), static_cast<int>(ws[2]), stride, padding,
                          "depthwise_conv2d");
  require(ws[0] == static_cast<std::size_t>(g.c),
          "depthwise_conv2d: input has " + std::to_string(g.c) + " channels, weight " +
              shape_str(ws) + " has " + std::to_string(ws[0]) + " filters");

  Tensor<T> out({static_cast<std::size_t>(g.n), static_cast<std::size_t>(g.c),
                 static_cast<std::size_t>(g.ho), static_cast<std::size_t>(g.wo)});
  const auto& xv = input.value();
  const auto& wv = weight.value();
  for (int n = 0; n < g.n; ++n) {
    for (int c = 0; c < g.c; ++c) {
      const T* xp = xv.ptr() + (static_cast<std::ptrdiff_t>(n) * g.c + c) * g.h * g.w;
      const T* wp = wv.ptr() + static_cast<std::ptrdiff_t>(c) * g.k * g.k;
      T* op = out.ptr() + (static_cast<std::ptrdiff_t>(n) * g.c + c) * g.ho * g.wo;
      for (int kh = 0; kh < g.k; ++kh) {
        for (int kw = 0; kw < g.k; ++kw) {
          const T wk = wp[kh * g.k + kw];
          for (int oh = 0; oh < g.ho; ++oh) {
            const int ih = oh * g.stride - g.pad + kh;
            if (ih < 0 || ih >= g.h) continue;
            for (int ow = 0; ow < g.wo; ++ow) {
              const int iw = ow * g.stride - g.pad + kw;
              if (iw >= 0 && iw < g.w) op[oh * g.wo + ow] += wk * xp[ih * g.w + iw];
            }
          }
        }
      }
    }
  }

  return record<T>("depthwise_conv2d", std::move(out), {input.node(), weight.node()},
                   [g](Node<T>& self) {
                     auto& x = *self.inputs[0];
                     auto& w = *self.inputs[1];
                     T* gx = x.requires_grad ? x.grad_buffer().ptr() : nullptr;
                     T* gw = w.requires_grad ? w.grad_buffer().ptr() : nullptr;
                     for (int n = 0; n < g.n; ++n) {
                       for (int c = 0; c < g.c; ++c) {
                         const auto xoff = (static_cast<std::ptrdiff_t>(n) * g.c + c) * g.h * g.w;
                         const T* xp = x.value.ptr() + xoff;
                         const T* wp = w.value.ptr() + static_cast<std::ptrdiff_t>(c) * g.k * g.k;
                         const T* gy = self.grad.ptr() +
                                       (static_cast<std::ptrdiff_t>(n) * g.c + c) * g.ho * g.wo;
                         for (int kh = 0; kh < g.k; ++kh) {
                           for (int kw = 0; kw < g.k; ++kw) {
                             T acc = 0;
                             const T wk = wp[kh * g.k + kw];
                             for (int oh = 0; oh < g.ho; ++oh) {
                               const int ih = oh * g.stride - g.pad + kh;
                               if (ih < 0 || ih >= g.h) continue;
                               for (int ow = 0; ow < g.wo; ++ow) {
                                 const int iw = ow * g.stride - g.pad + kw;
                                 if (iw < 0 || iw >= g.w) continue;
                                 const T dy = gy[oh * g.wo + ow];
                                 acc += dy * xp[ih * g.w + iw];
                                 if (gx) gx[xoff + ih * g.w + iw] += dy * wk;
                               }
                             }
                             if (gw) gw[static_cast<std::ptrdiff_t>(c) * g.k * g.k + kh * g.k + kw] += acc;
                           }
                         }
                       }
                     }
                   });
}

template <class T>
Var<T> sep_conv2d(const Var<T>& input, const Var<T>& depthwise, const Var<T>& pointwise,
                  const Var<T>& bias, int padding) {
  return conv2d(depthwise_conv2d(input, depthwise, 1, padding), pointwise, bias, 1, 0);
}

template <class T>
Var<T> max_pool2d(const Var<T>& input, int kernel, int stride, int padding) {
  const auto g = geometry(input.shape(), kernel, stride, padding, "max_pool2d");
  Tensor<T> out({static_cast<std::size_t>(g.n), static_cast<std::size_t>(g.c),
                 static_cast<std::size_t>(g.ho), static_cast<std::size_t>(g.wo)});
  std::vector<std::uint32_t> argmax(out.size());
  const auto& xv = input.value();
  std::size_t o = 0;
  for (int nc = 0; nc < g.n * g.c; ++nc) {
    const auto base = static_cast<std::size_t>(nc) * g.h * g.w;
    for (int oh = 0; oh < g.ho; ++oh) {
      for (int ow = 0; ow < g.wo; ++ow, ++o) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t at = base;
        bool found = false;
        for (int kh = 0; kh < g.k; ++kh) {
          const int ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.h) continue;
          for (int kw = 0; kw < g.k; ++kw) {
            const int iw = ow * g.stride - g.pad + kw;
            if (iw < 0 || iw >= g.w) continue;
            const std::size_t idx = base + static_cast<std::size_t>(ih) * g.w + iw;
            if (!found || xv[idx] > best) {
              best = xv[idx];
              at = idx;
              found = true;
            }
          }
        }
        out[o] = best;
        argmax[o] = static_cast<std::uint32_t>(at);
      }
    }
  }
  return record<T>("max_pool2d", std::move(out), {input.node()},
                   [argmax = std::move(argmax)](Node<T>& self) {
                     auto& x = *self.inputs[0];
                     if (!x.requires_grad) return;
                     auto& gx = x.grad_buffer();
                     for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += self.grad[i];
                   });
}

template <class T>
Var<T> avg_pool2d(const Var<T>& input, int kernel, int stride, int padding) {
  const auto g = geometry(input.shape(), kernel, stride, padding, "avg_pool2d");
  Tensor<T> out({static_cast<std::size_t>(g.n), static_cast<std::size_t>(g.c),
                 static_cast<std::size_t>(g.ho), static_cast<std::size_t>(g.wo)});
  // Window bounds are shared by every (n, c) plane.
  struct Window {
    int h0, h1, w0, w1;
    T inv;
  };
  std::vector<Window> windows;
  windows.reserve(static_cast<std::size_t>(g.ho) * g.wo);
  for (int oh = 0; oh < g.ho; ++oh) {
    for (int ow = 0; ow < g.wo; ++ow) {
      Window win{std::max(0, oh * g.stride - g.pad), std::min(g.h, oh * g.stride - g.pad + g.k),
                 std::max(0, ow * g.stride - g.pad), std::min(g.w, ow * g.stride - g.pad + g.k),
                 T(0)};
      win.inv = T(1) / static_cast<T>((win.h1 - win.h0) * (win.w1 - win.w0));
      windows.push_back(win);
    }
  }
  const auto& xv = input.value();
  for (int nc = 0; nc < g.n * g.c; ++nc) {
    const T* xp = xv.ptr() + static_cast<std::ptrdiff_t>(nc) * g.h * g.w;
    T* op = out.ptr() + static_cast<std::ptrdiff_t>(nc) * g.ho * g.wo;
    for (std::size_t o = 0; o < windows.size(); ++o) {
      const auto& win = windows[o];
      T acc = 0;
      for (int ih = win.h0; ih < win.h1; ++ih)
        for (int iw = win.w0; iw < win.w1; ++iw) acc += xp[ih * g.w + iw];
      op[o] = acc * win.inv;
    }
  }
  return record<T>("avg_pool2d", std::move(out), {input.node()},
                   [g, windows = std::move(windows)](Node<T>& self) {
                     auto& x = *self.inputs[0];
                     if (!x.requires_grad) return;
                     auto& gx = x.grad_buffer();
                     for (int nc = 0; nc < g.n * g.c; ++nc) {
                       T* dp = gx.ptr() + static_cast<std::ptrdiff_t>(nc) * g.h * g.w;
                       const T* gy = self.grad.ptr() + static_cast<std::ptrdiff_t>(nc) * g.ho * g.wo;
                       for (std::size_t o = 0; o < windows.size(); ++o) {
                         const auto& win = windows[o];
                         const T share = gy[o] * win.inv;
                         for (int ih = win.h0; ih < win.h1; ++ih)
                           for (int iw = win.w0; iw < win.w1; ++iw) dp[ih * g.w + iw] += share;
                       }
                     }
                   });
}

template <class T>
Var<T> global_avg_pool(const Var<T>& input) {
  const auto& s = input.shape();
  require_rank(s, 4, "global_avg_pool", "input");
  const std::size_t nc = s[0] * s[1];
  const std::size_t plane = s[2] * s[3];
  require(plane > 0, "global_avg_pool: empty spatial extent " + shape_str(s));
  Tensor<T> out({s[0], s[1]});
  const T inv = T(1) / static_cast<T>(plane);
  for (std::size_t i = 0; i < nc; ++i) {
    const T* p = input.value().ptr() + i * plane;
    T acc = 0;
    for (std::size_t j = 0; j < plane; ++j) acc += p[j];
    out[i] = acc * inv;
  }
  return record<T>("global_avg_pool", std::move(out), {input.node()},
                   [nc, plane, inv](Node<T>& self) {
                     auto& x = *self.inputs[0];
                     if (!x.requires_grad) return;
                     auto& gx = x.grad_buffer();
                     for (std::size_t i = 0; i < nc; ++i) {
                       const T share = self.grad[i] * inv;
                       T* p = gx.ptr() + i * plane;
                       for (std::size_t j = 0; j < plane; ++j) p[j] += share;
                     }
                   });
}

template <class T>
Var<T> linear(const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
  const auto& xs = input.shape();
  const auto& ws = weight.shape();
  require_rank(xs, 2, "linear", "input");
  require_rank(ws, 2, "linear", "weight");
  require(xs[1] == ws[1], "linear: input " + shape_str(xs) + " has " + std::to_string(xs[1]) +
                              " features, weight " + shape_str(ws) + " expects " +
                              std::to_string(ws[1]));
  if (bias)
    require(bias.value().size() == ws[0],
            "linear: bias " + shape_str(bias.shape()) + " does not match " +
                std::to_string(ws[0]) + " outputs");
  const auto n = static_cast<Eigen::Index>(xs[0]);
  const auto f = static_cast<Eigen::Index>(xs[1]);
  const auto h = static_cast<Eigen::Index>(ws[0]);
  Tensor<T> out({xs[0], ws[0]});
  MatMap<T> om(out.ptr(), n, h);
  om.noalias() = ConstMatMap<T>(input.value().ptr(), n, f) *
                 ConstMatMap<T>(weight.value().ptr(), h, f).transpose();
  if (bias) {
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < h; ++c) om(r, c) += bias.value()[c];
  }
  return record<T>(
      "linear", std::move(out), {input.node(), weight.node(), bias ? bias.node() : nullptr},
      [n, f, h](Node<T>& self) {
        auto& x = *self.inputs[0];
        auto& w = *self.inputs[1];
        Node<T>* b = self.inputs[2].get();
        ConstMatMap<T> gy(self.grad.ptr(), n, h);
        if (x.requires_grad)
          MatMap<T>(x.grad_buffer().ptr(), n, f).noalias() +=
              gy * ConstMatMap<T>(w.value.ptr(), h, f);
        if (w.requires_grad)
          MatMap<T>(w.grad_buffer().ptr(), h, f).noalias() +=
              gy.transpose() * ConstMatMap<T>(x.value.ptr(), n, f);
        if (b && b->requires_grad) {
          auto& gb = b->grad_buffer();
          for (Eigen::Index c = 0; c < h; ++c) gb[c] += gy.col(c).sum();
        }
      });
}

template <class T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  require(!parts.empty(), "concat: no operands");
  const Shape& first = parts[0].shape();
  require(axis < first.size(), "concat: axis " + std::to_string(axis) + " out of range for " +
                                   shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> chunk;  // contiguous run per outer index, per part
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  std::vector<NodePtr<T>> inputs;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool compatible = s.size() == first.size();
    for (std::size_t i = 0; compatible && i < s.size(); ++i)
      if (i != axis && s[i] != first[i]) compatible = false;
    require(compatible, "concat: cannot join " + shape_str(s) + " with " + shape_str(first) +
                            " along axis " + std::to_string(axis));
    out_shape[axis] += s[axis];
    chunk.push_back(outer ? p.value().size() / outer : 0);
    inputs.push_back(p.node());
  }
  Tensor<T> out(out_shape);
  std::size_t row = 0;
  for (std::size_t c : chunk) row += c;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].value().ptr();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(src + o * chunk[k], src + (o + 1) * chunk[k], out.ptr() + o * row + offset);
    offset += chunk[k];
  }
  return record<T>("concat", std::move(out), std::move(inputs),
                   [chunk, outer, row](Node<T>& self) {
                     std::size_t offset = 0;
                     for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                       auto& in = *self.inputs[k];
                       if (in.requires_grad) {
                         T* dst = in.grad_buffer().ptr();
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t j = 0; j < chunk[k]; ++j)
                             dst[o * chunk[k] + j] += self.grad[o * row + offset + j];
                       }
                       offset += chunk[k];
                     }
                   });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  return unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> activate(const Var<T>& x, ActivationKind kind) {
  switch (kind) {
    case ActivationKind::ReLU:
      return relu(x);
    case ActivationKind::Tanh:
      return tanh(x);
    case ActivationKind::Sigmoid:
      return sigmoid(x);
    case ActivationKind::Identity:
      break;
  }
  return x;
}

template <class T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  const auto& s = logits.shape();
  require_rank(s, 2, "softmax_cross_entropy", "logits");
  const std::size_t n = s[0];
  const std::size_t k = s[1];
  require(labels.size() == n, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                  " labels for " + std::to_string(n) + " rows");
  require(n > 0, "softmax_cross_entropy: empty batch");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                              " at index " + std::to_string(i) + " outside [0, " +
                              std::to_string(k) + ")");
  }
  Tensor<T> probs({n, k});
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.value().ptr() + i * k;
    const T mx = *std::max_element(row, row + k);
    double sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(row[j] - mx));
    const double lse = static_cast<double>(mx) + std::log(sum);
    for (std::size_t j = 0; j < k; ++j)
      probs[i * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - lse));
    total += lse - static_cast<double>(row[labels[i]]);
  }
  Tensor<T> loss({1}, static_cast<T>(total / static_cast<double>(n)));
  std::vector<int> saved(labels.begin(), labels.end());
  return record<T>("softmax_cross_entropy", std::move(loss), {logits.node()},
                   [probs = std::move(probs), saved = std::move(saved), n, k](Node<T>& self) {
                     auto& x = *self.inputs[0];
                     if (!x.requires_grad) return;
                     auto& gx = x.grad_buffer();
                     const T scale = self.grad[0] / static_cast<T>(n);
                     for (std::size_t i = 0; i < n; ++i) {
                       for (std::size_t j = 0; j < k; ++j) {
                         const T target = static_cast<int>(j) == saved[i] ? T(1) : T(0);
                         gx[i * k + j] += scale * (probs[i * k + j] - target);
                       }
                     }
                   });
}

template <class T>
Var<T> sum_product(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "sum_product: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  double acc = 0;
  for (std::size_t i = 0; i < a.value().size(); ++i)
    acc += static_cast<double>(a.value()[i]) * static_cast<double>(b.value()[i]);
  return record<T>("sum_product", Tensor<T>({1}, static_cast<T>(acc)), {a.node(), b.node()},
                   [](Node<T>& self) {
                     auto& a = *self.inputs[0];
                     auto& b = *self.inputs[1];
                     const T g = self.grad[0];
                     if (a.requires_grad) {
                       auto& ga = a.grad_buffer();
                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * b.value[i];
                     }
                     if (b.requires_grad) {
                       auto& gb = b.grad_buffer();
                       for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * a.value[i];
                     }
                   });
}

#define MMNAS_INSTANTIATE(T)                                                                 \
  template void backward<T>(const Var<T>&);                                                  \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> add_n<T>(std::span<const Var<T>>);                                         \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int);          \
  template Var<T> depthwise_conv2d<T>(const Var<T>&, const Var<T>&, int, int);               \
  template Var<T> sep_conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,  \
                                int);                                                        \
  template Var<T> max_pool2d<T>(const Var<T>&, int, int, int);                               \
  template Var<T> avg_pool2d<T>(const Var<T>&, int, int, int);                               \
  template Var<T> global_avg_pool<T>(const Var<T>&);                                         \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                    \
  template Var<T> concat<T>(std::span<const Var<T>>, std::size_t);                           \
  template Var<T> relu<T>(const Var<T>&);                                                    \
  template Var<T> tanh<T>(const Var<T>&);                                                    \
  template Var<T> sigmoid<T>(const Var<T>&);                                                 \
  template Var<T> activate<T>(const Var<T>&, ActivationKind);                                \
  template Var<T> softmax_cross_entropy<T>(const Var<T>&, std::span<const int>);             \
  template Var<T> sum_product<T>(const Var<T>&, const Var<T>&);

MMNAS_INSTANTIATE(float)
MMNAS_INSTANTIATE(double)

#undef MMNAS_INSTANTIATE

}  // namespace mmnas
