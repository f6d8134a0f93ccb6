#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "fusenas/common.hpp"
#include "fusenas/parameter.hpp"

namespace fusenas {

// Handle into a Tape. Plain value type, cheap to copy.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense (n,c,h,w) arrays. Complex tensors store the
// real plane followed by the imaginary plane in one buffer; complex ops are
// differentiated as real maps on the two planes, so no Wirtinger calculus is
// involved anywhere.
//
// Nodes are recorded in creation order, which is already a topological order,
// and freed with the tape after backward.
template <typename T>
class Tape {
 public:
  struct Node {
    Shape shape;
    bool complex = false;
    bool needs_grad = false;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily during backward
    std::function<void(Tape&)> backward_fn;
    Parameter<T>* param = nullptr;
  };

  Tape() { nodes_.reserve(1024); }

  // ---- leaves ------------------------------------------------------------

  Var input(Shape shape, std::vector<T> data, bool requires_grad = false) {
    require(std::int64_t(data.size()) == shape.numel(),
            "input data size does not match shape " + shape.str());
    return push(shape, false, requires_grad, std::move(data), {});
  }

  Var param(Parameter<T>& p) {
    Var v = push(p.shape, false, p.trainable, p.value, {});
    Node& nd = node(v);
    nd.param = &p;
    if (p.trainable) {
      int id = v.id;
      nd.backward_fn = [id](Tape& t) {
        Node& n = t.nodes_[id];
        auto& dst = n.param->grad;
        const auto& src = t.grad(id);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      };
    }
    return v;
  }

  Var zeros(Shape shape) {
    return push(shape, false, false, std::vector<T>(shape.numel(), T(0)), {});
  }

  Var fill(Shape shape, T v) {
    return push(shape, false, false, std::vector<T>(shape.numel(), v), {});
  }

  // ---- accessors ----------------------------------------------------------

  Node& node(Var v) { return nodes_.at(std::size_t(v.id)); }
  const Node& node(Var v) const { return nodes_.at(std::size_t(v.id)); }
  // by value: node storage reallocates as the graph grows
  Shape shape(Var v) const { return node(v).shape; }
  bool is_complex(Var v) const { return node(v).complex; }
  const std::vector<T>& value(Var v) const { return node(v).value; }

  // gradient buffer of a node, allocated on demand (zero-filled)
  std::vector<T>& grad(int id) {
    Node& n = nodes_[std::size_t(id)];
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
  }
  const std::vector<T>& grad_of(Var v) { return grad(v.id); }

  std::size_t size() const { return nodes_.size(); }

  // ---- elementwise (same shape) -------------------------------------------

  Var add(Var a, Var b) { return binary_same(a, b, /*mode=*/0); }
  Var sub(Var a, Var b) { return binary_same(a, b, 1); }

  Var mul(Var a, Var b) {
    check_same_real(a, b, "mul");
    const auto& av = value(a);
    const auto& bv = value(b);
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    Var r = push(shape(a), false, needs(a) || needs(b), std::move(out), {});
    int ia = a.id, ib = b.id, ir = r.id;
    node(r).backward_fn = [ia, ib, ir](Tape& t) {
      const auto& g = t.grad(ir);
      if (t.nodes_[ia].needs_grad) {
        auto& da = t.grad(ia);
        const auto& bv = t.nodes_[ib].value;
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
      }
      if (t.nodes_[ib].needs_grad) {
        auto& db = t.grad(ib);
        const auto& av = t.nodes_[ia].value;
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
      }
    };
    return r;
  }

  Var div(Var a, Var b) {
    check_same_real(a, b, "div");
    const auto& av = value(a);
    const auto& bv = value(b);
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
    Var r = push(shape(a), false, needs(a) || needs(b), std::move(out), {});
    int ia = a.id, ib = b.id, ir = r.id;
    node(r).backward_fn = [ia, ib, ir](Tape& t) {
      const auto& g = t.grad(ir);
      const auto& av = t.nodes_[ia].value;
      const auto& bv = t.nodes_[ib].value;
      if (t.nodes_[ia].needs_grad) {
        auto& da = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / bv[i];
      }
      if (t.nodes_[ib].needs_grad) {
        auto& db = t.grad(ib);
        for (std::size_t i = 0; i < g.size(); ++i)
          db[i] -= g[i] * av[i] / (bv[i] * bv[i]);
      }
    };
    return r;
  }

  Var scale(Var a, T k) {
    const auto& av = value(a);
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * av[i];
    Var r = push(shape(a), is_complex(a), needs(a), std::move(out), {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir, k](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const auto& g = t.grad(ir);
      auto& da = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += k * g[i];
    };
    return r;
  }

  Var add_scalar(Var a, T k) {
    require(!is_complex(a), "add_scalar expects a real tensor");
    const auto& av = value(a);
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + k;
    Var r = push(shape(a), false, needs(a), std::move(out), {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const auto& g = t.grad(ir);
      auto& da = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    };
    return r;
  }

  Var leaky_relu(Var a, T slope = T(0.2)) {
    return unary(a, "leaky_relu",
                 [slope](T x) { return x > T(0) ? x : slope * x; },
                 [slope](T x, T y) { (void)y; return x > T(0) ? T(1) : slope; });
  }

  Var sigmoid(Var a) {
    return unary(a, "sigmoid",
                 [](T x) {
                   if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
                   T e = std::exp(x);
                   return e / (T(1) + e);
                 },
                 [](T x, T y) { (void)x; return y * (T(1) - y); });
  }

  Var sqrt_op(Var a) {
    return unary(a, "sqrt", [](T x) { return std::sqrt(x); },
                 [](T x, T y) { (void)x; return T(0.5) / y; });
  }

  Var recip(Var a) {
    return unary(a, "recip", [](T x) { return T(1) / x; },
                 [](T x, T y) { (void)x; return -y * y; });
  }

  Var abs_op(Var a) {
    return unary(a, "abs", [](T x) { return std::abs(x); },
                 [](T x, T y) {
                   (void)y;
                   return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
                 });
  }

  // saturating output map; gradient passes only inside [0,1]
  Var clamp01(Var a) {
    return unary(a, "clamp01",
                 [](T x) { return std::min(std::max(x, T(0)), T(1)); },
                 [](T x, T y) {
                   (void)y;
                   return (x >= T(0) && x <= T(1)) ? T(1) : T(0);
                 });
  }

  // acos of the input clamped to [-1+1e-6, 1-1e-6]; the clamp keeps the
  // derivative finite and zeroes it outside the window
  Var arccos(Var a) {
    const T lo = T(-1) + T(1e-6), hi = T(1) - T(1e-6);
    return unary(a, "arccos",
                 [lo, hi](T x) {
                   return std::acos(std::min(std::max(x, lo), hi));
                 },
                 [lo, hi](T x, T y) {
                   (void)y;
                   if (x < lo || x > hi) return T(0);
                   return T(-1) / std::sqrt(T(1) - x * x);
                 });
  }

  // ---- broadcasting binary (each dim of b is 1 or equal to a's) ------------

  Var add_b(Var a, Var b) { return broadcast_binary(a, b, true); }
  Var mul_b(Var a, Var b) { return broadcast_binary(a, b, false); }

  // ---- structure ------------------------------------------------------------

  Var concat_channels(const std::vector<Var>& xs) {
    require(!xs.empty(), "concat_channels needs at least one tensor");
    Shape s0 = shape(xs[0]);
    int ctot = 0;
    bool ng = false;
    for (Var x : xs) {
      const Shape& s = shape(x);
      require(!is_complex(x), "concat_channels expects real tensors");
      require(s.n == s0.n && s.h == s0.h && s.w == s0.w,
              "concat_channels mismatch: " + s.str() + " vs " + s0.str());
      ctot += s.c;
      ng = ng || needs(x);
    }
    Shape os(s0.n, ctot, s0.h, s0.w);
    std::vector<T> out(os.numel());
    const int hw = s0.h * s0.w;
    int coff = 0;
    for (Var x : xs) {
      const Shape& s = shape(x);
      const auto& xv = value(x);
      for (int n = 0; n < s.n; ++n)
        std::memcpy(&out[(std::size_t(n) * ctot + coff) * hw],
                    &xv[std::size_t(n) * s.c * hw],
                    std::size_t(s.c) * hw * sizeof(T));
      coff += s.c;
    }
    Var r = push(os, false, ng, std::move(out), {});
    std::vector<int> ids;
    for (Var x : xs) ids.push_back(x.id);
    int ir = r.id;
    node(r).backward_fn = [ids, ir, ctot, hw](Tape& t) {
      const auto& g = t.grad(ir);
      const Shape& os = t.nodes_[ir].shape;
      int coff = 0;
      for (int id : ids) {
        const Shape& s = t.nodes_[id].shape;
        if (t.nodes_[id].needs_grad) {
          auto& dx = t.grad(id);
          for (int n = 0; n < os.n; ++n) {
            const T* gsrc = &g[(std::size_t(n) * ctot + coff) * hw];
            T* gdst = &dx[std::size_t(n) * s.c * hw];
            for (std::size_t i = 0; i < std::size_t(s.c) * hw; ++i)
              gdst[i] += gsrc[i];
          }
        }
        coff += s.c;
      }
    };
    return r;
  }

  Var slice_channels(Var a, int c0, int c1) {
    const Shape& s = shape(a);
    require(!is_complex(a), "slice_channels expects a real tensor");
    require(0 <= c0 && c0 < c1 && c1 <= s.c,
            "slice_channels range invalid for shape " + s.str());
    Shape os(s.n, c1 - c0, s.h, s.w);
    const int hw = s.h * s.w;
    std::vector<T> out(os.numel());
    const auto& av = value(a);
    for (int n = 0; n < s.n; ++n)
      std::memcpy(&out[std::size_t(n) * os.c * hw],
                  &av[(std::size_t(n) * s.c + c0) * hw],
                  std::size_t(os.c) * hw * sizeof(T));
    Var r = push(os, false, needs(a), std::move(out), {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir, c0, hw](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const auto& g = t.grad(ir);
      auto& da = t.grad(ia);
      const Shape& s = t.nodes_[ia].shape;
      const Shape& os = t.nodes_[ir].shape;
      for (int n = 0; n < s.n; ++n) {
        const T* gsrc = &g[std::size_t(n) * os.c * hw];
        T* gdst = &da[(std::size_t(n) * s.c + c0) * hw];
        for (std::size_t i = 0; i < std::size_t(os.c) * hw; ++i)
          gdst[i] += gsrc[i];
      }
    };
    return r;
  }

  Var reshape(Var a, Shape ns) {
    const Shape& s = shape(a);
    require(ns.numel() == s.numel(),
            "reshape numel mismatch: " + s.str() + " -> " + ns.str());
    require(!is_complex(a), "reshape expects a real tensor");
    Var r = push(ns, false, needs(a), value(a), {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const auto& g = t.grad(ir);
      auto& da = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    };
    return r;
  }

  Var downsample2x_avg(Var a) {
    const Shape& s = shape(a);
    require(s.h % 2 == 0 && s.w % 2 == 0,
            "downsample2x_avg needs even spatial dims, got " + s.str());
    Shape os(s.n, s.c, s.h / 2, s.w / 2);
    std::vector<T> out(os.numel());
    const auto& av = value(a);
    for (int nc = 0; nc < s.n * s.c; ++nc) {
      const T* ip = &av[std::size_t(nc) * s.h * s.w];
      T* op = &out[std::size_t(nc) * os.h * os.w];
      for (int y = 0; y < os.h; ++y)
        for (int x = 0; x < os.w; ++x) {
          const T* p = ip + (2 * y) * s.w + 2 * x;
          op[y * os.w + x] = T(0.25) * (p[0] + p[1] + p[s.w] + p[s.w + 1]);
        }
    }
    Var r = push(os, false, needs(a), std::move(out), {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const auto& g = t.grad(ir);
      auto& da = t.grad(ia);
      const Shape& s = t.nodes_[ia].shape;
      const Shape& os = t.nodes_[ir].shape;
      for (int nc = 0; nc < s.n * s.c; ++nc) {
        T* dp = &da[std::size_t(nc) * s.h * s.w];
        const T* gp = &g[std::size_t(nc) * os.h * os.w];
        for (int y = 0; y < os.h; ++y)
          for (int x = 0; x < os.w; ++x) {
            T q = T(0.25) * gp[y * os.w + x];
            T* p = dp + (2 * y) * s.w + 2 * x;
            p[0] += q;
            p[1] += q;
            p[s.w] += q;
            p[s.w + 1] += q;
          }
      }
    };
    return r;
  }

  Var upsample2x_nearest(Var a) {
    const Shape& s = shape(a);
    Shape os(s.n, s.c, s.h * 2, s.w * 2);
    std::vector<T> out(os.numel());
    const auto& av = value(a);
    for (int nc = 0; nc < s.n * s.c; ++nc) {
      const T* ip = &av[std::size_t(nc) * s.h * s.w];
      T* op = &out[std::size_t(nc) * os.h * os.w];
      for (int y = 0; y < os.h; ++y)
        for (int x = 0; x < os.w; ++x)
          op[y * os.w + x] = ip[(y / 2) * s.w + (x / 2)];
    }
    Var r = push(os, false, needs(a), std::move(out), {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const auto& g = t.grad(ir);
      auto& da = t.grad(ia);
      const Shape& s = t.nodes_[ia].shape;
      const Shape& os = t.nodes_[ir].shape;
      for (int nc = 0; nc < s.n * s.c; ++nc) {
        T* dp = &da[std::size_t(nc) * s.h * s.w];
        const T* gp = &g[std::size_t(nc) * os.h * os.w];
        for (int y = 0; y < os.h; ++y)
          for (int x = 0; x < os.w; ++x)
            dp[(y / 2) * s.w + (x / 2)] += gp[y * os.w + x];
      }
    };
    return r;
  }

  // ---- reductions -----------------------------------------------------------

  // mean over spatial dims, per (n,c) -> (n,c,1,1)
  Var channel_mean(Var a) {
    const Shape& s = shape(a);
    require(!is_complex(a), "channel_mean expects a real tensor");
    Shape os(s.n, s.c, 1, 1);
    std::vector<T> out(os.numel());
    const auto& av = value(a);
    const int hw = s.h * s.w;
    for (int nc = 0; nc < s.n * s.c; ++nc) {
      T acc = T(0);
      const T* ip = &av[std::size_t(nc) * hw];
      for (int i = 0; i < hw; ++i) acc += ip[i];
      out[nc] = acc / T(hw);
    }
    Var r = push(os, false, needs(a), std::move(out), {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir, hw](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const auto& g = t.grad(ir);
      auto& da = t.grad(ia);
      const Shape& s = t.nodes_[ia].shape;
      for (int nc = 0; nc < s.n * s.c; ++nc) {
        T q = g[nc] / T(hw);
        T* dp = &da[std::size_t(nc) * hw];
        for (int i = 0; i < hw; ++i) dp[i] += q;
      }
    };
    return r;
  }

  // population standard deviation over spatial dims, per (n,c) -> (n,c,1,1)
  Var channel_std(Var a) {
    const Shape& s = shape(a);
    require(!is_complex(a), "channel_std expects a real tensor");
    Shape os(s.n, s.c, 1, 1);
    const int hw = s.h * s.w;
    std::vector<T> out(os.numel());
    std::vector<T> means(os.numel());
    const auto& av = value(a);
    for (int nc = 0; nc < s.n * s.c; ++nc) {
      const T* ip = &av[std::size_t(nc) * hw];
      T mu = T(0);
      for (int i = 0; i < hw; ++i) mu += ip[i];
      mu /= T(hw);
      T var = T(0);
      for (int i = 0; i < hw; ++i) var += (ip[i] - mu) * (ip[i] - mu);
      means[nc] = mu;
      out[nc] = std::sqrt(var / T(hw));
    }
    Var r = push(os, false, needs(a), std::move(out), {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir, hw, means](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const auto& g = t.grad(ir);
      const auto& sv = t.nodes_[ir].value;
      const auto& av = t.nodes_[ia].value;
      auto& da = t.grad(ia);
      const Shape& s = t.nodes_[ia].shape;
      for (int nc = 0; nc < s.n * s.c; ++nc) {
        // d std / d x_i = (x_i - mu) / (HW * std)
        T denom = T(hw) * sv[nc];
        if (denom == T(0)) continue;
        T q = g[nc] / denom;
        const T* ip = &av[std::size_t(nc) * hw];
        T* dp = &da[std::size_t(nc) * hw];
        for (int i = 0; i < hw; ++i) dp[i] += q * (ip[i] - means[nc]);
      }
    };
    return r;
  }

  Var global_sum(Var a) { return reduce_all(a, false); }
  Var global_mean(Var a) { return reduce_all(a, true); }

  // per-sample sum over (c,h,w) -> (n,1,1,1)
  Var sum_per_sample(Var a) {
    const Shape& s = shape(a);
    require(!is_complex(a), "sum_per_sample expects a real tensor");
    Shape os(s.n, 1, 1, 1);
    const std::int64_t chw = std::int64_t(s.c) * s.h * s.w;
    std::vector<T> out(std::size_t(s.n));
    const auto& av = value(a);
    for (int n = 0; n < s.n; ++n) {
      T acc = T(0);
      const T* ip = &av[std::size_t(n) * chw];
      for (std::int64_t i = 0; i < chw; ++i) acc += ip[i];
      out[std::size_t(n)] = acc;
    }
    Var r = push(os, false, needs(a), std::move(out), {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir, chw](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const auto& g = t.grad(ir);
      auto& da = t.grad(ia);
      const Shape& s = t.nodes_[ia].shape;
      for (int n = 0; n < s.n; ++n) {
        T q = g[std::size_t(n)];
        T* dp = &da[std::size_t(n) * chw];
        for (std::int64_t i = 0; i < chw; ++i) dp[i] += q;
      }
    };
    return r;
  }

  // ---- softmax --------------------------------------------------------------

  // softmax over the last dim, per (n,c,h) row; stable under max-subtraction
  Var softmax_rows(Var a) {
    const Shape& s = shape(a);
    require(!is_complex(a), "softmax_rows expects a real tensor");
    std::vector<T> out(value(a).size());
    const auto& av = value(a);
    const int rows = s.n * s.c * s.h, K = s.w;
    for (int r0 = 0; r0 < rows; ++r0) {
      const T* ip = &av[std::size_t(r0) * K];
      T* op = &out[std::size_t(r0) * K];
      T m = ip[0];
      for (int k = 1; k < K; ++k) m = std::max(m, ip[k]);
      T z = T(0);
      for (int k = 0; k < K; ++k) {
        op[k] = std::exp(ip[k] - m);
        z += op[k];
      }
      for (int k = 0; k < K; ++k) op[k] /= z;
    }
    Var r = push(s, false, needs(a), std::move(out), {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir, rows, K](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const auto& g = t.grad(ir);
      const auto& sv = t.nodes_[ir].value;
      auto& da = t.grad(ia);
      for (int r0 = 0; r0 < rows; ++r0) {
        const T* gp = &g[std::size_t(r0) * K];
        const T* sp = &sv[std::size_t(r0) * K];
        T* dp = &da[std::size_t(r0) * K];
        T dot = T(0);
        for (int k = 0; k < K; ++k) dot += gp[k] * sp[k];
        for (int k = 0; k < K; ++k) dp[k] += sp[k] * (gp[k] - dot);
      }
    };
    return r;
  }

  // extract one scalar element -> (1,1,1,1)
  Var element(Var a, int n, int c, int h, int w) {
    const Shape& s = shape(a);
    require(n < s.n && c < s.c && h < s.h && w < s.w,
            "element index out of range for " + s.str());
    std::size_t idx = ((std::size_t(n) * s.c + c) * s.h + h) * s.w + w;
    Var r = push(Shape(1, 1, 1, 1), false, needs(a), {value(a)[idx]}, {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir, idx](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      t.grad(ia)[idx] += t.grad(ir)[0];
    };
    return r;
  }

  // ---- matmul ----------------------------------------------------------------

  // (n,1,P,Q) x (n,1,Q,R) -> (n,1,P,R); ta/tb transpose the stored operand
  Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    require(sa.c == 1 && sb.c == 1 && sa.n == sb.n,
            "matmul expects (n,1,rows,cols) operands, got " + sa.str() +
                " and " + sb.str());
    int P = ta ? sa.w : sa.h, Qa = ta ? sa.h : sa.w;
    int Qb = tb ? sb.w : sb.h, R = tb ? sb.h : sb.w;
    require(Qa == Qb, "matmul inner dim mismatch: " + sa.str() + " x " +
                          sb.str());
    Shape os(sa.n, 1, P, R);
    std::vector<T> out(os.numel(), T(0));
    const auto& av = value(a);
    const auto& bv = value(b);
    for (int n = 0; n < sa.n; ++n) {
      const T* ap = &av[std::size_t(n) * sa.h * sa.w];
      const T* bp = &bv[std::size_t(n) * sb.h * sb.w];
      T* op = &out[std::size_t(n) * P * R];
      for (int p = 0; p < P; ++p)
        for (int q = 0; q < Qa; ++q) {
          T aval = ta ? ap[q * sa.w + p] : ap[p * sa.w + q];
          const T* brow = tb ? nullptr : &bp[q * sb.w];
          if (tb) {
            for (int r0 = 0; r0 < R; ++r0)
              op[p * R + r0] += aval * bp[r0 * sb.w + q];
          } else {
            T* orow = &op[p * R];
            for (int r0 = 0; r0 < R; ++r0) orow[r0] += aval * brow[r0];
          }
        }
    }
    Var r = push(os, false, needs(a) || needs(b), std::move(out), {});
    int ia = a.id, ib = b.id, ir = r.id;
    node(r).backward_fn = [ia, ib, ir, ta, tb, P, R, Qa](Tape& t) {
      const auto& g = t.grad(ir);
      const Shape& sa = t.nodes_[ia].shape;
      const Shape& sb = t.nodes_[ib].shape;
      const auto& av = t.nodes_[ia].value;
      const auto& bv = t.nodes_[ib].value;
      for (int n = 0; n < sa.n; ++n) {
        const T* gp = &g[std::size_t(n) * P * R];
        const T* ap = &av[std::size_t(n) * sa.h * sa.w];
        const T* bp = &bv[std::size_t(n) * sb.h * sb.w];
        if (t.nodes_[ia].needs_grad) {
          T* dap = &t.grad(ia)[std::size_t(n) * sa.h * sa.w];
          for (int p = 0; p < P; ++p)
            for (int q = 0; q < Qa; ++q) {
              T acc = T(0);
              for (int r0 = 0; r0 < R; ++r0)
                acc += gp[p * R + r0] *
                       (tb ? bp[r0 * sb.w + q] : bp[q * sb.w + r0]);
              if (ta)
                dap[q * sa.w + p] += acc;
              else
                dap[p * sa.w + q] += acc;
            }
        }
        if (t.nodes_[ib].needs_grad) {
          T* dbp = &t.grad(ib)[std::size_t(n) * sb.h * sb.w];
          for (int q = 0; q < Qa; ++q)
            for (int r0 = 0; r0 < R; ++r0) {
              T acc = T(0);
              for (int p = 0; p < P; ++p)
                acc += gp[p * R + r0] *
                       (ta ? ap[q * sa.w + p] : ap[p * sa.w + q]);
              if (tb)
                dbp[r0 * sb.w + q] += acc;
              else
                dbp[q * sb.w + r0] += acc;
            }
        }
      }
    };
    return r;
  }

  // ---- convolution -----------------------------------------------------------

  // stride-1 zero-padded same-size conv; weights (co, ci/groups, k, k), k odd
  Var conv2d(Var x, Var w, int dilation = 1, int groups = 1) {
    const Shape& sx = shape(x);
    const Shape& sw = shape(w);
    require(!is_complex(x) && !is_complex(w), "conv2d expects real tensors");
    require(dilation >= 1, "conv2d dilation must be >= 1");
    require(sw.h == sw.w && sw.h % 2 == 1,
            "conv2d kernel must be square with odd size, got " + sw.str());
    require(groups >= 1 && sx.c % groups == 0 && sw.n % groups == 0,
            "conv2d groups must divide channel counts");
    require(sw.c == sx.c / groups,
            "conv2d weight shape " + sw.str() + " does not match input " +
                sx.str() + " with groups=" + std::to_string(groups));
    const int k = sw.h, co = sw.n, cig = sw.c, H = sx.h, W = sx.w;
    Shape os(sx.n, co, H, W);
    std::vector<T> out(os.numel(), T(0));
    const auto& xv = value(x);
    const auto& wv = value(w);
    const int cog = co / groups;
    for (int n = 0; n < sx.n; ++n)
      for (int oc = 0; oc < co; ++oc) {
        const int g0 = oc / cog;
        T* op = &out[((std::size_t(n) * co) + oc) * H * W];
        for (int ci = 0; ci < cig; ++ci) {
          const T* ip =
              &xv[((std::size_t(n) * sx.c) + g0 * cig + ci) * H * W];
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const T wval = wv[(((std::size_t(oc) * cig) + ci) * k + ky) * k + kx];
              if (wval == T(0)) continue;
              const int oy = (ky - k / 2) * dilation;
              const int ox = (kx - k / 2) * dilation;
              const int y0 = std::max(0, -oy), y1 = std::min(H, H - oy);
              const int x0 = std::max(0, -ox), x1 = std::min(W, W - ox);
              for (int y = y0; y < y1; ++y) {
                const T* __restrict irow = ip + (y + oy) * W + ox;
                T* __restrict orow = op + y * W;
                for (int xx = x0; xx < x1; ++xx) orow[xx] += wval * irow[xx];
              }
            }
        }
      }
    Var r = push(os, false, needs(x) || needs(w), std::move(out), {});
    int ix = x.id, iw = w.id, ir = r.id;
    node(r).backward_fn = [ix, iw, ir, k, dilation, groups, cig, cog](Tape& t) {
      const auto& g = t.grad(ir);
      const Shape& sx = t.nodes_[ix].shape;
      const Shape& so = t.nodes_[ir].shape;
      const int H = sx.h, W = sx.w, co = so.c;
      const auto& xv = t.nodes_[ix].value;
      const auto& wv = t.nodes_[iw].value;
      const bool need_x = t.nodes_[ix].needs_grad;
      const bool need_w = t.nodes_[iw].needs_grad;
      if (need_x) {
        auto& dx = t.grad(ix);
        for (int n = 0; n < sx.n; ++n)
          for (int oc = 0; oc < co; ++oc) {
            const int g0 = oc / cog;
            const T* gp = &g[((std::size_t(n) * co) + oc) * H * W];
            for (int ci = 0; ci < cig; ++ci) {
              T* dip = &dx[((std::size_t(n) * sx.c) + g0 * cig + ci) * H * W];
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const T wval =
                      wv[(((std::size_t(oc) * cig) + ci) * k + ky) * k + kx];
                  if (wval == T(0)) continue;
                  const int oy = (ky - k / 2) * dilation;
                  const int ox = (kx - k / 2) * dilation;
                  const int y0 = std::max(0, -oy), y1 = std::min(H, H - oy);
                  const int x0 = std::max(0, -ox), x1 = std::min(W, W - ox);
                  for (int y = y0; y < y1; ++y) {
                    T* __restrict drow = dip + (y + oy) * W + ox;
                    const T* __restrict grow = gp + y * W;
                    for (int xx = x0; xx < x1; ++xx)
                      drow[xx] += wval * grow[xx];
                  }
                }
            }
          }
      }
      if (need_w) {
        auto& dw = t.grad(iw);
        for (int n = 0; n < sx.n; ++n)
          for (int oc = 0; oc < co; ++oc) {
            const int g0 = oc / cog;
            const T* gp = &g[((std::size_t(n) * co) + oc) * H * W];
            for (int ci = 0; ci < cig; ++ci) {
              const T* ip =
                  &xv[((std::size_t(n) * sx.c) + g0 * cig + ci) * H * W];
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int oy = (ky - k / 2) * dilation;
                  const int ox = (kx - k / 2) * dilation;
                  const int y0 = std::max(0, -oy), y1 = std::min(H, H - oy);
                  const int x0 = std::max(0, -ox), x1 = std::min(W, W - ox);
                  T acc = T(0);
                  for (int y = y0; y < y1; ++y) {
                    const T* __restrict irow = ip + (y + oy) * W + ox;
                    const T* __restrict grow = gp + y * W;
                    for (int xx = x0; xx < x1; ++xx)
                      acc += irow[xx] * grow[xx];
                  }
                  dw[(((std::size_t(oc) * cig) + ci) * k + ky) * k + kx] += acc;
                }
            }
          }
      }
    };
    return r;
  }

  // ---- Fourier ----------------------------------------------------------------

  // twiddle tables for one (H, W, sign) transform, shared across planes
  struct DftTables {
    int H, W;
    std::vector<double> cosw, sinw, cosh, sinh;
    DftTables(int H_, int W_, double sign) : H(H_), W(W_) {
      const double twopi = 6.283185307179586476925286766559;
      cosw.resize(std::size_t(W) * W);
      sinw.resize(std::size_t(W) * W);
      cosh.resize(std::size_t(H) * H);
      sinh.resize(std::size_t(H) * H);
      for (int u = 0; u < W; ++u)
        for (int x = 0; x < W; ++x) {
          double a = sign * twopi * double(u) * double(x) / double(W);
          cosw[std::size_t(u) * W + x] = std::cos(a);
          sinw[std::size_t(u) * W + x] = std::sin(a);
        }
      for (int u = 0; u < H; ++u)
        for (int x = 0; x < H; ++x) {
          double a = sign * twopi * double(u) * double(x) / double(H);
          cosh[std::size_t(u) * H + x] = std::cos(a);
          sinh[std::size_t(u) * H + x] = std::sin(a);
        }
    }
  };

  // unnormalized 2-D DFT of one plane, row-column decomposition
  static void dft2_plane(const T* re_in, const T* im_in, T* re_out, T* im_out,
                         const DftTables& tb) {
    const int H = tb.H, W = tb.W;
    std::vector<double> tr(std::size_t(H) * W), ti(std::size_t(H) * W);
    // rows
    for (int y = 0; y < H; ++y)
      for (int u = 0; u < W; ++u) {
        double ar = 0.0, ai = 0.0;
        for (int x = 0; x < W; ++x) {
          double cr = tb.cosw[std::size_t(u) * W + x];
          double ci = tb.sinw[std::size_t(u) * W + x];
          double vr = double(re_in[y * W + x]);
          double vi = im_in ? double(im_in[y * W + x]) : 0.0;
          ar += vr * cr - vi * ci;
          ai += vr * ci + vi * cr;
        }
        tr[std::size_t(y) * W + u] = ar;
        ti[std::size_t(y) * W + u] = ai;
      }
    // columns
    for (int u = 0; u < W; ++u)
      for (int v = 0; v < H; ++v) {
        double ar = 0.0, ai = 0.0;
        for (int y = 0; y < H; ++y) {
          double cr = tb.cosh[std::size_t(v) * H + y];
          double ci = tb.sinh[std::size_t(v) * H + y];
          double vr = tr[std::size_t(y) * W + u];
          double vi = ti[std::size_t(y) * W + u];
          ar += vr * cr - vi * ci;
          ai += vr * ci + vi * cr;
        }
        re_out[v * W + u] = T(ar);
        im_out[v * W + u] = T(ai);
      }
  }

  // forward 2-D FFT; accepts real or complex input, emits complex
  Var fft2(Var a) { return transform2d(a, /*inverse=*/false); }

  // inverse 2-D FFT (1/HW normalized); emits complex
  Var ifft2(Var a) { return transform2d(a, /*inverse=*/true); }

  Var complex_real(Var a) {
    const Shape& s = shape(a);
    require(is_complex(a), "complex_real expects a complex tensor");
    const std::size_t n = std::size_t(s.numel());
    std::vector<T> out(value(a).begin(), value(a).begin() + n);
    Var r = push(s, false, needs(a), std::move(out), {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir, n](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const auto& g = t.grad(ir);
      auto& da = t.grad(ia);
      for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
    };
    return r;
  }

  Var make_complex(Var re, Var im) {
    const Shape& s = shape(re);
    require(shape(im) == s, "make_complex shape mismatch");
    require(!is_complex(re) && !is_complex(im),
            "make_complex expects real tensors");
    const std::size_t n = std::size_t(s.numel());
    std::vector<T> out(2 * n);
    std::copy(value(re).begin(), value(re).end(), out.begin());
    std::copy(value(im).begin(), value(im).end(), out.begin() + n);
    Var r = push(s, true, needs(re) || needs(im), std::move(out), {});
    int ia = re.id, ib = im.id, ir = r.id;
    node(r).backward_fn = [ia, ib, ir, n](Tape& t) {
      const auto& g = t.grad(ir);
      if (t.nodes_[ia].needs_grad) {
        auto& da = t.grad(ia);
        for (std::size_t i = 0; i < n; ++i) da[i] += g[i];
      }
      if (t.nodes_[ib].needs_grad) {
        auto& db = t.grad(ib);
        for (std::size_t i = 0; i < n; ++i) db[i] += g[n + i];
      }
    };
    return r;
  }

  Var complex_mul(Var a, Var b) {
    const Shape& s = shape(a);
    require(is_complex(a) && is_complex(b) && shape(b) == s,
            "complex_mul expects equal-shape complex tensors");
    const std::size_t n = std::size_t(s.numel());
    const auto& av = value(a);
    const auto& bv = value(b);
    std::vector<T> out(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = av[i] * bv[i] - av[n + i] * bv[n + i];
      out[n + i] = av[i] * bv[n + i] + av[n + i] * bv[i];
    }
    Var r = push(s, true, needs(a) || needs(b), std::move(out), {});
    int ia = a.id, ib = b.id, ir = r.id;
    node(r).backward_fn = [ia, ib, ir, n](Tape& t) {
      const auto& g = t.grad(ir);
      const auto& av = t.nodes_[ia].value;
      const auto& bv = t.nodes_[ib].value;
      if (t.nodes_[ia].needs_grad) {
        auto& da = t.grad(ia);
        for (std::size_t i = 0; i < n; ++i) {
          da[i] += g[i] * bv[i] + g[n + i] * bv[n + i];
          da[n + i] += -g[i] * bv[n + i] + g[n + i] * bv[i];
        }
      }
      if (t.nodes_[ib].needs_grad) {
        auto& db = t.grad(ib);
        for (std::size_t i = 0; i < n; ++i) {
          db[i] += g[i] * av[i] + g[n + i] * av[n + i];
          db[n + i] += -g[i] * av[n + i] + g[n + i] * av[i];
        }
      }
    };
    return r;
  }

  Var complex_conj(Var a) {
    const Shape& s = shape(a);
    require(is_complex(a), "complex_conj expects a complex tensor");
    const std::size_t n = std::size_t(s.numel());
    const auto& av = value(a);
    std::vector<T> out(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = av[i];
      out[n + i] = -av[n + i];
    }
    Var r = push(s, true, needs(a), std::move(out), {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir, n](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const auto& g = t.grad(ir);
      auto& da = t.grad(ia);
      for (std::size_t i = 0; i < n; ++i) {
        da[i] += g[i];
        da[n + i] -= g[n + i];
      }
    };
    return r;
  }

  // squared magnitude |a|^2, complex -> real
  Var complex_abs2(Var a) {
    const Shape& s = shape(a);
    require(is_complex(a), "complex_abs2 expects a complex tensor");
    const std::size_t n = std::size_t(s.numel());
    const auto& av = value(a);
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i)
      out[i] = av[i] * av[i] + av[n + i] * av[n + i];
    Var r = push(s, false, needs(a), std::move(out), {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir, n](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const auto& g = t.grad(ir);
      const auto& av = t.nodes_[ia].value;
      auto& da = t.grad(ia);
      for (std::size_t i = 0; i < n; ++i) {
        da[i] += T(2) * av[i] * g[i];
        da[n + i] += T(2) * av[n + i] * g[i];
      }
    };
    return r;
  }

  // magnitude |a| = sqrt(re^2 + im^2), complex -> real
  Var complex_abs(Var a) {
    const Shape& s = shape(a);
    require(is_complex(a), "complex_abs expects a complex tensor");
    const std::size_t n = std::size_t(s.numel());
    const auto& av = value(a);
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i)
      out[i] = std::sqrt(av[i] * av[i] + av[n + i] * av[n + i]);
    Var r = push(s, false, needs(a), std::move(out), {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir, n](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const auto& g = t.grad(ir);
      const auto& av = t.nodes_[ia].value;
      const auto& ov = t.nodes_[ir].value;
      auto& da = t.grad(ia);
      for (std::size_t i = 0; i < n; ++i) {
        if (ov[i] == T(0)) continue;
        da[i] += g[i] * av[i] / ov[i];
        da[n + i] += g[i] * av[n + i] / ov[i];
      }
    };
    return r;
  }

  // elementwise complex / real
  Var cdiv_real(Var a, Var d) {
    const Shape& s = shape(a);
    require(is_complex(a) && !is_complex(d) && shape(d) == s,
            "cdiv_real expects complex / real of equal shape");
    const std::size_t n = std::size_t(s.numel());
    const auto& av = value(a);
    const auto& dv = value(d);
    std::vector<T> out(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = av[i] / dv[i];
      out[n + i] = av[n + i] / dv[i];
    }
    Var r = push(s, true, needs(a) || needs(d), std::move(out), {});
    int ia = a.id, id_ = d.id, ir = r.id;
    node(r).backward_fn = [ia, id_, ir, n](Tape& t) {
      const auto& g = t.grad(ir);
      const auto& av = t.nodes_[ia].value;
      const auto& dv = t.nodes_[id_].value;
      if (t.nodes_[ia].needs_grad) {
        auto& da = t.grad(ia);
        for (std::size_t i = 0; i < n; ++i) {
          da[i] += g[i] / dv[i];
          da[n + i] += g[n + i] / dv[i];
        }
      }
      if (t.nodes_[id_].needs_grad) {
        auto& dd = t.grad(id_);
        for (std::size_t i = 0; i < n; ++i)
          dd[i] -= (g[i] * av[i] + g[n + i] * av[n + i]) / (dv[i] * dv[i]);
      }
    };
    return r;
  }

  // ---- losses ------------------------------------------------------------------

  // mean over elements of max(z,0) - z*t + log(1+exp(-|z|)); targets constant
  Var bce_logits(Var z, const std::vector<T>& targets) {
    const Shape& s = shape(z);
    require(!is_complex(z), "bce_logits expects real logits");
    require(std::int64_t(targets.size()) == s.numel(),
            "bce_logits target size mismatch");
    const auto& zv = value(z);
    const std::size_t m = zv.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double x = double(zv[i]), t0 = double(targets[i]);
      acc += std::max(x, 0.0) - x * t0 + std::log1p(std::exp(-std::abs(x)));
    }
    Var r = push(Shape(1, 1, 1, 1), false, needs(z), {T(acc / double(m))}, {});
    int iz = z.id, ir = r.id;
    node(r).backward_fn = [iz, ir, targets, m](Tape& t) {
      if (!t.nodes_[iz].needs_grad) return;
      const T g = t.grad(ir)[0];
      const auto& zv = t.nodes_[iz].value;
      auto& dz = t.grad(iz);
      for (std::size_t i = 0; i < m; ++i) {
        double x = double(zv[i]);
        double sig = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
        dz[i] += g * T((sig - double(targets[i])) / double(m));
      }
    };
    return r;
  }

  // ---- backward ------------------------------------------------------------------

  // Populates gradients of every reachable node and accumulates into the
  // gradients of leased Parameters. Only scalar real losses are accepted.
  void backward(Var loss) {
    const Node& ln = node(loss);
    require(!ln.complex && ln.shape.numel() == 1,
            "backward requires a scalar real loss, got shape " +
                ln.shape.str());
    grad(loss.id)[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[std::size_t(id)];
      if (!n.needs_grad || !n.backward_fn) continue;
      if (n.grad.empty()) continue;  // not reachable from the loss
      n.backward_fn(*this);
    }
  }

 private:
  std::vector<Node> nodes_;

  bool needs(Var v) const { return node(v).needs_grad; }

  Var push(Shape shape, bool complex, bool needs_grad, std::vector<T> value,
           std::function<void(Tape&)> fn) {
    Node n;
    n.shape = shape;
    n.complex = complex;
    n.needs_grad = needs_grad;
    n.value = std::move(value);
    n.backward_fn = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
  }

  void check_same_real(Var a, Var b, const char* opname) const {
    require(!is_complex(a) && !is_complex(b),
            std::string(opname) + " expects real tensors");
    require(shape(a) == shape(b), std::string(opname) + " shape mismatch: " +
                                      shape(a).str() + " vs " +
                                      shape(b).str());
  }

  // add (mode 0) / sub (mode 1); also valid for complex pairs
  Var binary_same(Var a, Var b, int mode) {
    require(is_complex(a) == is_complex(b),
            "add/sub cannot mix real and complex tensors");
    require(shape(a) == shape(b), "add/sub shape mismatch: " +
                                      shape(a).str() + " vs " +
                                      shape(b).str());
    const auto& av = value(a);
    const auto& bv = value(b);
    std::vector<T> out(av.size());
    if (mode == 0)
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    else
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    Var r = push(shape(a), is_complex(a), needs(a) || needs(b),
                 std::move(out), {});
    int ia = a.id, ib = b.id, ir = r.id;
    node(r).backward_fn = [ia, ib, ir, mode](Tape& t) {
      const auto& g = t.grad(ir);
      if (t.nodes_[ia].needs_grad) {
        auto& da = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (t.nodes_[ib].needs_grad) {
        auto& db = t.grad(ib);
        if (mode == 0)
          for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
        else
          for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
      }
    };
    return r;
  }

  template <typename FwdF, typename GradF>
  Var unary(Var a, const char* opname, FwdF f, GradF df) {
    require(!is_complex(a), std::string(opname) + " expects a real tensor");
    const auto& av = value(a);
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
    Var r = push(shape(a), false, needs(a), std::move(out), {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir, df](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const auto& g = t.grad(ir);
      const auto& av = t.nodes_[ia].value;
      const auto& ov = t.nodes_[ir].value;
      auto& da = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i)
        da[i] += g[i] * df(av[i], ov[i]);
    };
    return r;
  }

  // broadcast strides of b relative to a (0 where b's dim is 1)
  static void bcast_strides(const Shape& a, const Shape& b, std::int64_t st[4]) {
    require((b.n == a.n || b.n == 1) && (b.c == a.c || b.c == 1) &&
                (b.h == a.h || b.h == 1) && (b.w == a.w || b.w == 1),
            "broadcast shape " + b.str() + " incompatible with " + a.str());
    st[0] = b.n == 1 ? 0 : std::int64_t(b.c) * b.h * b.w;
    st[1] = b.c == 1 ? 0 : std::int64_t(b.h) * b.w;
    st[2] = b.h == 1 ? 0 : b.w;
    st[3] = b.w == 1 ? 0 : 1;
  }

  Var broadcast_binary(Var a, Var b, bool is_add) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    require(!is_complex(a) && !is_complex(b),
            "broadcast ops expect real tensors");
    std::int64_t st[4];
    bcast_strides(sa, sb, st);
    const auto& av = value(a);
    const auto& bv = value(b);
    std::vector<T> out(av.size());
    std::size_t i = 0;
    for (int n = 0; n < sa.n; ++n)
      for (int c = 0; c < sa.c; ++c)
        for (int y = 0; y < sa.h; ++y) {
          const std::int64_t base = n * st[0] + c * st[1] + y * st[2];
          if (is_add)
            for (int x = 0; x < sa.w; ++x, ++i)
              out[i] = av[i] + bv[std::size_t(base + x * st[3])];
          else
            for (int x = 0; x < sa.w; ++x, ++i)
              out[i] = av[i] * bv[std::size_t(base + x * st[3])];
        }
    Var r = push(sa, false, needs(a) || needs(b), std::move(out), {});
    int ia = a.id, ib = b.id, ir = r.id;
    node(r).backward_fn = [ia, ib, ir, is_add](Tape& t) {
      const auto& g = t.grad(ir);
      const Shape& sa = t.nodes_[ia].shape;
      const Shape& sb = t.nodes_[ib].shape;
      std::int64_t st[4];
      bcast_strides(sa, sb, st);
      const auto& av = t.nodes_[ia].value;
      const auto& bv = t.nodes_[ib].value;
      const bool na = t.nodes_[ia].needs_grad;
      const bool nb = t.nodes_[ib].needs_grad;
      if (!na && !nb) return;
      auto* da = na ? &t.grad(ia) : nullptr;
      auto* db = nb ? &t.grad(ib) : nullptr;
      std::size_t i = 0;
      for (int n = 0; n < sa.n; ++n)
        for (int c = 0; c < sa.c; ++c)
          for (int y = 0; y < sa.h; ++y) {
            const std::int64_t base = n * st[0] + c * st[1] + y * st[2];
            for (int x = 0; x < sa.w; ++x, ++i) {
              const std::size_t j = std::size_t(base + x * st[3]);
              if (is_add) {
                if (na) (*da)[i] += g[i];
                if (nb) (*db)[j] += g[i];
              } else {
                if (na) (*da)[i] += g[i] * bv[j];
                if (nb) (*db)[j] += g[i] * av[i];
              }
            }
          }
    };
    return r;
  }

  Var reduce_all(Var a, bool mean) {
    require(!is_complex(a), "global reductions expect real tensors");
    const auto& av = value(a);
    double acc = 0.0;
    for (auto v : av) acc += double(v);
    const T denom = mean ? T(av.size()) : T(1);
    Var r = push(Shape(1, 1, 1, 1), false, needs(a), {T(acc) / denom}, {});
    int ia = a.id, ir = r.id;
    node(r).backward_fn = [ia, ir, denom](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const T q = t.grad(ir)[0] / denom;
      auto& da = t.grad(ia);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += q;
    };
    return r;
  }

  Var transform2d(Var a, bool inverse) {
    const Shape& s = shape(a);
    require(s.h >= 1 && s.w >= 1, "fft2 needs spatial dims >= 1");
    const bool cin = is_complex(a);
    const std::size_t plane = std::size_t(s.h) * s.w;
    const std::size_t n = std::size_t(s.numel());
    const auto& av = value(a);
    std::vector<T> out(2 * n);
    const double sign = inverse ? 1.0 : -1.0;
    const T norm = inverse ? T(1) / T(plane) : T(1);
    DftTables tb(s.h, s.w, sign);
    for (int nc = 0; nc < s.n * s.c; ++nc) {
      const T* re_in = &av[std::size_t(nc) * plane];
      const T* im_in = cin ? &av[n + std::size_t(nc) * plane] : nullptr;
      dft2_plane(re_in, im_in, &out[std::size_t(nc) * plane],
                 &out[n + std::size_t(nc) * plane], tb);
    }
    if (inverse)
      for (auto& v : out) v *= norm;
    Var r = push(s, true, needs(a), std::move(out), {});
    int ia = a.id, ir = r.id;
    // adjoint of the complex-linear map: multiply by the conjugate-transposed
    // DFT matrix, i.e. run the opposite-sign transform on the gradient
    node(r).backward_fn = [ia, ir, inverse](Tape& t) {
      if (!t.nodes_[ia].needs_grad) return;
      const Shape& s = t.nodes_[ia].shape;
      const std::size_t plane = std::size_t(s.h) * s.w;
      const std::size_t n = std::size_t(s.numel());
      const auto& g = t.grad(ir);
      auto& da = t.grad(ia);
      const bool cin = t.nodes_[ia].complex;
      const double sign = inverse ? -1.0 : 1.0;
      const T norm = inverse ? T(1) / T(plane) : T(1);
      DftTables tb(s.h, s.w, sign);
      std::vector<T> tre(plane), tim(plane);
      for (int nc = 0; nc < s.n * s.c; ++nc) {
        dft2_plane(&g[std::size_t(nc) * plane], &g[n + std::size_t(nc) * plane],
                   tre.data(), tim.data(), tb);
        T* dre = &da[std::size_t(nc) * plane];
        for (std::size_t i = 0; i < plane; ++i) dre[i] += norm * tre[i];
        if (cin) {
          T* dim = &da[n + std::size_t(nc) * plane];
          for (std::size_t i = 0; i < plane; ++i) dim[i] += norm * tim[i];
        }
      }
    };
    return r;
  }
};

// x / sqrt(mean(x^2) + eps) per sample; composite of primitives, used to keep
// magnitudes bounded across chained fusion cells
template <typename T>
Var rms_normalize(Tape<T>& t, Var x, T eps = T(1e-6)) {
  Shape s = t.shape(x);
  const T inv_chw = T(1) / T(std::int64_t(s.c) * s.h * s.w);
  Var ms = t.scale(t.sum_per_sample(t.mul(x, x)), inv_chw);
  Var rms = t.sqrt_op(t.add_scalar(ms, eps));
  return t.mul_b(x, t.recip(rms));
}

// softmax on a plain vector (used by architecture derivation and reports)
inline std::vector<double> softmax(const std::vector<double>& logits) {
  require(!logits.empty(), "softmax requires at least one logit");
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    z += out[i];
  }
  for (auto& v : out) v /= z;
  return out;
}

}  // namespace fusenas
