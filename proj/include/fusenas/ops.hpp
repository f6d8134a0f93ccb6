#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fusenas/parameter.hpp"
#include "fusenas/tape.hpp"

namespace fusenas::ops {

// Candidate operator set of the fusion cell. Registry order is the canonical
// index used by the architecture logits.
enum class OperatorKind {
  dilconv3,
  dilconv5,
  sepconv3,
  sepconv5,
  identity,
  zero,
  self_attention,
  res2block,
  res_op,
  deveil_op,
  fft_op,
};

inline const std::vector<OperatorKind>& operator_registry() {
  static const std::vector<OperatorKind> all = {
      OperatorKind::dilconv3,  OperatorKind::dilconv5,
      OperatorKind::sepconv3,  OperatorKind::sepconv5,
      OperatorKind::identity,  OperatorKind::zero,
      OperatorKind::self_attention, OperatorKind::res2block,
      OperatorKind::res_op,    OperatorKind::deveil_op,
      OperatorKind::fft_op};
  return all;
}

inline const char* kind_name(OperatorKind k) {
  switch (k) {
    case OperatorKind::dilconv3: return "dilconv3";
    case OperatorKind::dilconv5: return "dilconv5";
    case OperatorKind::sepconv3: return "sepconv3";
    case OperatorKind::sepconv5: return "sepconv5";
    case OperatorKind::identity: return "identity";
    case OperatorKind::zero: return "zero";
    case OperatorKind::self_attention: return "self_attention";
    case OperatorKind::res2block: return "res2block";
    case OperatorKind::res_op: return "res_op";
    case OperatorKind::deveil_op: return "deveil_op";
    case OperatorKind::fft_op: return "fft_op";
  }
  return "?";
}

inline OperatorKind kind_from_name(const std::string& s) {
  for (OperatorKind k : operator_registry())
    if (s == kind_name(k)) return k;
  fail("unknown operator kind: " + s);
}

inline int zero_op_index() { return 5; }

// learnable parameter count of one operator instance at channel width c
inline std::int64_t param_count(OperatorKind kind, int c) {
  const std::int64_t C = c;
  const std::int64_t c8 = std::max<std::int64_t>(1, C / 8);
  const std::int64_t c4 = C / 4;
  switch (kind) {
    case OperatorKind::dilconv3: return 9 * C * C + C;
    case OperatorKind::dilconv5: return 25 * C * C + C;
    case OperatorKind::sepconv3: return 9 * C + C * C + C;
    case OperatorKind::sepconv5: return 25 * C + C * C + C;
    case OperatorKind::identity: return 0;
    case OperatorKind::zero: return 0;
    case OperatorKind::self_attention:
      return 2 * (C * c8 + c8) + C * C + C + 1;
    case OperatorKind::res2block:
      return 3 * (9 * c4 * c4 + c4) + C * C + C;
    case OperatorKind::res_op: return 2 * (9 * C * C + C);
    case OperatorKind::deveil_op: return 2 * (9 * C * C + C);
    case OperatorKind::fft_op: return 9 * C * C + 2 * C;
  }
  return 0;
}

// conv + bias bundle used by several operators
template <typename T>
struct Conv {
  Parameter<T>* w = nullptr;
  Parameter<T>* b = nullptr;
  int dilation = 1;
  int groups = 1;

  Conv() = default;
  Conv(ParamStore<T>& store, const std::string& prefix, int co, int ci, int k,
       int dilation_ = 1, int groups_ = 1, Init init = Init::he_normal)
      : dilation(dilation_), groups(groups_) {
    w = &store.create(prefix + ".w", Shape(co, ci / groups_, k, k), init,
                      true, double(ci / groups_) * k * k);
    b = &store.create(prefix + ".b", Shape(1, co, 1, 1), Init::zeros);
  }

  Var forward(Tape<T>& t, Var x) const {
    Var y = t.conv2d(x, t.param(*w), dilation, groups);
    return t.add_b(y, t.param(*b));
  }
};

// shape-preserving C x H x W -> C x H x W operator
template <typename T>
class Operator {
 public:
  virtual ~Operator() = default;
  virtual OperatorKind kind() const = 0;
  virtual Var forward(Tape<T>& t, Var x) = 0;
};

namespace detail {

template <typename T>
class DilConv final : public Operator<T> {
 public:
  DilConv(ParamStore<T>& s, const std::string& p, int c, int k)
      : kind_(k == 3 ? OperatorKind::dilconv3 : OperatorKind::dilconv5),
        conv_(s, p + ".conv", c, c, k, /*dilation=*/2) {}
  OperatorKind kind() const override { return kind_; }
  Var forward(Tape<T>& t, Var x) override {
    return conv_.forward(t, t.leaky_relu(x));
  }

 private:
  OperatorKind kind_;
  Conv<T> conv_;
};

template <typename T>
class SepConv final : public Operator<T> {
 public:
  SepConv(ParamStore<T>& s, const std::string& p, int c, int k)
      : kind_(k == 3 ? OperatorKind::sepconv3 : OperatorKind::sepconv5) {
    dw_ = &s.create(p + ".dw.w", Shape(c, 1, k, k), Init::he_normal,
                    true, double(k) * k);
    pw_ = Conv<T>(s, p + ".pw", c, c, 1);
  }
  OperatorKind kind() const override { return kind_; }
  Var forward(Tape<T>& t, Var x) override {
    Var y = t.leaky_relu(x);
    y = t.conv2d(y, t.param(*dw_), 1, t.shape(x).c);
    return pw_.forward(t, y);
  }

 private:
  OperatorKind kind_;
  Parameter<T>* dw_ = nullptr;
  Conv<T> pw_;
};

template <typename T>
class IdentityOp final : public Operator<T> {
 public:
  OperatorKind kind() const override { return OperatorKind::identity; }
  Var forward(Tape<T>&, Var x) override { return x; }
};

template <typename T>
class ZeroOp final : public Operator<T> {
 public:
  OperatorKind kind() const override { return OperatorKind::zero; }
  Var forward(Tape<T>& t, Var x) override { return t.zeros(t.shape(x)); }
};

template <typename T>
class SelfAttention final : public Operator<T> {
 public:
  SelfAttention(ParamStore<T>& s, const std::string& p, int c,
                int spatial_limit)
      : limit_(spatial_limit), c8_(std::max(1, c / 8)) {
    q_ = Conv<T>(s, p + ".q", c8_, c, 1);
    k_ = Conv<T>(s, p + ".k", c8_, c, 1);
    v_ = Conv<T>(s, p + ".v", c, c, 1);
    gamma_ = &s.create(p + ".gamma", Shape(1, 1, 1, 1), Init::zeros);
  }
  OperatorKind kind() const override { return OperatorKind::self_attention; }
  Var forward(Tape<T>& t, Var x) override {
    const Shape& sx = t.shape(x);
    const int hw = sx.h * sx.w;
    require(hw <= limit_, "self_attention spatial size " + std::to_string(hw) +
                              " exceeds limit " + std::to_string(limit_));
    Var q = t.reshape(q_.forward(t, x), Shape(sx.n, 1, c8_, hw));
    Var k = t.reshape(k_.forward(t, x), Shape(sx.n, 1, c8_, hw));
    Var v = t.reshape(v_.forward(t, x), Shape(sx.n, 1, sx.c, hw));
    Var scores = t.scale(t.matmul(q, k, /*ta=*/true), T(1) / std::sqrt(T(c8_)));
    Var attn = t.softmax_rows(scores);  // (n,1,hw,hw), rows sum to 1
    Var out = t.matmul(v, attn, false, /*tb=*/true);
    out = t.reshape(out, sx);
    return t.add(x, t.mul_b(out, t.param(*gamma_)));
  }

 private:
  int limit_;
  int c8_;
  Conv<T> q_, k_, v_;
  Parameter<T>* gamma_ = nullptr;
};

template <typename T>
class Res2Block final : public Operator<T> {
 public:
  Res2Block(ParamStore<T>& s, const std::string& p, int c) : c_(c) {
    require(c % 4 == 0, "res2block requires channels divisible by 4, got " +
                            std::to_string(c));
    for (int i = 0; i < 3; ++i)
      casc_[i] = Conv<T>(s, p + ".casc" + std::to_string(i + 2), c / 4, c / 4,
                         3);
    fuse_ = Conv<T>(s, p + ".fuse", c, c, 1);
  }
  OperatorKind kind() const override { return OperatorKind::res2block; }
  Var forward(Tape<T>& t, Var x) override {
    const int q = c_ / 4;
    std::vector<Var> ys;
    Var prev = t.slice_channels(x, 0, q);
    ys.push_back(prev);
    for (int i = 1; i < 4; ++i) {
      Var si = t.slice_channels(x, i * q, (i + 1) * q);
      prev = casc_[i - 1].forward(t, t.add(si, prev));
      ys.push_back(prev);
    }
    Var cat = t.concat_channels(ys);
    return t.add(x, fuse_.forward(t, cat));
  }

 private:
  int c_;
  Conv<T> casc_[3];
  Conv<T> fuse_;
};

template <typename T>
class ResOp final : public Operator<T> {
 public:
  ResOp(ParamStore<T>& s, const std::string& p, int c)
      : conv1_(s, p + ".conv1", c, c, 3), conv2_(s, p + ".conv2", c, c, 3) {}
  OperatorKind kind() const override { return OperatorKind::res_op; }
  Var forward(Tape<T>& t, Var x) override {
    // subtract the estimated noise component
    Var noise = conv2_.forward(t, t.leaky_relu(conv1_.forward(t, x)));
    return t.sub(x, noise);
  }

 private:
  Conv<T> conv1_, conv2_;
};

template <typename T>
class DeveilOp final : public Operator<T> {
 public:
  DeveilOp(ParamStore<T>& s, const std::string& p, int c)
      : conv1_(s, p + ".conv1", c, c, 3), conv2_(s, p + ".conv2", c, c, 3) {}
  OperatorKind kind() const override { return OperatorKind::deveil_op; }
  Var forward(Tape<T>& t, Var x) override {
    // learned multiplicative mask applied to the input features
    Var mask = conv2_.forward(t, t.leaky_relu(conv1_.forward(t, x)));
    return t.mul(mask, x);
  }

 private:
  Conv<T> conv1_, conv2_;
};

template <typename T>
class FftOp final : public Operator<T> {
 public:
  static constexpr double kEps = 0.01;

  FftOp(ParamStore<T>& s, const std::string& p, int c) : c_(c) {
    require(c % 2 == 0,
            "fft_op requires an even channel count, got " + std::to_string(c));
    conv1_ = Conv<T>(s, p + ".conv1", c, c / 2, 3);
    conv2_ = Conv<T>(s, p + ".conv2", c, c / 2, 3);
  }
  OperatorKind kind() const override { return OperatorKind::fft_op; }
  Var forward(Tape<T>& t, Var x) override {
    const int c = t.shape(x).c;
    require(c == c_, "fft_op built for " + std::to_string(c_) +
                         " channels, got " + std::to_string(c));
    Var x1 = conv1_.forward(t, t.slice_channels(x, 0, c / 2));
    Var x2 = conv2_.forward(t, t.slice_channels(x, c / 2, c));
    Var X1 = t.fft2(x1);
    Var X2 = t.fft2(x2);
    // X_out = X2*X1 / (|X2|^2 + eps)
    Var num = t.complex_mul(X2, X1);
    Var den = t.add_scalar(t.complex_abs2(X2), T(kEps));
    Var Xout = t.cdiv_real(num, den);
    return t.complex_real(t.ifft2(Xout));
  }

  const Conv<T>& branch1() const { return conv1_; }
  const Conv<T>& branch2() const { return conv2_; }

 private:
  int c_;
  Conv<T> conv1_, conv2_;
};

}  // namespace detail

template <typename T>
std::unique_ptr<Operator<T>> make_operator(OperatorKind kind, int channels,
                                           ParamStore<T>& store,
                                           const std::string& prefix,
                                           int attn_spatial_limit = 4096) {
  using namespace detail;
  switch (kind) {
    case OperatorKind::dilconv3:
      return std::make_unique<DilConv<T>>(store, prefix, channels, 3);
    case OperatorKind::dilconv5:
      return std::make_unique<DilConv<T>>(store, prefix, channels, 5);
    case OperatorKind::sepconv3:
      return std::make_unique<SepConv<T>>(store, prefix, channels, 3);
    case OperatorKind::sepconv5:
      return std::make_unique<SepConv<T>>(store, prefix, channels, 5);
    case OperatorKind::identity:
      return std::make_unique<IdentityOp<T>>();
    case OperatorKind::zero:
      return std::make_unique<ZeroOp<T>>();
    case OperatorKind::self_attention:
      return std::make_unique<SelfAttention<T>>(store, prefix, channels,
                                                attn_spatial_limit);
    case OperatorKind::res2block:
      return std::make_unique<Res2Block<T>>(store, prefix, channels);
    case OperatorKind::res_op:
      return std::make_unique<ResOp<T>>(store, prefix, channels);
    case OperatorKind::deveil_op:
      return std::make_unique<DeveilOp<T>>(store, prefix, channels);
    case OperatorKind::fft_op:
      return std::make_unique<detail::FftOp<T>>(store, prefix, channels);
  }
  fail("unknown operator kind");
}

}  // namespace fusenas::ops
