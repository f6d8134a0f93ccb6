#pragma once

#include <array>
#include <string>
#include <vector>

#include "fusenas/fusion.hpp"
#include "fusenas/image.hpp"
#include "fusenas/ops.hpp"

namespace fusenas::model {

struct ModelConfig {
  // encoder widths are fixed by design; fusion sizing is the desk preset
  int enc_w1 = 16;
  int enc_w2 = 32;
  int enc_out = 32;
  int fusion_width = 64;
  int cell_channels = 8;
  int blocks = 3;
  int cells = 3;
  bool alpha_per_cell = false;
  int id_channels = 32;       // embedder output channels
  int id_proj_channels = 4;   // conditioning channels after the 1x1 reduction
  int attn_limit = 4096;

  std::string serialize() const;
  static ModelConfig deserialize(const std::string& text);
  std::uint64_t hash() const { return fnv1a(serialize()); }
};

// Frozen seeded embedder standing in for a pretrained face network.
// Four conv stages, three of them downsampling: 3 -> 8 -> 16 -> 32 -> 32,
// output spatial size input/8. Weights are fixed by a constant seed and are
// never trained, but gradients still flow through to the image.
template <typename T>
class Embedder {
 public:
  static constexpr std::uint64_t kFixedSeed = 0x0e3bedde5u;

  Embedder(ParamStore<T>& store, const std::string& prefix) {
    const int widths[5] = {3, 8, 16, 32, 32};
    for (int i = 0; i < 4; ++i) {
      auto& w = store.create(prefix + ".conv" + std::to_string(i) + ".w",
                             Shape(widths[i + 1], widths[i], 3, 3),
                             Init::zeros, /*trainable=*/false);
      auto& b = store.create(prefix + ".conv" + std::to_string(i) + ".b",
                             Shape(1, widths[i + 1], 1, 1), Init::zeros,
                             /*trainable=*/false);
      Rng rng(hash_combine(kFixedSeed, fnv1a(w.name)));
      double s = std::sqrt(2.0 / (double(widths[i]) * 9));
      for (auto& v : w.value) v = T(rng.normal(0.0, s));
      convs_[i] = {&w, &b};
    }
  }

  int out_channels() const { return 32; }

  Var forward(Tape<T>& t, Var x) const {
    const Shape& s = t.shape(x);
    require(s.c == 3, "embedder expects 3-channel input, got " + s.str());
    require(s.h % 8 == 0 && s.w % 8 == 0,
            "embedder needs spatial dims divisible by 8, got " + s.str());
    Var y = x;
    for (int i = 0; i < 4; ++i) {
      y = t.conv2d(y, t.param(*convs_[i].first));
      y = t.add_b(y, t.param(*convs_[i].second));
      y = t.leaky_relu(y);
      if (i < 3) y = t.downsample2x_avg(y);
    }
    return y;
  }

  // deterministic feature map of one image (no gradients kept)
  Array4<T> embed_image(const Image& img) const {
    Tape<T> t;
    Var x = t.input(Shape(1, 3, img.h, img.w), image_to_chw<T>(img));
    Var f = forward(t, x);
    return Array4<T>(t.shape(f), t.value(f));
  }

 private:
  std::array<std::pair<Parameter<T>*, Parameter<T>*>, 4> convs_;
};

// ---- AdaIN and identity information (conditioning path, no gradients) -------

// sigma(style) * (content - mu(content)) / sigma(content) + mu(style),
// per channel over spatial dims; near-constant content channels pass through
template <typename T>
Array4<T> adain(const Array4<T>& content, const Array4<T>& style) {
  require(content.shape == style.shape,
          "adain: shapes differ, " + content.shape.str() + " vs " +
              style.shape.str());
  const Shape& s = content.shape;
  const int hw = s.h * s.w;
  Array4<T> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* cp = &content.v[(std::size_t(n) * s.c + c) * hw];
      const T* sp = &style.v[(std::size_t(n) * s.c + c) * hw];
      T* op = &out.v[(std::size_t(n) * s.c + c) * hw];
      double mu_c = 0.0, mu_s = 0.0;
      for (int i = 0; i < hw; ++i) {
        mu_c += double(cp[i]);
        mu_s += double(sp[i]);
      }
      mu_c /= hw;
      mu_s /= hw;
      double var_c = 0.0, var_s = 0.0;
      for (int i = 0; i < hw; ++i) {
        var_c += (double(cp[i]) - mu_c) * (double(cp[i]) - mu_c);
        var_s += (double(sp[i]) - mu_s) * (double(sp[i]) - mu_s);
      }
      double sd_c = std::sqrt(var_c / hw), sd_s = std::sqrt(var_s / hw);
      if (sd_c <= 1e-8) {
        for (int i = 0; i < hw; ++i) op[i] = cp[i];
        continue;
      }
      for (int i = 0; i < hw; ++i)
        op[i] = T(sd_s * ((double(cp[i]) - mu_c) / sd_c) + mu_s);
    }
  return out;
}

// I_iden = elementwise mean of the AdaIN-normalized clean-image features;
// summation order is fixed by sorting on the reference ids
template <typename T>
Array4<T> identity_info(const Embedder<T>& emb, const Image& y,
                        std::vector<std::pair<std::string, Image>> clean_set) {
  require(!clean_set.empty(), "identity_info: clean set must be non-empty");
  std::sort(clean_set.begin(), clean_set.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  Array4<T> fy = emb.embed_image(y);
  Array4<T> acc(fy.shape);
  for (const auto& [id, img] : clean_set) {
    (void)id;
    Array4<T> fc = emb.embed_image(img);
    require(fc.shape == fy.shape,
            "identity_info: reference feature shape mismatch");
    Array4<T> aligned = adain(fc, fy);
    for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += aligned.v[i];
  }
  const T inv = T(1) / T(clean_set.size());
  for (auto& v : acc.v) v *= inv;
  return acc;
}

// ---- classification network ---------------------------------------------------

// small conv stack ending in a zero-initialized linear head, so the
// untrained network reports 0.5 for every class
template <typename T>
class Classifier {
 public:
  Classifier(ParamStore<T>& store, const std::string& prefix) {
    c1_ = ops::Conv<T>(store, prefix + ".conv1", 16, 3, 3);
    c2_ = ops::Conv<T>(store, prefix + ".conv2", 32, 16, 3);
    c3_ = ops::Conv<T>(store, prefix + ".conv3", 32, 32, 3);
    head_ = ops::Conv<T>(store, prefix + ".head", 3, 32, 1, 1, 1, Init::zeros);
  }

  Var forward_logits(Tape<T>& t, Var y) const {
    Var z = t.downsample2x_avg(t.leaky_relu(c1_.forward(t, y)));
    z = t.downsample2x_avg(t.leaky_relu(c2_.forward(t, z)));
    z = t.leaky_relu(c3_.forward(t, z));
    z = t.channel_mean(z);  // (n,32,1,1)
    return head_.forward(t, z);
  }

  // sigmoid class scores for one image
  std::array<double, 3> classify(const Image& img) const {
    Tape<T> t;
    Var x = t.input(Shape(1, 3, img.h, img.w), image_to_chw<T>(img));
    Var p = t.sigmoid(forward_logits(t, x));
    const auto& v = t.value(p);
    return {double(v[0]), double(v[1]), double(v[2])};
  }

  static std::array<int, 3> threshold(const std::array<double, 3>& p) {
    return {p[0] >= 0.5 ? 1 : 0, p[1] >= 0.5 ? 1 : 0, p[2] >= 0.5 ? 1 : 0};
  }

 private:
  ops::Conv<T> c1_, c2_, c3_, head_;
};

// ---- task encoder / decoder ------------------------------------------------------

template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParamStore<T>& store, const std::string& prefix, int in_ch,
          const ModelConfig& cfg) {
    const int w1 = cfg.enc_w1, w2 = cfg.enc_w2, w3 = cfg.enc_out;
    c_[0] = ops::Conv<T>(store, prefix + ".s1a", w1, in_ch, 3);
    c_[1] = ops::Conv<T>(store, prefix + ".s1b", w1, w1, 3);
    c_[2] = ops::Conv<T>(store, prefix + ".s2a", w2, w1, 3);
    c_[3] = ops::Conv<T>(store, prefix + ".s2b", w2, w2, 3);
    c_[4] = ops::Conv<T>(store, prefix + ".s3a", w3, w2, 3);
    c_[5] = ops::Conv<T>(store, prefix + ".s3b", w3, w3, 3);
  }

  // (n,in,H,W) -> (n,enc_out,H/4,W/4)
  Var forward(Tape<T>& t, Var x) const {
    Var z = t.leaky_relu(c_[0].forward(t, x));
    z = t.leaky_relu(c_[1].forward(t, z));
    z = t.downsample2x_avg(z);
    z = t.leaky_relu(c_[2].forward(t, z));
    z = t.leaky_relu(c_[3].forward(t, z));
    z = t.downsample2x_avg(z);
    z = t.leaky_relu(c_[4].forward(t, z));
    z = t.leaky_relu(c_[5].forward(t, z));
    return z;
  }

 private:
  ops::Conv<T> c_[6];
};

template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(ParamStore<T>& store, const std::string& prefix, int in_ch) {
    c_[0] = ops::Conv<T>(store, prefix + ".c1", 64, in_ch, 3);
    c_[1] = ops::Conv<T>(store, prefix + ".c2", 32, 64, 3);
    c_[2] = ops::Conv<T>(store, prefix + ".c3", 32, 32, 3);
    c_[3] = ops::Conv<T>(store, prefix + ".out", 3, 32, 3);
    // start mid-range so the saturating output map passes gradient
    std::fill(c_[3].b->value.begin(), c_[3].b->value.end(), T(0.5));
  }

  // (n,in,H/4,W/4) -> (n,3,H,W), values in [0,1]
  Var forward(Tape<T>& t, Var z) const {
    Var y = t.leaky_relu(c_[0].forward(t, z));
    y = t.upsample2x_nearest(y);
    y = t.leaky_relu(c_[1].forward(t, y));
    y = t.upsample2x_nearest(y);
    y = t.leaky_relu(c_[2].forward(t, y));
    y = c_[3].forward(t, y);
    return t.clamp01(y);
  }

 private:
  ops::Conv<T> c_[4];
};

// ---- full restoration network -------------------------------------------------------

enum class FusionMode { relaxed, discrete };

// Conditioning inputs for one forward pass; label is n*3 class scores,
// iden is the (n, id_channels, h/8, w/8) identity feature map or empty.
template <typename T>
struct Conditioning {
  std::vector<T> label;
  Array4<T> iden;
};

template <typename T>
class RestorationNet {
 public:
  RestorationNet(ParamStore<T>& store, const ModelConfig& cfg)
      : cfg_(cfg),
        embedder_(store, "embedder"),
        classifier_(store, "cn"),
        enc_in_(3 + 3 + cfg.id_proj_channels) {
    iden_proj_ = ops::Conv<T>(store, "cond.iden_proj", cfg.id_proj_channels,
                              cfg.id_channels, 1);
    film_ = ops::Conv<T>(store, "cond.film", 3 * cfg.enc_out, 3, 1, 1, 1,
                         Init::zeros);
    enc_b_ = Encoder<T>(store, "enc.blur", enc_in_, cfg);
    enc_n_ = Encoder<T>(store, "enc.noise", enc_in_, cfg);
    enc_l_ = Encoder<T>(store, "enc.lowlight", enc_in_, cfg);
    fusion_ = std::make_unique<fusion::FusionNetwork<T>>(
        store, "fusion", 3 * cfg.enc_out, cfg.fusion_width, cfg.cell_channels,
        cfg.blocks, cfg.cells, ops::operator_registry(), cfg.alpha_per_cell,
        cfg.attn_limit);
    decoder_ = Decoder<T>(store, "decoder", cfg.fusion_width);
  }

  const ModelConfig& config() const { return cfg_; }
  Embedder<T>& embedder() { return embedder_; }
  Classifier<T>& classifier() { return classifier_; }
  fusion::FusionNetwork<T>& fusion_net() { return *fusion_; }
  Encoder<T>& encoder(int i) {
    return i == 0 ? enc_b_ : (i == 1 ? enc_n_ : enc_l_);
  }

  // zero_branch (0=blur,1=noise,2=lowlight) replaces that encoder's features
  // with zeros; used to probe branch liveness
  Var forward(Tape<T>& t, Var y, const Conditioning<T>& cond,
              FusionMode mode, const fusion::ArchSpec* arch = nullptr,
              int zero_branch = -1) {
    const Shape& s = t.shape(y);
    require(s.c == 3, "restoration input must be 3-channel, got " + s.str());
    require(s.h % 8 == 0 && s.w % 8 == 0,
            "restoration input dims must be divisible by 8");
    require(int(cond.label.size()) == s.n * 3,
            "conditioning label size mismatch");

    // class scores broadcast to constant channels
    std::vector<T> cbuf(std::size_t(s.n) * 3 * s.h * s.w);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < 3; ++c)
        std::fill(&cbuf[(std::size_t(n) * 3 + c) * s.h * s.w],
                  &cbuf[(std::size_t(n) * 3 + c) * s.h * s.w] + s.h * s.w,
                  cond.label[std::size_t(n) * 3 + c]);
    Var c_chan = t.input(Shape(s.n, 3, s.h, s.w), std::move(cbuf));

    // identity features resized to full resolution, then reduced to 4 channels
    Var iden_in;
    if (cond.iden.v.empty()) {
      iden_in = t.zeros(Shape(s.n, cfg_.id_channels, s.h, s.w));
    } else {
      require(cond.iden.shape.n == s.n &&
                  cond.iden.shape.c == cfg_.id_channels,
              "identity feature shape mismatch");
      Array4<T> resized = bilinear_resize(cond.iden, s.h, s.w);
      iden_in = t.input(resized.shape, std::move(resized.v));
    }
    Var iden_cond = iden_proj_.forward(t, iden_in);

    Var enc_in = t.concat_channels({y, c_chan, iden_cond});
    Var fb = enc_b_.forward(t, enc_in);
    Var fn = enc_n_.forward(t, enc_in);
    Var fl = enc_l_.forward(t, enc_in);
    if (zero_branch == 0) fb = t.zeros(t.shape(fb));
    if (zero_branch == 1) fn = t.zeros(t.shape(fn));
    if (zero_branch == 2) fl = t.zeros(t.shape(fl));
    Var fin = t.concat_channels({fb, fn, fl});

    // FiLM-style per-channel scale (1 + linear(c)) on the fusion input
    Var label_node =
        t.input(Shape(s.n, 3, 1, 1),
                std::vector<T>(cond.label.begin(), cond.label.end()));
    Var scale = t.add_scalar(film_.forward(t, label_node), T(1));
    fin = t.mul_b(fin, scale);

    Var fused;
    if (mode == FusionMode::relaxed) {
      fused = fusion_->forward_relaxed(t, fin);
    } else {
      require(arch != nullptr, "discrete mode requires an architecture");
      fused = fusion_->forward_discrete(t, fin, *arch);
    }
    return decoder_.forward(t, fused);
  }

  // single-image restoration with a loaded checkpoint
  Image restore_image(const Image& y,
                      const std::vector<std::pair<std::string, Image>>&
                          identity_refs,
                      FusionMode mode, const fusion::ArchSpec* arch = nullptr) {
    auto scores = classifier_.classify(y);
    Conditioning<T> cond;
    cond.label = {T(scores[0]), T(scores[1]), T(scores[2])};
    if (!identity_refs.empty())
      cond.iden = identity_info(embedder_, y, identity_refs);
    Tape<T> t;
    Var x = t.input(Shape(1, 3, y.h, y.w), image_to_chw<T>(y));
    Var out = forward(t, x, cond, mode, arch);
    return image_from_chw(t.value(out), y.h, y.w);
  }

 private:
  ModelConfig cfg_;
  Embedder<T> embedder_;
  Classifier<T> classifier_;
  int enc_in_;
  ops::Conv<T> iden_proj_, film_;
  Encoder<T> enc_b_, enc_n_, enc_l_;
  std::unique_ptr<fusion::FusionNetwork<T>> fusion_;
  Decoder<T> decoder_;
};

// ---- config serialization ----------------------------------------------------

inline std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "enc_w1 = " << enc_w1 << "\n";
  os << "enc_w2 = " << enc_w2 << "\n";
  os << "enc_out = " << enc_out << "\n";
  os << "fusion_width = " << fusion_width << "\n";
  os << "cell_channels = " << cell_channels << "\n";
  os << "blocks = " << blocks << "\n";
  os << "cells = " << cells << "\n";
  os << "alpha_per_cell = " << (alpha_per_cell ? 1 : 0) << "\n";
  os << "id_channels = " << id_channels << "\n";
  os << "id_proj_channels = " << id_proj_channels << "\n";
  os << "attn_limit = " << attn_limit << "\n";
  return os.str();
}

inline ModelConfig ModelConfig::deserialize(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key, eq;
    long value = 0;
    if (!(ls >> key >> eq >> value) || eq != "=") continue;
    if (key == "enc_w1") cfg.enc_w1 = int(value);
    else if (key == "enc_w2") cfg.enc_w2 = int(value);
    else if (key == "enc_out") cfg.enc_out = int(value);
    else if (key == "fusion_width") cfg.fusion_width = int(value);
    else if (key == "cell_channels") cfg.cell_channels = int(value);
    else if (key == "blocks") cfg.blocks = int(value);
    else if (key == "cells") cfg.cells = int(value);
    else if (key == "alpha_per_cell") cfg.alpha_per_cell = value != 0;
    else if (key == "id_channels") cfg.id_channels = int(value);
    else if (key == "id_proj_channels") cfg.id_proj_channels = int(value);
    else if (key == "attn_limit") cfg.attn_limit = int(value);
    else fail("unknown model config key: " + key);
  }
  return cfg;
}

}  // namespace fusenas::model
