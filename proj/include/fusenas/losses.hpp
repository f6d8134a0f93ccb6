#pragma once

#include <vector>

#include "fusenas/model.hpp"
#include "fusenas/tape.hpp"

namespace fusenas::losses {

struct LossWeights {
  double lambda_per = 0.04;
  double lambda_iden = 0.003;
};

// mean squared error over all elements
template <typename T>
Var l2_loss(Tape<T>& t, Var xhat, Var x) {
  require(t.shape(xhat) == t.shape(x),
          "l2_loss shape mismatch: " + t.shape(xhat).str() + " vs " +
              t.shape(x).str());
  Var d = t.sub(xhat, x);
  return t.global_mean(t.mul(d, d));
}

// (1/NHW) sum |F(xhat) - F(x)| on embedder features; the target features are
// constants computed from the clean image
template <typename T>
Var perceptual_loss(Tape<T>& t, const model::Embedder<T>& emb, Var xhat,
                    const Array4<T>& target_features) {
  Var f = emb.forward(t, xhat);
  require(t.shape(f) == target_features.shape,
          "perceptual_loss: target feature shape mismatch");
  Var target = t.input(target_features.shape, target_features.v);
  return t.global_mean(t.abs_op(t.sub(f, target)));
}

// flattened, per-sample L2-normalized features of one image (identity target)
template <typename T>
Array4<T> normalized_features(const model::Embedder<T>& emb, const Image& img) {
  Array4<T> f = emb.embed_image(img);
  double ss = 0.0;
  for (T v : f.v) ss += double(v) * double(v);
  const T inv = ss > 0 ? T(1.0 / std::sqrt(ss)) : T(0);
  for (auto& v : f.v) v *= inv;
  return f;
}

// (1/n) sum_i arccos(<F(xhat), F(C_i)>) with cosine-similarity inner products;
// refs[i] holds the i-th reference's pre-normalized features for every batch
// sample, shape (batch, C, h, w)
template <typename T>
Var identity_loss(Tape<T>& t, const model::Embedder<T>& emb, Var xhat,
                  const std::vector<Array4<T>>& refs) {
  require(!refs.empty(), "identity_loss: clean reference set is empty");
  Var f = emb.forward(t, xhat);
  // per-sample L2 normalization
  Var norm = t.sqrt_op(t.sum_per_sample(t.mul(f, f)));
  Var fn = t.mul_b(f, t.recip(norm));
  Var acc{-1};
  for (const auto& ref : refs) {
    require(ref.shape == t.shape(f),
            "identity_loss: reference feature shape mismatch");
    Var r = t.input(ref.shape, ref.v);
    Var cosine = t.sum_per_sample(t.mul(fn, r));  // (n,1,1,1)
    Var ang = t.arccos(cosine);
    acc = acc.valid() ? t.add(acc, ang) : ang;
  }
  acc = t.scale(acc, T(1) / T(refs.size()));
  return t.global_mean(acc);  // mean over the batch
}

template <typename T>
struct LossTerms {
  Var total;
  Var l2;
  Var per;   // invalid when the perceptual term is disabled
  Var iden;  // invalid when the identity term is disabled
};

// L_final = L2 + lambda_per * L_per + lambda_iden * L_iden
template <typename T>
LossTerms<T> final_loss(Tape<T>& t, const model::Embedder<T>& emb, Var xhat,
                        Var x, const Array4<T>& target_features,
                        const std::vector<Array4<T>>& identity_refs,
                        const LossWeights& w = {}) {
  LossTerms<T> out;
  out.l2 = l2_loss(t, xhat, x);
  out.total = out.l2;
  if (w.lambda_per > 0.0) {
    out.per = perceptual_loss(t, emb, xhat, target_features);
    out.total = t.add(out.total, t.scale(out.per, T(w.lambda_per)));
  }
  if (w.lambda_iden > 0.0) {
    require(!identity_refs.empty(),
            "final_loss: identity references required when lambda_iden > 0");
    out.iden = identity_loss(t, emb, xhat, identity_refs);
    out.total = t.add(out.total, t.scale(out.iden, T(w.lambda_iden)));
  }
  return out;
}

}  // namespace fusenas::losses
