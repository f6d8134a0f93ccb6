#include "fusenas/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fusenas/checkpoint.hpp"
#include "fusenas/facegen.hpp"
#include "fusenas/metrics.hpp"

namespace fs = std::filesystem;

namespace fusenas::train {

// ---- config ---------------------------------------------------------------------

void TrainConfig::validate() const {
  require(batch_size > 0, "batch_size must be positive");
  require(lr > 0.0, "lr must be positive");
  require(iterations >= 0, "iterations must be non-negative");
  require(alpha_lr > 0.0, "alpha_lr must be positive");
  require(iden_dropout >= 0.0 && iden_dropout <= 1.0,
          "iden_dropout must be a probability");
  require(resolution > 0 && resolution % 8 == 0,
          "resolution must be a positive multiple of 8");
}

std::string TrainConfig::serialize() const {
  std::ostringstream os;
  os << "batch_size = " << batch_size << "\n";
  os << "lr = " << lr << "\n";
  os << "iterations = " << iterations << "\n";
  os << "alpha_lr = " << alpha_lr << "\n";
  os << "seed = " << seed << "\n";
  os << "iden_dropout = " << iden_dropout << "\n";
  os << "resolution = " << resolution << "\n";
  return os.str();
}

TrainConfig TrainConfig::parse(const std::string& text, TrainConfig base) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    std::istringstream ls(line);
    std::string key, eq, value;
    if (!(ls >> key)) continue;  // blank line
    require(bool(ls >> eq >> value) && eq == "=",
            "config parse error at: " + line);
    if (key == "preset") {
      require(value == "desk" || value == "paper",
              "unknown preset: " + value);
      TrainConfig preset = value == "desk" ? desk() : paper();
      preset.seed = base.seed;
      base = preset;
    } else if (key == "batch_size") {
      base.batch_size = std::stoi(value);
    } else if (key == "lr") {
      base.lr = std::stod(value);
    } else if (key == "iterations") {
      base.iterations = std::stoi(value);
    } else if (key == "alpha_lr") {
      base.alpha_lr = std::stod(value);
    } else if (key == "seed") {
      base.seed = std::stoull(value);
    } else if (key == "iden_dropout") {
      base.iden_dropout = std::stod(value);
    } else if (key == "resolution") {
      base.resolution = std::stoi(value);
    } else {
      fail("unknown config key: " + key);
    }
  }
  base.validate();
  return base;
}

TrainConfig TrainConfig::parse_file(const std::string& path,
                                    TrainConfig base) {
  std::ifstream f(path);
  require(f.good(), "cannot open config file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse(buf.str(), base);
}

// ---- Adam --------------------------------------------------------------------------

double clip_global_norm(const std::vector<Parameter<float>*>& params,
                        double max_norm) {
  double ss = 0.0;
  for (const auto* p : params)
    for (float g : p->grad) ss += double(g) * double(g);
  const double norm = std::sqrt(ss);
  if (norm > max_norm && norm > 0.0) {
    const float s = float(max_norm / norm);
    for (auto* p : params)
      for (float& g : p->grad) g *= s;
  }
  return norm;
}

Adam::Adam(std::vector<Parameter<float>*> params, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter<float>& p = *params_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = double(p.grad[j]);
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value[j] = float(double(p.value[j]) -
                         lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

// ---- batching -------------------------------------------------------------------------

const char* split_name(SplitTag t) {
  switch (t) {
    case SplitTag::weight: return "weight";
    case SplitTag::alpha: return "alpha";
    case SplitTag::train: return "train";
  }
  return "?";
}

BatchSampler::BatchSampler(std::vector<int> indices, int batch_size,
                           SplitTag tag, Rng rng)
    : indices_(std::move(indices)),
      batch_size_(batch_size),
      tag_(tag),
      rng_(rng) {
  require(!indices_.empty(), "empty split: no samples to train on");
  reshuffle();
}

void BatchSampler::reshuffle() {
  for (std::size_t i = indices_.size(); i > 1; --i) {
    std::size_t j = std::size_t(rng_.uniform_int(0, std::int64_t(i) - 1));
    std::swap(indices_[i - 1], indices_[j]);
  }
  pos_ = 0;
}

Batch BatchSampler::next() {
  Batch b;
  b.tag = tag_;
  for (int k = 0; k < batch_size_; ++k) {
    if (pos_ >= indices_.size()) reshuffle();
    b.indices.push_back(indices_[pos_++]);
  }
  return b;
}

std::string curves_to_jsonl(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  for (const auto& p : curve) {
    nlohmann::ordered_json j;
    j["iteration"] = p.iteration;
    j["split"] = p.split;
    j["l2"] = p.l2;
    j["per"] = p.per;
    j["iden"] = p.iden;
    j["total"] = p.total;
    os << j.dump() << "\n";
  }
  return os.str();
}

// ---- shared training plumbing ------------------------------------------------------------

namespace {

constexpr double kMaxGradNorm = 10.0;

using ModelF = model::RestorationNet<float>;

// everything precomputable once per sample (targets, conditioning, features)
struct Prepared {
  std::vector<float> degraded, clean;       // 3*h*w planes
  std::array<float, 3> label{};
  Array4<float> target_feats;               // embedder features of clean
  std::vector<Array4<float>> iden_refs;     // normalized features per reference
  Array4<float> iden_cond;                  // identity_info, may stay empty
};

std::vector<Prepared> prepare_samples(const Dataset& data,
                                      model::Embedder<float>& emb,
                                      const losses::LossWeights& w) {
  std::vector<Prepared> out;
  for (const auto& s : data.samples) {
    Prepared p;
    p.degraded = image_to_chw<float>(s.degraded);
    p.clean = image_to_chw<float>(s.clean);
    p.label = {float(s.row.label.b), float(s.row.label.n),
               float(s.row.label.l)};
    if (w.lambda_per > 0.0) p.target_feats = emb.embed_image(s.clean);
    if (!s.identity.empty()) {
      if (w.lambda_iden > 0.0)
        for (const auto& [id, img] : s.identity)
          p.iden_refs.push_back(losses::normalized_features(emb, img));
      p.iden_cond = model::identity_info(emb, s.degraded, s.identity);
    }
    out.push_back(std::move(p));
  }
  return out;
}

struct BatchTensors {
  Shape img_shape;
  std::vector<float> y, x;
  model::Conditioning<float> cond;
  Array4<float> target_feats;            // stacked, empty if unused
  std::vector<Array4<float>> iden_refs;  // stacked per reference
};

BatchTensors assemble_batch(const std::vector<Prepared>& prep,
                            const Batch& batch, int h, int w,
                            const losses::LossWeights& lw,
                            const std::vector<char>& iden_drop) {
  const int n = int(batch.indices.size());
  BatchTensors bt;
  bt.img_shape = Shape(n, 3, h, w);
  bt.y.resize(std::size_t(n) * 3 * h * w);
  bt.x.resize(bt.y.size());
  bt.cond.label.resize(std::size_t(n) * 3);

  const Prepared& first = prep[std::size_t(batch.indices[0])];
  const bool use_per = lw.lambda_per > 0.0;
  const bool use_iden = lw.lambda_iden > 0.0;
  if (use_per) {
    Shape fs = first.target_feats.shape;
    bt.target_feats = Array4<float>(Shape(n, fs.c, fs.h, fs.w));
  }
  if (use_iden) {
    require(!first.iden_refs.empty(),
            "identity references missing for identity loss");
    Shape fs = first.iden_refs[0].shape;
    for (std::size_t r = 0; r < first.iden_refs.size(); ++r)
      bt.iden_refs.emplace_back(Shape(n, fs.c, fs.h, fs.w));
  }
  bool any_iden_cond = false;
  Shape ishape;
  for (int b = 0; b < n; ++b) {
    const Prepared& p = prep[std::size_t(batch.indices[std::size_t(b)])];
    if (!p.iden_cond.v.empty()) {
      any_iden_cond = true;
      ishape = p.iden_cond.shape;
    }
  }
  if (any_iden_cond)
    bt.cond.iden = Array4<float>(Shape(n, ishape.c, ishape.h, ishape.w));

  for (int b = 0; b < n; ++b) {
    const Prepared& p = prep[std::size_t(batch.indices[std::size_t(b)])];
    const std::size_t img = std::size_t(3) * h * w;
    std::copy(p.degraded.begin(), p.degraded.end(), bt.y.begin() + b * img);
    std::copy(p.clean.begin(), p.clean.end(), bt.x.begin() + b * img);
    for (int c = 0; c < 3; ++c) bt.cond.label[std::size_t(b) * 3 + c] = p.label[std::size_t(c)];
    if (use_per) {
      const std::size_t fsz = p.target_feats.v.size();
      std::copy(p.target_feats.v.begin(), p.target_feats.v.end(),
                bt.target_feats.v.begin() + std::size_t(b) * fsz);
    }
    if (use_iden)
      for (std::size_t r = 0; r < bt.iden_refs.size(); ++r) {
        const auto& src = p.iden_refs.at(r).v;
        std::copy(src.begin(), src.end(),
                  bt.iden_refs[r].v.begin() + std::size_t(b) * src.size());
      }
    if (any_iden_cond && !p.iden_cond.v.empty() &&
        !(b < int(iden_drop.size()) && iden_drop[std::size_t(b)])) {
      std::copy(p.iden_cond.v.begin(), p.iden_cond.v.end(),
                bt.cond.iden.v.begin() + std::size_t(b) * p.iden_cond.v.size());
    }
  }
  return bt;
}

struct StepLosses {
  double l2 = 0.0, per = 0.0, iden = 0.0, total = 0.0;
};

// one forward/backward pass of the full model over an assembled batch
StepLosses model_step(ModelF& net, ParamStore<float>& store,
                      const BatchTensors& bt, model::FusionMode mode,
                      const fusion::ArchSpec* arch,
                      const losses::LossWeights& lw) {
  Tape<float> t;
  Var y = t.input(bt.img_shape, bt.y);
  Var x = t.input(bt.img_shape, bt.x);
  Var xhat = net.forward(t, y, bt.cond, mode, arch);
  auto terms = losses::final_loss(t, net.embedder(), xhat, x, bt.target_feats,
                                  bt.iden_refs, lw);
  store.zero_grads();
  t.backward(terms.total);
  StepLosses out;
  out.l2 = double(t.value(terms.l2)[0]);
  if (terms.per.valid()) out.per = double(t.value(terms.per)[0]);
  if (terms.iden.valid()) out.iden = double(t.value(terms.iden)[0]);
  out.total = double(t.value(terms.total)[0]);
  return out;
}

std::vector<Parameter<float>*> trainable_params(ParamStore<float>& store,
                                                bool include_alpha,
                                                bool only_alpha = false) {
  std::vector<Parameter<float>*> out;
  store.for_each([&](Parameter<float>& p) {
    if (!p.trainable) return;
    const bool is_alpha = p.name.find(".alpha") != std::string::npos;
    if (only_alpha ? is_alpha : (include_alpha || !is_alpha))
      out.push_back(&p);
  });
  return out;
}

void check_resolution(const Dataset& data, int resolution) {
  for (const auto& s : data.samples) {
    require(s.degraded.h == resolution && s.degraded.w == resolution &&
                s.clean.h == resolution && s.clean.w == resolution,
            "sample " + s.row.id + " does not match the configured resolution " +
                std::to_string(resolution));
  }
}

std::vector<char> draw_dropout(Rng& rng, int n, double p) {
  std::vector<char> mask(std::size_t(n), 0);
  for (auto& m : mask) m = rng.bernoulli(p) ? 1 : 0;
  return mask;
}

std::map<std::string, std::string> base_meta(const TrainConfig& cfg,
                                             const model::ModelConfig& mcfg) {
  std::map<std::string, std::string> meta;
  meta["model_config"] = mcfg.serialize();
  meta["train_config"] = cfg.serialize();
  meta["config_hash"] = std::to_string(
      hash_combine(mcfg.hash(), fnv1a(cfg.serialize())));
  return meta;
}

}  // namespace

// ---- pretraining -------------------------------------------------------------------------

PretrainResult pretrain_encoder(const std::string& task, const Dataset& data,
                                const TrainConfig& cfg,
                                const model::ModelConfig& mcfg,
                                const std::string& out_ckpt) {
  cfg.validate();
  check_resolution(data, cfg.resolution);

  degrade::DegradationLabel expected;
  std::string prefix;
  if (task == "blur") {
    expected = {1, 0, 0};
    prefix = "enc.blur";
  } else if (task == "noise") {
    expected = {0, 1, 0};
    prefix = "enc.noise";
  } else if (task == "lowlight") {
    expected = {0, 0, 1};
    prefix = "enc.lowlight";
  } else {
    fail("unknown pretraining task: " + task);
  }
  for (const auto& s : data.samples)
    require(s.row.label == expected,
            "sample " + s.row.id + " is not a single-" + task +
                " sample; pretraining dataset must be task-pure");

  ParamStore<float> store(cfg.seed);
  const int in_ch = 3 + 3 + mcfg.id_proj_channels;
  model::Encoder<float> enc(store, prefix, in_ch, mcfg);
  model::Decoder<float> dec(store, "pretrain.decoder", mcfg.enc_out);

  Adam adam(trainable_params(store, /*include_alpha=*/true));
  std::vector<int> all(data.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = int(i);
  BatchSampler sampler(all, cfg.batch_size, SplitTag::train,
                       Rng(hash_combine(cfg.seed, fnv1a("pretrain-sampler"))));

  const int h = cfg.resolution, w = cfg.resolution;
  PretrainResult result;
  for (int it = 0; it < cfg.iterations; ++it) {
    Batch batch = sampler.next();
    require(batch.tag == SplitTag::train, "pretraining consumed a foreign batch");
    const int n = int(batch.indices.size());

    // y plus one-hot class channels plus blank identity channels
    std::vector<float> buf(std::size_t(n) * in_ch * h * w, 0.f);
    std::vector<float> xbuf(std::size_t(n) * 3 * h * w);
    for (int b = 0; b < n; ++b) {
      const Sample& s = data.samples[std::size_t(batch.indices[std::size_t(b)])];
      const float lab[3] = {float(expected.b), float(expected.n),
                            float(expected.l)};
      for (int c = 0; c < 3; ++c) {
        std::copy(&s.degraded.v[std::size_t(c) * h * w],
                  &s.degraded.v[std::size_t(c) * h * w] + h * w,
                  &buf[((std::size_t(b) * in_ch) + c) * h * w]);
        std::fill(&buf[((std::size_t(b) * in_ch) + 3 + c) * h * w],
                  &buf[((std::size_t(b) * in_ch) + 3 + c) * h * w] + h * w,
                  lab[c]);
      }
      std::copy(s.clean.v.begin(), s.clean.v.end(),
                &xbuf[std::size_t(b) * 3 * h * w]);
    }

    Tape<float> t;
    Var yin = t.input(Shape(n, in_ch, h, w), std::move(buf));
    Var x = t.input(Shape(n, 3, h, w), std::move(xbuf));
    Var xhat = dec.forward(t, enc.forward(t, yin));
    Var loss = losses::l2_loss(t, xhat, x);
    store.zero_grads();
    t.backward(loss);
    clip_global_norm(adam.params(), kMaxGradNorm);
    adam.step(cfg.lr);

    CurvePoint pt;
    pt.iteration = it;
    pt.split = "train";
    pt.l2 = double(t.value(loss)[0]);
    pt.total = pt.l2;
    result.curve.push_back(pt);
  }

  auto meta = base_meta(cfg, mcfg);
  meta["task"] = task;
  save_checkpoint(out_ckpt, store, meta, prefix);
  result.ckpt_digest = file_digest(out_ckpt);
  return result;
}

// ---- search ----------------------------------------------------------------------------------

SearchResult search(const Dataset& data, const TrainConfig& cfg,
                    const model::ModelConfig& mcfg,
                    const std::string& out_ckpt, const std::string& arch_out,
                    const SearchOptions& opt) {
  cfg.validate();
  check_resolution(data, cfg.resolution);
  if (opt.weights.lambda_iden > 0.0)
    require(data.all_have_identity(),
            "identity sets are required when lambda_iden > 0");

  ParamStore<float> store(cfg.seed);
  ModelF net(store, mcfg);
  auto prep = prepare_samples(data, net.embedder(), opt.weights);

  auto wsplit = data.split_indices(0);
  auto asplit = data.split_indices(1);
  require(!wsplit.empty() && !asplit.empty(),
          "search requires non-empty weight and alpha splits");
  BatchSampler wsampler(wsplit, cfg.batch_size, SplitTag::weight,
                        Rng(hash_combine(cfg.seed, fnv1a("weight-sampler"))));
  BatchSampler asampler(asplit, cfg.batch_size, SplitTag::alpha,
                        Rng(hash_combine(cfg.seed, fnv1a("alpha-sampler"))));

  Adam adam_w(trainable_params(store, /*include_alpha=*/false));
  Adam adam_a(trainable_params(store, true, /*only_alpha=*/true));
  Rng drop_rng(hash_combine(cfg.seed, fnv1a("iden-dropout")));

  SearchResult result;
  const int h = cfg.resolution, w = cfg.resolution;
  for (int it = 0; it < cfg.iterations; ++it) {
    {
      Batch batch = wsampler.next();
      require(batch.tag == SplitTag::weight,
              "weight step consumed a non-weight batch");
      auto drop = draw_dropout(drop_rng, int(batch.indices.size()),
                               cfg.iden_dropout);
      auto bt = assemble_batch(prep, batch, h, w, opt.weights, drop);
      auto l = model_step(net, store, bt, model::FusionMode::relaxed, nullptr,
                          opt.weights);
      clip_global_norm(adam_w.params(), kMaxGradNorm);
      adam_w.step(cfg.lr);
      result.curves.push_back(
          {it, "weight", l.l2, l.per, l.iden, l.total});
    }
    {
      Batch batch = asampler.next();
      require(batch.tag == SplitTag::alpha,
              "alpha step consumed a non-alpha batch");
      auto drop = draw_dropout(drop_rng, int(batch.indices.size()),
                               cfg.iden_dropout);
      auto bt = assemble_batch(prep, batch, h, w, opt.weights, drop);
      auto l = model_step(net, store, bt, model::FusionMode::relaxed, nullptr,
                          opt.weights);
      if (!opt.freeze_alpha) {
        clip_global_norm(adam_a.params(), kMaxGradNorm);
        adam_a.step(cfg.alpha_lr);
      }
      result.curves.push_back({it, "alpha", l.l2, l.per, l.iden, l.total});
    }
  }

  result.arch = net.fusion_net().derive();
  auto meta = base_meta(cfg, mcfg);
  meta["arch"] = fusion::arch_to_text(result.arch);
  save_checkpoint(out_ckpt, store, meta);
  result.ckpt_digest = file_digest(out_ckpt);
  if (!arch_out.empty()) {
    std::ofstream f(arch_out);
    require(f.good(), "cannot write architecture file: " + arch_out);
    f << fusion::arch_to_text(result.arch);
  }
  return result;
}

// ---- final training ------------------------------------------------------------------------------

TrainResult train_final(const Dataset& data, const TrainConfig& cfg,
                        const model::ModelConfig& mcfg,
                        const std::string& out_ckpt, const TrainOptions& opt) {
  cfg.validate();
  check_resolution(data, cfg.resolution);
  if (opt.mode == model::FusionMode::discrete)
    require(opt.arch.has_value(), "discrete mode requires an architecture");
  if (opt.weights.lambda_iden > 0.0 && cfg.iden_dropout < 1.0)
    require(data.all_have_identity(),
            "identity sets are required when lambda_iden > 0 and "
            "iden_dropout < 1");
  if (opt.weights.lambda_iden > 0.0)
    require(data.all_have_identity(),
            "identity sets are required by the identity loss");

  ParamStore<float> store(cfg.seed);
  ModelF net(store, mcfg);
  if (opt.init_ckpt) load_checkpoint(*opt.init_ckpt, store);
  for (const auto& ck : opt.encoder_ckpts)
    load_checkpoint(ck, store, /*partial=*/true);

  auto prep = prepare_samples(data, net.embedder(), opt.weights);
  std::vector<int> all(data.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = int(i);
  BatchSampler sampler(all, cfg.batch_size, SplitTag::train,
                       Rng(hash_combine(cfg.seed, fnv1a("train-sampler"))));
  Adam adam(trainable_params(store, /*include_alpha=*/false));
  Rng drop_rng(hash_combine(cfg.seed, fnv1a("iden-dropout")));

  const fusion::ArchSpec* arch =
      opt.arch.has_value() ? &*opt.arch : nullptr;
  TrainResult result;
  const int h = cfg.resolution, w = cfg.resolution;
  for (int it = 0; it < cfg.iterations; ++it) {
    Batch batch = sampler.next();
    require(batch.tag == SplitTag::train,
            "final training consumed a foreign batch");
    auto drop = draw_dropout(drop_rng, int(batch.indices.size()),
                             cfg.iden_dropout);
    auto bt = assemble_batch(prep, batch, h, w, opt.weights, drop);
    auto l = model_step(net, store, bt, opt.mode, arch, opt.weights);
    clip_global_norm(adam.params(), kMaxGradNorm);
    adam.step(cfg.lr);
    result.curve.push_back({it, "train", l.l2, l.per, l.iden, l.total});

    if (opt.checkpoint_every > 0 && (it + 1) % opt.checkpoint_every == 0 &&
        it + 1 < cfg.iterations) {
      auto meta = base_meta(cfg, mcfg);
      meta["iteration"] = std::to_string(it + 1);
      if (arch) meta["arch"] = fusion::arch_to_text(*arch);
      save_checkpoint(out_ckpt + ".iter" + std::to_string(it + 1), store,
                      meta);
    }
  }

  auto meta = base_meta(cfg, mcfg);
  meta["mode"] = opt.mode == model::FusionMode::relaxed ? "relaxed"
                                                        : "discrete";
  if (arch) meta["arch"] = fusion::arch_to_text(*arch);
  save_checkpoint(out_ckpt, store, meta);
  result.ckpt_digest = file_digest(out_ckpt);
  return result;
}

// ---- toy datasets ----------------------------------------------------------------------------------

Dataset make_bnl_overfit_dataset(std::uint64_t seed, int count,
                                 int resolution) {
  Dataset ds;
  for (int i = 0; i < count; ++i) {
    std::uint64_t s = hash_combine(seed, fnv1a("bnl-" + std::to_string(i)));
    Rng rng(s);
    Image face = facegen::make_face(hash_combine(s, 1), resolution);
    degrade::DegradationConfig cfg;
    cfg.blur = degrade::gen_motion_kernel(hash_combine(s, 2), 13);
    cfg.low_light_r = rng.uniform(0.15, 0.3);
    cfg.noise = degrade::NoiseParams{0.1, 0.05};
    cfg.seed = hash_combine(s, 3);
    char id[32];
    std::snprintf(id, sizeof(id), "overfit%03d", i);
    degrade::SamplePair pair = degrade::apply_degradation(face, cfg, id);
    Sample smp;
    smp.row.id = id;
    smp.row.label = pair.label;
    smp.row.seed = cfg.seed;
    smp.clean = pair.clean;
    smp.degraded = pair.degraded;
    for (int k = 0; k < 3; ++k)
      smp.identity.emplace_back(
          std::string(id) + "_" + std::to_string(k),
          facegen::photometric_variant(face, hash_combine(s, 10 + k)));
    ds.samples.push_back(std::move(smp));
  }
  return ds;
}

Dataset make_classifier_dataset(std::uint64_t seed, int count,
                                int resolution) {
  Dataset ds;
  for (int i = 0; i < count; ++i) {
    std::uint64_t s = hash_combine(seed, fnv1a("cls-" + std::to_string(i)));
    Rng rng(s);
    Image face =
        facegen::make_face(hash_combine(seed, rng.next_u64() % 64),
                           resolution);
    const int combo = i % 8;  // spans all 8 label combinations
    degrade::DegradationConfig cfg;
    if (combo & 4) {
      if (rng.bernoulli(0.5)) {
        int size = 13 + 2 * int(rng.uniform_int(0, 7));
        cfg.blur = degrade::gen_motion_kernel(rng.next_u64(), size);
      } else {
        cfg.blur = degrade::gen_gaussian_kernel(
            rng.uniform(1.0, 3.0), rng.uniform(1.0, 3.0),
            rng.uniform(0.0, 3.14159), 13);
      }
    }
    if (combo & 2)
      cfg.noise =
          degrade::NoiseParams{rng.uniform(0.01, 0.16), rng.uniform(0.01, 0.06)};
    if (combo & 1) cfg.low_light_r = rng.uniform(0.05, 0.5);
    cfg.seed = hash_combine(s, 7);
    char id[32];
    std::snprintf(id, sizeof(id), "cls%04d", i);
    degrade::SamplePair pair = degrade::apply_degradation(face, cfg, id);
    Sample smp;
    smp.row.id = id;
    smp.row.label = pair.label;
    smp.row.seed = cfg.seed;
    smp.clean = pair.clean;
    smp.degraded = pair.degraded;
    ds.samples.push_back(std::move(smp));
  }
  return ds;
}

// ---- acceptance experiments ---------------------------------------------------------------------------

OverfitResult run_overfit_experiment(const std::string& workdir,
                                     std::uint64_t seed) {
  fs::create_directories(workdir);
  TrainConfig cfg = TrainConfig::desk();
  cfg.seed = seed;
  model::ModelConfig mcfg;

  Dataset data = make_bnl_overfit_dataset(hash_combine(seed, fnv1a("data")),
                                          8, cfg.resolution);
  TrainOptions opt;
  const std::string ckpt = (fs::path(workdir) / "overfit_ckpt.bin").string();
  TrainResult tr = train_final(data, cfg, mcfg, ckpt, opt);

  // evaluate on the training pairs with training-time conditioning
  ParamStore<float> store(cfg.seed);
  ModelF net(store, mcfg);
  load_checkpoint(ckpt, store);
  auto prep = prepare_samples(data, net.embedder(), opt.weights);
  Batch batch;
  batch.tag = SplitTag::train;
  for (int i = 0; i < int(data.samples.size()); ++i) batch.indices.push_back(i);
  std::vector<char> nodrop(batch.indices.size(), 0);
  auto bt = assemble_batch(prep, batch, cfg.resolution, cfg.resolution,
                           opt.weights, nodrop);
  Tape<float> t;
  Var y = t.input(bt.img_shape, bt.y);
  Var xhat = net.forward(t, y, bt.cond, model::FusionMode::relaxed);
  const auto& out = t.value(xhat);

  OverfitResult res;
  res.loss_log = curves_to_jsonl(tr.curve);
  res.ckpt_digest = tr.ckpt_digest;
  res.min_psnr = 1e9;
  res.min_ssim = 1e9;
  const std::size_t img = std::size_t(3) * cfg.resolution * cfg.resolution;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    std::vector<float> one(out.begin() + std::ptrdiff_t(i * img),
                           out.begin() + std::ptrdiff_t((i + 1) * img));
    Image rest = image_from_chw(one, cfg.resolution, cfg.resolution);
    double p = metrics::psnr(rest, data.samples[i].clean);
    double s = metrics::ssim(rest, data.samples[i].clean);
    res.mean_psnr += p;
    res.mean_ssim += s;
    res.min_psnr = std::min(res.min_psnr, p);
    res.min_ssim = std::min(res.min_ssim, s);
  }
  res.mean_psnr /= double(data.samples.size());
  res.mean_ssim /= double(data.samples.size());

  std::ofstream log(fs::path(workdir) / "overfit_loss.jsonl");
  log << res.loss_log;
  return res;
}

namespace {

// smooth random field: white noise convolved with a Gaussian
std::vector<float> smooth_field(Rng& rng, int s) {
  degrade::BlurKernel g = degrade::gen_gaussian_kernel(1.2, 1.2, 0.0, 5);
  std::vector<double> noise(std::size_t(s) * s);
  for (auto& v : noise) v = rng.normal();
  std::vector<float> out(noise.size());
  const int r = g.size / 2;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      double acc = 0.0;
      for (int ky = 0; ky < g.size; ++ky)
        for (int kx = 0; kx < g.size; ++kx) {
          int yy = std::min(std::max(y + ky - r, 0), s - 1);
          int xx = std::min(std::max(x + kx - r, 0), s - 1);
          acc += g.at(ky, kx) * noise[std::size_t(yy) * s + xx];
        }
      out[std::size_t(y) * s + x] = float(acc * 3.0);  // roughly unit scale
    }
  return out;
}

}  // namespace

WienerSearchResult run_wiener_search_experiment(const std::string& workdir,
                                                std::uint64_t seed) {
  fs::create_directories(workdir);
  const int S = 16, C = 4, kSamples = 64, kBatch = 8, kIters = 1000;
  const double kLr = 1e-3, kAlphaLr = 3e-2;

  // fixed blur-kernel image shared by every sample
  degrade::BlurKernel kern = degrade::gen_gaussian_kernel(2.0, 1.0, 0.5, 7);
  std::vector<float> kimg(std::size_t(S) * S, 0.f);
  for (int y = 0; y < kern.size; ++y)
    for (int x = 0; x < kern.size; ++x)
      kimg[std::size_t((y + S / 2 - kern.size / 2)) * S +
           (x + S / 2 - kern.size / 2)] = float(kern.at(y, x));

  // inputs [u0, u1, k, k]; targets are the exact Wiener deconvolutions
  std::vector<std::vector<float>> inputs, targets;
  Rng rng(hash_combine(seed, fnv1a("wiener-data")));
  for (int i = 0; i < kSamples; ++i) {
    std::vector<float> in(std::size_t(C) * S * S);
    auto u0 = smooth_field(rng, S);
    auto u1 = smooth_field(rng, S);
    std::copy(u0.begin(), u0.end(), in.begin());
    std::copy(u1.begin(), u1.end(), in.begin() + S * S);
    std::copy(kimg.begin(), kimg.end(), in.begin() + 2 * S * S);
    std::copy(kimg.begin(), kimg.end(), in.begin() + 3 * S * S);

    Tape<float> t;
    Var u = t.input(Shape(1, 2, S, S),
                    std::vector<float>(in.begin(), in.begin() + 2 * S * S));
    std::vector<float> k2(std::size_t(2) * S * S);
    std::copy(kimg.begin(), kimg.end(), k2.begin());
    std::copy(kimg.begin(), kimg.end(), k2.begin() + S * S);
    Var kv = t.input(Shape(1, 2, S, S), std::move(k2));
    Var U = t.fft2(u);
    Var K = t.fft2(kv);
    Var num = t.complex_mul(K, U);
    Var den = t.add_scalar(t.complex_abs2(K), 0.01f);
    Var wout = t.complex_real(t.ifft2(t.cdiv_real(num, den)));
    const auto& wv = t.value(wout);
    std::vector<float> target(std::size_t(C) * S * S);
    std::copy(wv.begin(), wv.end(), target.begin());
    std::copy(wv.begin(), wv.end(), target.begin() + 2 * S * S);
    inputs.push_back(std::move(in));
    targets.push_back(std::move(target));
  }

  ParamStore<float> store(seed);
  fusion::FusionNetwork<float> fnet(store, "wfn", C, C, C, /*blocks=*/2,
                                    /*cells=*/1, ops::operator_registry());
  Adam adam_w(trainable_params(store, false));
  Adam adam_a(trainable_params(store, true, true));

  std::vector<int> weven, wodd;
  for (int i = 0; i < kSamples; ++i) (i % 2 ? wodd : weven).push_back(i);
  BatchSampler wsampler(weven, kBatch, SplitTag::weight,
                        Rng(hash_combine(seed, fnv1a("w-sampler"))));
  BatchSampler asampler(wodd, kBatch, SplitTag::alpha,
                        Rng(hash_combine(seed, fnv1a("a-sampler"))));

  auto run_step = [&](const Batch& batch) {
    const int n = int(batch.indices.size());
    std::vector<float> in(std::size_t(n) * C * S * S),
        tg(std::size_t(n) * C * S * S);
    for (int b = 0; b < n; ++b) {
      const auto& iv = inputs[std::size_t(batch.indices[std::size_t(b)])];
      const auto& tv = targets[std::size_t(batch.indices[std::size_t(b)])];
      std::copy(iv.begin(), iv.end(), in.begin() + std::size_t(b) * iv.size());
      std::copy(tv.begin(), tv.end(), tg.begin() + std::size_t(b) * tv.size());
    }
    Tape<float> t;
    Var x = t.input(Shape(n, C, S, S), std::move(in));
    Var target = t.input(Shape(n, C, S, S), std::move(tg));
    Var out = fnet.forward_relaxed(t, x);
    Var loss = losses::l2_loss(t, out, target);
    store.zero_grads();
    t.backward(loss);
    return double(t.value(loss)[0]);
  };

  WienerSearchResult res;
  std::vector<CurvePoint> curve;
  std::vector<double> alpha_losses;
  for (int it = 0; it < kIters; ++it) {
    {
      Batch b = wsampler.next();
      require(b.tag == SplitTag::weight, "weight step got a foreign batch");
      double l = run_step(b);
      clip_global_norm(adam_w.params(), kMaxGradNorm);
      adam_w.step(kLr);
      curve.push_back({it, "weight", l, 0.0, 0.0, l});
    }
    {
      Batch b = asampler.next();
      require(b.tag == SplitTag::alpha, "alpha step got a foreign batch");
      double l = run_step(b);
      clip_global_norm(adam_a.params(), kMaxGradNorm);
      adam_a.step(kAlphaLr);
      curve.push_back({it, "alpha", l, 0.0, 0.0, l});
      alpha_losses.push_back(l);
    }
  }

  res.loss_log = curves_to_jsonl(curve);
  res.arch = fnet.derive();

  // strongest fft_op softmax weight across the derived-selected edges
  auto alpha = fnet.alpha_matrix(0);
  const auto& kinds = fnet.kinds();
  int fft_idx = -1;
  for (std::size_t k = 0; k < kinds.size(); ++k)
    if (kinds[k] == ops::OperatorKind::fft_op) fft_idx = int(k);
  fusion::CellTopology topo(2);
  for (const auto& b : res.arch)
    for (int input : {b.input1, b.input2}) {
      auto soft = softmax(alpha[std::size_t(topo.edge_index(b.block, input))]);
      res.best_selected_fft_weight =
          std::max(res.best_selected_fft_weight, soft[std::size_t(fft_idx)]);
    }

  const int win = 50;
  require(int(alpha_losses.size()) >= win, "alpha loss curve too short");
  double s0 = 0.0, s1 = 0.0;
  for (int i = 0; i < win; ++i) {
    s0 += alpha_losses[std::size_t(i)];
    s1 += alpha_losses[alpha_losses.size() - 1 - std::size_t(i)];
  }
  res.alpha_smoothed_start = s0 / win;
  res.alpha_smoothed_end = s1 / win;

  const std::string ckpt = (fs::path(workdir) / "wiener_ckpt.bin").string();
  save_checkpoint(ckpt, store, {{"experiment", "wiener-search"}});
  res.ckpt_digest = file_digest(ckpt);
  std::ofstream log(fs::path(workdir) / "wiener_loss.jsonl");
  log << res.loss_log;
  std::ofstream af(fs::path(workdir) / "wiener_arch.txt");
  af << fusion::arch_to_text(res.arch);
  return res;
}

ClassifierResult run_classifier_experiment(const std::string& workdir,
                                           std::uint64_t seed) {
  fs::create_directories(workdir);
  const int kTrain = 512, kHeld = 128, kRes = 32, kBatch = 16, kIters = 2500;
  const double kLr = 1e-3;

  Dataset train_set =
      make_classifier_dataset(hash_combine(seed, fnv1a("train")), kTrain, kRes);
  Dataset held_set =
      make_classifier_dataset(hash_combine(seed, fnv1a("held")), kHeld, kRes);

  ParamStore<float> store(seed);
  model::Classifier<float> cn(store, "cn");
  Adam adam(trainable_params(store, true));
  std::vector<int> all(train_set.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = int(i);
  BatchSampler sampler(all, kBatch, SplitTag::train,
                       Rng(hash_combine(seed, fnv1a("cls-sampler"))));

  std::vector<CurvePoint> curve;
  for (int it = 0; it < kIters; ++it) {
    Batch batch = sampler.next();
    const int n = int(batch.indices.size());
    std::vector<float> ybuf(std::size_t(n) * 3 * kRes * kRes);
    std::vector<float> tbuf(std::size_t(n) * 3);
    for (int b = 0; b < n; ++b) {
      const Sample& s = train_set.samples[std::size_t(batch.indices[std::size_t(b)])];
      std::copy(s.degraded.v.begin(), s.degraded.v.end(),
                ybuf.begin() + std::size_t(b) * 3 * kRes * kRes);
      tbuf[std::size_t(b) * 3 + 0] = float(s.row.label.b);
      tbuf[std::size_t(b) * 3 + 1] = float(s.row.label.n);
      tbuf[std::size_t(b) * 3 + 2] = float(s.row.label.l);
    }
    Tape<float> t;
    Var y = t.input(Shape(n, 3, kRes, kRes), std::move(ybuf));
    Var logits = cn.forward_logits(t, y);
    Var loss = t.bce_logits(logits, tbuf);
    store.zero_grads();
    t.backward(loss);
    clip_global_norm(adam.params(), kMaxGradNorm);
    adam.step(kLr);
    double l = double(t.value(loss)[0]);
    curve.push_back({it, "train", 0.0, 0.0, 0.0, l});
  }

  int correct = 0;
  for (const auto& s : held_set.samples) {
    auto scores = cn.classify(s.degraded);
    auto bits = model::Classifier<float>::threshold(scores);
    if (bits[0] == s.row.label.b && bits[1] == s.row.label.n &&
        bits[2] == s.row.label.l)
      ++correct;
  }

  ClassifierResult res;
  res.loss_log = curves_to_jsonl(curve);
  res.exact_match_accuracy = double(correct) / double(held_set.samples.size());
  const std::string ckpt = (fs::path(workdir) / "classifier_ckpt.bin").string();
  save_checkpoint(ckpt, store, {{"experiment", "classifier"}});
  res.ckpt_digest = file_digest(ckpt);
  std::ofstream log(fs::path(workdir) / "classifier_loss.jsonl");
  log << res.loss_log;
  return res;
}

}  // namespace fusenas::train
