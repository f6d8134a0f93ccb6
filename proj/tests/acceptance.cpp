// Acceptance suite: one self-contained check per criterion, each printing a
// single pass/fail line. Exit code is the number of failed criteria.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "fusenas/check_suite.hpp"
#include "fusenas/checkpoint.hpp"
#include "fusenas/facegen.hpp"
#include "fusenas/losses.hpp"
#include "fusenas/metrics.hpp"
#include "fusenas/trainer.hpp"

using namespace fusenas;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

double now_seconds() {
  using clock = std::chrono::steady_clock;
  static const auto t0 = clock::now();
  return std::chrono::duration<double>(clock::now() - t0).count();
}

void report(int criterion, bool pass, const std::string& what,
            const std::string& detail) {
  std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL",
              criterion, what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

fs::path workdir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "fusenas_acceptance" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---- criterion 1: gradient suite -------------------------------------------

void criterion_gradients() {
  double t0 = now_seconds();
  auto results = gradient_check_suite();
  double worst = 0.0;
  std::string worst_name;
  bool pass = !results.empty();
  for (const auto& r : results) {
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      worst_name = r.name;
    }
    pass = pass && r.pass;
  }
  double dt = now_seconds() - t0;
  pass = pass && dt < 300.0;
  report(1, pass, "finite-difference gradients for every primitive and operator",
         fmt("%zu checks, worst %.2e (%s), %.1f s", results.size(), worst,
             worst_name.c_str(), dt));
}

// ---- criterion 2: degradation noise statistics ---------------------------------

void criterion_noise_stats() {
  bool pass = true;
  std::string detail;
  for (double L0 : {0.2, 0.8}) {
    const double sigma_s = 0.1, sigma_c = 0.05;
    // constant-irradiance image run through the real pipeline stages:
    // intensity f(L0) -> inverse CRF -> Bayer plane equals L0 everywhere
    const int side = 324;  // > 1e5 Bayer samples
    std::vector<double> rgb(std::size_t(3) * side * side,
                            degrade::crf_apply(L0));
    for (auto& v : rgb) v = degrade::crf_inverse(v);
    auto bayer = degrade::mosaic_rggb(rgb, side, side);
    Rng rng(hash_combine(0xACCE, std::uint64_t(L0 * 1000)));
    auto noisy = bayer;
    degrade::add_photon_gaussian_noise(noisy, sigma_s, sigma_c, rng);
    double mean = 0.0;
    for (std::size_t i = 0; i < noisy.size(); ++i) mean += noisy[i] - bayer[i];
    mean /= double(noisy.size());
    double var = 0.0;
    for (std::size_t i = 0; i < noisy.size(); ++i) {
      double d = noisy[i] - bayer[i] - mean;
      var += d * d;
    }
    var /= double(noisy.size());
    double expect = sigma_c * sigma_c + L0 * sigma_s * sigma_s;
    double rel = std::abs(var - expect) / expect;
    pass = pass && rel < 0.05;
    detail += fmt("L0=%.1f rel=%.3f ", L0, rel);
  }
  report(2, pass, "noise variance matches sigma_c^2 + L0*sigma_s^2 within 5%",
         detail);
}

// ---- criterion 3: kernel invariants ----------------------------------------------

void criterion_kernels() {
  bool pass = true;
  Rng size_rng(33);
  int checked = 0;
  auto check_kernel = [&](const degrade::BlurKernel& k) {
    pass = pass && std::abs(k.sum() - 1.0) <= 1e-6;
    pass = pass && k.size >= 13 && k.size <= 27 && k.size % 2 == 1;
    for (double v : k.data) pass = pass && v >= 0.0;
    ++checked;
  };
  for (int i = 0; i < 1000; ++i) {
    int size = 13 + 2 * int(size_rng.uniform_int(0, 7));
    check_kernel(degrade::gen_motion_kernel(std::uint64_t(i), size));
  }
  for (const auto& k : degrade::gaussian_kernel_grid()) check_kernel(k);
  report(3, pass, "1000 motion + 12 gaussian kernels normalized in [13,27]",
         fmt("%d kernels checked", checked));
}

// ---- criterion 4: Wiener identity ---------------------------------------------------

void criterion_wiener_identity() {
  ParamStore<double> store(44);
  auto op = ops::make_operator<double>(ops::OperatorKind::fft_op, 4, store,
                                       "w");
  Rng rng(45);
  double worst = 0.0;
  const int S = 8;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> xv(std::size_t(4) * S * S, 0.0);
    for (auto& v : xv) v = rng.uniform(-1.0, 1.0);
    Tape<double> t;
    Var x = t.input(Shape(1, 4, S, S), xv);
    Var y = op->forward(t, x);
    Var x1 = t.add_b(t.conv2d(t.slice_channels(x, 0, 2),
                              t.param(store.at("w.conv1.w"))),
                     t.param(store.at("w.conv1.b")));
    Var x2 = t.add_b(t.conv2d(t.slice_channels(x, 2, 4),
                              t.param(store.at("w.conv2.w"))),
                     t.param(store.at("w.conv2.b")));
    Var X1 = t.fft2(x1), X2 = t.fft2(x2), Xout = t.fft2(y);
    Var den = t.add_scalar(t.complex_abs2(X2), 0.01);
    Var lhs = t.complex_mul(Xout, t.make_complex(den, t.zeros(t.shape(den))));
    Var rhs = t.complex_mul(X2, X1);
    for (std::size_t i = 0; i < t.value(lhs).size(); ++i)
      worst = std::max(worst, std::abs(t.value(lhs)[i] - t.value(rhs)[i]));
  }
  report(4, worst < 1e-4,
         "fft_op satisfies X_out*(|X2|^2+0.01) = X2*X1 on 100 inputs",
         fmt("max residual %.2e", worst));
}

// ---- criterion 5: mixed-op collapse ----------------------------------------------------

void criterion_mixed_collapse() {
  const auto& kinds = ops::operator_registry();
  ParamStore<double> store(55);
  fusion::FusionCell<double> cell(store, "c", 8, 8, 1, kinds);
  Rng rng(56);
  std::vector<double> xv(std::size_t(8) * 8 * 8, 0.0);
  for (auto& v : xv) v = rng.uniform(-1.0, 1.0);
  double worst = 0.0;
  for (std::size_t which = 0; which < kinds.size(); ++which) {
    Tape<double> t;
    Var x = t.input(Shape(1, 8, 8, 8), xv);
    std::vector<double> logits(2 * kinds.size(), 0.0);
    logits[which] = 40.0;
    logits[kinds.size() + which] = 40.0;
    Var w = t.softmax_rows(
        t.input(Shape(1, 1, 2, int(kinds.size())), logits));
    Var mixed = cell.mixed_op(t, 0, x, w);
    Var pure = cell.op(0, int(which)).forward(t, x);
    for (std::size_t i = 0; i < xv.size(); ++i)
      worst = std::max(worst,
                       std::abs(t.value(mixed)[i] - t.value(pure)[i]));
  }
  report(5, worst < 1e-6, "one-hot alpha reproduces each of the 11 operators",
         fmt("max deviation %.2e", worst));
}

// ---- criterion 6: AdaIN moments -----------------------------------------------------------

void criterion_adain_moments() {
  Rng rng(66);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Shape s(1, 6, 8, 8);
    Array4<double> c(s), st(s);
    for (auto& v : c.v) v = rng.uniform(-2.0, 2.0);
    for (auto& v : st.v) v = rng.uniform(-1.0, 3.0);
    Array4<double> out = model::adain(c, st);
    const int hw = s.h * s.w;
    for (int ch = 0; ch < s.c; ++ch) {
      auto moments = [&](const Array4<double>& a) {
        double mu = 0, var = 0;
        for (int i = 0; i < hw; ++i) mu += a.v[std::size_t(ch) * hw + i];
        mu /= hw;
        for (int i = 0; i < hw; ++i) {
          double d = a.v[std::size_t(ch) * hw + i] - mu;
          var += d * d;
        }
        return std::make_pair(mu, std::sqrt(var / hw));
      };
      auto [mo, so] = moments(out);
      auto [ms, ss] = moments(st);
      worst = std::max({worst, std::abs(mo - ms), std::abs(so - ss)});
    }
  }
  report(6, worst < 1e-5,
         "AdaIN output moments match the style source on 100 pairs",
         fmt("max moment deviation %.2e", worst));
}

// ---- criterion 7: loss constants and bounds ----------------------------------------------------

void criterion_loss_constants() {
  losses::LossWeights w;
  bool pass = w.lambda_per == 0.04 && w.lambda_iden == 0.003;
  double combo = 1.0 + w.lambda_per * 0.5 + w.lambda_iden * 1.0;
  pass = pass && std::abs(combo - 1.023) < 1e-12;

  ParamStore<double> store(77);
  model::Embedder<double> emb(store, "embedder");
  Image x = facegen::make_face(78, 16);
  Array4<double> f = losses::normalized_features(emb, x);

  Tape<double> t;
  Var xv = t.input(Shape(1, 3, 16, 16), image_to_chw<double>(x));
  double aligned = t.value(losses::identity_loss(t, emb, xv, {f}))[0];
  pass = pass && aligned >= 0.0 && aligned <= 2e-3;  // arccos(1) up to clamp

  Array4<double> e = f;
  for (std::size_t i = 0; i + 1 < e.v.size(); i += 2) {
    e.v[i] = -f.v[i + 1];
    e.v[i + 1] = f.v[i];
  }
  Array4<double> half = f;
  for (std::size_t i = 0; i < half.v.size(); ++i)
    half.v[i] = 0.5 * f.v[i] + (std::sqrt(3.0) / 2.0) * e.v[i];
  double third = t.value(losses::identity_loss(t, emb, xv, {half}))[0];
  const double pi = 3.14159265358979323846;
  pass = pass && std::abs(third - pi / 3.0) < 1e-4;
  pass = pass && aligned <= pi && third <= pi;

  report(7, pass, "lambda_per=0.04, lambda_iden=0.003, arccos spot checks",
         fmt("1+0.04*0.5+0.003 = %.6f, arccos(1)~%.2e, arccos(0.5)=%.6f",
             combo, aligned, third));
}

// ---- criteria 8-10: experiments (run twice for criterion 11) ---------------------------------

train::OverfitResult overfit_once(const std::string& tag) {
  return train::run_overfit_experiment(workdir("overfit_" + tag).string(),
                                       2024);
}

train::WienerSearchResult wiener_once(const std::string& tag) {
  return train::run_wiener_search_experiment(workdir("wiener_" + tag).string(),
                                             7);
}

train::ClassifierResult classifier_once(const std::string& tag) {
  return train::run_classifier_experiment(workdir("cls_" + tag).string(),
                                          2025);
}

}  // namespace

int main() {
  std::printf("acceptance suite\n");

  criterion_gradients();
  criterion_noise_stats();
  criterion_kernels();
  criterion_wiener_identity();
  criterion_mixed_collapse();
  criterion_adain_moments();
  criterion_loss_constants();

  double t8 = now_seconds();
  auto overfit = overfit_once("a");
  report(8,
         overfit.mean_psnr >= 30.0 && overfit.mean_ssim >= 0.95,
         "overfit: 8 BNL pairs, 2000 iterations, PSNR >= 30 dB, SSIM >= 0.95",
         fmt("mean PSNR %.2f dB (min %.2f), mean SSIM %.4f (min %.4f), %.0f s",
             overfit.mean_psnr, overfit.min_psnr, overfit.mean_ssim,
             overfit.min_ssim, now_seconds() - t8));

  double t9 = now_seconds();
  auto wiener = wiener_once("a");
  bool w_pass = wiener.best_selected_fft_weight > 2.0 / 11.0 &&
                wiener.alpha_smoothed_end < wiener.alpha_smoothed_start;
  report(9, w_pass,
         "search sanity: fft_op weight on a selected edge exceeds 2/11",
         fmt("best fft weight %.3f (threshold %.3f), alpha loss %.4f -> %.4f, "
             "%.0f s",
             wiener.best_selected_fft_weight, 2.0 / 11.0,
             wiener.alpha_smoothed_start, wiener.alpha_smoothed_end,
             now_seconds() - t9));

  double t10 = now_seconds();
  auto cls = classifier_once("a");
  report(10, cls.exact_match_accuracy >= 0.9,
         "classifier: exact-match accuracy >= 0.9 on 128 held-out samples",
         fmt("accuracy %.4f, %.0f s", cls.exact_match_accuracy,
             now_seconds() - t10));

  // criterion 11: full re-runs of 8-10 must reproduce logs and checkpoints,
  // and checkpoints must round-trip byte-exactly
  double t11 = now_seconds();
  auto overfit2 = overfit_once("b");
  auto wiener2 = wiener_once("b");
  auto cls2 = classifier_once("b");
  bool det = overfit.loss_log == overfit2.loss_log &&
             overfit.ckpt_digest == overfit2.ckpt_digest &&
             wiener.loss_log == wiener2.loss_log &&
             wiener.ckpt_digest == wiener2.ckpt_digest &&
             cls.loss_log == cls2.loss_log &&
             cls.ckpt_digest == cls2.ckpt_digest;

  // round trip: load the overfit checkpoint and save it again unchanged
  bool roundtrip = false;
  {
    fs::path src = fs::temp_directory_path() / "fusenas_acceptance" /
                   "overfit_b" / "overfit_ckpt.bin";
    train::TrainConfig cfg = train::TrainConfig::desk();
    cfg.seed = 2024;
    model::ModelConfig mcfg;
    ParamStore<float> store(cfg.seed);
    model::RestorationNet<float> net(store, mcfg);
    load_checkpoint(src.string(), store);
    fs::path dst = src.parent_path() / "roundtrip.bin";
    save_checkpoint(dst.string(), store, read_checkpoint_meta(src.string()));
    roundtrip = file_digest(src.string()) == file_digest(dst.string());
  }
  report(11, det && roundtrip,
         "re-runs of criteria 8-10 are bit-identical; checkpoints round-trip",
         fmt("logs+digests %s, round trip %s, %.0f s",
             det ? "identical" : "DIFFER",
             roundtrip ? "byte-exact" : "DIFFERS", now_seconds() - t11));

  std::printf("%s: %d criteria failed\n", g_failures ? "FAILURE" : "SUCCESS",
              g_failures);
  return g_failures;
}
