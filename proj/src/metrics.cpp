#include "fusenas/metrics.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace fusenas::metrics {

double psnr(const Image& a, const Image& b, double peak) {
  require(a.h == b.h && a.w == b.w, "psnr: image dimensions differ");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    double d = double(a.v[i]) - double(b.v[i]);
    mse += d * d;
  }
  mse /= double(a.v.size());
  if (mse <= 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

namespace {

std::vector<double> gaussian_window() {
  const int n = 11;
  const double sigma = 1.5;
  std::vector<double> w(std::size_t(n) * n);
  double sum = 0.0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double dy = y - 5, dx = x - 5;
      w[std::size_t(y) * n + x] =
          std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      sum += w[std::size_t(y) * n + x];
    }
  for (auto& v : w) v /= sum;
  return w;
}

// separable weighted filtering of one plane, valid region only
void filter_valid(const std::vector<double>& in, int h, int w,
                  const std::vector<double>& g1, std::vector<double>& out,
                  std::vector<double>& scratch) {
  const int n = int(g1.size());
  const int oh = h - n + 1, ow = w - n + 1;
  scratch.assign(std::size_t(h) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += g1[std::size_t(k)] * in[std::size_t(y) * w + x + k];
      scratch[std::size_t(y) * ow + x] = acc;
    }
  out.assign(std::size_t(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k)
        acc += g1[std::size_t(k)] * scratch[std::size_t(y + k) * ow + x];
      out[std::size_t(y) * ow + x] = acc;
    }
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  require(a.h == b.h && a.w == b.w, "ssim: image dimensions differ");
  require(std::min(a.h, a.w) >= 11,
          "ssim: image smaller than the 11x11 window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  // separable 1-D window; the outer product reproduces the 2-D Gaussian
  std::vector<double> g1(11);
  double s1 = 0.0;
  for (int i = 0; i < 11; ++i) {
    double d = i - 5;
    g1[std::size_t(i)] = std::exp(-d * d / (2 * 1.5 * 1.5));
    s1 += g1[std::size_t(i)];
  }
  for (auto& v : g1) v /= s1;

  const int h = a.h, w = a.w;
  const int oh = h - 10, ow = w - 10;
  std::vector<double> pa(std::size_t(h) * w), pb(std::size_t(h) * w);
  std::vector<double> paa(std::size_t(h) * w), pbb(std::size_t(h) * w),
      pab(std::size_t(h) * w);
  std::vector<double> mua, mub, saa, sbb, sab, scratch;

  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < h * w; ++i) {
      double va = a.v[std::size_t(c) * h * w + i];
      double vb = b.v[std::size_t(c) * h * w + i];
      pa[std::size_t(i)] = va;
      pb[std::size_t(i)] = vb;
      paa[std::size_t(i)] = va * va;
      pbb[std::size_t(i)] = vb * vb;
      pab[std::size_t(i)] = va * vb;
    }
    filter_valid(pa, h, w, g1, mua, scratch);
    filter_valid(pb, h, w, g1, mub, scratch);
    filter_valid(paa, h, w, g1, saa, scratch);
    filter_valid(pbb, h, w, g1, sbb, scratch);
    filter_valid(pab, h, w, g1, sab, scratch);
    double acc = 0.0;
    for (int i = 0; i < oh * ow; ++i) {
      double ma = mua[std::size_t(i)], mb = mub[std::size_t(i)];
      double va = saa[std::size_t(i)] - ma * ma;
      double vb = sbb[std::size_t(i)] - mb * mb;
      double cov = sab[std::size_t(i)] - ma * mb;
      acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total += acc / double(oh * ow);
  }
  return total / 3.0;
}

void write_report(const std::string& path,
                  const std::vector<EvalRecord>& records) {
  std::ofstream f(path);
  require(f.good(), "cannot write report: " + path);
  double mp = 0.0, ms = 0.0;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["psnr_db"] = r.psnr_db;
    j["ssim"] = r.ssim;
    f << j.dump() << "\n";
    mp += r.psnr_db;
    ms += r.ssim;
  }
  nlohmann::ordered_json j;
  j["id"] = "mean";
  j["psnr_db"] = records.empty() ? 0.0 : mp / double(records.size());
  j["ssim"] = records.empty() ? 0.0 : ms / double(records.size());
  f << j.dump() << "\n";
}

}  // namespace fusenas::metrics
