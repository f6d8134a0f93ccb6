#pragma once

#include <string>
#include <vector>

#include "fusenas/image.hpp"

namespace fusenas::metrics {

// 10*log10(peak^2 / MSE), capped at 100 dB (identical images report the cap)
double psnr(const Image& a, const Image& b, double peak = 1.0);

// single-scale SSIM, 11x11 Gaussian window sigma 1.5, C1=0.01^2, C2=0.03^2,
// averaged over channels and valid window positions
double ssim(const Image& a, const Image& b);

struct EvalRecord {
  std::string id;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

// line-delimited {id, psnr_db, ssim} records plus a trailing mean row
void write_report(const std::string& path,
                  const std::vector<EvalRecord>& records);

}  // namespace fusenas::metrics
