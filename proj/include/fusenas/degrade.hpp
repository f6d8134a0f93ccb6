#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fusenas/image.hpp"
#include "fusenas/rng.hpp"

namespace fusenas::degrade {

// ---- types ---------------------------------------------------------------

enum class KernelKind { motion, gaussian, delta };

const char* kernel_kind_name(KernelKind k);
KernelKind kernel_kind_from_name(const std::string& s);

// normalized non-negative 2-D blur kernel, odd side length
struct BlurKernel {
  int size = 0;
  KernelKind kind = KernelKind::delta;
  std::vector<double> data;  // size*size, sums to 1

  double at(int y, int x) const { return data[std::size_t(y) * size + x]; }
  double sum() const;
};

struct NoiseParams {
  double sigma_s = 0.0;  // signal-dependent, Var = L * sigma_s^2
  double sigma_c = 0.0;  // stationary, Var = sigma_c^2
};

struct DegradationConfig {
  std::optional<BlurKernel> blur;
  std::optional<double> low_light_r;  // in [0.05, 0.5]
  std::optional<NoiseParams> noise;
  std::uint64_t seed = 0;

  bool any() const {
    return blur.has_value() || low_light_r.has_value() || noise.has_value();
  }
};

// throws std::invalid_argument when any present parameter is out of range
void validate(const DegradationConfig& cfg);

struct DegradationLabel {
  int b = 0;
  int n = 0;
  int l = 0;
  bool operator==(const DegradationLabel&) const = default;
};

struct SamplePair {
  Image clean;
  Image degraded;
  DegradationLabel label;
  DegradationConfig config;
  std::string id;
};

// ---- kernels ---------------------------------------------------------------

BlurKernel delta_kernel(int size);

// Markov random-walk trajectory rasterized with bilinear splatting.
// steps=1 degenerates to a centered delta.
BlurKernel gen_motion_kernel(std::uint64_t seed, int size, int steps = 50);

// rotated anisotropic Gaussian sampled on the pixel grid
BlurKernel gen_gaussian_kernel(double sigma_x, double sigma_y, double angle,
                               int size);

// the fixed 12-kernel anisotropic grid used by the blur test sets
std::vector<BlurKernel> gaussian_kernel_grid();

// ---- pipeline stages (public so statistics can be probed directly) ---------

// camera response f(t) = sign(t)*|t|^(1/2.2) and its inverse t^2.2
double crf_apply(double t);
double crf_inverse(double t);

// channel-major RGB planes -> RGGB Bayer plane
std::vector<double> mosaic_rggb(const std::vector<double>& rgb, int h, int w);

// bilinear demosaic back to RGB planes (mirrored borders)
std::vector<double> demosaic_rggb(const std::vector<double>& bayer, int h,
                                  int w);

// adds n_c + n_s in place, Var(n_c)=sigma_c^2, Var(n_s)=L*sigma_s^2 per sample
void add_photon_gaussian_noise(std::vector<double>& bayer, double sigma_s,
                               double sigma_c, Rng& rng);

// replicate-padded spatial convolution of each channel
std::vector<double> convolve_channels(const std::vector<double>& rgb, int h,
                                      int w, const BlurKernel& k);

// ---- main entry -------------------------------------------------------------

// y = r .* (k * x) + n with the CRF/Bayer pipeline between
SamplePair apply_degradation(const Image& x, const DegradationConfig& cfg,
                             const std::string& id = "");

// ---- test-set construction ---------------------------------------------------

enum class TestSet { B, N, L, BN, BNL, train };
TestSet testset_from_name(const std::string& s);
const char* testset_name(TestSet t);

struct SynthOptions {
  int motion_kernels = 4;   // scaled kernel count for B/BN/BNL
  int train_samples = 64;   // total samples for the train set
  int identity_variants = 3;
  int threads = 0;          // 0 = auto
};

struct ManifestRow {
  std::string id;
  std::string clean_path;
  std::string degraded_path;
  DegradationLabel label;
  std::optional<std::string> kernel_kind;
  std::optional<int> kernel_size;
  std::optional<double> r;
  std::optional<double> sigma_s;
  std::optional<double> sigma_c;
  std::uint64_t seed = 0;
};

std::string manifest_row_to_json(const ManifestRow& row);
ManifestRow manifest_row_from_json(const std::string& line);

// Emits clean x grid products into out_dir plus a manifest.jsonl; returns the
// rows in manifest order. The train set also writes identity variants under
// out_dir/identity/.
std::vector<ManifestRow> build_testset(TestSet set,
                                       const std::string& clean_dir,
                                       const std::string& out_dir,
                                       std::uint64_t seed,
                                       const SynthOptions& opt = {});

}  // namespace fusenas::degrade
