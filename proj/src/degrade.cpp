#include "fusenas/degrade.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include <json.hpp>

#include "fusenas/facegen.hpp"
#include "fusenas/png_io.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace fusenas::degrade {

// ---- kernel kinds -----------------------------------------------------------

const char* kernel_kind_name(KernelKind k) {
  switch (k) {
    case KernelKind::motion: return "motion";
    case KernelKind::gaussian: return "gaussian";
    case KernelKind::delta: return "delta";
  }
  return "?";
}

KernelKind kernel_kind_from_name(const std::string& s) {
  if (s == "motion") return KernelKind::motion;
  if (s == "gaussian") return KernelKind::gaussian;
  if (s == "delta") return KernelKind::delta;
  fail("unknown kernel kind: " + s);
}

double BlurKernel::sum() const {
  double s = 0.0;
  for (double v : data) s += v;
  return s;
}

static void normalize_kernel(BlurKernel& k) {
  double s = k.sum();
  if (s <= 0.0) {
    // no mass landed inside the grid; fall back to a centered delta
    std::fill(k.data.begin(), k.data.end(), 0.0);
    k.data[std::size_t(k.size / 2) * k.size + k.size / 2] = 1.0;
    return;
  }
  for (auto& v : k.data) v /= s;
}

BlurKernel delta_kernel(int size) {
  require(size >= 1 && size % 2 == 1, "delta kernel size must be odd");
  BlurKernel k;
  k.size = size;
  k.kind = KernelKind::delta;
  k.data.assign(std::size_t(size) * size, 0.0);
  k.data[std::size_t(size / 2) * size + size / 2] = 1.0;
  return k;
}

BlurKernel gen_motion_kernel(std::uint64_t seed, int size, int steps) {
  require(size % 2 == 1, "motion kernel size must be odd, got " +
                             std::to_string(size));
  require(size >= 13 && size <= 27,
          "motion kernel size must lie in [13,27], got " +
              std::to_string(size));
  require(steps >= 1, "motion kernel needs at least one trajectory point");

  Rng rng(seed);
  const double speed = 0.7;        // px per step
  const double sigma_dir = 0.5;    // wrapped-Gaussian direction jitter
  const double p_jump = 0.05;      // uniform re-draw of the direction

  std::vector<double> xs(std::size_t(steps), 0.0), ys(std::size_t(steps), 0.0);
  double x = 0.0, y = 0.0;
  double theta = rng.uniform(0.0, 6.283185307179586);
  xs[0] = x;
  ys[0] = y;
  for (int t = 1; t < steps; ++t) {
    if (rng.bernoulli(p_jump))
      theta = rng.uniform(0.0, 6.283185307179586);
    else
      theta += rng.normal(0.0, sigma_dir);
    x += speed * std::cos(theta);
    y += speed * std::sin(theta);
    xs[std::size_t(t)] = x;
    ys[std::size_t(t)] = y;
  }

  // center the trajectory on its centroid
  double mx = 0.0, my = 0.0;
  for (int t = 0; t < steps; ++t) {
    mx += xs[std::size_t(t)];
    my += ys[std::size_t(t)];
  }
  mx /= steps;
  my /= steps;

  BlurKernel k;
  k.size = size;
  k.kind = KernelKind::motion;
  k.data.assign(std::size_t(size) * size, 0.0);
  const double c = size / 2;
  for (int t = 0; t < steps; ++t) {
    double px = xs[std::size_t(t)] - mx + c;
    double py = ys[std::size_t(t)] - my + c;
    int x0 = int(std::floor(px)), y0 = int(std::floor(py));
    double ax = px - x0, ay = py - y0;
    const double wgt[4] = {(1 - ay) * (1 - ax), (1 - ay) * ax, ay * (1 - ax),
                           ay * ax};
    const int off[4][2] = {{y0, x0}, {y0, x0 + 1}, {y0 + 1, x0},
                           {y0 + 1, x0 + 1}};
    for (int i = 0; i < 4; ++i) {
      int yy = off[i][0], xx = off[i][1];
      if (yy < 0 || yy >= size || xx < 0 || xx >= size) continue;
      k.data[std::size_t(yy) * size + xx] += wgt[i];
    }
  }
  normalize_kernel(k);
  return k;
}

BlurKernel gen_gaussian_kernel(double sigma_x, double sigma_y, double angle,
                               int size) {
  require(sigma_x > 0.0 && sigma_y > 0.0,
          "gaussian kernel sigma must be positive");
  require(size % 2 == 1, "gaussian kernel size must be odd");
  BlurKernel k;
  k.size = size;
  k.kind = KernelKind::gaussian;
  k.data.assign(std::size_t(size) * size, 0.0);
  const double c = size / 2;
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double dx = x - c, dy = y - c;
      double u = ca * dx + sa * dy;
      double v = -sa * dx + ca * dy;
      k.data[std::size_t(y) * size + x] =
          std::exp(-u * u / (2 * sigma_x * sigma_x) -
                   v * v / (2 * sigma_y * sigma_y));
    }
  normalize_kernel(k);
  return k;
}

std::vector<BlurKernel> gaussian_kernel_grid() {
  static const double pairs[6][2] = {{1, 2}, {1, 3}, {2, 1},
                                     {2, 3}, {3, 1}, {3, 2}};
  static const double angles[2] = {0.0, 0.7853981633974483};
  std::vector<BlurKernel> out;
  for (const auto& p : pairs)
    for (double a : angles)
      out.push_back(gen_gaussian_kernel(p[0], p[1], a, 13));
  return out;
}

// ---- config validation --------------------------------------------------------

void validate(const DegradationConfig& cfg) {
  if (cfg.blur) {
    const BlurKernel& k = *cfg.blur;
    require(k.size % 2 == 1 && int(k.data.size()) == k.size * k.size,
            "blur kernel malformed");
    double s = k.sum();
    require(std::abs(s - 1.0) <= 1e-6,
            "blur kernel must sum to 1, got " + std::to_string(s));
    for (double v : k.data)
      require(v >= 0.0, "blur kernel must be non-negative");
  }
  if (cfg.low_light_r) {
    double r = *cfg.low_light_r;
    require(r >= 0.05 && r <= 0.5,
            "low_light_r out of range [0.05,0.5]: " + std::to_string(r));
  }
  if (cfg.noise) {
    // sigma_c upper bound follows the widest test grid rather than the
    // training sampler range
    require(cfg.noise->sigma_s >= 0.01 && cfg.noise->sigma_s <= 0.16,
            "sigma_s out of range [0.01,0.16]: " +
                std::to_string(cfg.noise->sigma_s));
    require(cfg.noise->sigma_c >= 0.01 && cfg.noise->sigma_c <= 0.1,
            "sigma_c out of range [0.01,0.1]: " +
                std::to_string(cfg.noise->sigma_c));
  }
}

// ---- pipeline stages ------------------------------------------------------------

double crf_apply(double t) {
  // signed extension keeps pre-clip negatives (noise) finite and monotone
  return t >= 0.0 ? std::pow(t, 1.0 / 2.2) : -std::pow(-t, 1.0 / 2.2);
}

double crf_inverse(double t) {
  return t >= 0.0 ? std::pow(t, 2.2) : -std::pow(-t, 2.2);
}

// RGGB: (0,0)=R (0,1)=G (1,0)=G (1,1)=B
static int bayer_channel(int y, int x) {
  int yy = y & 1, xx = x & 1;
  if (yy == 0 && xx == 0) return 0;
  if (yy == 1 && xx == 1) return 2;
  return 1;
}

std::vector<double> mosaic_rggb(const std::vector<double>& rgb, int h, int w) {
  std::vector<double> out(std::size_t(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out[std::size_t(y) * w + x] =
          rgb[(std::size_t(bayer_channel(y, x)) * h + y) * w + x];
  return out;
}

static int mirror(int i, int n) {
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return std::min(std::max(i, 0), n - 1);
}

std::vector<double> demosaic_rggb(const std::vector<double>& bayer, int h,
                                  int w) {
  std::vector<double> out(std::size_t(3) * h * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        if (bayer_channel(y, x) == c) {
          out[(std::size_t(c) * h + y) * w + x] = bayer[std::size_t(y) * w + x];
          continue;
        }
        double acc = 0.0;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx == 0) continue;
            int yy = mirror(y + dy, h), xx = mirror(x + dx, w);
            if (bayer_channel(y + dy, x + dx) != c) continue;
            acc += bayer[std::size_t(yy) * w + xx];
            ++cnt;
          }
        out[(std::size_t(c) * h + y) * w + x] = cnt ? acc / cnt : 0.0;
      }
  return out;
}

void add_photon_gaussian_noise(std::vector<double>& bayer, double sigma_s,
                               double sigma_c, Rng& rng) {
  for (auto& v : bayer) {
    double l = std::max(v, 0.0);
    v += rng.normal(0.0, sigma_c) + rng.normal(0.0, sigma_s * std::sqrt(l));
  }
}

std::vector<double> convolve_channels(const std::vector<double>& rgb, int h,
                                      int w, const BlurKernel& k) {
  std::vector<double> out(rgb.size(), 0.0);
  const int r = k.size / 2;
  for (int c = 0; c < 3; ++c) {
    const double* ip = &rgb[std::size_t(c) * h * w];
    double* op = &out[std::size_t(c) * h * w];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int ky = 0; ky < k.size; ++ky)
          for (int kx = 0; kx < k.size; ++kx) {
            double kv = k.at(ky, kx);
            if (kv == 0.0) continue;
            int yy = std::min(std::max(y + ky - r, 0), h - 1);
            int xx = std::min(std::max(x + kx - r, 0), w - 1);
            acc += kv * ip[std::size_t(yy) * w + xx];
          }
        op[std::size_t(y) * w + x] = acc;
      }
  }
  return out;
}

// ---- apply ------------------------------------------------------------------------

SamplePair apply_degradation(const Image& x, const DegradationConfig& cfg,
                             const std::string& id) {
  validate(cfg);

  SamplePair pair;
  pair.clean = x;
  pair.config = cfg;
  pair.id = id;
  pair.label = DegradationLabel{cfg.blur ? 1 : 0, cfg.noise ? 1 : 0,
                                cfg.low_light_r ? 1 : 0};
  if (!cfg.any()) {
    pair.degraded = x;  // identity pipeline, bit-exact
    return pair;
  }

  const int h = x.h, w = x.w;
  std::vector<double> rgb(x.v.begin(), x.v.end());

  if (cfg.blur) rgb = convolve_channels(rgb, h, w, *cfg.blur);

  for (auto& v : rgb) v = crf_inverse(v);
  std::vector<double> bayer = mosaic_rggb(rgb, h, w);

  if (cfg.low_light_r)
    for (auto& v : bayer) v *= *cfg.low_light_r;

  if (cfg.noise) {
    Rng rng(cfg.seed);
    add_photon_gaussian_noise(bayer, cfg.noise->sigma_s, cfg.noise->sigma_c,
                              rng);
  }

  rgb = demosaic_rggb(bayer, h, w);
  for (auto& v : rgb) v = crf_apply(v);

  pair.degraded = Image(h, w);
  for (std::size_t i = 0; i < rgb.size(); ++i)
    pair.degraded.v[i] = float(std::min(std::max(rgb[i], 0.0), 1.0));
  return pair;
}

// ---- test sets ---------------------------------------------------------------------

TestSet testset_from_name(const std::string& s) {
  if (s == "B") return TestSet::B;
  if (s == "N") return TestSet::N;
  if (s == "L") return TestSet::L;
  if (s == "BN") return TestSet::BN;
  if (s == "BNL") return TestSet::BNL;
  if (s == "train") return TestSet::train;
  fail("unknown test set: " + s + " (expected B, N, L, BN, BNL or train)");
}

const char* testset_name(TestSet t) {
  switch (t) {
    case TestSet::B: return "B";
    case TestSet::N: return "N";
    case TestSet::L: return "L";
    case TestSet::BN: return "BN";
    case TestSet::BNL: return "BNL";
    case TestSet::train: return "train";
  }
  return "?";
}

std::string manifest_row_to_json(const ManifestRow& row) {
  ordered_json j;
  j["id"] = row.id;
  j["clean_path"] = row.clean_path;
  j["degraded_path"] = row.degraded_path;
  j["label"] = {row.label.b, row.label.n, row.label.l};
  j["kernel_kind"] =
      row.kernel_kind ? ordered_json(*row.kernel_kind) : ordered_json(nullptr);
  j["kernel_size"] =
      row.kernel_size ? ordered_json(*row.kernel_size) : ordered_json(nullptr);
  j["r"] = row.r ? ordered_json(*row.r) : ordered_json(nullptr);
  j["sigma_s"] = row.sigma_s ? ordered_json(*row.sigma_s) : ordered_json(nullptr);
  j["sigma_c"] = row.sigma_c ? ordered_json(*row.sigma_c) : ordered_json(nullptr);
  j["seed"] = row.seed;
  return j.dump();
}

ManifestRow manifest_row_from_json(const std::string& line) {
  ordered_json j = ordered_json::parse(line);
  ManifestRow row;
  row.id = j.at("id").get<std::string>();
  row.clean_path = j.at("clean_path").get<std::string>();
  row.degraded_path = j.at("degraded_path").get<std::string>();
  auto lab = j.at("label");
  row.label = DegradationLabel{lab.at(0).get<int>(), lab.at(1).get<int>(),
                               lab.at(2).get<int>()};
  if (!j.at("kernel_kind").is_null())
    row.kernel_kind = j.at("kernel_kind").get<std::string>();
  if (!j.at("kernel_size").is_null())
    row.kernel_size = j.at("kernel_size").get<int>();
  if (!j.at("r").is_null()) row.r = j.at("r").get<double>();
  if (!j.at("sigma_s").is_null()) row.sigma_s = j.at("sigma_s").get<double>();
  if (!j.at("sigma_c").is_null()) row.sigma_c = j.at("sigma_c").get<double>();
  row.seed = j.at("seed").get<std::uint64_t>();
  return row;
}

namespace {

struct RowSpec {
  ManifestRow row;
  DegradationConfig cfg;
  std::string clean_file;  // absolute path to the clean PNG
  bool emit_identity = false;
};

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("FUSENAS_THREADS")) {
    int t = std::atoi(env);
    if (t > 0) return t;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return int(std::max(1u, std::min(hw, 8u)));
}

std::vector<std::string> list_pngs(const std::string& dir) {
  std::vector<std::string> files;
  require(fs::is_directory(dir), "clean directory not found: " + dir);
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  require(!files.empty(), "no clean PNG images in " + dir);
  return files;
}

}  // namespace

std::vector<ManifestRow> build_testset(TestSet set,
                                       const std::string& clean_dir,
                                       const std::string& out_dir,
                                       std::uint64_t seed,
                                       const SynthOptions& opt) {
  auto files = list_pngs(clean_dir);
  fs::create_directories(fs::path(out_dir) / "degraded");
  if (set == TestSet::train)
    fs::create_directories(fs::path(out_dir) / "identity");

  // shared kernels for the blur sets
  std::vector<BlurKernel> kernels;
  if (set == TestSet::B || set == TestSet::BN || set == TestSet::BNL) {
    Rng krng(hash_combine(seed, fnv1a("kernel-sizes")));
    for (int i = 0; i < opt.motion_kernels; ++i) {
      int size = 13 + 2 * int(krng.uniform_int(0, 7));  // odd in [13,27]
      kernels.push_back(gen_motion_kernel(
          hash_combine(seed, fnv1a("motion-" + std::to_string(i))), size));
    }
    for (auto& k : gaussian_kernel_grid()) kernels.push_back(k);
  }

  const double sigma_s_grid[2] = {0.05, 0.1};
  const double sigma_c_grid[2] = {0.05, 0.1};
  const double r_grid_l[6] = {0.1, 0.15, 0.2, 0.25, 0.3, 0.35};
  const double r_grid_bnl[2] = {0.15, 0.3};

  std::vector<RowSpec> specs;
  auto add_spec = [&](const std::string& stem, const std::string& clean_file,
                      int idx, DegradationConfig cfg) {
    RowSpec rs;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%s%03d", stem.c_str(),
                  testset_name(set), idx);
    rs.row.id = buf;
    cfg.seed = hash_combine(seed, fnv1a(rs.row.id));
    rs.row.clean_path = clean_file;
    rs.row.degraded_path =
        (fs::path(out_dir) / "degraded" / (rs.row.id + ".png")).string();
    rs.row.label = DegradationLabel{cfg.blur ? 1 : 0, cfg.noise ? 1 : 0,
                                    cfg.low_light_r ? 1 : 0};
    if (cfg.blur) {
      rs.row.kernel_kind = kernel_kind_name(cfg.blur->kind);
      rs.row.kernel_size = cfg.blur->size;
    }
    if (cfg.low_light_r) rs.row.r = *cfg.low_light_r;
    if (cfg.noise) {
      rs.row.sigma_s = cfg.noise->sigma_s;
      rs.row.sigma_c = cfg.noise->sigma_c;
    }
    rs.row.seed = cfg.seed;
    rs.cfg = std::move(cfg);
    rs.clean_file = clean_file;
    rs.emit_identity = (set == TestSet::train);
    specs.push_back(std::move(rs));
  };

  if (set == TestSet::train) {
    Rng trng(hash_combine(seed, fnv1a("train-sampler")));
    for (int i = 0; i < opt.train_samples; ++i) {
      const std::string& file = files[std::size_t(i) % files.size()];
      std::string stem = fs::path(file).stem().string();
      int combo = int(trng.uniform_int(0, 7));  // all 8 label combinations
      DegradationConfig cfg;
      if (combo & 4) {
        if (trng.bernoulli(0.5)) {
          int size = 13 + 2 * int(trng.uniform_int(0, 7));
          cfg.blur = gen_motion_kernel(trng.next_u64(), size);
        } else {
          double sx = trng.uniform(1.0, 3.0), sy = trng.uniform(1.0, 3.0);
          cfg.blur = gen_gaussian_kernel(sx, sy, trng.uniform(0.0, 3.14159),
                                         13);
        }
      }
      if (combo & 2)
        cfg.noise = NoiseParams{trng.uniform(0.01, 0.16),
                                trng.uniform(0.01, 0.06)};
      if (combo & 1) cfg.low_light_r = trng.uniform(0.05, 0.5);
      add_spec(stem, file, i, std::move(cfg));
    }
  } else {
    for (const auto& file : files) {
      std::string stem = fs::path(file).stem().string();
      int idx = 0;
      switch (set) {
        case TestSet::B:
          for (const auto& k : kernels) {
            DegradationConfig cfg;
            cfg.blur = k;
            add_spec(stem, file, idx++, std::move(cfg));
          }
          break;
        case TestSet::N:
          for (double ss : sigma_s_grid)
            for (double sc : sigma_c_grid) {
              DegradationConfig cfg;
              cfg.noise = NoiseParams{ss, sc};
              add_spec(stem, file, idx++, std::move(cfg));
            }
          break;
        case TestSet::L:
          for (double r : r_grid_l)
            for (double ss : sigma_s_grid)
              for (double sc : sigma_c_grid) {
                DegradationConfig cfg;
                cfg.low_light_r = r;
                cfg.noise = NoiseParams{ss, sc};
                add_spec(stem, file, idx++, std::move(cfg));
              }
          break;
        case TestSet::BN:
          for (const auto& k : kernels) {
            DegradationConfig cfg;
            cfg.blur = k;
            cfg.noise = NoiseParams{0.1, 0.05};
            add_spec(stem, file, idx++, std::move(cfg));
          }
          break;
        case TestSet::BNL:
          for (const auto& k : kernels)
            for (double r : r_grid_bnl) {
              DegradationConfig cfg;
              cfg.blur = k;
              cfg.noise = NoiseParams{0.1, 0.05};
              cfg.low_light_r = r;
              add_spec(stem, file, idx++, std::move(cfg));
            }
          break;
        case TestSet::train:
          break;
      }
    }
  }

  // render in parallel; per-sample seeds make the result schedule independent
  std::map<std::string, Image> clean_cache;
  for (const auto& rs : specs)
    if (!clean_cache.count(rs.clean_file))
      clean_cache[rs.clean_file] = read_png(rs.clean_file);

  const int nthreads =
      std::min<int>(resolve_threads(opt.threads), int(specs.size()));
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(specs.size());
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= specs.size()) return;
      const RowSpec& rs = specs[i];
      try {
        const Image& clean = clean_cache.at(rs.clean_file);
        SamplePair pair = apply_degradation(clean, rs.cfg, rs.row.id);
        write_png(rs.row.degraded_path, pair.degraded);
        if (rs.emit_identity) {
          for (int v = 0; v < opt.identity_variants; ++v) {
            Image var = facegen::photometric_variant(
                clean, hash_combine(rs.cfg.seed,
                                    fnv1a("iden-" + std::to_string(v))));
            write_png((fs::path(out_dir) / "identity" /
                       (rs.row.id + "_" + std::to_string(v) + ".png"))
                          .string(),
                      var);
          }
        }
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error("synthesis failed: " + e);

  std::ofstream mf(fs::path(out_dir) / "manifest.jsonl");
  require(mf.good(), "cannot write manifest in " + out_dir);
  std::vector<ManifestRow> rows;
  for (const auto& rs : specs) {
    mf << manifest_row_to_json(rs.row) << "\n";
    rows.push_back(rs.row);
  }
  return rows;
}

}  // namespace fusenas::degrade
