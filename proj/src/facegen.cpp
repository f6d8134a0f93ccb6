#include "fusenas/facegen.hpp"

#include <algorithm>
#include <cmath>

namespace fusenas::facegen {

namespace {

struct Ellipse {
  double cx, cy, rx, ry, angle;
  bool contains(double x, double y) const {
    double dx = x - cx, dy = y - cy;
    double ca = std::cos(angle), sa = std::sin(angle);
    double u = (ca * dx + sa * dy) / rx;
    double v = (-sa * dx + ca * dy) / ry;
    return u * u + v * v <= 1.0;
  }
};

struct Rgb {
  double r, g, b;
};

}  // namespace

Image make_face(std::uint64_t seed, int size) {
  Rng rng(seed);
  const int ss = 4;  // supersampling factor
  const int S = size * ss;

  // palette: bright-ish background, medium skin, dark features
  double bg_top = rng.uniform(0.62, 0.88);
  double bg_bot = rng.uniform(0.50, 0.75);
  Rgb bg_tint{rng.uniform(0.9, 1.0), rng.uniform(0.9, 1.0),
              rng.uniform(0.9, 1.0)};
  Rgb skin{rng.uniform(0.65, 0.9), rng.uniform(0.5, 0.75),
           rng.uniform(0.4, 0.62)};
  Rgb hair{rng.uniform(0.1, 0.45), rng.uniform(0.08, 0.35),
           rng.uniform(0.05, 0.3)};
  Rgb eye{rng.uniform(0.05, 0.25), rng.uniform(0.05, 0.25),
          rng.uniform(0.05, 0.35)};
  Rgb mouth{rng.uniform(0.55, 0.8), rng.uniform(0.2, 0.4),
            rng.uniform(0.2, 0.4)};

  // geometry in unit coordinates
  double hcx = 0.5 + rng.uniform(-0.05, 0.05);
  double hcy = 0.52 + rng.uniform(-0.05, 0.05);
  double hrx = rng.uniform(0.26, 0.34);
  double hry = rng.uniform(0.34, 0.43);
  Ellipse head{hcx, hcy, hrx, hry, rng.uniform(-0.12, 0.12)};
  Ellipse hair_e{hcx, hcy - 0.55 * hry, hrx * 1.08, hry * 0.62, head.angle};
  double eye_dx = rng.uniform(0.11, 0.15);
  double eye_y = hcy - rng.uniform(0.06, 0.11);
  double eye_r = rng.uniform(0.03, 0.05);
  Ellipse eye_l{hcx - eye_dx, eye_y, eye_r, eye_r * 0.7, 0.0};
  Ellipse eye_r_{hcx + eye_dx, eye_y, eye_r, eye_r * 0.7, 0.0};
  Ellipse brow_l{hcx - eye_dx, eye_y - 0.055, eye_r * 1.4, eye_r * 0.32,
                 rng.uniform(-0.2, 0.2)};
  Ellipse brow_r{hcx + eye_dx, eye_y - 0.055, eye_r * 1.4, eye_r * 0.32,
                 rng.uniform(-0.2, 0.2)};
  Ellipse mouth_e{hcx, hcy + rng.uniform(0.16, 0.22), rng.uniform(0.07, 0.11),
                  rng.uniform(0.02, 0.04), rng.uniform(-0.1, 0.1)};
  double nose_x = hcx, nose_y0 = eye_y + 0.04, nose_y1 = mouth_e.cy - 0.07;

  // low-frequency skin/background modulation
  double ph1 = rng.uniform(0.0, 6.28), ph2 = rng.uniform(0.0, 6.28);
  double fr1 = rng.uniform(2.0, 4.5), fr2 = rng.uniform(2.0, 4.5);

  std::vector<double> acc(std::size_t(3) * size * size, 0.0);
  for (int Y = 0; Y < S; ++Y)
    for (int X = 0; X < S; ++X) {
      double x = (X + 0.5) / S, y = (Y + 0.5) / S;
      double lum = bg_top + (bg_bot - bg_top) * y;
      Rgb px{lum * bg_tint.r, lum * bg_tint.g, lum * bg_tint.b};
      if (head.contains(x, y)) {
        double mod = 1.0 + 0.05 * std::sin(fr1 * 6.28 * x + ph1) *
                               std::cos(fr2 * 6.28 * y + ph2);
        px = {skin.r * mod, skin.g * mod, skin.b * mod};
        // simple shading toward the face boundary
        double dx = (x - hcx) / hrx, dy = (y - hcy) / hry;
        double rim = dx * dx + dy * dy;
        double shade = 1.0 - 0.25 * rim * rim;
        px = {px.r * shade, px.g * shade, px.b * shade};
        if (x > nose_x - 0.012 && x < nose_x + 0.012 && y > nose_y0 &&
            y < nose_y1)
          px = {px.r * 0.88, px.g * 0.88, px.b * 0.88};
      }
      if (hair_e.contains(x, y)) px = hair;
      if (brow_l.contains(x, y) || brow_r.contains(x, y))
        px = {hair.r * 0.8, hair.g * 0.8, hair.b * 0.8};
      if (eye_l.contains(x, y) || eye_r_.contains(x, y)) {
        px = eye;
        double gx = eye_l.contains(x, y) ? eye_l.cx : eye_r_.cx;
        double dgx = x - gx - 0.01, dgy = y - eye_y - 0.008;
        if (dgx * dgx + dgy * dgy < 0.000065) px = {0.95, 0.95, 0.95};
      }
      if (mouth_e.contains(x, y)) px = mouth;

      int ox = X / ss, oy = Y / ss;
      acc[(std::size_t(0) * size + oy) * size + ox] += px.r;
      acc[(std::size_t(1) * size + oy) * size + ox] += px.g;
      acc[(std::size_t(2) * size + oy) * size + ox] += px.b;
    }

  Image img(size, size);
  const double inv = 1.0 / (ss * ss);
  for (std::size_t i = 0; i < img.v.size(); ++i)
    img.v[i] = float(std::min(std::max(acc[i] * inv, 0.0), 1.0));
  return img;
}

Image photometric_variant(const Image& img, std::uint64_t seed) {
  Rng rng(seed);
  double gamma = rng.uniform(0.85, 1.18);
  double contrast = rng.uniform(0.9, 1.1);
  double offset = rng.uniform(-0.03, 0.03);
  double mean = 0.0;
  for (float v : img.v) mean += v;
  mean /= double(img.v.size());

  Image out(img.h, img.w);
  for (std::size_t i = 0; i < img.v.size(); ++i) {
    double v = mean + (double(img.v[i]) - mean) * contrast + offset;
    v = std::min(std::max(v, 0.0), 1.0);
    out.v[i] = float(std::pow(v, gamma));
  }
  return out;
}

}  // namespace fusenas::facegen
