#pragma once

// Deliberately naive reference implementations used to cross-check the
// library. Plain loops over std::vector<double>; nothing shared with src/.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <torch/torch.h>

namespace oracle {

/// Row-major H x W plane.
struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

inline Plane from_tensor(const torch::Tensor& t2d) {
  auto t = t2d.to(torch::kFloat64).contiguous();
  Plane p{static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), {}};
  p.v.assign(t.data_ptr<double>(), t.data_ptr<double>() + t.numel());
  return p;
}

inline Plane random_plane(int h, int w, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Plane p{h, w, std::vector<double>(static_cast<size_t>(h) * w)};
  for (auto& x : p.v) x = u(rng);
  return p;
}

/// Direct double sum of the orthonormal 2D DCT-II.
inline Plane dct2(const Plane& x) {
  const double pi = std::acos(-1.0);
  Plane out{x.h, x.w, std::vector<double>(x.v.size())};
  for (int k = 0; k < x.h; ++k) {
    for (int l = 0; l < x.w; ++l) {
      double s = 0.0;
      for (int m = 0; m < x.h; ++m) {
        for (int n = 0; n < x.w; ++n) {
          s += x.at(m, n) * std::cos(pi * (2 * m + 1) * k / (2.0 * x.h)) *
               std::cos(pi * (2 * n + 1) * l / (2.0 * x.w));
        }
      }
      const double ak = k == 0 ? std::sqrt(1.0 / x.h) : std::sqrt(2.0 / x.h);
      const double al = l == 0 ? std::sqrt(1.0 / x.w) : std::sqrt(2.0 / x.w);
      out.at(k, l) = ak * al * s;
    }
  }
  return out;
}

/// 2D Gaussian weights computed directly from the exponential.
inline std::vector<double> gaussian2d(int size, double sigma) {
  std::vector<double> w(static_cast<size_t>(size) * size);
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int a = 0; a < size; ++a) {
    for (int b = 0; b < size; ++b) {
      const double d2 = (a - c) * (a - c) + (b - c) * (b - c);
      w[static_cast<size_t>(a) * size + b] = std::exp(-d2 / (2.0 * sigma * sigma));
      total += w[static_cast<size_t>(a) * size + b];
    }
  }
  for (auto& v : w) v /= total;
  return w;
}

struct SsimStats {
  double ssim = 0.0;
  double cs = 0.0;
};

/// Mean SSIM and contrast-structure over every valid window position.
inline SsimStats ssim_windows(const Plane& x, const Plane& y, int size = 11, double sigma = 1.5,
                              double k1 = 0.01, double k2 = 0.03, double range = 1.0) {
  const auto w = gaussian2d(size, sigma);
  const double c1 = (k1 * range) * (k1 * range);
  const double c2 = (k2 * range) * (k2 * range);
  double sum_ssim = 0.0, sum_cs = 0.0;
  int count = 0;
  for (int i = 0; i + size <= x.h; ++i) {
    for (int j = 0; j + size <= x.w; ++j) {
      double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
      for (int a = 0; a < size; ++a) {
        for (int b = 0; b < size; ++b) {
          const double g = w[static_cast<size_t>(a) * size + b];
          const double xv = x.at(i + a, j + b), yv = y.at(i + a, j + b);
          mx += g * xv;
          my += g * yv;
          mxx += g * xv * xv;
          myy += g * yv * yv;
          mxy += g * xv * yv;
        }
      }
      const double vx = mxx - mx * mx, vy = myy - my * my, cxy = mxy - mx * my;
      const double cs = (2 * cxy + c2) / (vx + vy + c2);
      const double l = (2 * mx * my + c1) / (mx * mx + my * my + c1);
      sum_ssim += l * cs;
      sum_cs += cs;
      ++count;
    }
  }
  return {sum_ssim / count, sum_cs / count};
}

inline Plane halve(const Plane& p) {
  Plane out{p.h / 2, p.w / 2, std::vector<double>(static_cast<size_t>(p.h / 2) * (p.w / 2))};
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) {
      out.at(y, x) = 0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y + 1, 2 * x) + p.at(2 * y, 2 * x + 1) +
                             p.at(2 * y + 1, 2 * x + 1));
    }
  }
  return out;
}

/// Scale-by-scale MS-SSIM of one plane: scales that fit the window are
/// kept, exponents renormalised, negative factors count as zero.
inline double ms_ssim(Plane x, Plane y, int size = 11, double sigma = 1.5) {
  const double full[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  int scales = 0;
  for (int h = x.h, w = x.w; scales < 5 && h >= size && w >= size; h /= 2, w /= 2) ++scales;
  double wsum = 0.0;
  for (int s = 0; s < scales; ++s) wsum += full[s];
  double prod = 1.0;
  for (int s = 0; s < scales; ++s) {
    const auto st = ssim_windows(x, y, size, sigma);
    const double f = s + 1 == scales ? st.ssim : st.cs;
    prod *= f > 0 ? std::pow(f, full[s] / wsum) : 0.0;
    if (s + 1 < scales) {
      x = halve(x);
      y = halve(y);
    }
  }
  return prod;
}

/// Receptive field of a stack of (kernel, stride) convolutions.
inline int64_t receptive_field(const std::vector<std::pair<int64_t, int64_t>>& layers) {
  int64_t r = 1;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) r = r * it->second + (it->first - it->second);
  return r;
}

/// Norm-wise relative error between an analytic gradient and central
/// finite differences of `f` around `x` (double precision).
inline double gradient_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x,
                             double h = 1e-6) {
  x = x.detach().clone().to(torch::kFloat64).requires_grad_(true);
  auto y = f(x);
  y.backward();
  auto analytic = x.grad().detach().clone().flatten();
  auto numeric = torch::zeros_like(analytic);
  auto flat = x.detach().clone().flatten();
  for (int64_t i = 0; i < flat.numel(); ++i) {
    auto plus = flat.clone();
    auto minus = flat.clone();
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(plus.view(x.sizes())).item<double>();
    const double fm = f(minus.view(x.sizes())).item<double>();
    numeric[i] = (fp - fm) / (2 * h);
  }
  const double denom = std::max({analytic.norm().item<double>(), numeric.norm().item<double>(), 1e-12});
  return (analytic - numeric).norm().item<double>() / denom;
}

}  // namespace oracle
