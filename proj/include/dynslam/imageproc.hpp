#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "dynslam/core.hpp"

namespace dynslam
{

struct CannyConfig
{
  double sigma = 1.4;
  int kernel = 5;
  double low = 0.1;  // fraction of the max gradient magnitude
  double high = 0.2; // fraction of the max gradient magnitude
};

struct EdgeSet
{
  int frame_id = -1;
  std::vector<Eigen::Vector2i> pixels; // row-major scan order, unique
  BinaryMask map;
};

/// Euclidean distance (pixels) to the nearest edge pixel.
using DTMap = ImageF;

inline ImageF to_gray(const ImageF &color)
{
  if (color.channels() == 1)
    return color;
  ImageF g(color.width(), color.height(), 1);
  for (int y = 0; y < color.height(); ++y)
    for (int x = 0; x < color.width(); ++x)
      g(x, y) = 0.299 * color(x, y, 0) + 0.587 * color(x, y, 1) + 0.114 * color(x, y, 2);
  return g;
}

inline ImageF gaussian_blur(const ImageF &img, double sigma, int ksize)
{
  const int r = ksize / 2;
  std::vector<double> k(static_cast<size_t>(ksize));
  double sum = 0;
  for (int i = -r; i <= r; ++i)
  {
    k[static_cast<size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<size_t>(i + r)];
  }
  for (auto &v : k)
    v /= sum;

  const int w = img.width(), h = img.height();
  ImageF tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
    {
      double acc = 0;
      for (int i = -r; i <= r; ++i)
        acc += k[static_cast<size_t>(i + r)] * img(std::clamp(x + i, 0, w - 1), y);
      tmp(x, y) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
    {
      double acc = 0;
      for (int i = -r; i <= r; ++i)
        acc += k[static_cast<size_t>(i + r)] * tmp(x, std::clamp(y + i, 0, h - 1));
      out(x, y) = acc;
    }
  return out;
}

/// Canny: Gaussian smoothing, Sobel gradients, non-maximum suppression along the quantized
/// gradient direction, then 8-connected hysteresis between the two thresholds.
inline EdgeSet canny_edges(const ImageF &gray_in, const CannyConfig &cfg = {}, int frame_id = -1)
{
  if (!(cfg.low >= 0 && cfg.low < cfg.high))
    throw usage_error("canny: require 0 <= low < high");
  const ImageF gray = gray_in.channels() == 1 ? gray_in : to_gray(gray_in);
  const int w = gray.width(), h = gray.height();
  EdgeSet out;
  out.frame_id = frame_id;
  out.map = BinaryMask(w, h, 1, 0);
  if (w < 3 || h < 3)
    return out;

  const ImageF s = gaussian_blur(gray, cfg.sigma, cfg.kernel);
  ImageF gx(w, h), gy(w, h), mag(w, h);
  double max_mag = 0;
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x)
    {
      const double dx = (s(x + 1, y - 1) + 2 * s(x + 1, y) + s(x + 1, y + 1)) - (s(x - 1, y - 1) + 2 * s(x - 1, y) + s(x - 1, y + 1));
      const double dy = (s(x - 1, y + 1) + 2 * s(x, y + 1) + s(x + 1, y + 1)) - (s(x - 1, y - 1) + 2 * s(x, y - 1) + s(x + 1, y - 1));
      gx(x, y) = dx;
      gy(x, y) = dy;
      mag(x, y) = std::sqrt(dx * dx + dy * dy);
      max_mag = std::max(max_mag, mag(x, y));
    }
  // Flat images carry no edges; also guards against rounding noise on constant input.
  if (max_mag < 1e-9)
    return out;

  const double lo = cfg.low * max_mag;
  const double hi = cfg.high * max_mag;
  constexpr double tan22 = 0.41421356237309503; // tan(22.5 deg)

  // 0 = suppressed, 1 = weak, 2 = strong
  Image<uint8_t> cls(w, h, 1, 0);
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x)
    {
      const double m = mag(x, y);
      if (m < lo || m <= 0)
        continue;
      const double ax = std::abs(gx(x, y)), ay = std::abs(gy(x, y));
      double n1, n2;
      if (ay <= tan22 * ax)
      {
        n1 = mag(x - 1, y);
        n2 = mag(x + 1, y);
      }
      else if (ax <= tan22 * ay)
      {
        n1 = mag(x, y - 1);
        n2 = mag(x, y + 1);
      }
      else if ((gx(x, y) > 0) == (gy(x, y) > 0))
      {
        n1 = mag(x - 1, y - 1);
        n2 = mag(x + 1, y + 1);
      }
      else
      {
        n1 = mag(x + 1, y - 1);
        n2 = mag(x - 1, y + 1);
      }
      // Asymmetric comparison keeps exactly one pixel of a symmetric ridge.
      if (m > n1 && m >= n2)
        cls(x, y) = m >= hi ? 2 : 1;
    }

  std::vector<Eigen::Vector2i> stack;
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x)
      if (cls(x, y) == 2 && !out.map(x, y))
      {
        out.map(x, y) = 1;
        stack.emplace_back(x, y);
        while (!stack.empty())
        {
          const Eigen::Vector2i p = stack.back();
          stack.pop_back();
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
            {
              const int qx = p.x() + dx, qy = p.y() + dy;
              if (!cls.contains(qx, qy) || out.map(qx, qy) || cls(qx, qy) == 0)
                continue;
              out.map(qx, qy) = 1;
              stack.emplace_back(qx, qy);
            }
        }
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (out.map(x, y))
        out.pixels.emplace_back(x, y);
  return out;
}

namespace detail
{

// Squared-distance lower envelope of parabolas over one line (Felzenszwalb-Huttenlocher).
inline void dt_1d(const double *f, double *d, int n, std::vector<int> &v, std::vector<double> &z)
{
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(static_cast<size_t>(n), 0);
  z.assign(static_cast<size_t>(n) + 1, 0);
  int k = -1;
  for (int q = 0; q < n; ++q)
  {
    if (f[q] == inf)
      continue;
    if (k < 0)
    {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s;
    while (true)
    {
      const int p = v[static_cast<size_t>(k)];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
      if (s <= z[static_cast<size_t>(k)] && k > 0)
        --k;
      else
        break;
    }
    if (s <= z[static_cast<size_t>(k)])
    {
      // k == 0 and the new parabola dominates everywhere
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    ++k;
    v[static_cast<size_t>(k)] = q;
    z[static_cast<size_t>(k)] = s;
    z[static_cast<size_t>(k) + 1] = inf;
  }
  if (k < 0)
  {
    for (int q = 0; q < n; ++q)
      d[q] = inf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q)
  {
    while (z[static_cast<size_t>(j) + 1] < q)
      ++j;
    const int p = v[static_cast<size_t>(j)];
    d[q] = double(q - p) * (q - p) + f[p];
  }
}

} // namespace detail

/// Exact Euclidean distance transform via two separable lower-envelope passes.
inline DTMap distance_transform(const BinaryMask &edges)
{
  const int w = edges.width(), h = edges.height();
  bool any = false;
  for (auto v : edges.data())
    any = any || v;
  if (!any)
    throw numerical_error("distance_transform: edge map has no edge pixels");

  constexpr double inf = std::numeric_limits<double>::infinity();
  ImageF sq(w, h);
  std::vector<int> v;
  std::vector<double> z;
  std::vector<double> f(static_cast<size_t>(std::max(w, h))), d(f.size());
  for (int x = 0; x < w; ++x)
  {
    for (int y = 0; y < h; ++y)
      f[static_cast<size_t>(y)] = edges(x, y) ? 0.0 : inf;
    detail::dt_1d(f.data(), d.data(), h, v, z);
    for (int y = 0; y < h; ++y)
      sq(x, y) = d[static_cast<size_t>(y)];
  }
  DTMap out(w, h);
  for (int y = 0; y < h; ++y)
  {
    for (int x = 0; x < w; ++x)
      f[static_cast<size_t>(x)] = sq(x, y);
    detail::dt_1d(f.data(), d.data(), w, v, z);
    for (int x = 0; x < w; ++x)
      out(x, y) = std::sqrt(d[static_cast<size_t>(x)]);
  }
  return out;
}

struct DTSample
{
  double value = 0;
  Eigen::Vector2d gradient = Eigen::Vector2d::Zero();
  bool in_bounds = false;
};

/// Bilinear value and analytic spatial gradient of a DT map at a continuous pixel.
inline DTSample sample_dt_bilinear(const DTMap &dt, const Eigen::Vector2d &p)
{
  DTSample s;
  const int w = dt.width(), h = dt.height();
  if (!(p.x() >= 0 && p.y() >= 0 && p.x() <= w - 1 && p.y() <= h - 1) || w < 2 || h < 2)
    return s;
  const int x0 = std::min(static_cast<int>(std::floor(p.x())), w - 2);
  const int y0 = std::min(static_cast<int>(std::floor(p.y())), h - 2);
  const double fx = p.x() - x0, fy = p.y() - y0;
  const double v00 = dt(x0, y0), v10 = dt(x0 + 1, y0), v01 = dt(x0, y0 + 1), v11 = dt(x0 + 1, y0 + 1);
  s.value = (1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10 + (1 - fx) * fy * v01 + fx * fy * v11;
  s.gradient.x() = (1 - fy) * (v10 - v00) + fy * (v11 - v01);
  s.gradient.y() = (1 - fx) * (v01 - v00) + fx * (v11 - v10);
  s.in_bounds = true;
  return s;
}

} // namespace dynslam
