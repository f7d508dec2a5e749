#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>

namespace dynslam
{

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind
{
  usage = 2,
  data = 3,
  numerical = 4,
};

class Error : public std::runtime_error
{
public:
  Error(ErrorKind kind, const std::string &what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

inline Error usage_error(const std::string &msg) { return Error(ErrorKind::usage, msg); }
inline Error data_error(const std::string &msg) { return Error(ErrorKind::data, msg); }
inline Error numerical_error(const std::string &msg) { return Error(ErrorKind::numerical, msg); }

/// Row-major H×W image with C interleaved channels.
template <typename T>
class Image
{
public:
  Image() = default;
  Image(int width, int height, int channels = 1, T fill = T{})
      : width_(width), height_(height), channels_(channels), data_(checked_size(width, height, channels), fill)
  {
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  size_t pixel_count() const noexcept { return static_cast<size_t>(width_) * height_; }
  bool empty() const noexcept { return data_.empty(); }

  bool same_size(int w, int h) const noexcept { return w == width_ && h == height_; }
  template <typename U>
  bool same_size(const Image<U> &o) const noexcept { return same_size(o.width(), o.height()); }

  bool contains(int x, int y) const noexcept { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  T &operator()(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  const T &operator()(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  T &at_index(size_t i) { return data_[i]; }
  const T &at_index(size_t i) const { return data_[i]; }

  std::vector<T> &data() noexcept { return data_; }
  const std::vector<T> &data() const noexcept { return data_; }

  bool operator==(const Image &o) const = default;

private:
  static size_t checked_size(int w, int h, int c)
  {
    if (w < 0 || h < 0 || c <= 0)
      throw usage_error("image dimensions must be non-negative");
    return static_cast<size_t>(w) * static_cast<size_t>(h) * static_cast<size_t>(c);
  }

  size_t index(int x, int y, int c) const noexcept
  {
    return (static_cast<size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

using ImageF = Image<double>;
using BinaryMask = Image<uint8_t>; // 0 / 1

struct Intrinsics
{
  double fx = 525.0;
  double fy = 525.0;
  double cx = 319.5;
  double cy = 239.5;
  int width = 640;
  int height = 480;
  double depth_scale = 5000.0;

  void validate() const
  {
    if (!(fx > 0 && fy > 0))
      throw usage_error("intrinsics: focal lengths must be positive");
    if (width <= 0 || height <= 0)
      throw usage_error("intrinsics: image size must be positive");
    if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
      throw usage_error("intrinsics: principal point outside the image");
    if (!(depth_scale > 0))
      throw usage_error("intrinsics: depth_scale must be positive");
  }

  Eigen::Matrix3d matrix() const
  {
    Eigen::Matrix3d k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }
};

// Portable RNG helpers: std distributions are implementation-defined, these are not.
using Rng = std::mt19937_64;

inline double uniform01(Rng &rng)
{
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng &rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Unbiased integer in [0, n).
inline uint64_t uniform_index(Rng &rng, uint64_t n)
{
  const uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % n;
  uint64_t r;
  do
  {
    r = rng();
  } while (r >= limit);
  return r % n;
}

inline double gaussian(Rng &rng)
{
  // Box-Muller; one value per call.
  double u1 = uniform01(rng);
  while (u1 <= 0.0)
    u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Runs fn(i) for i in [0, n) over `threads` workers with contiguous static ranges.
/// Callers write only to per-index slots, so results never depend on the thread count.
template <typename Fn>
void parallel_for(size_t n, int threads, Fn &&fn)
{
  if (threads <= 1 || n < 2)
  {
    for (size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  const size_t workers = std::min<size_t>(static_cast<size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w)
  {
    const size_t begin = n * w / workers;
    const size_t end = n * (w + 1) / workers;
    pool.emplace_back([begin, end, &fn] {
      for (size_t i = begin; i < end; ++i)
        fn(i);
    });
  }
  for (auto &t : pool)
    t.join();
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace dynslam
