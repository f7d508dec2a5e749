#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dynslam/core.hpp"

namespace dynslam
{

struct HashGridConfig
{
  int levels = 16;
  int r_min = 16;
  int r_max = 2048;
  int log2_table = 14;
  int feat_dim = 2;
  Eigen::Vector3d bounds_min{-2.5, -2.0, -2.5};
  Eigen::Vector3d bounds_max{2.5, 2.0, 2.5};

  void validate() const
  {
    if (levels < 2)
      throw usage_error("hash grid: need at least 2 levels");
    if (!(r_min >= 1 && r_min < r_max))
      throw usage_error("hash grid: require 1 <= r_min < r_max");
    if (log2_table < 4 || log2_table > 26)
      throw usage_error("hash grid: log2_table out of range [4, 26]");
    if (feat_dim < 1)
      throw usage_error("hash grid: feat_dim must be positive");
    if (!((bounds_max - bounds_min).minCoeff() > 0))
      throw usage_error("hash grid: empty scene bounds");
  }

  size_t table_size() const noexcept { return size_t{1} << log2_table; }

  /// Per-level growth factor b = exp((ln R_max - ln R_min) / (L - 1)).
  double growth() const { return std::exp((std::log(double(r_max)) - std::log(double(r_min))) / (levels - 1)); }

  /// R_l = floor(R_min * b^l); the epsilon absorbs rounding at l = L-1 where the product is exactly R_max.
  int resolution(int level) const
  {
    return static_cast<int>(std::floor(r_min * std::pow(growth(), level) * (1.0 + 1e-12)));
  }

  Eigen::Vector3d extent() const { return bounds_max - bounds_min; }
};

struct DecoderConfig
{
  int hidden = 32;
  int feature_dim = 15; // h
  int blob_bins = 16;   // one-blob bins per axis
};

/// Offsets of each parameter block inside the flat parameter vector.
struct FieldLayout
{
  size_t tables = 0, g_w1 = 0, g_b1 = 0, g_w2 = 0, g_b2 = 0, c_w1 = 0, c_b1 = 0, c_w2 = 0, c_b2 = 0, total = 0;
  int geo_in = 0, geo_out = 0, col_in = 0, hidden = 0, enc_dim = 0, blob_dim = 0;

  static FieldLayout make(const HashGridConfig &g, const DecoderConfig &d)
  {
    FieldLayout l;
    l.blob_dim = 3 * d.blob_bins;
    l.enc_dim = g.levels * g.feat_dim;
    l.geo_in = l.blob_dim + l.enc_dim;
    l.geo_out = 1 + d.feature_dim;
    l.col_in = l.blob_dim + d.feature_dim;
    l.hidden = d.hidden;
    size_t o = 0;
    auto take = [&o](size_t n) {
      const size_t at = o;
      o += n;
      return at;
    };
    l.tables = take(static_cast<size_t>(g.levels) * g.table_size() * g.feat_dim);
    l.g_w1 = take(static_cast<size_t>(d.hidden) * l.geo_in);
    l.g_b1 = take(static_cast<size_t>(d.hidden));
    l.g_w2 = take(static_cast<size_t>(l.geo_out) * d.hidden);
    l.g_b2 = take(static_cast<size_t>(l.geo_out));
    l.c_w1 = take(static_cast<size_t>(d.hidden) * l.col_in);
    l.c_b1 = take(static_cast<size_t>(d.hidden));
    l.c_w2 = take(3 * static_cast<size_t>(d.hidden));
    l.c_b2 = take(3);
    l.total = o;
    return l;
  }
};

using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

/// Flat storage with named views; shared by parameters and their gradients.
struct FieldTensor
{
  FieldLayout layout;
  std::vector<double> data;

  FieldTensor() = default;
  explicit FieldTensor(const FieldLayout &l) : layout(l), data(l.total, 0.0) {}

  double *tables() { return data.data() + layout.tables; }
  const double *tables() const { return data.data() + layout.tables; }

  MatMap g_w1() { return {data.data() + layout.g_w1, layout.hidden, layout.geo_in}; }
  VecMap g_b1() { return {data.data() + layout.g_b1, layout.hidden}; }
  MatMap g_w2() { return {data.data() + layout.g_w2, layout.geo_out, layout.hidden}; }
  VecMap g_b2() { return {data.data() + layout.g_b2, layout.geo_out}; }
  MatMap c_w1() { return {data.data() + layout.c_w1, layout.hidden, layout.col_in}; }
  VecMap c_b1() { return {data.data() + layout.c_b1, layout.hidden}; }
  MatMap c_w2() { return {data.data() + layout.c_w2, 3, layout.hidden}; }
  VecMap c_b2() { return {data.data() + layout.c_b2, 3}; }

  ConstMatMap g_w1() const { return {data.data() + layout.g_w1, layout.hidden, layout.geo_in}; }
  ConstVecMap g_b1() const { return {data.data() + layout.g_b1, layout.hidden}; }
  ConstMatMap g_w2() const { return {data.data() + layout.g_w2, layout.geo_out, layout.hidden}; }
  ConstVecMap g_b2() const { return {data.data() + layout.g_b2, layout.geo_out}; }
  ConstMatMap c_w1() const { return {data.data() + layout.c_w1, layout.hidden, layout.col_in}; }
  ConstVecMap c_b1() const { return {data.data() + layout.c_b1, layout.hidden}; }
  ConstMatMap c_w2() const { return {data.data() + layout.c_w2, 3, layout.hidden}; }
  ConstVecMap c_b2() const { return {data.data() + layout.c_b2, 3}; }

  void set_zero() { std::fill(data.begin(), data.end(), 0.0); }
};

using GradientBundle = FieldTensor;

struct FieldParams
{
  HashGridConfig grid;
  DecoderConfig decoder;
  FieldTensor w;

  /// Tables uniform in [-1e-4, 1e-4]; decoder weights uniform in +-1/sqrt(fan_in); the SDF
  /// output bias starts at `sdf_bias` so untrained space reads as empty.
  static FieldParams create(const HashGridConfig &grid, const DecoderConfig &dec, uint64_t seed, double sdf_bias)
  {
    grid.validate();
    if (dec.hidden < 1 || dec.feature_dim < 0 || dec.blob_bins < 1)
      throw usage_error("decoder: invalid sizes");
    FieldParams p;
    p.grid = grid;
    p.decoder = dec;
    p.w = FieldTensor(FieldLayout::make(grid, dec));
    Rng rng(seed);
    const auto &l = p.w.layout;
    for (size_t i = l.tables; i < l.g_w1; ++i)
      p.w.data[i] = uniform(rng, -1e-4, 1e-4);
    auto fill = [&](MatMap m) {
      const double b = 1.0 / std::sqrt(static_cast<double>(m.cols()));
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i)
          m(i, j) = uniform(rng, -b, b);
    };
    fill(p.w.g_w1());
    fill(p.w.g_w2());
    fill(p.w.c_w1());
    fill(p.w.c_w2());
    p.w.g_b2()(0) = sdf_bias;
    return p;
  }

  GradientBundle zero_gradient() const { return GradientBundle(w.layout); }
  const FieldLayout &layout() const noexcept { return w.layout; }
};

namespace detail
{

inline uint32_t grid_index(const HashGridConfig &g, int res, uint32_t x, uint32_t y, uint32_t z)
{
  const uint64_t side = static_cast<uint64_t>(res) + 1;
  if (side * side * side <= g.table_size())
    return static_cast<uint32_t>(x + side * (y + side * z));
  const uint32_t h = (x * 1u) ^ (y * 2654435761u) ^ (z * 805459861u);
  return h & static_cast<uint32_t>(g.table_size() - 1);
}

} // namespace detail

/// Multi-resolution hash encoding of a single point. `out` receives L*feat_dim features.
/// Returns false when x had to be clamped into the scene bounds.
inline bool hash_encode(const Eigen::Vector3d &x, const HashGridConfig &g, const double *tables, double *out)
{
  const Eigen::Vector3d ext = g.extent();
  Eigen::Vector3d xn = (x - g.bounds_min).cwiseQuotient(ext);
  const bool inside = (xn.array() >= 0).all() && (xn.array() <= 1).all();
  xn = xn.cwiseMax(0.0).cwiseMin(1.0);
  const size_t tsize = g.table_size();
  for (int l = 0; l < g.levels; ++l)
  {
    const int res = g.resolution(l);
    std::array<uint32_t, 3> i0{};
    std::array<double, 3> t{};
    for (int a = 0; a < 3; ++a)
    {
      const double pos = xn[a] * res;
      const int fl = std::min(static_cast<int>(std::floor(pos)), res - 1);
      i0[static_cast<size_t>(a)] = static_cast<uint32_t>(fl);
      t[static_cast<size_t>(a)] = pos - fl;
    }
    for (int f = 0; f < g.feat_dim; ++f)
      out[l * g.feat_dim + f] = 0.0;
    for (int c = 0; c < 8; ++c)
    {
      double w = 1.0;
      std::array<uint32_t, 3> v{};
      for (int a = 0; a < 3; ++a)
      {
        const bool hi = (c >> a) & 1;
        v[static_cast<size_t>(a)] = i0[static_cast<size_t>(a)] + hi;
        w *= hi ? t[static_cast<size_t>(a)] : 1.0 - t[static_cast<size_t>(a)];
      }
      const uint32_t idx = detail::grid_index(g, res, v[0], v[1], v[2]);
      const double *entry = tables + (static_cast<size_t>(l) * tsize + idx) * g.feat_dim;
      for (int f = 0; f < g.feat_dim; ++f)
        out[l * g.feat_dim + f] += w * entry[f];
    }
  }
  return inside;
}

/// One-blob encoding: per axis, Gaussian (sigma = 1 bin) activations at the bin centers.
inline void coord_encode(const Eigen::Vector3d &xn, int bins, double *out, double *dout = nullptr)
{
  for (int a = 0; a < 3; ++a)
  {
    const double u = xn[a] * bins;
    for (int k = 0; k < bins; ++k)
    {
      const double d = u - (k + 0.5);
      const double g = std::exp(-0.5 * d * d);
      out[a * bins + k] = g;
      if (dout)
        dout[a * bins + k] = -d * g * bins; // d/d xn
    }
  }
}

struct FieldOutput
{
  double s = 0;
  Eigen::VectorXd h;
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
};

/// Batched field evaluation with the activations needed by backward().
class FieldEvaluation
{
public:
  /// Evaluates the field at the columns of `points` (world coordinates).
  void forward(const FieldParams &p, const Eigen::Matrix3Xd &points, int threads = 1)
  {
    params_ = &p;
    const auto &g = p.grid;
    const auto &l = p.layout();
    const Eigen::Index n = points.cols();
    n_ = n;
    const int bins = p.decoder.blob_bins;
    corner_idx_.assign(static_cast<size_t>(n) * g.levels * 8, 0);
    frac_.assign(static_cast<size_t>(n) * g.levels * 3, 0.0);
    clamped_.assign(static_cast<size_t>(n * 3), 0);
    geo_in_.resize(l.geo_in, n);
    blob_grad_.resize(l.blob_dim, n);

    const Eigen::Vector3d ext = g.extent();
    const size_t tsize = g.table_size();
    const double *tables = p.w.tables();
    resolutions_.resize(static_cast<size_t>(g.levels));
    for (int lev = 0; lev < g.levels; ++lev)
      resolutions_[static_cast<size_t>(lev)] = g.resolution(lev);
    parallel_for(static_cast<size_t>(n), threads, [&](size_t j) {
      const Eigen::Index jj = static_cast<Eigen::Index>(j);
      Eigen::Vector3d xn = (points.col(jj) - g.bounds_min).cwiseQuotient(ext);
      for (int a = 0; a < 3; ++a)
      {
        if (xn[a] < 0 || xn[a] > 1)
          clamped_[j * 3 + static_cast<size_t>(a)] = 1;
        xn[a] = std::clamp(xn[a], 0.0, 1.0);
      }
      double *col = geo_in_.data() + jj * l.geo_in;
      coord_encode(xn, bins, col, blob_grad_.data() + jj * l.blob_dim);
      double *feat = col + l.blob_dim;
      for (int lev = 0; lev < g.levels; ++lev)
      {
        const int res = resolutions_[static_cast<size_t>(lev)];
        std::array<uint32_t, 3> i0{};
        double *t = frac_.data() + (j * g.levels + static_cast<size_t>(lev)) * 3;
        for (int a = 0; a < 3; ++a)
        {
          const double pos = xn[a] * res;
          const int fl = std::min(static_cast<int>(std::floor(pos)), res - 1);
          i0[static_cast<size_t>(a)] = static_cast<uint32_t>(fl);
          t[a] = pos - fl;
        }
        uint32_t *idx = corner_idx_.data() + (j * g.levels + static_cast<size_t>(lev)) * 8;
        for (int f = 0; f < g.feat_dim; ++f)
          feat[lev * g.feat_dim + f] = 0.0;
        for (int c = 0; c < 8; ++c)
        {
          double w = 1.0;
          std::array<uint32_t, 3> v{};
          for (int a = 0; a < 3; ++a)
          {
            const bool hi = (c >> a) & 1;
            v[static_cast<size_t>(a)] = i0[static_cast<size_t>(a)] + hi;
            w *= hi ? t[a] : 1.0 - t[a];
          }
          idx[c] = detail::grid_index(g, res, v[0], v[1], v[2]);
          const double *entry = tables + (static_cast<size_t>(lev) * tsize + idx[c]) * g.feat_dim;
          for (int f = 0; f < g.feat_dim; ++f)
            feat[lev * g.feat_dim + f] += w * entry[f];
        }
      }
    });

    a1_.noalias() = p.w.g_w1() * geo_in_;
    a1_.colwise() += p.w.g_b1();
    z1_ = a1_.cwiseMax(0.0);
    o_.noalias() = p.w.g_w2() * z1_;
    o_.colwise() += p.w.g_b2();

    col_in_.resize(l.col_in, n);
    col_in_.topRows(l.blob_dim) = geo_in_.topRows(l.blob_dim);
    col_in_.bottomRows(l.geo_out - 1) = o_.bottomRows(l.geo_out - 1);
    a2_.noalias() = p.w.c_w1() * col_in_;
    a2_.colwise() += p.w.c_b1();
    z2_ = a2_.cwiseMax(0.0);
    q_.noalias() = p.w.c_w2() * z2_;
    q_.colwise() += p.w.c_b2();
    c_ = q_.unaryExpr([](double v) { return sigmoid(v); });
  }

  Eigen::Index size() const noexcept { return n_; }
  bool has_forward() const noexcept { return params_ != nullptr; }

  double sdf(Eigen::Index j) const { return o_(0, j); }
  auto sdf_row() const { return o_.row(0); }
  auto features() const { return o_.bottomRows(o_.rows() - 1); }
  const Eigen::Matrix3Xd &colors() const { return c_; }

  FieldOutput output(Eigen::Index j) const
  {
    FieldOutput out;
    out.s = o_(0, j);
    out.h = o_.col(j).tail(o_.rows() - 1);
    out.c = c_.col(j);
    return out;
  }

  /// Reverse-mode pass. Upstream gradients: d_s (N), d_h (feature_dim × N or empty), d_c (3 × N).
  /// Adds parameter gradients into `grad` (when given) and writes d/dx into `dx` (when given).
  void backward(const Eigen::RowVectorXd &d_s, const Eigen::MatrixXd &d_h, const Eigen::Matrix3Xd &d_c,
                GradientBundle *grad, Eigen::Matrix3Xd *dx = nullptr, int threads = 1) const
  {
    if (!params_)
      throw usage_error("field backward called without a matching forward evaluation");
    const FieldParams &p = *params_;
    const auto &l = p.layout();
    const auto &g = p.grid;
    if (d_s.size() != n_ || d_c.cols() != n_ || (d_h.size() != 0 && d_h.cols() != n_))
      throw usage_error("field backward: upstream gradient size mismatch");

    const Eigen::Matrix3Xd dq = d_c.cwiseProduct(c_.cwiseProduct((1.0 - c_.array()).matrix()));
    const Eigen::MatrixXd da2 = (p.w.c_w2().transpose() * dq).cwiseProduct(relu_mask(a2_));
    const Eigen::MatrixXd d_col_in = p.w.c_w1().transpose() * da2;

    Eigen::MatrixXd d_o(l.geo_out, n_);
    d_o.row(0) = d_s;
    d_o.bottomRows(l.geo_out - 1) = d_col_in.bottomRows(l.geo_out - 1);
    if (d_h.size() != 0)
      d_o.bottomRows(l.geo_out - 1) += d_h;
    const Eigen::MatrixXd da1 = (p.w.g_w2().transpose() * d_o).cwiseProduct(relu_mask(a1_));
    const Eigen::MatrixXd d_geo_in = p.w.g_w1().transpose() * da1;

    if (grad)
    {
      grad->c_w2().noalias() += dq * z2_.transpose();
      grad->c_b2() += dq.rowwise().sum();
      grad->c_w1().noalias() += da2 * col_in_.transpose();
      grad->c_b1() += da2.rowwise().sum();
      grad->g_w2().noalias() += d_o * z1_.transpose();
      grad->g_b2() += d_o.rowwise().sum();
      grad->g_w1().noalias() += da1 * geo_in_.transpose();
      grad->g_b1() += da1.rowwise().sum();

      // Scatter into touched table entries, serially and in point order.
      double *gt = grad->tables();
      const size_t tsize = g.table_size();
      for (Eigen::Index j = 0; j < n_; ++j)
      {
        const double *dv = d_geo_in.data() + j * l.geo_in + l.blob_dim;
        for (int lev = 0; lev < g.levels; ++lev)
        {
          const size_t base = (static_cast<size_t>(j) * g.levels + static_cast<size_t>(lev));
          const uint32_t *idx = corner_idx_.data() + base * 8;
          const double *t = frac_.data() + base * 3;
          for (int c = 0; c < 8; ++c)
          {
            double w = 1.0;
            for (int a = 0; a < 3; ++a)
              w *= ((c >> a) & 1) ? t[a] : 1.0 - t[a];
            double *entry = gt + (static_cast<size_t>(lev) * tsize + idx[c]) * g.feat_dim;
            for (int f = 0; f < g.feat_dim; ++f)
              entry[f] += w * dv[lev * g.feat_dim + f];
          }
        }
      }
    }

    if (dx)
    {
      dx->resize(3, n_);
      const Eigen::Vector3d inv_ext = g.extent().cwiseInverse();
      const double *tables = p.w.tables();
      const size_t tsize = g.table_size();
      const int bins = p.decoder.blob_bins;
      parallel_for(static_cast<size_t>(n_), threads, [&](size_t j) {
        const Eigen::Index jj = static_cast<Eigen::Index>(j);
        Eigen::Vector3d dxn = Eigen::Vector3d::Zero();
        const double *dgamma_geo = d_geo_in.data() + jj * l.geo_in;
        const double *dgamma_col = d_col_in.data() + jj * l.col_in;
        const double *bg = blob_grad_.data() + jj * l.blob_dim;
        for (int a = 0; a < 3; ++a)
          for (int k = 0; k < bins; ++k)
          {
            const int r = a * bins + k;
            dxn[a] += (dgamma_geo[r] + dgamma_col[r]) * bg[r];
          }
        const double *dv = dgamma_geo + l.blob_dim;
        for (int lev = 0; lev < g.levels; ++lev)
        {
          const int res = resolutions_[static_cast<size_t>(lev)];
          const size_t base = j * static_cast<size_t>(g.levels) + static_cast<size_t>(lev);
          const uint32_t *idx = corner_idx_.data() + base * 8;
          const double *t = frac_.data() + base * 3;
          for (int c = 0; c < 8; ++c)
          {
            const double *entry = tables + (static_cast<size_t>(lev) * tsize + idx[c]) * g.feat_dim;
            double proj = 0;
            for (int f = 0; f < g.feat_dim; ++f)
              proj += entry[f] * dv[lev * g.feat_dim + f];
            for (int a = 0; a < 3; ++a)
            {
              double dw = ((c >> a) & 1) ? 1.0 : -1.0;
              for (int b = 0; b < 3; ++b)
                if (b != a)
                  dw *= ((c >> b) & 1) ? t[b] : 1.0 - t[b];
              dxn[a] += proj * dw * res;
            }
          }
        }
        for (int a = 0; a < 3; ++a)
          (*dx)(a, jj) = clamped_[j * 3 + static_cast<size_t>(a)] ? 0.0 : dxn[a] * inv_ext[a];
      });
    }
  }

private:
  static Eigen::MatrixXd relu_mask(const Eigen::MatrixXd &a)
  {
    return (a.array() > 0).cast<double>().matrix();
  }

  const FieldParams *params_ = nullptr;
  Eigen::Index n_ = 0;
  std::vector<uint32_t> corner_idx_;
  std::vector<double> frac_;
  std::vector<uint8_t> clamped_;
  std::vector<int> resolutions_;
  Eigen::MatrixXd geo_in_, blob_grad_, a1_, z1_, o_, col_in_, a2_, z2_;
  Eigen::Matrix3Xd q_, c_;
};

/// Single-point convenience wrapper over FieldEvaluation.
inline FieldOutput field_forward(const Eigen::Vector3d &x, const FieldParams &p)
{
  FieldEvaluation ev;
  Eigen::Matrix3Xd pts(3, 1);
  pts.col(0) = x;
  ev.forward(p, pts);
  return ev.output(0);
}

// ---------------------------------------------------------------------------
// Checkpoint: magic, version, config echo, raw little-endian float64 parameters.

inline constexpr char checkpoint_magic[8] = {'D', 'S', 'F', 'I', 'E', 'L', 'D', '1'};
inline constexpr uint32_t checkpoint_version = 1;

inline void save_checkpoint(const std::filesystem::path &path, const FieldParams &p)
{
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
  std::ofstream f(path, std::ios::binary);
  if (!f)
    throw data_error("cannot write checkpoint: " + path.string());
  auto put = [&f](const auto &v) { f.write(reinterpret_cast<const char *>(&v), sizeof v); };
  f.write(checkpoint_magic, 8);
  put(checkpoint_version);
  const int32_t ints[8] = {p.grid.levels, p.grid.r_min, p.grid.r_max, p.grid.log2_table, p.grid.feat_dim,
                           p.decoder.hidden, p.decoder.feature_dim, p.decoder.blob_bins};
  for (auto v : ints)
    put(v);
  for (int a = 0; a < 3; ++a)
    put(p.grid.bounds_min[a]);
  for (int a = 0; a < 3; ++a)
    put(p.grid.bounds_max[a]);
  const uint64_t count = p.w.data.size();
  put(count);
  f.write(reinterpret_cast<const char *>(p.w.data.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!f)
    throw data_error("failed writing checkpoint: " + path.string());
}

inline FieldParams load_checkpoint(const std::filesystem::path &path)
{
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw data_error("cannot open checkpoint: " + path.string());
  auto get = [&f, &path](auto &v) {
    f.read(reinterpret_cast<char *>(&v), sizeof v);
    if (!f)
      throw data_error("truncated checkpoint: " + path.string());
  };
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, checkpoint_magic, 8) != 0)
    throw data_error("not a field checkpoint: " + path.string());
  uint32_t version = 0;
  get(version);
  if (version != checkpoint_version)
    throw data_error("unsupported checkpoint version " + std::to_string(version));
  int32_t ints[8];
  for (auto &v : ints)
    get(v);
  FieldParams p;
  p.grid.levels = ints[0];
  p.grid.r_min = ints[1];
  p.grid.r_max = ints[2];
  p.grid.log2_table = ints[3];
  p.grid.feat_dim = ints[4];
  p.decoder.hidden = ints[5];
  p.decoder.feature_dim = ints[6];
  p.decoder.blob_bins = ints[7];
  for (int a = 0; a < 3; ++a)
    get(p.grid.bounds_min[a]);
  for (int a = 0; a < 3; ++a)
    get(p.grid.bounds_max[a]);
  p.grid.validate();
  p.w = FieldTensor(FieldLayout::make(p.grid, p.decoder));
  uint64_t count = 0;
  get(count);
  if (count != p.w.data.size())
    throw data_error("checkpoint parameter count does not match its config");
  f.read(reinterpret_cast<char *>(p.w.data.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (f.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
    throw data_error("truncated checkpoint payload: " + path.string());
  return p;
}

} // namespace dynslam
