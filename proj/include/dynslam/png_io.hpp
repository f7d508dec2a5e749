#pragma once

#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "dynslam/core.hpp"

namespace dynslam::png
{

/// Decoded PNG: samples widened to uint16, interleaved channels.
struct RawImage
{
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<uint16_t> samples;
};

namespace detail
{

struct FileCloser
{
  void operator()(std::FILE *f) const noexcept
  {
    if (f)
      std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open(const std::filesystem::path &p, const char *mode)
{
  FilePtr f(std::fopen(p.c_str(), mode));
  if (!f)
    throw data_error("cannot open file: " + p.string());
  return f;
}

} // namespace detail

inline RawImage read(const std::filesystem::path &path)
{
  auto file = detail::open(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw data_error("not a PNG file: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info)
  {
    png_destroy_read_struct(&png, &info, nullptr);
    throw data_error("libpng initialization failed");
  }
  RawImage out;
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png)))
  {
    png_destroy_read_struct(&png, &info, nullptr);
    throw data_error("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE)
    png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16)
    png_set_swap(png); // host little-endian 16-bit samples
  png_read_update_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * static_cast<size_t>(out.height));
  rows.resize(static_cast<size_t>(out.height));
  for (int y = 0; y < out.height; ++y)
    rows[static_cast<size_t>(y)] = buffer.data() + rowbytes * static_cast<size_t>(y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const size_t n = static_cast<size_t>(out.width) * out.height * out.channels;
  out.samples.resize(n);
  if (out.bit_depth == 16)
  {
    for (size_t i = 0; i < n; ++i)
      out.samples[i] = static_cast<uint16_t>(buffer[2 * i] | (buffer[2 * i + 1] << 8));
  }
  else
  {
    for (size_t i = 0; i < n; ++i)
      out.samples[i] = buffer[i];
  }
  return out;
}

/// Writes 8- or 16-bit PNG with 1 (gray) or 3 (RGB) channels.
inline void write(const std::filesystem::path &path, int width, int height, int channels, int bit_depth,
                  const std::vector<uint16_t> &samples)
{
  if ((channels != 1 && channels != 3) || (bit_depth != 8 && bit_depth != 16))
    throw usage_error("png::write: unsupported layout");
  if (samples.size() != static_cast<size_t>(width) * height * channels)
    throw usage_error("png::write: sample count mismatch");
  auto file = detail::open(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info)
  {
    png_destroy_write_struct(&png, &info);
    throw data_error("libpng initialization failed");
  }
  const size_t bps = bit_depth / 8;
  const size_t rowbytes = static_cast<size_t>(width) * channels * bps;
  std::vector<png_byte> buffer(rowbytes * static_cast<size_t>(height));
  for (size_t i = 0; i < samples.size(); ++i)
  {
    if (bit_depth == 16)
    {
      buffer[2 * i] = static_cast<png_byte>(samples[i] >> 8); // PNG is big-endian
      buffer[2 * i + 1] = static_cast<png_byte>(samples[i] & 0xff);
    }
    else
    {
      buffer[i] = static_cast<png_byte>(samples[i]);
    }
  }
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[static_cast<size_t>(y)] = buffer.data() + rowbytes * static_cast<size_t>(y);

  if (setjmp(png_jmpbuf(png)))
  {
    png_destroy_write_struct(&png, &info);
    throw data_error("failed writing PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Fixed header content keeps output byte-identical across runs.
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

} // namespace dynslam::png
