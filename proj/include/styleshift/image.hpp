#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <vector>

#include <png.h>

#include "styleshift/errors.hpp"
#include "styleshift/tensor.hpp"

// Images are Tensor<T> in CHW layout with 3 channels and values in [-1, 1].
// The 8-bit [0, 255] representation exists only at file boundaries.
namespace styleshift {

template <typename T>
inline std::uint8_t value_to_byte(T v) {
  double x = (static_cast<double>(v) + 1.0) * 127.5;
  long r = std::lround(x);
  return static_cast<std::uint8_t>(std::clamp(r, 0L, 255L));
}

template <typename T>
inline T byte_to_value(std::uint8_t b) {
  return static_cast<T>(static_cast<double>(b) / 127.5 - 1.0);
}

template <typename T>
std::vector<std::uint8_t> image_to_rgb8(const Tensor<T>& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw InputError("image must be [3,H,W]");
  const int H = img.dim(1), W = img.dim(2);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(H) * W * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        out[(static_cast<std::size_t>(y) * W + x) * 3 + c] = value_to_byte(img.at(c, y, x));
  return out;
}

template <typename T>
Tensor<T> image_from_rgb8(const std::vector<std::uint8_t>& rgb, int H, int W) {
  if (rgb.size() != static_cast<std::size_t>(H) * W * 3)
    throw InputError("rgb8 buffer size mismatch");
  Tensor<T> img({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = byte_to_value<T>(rgb[(static_cast<std::size_t>(y) * W + x) * 3 + c]);
  return img;
}

// loadPNG/savePNG keep the encoder settings fixed so identical pixels produce
// byte-identical files.
inline void write_png_rgb8(const std::filesystem::path& path,
                           const std::vector<std::uint8_t>& rgb, int H, int W) {
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw PersistenceError("cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw PersistenceError("png write failed: " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(H));
  for (int y = 0; y < H; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * W * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline std::vector<std::uint8_t> read_png_rgb8(const std::filesystem::path& path, int& H,
                                               int& W) {
  std::FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw InputError("cannot open image: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    throw InputError("png read failed: " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_expand(png);       // palettes / low bit depth / tRNS -> 8-bit
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  H = static_cast<int>(png_get_image_height(png, info));
  W = static_cast<int>(png_get_image_width(png, info));
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw InputError("unsupported png channel layout: " + path.string());
  }
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(H) * W * 3);
  std::vector<png_bytep> rows(static_cast<std::size_t>(H));
  for (int y = 0; y < H; ++y)
    rows[static_cast<std::size_t>(y)] = rgb.data() + static_cast<std::size_t>(y) * W * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return rgb;
}

template <typename T>
void save_image_png(const std::filesystem::path& path, const Tensor<T>& img) {
  write_png_rgb8(path, image_to_rgb8(img), img.dim(1), img.dim(2));
}

template <typename T>
Tensor<T> load_image_png(const std::filesystem::path& path) {
  int H = 0, W = 0;
  auto rgb = read_png_rgb8(path, H, W);
  return image_from_rgb8<T>(rgb, H, W);
}

// Bilinear resample of an axis-aligned source rectangle (continuous pixel
// coordinates, pixel centers at j + 0.5) onto an out_h x out_w grid. When the
// rect is the full frame and sizes match, this is the identity.
template <typename T>
Tensor<T> bilinear_resample(const Tensor<T>& src, double x0, double y0, double x1,
                            double y1, int out_h, int out_w) {
  if (src.rank() != 3) throw InputError("bilinear_resample expects [C,H,W]");
  const int C = src.dim(0), H = src.dim(1), W = src.dim(2);
  if (!(x1 > x0) || !(y1 > y0)) throw InputError("bilinear_resample: degenerate rect");
  Tensor<T> out({C, out_h, out_w});
  for (int oy = 0; oy < out_h; ++oy) {
    const double sy = y0 + (y1 - y0) * (oy + 0.5) / out_h - 0.5;
    const double fy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
    const int iy0 = static_cast<int>(std::floor(fy));
    const int iy1 = std::min(iy0 + 1, H - 1);
    const double wy = fy - iy0;
    for (int ox = 0; ox < out_w; ++ox) {
      const double sx = x0 + (x1 - x0) * (ox + 0.5) / out_w - 0.5;
      const double fx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
      const int ix0 = static_cast<int>(std::floor(fx));
      const int ix1 = std::min(ix0 + 1, W - 1);
      const double wx = fx - ix0;
      for (int c = 0; c < C; ++c) {
        const double v00 = src.at(c, iy0, ix0), v01 = src.at(c, iy0, ix1);
        const double v10 = src.at(c, iy1, ix0), v11 = src.at(c, iy1, ix1);
        out.at(c, oy, ox) = static_cast<T>((1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                           wy * ((1 - wx) * v10 + wx * v11));
      }
    }
  }
  return out;
}

// Crop rectangle in pixels: (x, y, width, height).
struct CropBox {
  double x = 0, y = 0, w = 0, h = 0;
};

struct IngestSpec {
  std::filesystem::path source;
  std::optional<CropBox> box;  // empty = full frame
  double crop_scale = 1.3;     // crop this much larger than the box
  int output_resolution = 32;
};

// Scales the box about its center, clamps to image bounds, returns corner
// coordinates (x0, y0, x1, y1).
inline std::array<double, 4> scaled_crop_rect(const CropBox& box, double scale, int img_w,
                                              int img_h) {
  if (scale < 1.0) throw InputError("crop scale must be >= 1");
  if (box.w <= 0 || box.h <= 0) throw InputError("degenerate crop box");
  const double cx = box.x + box.w / 2.0, cy = box.y + box.h / 2.0;
  const double hw = box.w * scale / 2.0, hh = box.h * scale / 2.0;
  double x0 = std::clamp(cx - hw, 0.0, static_cast<double>(img_w));
  double x1 = std::clamp(cx + hw, 0.0, static_cast<double>(img_w));
  double y0 = std::clamp(cy - hh, 0.0, static_cast<double>(img_h));
  double y1 = std::clamp(cy + hh, 0.0, static_cast<double>(img_h));
  if (!(x1 > x0) || !(y1 > y0)) throw InputError("crop box empty after clamping");
  return {x0, y0, x1, y1};
}

// Crop + resize core of the ingest step, separated from file I/O for testing.
template <typename T>
Tensor<T> ingest_image(const Tensor<T>& src, const std::optional<CropBox>& box,
                       double crop_scale, int resolution) {
  const int H = src.dim(1), W = src.dim(2);
  std::array<double, 4> rect = box ? scaled_crop_rect(*box, crop_scale, W, H)
                                   : std::array<double, 4>{0, 0, static_cast<double>(W),
                                                           static_cast<double>(H)};
  return bilinear_resample(src, rect[0], rect[1], rect[2], rect[3], resolution, resolution);
}

template <typename T>
Tensor<T> ingest(const IngestSpec& spec) {
  Tensor<T> src = load_image_png<T>(spec.source);
  return ingest_image(src, spec.box, spec.crop_scale, spec.output_resolution);
}

}  // namespace styleshift
