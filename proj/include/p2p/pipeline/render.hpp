#pragma once

// Trainable-parameter accounting and PNG rendering of projected images.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "p2p/autodiff/tensor.hpp"
#include "p2p/coloring/coloring.hpp"
#include "p2p/errors.hpp"
#include "p2p/geometry/point_cloud.hpp"
#include "p2p/nn/params.hpp"
#include "p2p/pipeline/model.hpp"
#include "p2p/projection/rotation.hpp"

namespace p2p::pipeline {

struct ParamCount {
  std::size_t total = 0;      // all scalars in the model
  std::size_t trainable = 0;  // scalars trained under the policy
  std::map<nn::TuningClass, std::size_t> trainable_by_class;
  std::map<nn::TuningClass, std::size_t> total_by_class;

  std::size_t backbone_trainable() const {
    std::size_t n = 0;
    for (auto c : {nn::TuningClass::norm, nn::TuningClass::bias, nn::TuningClass::backbone_other})
      if (auto it = trainable_by_class.find(c); it != trainable_by_class.end()) n += it->second;
    return n;
  }
};

inline ParamCount count_trainable(const nn::LayerParams& params, nn::TuningPolicy policy) {
  ParamCount out;
  for (auto c : nn::kTuningClasses) out.trainable_by_class[c] = 0, out.total_by_class[c] = 0;
  for (const auto& [name, p] : params) {
    const auto n = p.tensor.numel();
    out.total += n;
    out.total_by_class[p.cls] += n;
    if (nn::is_trainable(policy, p.cls)) {
      out.trainable += n;
      out.trainable_by_class[p.cls] += n;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNG

/// Writes 8-bit pixels, `channels` = 1 (gray) or 3 (RGB), row-major.
inline void write_png(const std::string& path, std::size_t height, std::size_t width, std::size_t channels,
                      const std::vector<std::uint8_t>& pixels) {
  if (channels != 1 && channels != 3) throw ContractError("write_png: channels must be 1 or 3");
  if (pixels.size() != height * width * channels) throw ContractError("write_png: pixel buffer size mismatch");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot write '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng failed writing '" + path + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + y * width * channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw IoError("write failed for '" + path + "'");
}

struct PngImage {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Reads an 8-bit gray or RGB PNG (used to check rendered output).
inline PngImage read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open '" + path + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw FormatError("'" + path + "' is not a readable PNG");
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  PngImage img;
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  const auto type = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) != 8 || (type != PNG_COLOR_TYPE_RGB && type != PNG_COLOR_TYPE_GRAY)) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw FormatError("'" + path + "' is not an 8-bit gray/RGB PNG");
  }
  img.channels = type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  img.pixels.resize(img.height * img.width * img.channels);
  for (std::size_t y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + y * img.width * img.channels, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::string view_tag(const projection::ViewAngles& v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f_%.3f", v.theta, v.phi);
  return buf;
}

/// Renders one RGB PNG per view ({sample}_{theta}_{phi}.png) plus an
/// occupancy mask ({sample}_{theta}_{phi}_occupancy.png). Returns the RGB paths.
inline std::vector<std::string> render_views(const geometry::PointCloud& pc, const Model& m,
                                             const std::vector<projection::ViewAngles>& views,
                                             const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) throw IoError("cannot create output directory '" + out_dir + "'");
  std::string stem = pc.id.empty() ? "sample" : pc.id;
  for (auto& ch : stem)
    if (ch == '/' || ch == '\\' || ch == ':' || ch == ' ') ch = '_';
  ad::NoGradGuard no_grad;
  auto feats = geometry::encode(pc, m.params, m.encoder);
  std::vector<std::string> written;
  const auto s = m.image_size();
  for (const auto& v : views) {
    const auto fimg = projection::project(feats, pc.coords, v, s, s, m.margin);
    // The coloring output is already in [0, 1]; normalizing for the backbone
    // and denormalizing again would be the identity.
    const auto img = coloring::colorize(fimg, m.params);
    std::vector<std::uint8_t> rgb;
    rgb.reserve(s * s * 3);
    for (double x : img.rgb.data()) rgb.push_back(to_byte(x));
    const auto base = (fs::path(out_dir) / (stem + "_" + view_tag(v))).string();
    write_png(base + ".png", s, s, 3, rgb);
    std::vector<std::uint8_t> occ(s * s, 0);
    for (auto p : fimg.binning.occupied) occ[p] = 255;
    write_png(base + "_occupancy.png", s, s, 1, occ);
    written.push_back(base + ".png");
  }
  return written;
}

}  // namespace p2p::pipeline
