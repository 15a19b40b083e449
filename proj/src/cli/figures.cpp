#include "dmd/cli/figures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

namespace dmd::cli {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)); }

}  // namespace

void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.width <= 0 || img.height <= 0 || (img.channels != 1 && img.channels != 3)) {
    throw InvalidInput("write_png: empty image or unsupported channel count");
  }
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("cannot write '" + path.string() + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng failed writing '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  for (int r = 0; r < img.height; ++r) {
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + r * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str())) {
    throw FormatError("cannot read PNG '" + path.string() + "': " + pi.message);
  }
  const bool gray = (pi.format & PNG_FORMAT_FLAG_COLOR) == 0;
  pi.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image img(static_cast<int>(pi.width), static_cast<int>(pi.height), gray ? 1 : 3);
  if (!png_image_finish_read(&pi, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw FormatError("cannot decode PNG '" + path.string() + "'");
  }
  return img;
}

Image depth_panel(const DepthMap& d) {
  Image img(d.width, d.height, 1);
  for (std::size_t i = 0; i < d.size(); ++i) img.pixels[i] = quantize(d.values[i]);
  return img;
}

Image normal_panel(const DepthMap& d, double gain) {
  const NormalMap n = compute_normal_map(d, gain);
  Image img(d.width, d.height, 3);
  for (std::size_t i = 0; i < n.values.size(); ++i) img.pixels[i] = quantize((n.values[i] + 1.0) * 0.5 * 255.0);
  return img;
}

Image grid(const std::vector<Image>& panels, int rows, int cols) {
  if (panels.empty() || static_cast<int>(panels.size()) != rows * cols) throw InvalidInput("grid: panel count mismatch");
  const int w = panels[0].width, h = panels[0].height, c = panels[0].channels;
  Image out(w * cols, h * rows, c);
  for (int k = 0; k < rows * cols; ++k) {
    const Image& p = panels[static_cast<std::size_t>(k)];
    if (p.width != w || p.height != h || p.channels != c) throw InvalidInput("grid: panels differ in size");
    const int r0 = (k / cols) * h, c0 = (k % cols) * w;
    for (int r = 0; r < h; ++r) {
      std::copy_n(p.pixels.data() + static_cast<std::size_t>(r) * w * c, static_cast<std::size_t>(w) * c,
                  out.at(r0 + r, c0));
    }
  }
  return out;
}

}  // namespace dmd::cli
