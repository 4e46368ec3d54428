#include "spats/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace spats {

uint8_t quantize8(float v) {
  float s = 255.f * v;
  float r = s >= 0.f ? std::floor(s + 0.5f) : std::ceil(s - 0.5f);
  if (r < 0.f) r = 0.f;
  if (r > 255.f) r = 255.f;
  return uint8_t(r);
}

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

Image read_png(const std::string& path) {
  FilePtr fp(fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("failed to decode PNG " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const int w = int(png_get_image_width(png, info));
  const int h = int(png_get_image_height(png, info));
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = int(png_get_channels(png, info));
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unsupported channel count in " + path);
  }

  Image img(h, w, channels);
  std::vector<uint8_t> row(size_t(w) * channels);
  for (int i = 0; i < h; ++i) {
    png_read_row(png, row.data(), nullptr);
    for (size_t k = 0; k < row.size(); ++k)
      img.v[size_t(i) * w * channels + k] = float(row[k]) / 255.f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::string& path, const Image& img) {
  if (img.c != 1 && img.c != 3)
    throw DataError("write_png expects 1 or 3 channels");
  FilePtr fp(fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot write " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed to encode PNG " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.w, img.h, 8,
               img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<uint8_t> row(size_t(img.w) * img.c);
  for (int i = 0; i < img.h; ++i) {
    for (size_t k = 0; k < row.size(); ++k)
      row[k] = quantize8(img.v[size_t(i) * img.w * img.c + k]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_npy(const std::string& path, const Image& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (" +
                     std::to_string(img.h) + ", " + std::to_string(img.w) +
                     ", " + std::to_string(img.c) + "), }";
  size_t header = 10 + dict.size() + 1;
  size_t pad = (64 - header % 64) % 64;
  dict += std::string(pad, ' ');
  dict += '\n';
  uint16_t hlen = uint16_t(dict.size());
  f.write("\x93NUMPY\x01\x00", 8);
  f.write(reinterpret_cast<const char*>(&hlen), 2);
  f.write(dict.data(), std::streamsize(dict.size()));
  f.write(reinterpret_cast<const char*>(img.v.data()),
          std::streamsize(img.v.size() * sizeof(float)));
}

Image read_npy(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, "\x93NUMPY", 6) != 0)
    throw DataError("not an NPY file: " + path);
  uint16_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 2);
  std::string dict(hlen, '\0');
  f.read(dict.data(), hlen);
  if (dict.find("'<f4'") == std::string::npos ||
      dict.find("False") == std::string::npos)
    throw DataError("unsupported NPY dtype/order in " + path);
  auto lp = dict.find('(');
  auto rp = dict.find(')');
  if (lp == std::string::npos || rp == std::string::npos)
    throw DataError("bad NPY shape in " + path);
  int dims[3] = {1, 1, 1};
  int nd = 0;
  std::string shape = dict.substr(lp + 1, rp - lp - 1);
  for (size_t pos = 0; pos < shape.size() && nd < 3;) {
    size_t next = shape.find(',', pos);
    std::string tok = shape.substr(pos, next == std::string::npos
                                            ? std::string::npos
                                            : next - pos);
    if (tok.find_first_not_of(" \t") != std::string::npos)
      dims[nd++] = std::stoi(tok);
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  if (nd < 2) throw DataError("bad NPY rank in " + path);
  Image img(dims[0], dims[1], nd == 3 ? dims[2] : 1);
  f.read(reinterpret_cast<char*>(img.v.data()),
         std::streamsize(img.v.size() * sizeof(float)));
  if (!f) throw DataError("truncated NPY payload in " + path);
  return img;
}

}  // namespace spats
