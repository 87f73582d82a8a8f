#include "dsrei/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

#include "dsrei/error.hpp"

namespace dsrei {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct RawPng {
  std::uint32_t width = 0, height = 0;
  int channels = 0, bit_depth = 0;
  std::vector<std::uint8_t> bytes;  // rows packed, 16-bit samples big-endian
};

enum class PngWant { kGray16, kRgb8 };

std::string ends_lower(const std::string& path, std::size_t n) {
  if (path.size() < n) return {};
  std::string tail = path.substr(path.size() - n);
  std::transform(tail.begin(), tail.end(), tail.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return tail;
}

// All C++ objects live outside the setjmp region so longjmp skips no
// destructors.
bool read_png_impl(std::FILE* f, PngWant want, RawPng& out, std::string& err) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    err = "png_create_read_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    err = "png_create_info_struct failed";
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    err = "corrupt PNG data";
    return false;
  }
  png_init_io(png, f);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  const int bit_depth = png_get_bit_depth(png, info);

  if (want == PngWant::kGray16) {
    if (color_type != PNG_COLOR_TYPE_GRAY || bit_depth != 16) {
      png_destroy_read_struct(&png, &info, nullptr);
      err = "expected a 16-bit grayscale PNG";
      return false;
    }
  } else {
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
      png_set_gray_to_rgb(png);
    }
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  out.width = w;
  out.height = h;
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  out.bytes.resize(row_bytes * h);
  for (png_uint_32 y = 0; y < h; ++y) png_read_row(png, out.bytes.data() + y * row_bytes, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

RawPng read_png(const std::string& path, PngWant want) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError(path + ": not a PNG file");
  }
  std::rewind(f.get());
  RawPng raw;
  std::string err;
  if (!read_png_impl(f.get(), want, raw, err)) throw IoError(path + ": " + err);
  return raw;
}

bool write_png_impl(std::FILE* f, std::uint32_t w, std::uint32_t h, int color_type, int bit_depth,
                    const std::vector<std::uint8_t>& bytes, std::size_t row_bytes) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, w, h, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::uint32_t y = 0; y < h; ++y) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() + y * row_bytes));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

void write_png(const std::string& path, std::uint32_t w, std::uint32_t h, int color_type,
               int bit_depth, const std::vector<std::uint8_t>& bytes, std::size_t row_bytes) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot create " + path);
  if (!write_png_impl(f.get(), w, h, color_type, bit_depth, bytes, row_bytes)) {
    throw IoError("failed writing PNG " + path);
  }
  if (std::fflush(f.get()) != 0) throw IoError("failed writing PNG " + path);
}

void require_single_channel(const Image& img, const std::string& what) {
  if (img.c != 1) throw InvalidShape(what + ": expected a single-channel image");
}

}  // namespace

DepthMap load_depth(const std::string& path) {
  if (ends_lower(path, 4) == ".png") return load_depth_png16(path);
  if (ends_lower(path, 4) == ".pfm") return load_pfm(path);
  throw IoError(path + ": unknown depth format (expected .png or .pfm)");
}

DepthMap load_depth_png16(const std::string& path) {
  const RawPng raw = read_png(path, PngWant::kGray16);
  DepthMap out{Image(1, raw.height, raw.width), Image(1, raw.height, raw.width)};
  for (std::size_t i = 0; i < out.depth.data.size(); ++i) {
    const unsigned mm = (static_cast<unsigned>(raw.bytes[2 * i]) << 8) | raw.bytes[2 * i + 1];
    out.depth.data[i] = mm / 10.0;
    out.mask.data[i] = mm > 0 ? 1.0 : 0.0;
  }
  return out;
}

DepthMap load_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  std::int64_t w = 0, h = 0;
  double scale = 0;
  in >> magic >> w >> h >> scale;
  if (!in || magic != "Pf" || w < 1 || h < 1 || scale == 0) {
    throw IoError(path + ": not a single-channel PFM");
  }
  in.get();  // the single whitespace byte before the raster
  const bool little = scale < 0;
  std::vector<unsigned char> buf(static_cast<std::size_t>(w * h * 4));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw IoError(path + ": truncated PFM");

  DepthMap out{Image(1, h, w), Image(1, h, w)};
  for (std::int64_t row = 0; row < h; ++row) {
    const std::int64_t y = h - 1 - row;
    for (std::int64_t x = 0; x < w; ++x) {
      const unsigned char* p = &buf[static_cast<std::size_t>((row * w + x) * 4)];
      const std::uint32_t bits =
          little ? (std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
                    std::uint32_t(p[3]) << 24)
                 : (std::uint32_t(p[3]) | std::uint32_t(p[2]) << 8 | std::uint32_t(p[1]) << 16 |
                    std::uint32_t(p[0]) << 24);
      float meters;
      std::memcpy(&meters, &bits, 4);
      const bool valid = std::isfinite(meters) && meters > 0.0f;
      out.depth.at(0, y, x) = valid ? static_cast<double>(meters) * 100.0 : 0.0;
      out.mask.at(0, y, x) = valid ? 1.0 : 0.0;
    }
  }
  return out;
}

void save_depth_png16(const std::string& path, const Image& depth_cm) {
  require_single_channel(depth_cm, "save_depth_png16");
  std::vector<std::uint8_t> bytes(depth_cm.data.size() * 2);
  for (std::size_t i = 0; i < depth_cm.data.size(); ++i) {
    const double mm = std::isfinite(depth_cm.data[i]) ? std::round(depth_cm.data[i] * 10.0) : 0.0;
    const auto v = static_cast<std::uint16_t>(std::clamp(mm, 0.0, 65535.0));
    bytes[2 * i] = static_cast<std::uint8_t>(v >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(v & 0xff);
  }
  write_png(path, static_cast<std::uint32_t>(depth_cm.w), static_cast<std::uint32_t>(depth_cm.h),
            PNG_COLOR_TYPE_GRAY, 16, bytes, static_cast<std::size_t>(depth_cm.w) * 2);
}

void save_pfm(const std::string& path, const Image& depth_cm) {
  require_single_channel(depth_cm, "save_pfm");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create " + path);
  out << "Pf\n" << depth_cm.w << " " << depth_cm.h << "\n-1.0\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(depth_cm.w * 4));
  for (std::int64_t row = 0; row < depth_cm.h; ++row) {
    const std::int64_t y = depth_cm.h - 1 - row;
    for (std::int64_t x = 0; x < depth_cm.w; ++x) {
      const float meters = static_cast<float>(depth_cm.at(0, y, x) / 100.0);
      std::uint32_t bits;
      std::memcpy(&bits, &meters, 4);
      for (int b = 0; b < 4; ++b) buf[static_cast<std::size_t>(x * 4 + b)] = (bits >> (8 * b)) & 0xff;
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw IoError("failed writing " + path);
}

Image load_color(const std::string& path) {
  const RawPng raw = read_png(path, PngWant::kRgb8);
  if (raw.channels != 3 || raw.bit_depth != 8) throw IoError(path + ": unsupported PNG layout");
  Image img(3, raw.height, raw.width);
  for (std::int64_t y = 0; y < img.h; ++y) {
    for (std::int64_t x = 0; x < img.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(c, y, x) = raw.bytes[static_cast<std::size_t>((y * img.w + x) * 3 + c)] / 255.0;
      }
    }
  }
  return img;
}

void save_png8(const std::string& path, const Image& img) {
  if (img.c != 1 && img.c != 3) throw InvalidShape("save_png8: expected 1 or 3 channels");
  std::vector<std::uint8_t> bytes(img.data.size());
  for (std::int64_t y = 0; y < img.h; ++y) {
    for (std::int64_t x = 0; x < img.w; ++x) {
      for (std::int64_t c = 0; c < img.c; ++c) {
        const double v = std::isfinite(img.at(c, y, x)) ? img.at(c, y, x) : 0.0;
        bytes[static_cast<std::size_t>((y * img.w + x) * img.c + c)] =
            static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }
  write_png(path, static_cast<std::uint32_t>(img.w), static_cast<std::uint32_t>(img.h),
            img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, 8, bytes,
            static_cast<std::size_t>(img.w * img.c));
}

}  // namespace dsrei
