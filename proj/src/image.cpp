#include "exposome/image.hpp"

#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <cstring>

#include <jpeglib.h>
#include <png.h>

#include "exposome/errors.hpp"

namespace exposome::llm {

namespace {

bool looks_png(const std::string& b) {
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return b.size() >= 8 && std::memcmp(b.data(), sig, 8) == 0;
}

bool looks_jpeg(const std::string& b) {
  return b.size() >= 3 && static_cast<unsigned char>(b[0]) == 0xFF &&
         static_cast<unsigned char>(b[1]) == 0xD8 &&
         static_cast<unsigned char>(b[2]) == 0xFF;
}

struct Rgb {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // 3 bytes per pixel, row-major
};

Rgb decode_png(const std::string& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw ConfigError(std::string("png decode: ") + image.message);
  image.format = PNG_FORMAT_RGB;
  Rgb out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ConfigError(std::string("png decode: ") + image.message);
  }
  return out;
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Rgb decode_jpeg(const std::string& bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr jerr;
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ConfigError(std::string("jpeg decode: ") + jerr.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()),
               bytes.size());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  Rgb out;
  out.width = static_cast<int>(cinfo.output_width);
  out.height = static_cast<int>(cinfo.output_height);
  out.pixels.resize(static_cast<size_t>(out.width) * out.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row =
        out.pixels.data() + static_cast<size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

// Simple box filter; adequate for bounding request payloads.
Rgb box_downscale(const Rgb& src, int new_w, int new_h) {
  Rgb dst;
  dst.width = new_w;
  dst.height = new_h;
  dst.pixels.resize(static_cast<size_t>(new_w) * new_h * 3);
  for (int y = 0; y < new_h; ++y) {
    const int y0 = static_cast<int>(static_cast<long>(y) * src.height / new_h);
    int y1 = static_cast<int>(static_cast<long>(y + 1) * src.height / new_h);
    if (y1 <= y0) y1 = y0 + 1;
    for (int x = 0; x < new_w; ++x) {
      const int x0 = static_cast<int>(static_cast<long>(x) * src.width / new_w);
      int x1 = static_cast<int>(static_cast<long>(x + 1) * src.width / new_w);
      if (x1 <= x0) x1 = x0 + 1;
      long acc[3] = {0, 0, 0};
      long count = 0;
      for (int sy = y0; sy < y1; ++sy)
        for (int sx = x0; sx < x1; ++sx) {
          const size_t off = (static_cast<size_t>(sy) * src.width + sx) * 3;
          acc[0] += src.pixels[off];
          acc[1] += src.pixels[off + 1];
          acc[2] += src.pixels[off + 2];
          ++count;
        }
      const size_t off = (static_cast<size_t>(y) * new_w + x) * 3;
      for (int c = 0; c < 3; ++c)
        dst.pixels[off + c] = static_cast<std::uint8_t>(acc[c] / count);
    }
  }
  return dst;
}

}  // namespace

ImageInfo probe_image(const std::string& bytes) {
  ImageInfo info;
  if (looks_png(bytes)) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
      throw ConfigError(std::string("png probe: ") + image.message);
    info.width = static_cast<int>(image.width);
    info.height = static_cast<int>(image.height);
    info.media_type = "image/png";
    png_image_free(&image);
    return info;
  }
  if (looks_jpeg(bytes)) {
    const Rgb rgb = decode_jpeg(bytes);
    info.width = rgb.width;
    info.height = rgb.height;
    info.media_type = "image/jpeg";
    return info;
  }
  throw ConfigError("unsupported image format (expect PNG or JPEG)");
}

std::string downscale_to_max_edge(const std::string& bytes, int max_edge) {
  if (max_edge <= 0) throw ConfigError("downscale: max_edge must be > 0");
  const bool png = looks_png(bytes);
  if (!png && !looks_jpeg(bytes))
    throw ConfigError("unsupported image format (expect PNG or JPEG)");
  const Rgb src = png ? decode_png(bytes) : decode_jpeg(bytes);
  const int longest = std::max(src.width, src.height);
  if (longest <= max_edge) return bytes;
  const double scale = static_cast<double>(max_edge) / longest;
  const int new_w = std::max(1, static_cast<int>(src.width * scale + 0.5));
  const int new_h = std::max(1, static_cast<int>(src.height * scale + 0.5));
  const Rgb small = box_downscale(src, new_w, new_h);
  return png ? encode_png_rgb(small.width, small.height, small.pixels)
             : encode_jpeg_rgb(small.width, small.height, small.pixels);
}

std::string encode_png_rgb(int width, int height,
                           const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<size_t>(width) * height * 3)
    throw ConfigError("png encode: pixel buffer size mismatch");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, rgb.data(), 0,
                                 nullptr))
    throw ConfigError(std::string("png encode: ") + image.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, rgb.data(), 0,
                                 nullptr))
    throw ConfigError(std::string("png encode: ") + image.message);
  out.resize(size);
  return out;
}

std::string encode_jpeg_rgb(int width, int height,
                            const std::vector<std::uint8_t>& rgb,
                            int quality) {
  if (rgb.size() != static_cast<size_t>(width) * height * 3)
    throw ConfigError("jpeg encode: pixel buffer size mismatch");
  jpeg_compress_struct cinfo;
  JpegErrorMgr jerr;
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_compress(&cinfo);
    if (buffer) std::free(buffer);
    throw ConfigError(std::string("jpeg encode: ") + jerr.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(width);
  cinfo.image_height = static_cast<JDIMENSION>(height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  std::vector<std::uint8_t> row_copy(static_cast<size_t>(width) * 3);
  while (cinfo.next_scanline < cinfo.image_height) {
    std::memcpy(row_copy.data(),
                rgb.data() + static_cast<size_t>(cinfo.next_scanline) * width * 3,
                row_copy.size());
    JSAMPROW row = row_copy.data();
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::string out(reinterpret_cast<char*>(buffer), size);
  std::free(buffer);
  return out;
}

namespace {
const char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  while (i + 3 <= bytes.size()) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back(kB64Alphabet[v & 63]);
    i += 3;
  }
  const size_t rem = bytes.size() - i;
  if (rem == 1) {
    const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out += "==";
  } else if (rem == 2) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  static int lut[256];
  static bool init = false;
  if (!init) {
    for (int& v : lut) v = -1;
    for (int i = 0; i < 64; ++i)
      lut[static_cast<unsigned char>(kB64Alphabet[i])] = i;
    init = true;
  }
  std::string out;
  out.reserve(text.size() / 4 * 3);
  int acc = 0, bits = 0;
  for (char c : text) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = lut[static_cast<unsigned char>(c)];
    if (v < 0) throw ConfigError("base64: invalid character");
    acc = (acc << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xFF));
    }
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

std::string fnv1a64_hex(std::string_view bytes) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

}  // namespace exposome::llm
