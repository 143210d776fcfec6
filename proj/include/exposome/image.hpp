#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace exposome::llm {

struct ImageInfo {
  int width = 0;
  int height = 0;
  std::string media_type;  // "image/png" or "image/jpeg"
};

// Sniffs the container from magic bytes and decodes the header; throws
// ConfigError for anything that is not PNG or JPEG.
ImageInfo probe_image(const std::string& bytes);

// Returns the input unchanged when its longest edge is within max_edge;
// otherwise decodes, box-filters down, and re-encodes in the same container.
std::string downscale_to_max_edge(const std::string& bytes, int max_edge);

// RGB8 encode helpers; used by the simulator to emit fixture photographs.
std::string encode_png_rgb(int width, int height,
                           const std::vector<std::uint8_t>& rgb);
std::string encode_jpeg_rgb(int width, int height,
                            const std::vector<std::uint8_t>& rgb,
                            int quality = 85);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);  // throws ConfigError

std::uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a64_hex(std::string_view bytes);

}  // namespace exposome::llm
