#include "ncf/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

namespace ncf::io {

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::Io, "cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::string& header, const std::vector<std::uint8_t>& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::Io, "cannot write " + path.string());
  }
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!out) {
    throw Error(ErrorCode::Io, "short write to " + path.string());
  }
}

bool is_png(const std::vector<std::uint8_t>& bytes) {
  static constexpr std::array<std::uint8_t, 8> kMagic{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return bytes.size() >= kMagic.size() && std::equal(kMagic.begin(), kMagic.end(), bytes.begin());
}

struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;
};

RawImage decode_png(const std::vector<std::uint8_t>& bytes, int channels, const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()) == 0) {
    throw Error(ErrorCode::Format, path.string() + ": " + image.message);
  }
  if (channels == 1 && (image.format & PNG_FORMAT_FLAG_COLOR) != 0) {
    png_image_free(&image);
    throw Error(ErrorCode::Format, path.string() + ": mask PNG must be grayscale");
  }
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  RawImage raw;
  raw.width = static_cast<int>(image.width);
  raw.height = static_cast<int>(image.height);
  raw.channels = channels;
  raw.data.resize(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, raw.data.data(), 0, nullptr) == 0) {
    throw Error(ErrorCode::Format, path.string() + ": " + image.message);
  }
  return raw;
}

// Binary netpbm (P5/P6) with maxval 255.
RawImage decode_pnm(const std::vector<std::uint8_t>& bytes, char expected, const std::filesystem::path& path) {
  std::size_t pos = 0;
  auto skip_space_and_comments = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos]) != 0) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space_and_comments();
    long v = 0;
    bool any = false;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      any = true;
      ++pos;
      if (v > 1 << 20) break;
    }
    if (!any) throw Error(ErrorCode::Format, path.string() + ": malformed netpbm header");
    return static_cast<int>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != static_cast<std::uint8_t>(expected)) {
    throw Error(ErrorCode::Format, path.string() + ": expected P" + std::string(1, expected) + " file");
  }
  pos = 2;
  RawImage raw;
  raw.width = read_int();
  raw.height = read_int();
  const int maxval = read_int();
  if (maxval != 255 || raw.width < 1 || raw.height < 1) {
    throw Error(ErrorCode::Format, path.string() + ": only 8-bit netpbm is supported");
  }
  ++pos;  // single whitespace after maxval
  raw.channels = expected == '6' ? 3 : 1;
  const std::size_t n = static_cast<std::size_t>(raw.width) * raw.height * raw.channels;
  if (bytes.size() < pos + n) {
    throw Error(ErrorCode::Format, path.string() + ": truncated pixel data");
  }
  raw.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return raw;
}

std::vector<std::uint8_t> to_rgb8(const RgbImage& img) {
  std::vector<std::uint8_t> out(img.size() * 3);
  for (std::size_t i = 0; i < img.size(); ++i) {
    for (int c = 0; c < 3; ++c) out[3 * i + c] = to_u8(img.pixels[i][c]);
  }
  return out;
}

}  // namespace

std::uint8_t to_u8(double v) noexcept {
  const double scaled = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

RgbImage read_image(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  const RawImage raw = is_png(bytes) ? decode_png(bytes, 3, path) : decode_pnm(bytes, '6', path);
  RgbImage img(raw.width, raw.height);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img.pixels[i] = Vec3(raw.data[3 * i], raw.data[3 * i + 1], raw.data[3 * i + 2]) / 255.0;
  }
  return img;
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  const auto data = to_rgb8(img);
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (png_image_write_to_file(&image, path.string().c_str(), 0, data.data(), 0, nullptr) == 0) {
    throw Error(ErrorCode::Io, path.string() + ": " + image.message);
  }
}

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  std::ostringstream header;
  header << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  write_bytes(path, header.str(), to_rgb8(img));
}

SegmentationMask read_mask(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  const RawImage raw = is_png(bytes) ? decode_png(bytes, 1, path) : decode_pnm(bytes, '5', path);
  SegmentationMask mask(raw.width, raw.height);
  std::copy(raw.data.begin(), raw.data.end(), mask.labels.begin());
  return mask;
}

void write_pgm(const std::filesystem::path& path, const SegmentationMask& mask) {
  std::vector<std::uint8_t> body(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.labels[i] < 0 || mask.labels[i] > 255) {
      throw Error(ErrorCode::InvalidArgument, "mask class ids must fit in 8 bits");
    }
    body[i] = static_cast<std::uint8_t>(mask.labels[i]);
  }
  std::ostringstream header;
  header << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  write_bytes(path, header.str(), body);
}

RgbImage quantize8(const RgbImage& img) {
  RgbImage out = img;
  for (auto& p : out.pixels) {
    for (int c = 0; c < 3; ++c) p[c] = to_u8(p[c]) / 255.0;
  }
  return out;
}

}  // namespace ncf::io
