#include "sunet/image_io.hpp"

#include <png.h>

#include <array>
#include <cerrno>
#include <csetjmp>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

namespace sunet {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) {
    throw IoError(std::string("cannot open ") + path.string() + ": " +
                  std::strerror(errno));
  }
  return f;
}

struct PngErrorContext {
  std::jmp_buf jump;
  char message[256];
};

[[noreturn]] void png_error_handler(png_structp png, png_const_charp msg) {
  auto* ctx = static_cast<PngErrorContext*>(png_get_error_ptr(png));
  std::snprintf(ctx->message, sizeof(ctx->message), "%s", msg);
  std::longjmp(ctx->jump, 1);
}
void png_warning_handler(png_structp, png_const_charp) {}

// libpng reports errors by longjmp, so the functions below keep only trivially
// destructible locals between setjmp and the last libpng call.
bool write_rows(std::FILE* f, int h, int w, int color_type, const png_byte* bytes,
                PngErrorContext& ctx) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &ctx,
                                            png_error_handler, png_warning_handler);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(ctx.jump)) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y) {
    png_write_row(png, bytes + static_cast<std::size_t>(y) * w * channels);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

void write_png_bytes(const std::filesystem::path& path, int h, int w,
                     int color_type, const std::vector<png_byte>& bytes) {
  FilePtr f = open_file(path, "wb");
  PngErrorContext ctx{};
  std::snprintf(ctx.message, sizeof(ctx.message), "libpng initialization failed");
  if (!write_rows(f.get(), h, w, color_type, bytes.data(), ctx)) {
    throw IoError("writing " + path.string() + ": " + ctx.message);
  }
}

struct PngHeader {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::size_t stride = 0;
};

// Two passes: read_header stops after png_read_update_info so the caller can
// size the buffer, then read_rows decodes into it.
bool read_header(std::FILE* f, png_structp& png, png_infop& info, PngHeader& hdr,
                 PngErrorContext& ctx) {
  png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &ctx, png_error_handler,
                               png_warning_handler);
  if (!png) return false;
  info = png_create_info_struct(png);
  if (!info || setjmp(ctx.jump)) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, f);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  hdr.height = static_cast<int>(png_get_image_height(png, info));
  hdr.width = static_cast<int>(png_get_image_width(png, info));
  hdr.channels = png_get_channels(png, info);
  hdr.stride = png_get_rowbytes(png, info);
  return true;
}

bool read_rows(png_structp png, png_infop info, const PngHeader& hdr, png_byte* out,
               PngErrorContext& ctx) {
  if (setjmp(ctx.jump)) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  for (int y = 0; y < hdr.height; ++y) png_read_row(png, out + hdr.stride * y, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

std::vector<png_byte> read_png_bytes(const std::filesystem::path& path, int& h,
                                     int& w, int& channels) {
  FilePtr f = open_file(path, "rb");
  std::array<png_byte, 8> sig{};
  if (std::fread(sig.data(), 1, sig.size(), f.get()) != sig.size() ||
      png_sig_cmp(sig.data(), 0, sig.size()) != 0) {
    throw IoError("not a PNG file: " + path.string());
  }
  PngErrorContext ctx{};
  std::snprintf(ctx.message, sizeof(ctx.message), "libpng initialization failed");
  png_structp png = nullptr;
  png_infop info = nullptr;
  PngHeader hdr;
  if (!read_header(f.get(), png, info, hdr, ctx)) {
    throw IoError("reading " + path.string() + ": " + ctx.message);
  }
  std::vector<png_byte> bytes(hdr.stride * hdr.height);
  if (!read_rows(png, info, hdr, bytes.data(), ctx)) {
    throw IoError("reading " + path.string() + ": " + ctx.message);
  }
  h = hdr.height;
  w = hdr.width;
  channels = hdr.channels;
  return bytes;
}

png_byte to_byte(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<png_byte>(static_cast<int>(c * 255.0f + 0.5f));
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels() != 3) {
    throw std::invalid_argument("write_png expects 3 channels, got " +
                                std::to_string(img.channels()));
  }
  std::vector<png_byte> bytes(img.size());
  const auto src = img.data();
  for (std::size_t i = 0; i < src.size(); ++i) bytes[i] = to_byte(src[i]);
  write_png_bytes(path, img.height(), img.width(), PNG_COLOR_TYPE_RGB, bytes);
}

Image read_png(const std::filesystem::path& path) {
  int h = 0, w = 0, channels = 0;
  const auto bytes = read_png_bytes(path, h, w, channels);
  Image img(h, w, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src_c = channels == 1 ? 0 : c;
        img.at(y, x, c) =
            static_cast<float>(bytes[(static_cast<std::size_t>(y) * w + x) * channels + src_c]) /
            255.0f;
      }
    }
  }
  return img;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  std::vector<png_byte> bytes(mask.size());
  const auto src = mask.data();
  for (std::size_t i = 0; i < src.size(); ++i) bytes[i] = src[i] ? 255 : 0;
  write_png_bytes(path, mask.height(), mask.width(), PNG_COLOR_TYPE_GRAY, bytes);
}

Mask read_mask_png(const std::filesystem::path& path) {
  int h = 0, w = 0, channels = 0;
  const auto bytes = read_png_bytes(path, h, w, channels);
  Mask mask(h, w, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const png_byte v = bytes[(static_cast<std::size_t>(y) * w + x) * channels];
      if (v != 0 && v != 255) {
        throw IoError("mask " + path.string() + " has non-binary value " +
                      std::to_string(v) + " at (" + std::to_string(x) + ", " +
                      std::to_string(y) + ")");
      }
      mask.at(y, x) = v ? 1 : 0;
    }
  }
  return mask;
}

namespace {

constexpr std::array<char, 4> kFlowMagic{'R', 'S', 'F', 'L'};

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<unsigned char, 4> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                 static_cast<unsigned char>(v >> 16),
                                 static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b.data()), b.size());
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), b.size());
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_flow(const std::filesystem::path& path, const FlowField& flow) {
  if (flow.channels() != 2) throw std::invalid_argument("flow must have 2 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kFlowMagic.data(), kFlowMagic.size());
  put_u32(out, static_cast<std::uint32_t>(flow.height()));
  put_u32(out, static_cast<std::uint32_t>(flow.width()));
  for (float v : flow.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw IoError("short write to " + path.string());
}

FlowField read_flow(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kFlowMagic) throw IoError("bad flow magic in " + path.string());
  const std::uint32_t h = get_u32(in);
  const std::uint32_t w = get_u32(in);
  if (!in || h == 0 || w == 0 || h > (1u << 16) || w > (1u << 16)) {
    throw IoError("bad flow header in " + path.string());
  }
  FlowField flow(static_cast<int>(h), static_cast<int>(w), 2);
  for (float& v : flow.data()) v = std::bit_cast<float>(get_u32(in));
  if (!in) throw IoError("truncated flow payload in " + path.string());
  if (in.peek() != std::char_traits<char>::eof()) {
    throw IoError("trailing bytes after flow payload in " + path.string());
  }
  for (float v : flow.data()) {
    if (!std::isfinite(v)) throw IoError("non-finite flow value in " + path.string());
  }
  return flow;
}

}  // namespace sunet
