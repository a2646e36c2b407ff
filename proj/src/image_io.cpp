#include "simsam/image_io.hpp"

#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <jpeglib.h>
#include <png.h>

namespace simsam::io {

Image::Image(ImageShape s, int c)
    : shape(s), channels(c), pixels(s.pixel_count() * static_cast<std::size_t>(c), 0) {
  shape.validate();
  if (c != 1 && c != 3) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("unsupported channel count {}", c));
  }
}

Image Image::to_gray() const {
  if (channels == 1) return *this;
  Image gray(shape, 1);
  for (std::size_t i = 0; i < shape.pixel_count(); ++i) {
    const std::uint8_t* px = &pixels[i * 3];
    const double y = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    gray.pixels[i] = static_cast<std::uint8_t>(std::min(255.0, y + 0.5));
  }
  return gray;
}

ImageFormat sniff_format(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngMagic, 8) == 0) {
    return ImageFormat::kPng;
  }
  if (bytes.size() >= 3 && bytes[0] == 0xff && bytes[1] == 0xd8 && bytes[2] == 0xff) {
    return ImageFormat::kJpeg;
  }
  return ImageFormat::kUnknown;
}

namespace {

struct PngImage {
  png_image img{};
  PngImage() {
    img.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&img); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

void begin_png(PngImage& png, std::span<const std::uint8_t> bytes) {
  if (!png_image_begin_read_from_memory(&png.img, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::kDecode, fmt::format("PNG header: {}", png.img.message));
  }
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Returns false on libjpeg failure, leaving the message in `err`. Nothing with
// a destructor lives between setjmp and the longjmp targets.
bool decode_jpeg_into(std::span<const std::uint8_t> bytes, bool header_only,
                      JpegErrorManager& err, ImageShape& shape, int& channels,
                      std::vector<std::uint8_t>& out) {
  jpeg_decompress_struct cinfo;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  if (header_only) {
    shape = ImageShape{cinfo.image_height, cinfo.image_width};
    jpeg_destroy_decompress(&cinfo);
    return true;
  }
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  shape = ImageShape{cinfo.output_height, cinfo.output_width};
  channels = cinfo.output_components;
  out.resize(shape.pixel_count() * static_cast<std::size_t>(channels));
  const std::size_t stride = shape.width * static_cast<std::size_t>(channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.data() + static_cast<std::size_t>(cinfo.output_scanline) * stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

}  // namespace

ImageShape peek_shape(std::span<const std::uint8_t> bytes) {
  switch (sniff_format(bytes)) {
    case ImageFormat::kPng: {
      PngImage png;
      begin_png(png, bytes);
      return ImageShape{png.img.height, png.img.width};
    }
    case ImageFormat::kJpeg: {
      JpegErrorManager err{};
      ImageShape shape;
      int channels = 0;
      std::vector<std::uint8_t> unused;
      if (!decode_jpeg_into(bytes, true, err, shape, channels, unused)) {
        throw Error(ErrorCode::kDecode, fmt::format("JPEG header: {}", err.message));
      }
      return shape;
    }
    case ImageFormat::kUnknown:
      break;
  }
  throw Error(ErrorCode::kUnsupportedMedia, "not a PNG or JPEG image");
}

Image decode_image(std::span<const std::uint8_t> bytes) {
  switch (sniff_format(bytes)) {
    case ImageFormat::kPng: {
      PngImage png;
      begin_png(png, bytes);
      const bool color = (png.img.format & PNG_FORMAT_FLAG_COLOR) != 0;
      png.img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
      Image image(ImageShape{png.img.height, png.img.width}, color ? 3 : 1);
      if (!png_image_finish_read(&png.img, nullptr, image.pixels.data(), 0, nullptr)) {
        throw Error(ErrorCode::kDecode, fmt::format("PNG decode: {}", png.img.message));
      }
      return image;
    }
    case ImageFormat::kJpeg: {
      JpegErrorManager err{};
      ImageShape shape;
      int channels = 0;
      std::vector<std::uint8_t> pixels;
      if (!decode_jpeg_into(bytes, false, err, shape, channels, pixels)) {
        throw Error(ErrorCode::kDecode, fmt::format("JPEG decode: {}", err.message));
      }
      Image image(shape, channels);
      image.pixels = std::move(pixels);
      return image;
    }
    case ImageFormat::kUnknown:
      break;
  }
  throw Error(ErrorCode::kUnsupportedMedia, "not a PNG or JPEG image");
}

Image read_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  PngImage png;
  png.img.width = static_cast<png_uint_32>(image.shape.width);
  png.img.height = static_cast<png_uint_32>(image.shape.height);
  png.img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png.img, nullptr, &size, 0, image.pixels.data(), 0,
                                 nullptr)) {
    throw Error(ErrorCode::kIo, fmt::format("PNG encode: {}", png.img.message));
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png.img, out.data(), &size, 0, image.pixels.data(), 0,
                                 nullptr)) {
    throw Error(ErrorCode::kIo, fmt::format("PNG encode: {}", png.img.message));
  }
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  write_file(path, encode_png(image));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open {}", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, fmt::format("short write to {}", path.string()));
}

}  // namespace simsam::io
