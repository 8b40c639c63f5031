#include "pneunet/image.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <jpeglib.h>
#include <png.h>

#include "pneunet/error.h"

namespace pneunet {

namespace {

std::uint8_t round_pixel(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// ---- PGM ----------------------------------------------------------------

ImageBuffer decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> std::size_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) {
      throw FormatError("pgm: malformed header");
    }
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > (1u << 24)) throw FormatError("pgm: header value too large");
    }
    return v;
  };
  const std::size_t w = read_uint();
  const std::size_t h = read_uint();
  const std::size_t maxval = read_uint();
  if (w == 0 || h == 0) throw FormatError("pgm: zero image dimension");
  if (maxval == 0 || maxval > 255) throw FormatError("pgm: only 8-bit maxval is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("pgm: malformed header");
  ++pos;
  if (bytes.size() - pos < w * h) throw FormatError("pgm: truncated pixel data");
  ImageBuffer img(w, h, 1);
  for (std::size_t i = 0; i < w * h; ++i) {
    const std::uint8_t v = bytes[pos + i];
    img.pixels[i] = maxval == 255 ? v : round_pixel(255.0 * std::min<std::size_t>(v, maxval) / maxval);
  }
  return img;
}

// ---- JPEG ---------------------------------------------------------------

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

// Warnings (premature end of data, corrupt segments) abort the decode too.
void jpeg_emit_message(j_common_ptr cinfo, int level) {
  if (level < 0) jpeg_error_exit(cinfo);
}

ImageBuffer decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.emit_message = jpeg_emit_message;
  ImageBuffer img;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw FormatError(std::string("jpeg: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img.width = cinfo.output_width;
  img.height = cinfo.output_height;
  img.channels = static_cast<std::size_t>(cinfo.output_components);
  img.pixels.resize(img.width * img.height * img.channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.pixels.data() + cinfo.output_scanline * img.width * img.channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

// ---- PNG ----------------------------------------------------------------

ImageBuffer decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw FormatError(std::string("png: ") + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  ImageBuffer img(image.width, image.height, color ? 3 : 1);
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("png: " + msg);
  }
  return img;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("failed reading " + path.string());
  return buf.str();
}

double sample_bilinear(const ImageBuffer& img, double sx, double sy, std::size_t c) {
  const double maxx = static_cast<double>(img.width - 1);
  const double maxy = static_cast<double>(img.height - 1);
  sx = std::clamp(sx, 0.0, maxx);
  sy = std::clamp(sy, 0.0, maxy);
  const auto x0 = static_cast<std::size_t>(std::floor(sx));
  const auto y0 = static_cast<std::size_t>(std::floor(sy));
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const double fx = sx - static_cast<double>(x0);
  const double fy = sy - static_cast<double>(y0);
  const double top = img.at(x0, y0, c) * (1.0 - fx) + img.at(x1, y0, c) * fx;
  const double bottom = img.at(x0, y1, c) * (1.0 - fx) + img.at(x1, y1, c) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

double source_coord(std::size_t dst, std::size_t in, std::size_t out) {
  return (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
}

}  // namespace

void ImageBuffer::validate() const {
  if (channels != 1 && channels != 3) throw FormatError("image must have 1 or 3 channels");
  if (pixels.size() != width * height * channels) {
    throw FormatError("image buffer length does not match its dimensions");
  }
}

std::optional<ImageFormat> detect_format(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return ImageFormat::kPgm;
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) == 0) {
    return ImageFormat::kPng;
  }
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return ImageFormat::kJpeg;
  }
  return std::nullopt;
}

ImageBuffer decode_image(std::span<const std::uint8_t> bytes, std::optional<ImageFormat> format) {
  if (!format) format = detect_format(bytes);
  if (!format) throw FormatError("unsupported or unrecognised image format");
  ImageBuffer img;
  switch (*format) {
    case ImageFormat::kPgm:
      if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
        throw FormatError("pgm: missing P5 signature");
      }
      img = decode_pgm(bytes);
      break;
    case ImageFormat::kPng:
      img = decode_png(bytes);
      break;
    case ImageFormat::kJpeg:
      img = decode_jpeg(bytes);
      break;
  }
  img.validate();
  return img;
}

ImageBuffer decode_image(const std::string& bytes) {
  return decode_image(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

std::string encode_png(const ImageBuffer& img) {
  img.validate();
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, img.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("png encode: ") + image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
    throw FormatError(std::string("png encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

std::string encode_pgm(const ImageBuffer& img) {
  img.validate();
  if (img.channels != 1) throw FormatError("pgm needs a single-channel image");
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

std::string encode_jpeg(const ImageBuffer& img, int quality) {
  img.validate();
  jpeg_compress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw FormatError(std::string("jpeg encode: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = static_cast<int>(img.channels);
  cinfo.in_color_space = img.channels == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(img.pixels.data() +
                                        cinfo.next_scanline * img.width * img.channels);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::string out(reinterpret_cast<const char*>(buffer), size);
  jpeg_destroy_compress(&cinfo);
  std::free(buffer);
  return out;
}

ImageBuffer read_image(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  try {
    return decode_image(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_image(const std::filesystem::path& path, const ImageBuffer& image) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  std::string bytes;
  if (ext == ".png") {
    bytes = encode_png(image);
  } else if (ext == ".pgm") {
    bytes = encode_pgm(image);
  } else if (ext == ".jpg" || ext == ".jpeg") {
    bytes = encode_jpeg(image);
  } else {
    throw ConfigError("unsupported image extension '" + ext + "'");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

ImageBuffer resize_bilinear(const ImageBuffer& image, std::size_t out_w, std::size_t out_h) {
  image.validate();
  if (out_w == 0 || out_h == 0) throw ConfigError("resize: target dimensions must be >= 1");
  if (out_w == image.width && out_h == image.height) return image;
  ImageBuffer out(out_w, out_h, image.channels);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = source_coord(y, image.height, out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = source_coord(x, image.width, out_w);
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.at(x, y, c) = round_pixel(sample_bilinear(image, sx, sy, c));
      }
    }
  }
  return out;
}

std::vector<float> resize_bilinear(std::span<const float> grid, std::size_t in_w,
                                   std::size_t in_h, std::size_t out_w, std::size_t out_h) {
  if (grid.size() != in_w * in_h || in_w == 0 || in_h == 0) {
    throw ShapeError("resize: grid length does not match its dimensions");
  }
  if (out_w == 0 || out_h == 0) throw ConfigError("resize: target dimensions must be >= 1");
  std::vector<float> out(out_w * out_h);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = std::clamp(source_coord(y, in_h, out_h), 0.0, double(in_h - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, in_h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = std::clamp(source_coord(x, in_w, out_w), 0.0, double(in_w - 1));
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, in_w - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = grid[y0 * in_w + x0] * (1.0 - fx) + grid[y0 * in_w + x1] * fx;
      const double bottom = grid[y1 * in_w + x0] * (1.0 - fx) + grid[y1 * in_w + x1] * fx;
      out[y * out_w + x] = static_cast<float>(top * (1.0 - fy) + bottom * fy);
    }
  }
  return out;
}

ImageBuffer hflip(const ImageBuffer& image) {
  image.validate();
  ImageBuffer out = image;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.at(x, y, c) = image.at(image.width - 1 - x, y, c);
      }
    }
  }
  return out;
}

ImageBuffer rotate(const ImageBuffer& image, double degrees) {
  image.validate();
  if (degrees == 0.0) return image;
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cx = (static_cast<double>(image.width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(image.height) - 1.0) / 2.0;
  constexpr double kEdgeTolerance = 1e-6;
  ImageBuffer out(image.width, image.height, image.channels, 0);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      // Inverse mapping; y grows downwards, so a counter-clockwise turn on
      // screen is a clockwise turn in (x, y).
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      const double sx = cs * dx - sn * dy + cx;
      const double sy = sn * dx + cs * dy + cy;
      if (sx < -kEdgeTolerance || sy < -kEdgeTolerance ||
          sx > static_cast<double>(image.width - 1) + kEdgeTolerance ||
          sy > static_cast<double>(image.height - 1) + kEdgeTolerance) {
        continue;
      }
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.at(x, y, c) = round_pixel(sample_bilinear(image, sx, sy, c));
      }
    }
  }
  return out;
}

ImageBuffer to_grayscale(const ImageBuffer& image) {
  image.validate();
  if (image.channels == 1) return image;
  ImageBuffer out(image.width, image.height, 1);
  for (std::size_t i = 0; i < image.width * image.height; ++i) {
    const double r = image.pixels[3 * i], g = image.pixels[3 * i + 1], b = image.pixels[3 * i + 2];
    out.pixels[i] = round_pixel(0.299 * r + 0.587 * g + 0.114 * b);
  }
  return out;
}

void AugmentationConfig::validate() const {
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw ConfigError("hflip_prob must be in [0, 1]");
  if (!(rotation_max_degrees >= 0.0)) throw ConfigError("rotation_max_degrees must be >= 0");
}

ImageBuffer augment(const ImageBuffer& image, const AugmentationConfig& config, Rng& rng) {
  config.validate();
  const bool flip = rng.bernoulli(config.hflip_prob);
  const double angle = rng.uniform(-config.rotation_max_degrees, config.rotation_max_degrees);
  ImageBuffer out = flip ? hflip(image) : image;
  return config.rotation_max_degrees > 0.0 ? rotate(out, angle) : out;
}

Tensor to_tensor(const ImageBuffer& image, std::size_t model_channels) {
  image.validate();
  if (image.channels == 3 && model_channels == 1) return to_tensor(to_grayscale(image), 1);
  if (image.channels != model_channels && !(image.channels == 1 && model_channels == 3)) {
    throw ShapeError("image has " + std::to_string(image.channels) + " channels, model expects " +
                     std::to_string(model_channels));
  }
  const std::size_t area = image.width * image.height;
  auto t = Tensor::zeros(Shape{model_channels, image.height, image.width});
  auto dst = t.mutable_data();
  for (std::size_t c = 0; c < model_channels; ++c) {
    const std::size_t src_c = image.channels == 1 ? 0 : c;
    for (std::size_t i = 0; i < area; ++i) {
      dst[c * area + i] = static_cast<float>(image.pixels[i * image.channels + src_c]) / 255.0f;
    }
  }
  return t;
}

}  // namespace pneunet
