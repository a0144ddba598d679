#include "handnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

#include "fileutil.hpp"
#include "handnet/errors.hpp"
#include "handnet/tensor.hpp"

namespace handnet {

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

RgbImage decode_png(const std::string& bytes, const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw DataError("corrupt PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw DataError("corrupt PNG " + path.string() + ": " + msg);
  }
  RgbImage out{img.height, img.width, std::vector<float>(buf.begin(), buf.end())};
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Decodes into `out`; returns false with `err.message` set on failure. Kept
// free of objects with destructors between setjmp and longjmp.
bool decode_jpeg_raw(const std::string& bytes, std::vector<std::uint8_t>& out, std::size_t& h, std::size_t& w,
                     JpegError& err) {
  jpeg_decompress_struct cinfo;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  h = cinfo.output_height;
  w = cinfo.output_width;
  out.resize(h * w * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

RgbImage decode_jpeg(const std::string& bytes, const std::filesystem::path& path) {
  JpegError err{};
  std::vector<std::uint8_t> buf;
  std::size_t h = 0, w = 0;
  if (!decode_jpeg_raw(bytes, buf, h, w, err)) {
    throw DataError("corrupt JPEG " + path.string() + ": " + err.message);
  }
  return RgbImage{h, w, std::vector<float>(buf.begin(), buf.end())};
}

RgbImage decode_hftn(const std::filesystem::path& path) {
  TensorF t;
  try {
    t = read_tensor<float>(path);
  } catch (const FormatError& e) {
    throw DataError("corrupt tensor image " + path.string() + ": " + e.what());
  }
  if (t.rank() != 3 || t.dim(2) != 3) {
    throw DataError("tensor image " + path.string() + " must be H x W x 3, got " + t.shape().str());
  }
  return RgbImage{t.dim(0), t.dim(1), std::vector<float>(t.data().begin(), t.data().end())};
}

}  // namespace

RgbImage read_image(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file<DataError>(path);
  if (bytes.size() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) == 0) {
    return decode_png(bytes, path);
  }
  if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
      static_cast<unsigned char>(bytes[1]) == 0xD8 && static_cast<unsigned char>(bytes[2]) == 0xFF) {
    return decode_jpeg(bytes, path);
  }
  if (bytes.size() >= 4 && bytes.compare(0, 4, "HFTN") == 0) {
    return decode_hftn(path);
  }
  throw DataError("unrecognised image format: " + path.string());
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  std::vector<std::uint8_t> buf(image.rgb.size());
  std::transform(image.rgb.begin(), image.rgb.end(), buf.begin(), to_byte);
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw Error("cannot write PNG " + path.string() + ": " + img.message);
  }
}

void write_jpeg(const std::filesystem::path& path, const RgbImage& image, int quality) {
  std::vector<std::uint8_t> buf(image.rgb.size());
  std::transform(image.rgb.begin(), image.rgb.end(), buf.begin(), to_byte);

  jpeg_compress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  unsigned char* mem = nullptr;
  unsigned long mem_size = 0;
  jpeg_mem_dest(&cinfo, &mem, &mem_size);
  cinfo.image_width = static_cast<JDIMENSION>(image.width);
  cinfo.image_height = static_cast<JDIMENSION>(image.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = buf.data() + static_cast<std::size_t>(cinfo.next_scanline) * image.width * 3;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::string bytes(reinterpret_cast<const char*>(mem), mem_size);
  jpeg_destroy_compress(&cinfo);
  std::free(mem);
  detail::write_file(path, bytes);
}

RgbImage resize_bilinear(const RgbImage& image, std::size_t out_h, std::size_t out_w) {
  if (image.height == 0 || image.width == 0 || out_h == 0 || out_w == 0) {
    throw DimensionError("resize needs non-empty source and target");
  }
  RgbImage out{out_h, out_w, std::vector<float>(out_h * out_w * 3)};
  const double sy = static_cast<double>(image.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(image.width) / static_cast<double>(out_w);
  auto source = [](std::size_t dst, double scale, std::size_t extent, std::size_t& i0, std::size_t& i1, double& f) {
    double s = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, extent - 1);
    f = s - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    source(y, sy, image.height, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      source(x, sx, image.width, x0, x1, fx);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = (1 - fx) * image.at(y0, x0, c) + fx * image.at(y0, x1, c);
        const double bottom = (1 - fx) * image.at(y1, x0, c) + fx * image.at(y1, x1, c);
        out.rgb[(y * out_w + x) * 3 + c] = static_cast<float>((1 - fy) * top + fy * bottom);
      }
    }
  }
  return out;
}

}  // namespace handnet
