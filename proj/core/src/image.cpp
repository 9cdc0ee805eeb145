#include "outfit/image.hpp"

#include <csetjmp>
#include <cstdio>
#include <memory>

#include <jpeglib.h>

#include "outfit/errors.hpp"

namespace outfit {

namespace {

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void on_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

}  // namespace

std::vector<double> resample_gray(const std::vector<unsigned char>& pixels, std::size_t width,
                                  std::size_t height, std::size_t side) {
  if (width == 0 || height == 0 || pixels.size() != width * height) {
    throw InputError("resample_gray: pixel buffer does not match extents");
  }
  std::vector<double> out(side * side, 0.0);
  for (std::size_t oy = 0; oy < side; ++oy) {
    const std::size_t y0 = oy * height / side;
    const std::size_t y1 = std::max(y0 + 1, (oy + 1) * height / side);
    for (std::size_t ox = 0; ox < side; ++ox) {
      const std::size_t x0 = ox * width / side;
      const std::size_t x1 = std::max(x0 + 1, (ox + 1) * width / side);
      double acc = 0.0;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) acc += pixels[y * width + x];
      out[oy * side + ox] = acc / (255.0 * static_cast<double>((y1 - y0) * (x1 - x0)));
    }
  }
  return out;
}

std::vector<double> load_jpeg_raster(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) throw InputError("cannot open image " + path.string());

  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = on_error;
  std::vector<unsigned char> pixels;
  std::size_t width = 0, height = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw InputError("cannot decode image " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_GRAYSCALE;
  jpeg_start_decompress(&cinfo);
  width = cinfo.output_width;
  height = cinfo.output_height;
  pixels.resize(width * height);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = &pixels[cinfo.output_scanline * width];
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return resample_gray(pixels, width, height);
}

}  // namespace outfit
