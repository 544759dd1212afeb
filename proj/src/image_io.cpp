#include "rsovs/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>

namespace rsovs {

namespace {

Tensor<uint8_t> read_png(const std::string& path, png_uint_32 format, int64_t channels) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw DataError("cannot decode image " + path + ": " + img.message);
    img.format = format;
    Tensor<uint8_t> out({static_cast<int64_t>(img.height), static_cast<int64_t>(img.width), channels});
    if (!png_image_finish_read(&img, nullptr, out.data.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw DataError("cannot decode image " + path + ": " + msg);
    }
    if (channels == 1) out.shape.pop_back();
    return out;
}

void write_png(const std::string& path, const Tensor<uint8_t>& px, png_uint_32 format) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(px.dim(1));
    img.height = static_cast<png_uint_32>(px.dim(0));
    img.format = format;
    if (!png_image_write_to_file(&img, path.c_str(), 0, px.data.data(), 0, nullptr))
        throw DataError("cannot write image " + path + ": " + img.message);
}

}  // namespace

Tensor<uint8_t> read_png_rgb(const std::string& path) { return read_png(path, PNG_FORMAT_RGB, 3); }

Tensor<uint8_t> read_png_gray(const std::string& path) { return read_png(path, PNG_FORMAT_GRAY, 1); }

void write_png_rgb(const std::string& path, const Tensor<uint8_t>& rgb) {
    if (rgb.rank() != 3 || rgb.dim(2) != 3) throw ShapeError("RGB image must be HxWx3");
    write_png(path, rgb, PNG_FORMAT_RGB);
}

void write_png_gray(const std::string& path, const Tensor<uint8_t>& gray) {
    if (gray.rank() != 2) throw ShapeError("gray image must be HxW");
    write_png(path, gray, PNG_FORMAT_GRAY);
}

ImageGrid image_from_rgb8(const Tensor<uint8_t>& rgb) {
    Tensor<float> px(rgb.shape);
    for (int64_t i = 0; i < rgb.numel(); ++i) px.data[i] = static_cast<float>(rgb.data[i]) / 255.0f;
    return ImageGrid(std::move(px));
}

Tensor<uint8_t> rgb8_from_image(const ImageGrid& image) {
    Tensor<uint8_t> out(image.pixels.shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
        const float v = std::clamp(image.pixels.data[i], 0.0f, 1.0f);
        out.data[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
    return out;
}

}  // namespace rsovs
