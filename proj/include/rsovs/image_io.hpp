#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "rsovs/core.hpp"

namespace rsovs {

/// File read/decode/write failure; the message carries the path.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 8-bit RGB PNG -> [H, W, 3].
Tensor<uint8_t> read_png_rgb(const std::string& path);
/// 8-bit single-channel PNG -> [H, W].
Tensor<uint8_t> read_png_gray(const std::string& path);

void write_png_rgb(const std::string& path, const Tensor<uint8_t>& rgb);
void write_png_gray(const std::string& path, const Tensor<uint8_t>& gray);

ImageGrid image_from_rgb8(const Tensor<uint8_t>& rgb);
Tensor<uint8_t> rgb8_from_image(const ImageGrid& image);

}  // namespace rsovs
