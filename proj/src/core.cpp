#include "rsovs/core.hpp"

#include <sstream>

namespace rsovs {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

std::vector<int64_t> rotation_source_index(int64_t side, Orientation o) {
    std::vector<int64_t> src(side * side);
    const int64_t n = side - 1;
    for (int64_t i = 0; i < side; ++i) {
        for (int64_t j = 0; j < side; ++j) {
            int64_t si = i, sj = j;
            switch (o.quarter_turns()) {
                case 1: si = j; sj = n - i; break;
                case 2: si = n - i; sj = n - j; break;
                case 3: si = n - j; sj = i; break;
                default: break;
            }
            src[i * side + j] = si * side + sj;
        }
    }
    return src;
}

std::vector<LinearTap> linear_taps(int64_t in_size, int64_t out_size, bool align_corners) {
    std::vector<LinearTap> taps(out_size);
    const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
    const double corner_scale =
        out_size > 1 ? static_cast<double>(in_size - 1) / static_cast<double>(out_size - 1) : 0.0;
    for (int64_t o = 0; o < out_size; ++o) {
        double src = align_corners ? static_cast<double>(o) * corner_scale : (static_cast<double>(o) + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        int64_t lo = static_cast<int64_t>(src);
        if (lo > in_size - 1) lo = in_size - 1;
        const int64_t hi = std::min(lo + 1, in_size - 1);
        taps[o] = {lo, hi, hi == lo ? 0.0 : src - static_cast<double>(lo)};
    }
    return taps;
}

ImageGrid::ImageGrid(Tensor<float> px) : pixels(std::move(px)) {
    if (pixels.rank() != 3 || pixels.dim(2) != 3 || pixels.dim(0) < 1 || pixels.dim(1) < 1)
        throw ShapeError("image must be HxWx3, got " + shape_str(pixels.shape));
    if (!all_finite(pixels)) throw InputError("image contains non-finite values");
}

}  // namespace rsovs
