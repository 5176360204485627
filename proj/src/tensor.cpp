#include "ego2front/tensor.hpp"

#include "ego2front/error.hpp"

#include <sstream>

namespace ego2front {

std::string shape_string(const torch::Tensor& t) {
    std::ostringstream os;
    os << '[';
    for (int64_t i = 0; i < t.dim(); ++i) {
        if (i) os << 'x';
        os << t.size(i);
    }
    os << ']';
    return os.str();
}

void require_image_rank(const torch::Tensor& t, const char* what) {
    if (!t.defined() || (t.dim() != 3 && t.dim() != 4)) {
        throw ShapeError(std::string(what) + ": expected (C,H,W) or (N,C,H,W), got " +
                         (t.defined() ? shape_string(t) : std::string("undefined")));
    }
}

void require_finite(const torch::Tensor& t, const char* what) {
    if (!torch::isfinite(t).all().item<bool>()) {
        throw RangeError(std::string(what) + ": contains NaN or Inf");
    }
}

ImageTensor::ImageTensor(torch::Tensor data, ValueRange range)
    : data_(std::move(data)), range_(range) {
    require_image_rank(data_, "image");
    if (!(range_.hi > range_.lo)) throw RangeError("image: empty value range");
    require_finite(data_, "image");
    const auto lo = data_.min().item<double>();
    const auto hi = data_.max().item<double>();
    if (lo < range_.lo || hi > range_.hi) {
        std::ostringstream os;
        os << "image: values [" << lo << ", " << hi << "] outside declared range [" << range_.lo
           << ", " << range_.hi << "]";
        throw RangeError(os.str());
    }
}

ImageTensor ImageTensor::clamped(const torch::Tensor& data, ValueRange range) {
    require_image_rank(data, "image");
    return ImageTensor(torch::nan_to_num(data).clamp(range.lo, range.hi), range, Unchecked{});
}

}  // namespace ego2front
