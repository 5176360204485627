#pragma once

#include <torch/torch.h>

#include <string>
#include <utility>

namespace ego2front {

struct ValueRange {
    double lo = -1.0;
    double hi = 1.0;

    double width() const { return hi - lo; }
    bool operator==(const ValueRange&) const = default;
};

inline constexpr ValueRange kCanonicalRange{-1.0, 1.0};
inline constexpr ValueRange kUnitRange{0.0, 1.0};

// Pixel-space image, (C, H, W) or batched (N, C, H, W). Construction
// validates finiteness and the declared range.
class ImageTensor {
public:
    ImageTensor() = default;
    explicit ImageTensor(torch::Tensor data, ValueRange range = kCanonicalRange);

    // Skips validation after clamping into the range.
    static ImageTensor clamped(const torch::Tensor& data, ValueRange range = kCanonicalRange);

    const torch::Tensor& data() const { return data_; }
    ValueRange range() const { return range_; }
    bool batched() const { return data_.dim() == 4; }
    int64_t channels() const { return data_.size(-3); }
    int64_t height() const { return data_.size(-2); }
    int64_t width() const { return data_.size(-1); }

    // Always (N, C, H, W).
    torch::Tensor as_batch() const { return batched() ? data_ : data_.unsqueeze(0); }

    // Linear remap into [0, 1].
    torch::Tensor unit() const { return (data_ - range_.lo) / range_.width(); }

private:
    struct Unchecked {};
    ImageTensor(torch::Tensor data, ValueRange range, Unchecked)
        : data_(std::move(data)), range_(range) {}

    torch::Tensor data_;
    ValueRange range_;
};

// Compressed representation produced by a codec; `scale` is the factor the
// codec applied after encoding.
struct LatentTensor {
    torch::Tensor data;
    double scale = 1.0;

    int64_t channels() const { return data.size(-3); }
    int64_t height() const { return data.size(-2); }
    int64_t width() const { return data.size(-1); }
};

std::string shape_string(const torch::Tensor& t);

// Throws ShapeError unless the tensor is rank 3 or 4.
void require_image_rank(const torch::Tensor& t, const char* what);

void require_finite(const torch::Tensor& t, const char* what);

}  // namespace ego2front
