#include "ego2front/image_io.hpp"

#include "ego2front/error.hpp"
#include "ego2front/tensor.hpp"

#include <png.h>

#include <cstring>
#include <vector>

namespace ego2front {

namespace {

struct Decoded {
    int64_t width = 0, height = 0;
    std::vector<uint8_t> pixels;
};

Decoded read_png(const std::filesystem::path& path, png_uint_32 format, int channels) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw UserError("cannot read image '" + path.string() + "': " + img.message);
    }
    img.format = format;
    Decoded d;
    d.width = img.width;
    d.height = img.height;
    d.pixels.resize(static_cast<size_t>(d.width * d.height * channels));
    if (!png_image_finish_read(&img, nullptr, d.pixels.data(), 0, nullptr)) {
        png_image_free(&img);
        throw UserError("cannot decode image '" + path.string() + "': " + img.message);
    }
    return d;
}

void write_png(const std::filesystem::path& path, const std::vector<uint8_t>& pixels, int64_t width, int64_t height,
               png_uint_32 format) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(width);
    img.height = static_cast<png_uint_32>(height);
    img.format = format;
    if (!png_image_write_to_file(&img, path.c_str(), 0, pixels.data(), 0, nullptr)) {
        throw UserError("cannot write image '" + path.string() + "': " + img.message);
    }
}

// (C, H, W) in [0, 1] -> interleaved bytes.
std::vector<uint8_t> to_bytes(const torch::Tensor& unit) {
    auto hwc = (unit.clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).permute({1, 2, 0}).contiguous();
    const auto* p = hwc.data_ptr<uint8_t>();
    return {p, p + hwc.numel()};
}

}  // namespace

torch::Tensor read_rgb(const std::filesystem::path& path) {
    auto d = read_png(path, PNG_FORMAT_RGB, 3);
    auto t = torch::from_blob(d.pixels.data(), {d.height, d.width, 3}, torch::kUInt8).clone();
    return t.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).mul(2.0).sub(1.0).contiguous();
}

void write_rgb(const std::filesystem::path& path, const torch::Tensor& image) {
    if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("write_rgb expects (3,H,W), got " + shape_string(image));
    write_png(path, to_bytes((image.detach().to(torch::kFloat32) + 1.0) / 2.0), image.size(2), image.size(1),
              PNG_FORMAT_RGB);
}

torch::Tensor read_mask(const std::filesystem::path& path) {
    auto d = read_png(path, PNG_FORMAT_GRAY, 1);
    auto t = torch::from_blob(d.pixels.data(), {1, d.height, d.width}, torch::kUInt8).clone();
    return t.to(torch::kFloat32).div(255.0);
}

void write_mask(const std::filesystem::path& path, const torch::Tensor& mask) {
    if (mask.dim() != 3 || mask.size(0) != 1) throw ShapeError("write_mask expects (1,H,W), got " + shape_string(mask));
    write_png(path, to_bytes(mask.detach().to(torch::kFloat32)), mask.size(2), mask.size(1), PNG_FORMAT_GRAY);
}

torch::Tensor side_by_side(const std::vector<torch::Tensor>& images) {
    std::vector<torch::Tensor> tiles;
    for (const auto& im : images) {
        if (im.dim() != 3) throw ShapeError("side_by_side expects (C,H,W) tiles");
        tiles.push_back(im.size(0) == 1 ? (im * 2.0 - 1.0).expand({3, im.size(1), im.size(2)}) : im);
    }
    return torch::cat(tiles, 2);
}

}  // namespace ego2front
