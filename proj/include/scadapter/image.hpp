#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace scadapter {

// 8-bit interleaved RGB raster.
class Image {
public:
    Image() = default;
    Image(int width, int height, std::uint8_t fill = 0);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    bool empty() const noexcept { return width_ == 0 || height_ == 0; }

    std::uint8_t& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
    std::uint8_t at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }

    std::span<const std::uint8_t> bytes() const noexcept { return pixels_; }
    std::span<std::uint8_t> bytes() noexcept { return pixels_; }

    // Channel-major planes scaled to [0, 1]: rows = channel, cols = y * width + x.
    Eigen::MatrixXd to_planes() const;
    static Image from_planes(const Eigen::MatrixXd& planes, int width, int height);

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> pixels_;
};

// Bilinear resampling (pixel-center aligned).
Image resize_bilinear(const Image& src, int width, int height);

// Binary PPM (P6, maxval 255). Reading also accepts ASCII P3.
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const Image& image, const std::filesystem::path& path);

// Horizontal/vertical tiling of equally sized images into a grid.
Image tile_grid(std::span<const Image> tiles, int columns, int padding = 1);

std::uint8_t clamp_to_byte(double v);

}  // namespace scadapter
