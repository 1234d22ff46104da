#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace blastoseg {

struct GrayImage8 {
    int width = 0, height = 0;
    std::vector<std::uint8_t> pixels;  // row-major

    std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

struct GrayImage16 {
    int width = 0, height = 0;
    std::vector<std::uint16_t> pixels;
};

struct RgbImage8 {
    int width = 0, height = 0;
    std::vector<std::uint8_t> pixels;  // 3 bytes per pixel, row-major

    void set(int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        const std::size_t i = 3 * (static_cast<std::size_t>(y) * width + x);
        pixels[i] = r;
        pixels[i + 1] = g;
        pixels[i + 2] = b;
    }
};

// Reads a grayscale image; PNG, PGM (P2/P5) and BMP (8-bit palette or
// 24-bit) are dispatched on the file extension. Color inputs collapse
// to luminance.
GrayImage8 read_gray8(const std::string& path);

GrayImage16 read_png_gray16(const std::string& path);

void write_png_gray8(const std::string& path, const GrayImage8& img);
void write_png_gray16(const std::string& path, const GrayImage16& img);
void write_png_rgb8(const std::string& path, const RgbImage8& img);

bool has_supported_image_extension(const std::string& filename);

} // namespace blastoseg
