#include "blastoseg/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "blastoseg/errors.hpp"

namespace blastoseg {

namespace {

// 5x7 bitmap glyphs, one byte per row, low five bits, MSB leftmost.
struct Glyph {
    char ch;
    std::uint8_t rows[7];
};

constexpr Glyph kFont[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
    {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
};

const std::uint8_t* glyph_rows(char c) {
    for (const auto& g : kFont)
        if (g.ch == c) return g.rows;
    return nullptr;
}

void check_mask_pair(const Tensor<float>& pred, const Tensor<float>& truth) {
    if (!pred.same_shape(truth))
        throw DimensionError("render_overlay: shape mismatch " + shape_str(pred.shape()) + " vs " +
                             shape_str(truth.shape()));
    if (pred.rank() != 3 || pred.dim(0) != 1)
        throw DimensionError("render_overlay: masks must be [1,H,W]");
}

} // namespace

std::vector<std::uint8_t> truth_contour(const Tensor<float>& truth) {
    const index_t h = truth.dim(1), w = truth.dim(2);
    const float* t = truth.data();
    std::vector<std::uint8_t> contour(static_cast<std::size_t>(h * w), 0);
    for (index_t y = 0; y < h; ++y) {
        for (index_t x = 0; x < w; ++x) {
            if (t[y * w + x] != 1.0f) continue;
            bool boundary = false;
            for (index_t dy = -1; dy <= 1 && !boundary; ++dy) {
                for (index_t dx = -1; dx <= 1 && !boundary; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    const index_t ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w || t[ny * w + nx] == 0.0f)
                        boundary = true;
                }
            }
            if (boundary) contour[static_cast<std::size_t>(y * w + x)] = 1;
        }
    }
    return contour;
}

RgbImage8 render_overlay(const Tensor<float>& pred, const Tensor<float>& truth,
                         const OverlaySpec& spec) {
    check_mask_pair(pred, truth);
    const index_t h = truth.dim(1), w = truth.dim(2);
    const auto contour = truth_contour(truth);
    RgbImage8 img;
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.pixels.resize(static_cast<std::size_t>(3 * h * w));
    for (index_t y = 0; y < h; ++y) {
        for (index_t x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y * w + x);
            std::array<std::uint8_t, 3> c = spec.background;
            if (contour[i])
                c = spec.contour;
            else if (pred[static_cast<index_t>(i)] == 1.0f)
                c = spec.prediction;
            else if (truth[static_cast<index_t>(i)] == 1.0f)
                c = spec.ground_truth;
            img.set(static_cast<int>(y), static_cast<int>(x), c[0], c[1], c[2]);
        }
    }
    return img;
}

void draw_text(RgbImage8& img, int x, int y, const std::string& text,
               std::array<std::uint8_t, 3> color) {
    int cx = x;
    for (char c : text) {
        const std::uint8_t* rows = glyph_rows(c);
        if (rows) {
            for (int ry = 0; ry < 7; ++ry) {
                for (int rx = 0; rx < 5; ++rx) {
                    if ((rows[ry] >> (4 - rx)) & 1) {
                        const int px = cx + rx, py = y + ry;
                        if (px >= 0 && px < img.width && py >= 0 && py < img.height)
                            img.set(py, px, color[0], color[1], color[2]);
                    }
                }
            }
        }
        cx += 6;
    }
}

std::string format_ji_dc(double jaccard, double dice) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "JI %.1f%%, DC %.1f%%", 100.0 * jaccard, 100.0 * dice);
    return buf;
}

namespace {

void blit_gray(RgbImage8& dst, int x0, const Tensor<float>& chw, bool display_normalize) {
    const index_t h = chw.dim(1), w = chw.dim(2);
    const float* p = chw.data();  // first channel
    float lo = p[0], hi = p[0];
    if (display_normalize) {
        for (index_t i = 0; i < h * w; ++i) {
            lo = std::min(lo, p[i]);
            hi = std::max(hi, p[i]);
        }
        if (hi - lo < 1e-12f) hi = lo + 1.0f;
    }
    for (index_t y = 0; y < h; ++y) {
        for (index_t x = 0; x < w; ++x) {
            const float v = p[y * w + x];
            const std::uint8_t g =
                display_normalize
                    ? static_cast<std::uint8_t>(std::lround(255.0f * (v - lo) / (hi - lo)))
                    : (v == 1.0f ? 255 : 0);
            dst.set(static_cast<int>(y), x0 + static_cast<int>(x), g, g, g);
        }
    }
}

void blit_rgb(RgbImage8& dst, int x0, const RgbImage8& src) {
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            const std::size_t i = 3 * (static_cast<std::size_t>(y) * src.width + x);
            dst.set(y, x0 + x, src.pixels[i], src.pixels[i + 1], src.pixels[i + 2]);
        }
}

} // namespace

RgbImage8 render_panel(const Tensor<float>& original, const Tensor<float>& truth,
                       const Tensor<float>& pred, const RgbImage8& overlay,
                       const std::string& annotation, int gutter) {
    const index_t h = truth.dim(1), w = truth.dim(2);
    if (original.dim(1) != h || original.dim(2) != w || !pred.same_shape(truth) ||
        overlay.height != h || overlay.width != w)
        throw DimensionError("render_panel: tiles must share one spatial size");

    const int tile_w = static_cast<int>(w);
    const int text_strip = 13;
    RgbImage8 panel;
    panel.width = 4 * tile_w + 3 * gutter;
    panel.height = static_cast<int>(h) + text_strip;
    panel.pixels.assign(static_cast<std::size_t>(3 * panel.width) * panel.height, 255);

    blit_gray(panel, 0, original, true);
    blit_gray(panel, tile_w + gutter, truth, false);
    blit_gray(panel, 2 * (tile_w + gutter), pred, false);
    blit_rgb(panel, 3 * (tile_w + gutter), overlay);
    draw_text(panel, 4, static_cast<int>(h) + 3, annotation, {0, 0, 0});
    return panel;
}

} // namespace blastoseg
