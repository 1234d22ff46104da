#pragma once

// Verification overlays: background dark cyan, ground truth light
// green, prediction yellow, ground-truth contour red; plus four-tile
// comparison panels with JI/DC annotations.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "blastoseg/image.hpp"
#include "blastoseg/tensor.hpp"

namespace blastoseg {

struct OverlaySpec {
    std::array<std::uint8_t, 3> background = {0, 139, 139};    // dark cyan
    std::array<std::uint8_t, 3> ground_truth = {144, 238, 144};  // light green
    std::array<std::uint8_t, 3> prediction = {255, 255, 0};    // yellow
    std::array<std::uint8_t, 3> contour = {255, 0, 0};         // red
};

// Truth-foreground pixels with at least one background 8-neighbor
// (out-of-image counts as background); 1-pixel-wide boundary.
std::vector<std::uint8_t> truth_contour(const Tensor<float>& truth);

// Color precedence, topmost first: red contour, yellow where pred=1,
// light green where truth=1 and pred=0, dark cyan elsewhere.
RgbImage8 render_overlay(const Tensor<float>& pred, const Tensor<float>& truth,
                         const OverlaySpec& spec = {});

// Four tiles left to right: original, ground truth, segmentation,
// verification overlay; annotation text rendered in a strip below.
// Panel width is exactly 4*tile + 3*gutter.
RgbImage8 render_panel(const Tensor<float>& original, const Tensor<float>& truth,
                       const Tensor<float>& pred, const RgbImage8& overlay,
                       const std::string& annotation, int gutter = 8);

// `JI 97.9%, DC 99.1%` from fractional metric values.
std::string format_ji_dc(double jaccard, double dice);

void draw_text(RgbImage8& img, int x, int y, const std::string& text,
               std::array<std::uint8_t, 3> color);

} // namespace blastoseg
