#pragma once

// Depth and colour file formats.
//
// Depth PNG: 16-bit grayscale, millimeters, 0 = invalid.
// PFM: single-channel "Pf", negative scale (little-endian), meters, rows
// stored bottom to top.

#include <string>

#include "dsrei/data.hpp"

namespace dsrei {

struct DepthMap {
  Image depth;  // cm, 0 where invalid
  Image mask;
};

/// Dispatches on the extension (.png or .pfm).
DepthMap load_depth(const std::string& path);
DepthMap load_depth_png16(const std::string& path);
DepthMap load_pfm(const std::string& path);

/// Rounds to whole millimeters, clamped to [0, 65535].
void save_depth_png16(const std::string& path, const Image& depth_cm);
void save_pfm(const std::string& path, const Image& depth_cm);

/// 8-bit RGB (gray and alpha are converted), scaled to [0, 1].
Image load_color(const std::string& path);
/// 8-bit gray (c = 1) or RGB (c = 3) from values in [0, 1], clamped.
void save_png8(const std::string& path, const Image& img);

}  // namespace dsrei
