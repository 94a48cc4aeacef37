// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0
//
// File formats for core types.
//
//   point cloud  binary little-endian PLY; x y z as float32, red green blue as uint8
//   depth        PFM, single channel float32, little-endian (negative scale);
//                invalid pixels are written as 0
//   color / mask 8-bit PNG (RGB for images, gray 0/255 for masks)
//
// Narrowing to 32-bit floats and 8-bit colors is the declared precision of
// each format.
#pragma once

#include "bloomgs/core.hpp"

#include <filesystem>
#include <vector>

namespace bloomgs::io {

void write_ply(const std::filesystem::path& path, const PointCloud& cloud);
/// Loaded points get source_frame = -1 (provenance is not stored).
PointCloud read_ply(const std::filesystem::path& path);

void write_pfm(const std::filesystem::path& path, const DepthMap& depth);
DepthMap read_pfm(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const ColorImage& image);
ColorImage read_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);
Mask read_mask_png(const std::filesystem::path& path);

/// Channel value in [0, 1] to the 8-bit code used by the PNG and PLY writers.
std::uint8_t to_u8(double value);

}  // namespace bloomgs::io
