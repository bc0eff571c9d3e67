#pragma once

// Procedural LUTs and images for desk-scale corpora and fixtures.

#include <cstdint>

#include "acetone/lut.hpp"

namespace acetone {

// A grading-style LUT: a 3x3 channel mix with unit row sums, a saturation
// change, per-channel gamma with lift/gain, and split toning. Neutral grays
// stay near neutral before toning.
Lut3d synthetic_grade_lut(std::uint64_t seed, int n = 32);

// A smooth two-color gradient with colored Gaussian blobs and mild grain.
ImageBuf synthetic_image(std::uint64_t seed, int width, int height);

}  // namespace acetone
