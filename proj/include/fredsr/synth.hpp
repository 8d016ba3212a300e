#pragma once

#include <cstdint>
#include <vector>

#include "fredsr/image.hpp"

namespace fredsr {

/// Deterministic procedural texture: a smooth color gradient, a few oriented
/// sinusoidal gratings and several hard-edged shapes (disks, rectangles,
/// stripe bands). Same seed, same image, on every platform.
Image procedural_texture(int height, int width, std::uint64_t seed);

/// `count` textures with seeds derived from `seed`.
std::vector<Image> procedural_corpus(int count, int height, int width, std::uint64_t seed);

}  // namespace fredsr
