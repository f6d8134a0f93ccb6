#pragma once

#include "fusenas/image.hpp"
#include "fusenas/rng.hpp"

namespace fusenas::facegen {

// Seeded procedural face-like texture: background gradient, head ellipse,
// eyes, brows, nose shading and mouth, rendered with 4x supersampling.
// Mean luminance is kept above ~0.5 so low-light synthesis stays separable
// from naturally dark scenes.
Image make_face(std::uint64_t seed, int size = 32);

// mild gamma/contrast/brightness jitter; same identity, different style
Image photometric_variant(const Image& img, std::uint64_t seed);

}  // namespace fusenas::facegen
