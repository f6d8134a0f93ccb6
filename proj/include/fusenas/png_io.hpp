#pragma once

#include <string>

#include "fusenas/image.hpp"

namespace fusenas {

// 8-bit PNG in/out; anything readable is converted to RGB.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

}  // namespace fusenas
