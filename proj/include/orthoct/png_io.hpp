#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace orthoct {

/// Minimal 8-bit grayscale PNG writer (zlib-compressed, filter 0).
void write_gray_png(const std::string& path, int width, int height,
    std::span<const uint8_t> pixels);

/// Display windowing for slice export: HU w -> round(255*clamp((w+500)/1300, 0, 1)).
uint8_t window_hu(float hu);

} // namespace orthoct
