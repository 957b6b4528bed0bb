#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace attrseg {

// Minimal 8-bit PNG I/O on top of libpng. Pixels are row-major, top-left origin.
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 (gray) or 3 (rgb)
    std::vector<uint8_t> pixels;  // height*width*channels

    uint8_t& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * width + x) * channels + c]; }
    uint8_t at(int y, int x, int c) const { return pixels[(static_cast<size_t>(y) * width + x) * channels + c]; }
};

void write_png(const std::string& path, const ImageU8& img);

// Reads a PNG; gray/palette/rgba inputs are converted to the nearest of
// gray8 or rgb8 (alpha stripped, 16-bit narrowed).
ImageU8 read_png(const std::string& path);

}  // namespace attrseg
