#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace monoflow::io {

// 8-bit interleaved RGB, row-major.
struct Image8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // height*width*3

    Image8() = default;
    Image8(int w, int h) : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3, 0) {}

    std::uint8_t* at(int x, int y) {
        return pixels.data() + 3 * (static_cast<size_t>(y) * width + x);
    }
    const std::uint8_t* at(int x, int y) const {
        return pixels.data() + 3 * (static_cast<size_t>(y) * width + x);
    }
};

void write_png(const std::string& path, const Image8& img);
Image8 read_png(const std::string& path);

}  // namespace monoflow::io
