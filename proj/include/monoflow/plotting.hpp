#pragma once

// Minimal raster plotting: enough to emit PR curves, error maps, per-region
// training trajectories, and optical-flow colorings as PNGs.

#include <string>
#include <vector>

#include <Eigen/Core>

#include "monoflow/geometry.hpp"
#include "monoflow/image.hpp"

namespace monoflow::plot {

struct Rgb {
    std::uint8_t r, g, b;
};

class Canvas {
public:
    Canvas(int w, int h, Rgb background = {255, 255, 255});

    void line(double x0, double y0, double x1, double y1, Rgb c);
    void rect(int x0, int y0, int x1, int y1, Rgb c);
    void dot(int x, int y, Rgb c, int radius = 1);
    const io::Image8& image() const { return img_; }
    io::Image8& image() { return img_; }

private:
    io::Image8 img_;
};

// polyline plot in a [0,1]^2 (or data-ranged) box with axes and gridlines
struct Series {
    std::vector<double> x, y;
    Rgb color;
};

void xy_plot(const std::string& path, const std::vector<Series>& series, double x_min,
             double x_max, double y_min, double y_max, int width = 480, int height = 360);

// scalar map -> colormapped PNG over a fixed [lo, hi] range; NaN/black outside
void heatmap(const std::string& path, const Eigen::ArrayXXd& values, double lo, double hi,
             int scale = 4);

// image-plane optical flow (du, dv per pixel) -> hue wheel PNG
void flow_panel(const std::string& path, const Eigen::ArrayXXd& du, const Eigen::ArrayXXd& dv,
                double max_magnitude, int scale = 4);

// plain grayscale render of a [0,1] map
void gray_panel(const std::string& path, const Eigen::ArrayXXd& values, int scale = 4);

}  // namespace monoflow::plot
