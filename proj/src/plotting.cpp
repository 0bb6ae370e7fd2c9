#include "monoflow/plotting.hpp"

#include <algorithm>
#include <cmath>

namespace monoflow::plot {

Canvas::Canvas(int w, int h, Rgb bg) : img_(w, h) {
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto* p = img_.at(x, y);
            p[0] = bg.r; p[1] = bg.g; p[2] = bg.b;
        }
}

void Canvas::dot(int x, int y, Rgb c, int radius) {
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (xx < 0 || xx >= img_.width || yy < 0 || yy >= img_.height) continue;
            auto* p = img_.at(xx, yy);
            p[0] = c.r; p[1] = c.g; p[2] = c.b;
        }
}

void Canvas::line(double x0, double y0, double x1, double y1, Rgb c) {
    const double len = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
    const int steps = std::max(1, static_cast<int>(std::ceil(len)));
    for (int i = 0; i <= steps; ++i) {
        const double t = double(i) / steps;
        dot(static_cast<int>(std::lround(x0 + t * (x1 - x0))),
            static_cast<int>(std::lround(y0 + t * (y1 - y0))), c, 0);
    }
}

void Canvas::rect(int x0, int y0, int x1, int y1, Rgb c) {
    line(x0, y0, x1, y0, c);
    line(x1, y0, x1, y1, c);
    line(x1, y1, x0, y1, c);
    line(x0, y1, x0, y0, c);
}

void xy_plot(const std::string& path, const std::vector<Series>& series, double x_min,
             double x_max, double y_min, double y_max, int width, int height) {
    Canvas cv(width, height);
    const int m = 24;  // margin
    const int x0 = m, y0 = height - m, x1 = width - m, y1 = m;
    const Rgb axis{40, 40, 40}, grid{210, 210, 210};

    auto map_x = [&](double v) { return x0 + (v - x_min) / (x_max - x_min) * (x1 - x0); };
    auto map_y = [&](double v) { return y0 + (v - y_min) / (y_max - y_min) * (y1 - y0); };

    for (int g = 1; g < 4; ++g) {
        const double fx = x_min + (x_max - x_min) * g / 4.0;
        const double fy = y_min + (y_max - y_min) * g / 4.0;
        cv.line(map_x(fx), y0, map_x(fx), y1, grid);
        cv.line(x0, map_y(fy), x1, map_y(fy), grid);
    }
    cv.rect(x0, y1, x1, y0, axis);

    for (const auto& s : series) {
        for (size_t i = 0; i + 1 < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i]) || !std::isfinite(s.y[i + 1])) continue;
            cv.line(map_x(s.x[i]), map_y(std::clamp(s.y[i], y_min, y_max)),
                    map_x(s.x[i + 1]), map_y(std::clamp(s.y[i + 1], y_min, y_max)), s.color);
        }
        if (s.x.size() == 1)
            cv.dot(static_cast<int>(map_x(s.x[0])), static_cast<int>(map_y(s.y[0])), s.color, 2);
    }
    io::write_png(path, cv.image());
}

namespace {
Rgb colormap(double t) {  // dark-to-hot ramp over [0,1]
    t = std::clamp(t, 0.0, 1.0);
    struct Stop {
        double t;
        double r, g, b;
    };
    static const Stop stops[] = {{0.0, 0, 0, 0},
                                 {0.25, 0.22, 0.05, 0.35},
                                 {0.5, 0.65, 0.16, 0.29},
                                 {0.75, 0.95, 0.55, 0.13},
                                 {1.0, 0.99, 0.99, 0.75}};
    for (int i = 0; i < 4; ++i) {
        if (t <= stops[i + 1].t) {
            const double u = (t - stops[i].t) / (stops[i + 1].t - stops[i].t);
            return {static_cast<std::uint8_t>(255 * (stops[i].r + u * (stops[i + 1].r - stops[i].r))),
                    static_cast<std::uint8_t>(255 * (stops[i].g + u * (stops[i + 1].g - stops[i].g))),
                    static_cast<std::uint8_t>(255 * (stops[i].b + u * (stops[i + 1].b - stops[i].b)))};
        }
    }
    return {255, 255, 255};
}

Rgb hsv(double h, double s, double v) {
    const double c = v * s;
    const double hp = h / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    return {static_cast<std::uint8_t>(255 * (r + m)), static_cast<std::uint8_t>(255 * (g + m)),
            static_cast<std::uint8_t>(255 * (b + m))};
}
}  // namespace

void heatmap(const std::string& path, const Eigen::ArrayXXd& values, double lo, double hi,
             int scale) {
    io::Image8 img(static_cast<int>(values.cols()) * scale,
                   static_cast<int>(values.rows()) * scale);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double v = values(y / scale, x / scale);
            const Rgb c = std::isfinite(v) ? colormap((v - lo) / (hi - lo)) : Rgb{0, 0, 0};
            auto* p = img.at(x, y);
            p[0] = c.r; p[1] = c.g; p[2] = c.b;
        }
    io::write_png(path, img);
}

void flow_panel(const std::string& path, const Eigen::ArrayXXd& du, const Eigen::ArrayXXd& dv,
                double max_magnitude, int scale) {
    io::Image8 img(static_cast<int>(du.cols()) * scale, static_cast<int>(du.rows()) * scale);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double u = du(y / scale, x / scale);
            const double v = dv(y / scale, x / scale);
            const double mag = std::min(1.0, std::hypot(u, v) / max_magnitude);
            double ang = std::atan2(v, u) * 180.0 / M_PI;
            if (ang < 0) ang += 360.0;
            const Rgb c = hsv(ang, mag, 1.0);
            auto* p = img.at(x, y);
            p[0] = c.r; p[1] = c.g; p[2] = c.b;
        }
    io::write_png(path, img);
}

void gray_panel(const std::string& path, const Eigen::ArrayXXd& values, int scale) {
    io::Image8 img(static_cast<int>(values.cols()) * scale,
                   static_cast<int>(values.rows()) * scale);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double v = std::clamp(values(y / scale, x / scale), 0.0, 1.0);
            const auto g = static_cast<std::uint8_t>(std::lround(v * 255.0));
            auto* p = img.at(x, y);
            p[0] = g; p[1] = g; p[2] = g;
        }
    io::write_png(path, img);
}

}  // namespace monoflow::plot
