#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include <Eigen/Core>

#include "monoflow/common.hpp"

namespace monoflow::nn {

// Dense double tensor, row-major. Shapes in use: {n} vectors, {1} scalars,
// {C,H,W} feature maps.
struct Tensor {
    std::vector<int> shape;
    Eigen::ArrayXd data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data = Eigen::ArrayXd::Zero(numel_of(shape));
    }
    Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
        data = Eigen::ArrayXd::Constant(numel_of(shape), fill);
    }

    static Tensor scalar(double v) {
        Tensor t({1});
        t.data[0] = v;
        return t;
    }

    static std::int64_t numel_of(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw ConfigError("tensor: non-positive dimension");
            n *= d;
        }
        return n;
    }

    std::int64_t numel() const { return data.size(); }
    int dim(size_t i) const { return shape.at(i); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    // {C,H,W} accessors
    int channels() const { return shape.size() == 3 ? shape[0] : 1; }
    int height() const { return shape.size() == 3 ? shape[1] : shape.at(0); }
    int width() const { return shape.size() == 3 ? shape[2] : shape.at(1); }
    std::int64_t at3(int c, int y, int x) const {
        return (static_cast<std::int64_t>(c) * shape[1] + y) * shape[2] + x;
    }

    double& operator[](std::int64_t i) { return data[i]; }
    double operator[](std::int64_t i) const { return data[i]; }
};

}  // namespace monoflow::nn
