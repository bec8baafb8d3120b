#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "ccam/error.hpp"

namespace ccam {

// Dense row-major double tensor. Small by design: explanation jobs work on
// single images, so there is no batching dimension anywhere.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(count(shape)), fill);
    }

    static Tensor vec(std::vector<double> v) {
        Tensor t;
        t.shape = {static_cast<int>(v.size())};
        t.data = std::move(v);
        return t;
    }

    static std::int64_t count(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    double& at2(int i, int j) { return data[static_cast<std::size_t>(i) * dim(1) + j]; }
    double at2(int i, int j) const { return data[static_cast<std::size_t>(i) * dim(1) + j]; }

    double& at3(int c, int i, int j) {
        return data[(static_cast<std::size_t>(c) * dim(1) + i) * dim(2) + j];
    }
    double at3(int c, int i, int j) const {
        return data[(static_cast<std::size_t>(c) * dim(1) + i) * dim(2) + j];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }
};

inline double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline std::vector<double> normalized(const std::vector<double>& v) {
    double n = l2_norm(v);
    std::vector<double> out(v.size(), 0.0);
    if (n > 0.0) {
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    }
    return out;
}

}  // namespace ccam
