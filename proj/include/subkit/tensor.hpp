#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "subkit/common.hpp"

namespace subkit {

// Dense row-major tensor of 64-bit floats. Training runs entirely in binary64;
// the half-precision path lives in halfprec and stores bit patterns separately.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != static_cast<std::size_t>(numel_of(shape)))
            throw DataError("tensor: data length does not match shape");
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<std::int64_t> s) {
        auto n = numel_of(s);
        return Tensor{std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0)};
    }

    static Tensor full(std::vector<std::int64_t> s, double v) {
        auto n = numel_of(s);
        return Tensor{std::move(s), std::vector<double>(static_cast<std::size_t>(n), v)};
    }

    static Tensor scalar(double v) { return Tensor{{1}, {v}}; }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    bool is_scalar() const { return data.size() == 1; }

    // 2-D accessors; most of the engine works on [rows x cols] matrices.
    std::int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    double& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols() + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * cols() + c)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

}  // namespace subkit
