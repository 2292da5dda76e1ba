#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pase {

/// Dense row-major matrix of doubles. The only numeric container in the
/// library; vectors are 1xN or Nx1 tensors.
struct Tensor2 {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor2() = default;
    Tensor2(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    static Tensor2 from_rows(std::size_t r, std::size_t c,
                             std::initializer_list<double> values) {
        if (values.size() != r * c)
            throw std::invalid_argument("Tensor2::from_rows: initializer size " +
                                        std::to_string(values.size()) + " != " +
                                        std::to_string(r * c));
        Tensor2 t(r, c);
        std::size_t i = 0;
        for (double v : values) t.data[i++] = v;
        return t;
    }

    static Tensor2 scalar(double v) {
        Tensor2 t(1, 1);
        t.data[0] = v;
        return t;
    }

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return rows * cols; }
    bool same_shape(const Tensor2& o) const {
        return rows == o.rows && cols == o.cols;
    }
    bool is_scalar() const { return rows == 1 && cols == 1; }
    double scalar_value() const { return data[0]; }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }
};

inline bool all_finite(const Tensor2& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

inline Tensor2 identity_matrix(std::size_t n) {
    Tensor2 t(n, n);
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

inline Tensor2 ones(std::size_t r, std::size_t c) { return Tensor2(r, c, 1.0); }

inline Tensor2 randn(std::size_t r, std::size_t c, std::mt19937_64& rng,
                     double stddev = 1.0, double mean = 0.0) {
    Tensor2 t(r, c);
    std::normal_distribution<double> dist(mean, stddev);
    for (double& v : t.data) v = dist(rng);
    return t;
}

inline Tensor2 rand_uniform(std::size_t r, std::size_t c, std::mt19937_64& rng,
                            double lo, double hi) {
    Tensor2 t(r, c);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data) v = dist(rng);
    return t;
}

/// Glorot-style init for a weight matrix mapping fan_in -> fan_out.
inline Tensor2 glorot_init(std::size_t fan_in, std::size_t fan_out,
                           std::mt19937_64& rng) {
    double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    return randn(fan_in, fan_out, rng, stddev);
}

inline double max_abs_diff(const Tensor2& a, const Tensor2& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("max_abs_diff: shape mismatch " +
                                    a.shape_str() + " vs " + b.shape_str());
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace pase
