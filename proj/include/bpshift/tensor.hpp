#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace bpshift {

// Dense row-major tensor of doubles. Rank is 1 or 2 in practice: vectors for
// dense layers, [channels, length] planes for convolutional ones.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s);
    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
    static Tensor vec(std::vector<double> values);

    std::size_t numel() const;
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t k) const { return shape[k]; }

    double& operator()(std::size_t i) { return data[i]; }
    double operator()(std::size_t i) const { return data[i]; }
    double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    double* row(std::size_t i) { return data.data() + i * shape[1]; }
    const double* row(std::size_t i) const { return data.data() + i * shape[1]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    void fill(double v);
    void zero() { fill(0.0); }
};

std::string shape_str(const std::vector<std::size_t>& shape);
void require_shape(const Tensor& t, const std::vector<std::size_t>& shape, const char* what);

} // namespace bpshift
