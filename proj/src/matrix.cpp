#include "grovle/matrix.hpp"

#include <cmath>
#include <string>

#include "grovle/error.hpp"

namespace grovle {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw DataError("matrix data has " + std::to_string(data_.size()) + " entries, expected " +
                        std::to_string(rows * cols));
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace grovle
