#ifndef ALIGNMAP_MATRIX_HPP
#define ALIGNMAP_MATRIX_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "error.hpp"

namespace alignmap {

/**
 * @brief Dense row-major matrix that owns its storage.
 *
 * @tparam Value_ Element type, usually `float` for activations and positions.
 */
template<typename Value_>
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t nrow, std::size_t ncol) : my_nrow(nrow), my_ncol(ncol), my_values(nrow * ncol) {}

    Matrix(std::size_t nrow, std::size_t ncol, std::vector<Value_> values) :
        my_nrow(nrow), my_ncol(ncol), my_values(std::move(values))
    {
        if (my_values.size() != nrow * ncol) {
            throw InvalidArgument("matrix storage does not match " + std::to_string(nrow) + "x" + std::to_string(ncol));
        }
    }

    std::size_t rows() const { return my_nrow; }
    std::size_t cols() const { return my_ncol; }
    bool empty() const { return my_values.empty(); }

    std::span<const Value_> row(std::size_t r) const {
        return std::span<const Value_>(my_values.data() + r * my_ncol, my_ncol);
    }
    std::span<Value_> row(std::size_t r) {
        return std::span<Value_>(my_values.data() + r * my_ncol, my_ncol);
    }

    const Value_& operator()(std::size_t r, std::size_t c) const { return my_values[r * my_ncol + c]; }
    Value_& operator()(std::size_t r, std::size_t c) { return my_values[r * my_ncol + c]; }

    const std::vector<Value_>& values() const { return my_values; }
    std::vector<Value_>& values() { return my_values; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t my_nrow = 0, my_ncol = 0;
    std::vector<Value_> my_values;
};

/**
 * @return Index of the first non-finite entry in `m`, or `m.values().size()` if all entries are finite.
 */
template<typename Value_>
std::size_t first_nonfinite(const Matrix<Value_>& m) {
    const auto& v = m.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            return i;
        }
    }
    return v.size();
}

/** Select rows `which` (in that order) from `m`. */
template<typename Value_>
Matrix<Value_> take_rows(const Matrix<Value_>& m, std::span<const std::size_t> which) {
    Matrix<Value_> out(which.size(), m.cols());
    for (std::size_t r = 0; r < which.size(); ++r) {
        auto src = m.row(which[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

}

#endif
