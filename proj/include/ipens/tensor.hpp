#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ipens/error.hpp"

namespace ipens {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

// Dense row-major array. Images are laid out height-width-channel, batches
// as N-H-W-C. A default-constructed tensor is the scalar 0.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() : data_(1, T{}) {}

    explicit BasicTensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
        check_extents();
        data_.assign(shape_size(shape_), fill);
    }

    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_extents();
        if (data_.size() != shape_size(shape_))
            throw DimensionError("data", "shape " + shape_string(shape_) + " needs " +
                                             std::to_string(shape_size(shape_)) + " values, got " +
                                             std::to_string(data_.size()));
    }

    static BasicTensor scalar(T v) { return BasicTensor(Shape{}, std::vector<T>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    // Same data, new shape with equal element count.
    BasicTensor reshaped(Shape shape) const {
        return BasicTensor(std::move(shape), data_);
    }

    template <typename U>
    BasicTensor<U> cast() const {
        return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const BasicTensor& other) const = default;

private:
    void check_extents() const {
        for (std::size_t i = 0; i < shape_.size(); ++i)
            if (shape_[i] == 0) throw DimensionError(std::to_string(i), "extents must be positive");
    }

    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Bitwise equality, distinguishing -0.0 from 0.0 and matching NaN payloads.
template <typename T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    const auto da = a.data();
    const auto db = b.data();
    return std::memcmp(da.data(), db.data(), da.size_bytes()) == 0;
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
    for (T v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace ipens
