/*
 * Copyright 2026 The divreg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace divreg {

using Index = std::int64_t;
using Shape = std::vector<Index>;

/// Thrown when two operands disagree on shape.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a computation produces NaN or Inf.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

Index shape_size(const Shape &shape);
std::string shape_string(const Shape &shape);

/// Dense row-major array, last axis fastest. Network tensors use the
/// layout (batch, channels, spatial...).
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), values_(static_cast<std::size_t>(shape_size(shape_)), fill) {}

    Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
        if (static_cast<Index>(values_.size()) != shape_size(shape_)) {
            throw ShapeError("tensor data length " + std::to_string(values_.size()) +
                             " does not match shape " + shape_string(shape_));
        }
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    const Shape &shape() const noexcept { return shape_; }
    int ndim() const noexcept { return static_cast<int>(shape_.size()); }
    Index dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
    Index size() const noexcept { return static_cast<Index>(values_.size()); }
    bool empty() const noexcept { return values_.empty(); }

    Index batch() const { return dim(0); }
    Index channels() const { return dim(1); }
    int spatial_rank() const { return ndim() - 2; }
    Shape spatial_shape() const { return Shape(shape_.begin() + 2, shape_.end()); }
    Index spatial_size() const { return shape_size(spatial_shape()); }

    T *data() noexcept { return values_.data(); }
    const T *data() const noexcept { return values_.data(); }
    std::span<T> span() noexcept { return values_; }
    std::span<const T> span() const noexcept { return values_; }
    std::vector<T> &values() noexcept { return values_; }
    const std::vector<T> &values() const noexcept { return values_; }

    T &operator[](Index i) { return values_[static_cast<std::size_t>(i)]; }
    const T &operator[](Index i) const { return values_[static_cast<std::size_t>(i)]; }

    /// Value of a single-element tensor.
    T item() const {
        if (values_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
        return values_[0];
    }

    void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

    bool all_finite() const {
        for (T v : values_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
    }

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != size()) throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        return Tensor(std::move(shape), values_);
    }

    friend bool operator==(const Tensor &a, const Tensor &b) { return a.shape_ == b.shape_ && a.values_ == b.values_; }

private:
    Shape shape_;
    std::vector<T> values_;
};

/// Spatial extent padded to three axes (depth, height, width) so that kernels
/// can be written once for rank 1, 2 and 3.
struct Extent3 {
    Index d = 1;
    Index h = 1;
    Index w = 1;

    Index size() const { return d * h * w; }
    static Extent3 of(const Shape &spatial);
    Shape to_shape(int rank) const;
};

} // namespace divreg
