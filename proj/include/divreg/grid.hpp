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

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "divreg/tensor.hpp"

namespace divreg {

using Spacing = std::vector<double>;

/// Regular grid of voxels with physical spacing (mm). `dims` lists axes
/// slowest first; data is row-major with the last axis fastest.
template <typename V>
class VoxelGrid {
public:
    using value_type = V;

    VoxelGrid() = default;
    /// Throws std::invalid_argument when any invariant is violated.
    VoxelGrid(Shape dims, Spacing spacing, std::vector<V> data);

    static VoxelGrid filled(Shape dims, Spacing spacing, V value = V{});
    static VoxelGrid filled(Shape dims, V value = V{}) { return filled(dims, Spacing(dims.size(), 1.0), value); }

    const Shape &dims() const noexcept { return dims_; }
    const Spacing &spacing() const noexcept { return spacing_; }
    int rank() const noexcept { return static_cast<int>(dims_.size()); }
    Index size() const noexcept { return static_cast<Index>(data_.size()); }

    std::span<const V> data() const noexcept { return data_; }
    std::span<V> data() noexcept { return data_; }
    const std::vector<V> &values() const noexcept { return data_; }

    V &operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
    const V &operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

    Index offset(std::span<const Index> idx) const;
    V &at(std::initializer_list<Index> idx) { return data_[static_cast<std::size_t>(offset(idx))]; }
    const V &at(std::initializer_list<Index> idx) const { return data_[static_cast<std::size_t>(offset(idx))]; }

    template <typename U>
    bool same_grid(const VoxelGrid<U> &other) const {
        return dims_ == other.dims() && spacing_ == other.spacing();
    }

    friend bool operator==(const VoxelGrid &a, const VoxelGrid &b) {
        return a.dims_ == b.dims_ && a.spacing_ == b.spacing_ && a.data_ == b.data_;
    }

private:
    Shape dims_;
    Spacing spacing_;
    std::vector<V> data_;
};

using Image = VoxelGrid<float>;
using LabelMap = VoxelGrid<std::int32_t>;

extern template class VoxelGrid<float>;
extern template class VoxelGrid<std::int32_t>;

/// Dense displacement field in voxel units. Component k displaces along array
/// axis k; layout is (component, spatial...). Warps pull: out(x) = in(x + u(x)).
class DisplacementField {
public:
    DisplacementField() = default;
    DisplacementField(Shape dims, Spacing spacing, std::vector<double> data);

    static DisplacementField zeros(Shape dims, Spacing spacing);
    static DisplacementField zeros(Shape dims) { return zeros(dims, Spacing(dims.size(), 1.0)); }
    static DisplacementField constant(Shape dims, Spacing spacing, std::span<const double> shift);

    const Shape &dims() const noexcept { return dims_; }
    const Spacing &spacing() const noexcept { return spacing_; }
    int rank() const noexcept { return static_cast<int>(dims_.size()); }
    Index voxels() const noexcept { return shape_size(dims_); }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    const std::vector<double> &values() const noexcept { return data_; }

    double &component(int axis, Index voxel) { return data_[static_cast<std::size_t>(axis * voxels() + voxel)]; }
    double component(int axis, Index voxel) const { return data_[static_cast<std::size_t>(axis * voxels() + voxel)]; }

    double mean_abs() const;

    friend bool operator==(const DisplacementField &a, const DisplacementField &b) {
        return a.dims_ == b.dims_ && a.spacing_ == b.spacing_ && a.data_ == b.data_;
    }

private:
    Shape dims_;
    Spacing spacing_;
    std::vector<double> data_;
};

/// Sorted distinct class ids.
std::vector<std::int32_t> label_classes(const LabelMap &lab);

/// Coordinates (slowest axis first) of a flat voxel index.
std::vector<Index> unravel(Index flat, const Shape &dims);

// Tensor bridges. Images become (N, 1, dims...), fields (N, rank, dims...).
template <typename T>
Tensor<T> to_tensor(const Image &img);
template <typename T>
Tensor<T> stack_images(std::span<const Image> imgs);
template <typename T>
Image image_from_tensor(const Tensor<T> &t, Index sample = 0, Spacing spacing = {});

template <typename T>
Tensor<T> to_tensor(const DisplacementField &f);
template <typename T>
DisplacementField field_from_tensor(const Tensor<T> &t, Index sample = 0, Spacing spacing = {});

} // namespace divreg
