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

#include "divreg/grid.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace divreg {

namespace {

void check_geometry(const Shape &dims, const Spacing &spacing) {
    if (dims.size() < 1 || dims.size() > 3) throw std::invalid_argument("grid rank must be 1..3, got " + shape_string(dims));
    for (Index d : dims) {
        if (d < 1) throw std::invalid_argument("grid extents must be positive: " + shape_string(dims));
    }
    if (spacing.size() != dims.size()) throw std::invalid_argument("spacing has wrong number of components");
    for (double s : spacing) {
        if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("spacing components must be finite and positive");
    }
}

template <typename V>
void check_values(const std::vector<V> &data) {
    if constexpr (std::is_floating_point_v<V>) {
        for (V v : data) {
            if (!std::isfinite(v)) throw std::invalid_argument("image intensities must be finite");
        }
    } else {
        for (V v : data) {
            if (v < 0) throw std::invalid_argument("label ids must be non-negative");
        }
    }
}

} // namespace

template <typename V>
VoxelGrid<V>::VoxelGrid(Shape dims, Spacing spacing, std::vector<V> data)
    : dims_(std::move(dims)), spacing_(std::move(spacing)), data_(std::move(data)) {
    check_geometry(dims_, spacing_);
    if (static_cast<Index>(data_.size()) != shape_size(dims_)) {
        throw std::invalid_argument("grid data length " + std::to_string(data_.size()) + " does not match dims " + shape_string(dims_));
    }
    check_values(data_);
}

template <typename V>
VoxelGrid<V> VoxelGrid<V>::filled(Shape dims, Spacing spacing, V value) {
    const Index n = shape_size(dims);
    return VoxelGrid(std::move(dims), std::move(spacing), std::vector<V>(static_cast<std::size_t>(n), value));
}

template <typename V>
Index VoxelGrid<V>::offset(std::span<const Index> idx) const {
    if (idx.size() != dims_.size()) throw std::out_of_range("index rank mismatch");
    Index off = 0;
    for (std::size_t a = 0; a < idx.size(); ++a) {
        if (idx[a] < 0 || idx[a] >= dims_[a]) throw std::out_of_range("voxel index out of range");
        off = off * dims_[a] + idx[a];
    }
    return off;
}

template class VoxelGrid<float>;
template class VoxelGrid<std::int32_t>;

DisplacementField::DisplacementField(Shape dims, Spacing spacing, std::vector<double> data)
    : dims_(std::move(dims)), spacing_(std::move(spacing)), data_(std::move(data)) {
    check_geometry(dims_, spacing_);
    if (static_cast<Index>(data_.size()) != voxels() * rank()) {
        throw std::invalid_argument("field data length does not match rank * voxels");
    }
    for (double v : data_) {
        if (!std::isfinite(v)) throw std::invalid_argument("displacement components must be finite");
    }
}

DisplacementField DisplacementField::zeros(Shape dims, Spacing spacing) {
    const auto n = static_cast<std::size_t>(shape_size(dims) * static_cast<Index>(dims.size()));
    return DisplacementField(std::move(dims), std::move(spacing), std::vector<double>(n, 0.0));
}

DisplacementField DisplacementField::constant(Shape dims, Spacing spacing, std::span<const double> shift) {
    if (shift.size() != dims.size()) throw std::invalid_argument("shift must have one component per axis");
    DisplacementField f = zeros(std::move(dims), std::move(spacing));
    for (int a = 0; a < f.rank(); ++a)
        for (Index v = 0; v < f.voxels(); ++v) f.component(a, v) = shift[static_cast<std::size_t>(a)];
    return f;
}

double DisplacementField::mean_abs() const {
    if (data_.empty()) return 0.0;
    double acc = 0.0;
    for (double v : data_) acc += std::abs(v);
    return acc / static_cast<double>(data_.size());
}

std::vector<std::int32_t> label_classes(const LabelMap &lab) {
    std::set<std::int32_t> s(lab.values().begin(), lab.values().end());
    return {s.begin(), s.end()};
}

std::vector<Index> unravel(Index flat, const Shape &dims) {
    std::vector<Index> idx(dims.size());
    for (std::size_t a = dims.size(); a-- > 0;) {
        idx[a] = flat % dims[a];
        flat /= dims[a];
    }
    return idx;
}

template <typename T>
Tensor<T> to_tensor(const Image &img) {
    Shape s{1, 1};
    s.insert(s.end(), img.dims().begin(), img.dims().end());
    return Tensor<T>(s, std::vector<T>(img.values().begin(), img.values().end()));
}

template <typename T>
Tensor<T> stack_images(std::span<const Image> imgs) {
    if (imgs.empty()) throw std::invalid_argument("stack_images: empty batch");
    Shape s{static_cast<Index>(imgs.size()), 1};
    s.insert(s.end(), imgs[0].dims().begin(), imgs[0].dims().end());
    std::vector<T> data;
    data.reserve(static_cast<std::size_t>(shape_size(s)));
    for (const auto &im : imgs) {
        if (im.dims() != imgs[0].dims()) throw ShapeError("stack_images: dims differ within batch");
        data.insert(data.end(), im.values().begin(), im.values().end());
    }
    return Tensor<T>(std::move(s), std::move(data));
}

template <typename T>
Image image_from_tensor(const Tensor<T> &t, Index sample, Spacing spacing) {
    if (t.ndim() < 3 || t.channels() != 1) throw ShapeError("image_from_tensor: expected (N, 1, S...) got " + shape_string(t.shape()));
    const Shape dims = t.spatial_shape();
    if (spacing.empty()) spacing.assign(dims.size(), 1.0);
    const Index n = t.spatial_size();
    const T *src = t.data() + sample * n;
    return Image(dims, std::move(spacing), std::vector<float>(src, src + n));
}

template <typename T>
Tensor<T> to_tensor(const DisplacementField &f) {
    Shape s{1, f.rank()};
    s.insert(s.end(), f.dims().begin(), f.dims().end());
    return Tensor<T>(s, std::vector<T>(f.values().begin(), f.values().end()));
}

template <typename T>
DisplacementField field_from_tensor(const Tensor<T> &t, Index sample, Spacing spacing) {
    if (t.ndim() < 3 || t.channels() != t.spatial_rank()) {
        throw ShapeError("field_from_tensor: expected (N, rank, S...) got " + shape_string(t.shape()));
    }
    const Shape dims = t.spatial_shape();
    if (spacing.empty()) spacing.assign(dims.size(), 1.0);
    const Index n = t.spatial_size() * t.channels();
    const T *src = t.data() + sample * n;
    return DisplacementField(dims, std::move(spacing), std::vector<double>(src, src + n));
}

template Tensor<float> to_tensor<float>(const Image &);
template Tensor<double> to_tensor<double>(const Image &);
template Tensor<float> stack_images<float>(std::span<const Image>);
template Tensor<double> stack_images<double>(std::span<const Image>);
template Image image_from_tensor(const Tensor<float> &, Index, Spacing);
template Image image_from_tensor(const Tensor<double> &, Index, Spacing);
template Tensor<float> to_tensor<float>(const DisplacementField &);
template Tensor<double> to_tensor<double>(const DisplacementField &);
template DisplacementField field_from_tensor(const Tensor<float> &, Index, Spacing);
template DisplacementField field_from_tensor(const Tensor<double> &, Index, Spacing);

} // namespace divreg
