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

#include "divreg/tape.hpp"

#include <sstream>

namespace divreg {

Index shape_size(const Shape &shape) {
    Index n = 1;
    for (Index d : shape) {
        if (d < 0) throw ShapeError("negative extent in shape " + shape_string(shape));
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Extent3 Extent3::of(const Shape &spatial) {
    if (spatial.empty() || spatial.size() > 3) {
        throw ShapeError("spatial rank must be 1..3, got shape " + shape_string(spatial));
    }
    Extent3 e;
    const auto r = spatial.size();
    e.w = spatial[r - 1];
    if (r >= 2) e.h = spatial[r - 2];
    if (r >= 3) e.d = spatial[r - 3];
    return e;
}

Shape Extent3::to_shape(int rank) const {
    switch (rank) {
    case 1: return {w};
    case 2: return {h, w};
    case 3: return {d, h, w};
    default: throw ShapeError("spatial rank must be 1..3");
    }
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, bool requires_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>(this, static_cast<int>(nodes_.size() - 1));
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    if (!value.all_finite()) throw NonFiniteError("non-finite constant");
    return push(std::move(value), false, {});
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
    if (!value.all_finite()) throw NonFiniteError("non-finite variable");
    return push(std::move(value), true, {});
}

template <typename T>
Var<T> Tape<T>::record(const char *op, Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
    return record(op, std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
}

template <typename T>
Var<T> Tape<T>::record(const char *op, Tensor<T> value, const std::vector<Var<T>> &inputs, Backward backward) {
    if (!value.all_finite()) {
        throw NonFiniteError(std::string("non-finite output from primitive '") + op + "'");
    }
    bool needs = false;
    for (const auto &in : inputs) {
        if (&in.tape() != this) throw std::logic_error(std::string(op) + ": operand belongs to another tape");
        needs = needs || requires_grad(in.id());
    }
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
}

template <typename T>
Tensor<T> &Tape<T>::grad_buffer(int id) {
    Node &n = nodes_.at(static_cast<std::size_t>(id));
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
}

template <typename T>
Tensor<T> Tape<T>::grad(const Var<T> &v) const {
    const Node &n = nodes_.at(static_cast<std::size_t>(v.id()));
    if (n.grad.empty()) return Tensor<T>(n.value.shape());
    return n.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T> &output) {
    if (output.value().size() != 1) {
        throw ShapeError("backward() needs a scalar output, got shape " + shape_string(output.shape()));
    }
    for (auto &n : nodes_) n.grad = Tensor<T>();
    adjoint_evaluations_ = 0;
    grad_buffer(output.id())[0] = T(1);
    for (int id = output.id(); id >= 0; --id) {
        Node &n = nodes_[static_cast<std::size_t>(id)];
        if (!n.backward || n.grad.empty()) continue;
        n.backward(*this, n.value, n.grad);
        ++adjoint_evaluations_;
    }
}

template class Tape<float>;
template class Tape<double>;

} // namespace divreg
