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

#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "divreg/tensor.hpp"

namespace divreg {

template <typename T>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid as long as the tape lives.
template <typename T>
class Var {
public:
    Var() = default;
    Var(Tape<T> *tape, int id) : tape_(tape), id_(id) {}

    bool valid() const noexcept { return tape_ != nullptr; }
    Tape<T> &tape() const { return *tape_; }
    int id() const noexcept { return id_; }
    const Tensor<T> &value() const { return tape_->value(id_); }
    const Shape &shape() const { return value().shape(); }

private:
    Tape<T> *tape_ = nullptr;
    int id_ = -1;
};

/// Linear execution record for reverse-mode differentiation.
///
/// Every primitive appends one node holding its output value and a closure
/// that pushes the output adjoint into the adjoints of its inputs. backward()
/// walks the record once in reverse order. Nodes whose inputs are all
/// constants carry no closure and are skipped.
template <typename T>
class Tape {
public:
    using Backward = std::function<void(Tape &, const Tensor<T> &out_value, const Tensor<T> &out_grad)>;

    Tape() = default;
    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;

    /// Leaves; both throw NonFiniteError on NaN/Inf values.
    Var<T> constant(Tensor<T> value);
    Var<T> variable(Tensor<T> value);

    /// Appends a primitive's output. Throws NonFiniteError if `value` holds
    /// NaN/Inf, tagging the message with `op`.
    Var<T> record(const char *op, Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward);
    Var<T> record(const char *op, Tensor<T> value, const std::vector<Var<T>> &inputs, Backward backward);

    const Tensor<T> &value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
    bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
    bool requires_grad(const Var<T> &v) const { return requires_grad(v.id()); }

    /// Adjoint accumulator for node `id`, zero-initialised on first access.
    Tensor<T> &grad_buffer(int id);
    Tensor<T> &grad_buffer(const Var<T> &v) { return grad_buffer(v.id()); }

    /// Accumulated adjoint, or zeros when backward never reached the node.
    Tensor<T> grad(const Var<T> &v) const;

    /// Seeds d(output)/d(output) = 1 and propagates. `output` must hold one element.
    void backward(const Var<T> &output);

    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t adjoint_evaluations() const noexcept { return adjoint_evaluations_; }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        Backward backward;
    };

    Var<T> push(Tensor<T> value, bool requires_grad, Backward backward);

    std::deque<Node> nodes_;
    std::size_t adjoint_evaluations_ = 0;
};

extern template class Tape<float>;
extern template class Tape<double>;

} // namespace divreg
