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

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

#include "divreg/tape.hpp"

namespace divreg {

/// Named parameter tensors, ordered by name.
template <typename T>
using ParamSet = std::map<std::string, Tensor<T>>;

/// Parameter tensors bound to a tape as differentiable leaves.
template <typename T>
class BoundParams {
public:
    BoundParams() = default;
    BoundParams(Tape<T> &tape, const ParamSet<T> &params, bool requires_grad = true);
    /// Wraps nodes that already live on a tape.
    static BoundParams from_vars(std::map<std::string, Var<T>> vars);

    const Var<T> &operator[](const std::string &name) const;
    bool contains(const std::string &name) const { return vars_.count(name) != 0; }

    /// Adjoints of every bound parameter after tape.backward().
    ParamSet<T> gradients() const;

private:
    std::map<std::string, Var<T>> vars_;
};

template <typename T>
ParamSet<T> zeros_like(const ParamSet<T> &p);

template <typename T>
bool all_finite(const ParamSet<T> &p);

template <typename T>
Index parameter_count(const ParamSet<T> &p);

template <typename To, typename From>
ParamSet<To> cast_params(const ParamSet<From> &p);

/// Checkpoint file: one line of compact JSON (the manifest) terminated by
/// '\n', followed by the tensors' raw little-endian payloads concatenated in
/// manifest order. The manifest lists name, shape, dtype and byte offset of
/// each tensor plus a free-form "meta" object.
struct Checkpoint {
    ParamSet<double> tensors;
    nlohmann::json meta = nlohmann::json::object();
    std::string dtype = "f64";
};

/// Writes `tensors` with element type `dtype` ("f32" or "f64").
void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt);
Checkpoint load_checkpoint(const std::filesystem::path &path);

template <typename T>
const char *dtype_name();

} // namespace divreg
