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

#include "divreg/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace divreg {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

template <typename T>
BoundParams<T>::BoundParams(Tape<T> &tape, const ParamSet<T> &params, bool requires_grad) {
    for (const auto &[name, value] : params) {
        vars_.emplace(name, requires_grad ? tape.variable(value) : tape.constant(value));
    }
}

template <typename T>
BoundParams<T> BoundParams<T>::from_vars(std::map<std::string, Var<T>> vars) {
    BoundParams out;
    out.vars_ = std::move(vars);
    return out;
}

template <typename T>
const Var<T> &BoundParams<T>::operator[](const std::string &name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
}

template <typename T>
ParamSet<T> BoundParams<T>::gradients() const {
    ParamSet<T> out;
    for (const auto &[name, v] : vars_) out.emplace(name, v.tape().grad(v));
    return out;
}

template <typename T>
ParamSet<T> zeros_like(const ParamSet<T> &p) {
    ParamSet<T> out;
    for (const auto &[name, t] : p) out.emplace(name, Tensor<T>(t.shape()));
    return out;
}

template <typename T>
bool all_finite(const ParamSet<T> &p) {
    for (const auto &[name, t] : p) {
        if (!t.all_finite()) return false;
    }
    return true;
}

template <typename T>
Index parameter_count(const ParamSet<T> &p) {
    Index n = 0;
    for (const auto &[name, t] : p) n += t.size();
    return n;
}

template <typename To, typename From>
ParamSet<To> cast_params(const ParamSet<From> &p) {
    ParamSet<To> out;
    for (const auto &[name, t] : p) out.emplace(name, t.template cast<To>());
    return out;
}

template <>
const char *dtype_name<float>() { return "f32"; }
template <>
const char *dtype_name<double>() { return "f64"; }

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt) {
    if (ckpt.dtype != "f32" && ckpt.dtype != "f64") throw std::invalid_argument("checkpoint dtype must be f32 or f64");
    const std::size_t elem = ckpt.dtype == "f32" ? 4 : 8;
    nlohmann::json manifest;
    manifest["format"] = "divreg-params";
    manifest["version"] = 1;
    manifest["dtype"] = ckpt.dtype;
    manifest["meta"] = ckpt.meta;
    nlohmann::json list = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto &[name, t] : ckpt.tensors) {
        list.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += static_cast<std::size_t>(t.size()) * elem;
    }
    manifest["tensors"] = list;
    manifest["payload_bytes"] = offset;

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
    os << manifest.dump() << '\n';
    for (const auto &[name, t] : ckpt.tensors) {
        if (elem == 4) {
            std::vector<float> buf(t.values().begin(), t.values().end());
            os.write(reinterpret_cast<const char *>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
        } else {
            os.write(reinterpret_cast<const char *>(t.data()), static_cast<std::streamsize>(t.size() * 8));
        }
    }
    if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("checkpoint has no manifest: " + path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception &e) {
        throw std::runtime_error("malformed checkpoint manifest in " + path.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "divreg-params") throw std::runtime_error("not a divreg checkpoint: " + path.string());
    Checkpoint ck;
    ck.dtype = manifest.at("dtype").get<std::string>();
    ck.meta = manifest.value("meta", nlohmann::json::object());
    const std::size_t elem = ck.dtype == "f32" ? 4 : ck.dtype == "f64" ? 8 : 0;
    if (elem == 0) throw std::runtime_error("unsupported checkpoint dtype " + ck.dtype);
    std::string payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (payload.size() != manifest.at("payload_bytes").get<std::size_t>()) {
        throw std::runtime_error("checkpoint payload size mismatch in " + path.string());
    }
    for (const auto &entry : manifest.at("tensors")) {
        Shape shape = entry.at("shape").get<Shape>();
        const std::size_t offset = entry.at("offset").get<std::size_t>();
        const auto n = static_cast<std::size_t>(shape_size(shape));
        if (offset + n * elem > payload.size()) throw std::runtime_error("checkpoint tensor exceeds payload");
        std::vector<double> values(n);
        if (elem == 4) {
            std::vector<float> buf(n);
            std::memcpy(buf.data(), payload.data() + offset, n * 4);
            std::copy(buf.begin(), buf.end(), values.begin());
        } else {
            std::memcpy(values.data(), payload.data() + offset, n * 8);
        }
        ck.tensors.emplace(entry.at("name").get<std::string>(), Tensor<double>(std::move(shape), std::move(values)));
    }
    return ck;
}

template class BoundParams<float>;
template class BoundParams<double>;
template ParamSet<float> zeros_like(const ParamSet<float> &);
template ParamSet<double> zeros_like(const ParamSet<double> &);
template bool all_finite(const ParamSet<float> &);
template bool all_finite(const ParamSet<double> &);
template Index parameter_count(const ParamSet<float> &);
template Index parameter_count(const ParamSet<double> &);
template ParamSet<float> cast_params(const ParamSet<double> &);
template ParamSet<double> cast_params(const ParamSet<float> &);
template ParamSet<float> cast_params(const ParamSet<float> &);
template ParamSet<double> cast_params(const ParamSet<double> &);

} // namespace divreg
