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

#include "divreg/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace divreg {

template <typename T>
void adam_step(ParamSet<T> &params, const ParamSet<T> &grads, AdamState<T> &state, const AdamConfig &cfg) {
    if (!(cfg.lr > 0.0)) throw std::invalid_argument("adam: lr must be positive");
    for (const auto &[name, p] : params) {
        const auto it = grads.find(name);
        if (it == grads.end() || it->second.shape() != p.shape()) throw ShapeError("adam: gradient missing or misshaped for " + name);
    }
    if (state.m.empty()) {
        state.m = zeros_like(params);
        state.v = zeros_like(params);
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (auto &[name, p] : params) {
        const Tensor<T> &g = grads.at(name);
        Tensor<T> &m = state.m.at(name);
        Tensor<T> &v = state.v.at(name);
        if (m.shape() != p.shape() || v.shape() != p.shape()) throw ShapeError("adam: state shape mismatch for " + name);
        for (Index i = 0; i < p.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / bc1, vhat = vi / bc2;
            p[i] = static_cast<T>(static_cast<double>(p[i]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

template <typename T>
void ema_update(ParamSet<T> &ema, const ParamSet<T> &params, double decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("ema: decay must lie in [0, 1)");
    if (ema.empty()) {
        ema = params;
        return;
    }
    for (const auto &[name, p] : params) {
        auto it = ema.find(name);
        if (it == ema.end() || it->second.shape() != p.shape()) throw ShapeError("ema: shape mismatch for " + name);
        Tensor<T> &e = it->second;
        for (Index i = 0; i < p.size(); ++i) {
            e[i] = static_cast<T>(decay * static_cast<double>(e[i]) + (1.0 - decay) * static_cast<double>(p[i]));
        }
    }
}

template <typename T>
void export_adam(const AdamState<T> &state, const std::string &prefix, ParamSet<double> &out, nlohmann::json &meta) {
    for (const auto &[name, m] : state.m) out[prefix + ".m/" + name] = m.template cast<double>();
    for (const auto &[name, v] : state.v) out[prefix + ".v/" + name] = v.template cast<double>();
    meta[prefix + ".step"] = state.step;
}

template <typename T>
AdamState<T> import_adam(const ParamSet<double> &in, const std::string &prefix, const nlohmann::json &meta) {
    AdamState<T> s;
    const std::string pm = prefix + ".m/", pv = prefix + ".v/";
    for (const auto &[name, t] : in) {
        if (name.rfind(pm, 0) == 0) s.m[name.substr(pm.size())] = t.template cast<T>();
        if (name.rfind(pv, 0) == 0) s.v[name.substr(pv.size())] = t.template cast<T>();
    }
    s.step = meta.value(prefix + ".step", std::int64_t{0});
    return s;
}

#define DIVREG_INSTANTIATE_OPTIM(T)                                                                             \
    template void adam_step(ParamSet<T> &, const ParamSet<T> &, AdamState<T> &, const AdamConfig &);            \
    template void ema_update(ParamSet<T> &, const ParamSet<T> &, double);                                       \
    template void export_adam(const AdamState<T> &, const std::string &, ParamSet<double> &, nlohmann::json &); \
    template AdamState<T> import_adam(const ParamSet<double> &, const std::string &, const nlohmann::json &);

DIVREG_INSTANTIATE_OPTIM(float)
DIVREG_INSTANTIATE_OPTIM(double)

} // namespace divreg
