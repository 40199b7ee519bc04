#pragma once

// Finite-difference oracle for gradient tests. Evaluates the function on plain
// (tape-free) tensors only, so it shares no code path with Tape::backward.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "unitslab/numcore/tensor.hpp"

namespace unitslab::testing {

using numcore::Tensor;
using ScalarFn = std::function<double(const std::vector<Tensor>&)>;

/// Central differences d f / d inputs[k] with step h, for every element.
inline std::vector<Tensor> central_differences(const ScalarFn& f, std::vector<Tensor> inputs, double h = 1e-5) {
    std::vector<Tensor> grads;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor g = Tensor::zeros(inputs[k].shape());
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double orig = inputs[k][i];
            inputs[k].mutable_data()[i] = orig + h;
            const double up = f(inputs);
            inputs[k].mutable_data()[i] = orig - h;
            const double down = f(inputs);
            inputs[k].mutable_data()[i] = orig;
            g.mutable_data()[i] = (up - down) / (2.0 * h);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

/// max |a - b| / max(max |a|, max |b|); zero when both are identically zero.
inline double max_relative_error(const Tensor& a, const Tensor& b) {
    double diff = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    return scale == 0.0 ? diff : diff / scale;
}

} // namespace unitslab::testing
