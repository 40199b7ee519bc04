#pragma once

#include "unitslab/numcore/tensor.hpp"

namespace unitslab::numcore {

/// Clamp applied to predictions before taking logarithms in masked_bce.
inline constexpr double kBceEpsilon = 1e-7;

// Differentiable primitives. When any input is tape-attached the result is
// recorded on that tape; otherwise the call is a plain evaluation.

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// 3x3 convolution, stride 1, zero padding 1.
/// x: [Cin, H, W], weight: [Cout, Cin, 3, 3], bias: [Cout] -> [Cout, H, W].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

/// Mean over all elements; rank-0 result.
Tensor mean(const Tensor& a);

/// Mean binary cross-entropy over pixels where mask == 1. Predictions are
/// clamped to [kBceEpsilon, 1 - kBceEpsilon]. Target and mask are constants
/// with values in {0, 1}. An all-zero mask yields a zero loss.
Tensor masked_bce(const Tensor& pred, const Tensor& target, const Tensor& mask);

} // namespace unitslab::numcore
