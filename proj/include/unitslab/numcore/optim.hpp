#pragma once

#include "unitslab/numcore/params.hpp"

namespace unitslab::numcore {

/// One SGD-with-momentum step: v <- momentum * v + g, p <- p - lr * v.
///
/// Every gradient must name an existing parameter of the same shape.
/// Parameters without a gradient (frozen) keep both value and momentum.
/// The step counter always advances.
ParamSet sgd_step(const ParamSet& params, const GradMap& grads, double lr, double momentum);

} // namespace unitslab::numcore
