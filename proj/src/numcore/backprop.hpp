#pragma once

#include <array>
#include <span>
#include <vector>

#include "unitslab/numcore/tape.hpp"

namespace unitslab::numcore::detail {

/// Adds the vector-Jacobian product of `node` with `grad_out` into the
/// gradient buffers of its inputs. Null buffers belong to constant inputs.
void backprop(const Tape::Node& node, std::span<const double> grad_out,
              const std::array<std::vector<double>*, 3>& grad_in);

} // namespace unitslab::numcore::detail
