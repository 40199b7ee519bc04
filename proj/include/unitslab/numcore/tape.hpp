#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "unitslab/numcore/params.hpp"
#include "unitslab/numcore/tensor.hpp"

namespace unitslab::numcore {

enum class OpKind : std::uint8_t {
    Leaf,
    Add,
    Scale,
    Conv2d,
    Relu,
    Sigmoid,
    Mean,
    MaskedBce,
};

const char* op_name(OpKind kind) noexcept;

/// Append-only record of operations for reverse-mode differentiation.
///
/// Node inputs always have smaller indices than the node itself, so the
/// tape is a topological order. A tape is single-threaded and is meant to be
/// rebuilt for every optimization step; `clear` invalidates every tensor that
/// still refers to it.
class Tape {
public:
    static constexpr std::int32_t kConstant = -1;

    struct Node {
        OpKind kind = OpKind::Leaf;
        std::array<std::int32_t, 3> inputs{kConstant, kConstant, kConstant};
        std::vector<Tensor> saved;
        double scalar = 0.0;
        Shape shape;
        std::string name;
    };

    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Registers a differentiable leaf; the returned tensor is tape-attached.
    Tensor leaf(std::string name, const Tensor& value);

    /// Registers every parameter of `params` as a leaf named prefix + name.
    NamedTensors attach(const ParamSet& params, const std::string& prefix = "");

    /// Gradient of a scalar loss for every leaf, in leaf registration order.
    /// Leaves the loss does not depend on receive zero tensors.
    GradMap backward(const Tensor& loss) const;

    void clear() noexcept;
    std::size_t size() const noexcept { return nodes_.size(); }
    const Node& node(std::uint32_t index) const { return nodes_.at(index); }

    /// Validates that `t` lives on this tape and returns its node index,
    /// or kConstant for a detached tensor.
    std::int32_t input_index(const Tensor& t) const;

    /// Appends a node; used by operations. Returns `value` attached to it.
    Tensor record(Node node, Tensor value);

private:
    std::uint64_t id_;
    std::uint64_t generation_ = 0;
    std::vector<Node> nodes_;
    std::vector<std::uint32_t> leaves_;
};

} // namespace unitslab::numcore
