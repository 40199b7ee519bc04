#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "unitslab/numcore/tensor.hpp"

namespace unitslab::numcore {

/// Insertion-ordered collection of uniquely named tensors.
class NamedTensors {
public:
    using Entry = std::pair<std::string, Tensor>;

    void insert(std::string name, Tensor value);

    bool contains(std::string_view name) const noexcept { return find(name) != nullptr; }
    const Tensor* find(std::string_view name) const noexcept;
    Tensor* find(std::string_view name) noexcept;
    const Tensor& at(std::string_view name) const;
    Tensor& at(std::string_view name);

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    std::vector<std::string> names() const;

    auto begin() const noexcept { return entries_.begin(); }
    auto end() const noexcept { return entries_.end(); }
    auto begin() noexcept { return entries_.begin(); }
    auto end() noexcept { return entries_.end(); }

    bool same_bits(const NamedTensors& other) const noexcept;

private:
    std::vector<Entry> entries_;
};

using GradMap = NamedTensors;

/// One detector branch: named parameters, their momentum buffers and the
/// number of optimizer steps taken so far.
struct ParamSet {
    NamedTensors params;
    NamedTensors momentum;
    std::uint64_t step_count = 0;

    /// Adds a parameter with a zero momentum buffer of the same shape.
    void add(std::string name, Tensor value);

    std::size_t parameter_count() const noexcept;

    /// True when names, shapes and values (not momentum) coincide structurally.
    bool same_structure(const ParamSet& other) const noexcept;
    bool same_bits(const ParamSet& other) const noexcept;
};

} // namespace unitslab::numcore
