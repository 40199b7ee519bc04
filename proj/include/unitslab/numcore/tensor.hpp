#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace unitslab::numcore {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

/// Reference from a tensor to the tape node that produced it.
struct NodeRef {
    Tape* tape = nullptr;
    std::uint64_t generation = 0;
    std::uint32_t index = 0;
};

/// Dense row-major array of doubles, optionally attached to a gradient tape.
///
/// Values are checked for finiteness on construction. A tensor produced by an
/// operation on tape-attached inputs carries a NodeRef; `detach` drops it.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    std::span<const double> data() const noexcept { return data_; }
    /// Mutable access. Only meaningful on tensors that are not tape-attached;
    /// tape nodes keep their own copies of saved values.
    std::span<double> mutable_data() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double item() const;

    bool requires_grad() const noexcept { return node_.has_value(); }
    const std::optional<NodeRef>& node() const noexcept { return node_; }

    /// Bitwise equality of shape and values; tape attachment is ignored.
    bool same_bits(const Tensor& other) const noexcept;

private:
    friend class Tape;
    friend Tensor detach(const Tensor& t);
    Shape shape_;
    std::vector<double> data_;
    std::optional<NodeRef> node_;
};

/// Value-identical copy with no tape attachment.
Tensor detach(const Tensor& t);

/// Throws ValueError if any element is NaN or infinite.
void check_finite(std::span<const double> values, const char* where);

/// When enabled, every operation asserts that its output is finite.
/// Defaults to on in builds without NDEBUG.
void set_debug_checks(bool enabled) noexcept;
bool debug_checks() noexcept;

} // namespace unitslab::numcore
