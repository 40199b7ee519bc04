#include "unitslab/numcore/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>

#include "unitslab/numcore/error.hpp"

namespace unitslab::numcore {

namespace {

#ifdef NDEBUG
std::atomic<bool> g_debug_checks{false};
#else
std::atomic<bool> g_debug_checks{true};
#endif

} // namespace

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

void check_finite(std::span<const double> values, const char* where) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw ValueError(std::string(where) + ": non-finite value at element " + std::to_string(i));
        }
    }
}

void set_debug_checks(bool enabled) noexcept { g_debug_checks.store(enabled, std::memory_order_relaxed); }
bool debug_checks() noexcept { return g_debug_checks.load(std::memory_order_relaxed); }

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    for (std::size_t d : shape_) {
        if (d == 0) throw ShapeError("tensor", "zero-sized dimension in " + shape_str(shape_));
    }
    data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (std::size_t d : shape_) {
        if (d == 0) throw ShapeError("tensor", "zero-sized dimension in " + shape_str(shape_));
    }
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError("tensor", shape_str(shape_) + " needs " + std::to_string(shape_size(shape_)) +
                                       " values, got " + std::to_string(data_.size()));
    }
    check_finite(data_, "tensor");
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    check_finite(t.data_, "tensor");
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

double Tensor::item() const {
    if (data_.size() != 1) {
        throw ShapeError("item", "expected a single element, got " + shape_str(shape_));
    }
    return data_[0];
}

bool Tensor::same_bits(const Tensor& other) const noexcept {
    return shape_ == other.shape_ && data_.size() == other.data_.size() &&
           (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

Tensor detach(const Tensor& t) {
    Tensor out = t;
    out.node_.reset();
    return out;
}

} // namespace unitslab::numcore
