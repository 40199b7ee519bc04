#include "unitslab/numcore/params.hpp"

#include "unitslab/numcore/error.hpp"

namespace unitslab::numcore {

void NamedTensors::insert(std::string name, Tensor value) {
    if (contains(name)) {
        throw ValueError("duplicate tensor name '" + name + "'");
    }
    entries_.emplace_back(std::move(name), std::move(value));
}

const Tensor* NamedTensors::find(std::string_view name) const noexcept {
    for (const auto& [n, t] : entries_) {
        if (n == name) return &t;
    }
    return nullptr;
}

Tensor* NamedTensors::find(std::string_view name) noexcept {
    for (auto& [n, t] : entries_) {
        if (n == name) return &t;
    }
    return nullptr;
}

const Tensor& NamedTensors::at(std::string_view name) const {
    if (const Tensor* t = find(name)) return *t;
    throw ValueError("no tensor named '" + std::string(name) + "'");
}

Tensor& NamedTensors::at(std::string_view name) {
    if (Tensor* t = find(name)) return *t;
    throw ValueError("no tensor named '" + std::string(name) + "'");
}

std::vector<std::string> NamedTensors::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.first);
    return out;
}

bool NamedTensors::same_bits(const NamedTensors& other) const noexcept {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].first != other.entries_[i].first) return false;
        if (!entries_[i].second.same_bits(other.entries_[i].second)) return false;
    }
    return true;
}

void ParamSet::add(std::string name, Tensor value) {
    Tensor zero = Tensor::zeros(value.shape());
    params.insert(name, detach(value));
    momentum.insert(std::move(name), std::move(zero));
}

std::size_t ParamSet::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& e : params) n += e.second.size();
    return n;
}

bool ParamSet::same_structure(const ParamSet& other) const noexcept {
    if (params.size() != other.params.size()) return false;
    auto a = params.begin();
    auto b = other.params.begin();
    for (; a != params.end(); ++a, ++b) {
        if (a->first != b->first || a->second.shape() != b->second.shape()) return false;
    }
    return true;
}

bool ParamSet::same_bits(const ParamSet& other) const noexcept {
    return step_count == other.step_count && params.same_bits(other.params) &&
           momentum.same_bits(other.momentum);
}

} // namespace unitslab::numcore
