#include "unitslab/numcore/tape.hpp"

#include <atomic>

#include "backprop.hpp"
#include "unitslab/numcore/error.hpp"

namespace unitslab::numcore {

namespace {
std::atomic<std::uint64_t> g_next_tape_id{1};
}

const char* op_name(OpKind kind) noexcept {
    switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Scale: return "scale";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Mean: return "mean";
    case OpKind::MaskedBce: return "masked_bce";
    }
    return "?";
}

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

Tensor Tape::leaf(std::string name, const Tensor& value) {
    for (std::uint32_t i : leaves_) {
        if (nodes_[i].name == name) throw TapeError("leaf '" + name + "' registered twice");
    }
    Node n;
    n.kind = OpKind::Leaf;
    n.shape = value.shape();
    n.name = std::move(name);
    leaves_.push_back(static_cast<std::uint32_t>(nodes_.size()));
    return record(std::move(n), detach(value));
}

NamedTensors Tape::attach(const ParamSet& params, const std::string& prefix) {
    NamedTensors out;
    for (const auto& [name, value] : params.params) {
        out.insert(name, leaf(prefix + name, value));
    }
    return out;
}

std::int32_t Tape::input_index(const Tensor& t) const {
    if (!t.node()) return kConstant;
    const NodeRef& ref = *t.node();
    if (ref.tape != this) throw TapeError("tensor belongs to a different tape");
    if (ref.generation != generation_ || ref.index >= nodes_.size()) {
        throw TapeError("tensor refers to a cleared tape");
    }
    return static_cast<std::int32_t>(ref.index);
}

Tensor Tape::record(Node node, Tensor value) {
    value.node_ = NodeRef{this, generation_, static_cast<std::uint32_t>(nodes_.size())};
    node.shape = value.shape();
    nodes_.push_back(std::move(node));
    return value;
}

void Tape::clear() noexcept {
    nodes_.clear();
    leaves_.clear();
    ++generation_;
}

GradMap Tape::backward(const Tensor& loss) const {
    if (loss.size() != 1) {
        throw TapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    if (!loss.node()) {
        throw TapeError("backward: loss is not attached to a tape");
    }
    const auto root = static_cast<std::uint32_t>(input_index(loss));

    std::vector<std::vector<double>> grads(root + 1);
    grads[root].assign(1, 1.0);
    for (std::uint32_t i = root + 1; i-- > 0;) {
        const Node& n = nodes_[i];
        if (grads[i].empty() || n.kind == OpKind::Leaf) continue;
        std::array<std::vector<double>*, 3> grad_in{nullptr, nullptr, nullptr};
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const std::int32_t in = n.inputs[k];
            if (in == kConstant) continue;
            auto& g = grads[static_cast<std::size_t>(in)];
            if (g.empty()) g.assign(shape_size(nodes_[static_cast<std::size_t>(in)].shape), 0.0);
            grad_in[k] = &g;
        }
        detail::backprop(n, grads[i], grad_in);
        if (debug_checks()) {
            for (auto* g : grad_in) {
                if (g) check_finite(*g, op_name(n.kind));
            }
        }
        // Intermediate gradients are no longer needed once propagated.
        std::vector<double>().swap(grads[i]);
    }

    GradMap out;
    for (std::uint32_t idx : leaves_) {
        const Node& n = nodes_[idx];
        if (idx <= root && !grads[idx].empty()) {
            out.insert(n.name, Tensor(n.shape, std::move(grads[idx])));
        } else {
            out.insert(n.name, Tensor::zeros(n.shape));
        }
    }
    return out;
}

} // namespace unitslab::numcore
