#include "unitslab/numcore/ops.hpp"

#include <algorithm>
#include <cmath>

#include "backprop.hpp"
#include "unitslab/numcore/error.hpp"
#include "unitslab/numcore/kernels.hpp"
#include "unitslab/numcore/log.hpp"
#include "unitslab/numcore/tape.hpp"

namespace unitslab::numcore {

namespace {

/// The tape shared by the attached inputs, or null when all are constants.
Tape* common_tape(std::initializer_list<const Tensor*> inputs, const char* op) {
    Tape* tape = nullptr;
    for (const Tensor* t : inputs) {
        if (!t->node()) continue;
        if (tape && t->node()->tape != tape) {
            throw TapeError(std::string(op) + ": inputs live on different tapes");
        }
        tape = t->node()->tape;
    }
    return tape;
}

Tensor finish(const char* op, Tensor out) {
    if (debug_checks()) check_finite(out.data(), op);
    return out;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

void require_binary(const char* op, const char* what, const Tensor& t) {
    for (double v : t.data()) {
        if (v != 0.0 && v != 1.0) {
            throw ValueError(std::string(op) + ": " + what + " must contain only 0 and 1");
        }
    }
}

kernels::ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 3) throw ShapeError("conv2d", "input must be [C, H, W], got " + shape_str(x.shape()));
    if (w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3) {
        throw ShapeError("conv2d", "weight must be [Cout, Cin, 3, 3], got " + shape_str(w.shape()));
    }
    if (w.dim(1) != x.dim(0)) {
        throw ShapeError("conv2d", "input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    }
    if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
        throw ShapeError("conv2d", "bias " + shape_str(b.shape()) + " vs weight " + shape_str(w.shape()));
    }
    return {x.dim(0), w.dim(0), x.dim(1), x.dim(2)};
}

std::vector<double> pad_planes(std::span<const double> src, std::size_t planes, std::size_t h, std::size_t w) {
    const std::size_t ph = h + 2;
    const std::size_t pw = w + 2;
    std::vector<double> out(planes * ph * pw, 0.0);
    for (std::size_t c = 0; c < planes; ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            std::copy_n(src.data() + (c * h + y) * w, w, out.data() + (c * ph + y + 1) * pw + 1);
        }
    }
    return out;
}

double bce_clamp(double p) { return std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon); }

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    Tensor result = finish("add", Tensor(a.shape(), std::move(out)));
    if (Tape* tape = common_tape({&a, &b}, "add")) {
        Tape::Node n;
        n.kind = OpKind::Add;
        n.inputs = {tape->input_index(a), tape->input_index(b), Tape::kConstant};
        return tape->record(std::move(n), std::move(result));
    }
    return result;
}

Tensor scale(const Tensor& a, double factor) {
    if (!std::isfinite(factor)) throw ValueError("scale: non-finite factor");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
    Tensor result = finish("scale", Tensor(a.shape(), std::move(out)));
    if (Tape* tape = common_tape({&a}, "scale")) {
        Tape::Node n;
        n.kind = OpKind::Scale;
        n.inputs = {tape->input_index(a), Tape::kConstant, Tape::kConstant};
        n.scalar = factor;
        return tape->record(std::move(n), std::move(result));
    }
    return result;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const kernels::ConvGeometry g = conv_geometry(x, weight, bias);
    std::vector<double> padded = pad_planes(x.data(), g.in_channels, g.height, g.width);
    std::vector<double> out(g.out_channels * g.height * g.width);
    kernels::active().conv3x3_forward(g, padded.data(), weight.data().data(), bias.data().data(), out.data());
    Tensor result = finish("conv2d", Tensor({g.out_channels, g.height, g.width}, std::move(out)));
    if (Tape* tape = common_tape({&x, &weight, &bias}, "conv2d")) {
        Tape::Node n;
        n.kind = OpKind::Conv2d;
        n.inputs = {tape->input_index(x), tape->input_index(weight), tape->input_index(bias)};
        n.saved.emplace_back(Shape{g.in_channels, g.padded_height(), g.padded_width()}, std::move(padded));
        n.saved.push_back(detach(weight));
        return tape->record(std::move(n), std::move(result));
    }
    return result;
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    Tensor result = finish("relu", Tensor(a.shape(), std::move(out)));
    if (Tape* tape = common_tape({&a}, "relu")) {
        Tape::Node n;
        n.kind = OpKind::Relu;
        n.inputs = {tape->input_index(a), Tape::kConstant, Tape::kConstant};
        n.saved.push_back(detach(result));
        return tape->record(std::move(n), std::move(result));
    }
    return result;
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = a[i];
        // Branch on sign so exp never overflows.
        if (v >= 0.0) {
            out[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            out[i] = e / (1.0 + e);
        }
    }
    Tensor result = finish("sigmoid", Tensor(a.shape(), std::move(out)));
    if (Tape* tape = common_tape({&a}, "sigmoid")) {
        Tape::Node n;
        n.kind = OpKind::Sigmoid;
        n.inputs = {tape->input_index(a), Tape::kConstant, Tape::kConstant};
        n.saved.push_back(detach(result));
        return tape->record(std::move(n), std::move(result));
    }
    return result;
}

Tensor mean(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    Tensor result = finish("mean", Tensor::scalar(s / static_cast<double>(a.size())));
    if (Tape* tape = common_tape({&a}, "mean")) {
        Tape::Node n;
        n.kind = OpKind::Mean;
        n.inputs = {tape->input_index(a), Tape::kConstant, Tape::kConstant};
        n.scalar = static_cast<double>(a.size());
        return tape->record(std::move(n), std::move(result));
    }
    return result;
}

Tensor masked_bce(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    require_same_shape("masked_bce", pred, target);
    require_same_shape("masked_bce", pred, mask);
    require_binary("masked_bce", "target", target);
    require_binary("masked_bce", "mask", mask);

    double count = 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask[i] == 0.0) continue;
        const double p = bce_clamp(pred[i]);
        total += target[i] == 1.0 ? -std::log(p) : -std::log(1.0 - p);
        count += 1.0;
    }
    if (count == 0.0) {
        log_warning("masked_bce: no valid pixels, loss defined as zero");
    }
    Tensor result = finish("masked_bce", Tensor::scalar(count > 0.0 ? total / count : 0.0));
    if (Tape* tape = common_tape({&pred}, "masked_bce")) {
        Tape::Node n;
        n.kind = OpKind::MaskedBce;
        n.inputs = {tape->input_index(pred), Tape::kConstant, Tape::kConstant};
        n.saved = {detach(pred), detach(target), detach(mask)};
        n.scalar = count;
        return tape->record(std::move(n), std::move(result));
    }
    return result;
}

namespace detail {

void backprop(const Tape::Node& node, std::span<const double> gout,
              const std::array<std::vector<double>*, 3>& grad_in) {
    switch (node.kind) {
    case OpKind::Leaf:
        return;
    case OpKind::Add:
        for (std::size_t k = 0; k < 2; ++k) {
            if (!grad_in[k]) continue;
            auto& g = *grad_in[k];
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
        }
        return;
    case OpKind::Scale:
        if (grad_in[0]) {
            auto& g = *grad_in[0];
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * node.scalar;
        }
        return;
    case OpKind::Relu:
        if (grad_in[0]) {
            auto& g = *grad_in[0];
            const auto y = node.saved[0].data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (y[i] > 0.0) g[i] += gout[i];
            }
        }
        return;
    case OpKind::Sigmoid:
        if (grad_in[0]) {
            auto& g = *grad_in[0];
            const auto y = node.saved[0].data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * (y[i] * (1.0 - y[i]));
        }
        return;
    case OpKind::Mean:
        if (grad_in[0]) {
            auto& g = *grad_in[0];
            const double share = gout[0] / node.scalar;
            for (double& v : g) v += share;
        }
        return;
    case OpKind::MaskedBce:
        if (grad_in[0] && node.scalar > 0.0) {
            auto& g = *grad_in[0];
            const auto p = node.saved[0].data();
            const auto t = node.saved[1].data();
            const auto m = node.saved[2].data();
            const double upstream = gout[0] / node.scalar;
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (m[i] == 0.0) continue;
                // The clamp has zero derivative where it is active.
                if (p[i] < kBceEpsilon || p[i] > 1.0 - kBceEpsilon) continue;
                const double d = t[i] == 1.0 ? -1.0 / p[i] : 1.0 / (1.0 - p[i]);
                g[i] += upstream * d;
            }
        }
        return;
    case OpKind::Conv2d: {
        const Tensor& in_pad = node.saved[0];
        const Tensor& weight = node.saved[1];
        const kernels::ConvGeometry g{weight.dim(1), weight.dim(0), node.shape[1], node.shape[2]};
        const kernels::KernelTable& k = kernels::active();
        if (grad_in[0]) {
            std::vector<double> gout_pad = pad_planes(gout, g.out_channels, g.height, g.width);
            std::vector<double> gx(g.in_channels * g.height * g.width);
            k.conv3x3_backward_input(g, gout_pad.data(), weight.data().data(), gx.data());
            auto& dst = *grad_in[0];
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gx[i];
        }
        if (grad_in[1] || grad_in[2]) {
            std::vector<double> gw(weight.size());
            std::vector<double> gb(g.out_channels);
            k.conv3x3_backward_weight(g, gout.data(), in_pad.data().data(), gw.data(), gb.data());
            if (grad_in[1]) {
                auto& dst = *grad_in[1];
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gw[i];
            }
            if (grad_in[2]) {
                auto& dst = *grad_in[2];
                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gb[i];
            }
        }
        return;
    }
    }
}

} // namespace detail

} // namespace unitslab::numcore
