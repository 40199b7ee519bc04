#include "unitslab/numcore/optim.hpp"

#include <cmath>

#include "unitslab/numcore/error.hpp"
#include "unitslab/numcore/kernels.hpp"

namespace unitslab::numcore {

ParamSet sgd_step(const ParamSet& params, const GradMap& grads, double lr, double momentum) {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValueError("sgd_step: learning rate must be finite and >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValueError("sgd_step: momentum must lie in [0, 1)");
    for (const auto& [name, g] : grads) {
        const Tensor* p = params.params.find(name);
        if (!p) throw ValueError("sgd_step: gradient for unknown parameter '" + name + "'");
        if (p->shape() != g.shape()) {
            throw ShapeError("sgd_step", name + ": parameter " + shape_str(p->shape()) + " vs gradient " +
                                             shape_str(g.shape()));
        }
    }

    ParamSet next = params;
    const kernels::KernelTable& k = kernels::active();
    for (auto& [name, value] : next.params) {
        const Tensor* g = grads.find(name);
        if (!g) continue;
        Tensor& v = next.momentum.at(name);
        k.momentum_update(value.size(), lr, momentum, g->data().data(), v.mutable_data().data(),
                          value.mutable_data().data());
        if (debug_checks()) check_finite(value.data(), "sgd_step");
    }
    ++next.step_count;
    return next;
}

} // namespace unitslab::numcore
