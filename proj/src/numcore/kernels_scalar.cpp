#include "unitslab/numcore/kernels.hpp"

namespace unitslab::numcore::kernels {

namespace {

void conv3x3_forward(const ConvGeometry& g, const double* in_pad, const double* weight, const double* bias,
                     double* out) {
    const std::size_t ph = g.padded_height();
    const std::size_t pw = g.padded_width();
    for (std::size_t co = 0; co < g.out_channels; ++co) {
        for (std::size_t y = 0; y < g.height; ++y) {
            for (std::size_t x = 0; x < g.width; ++x) {
                double acc = 0.0;
                for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
                    const double* w = weight + (co * g.in_channels + ci) * 9;
                    const double* plane = in_pad + ci * ph * pw;
                    for (std::size_t ky = 0; ky < 3; ++ky) {
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                            acc = acc + w[ky * 3 + kx] * plane[(y + ky) * pw + x + kx];
                        }
                    }
                }
                out[(co * g.height + y) * g.width + x] = acc + bias[co];
            }
        }
    }
}

void conv3x3_backward_input(const ConvGeometry& g, const double* gout_pad, const double* weight,
                            double* grad_in) {
    const std::size_t ph = g.padded_height();
    const std::size_t pw = g.padded_width();
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        for (std::size_t y = 0; y < g.height; ++y) {
            for (std::size_t x = 0; x < g.width; ++x) {
                double acc = 0.0;
                for (std::size_t co = 0; co < g.out_channels; ++co) {
                    const double* w = weight + (co * g.in_channels + ci) * 9;
                    const double* plane = gout_pad + co * ph * pw;
                    for (std::size_t ky = 0; ky < 3; ++ky) {
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                            acc = acc + w[ky * 3 + kx] * plane[(y + 2 - ky) * pw + x + 2 - kx];
                        }
                    }
                }
                grad_in[(ci * g.height + y) * g.width + x] = acc;
            }
        }
    }
}

/// Pixel reduction in the canonical order documented on KernelTable.
/// `b` may be null, meaning an implicit all-ones operand.
double striped_dot(const ConvGeometry& g, const double* a, const double* b, std::size_t b_stride) {
    const std::size_t w4 = g.width & ~std::size_t{3};
    double lane[4] = {0.0, 0.0, 0.0, 0.0};
    double tail = 0.0;
    for (std::size_t y = 0; y < g.height; ++y) {
        const double* ar = a + y * g.width;
        const double* br = b ? b + y * b_stride : nullptr;
        for (std::size_t x = 0; x < w4; x += 4) {
            for (std::size_t l = 0; l < 4; ++l) {
                lane[l] = lane[l] + (br ? ar[x + l] * br[x + l] : ar[x + l]);
            }
        }
        for (std::size_t x = w4; x < g.width; ++x) {
            tail = tail + (br ? ar[x] * br[x] : ar[x]);
        }
    }
    return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + tail;
}

void conv3x3_backward_weight(const ConvGeometry& g, const double* gout, const double* in_pad, double* grad_w,
                             double* grad_b) {
    const std::size_t ph = g.padded_height();
    const std::size_t pw = g.padded_width();
    const std::size_t plane = g.height * g.width;
    for (std::size_t co = 0; co < g.out_channels; ++co) {
        const double* go = gout + co * plane;
        for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < 3; ++ky) {
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    const double* src = in_pad + ci * ph * pw + ky * pw + kx;
                    grad_w[((co * g.in_channels + ci) * 3 + ky) * 3 + kx] = striped_dot(g, go, src, pw);
                }
            }
        }
        grad_b[co] = striped_dot(g, go, nullptr, 0);
    }
}

void momentum_update(std::size_t n, double lr, double momentum, const double* grad, double* velocity,
                     double* param) {
    for (std::size_t i = 0; i < n; ++i) {
        velocity[i] = momentum * velocity[i] + grad[i];
        param[i] = param[i] - lr * velocity[i];
    }
}

} // namespace

const KernelTable& scalar_kernels() noexcept {
    static const KernelTable table{"scalar", conv3x3_forward, conv3x3_backward_input, conv3x3_backward_weight,
                                   momentum_update};
    return table;
}

} // namespace unitslab::numcore::kernels
