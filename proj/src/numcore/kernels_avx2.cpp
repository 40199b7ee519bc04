#include "unitslab/numcore/kernels.hpp"

#include <immintrin.h>

// Compiled with -mavx2 and without -mfma: products and sums stay separate so
// every lane rounds exactly like the scalar reference.

namespace unitslab::numcore::kernels {

namespace {

void conv3x3_forward(const ConvGeometry& g, const double* in_pad, const double* weight, const double* bias,
                     double* out) {
    const std::size_t ph = g.padded_height();
    const std::size_t pw = g.padded_width();
    const std::size_t w4 = g.width & ~std::size_t{3};
    for (std::size_t co = 0; co < g.out_channels; ++co) {
        const __m256d b = _mm256_set1_pd(bias[co]);
        for (std::size_t y = 0; y < g.height; ++y) {
            double* orow = out + (co * g.height + y) * g.width;
            for (std::size_t x = 0; x < w4; x += 4) {
                __m256d acc = _mm256_setzero_pd();
                for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
                    const double* w = weight + (co * g.in_channels + ci) * 9;
                    const double* src = in_pad + ci * ph * pw + y * pw + x;
                    for (std::size_t ky = 0; ky < 3; ++ky) {
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                            const __m256d v = _mm256_loadu_pd(src + ky * pw + kx);
                            acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_set1_pd(w[ky * 3 + kx]), v));
                        }
                    }
                }
                _mm256_storeu_pd(orow + x, _mm256_add_pd(acc, b));
            }
            for (std::size_t x = w4; x < g.width; ++x) {
                double acc = 0.0;
                for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
                    const double* w = weight + (co * g.in_channels + ci) * 9;
                    const double* src = in_pad + ci * ph * pw + y * pw + x;
                    for (std::size_t ky = 0; ky < 3; ++ky) {
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                            acc = acc + w[ky * 3 + kx] * src[ky * pw + kx];
                        }
                    }
                }
                orow[x] = acc + bias[co];
            }
        }
    }
}

void conv3x3_backward_input(const ConvGeometry& g, const double* gout_pad, const double* weight,
                            double* grad_in) {
    const std::size_t ph = g.padded_height();
    const std::size_t pw = g.padded_width();
    const std::size_t w4 = g.width & ~std::size_t{3};
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        for (std::size_t y = 0; y < g.height; ++y) {
            double* grow = grad_in + (ci * g.height + y) * g.width;
            for (std::size_t x = 0; x < w4; x += 4) {
                __m256d acc = _mm256_setzero_pd();
                for (std::size_t co = 0; co < g.out_channels; ++co) {
                    const double* w = weight + (co * g.in_channels + ci) * 9;
                    const double* plane = gout_pad + co * ph * pw;
                    for (std::size_t ky = 0; ky < 3; ++ky) {
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                            const __m256d v = _mm256_loadu_pd(plane + (y + 2 - ky) * pw + x + 2 - kx);
                            acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_set1_pd(w[ky * 3 + kx]), v));
                        }
                    }
                }
                _mm256_storeu_pd(grow + x, acc);
            }
            for (std::size_t x = w4; x < g.width; ++x) {
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
                grow[x] = acc;
            }
        }
    }
}

double hsum_canonical(__m256d v) {
    alignas(32) double lane[4];
    _mm256_store_pd(lane, v);
    return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

double striped_dot(const ConvGeometry& g, const double* a, const double* b, std::size_t b_stride) {
    const std::size_t w4 = g.width & ~std::size_t{3};
    __m256d acc = _mm256_setzero_pd();
    double tail = 0.0;
    for (std::size_t y = 0; y < g.height; ++y) {
        const double* ar = a + y * g.width;
        if (b) {
            const double* br = b + y * b_stride;
            for (std::size_t x = 0; x < w4; x += 4) {
                acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(ar + x), _mm256_loadu_pd(br + x)));
            }
            for (std::size_t x = w4; x < g.width; ++x) tail = tail + ar[x] * br[x];
        } else {
            for (std::size_t x = 0; x < w4; x += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(ar + x));
            for (std::size_t x = w4; x < g.width; ++x) tail = tail + ar[x];
        }
    }
    return hsum_canonical(acc) + tail;
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
    const __m256d m = _mm256_set1_pd(momentum);
    const __m256d r = _mm256_set1_pd(lr);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_add_pd(_mm256_mul_pd(m, _mm256_loadu_pd(velocity + i)), _mm256_loadu_pd(grad + i));
        _mm256_storeu_pd(velocity + i, v);
        _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), _mm256_mul_pd(r, v)));
    }
    for (; i < n; ++i) {
        velocity[i] = momentum * velocity[i] + grad[i];
        param[i] = param[i] - lr * velocity[i];
    }
}

} // namespace

const KernelTable& avx2_kernel_table() noexcept {
    static const KernelTable table{"avx2", conv3x3_forward, conv3x3_backward_input, conv3x3_backward_weight,
                                   momentum_update};
    return table;
}

} // namespace unitslab::numcore::kernels
