#pragma once

#include <cstddef>
#include <span>
#include <string_view>

namespace unitslab::numcore::kernels {

/// Geometry of a 3x3 same-padded convolution on one image.
struct ConvGeometry {
    std::size_t in_channels;
    std::size_t out_channels;
    std::size_t height;
    std::size_t width;

    std::size_t padded_height() const noexcept { return height + 2; }
    std::size_t padded_width() const noexcept { return width + 2; }
};

// Every variant must reproduce the scalar reference bit for bit. All sums are
// plain multiply-then-add (no fused multiply-add). Reductions over pixels use
// a fixed order: four interleaved partial sums over x in [0, width & ~3),
// combined as (s0 + s1) + (s2 + s3), then a single accumulator for the
// remaining columns of every row, added last.
struct KernelTable {
    const char* name;

    /// out[co,y,x] = sum_{ci,ky,kx} w[co,ci,ky,kx] * in_pad[ci,y+ky,x+kx] + bias[co].
    /// in_pad is [Cin, H+2, W+2] with a zero border.
    void (*conv3x3_forward)(const ConvGeometry& g, const double* in_pad, const double* weight,
                            const double* bias, double* out);

    /// grad_in[ci,y,x] = sum_{co,ky,kx} w[co,ci,ky,kx] * gout_pad[co,y+2-ky,x+2-kx].
    /// gout_pad is [Cout, H+2, W+2] with a zero border.
    void (*conv3x3_backward_input)(const ConvGeometry& g, const double* gout_pad,
                                   const double* weight, double* grad_in);

    /// grad_w[co,ci,ky,kx] = sum_{y,x} gout[co,y,x] * in_pad[ci,y+ky,x+kx];
    /// grad_b[co] = sum_{y,x} gout[co,y,x]. Overwrites both outputs.
    void (*conv3x3_backward_weight)(const ConvGeometry& g, const double* gout,
                                    const double* in_pad, double* grad_w, double* grad_b);

    /// v = momentum * v + g; p = p - lr * v.
    void (*momentum_update)(std::size_t n, double lr, double momentum, const double* grad,
                            double* velocity, double* param);
};

const KernelTable& scalar_kernels() noexcept;
/// Null when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_kernels() noexcept;

/// Kernels used by the tensor operations. Chosen once at startup: the widest
/// variant the CPU supports unless UNITSLAB_KERNELS=scalar is set.
const KernelTable& active() noexcept;

/// Overrides the active table ("scalar", "avx2" or "auto"). Returns false if
/// the requested variant is unavailable; the active table is then unchanged.
bool select(std::string_view name) noexcept;

} // namespace unitslab::numcore::kernels
